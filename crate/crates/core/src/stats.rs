//! Numerical helpers shared by the oracle and the estimators.

use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// `log(cosh(x))` without overflow for large `|x|`.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// Streaming log-sum-exp with a running maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    #[inline]
    pub fn push(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else if x.is_finite() || self.max == f64::NEG_INFINITY {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            // +inf or NaN poisons the result; surfaced by `value`.
            self.max = x;
            self.sum = 1.0;
        }
    }

    pub fn merge(&mut self, other: &LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if self.max >= other.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }

    pub fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }

    /// Running maximum, the shift applied to every accumulated term.
    pub fn max(&self) -> f64 {
        self.max
    }

    /// `Σ exp(x − max)`.
    pub fn shifted_sum(&self) -> f64 {
        self.sum
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Sums in the given order, switching to compensated summation for long inputs.
pub fn ordered_sum(values: impl IntoIterator<Item = f64>, compensated: bool) -> f64 {
    if compensated {
        let mut acc = CompensatedSum::default();
        values.into_iter().for_each(|v| acc.add(v));
        acc.total()
    } else {
        values.into_iter().sum()
    }
}

/// Runs `map` over fixed-size chunks of `0..units` on `jobs` worker threads and
/// folds the chunk results strictly in chunk order.
///
/// Chunk boundaries depend only on `units` and `chunk`, never on `jobs`, so the
/// folded result is bit-identical for every worker count. At most `window`
/// chunk results are alive at once.
pub fn ordered_chunk_reduce<A, M, F>(
    units: u64,
    chunk: u64,
    jobs: usize,
    map: M,
    mut fold: F,
) -> Result<()>
where
    A: Send,
    M: Fn(u64, std::ops::Range<u64>) -> A + Sync,
    F: FnMut(u64, A),
{
    let chunk = chunk.max(1);
    let chunks = units.div_ceil(chunk);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let window = (jobs.max(1) as u64 * 8).max(16);
    let mut start = 0u64;
    while start < chunks {
        let end = (start + window).min(chunks);
        let results: Vec<A> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|c| map(c, c * chunk..((c + 1) * chunk).min(units)))
                .collect()
        });
        for (offset, a) in results.into_iter().enumerate() {
            fold(start + offset as u64, a);
        }
        start = end;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cosh_matches_naive_and_survives_large_arguments() {
        for &x in &[0.0, 0.3, -1.7, 5.0, -12.5] {
            let naive = f64::cosh(x).ln();
            assert!((log_cosh(x) - naive).abs() < 1e-14, "x={x}");
        }
        assert!((log_cosh(1000.0) - (1000.0 - LN_2)).abs() < 1e-12);
        assert_eq!(log_cosh(0.0), 0.0);
        assert_eq!(log_cosh(-2.5), log_cosh(2.5));
    }

    #[test]
    fn logsumexp_streaming_and_merge_agree_with_direct() {
        let xs = [-3.0, 400.0, 2.0, 399.5, -1e3];
        let mut acc = LogSumExp::default();
        xs.iter().for_each(|&x| acc.push(x));
        let m = 400.0;
        let direct = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        assert!((acc.value() - direct).abs() < 1e-12);

        let mut left = LogSumExp::default();
        let mut right = LogSumExp::default();
        xs[..2].iter().for_each(|&x| left.push(x));
        xs[2..].iter().for_each(|&x| right.push(x));
        left.merge(&right);
        assert!((left.value() - direct).abs() < 1e-12);
    }

    #[test]
    fn empty_logsumexp_is_negative_infinity() {
        assert_eq!(LogSumExp::default().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::default();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.total(), 1000.0);
    }

    #[test]
    fn chunk_reduce_is_independent_of_jobs() {
        let run = |jobs| {
            let mut out = Vec::new();
            ordered_chunk_reduce(
                1000,
                37,
                jobs,
                |_, r| r.map(|k| (k as f64).sqrt()).sum::<f64>(),
                |c, v| out.push((c, v)),
            )
            .unwrap();
            out
        };
        let one = run(1);
        assert_eq!(one.len(), 28);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }
}
