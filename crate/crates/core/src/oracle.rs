//! Brute-force enumeration of all `2^n` spin configurations.
//!
//! Configurations are visited in Gray-code order so that consecutive states
//! differ by one spin and the energy is updated in O(degree). The sweep is cut
//! into fixed-size segments, each started from a from-scratch energy, and the
//! segment results are merged in segment order. Segment boundaries do not depend
//! on the worker count, so results are identical for any `jobs`.

use std::f64::consts::LN_2;

use crate::couplings::CouplingMatrix;
use crate::error::{Error, Result};
use crate::field::{check_beta, ExternalField};
use crate::pspin::ThreeBodyCouplings;
use crate::stats::{ordered_chunk_reduce, LogSumExp};

pub const DEFAULT_ENUM_CAP: usize = 24;
pub const ENUM_CAP_ENV: &str = "BABYLON_ENUM_CAP";

const SEGMENT_BITS: usize = 16;

/// The default cap, overridable through `BABYLON_ENUM_CAP`.
pub fn default_enum_cap() -> usize {
    std::env::var(ENUM_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_ENUM_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumOptions {
    pub cap: usize,
    pub jobs: usize,
}

impl Default for EnumOptions {
    fn default() -> Self {
        EnumOptions {
            cap: default_enum_cap(),
            jobs: 1,
        }
    }
}

impl EnumOptions {
    pub fn with_jobs(jobs: usize) -> Self {
        EnumOptions {
            jobs,
            ..Self::default()
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        // Configurations are addressed by u64 bit patterns.
        if n > self.cap || n > 63 {
            return Err(Error::CapExceeded { n, cap: self.cap.min(63) });
        }
        Ok(())
    }
}

#[inline]
pub fn gray(t: u64) -> u64 {
    t ^ (t >> 1)
}

/// An exponent `E(σ)` of the Gibbs weight `exp(E(σ))`, with single-flip updates.
pub trait SpinEnergy: Sync {
    fn n(&self) -> usize;

    /// From-scratch evaluation.
    fn energy(&self, spins: &[f64]) -> f64;

    /// `E(σ with spin k flipped) − E(σ)`.
    fn flip_delta(&self, spins: &[f64], k: usize) -> f64;
}

/// `β Σ_{i<j} g_ij σ_i σ_j + Σ_i h_i σ_i`.
#[derive(Debug, Clone)]
pub struct PairEnergy<'a> {
    pub couplings: &'a CouplingMatrix,
    pub beta: f64,
    pub field: Vec<f64>,
}

impl SpinEnergy for PairEnergy<'_> {
    fn n(&self) -> usize {
        self.couplings.n()
    }

    fn energy(&self, s: &[f64]) -> f64 {
        let pair: f64 = self
            .couplings
            .edges()
            .iter()
            .map(|&(i, j, v)| v * s[i] * s[j])
            .sum();
        let field: f64 = self.field.iter().zip(s).map(|(h, x)| h * x).sum();
        self.beta * pair + field
    }

    #[inline]
    fn flip_delta(&self, s: &[f64], k: usize) -> f64 {
        let local: f64 = self.couplings.neighbors(k).iter().map(|&(j, v)| v * s[j]).sum();
        -2.0 * s[k] * (self.beta * local + self.field[k])
    }
}

/// `β Σ_{i<j<k} g_ijk σ_i σ_j σ_k + Σ_i h_i σ_i`.
#[derive(Debug, Clone)]
pub struct TripleEnergy<'a> {
    pub couplings: &'a ThreeBodyCouplings,
    pub beta: f64,
    pub field: Vec<f64>,
}

impl SpinEnergy for TripleEnergy<'_> {
    fn n(&self) -> usize {
        self.couplings.n()
    }

    fn energy(&self, s: &[f64]) -> f64 {
        let triple: f64 = self
            .couplings
            .triples()
            .iter()
            .map(|&((i, j, k), v)| v * s[i] * s[j] * s[k])
            .sum();
        let field: f64 = self.field.iter().zip(s).map(|(h, x)| h * x).sum();
        self.beta * triple + field
    }

    #[inline]
    fn flip_delta(&self, s: &[f64], k: usize) -> f64 {
        let local: f64 = self
            .couplings
            .incident(k)
            .iter()
            .map(|&(a, b, v)| v * s[a] * s[b])
            .sum();
        -2.0 * s[k] * (self.beta * local + self.field[k])
    }
}

/// Walks a contiguous range of the Gray-code sequence.
#[derive(Debug, Clone)]
pub struct GrayWalker<'m, E: SpinEnergy> {
    model: &'m E,
    spins: Vec<f64>,
    step: u64,
    energy: f64,
}

impl<'m, E: SpinEnergy> GrayWalker<'m, E> {
    /// Positions the walker on the `start`-th configuration of the sequence.
    pub fn new(model: &'m E, start: u64) -> Self {
        let n = model.n();
        let code = gray(start);
        let spins: Vec<f64> = (0..n)
            .map(|i| if (code >> i) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        let energy = model.energy(&spins);
        GrayWalker {
            model,
            spins,
            step: start,
            energy,
        }
    }

    pub fn spins(&self) -> &[f64] {
        &self.spins
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Moves to the next configuration, flipping one spin.
    #[inline]
    pub fn advance(&mut self) {
        self.step += 1;
        let k = self.step.trailing_zeros() as usize;
        self.energy += self.model.flip_delta(&self.spins, k);
        self.spins[k] = -self.spins[k];
    }
}

fn segment_layout(n: usize) -> (u64, u64) {
    let bits = n.min(SEGMENT_BITS);
    let size = 1u64 << bits;
    let count = 1u64 << (n - bits);
    (size, count)
}

/// `log Σ_σ exp(E(σ))` over all `2^n` configurations.
pub fn log_sum_weights<E: SpinEnergy>(model: &E, jobs: usize) -> Result<f64> {
    let (size, count) = segment_layout(model.n());
    let mut total = LogSumExp::default();
    ordered_chunk_reduce(
        count,
        1,
        jobs,
        |segment, _| {
            let mut acc = LogSumExp::default();
            let mut walker = GrayWalker::new(model, segment * size);
            acc.push(walker.energy());
            for _ in 1..size {
                walker.advance();
                acc.push(walker.energy());
            }
            acc
        },
        |_, acc| total.merge(&acc),
    )?;
    Ok(total.value())
}

/// Single-threaded variant for callers that parallelize at a higher level.
pub fn log_sum_weights_serial<E: SpinEnergy>(model: &E) -> f64 {
    let total = 1u64 << model.n();
    let mut acc = LogSumExp::default();
    let mut walker = GrayWalker::new(model, 0);
    acc.push(walker.energy());
    for _ in 1..total {
        walker.advance();
        acc.push(walker.energy());
    }
    acc.value()
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} is not finite ({value})")))
    }
}

/// `N f_N = log(2^{−N} Σ_σ exp(β H(σ) + Σ_i h_i σ_i))`.
pub fn exact_free_energy(
    g: &CouplingMatrix,
    beta: f64,
    h: &ExternalField,
    opts: &EnumOptions,
) -> Result<f64> {
    check_beta(beta)?;
    let n = g.n();
    opts.check(n)?;
    let model = PairEnergy {
        couplings: g,
        beta,
        field: h.resolve(n)?,
    };
    let log_sum = log_sum_weights(&model, opts.jobs)?;
    finite(log_sum - n as f64 * LN_2, "free energy")
}

/// Three-body analogue of [`exact_free_energy`].
pub fn exact_free_energy_pspin3(
    t: &ThreeBodyCouplings,
    beta: f64,
    h: &ExternalField,
    opts: &EnumOptions,
) -> Result<f64> {
    check_beta(beta)?;
    let n = t.n();
    opts.check(n)?;
    let model = TripleEnergy {
        couplings: t,
        beta,
        field: h.resolve(n)?,
    };
    let log_sum = log_sum_weights(&model, opts.jobs)?;
    finite(log_sum - n as f64 * LN_2, "free energy")
}

/// Gibbs averages computed in the same sweep as the partition function.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactObservables {
    pub free_energy: f64,
    pub magnetizations: Vec<f64>,
    /// Row-major `n × n`, unit diagonal.
    pub correlations: Vec<f64>,
}

impl ExactObservables {
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.correlations[i * self.magnetizations.len() + j]
    }
}

/// Weighted sums `Σ w σ_i` and `Σ w σ_i σ_j` (upper triangle) relative to a
/// running maximum of the log-weights.
#[derive(Debug, Clone)]
struct MomentAccumulator {
    lse: LogSumExp,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl MomentAccumulator {
    fn new(n: usize) -> Self {
        MomentAccumulator {
            lse: LogSumExp::default(),
            first: vec![0.0; n],
            second: vec![0.0; n * (n.saturating_sub(1)) / 2],
        }
    }

    fn rescale(&mut self, factor: f64) {
        self.first.iter_mut().for_each(|v| *v *= factor);
        self.second.iter_mut().for_each(|v| *v *= factor);
    }

    fn push(&mut self, energy: f64, spins: &[f64]) {
        let old_max = self.lse.max();
        self.lse.push(energy);
        let new_max = self.lse.max();
        if new_max > old_max && old_max > f64::NEG_INFINITY {
            self.rescale((old_max - new_max).exp());
        }
        let w = (energy - new_max).exp();
        let n = spins.len();
        let mut idx = 0;
        for i in 0..n {
            let ws = w * spins[i];
            self.first[i] += ws;
            for &sj in &spins[i + 1..n] {
                self.second[idx] += ws * sj;
                idx += 1;
            }
        }
    }

    fn merge(&mut self, other: &MomentAccumulator) {
        let (a, b) = (self.lse.max(), other.lse.max());
        if b == f64::NEG_INFINITY {
            return;
        }
        let m = a.max(b);
        if a > f64::NEG_INFINITY {
            self.rescale((a - m).exp());
        }
        let fb = (b - m).exp();
        for (x, y) in self.first.iter_mut().zip(&other.first) {
            *x += fb * y;
        }
        for (x, y) in self.second.iter_mut().zip(&other.second) {
            *x += fb * y;
        }
        self.lse.merge(&other.lse);
    }
}

/// Magnetizations `⟨σ_i⟩` and correlations `⟨σ_i σ_j⟩` under the Gibbs weight
/// `exp(β H + Σ h_i σ_i)`, together with the free energy.
pub fn exact_observables(
    g: &CouplingMatrix,
    beta: f64,
    h: &ExternalField,
    opts: &EnumOptions,
) -> Result<ExactObservables> {
    check_beta(beta)?;
    let n = g.n();
    opts.check(n)?;
    let model = PairEnergy {
        couplings: g,
        beta,
        field: h.resolve(n)?,
    };
    let (size, count) = segment_layout(n);
    let mut total = MomentAccumulator::new(n);
    ordered_chunk_reduce(
        count,
        1,
        opts.jobs,
        |segment, _| {
            let mut acc = MomentAccumulator::new(n);
            let mut walker = GrayWalker::new(&model, segment * size);
            acc.push(walker.energy(), walker.spins());
            for _ in 1..size {
                walker.advance();
                acc.push(walker.energy(), walker.spins());
            }
            acc
        },
        |_, acc| total.merge(&acc),
    )?;
    let z = total.lse.shifted_sum();
    let free_energy = finite(total.lse.value() - n as f64 * LN_2, "free energy")?;
    let magnetizations: Vec<f64> = total.first.iter().map(|v| v / z).collect();
    let mut correlations = vec![0.0; n * n];
    let mut idx = 0;
    for i in 0..n {
        correlations[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let c = total.second[idx] / z;
            correlations[i * n + j] = c;
            correlations[j * n + i] = c;
            idx += 1;
        }
    }
    Ok(ExactObservables {
        free_energy,
        magnetizations,
        correlations,
    })
}
