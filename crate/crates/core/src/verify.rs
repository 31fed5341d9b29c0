//! Self-checks run by `babylon verify`: the square-completion identity, the
//! equivalence of the two field samplers, and formula-versus-enumeration
//! agreement of free energies.

use serde::Serialize;

use crate::couplings::{generate_sk, sign_split};
use crate::decomposition::{decompose, hamiltonian_decomposed, hamiltonian_raw, SpinConfig};
use crate::error::{Error, Result};
use crate::estimator::{formula_free_energy, EstimatorConfig};
use crate::gaussfield::{build_covariance, factorize, ConstructiveSampler, CovarianceSpec, FactorizedSampler};
use crate::oracle::{exact_free_energy, EnumOptions};
use crate::rng::{CounterRng, Domain};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub trials: usize,
    /// Monte Carlo samples per instance.
    pub samples: u64,
    pub jobs: usize,
    /// Mutation hook: flips the sign of the `−(β/2) Σ|g|` constant in the
    /// formula suite, which must then fail.
    pub inject_sign_flip: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            trials: 20,
            samples: 200_000,
            jobs: 1,
            inject_sign_flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub successes: usize,
    pub required: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

/// Entrywise sample second moments `mean(x_i x_j)` of a centered field and
/// their standard errors, as row-major `n × n` arrays.
#[derive(Debug, Clone)]
pub struct EmpiricalCovariance {
    pub n: usize,
    pub samples: u64,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl EmpiricalCovariance {
    pub fn from_samples(n: usize, samples: u64, mut draw: impl FnMut(u64, &mut [f64])) -> Self {
        let mut sum = vec![0.0; n * n];
        let mut sum_sq = vec![0.0; n * n];
        let mut x = vec![0.0; n];
        for m in 0..samples {
            draw(m, &mut x);
            for i in 0..n {
                for j in 0..n {
                    let p = x[i] * x[j];
                    sum[i * n + j] += p;
                    sum_sq[i * n + j] += p * p;
                }
            }
        }
        let k = samples as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / k).collect();
        let std_error = sum_sq
            .iter()
            .zip(&mean)
            .map(|(s2, m)| ((s2 / k - m * m).max(0.0) * k / (k - 1.0) / k).sqrt())
            .collect();
        EmpiricalCovariance {
            n,
            samples,
            mean,
            std_error,
        }
    }

    /// Largest `|mean − c| / se` over entries with nonzero error; entries with zero
    /// error must match exactly or yield infinity.
    pub fn max_z_against(&self, c: &CovarianceSpec) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_error)
            .zip(c.as_slice())
            .map(|((m, se), target)| z_score(m - target, *se))
            .fold(0.0, f64::max)
    }

    pub fn max_z_between(&self, other: &EmpiricalCovariance) -> f64 {
        (0..self.mean.len())
            .map(|k| {
                let se = self.std_error[k].hypot(other.std_error[k]);
                z_score(self.mean[k] - other.mean[k], se)
            })
            .fold(0.0, f64::max)
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Size, inverse temperature and field of the `k`-th formula-suite instance.
pub fn formula_case(k: usize) -> (usize, f64, f64) {
    const BETAS: [f64; 3] = [0.25, 0.5, 1.0];
    const FIELDS: [f64; 2] = [0.0, 0.3];
    (2 + k % 11, BETAS[k % 3], FIELDS[(k / 3) % 2])
}

fn instance_seed(seed: u64, suite: u64, k: usize) -> u64 {
    use rand::Rng;
    CounterRng::new(seed, Domain::Verify).stream(suite << 32 | k as u64).random()
}

pub fn decomposition_suite(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut successes = 0;
    let mut worst: f64 = 0.0;
    for k in 0..cfg.trials {
        let n = 1 + k % 12;
        let g = generate_sk(n, instance_seed(cfg.seed, 1, k))?;
        let d = decompose(&g);
        let tol = 1e-10 * (1.0 + g.abs_sum());
        let mut ok = true;
        for bits in 0..(1u64 << n) {
            let s = SpinConfig::from_bits(n, bits);
            let gap = (hamiltonian_decomposed(&d, &s)? - hamiltonian_raw(&g, &s)?).abs();
            worst = worst.max(gap / tol);
            ok &= gap <= tol;
        }
        successes += ok as usize;
    }
    Ok(SuiteReport {
        name: "decomposition identity".into(),
        passed: successes == cfg.trials,
        cases: cfg.trials,
        successes,
        required: cfg.trials,
        detail: format!("worst gap / tolerance = {worst:.3e}"),
    })
}

pub fn covariance_suite(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let cases = cfg.trials.min(10);
    let mut successes = 0;
    let mut worst = (0.0f64, 0.0f64);
    for k in 0..cases {
        let n = 2 + k % 5;
        let seed = instance_seed(cfg.seed, 2, k);
        let g = generate_sk(n, seed)?;
        let c = build_covariance(&g);
        let factor = factorize(&c)?;
        let rank = factor.rank();
        let fact = FactorizedSampler::new(factor, seed);
        let cons = ConstructiveSampler::new(&sign_split(&g), seed);
        let mut z = vec![0.0; rank];
        let a = EmpiricalCovariance::from_samples(n, cfg.samples, |m, x| fact.sample_into(m, &mut z, x));
        let b = EmpiricalCovariance::from_samples(n, cfg.samples, |m, x| cons.sample_into(m, x));
        let to_c = a.max_z_against(&c).max(b.max_z_against(&c));
        let between = a.max_z_between(&b);
        worst = (worst.0.max(to_c), worst.1.max(between));
        successes += (to_c < 4.0 && between < 6.0) as usize;
    }
    Ok(SuiteReport {
        name: "covariance equivalence".into(),
        passed: successes == cases,
        cases,
        successes,
        required: cases,
        detail: format!(
            "worst |z| against covariance = {:.2} (limit 4), between samplers = {:.2} (limit 6)",
            worst.0, worst.1
        ),
    })
}

pub fn formula_suite(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let opts = EnumOptions {
        cap: crate::oracle::DEFAULT_ENUM_CAP,
        jobs: cfg.jobs,
    };
    let mut successes = 0;
    let mut deviations = Vec::with_capacity(cfg.trials);
    let mut variances = Vec::with_capacity(cfg.trials);
    for k in 0..cfg.trials {
        let (n, beta, h) = formula_case(k);
        let seed = instance_seed(cfg.seed, 3, k);
        let g = generate_sk(n, seed)?;
        let exact = exact_free_energy(&g, beta, &h.into(), &opts)?;
        let est_cfg = EstimatorConfig::new(cfg.samples, seed).jobs(cfg.jobs);
        let est = formula_free_energy(&g, beta, &h.into(), &est_cfg)?;
        let value = if cfg.inject_sign_flip {
            est.value + beta * g.abs_sum()
        } else {
            est.value
        };
        let d = value - exact;
        successes += (d.abs() <= 3.0 * est.std_error) as usize;
        deviations.push(d);
        variances.push(est.std_error * est.std_error);
    }
    let required = (0.95 * cfg.trials as f64).floor() as usize;
    let count = cfg.trials.max(1) as f64;
    let mean_dev = deviations.iter().sum::<f64>() / count;
    let pooled = (variances.iter().sum::<f64>() / count).sqrt();
    let unbiased = mean_dev.abs() <= pooled;
    Ok(SuiteReport {
        name: "formula vs enumeration".into(),
        passed: successes >= required && unbiased && cfg.trials > 0,
        cases: cfg.trials,
        successes,
        required,
        detail: format!("mean signed deviation {mean_dev:.3e}, pooled standard error {pooled:.3e}"),
    })
}

pub fn run(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if cfg.samples < 2 {
        return Err(Error::InvalidArgument("samples must be at least 2".into()));
    }
    let suites = vec![decomposition_suite(cfg)?, covariance_suite(cfg)?, formula_suite(cfg)?];
    let passed = suites.iter().all(|s| s.passed);
    Ok(VerifyReport {
        config: cfg.clone(),
        suites,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            seed: 3,
            trials: 6,
            samples: 20_000,
            jobs: 1,
            inject_sign_flip: false,
        }
    }

    #[test]
    fn small_run_passes() {
        let report = run(&small()).unwrap();
        assert!(report.passed, "{report:#?}");
    }

    #[test]
    fn sign_flip_is_detected() {
        let cfg = VerifyConfig {
            inject_sign_flip: true,
            ..small()
        };
        let report = formula_suite(&cfg).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn zero_trials_is_rejected() {
        let cfg = VerifyConfig { trials: 0, ..small() };
        assert!(matches!(run(&cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn case_grid_covers_sizes_temperatures_and_fields() {
        let cases: Vec<_> = (0..100).map(formula_case).collect();
        assert!(cases.iter().all(|&(n, _, _)| (2..=12).contains(&n)));
        for beta in [0.25, 0.5, 1.0] {
            for h in [0.0, 0.3] {
                assert!(cases.iter().any(|&(_, b, f)| b == beta && f == h));
            }
        }
    }
}
