//! Monte Carlo evaluation of the Gaussian-integral representation
//!
//! ```text
//! N f_N(β, h) = log E exp(Σ_i log cosh(h_i + √β X_i)) − (β/2) Σ_ij |g_ij|
//! ```
//!
//! and of the Gibbs observables it induces. Conditionally on the field `X` the
//! spins are independent with `⟨σ_i | X⟩ = tanh(h_i + √β X_i)`, so
//! `⟨σ_i⟩ = E[tanh(c_i) e^S] / E[e^S]` and, for `i ≠ j`,
//! `⟨σ_i σ_j⟩ = E[tanh(c_i) tanh(c_j) e^S] / E[e^S]` with `c_i = h_i + √β X_i`
//! and `S = Σ_i log cosh(c_i)`.
//!
//! Plain sampling of `X ~ N(0, C)` has weights `e^S` whose relative variance
//! grows like `e^{β Σ|g|} 2^{-N}`, so by default the field is drawn from a
//! Gaussian proposal tilted towards the spin moments (see [`ProposalKind`]) and
//! reweighted exactly.
//!
//! Samples are grouped into units: a unit is either one draw or, with
//! antithetic pairing, the draw and its reflection through the proposal mean
//! (`(X, −X)` under the prior), both from the same counter stream.
//! Units are processed in fixed-size chunks whose results are merged in chunk
//! order, so estimates are bit-identical for every worker count.

mod proposal;

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::couplings::CouplingMatrix;
use crate::error::{Error, Result};
use crate::field::{check_beta, ExternalField};
use crate::gaussfield::{build_covariance, factorize, FieldFactor};
use crate::rng::{CounterRng, Domain};
use crate::stats::{log_cosh, ordered_chunk_reduce};

pub use proposal::{GaussianTilt, Proposal, ProposalKind, TiltMixture};

/// Units per chunk; chunks are also the blocks of the jackknife and bootstrap.
pub const CHUNK_UNITS: u64 = 1024;

/// Adaptive proposals need this many draws to afford a pilot run.
pub const ADAPTIVE_MIN_SAMPLES: u64 = 2000;

/// Share of the independent-spin tilt kept in adaptive proposals, so that a
/// pilot which missed part of the target cannot make the weights explode.
pub const DEFENSIVE_SHARE: f64 = 0.5;

/// Above this size the pilot's pair moments cost more than they save.
pub const ADAPTIVE_MAX_N: usize = 128;

/// Below this effective sample size estimates are flagged as unreliable.
pub const LOW_ESS_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub samples: u64,
    pub seed: u64,
    pub antithetic: bool,
    /// Number of block-bootstrap resamples; `None` disables the bootstrap.
    pub bootstrap: Option<usize>,
    pub jobs: usize,
    pub proposal: ProposalKind,
}

impl EstimatorConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        EstimatorConfig {
            samples,
            seed,
            antithetic: true,
            bootstrap: None,
            jobs: 1,
            proposal: ProposalKind::Adaptive,
        }
    }

    pub fn proposal(mut self, kind: ProposalKind) -> Self {
        self.proposal = kind;
        self
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn bootstrap(mut self, resamples: Option<usize>) -> Self {
        self.bootstrap = resamples;
        self
    }

    pub fn jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs;
        self
    }

    pub(crate) fn replicas(&self) -> u64 {
        if self.antithetic {
            2
        } else {
            1
        }
    }

    /// Number of units; an odd sample count loses its last sample under pairing.
    pub(crate) fn units(&self) -> Result<u64> {
        if self.samples < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 samples, got {}",
                self.samples
            )));
        }
        Ok(self.samples / self.replicas())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub value: f64,
    pub std_error: f64,
    /// Field draws actually used (twice the number of pairs under pairing).
    pub samples: u64,
    pub seed: u64,
    pub elapsed_secs: f64,
    /// Effective number of units, `(Σ W)² / Σ W²`.
    pub ess: f64,
    /// Block-jackknife estimate of the bias of the log-of-mean estimator.
    pub bias_estimate: f64,
    pub bootstrap_std_error: Option<f64>,
    pub low_ess: bool,
    /// Field distribution actually sampled.
    pub proposal: ProposalKind,
    /// Extra draws spent on the pilot run, not included in `samples`.
    pub pilot_samples: u64,
}

/// Sums of `W` and `W²` relative to a running maximum of `log W`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WeightAcc {
    max: f64,
    pub(crate) sum_w: f64,
    sum_w2: f64,
    count: u64,
}

impl Default for WeightAcc {
    fn default() -> Self {
        WeightAcc {
            max: f64::NEG_INFINITY,
            sum_w: 0.0,
            sum_w2: 0.0,
            count: 0,
        }
    }
}

impl WeightAcc {
    #[inline]
    pub(crate) fn push(&mut self, log_w: f64) {
        self.count += 1;
        if log_w > self.max {
            let f = (self.max - log_w).exp();
            self.sum_w = self.sum_w * f + 1.0;
            self.sum_w2 = self.sum_w2 * f * f + 1.0;
            self.max = log_w;
        } else {
            let w = (log_w - self.max).exp();
            self.sum_w += w;
            self.sum_w2 += w * w;
        }
    }

    pub(crate) fn merge(&mut self, other: &WeightAcc) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let m = self.max.max(other.max);
        let (fa, fb) = ((self.max - m).exp(), (other.max - m).exp());
        self.sum_w = self.sum_w * fa + other.sum_w * fb;
        self.sum_w2 = self.sum_w2 * fa * fa + other.sum_w2 * fb * fb;
        self.max = m;
        self.count += other.count;
    }

    /// `Σ W` expressed relative to `shift`.
    fn sum_at(&self, shift: f64) -> f64 {
        self.sum_w * (self.max - shift).exp()
    }
}

/// `log((e^a + e^b) / 2)`, exactly `a` when `a == b`.
#[inline]
fn log_mean_pair(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + (0.5 * ((a - m).exp() + (b - m).exp())).ln()
}

/// `tanh` with exact odd symmetry.
#[inline]
fn odd_tanh(x: f64) -> f64 {
    x.abs().tanh().copysign(x)
}

fn check_grid(betas: &[f64]) -> Result<()> {
    if betas.is_empty() {
        return Err(Error::InvalidArgument("inverse-temperature grid is empty".into()));
    }
    for &b in betas {
        check_beta(b)?;
    }
    if betas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "inverse-temperature grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

pub(crate) fn summarize(
    total: &WeightAcc,
    blocks: &[WeightAcc],
    constant: f64,
    cfg: &EstimatorConfig,
    elapsed_secs: f64,
) -> Result<EstimateResult> {
    let k = total.count as f64;
    let mean = total.sum_w / k;
    let value = total.max + mean.ln() + constant;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("degenerate estimate ({value})")));
    }
    let var = ((total.sum_w2 - k * mean * mean) / (k - 1.0).max(1.0)).max(0.0);
    let std_error = (var / k).sqrt() / mean;
    let ess = total.sum_w * total.sum_w / total.sum_w2;

    let shift = total.max;
    let sums: Vec<f64> = blocks.iter().map(|b| b.sum_at(shift)).collect();
    let counts: Vec<f64> = blocks.iter().map(|b| b.count as f64).collect();
    let total_sum: f64 = sums.iter().sum();
    let theta = (total_sum / k).ln();
    let nb = blocks.len();
    let bias_estimate = if nb >= 2 {
        let mean_loo = sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| ((total_sum - s) / (k - c)).ln())
            .sum::<f64>()
            / nb as f64;
        (nb as f64 - 1.0) * (mean_loo - theta)
    } else {
        0.0
    };

    let bootstrap_std_error = cfg.bootstrap.filter(|&r| r >= 2 && nb >= 1).map(|resamples| {
        let rng = CounterRng::new(cfg.seed, Domain::Bootstrap);
        let thetas: Vec<f64> = (0..resamples as u64)
            .map(|r| {
                let mut stream = rng.stream(r);
                let (mut s, mut c) = (0.0, 0.0);
                for _ in 0..nb {
                    let b = stream.random_range(0..nb);
                    s += sums[b];
                    c += counts[b];
                }
                (s / c).ln()
            })
            .collect();
        let m = thetas.iter().sum::<f64>() / thetas.len() as f64;
        let v = thetas.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (thetas.len() - 1) as f64;
        v.sqrt()
    });

    Ok(EstimateResult {
        value,
        std_error,
        samples: total.count * cfg.replicas(),
        seed: cfg.seed,
        elapsed_secs,
        ess,
        bias_estimate,
        bootstrap_std_error,
        low_ess: ess < LOW_ESS_THRESHOLD,
        proposal: ProposalKind::Prior,
        pilot_samples: 0,
    })
}

/// One estimate per inverse temperature.
///
/// Every grid point reuses the same underlying normal draws (common random
/// numbers) and equals what [`formula_free_energy`] returns for it.
pub fn sweep(
    g: &CouplingMatrix,
    betas: &[f64],
    h: &ExternalField,
    cfg: &EstimatorConfig,
) -> Result<Vec<EstimateResult>> {
    check_grid(betas)?;
    cfg.units()?;
    h.resolve(g.n())?;
    let factor = factorize(&build_covariance(g))?;
    betas
        .iter()
        .map(|&beta| free_energy_with(g, &factor, beta, h, cfg))
        .collect()
}

/// Estimate of `N f_N(β, h)`.
pub fn formula_free_energy(
    g: &CouplingMatrix,
    beta: f64,
    h: &ExternalField,
    cfg: &EstimatorConfig,
) -> Result<EstimateResult> {
    check_beta(beta)?;
    cfg.units()?;
    let factor = factorize(&build_covariance(g))?;
    free_energy_with(g, &factor, beta, h, cfg)
}

fn free_energy_with(
    g: &CouplingMatrix,
    factor: &FieldFactor,
    beta: f64,
    h: &ExternalField,
    cfg: &EstimatorConfig,
) -> Result<EstimateResult> {
    let start = Instant::now();
    let units = cfg.units()?;
    let field = h.resolve(g.n())?;
    let (proposal, pilot_units) = build_proposal(factor, beta, &field, cfg, units)?;
    let chunks = weighted_pass(&proposal, &field, beta.sqrt(), units, cfg, Domain::FactorizedField, false)?;
    let blocks: Vec<WeightAcc> = chunks.iter().map(|c| c.weights).collect();
    let mut total = WeightAcc::default();
    blocks.iter().for_each(|b| total.merge(b));
    let mut result = summarize(
        &total,
        &blocks,
        -0.5 * beta * g.abs_sum(),
        cfg,
        start.elapsed().as_secs_f64(),
    )?;
    result.proposal = proposal.kind();
    result.pilot_samples = pilot_units * cfg.replicas();
    Ok(result)
}

/// Picks the sampling distribution of the field for one inverse temperature.
/// Returns the proposal and the number of pilot units spent building it.
fn build_proposal(
    factor: &FieldFactor,
    beta: f64,
    field: &[f64],
    cfg: &EstimatorConfig,
    units: u64,
) -> Result<(Proposal, u64)> {
    if beta == 0.0 || factor.rank() == 0 || cfg.proposal == ProposalKind::Prior {
        return Ok((Proposal::prior(factor.clone()), 0));
    }
    let independent = Proposal::independent(factor.clone(), beta, field)?;
    let pilot_units = units / 10;
    if cfg.proposal == ProposalKind::Independent
        || units * cfg.replicas() < ADAPTIVE_MIN_SAMPLES
        || factor.n() > ADAPTIVE_MAX_N
    {
        return Ok((independent, 0));
    }
    let n = factor.n();
    let chunks = weighted_pass(&independent, field, beta.sqrt(), pilot_units, cfg, Domain::PilotField, true)?;
    let mut acc = RatioAcc::new(n + n * (n - 1) / 2);
    chunks.iter().for_each(|c| acc.merge(c));
    let sw = acc.weights.sum_w;
    let m: Vec<f64> = (0..n).map(|i| acc.wf[i] / sw).collect();
    let mut k = vec![0.0; n * n];
    let mut idx = n;
    for i in 0..n {
        k[i * n + i] = 1.0 - m[i] * m[i];
        for j in (i + 1)..n {
            let c = acc.wf[idx] / sw - m[i] * m[j];
            k[i * n + j] = c;
            k[j * n + i] = c;
            idx += 1;
        }
    }
    match Proposal::from_spin_moments(ProposalKind::Adaptive, factor.clone(), beta, &m, &k) {
        Ok(p) if m.iter().chain(&k).all(|v| v.is_finite()) => {
            Ok((p.with_backup(&independent, DEFENSIVE_SHARE), pilot_units))
        }
        _ => Ok((independent, pilot_units)),
    }
}

/// One pass over `units` units drawn from `proposal`; returns one accumulator
/// per chunk. With `observables` each unit also carries its weighted averages
/// of `tanh(c_i)` and `tanh(c_i) tanh(c_j)` for `i < j`.
fn weighted_pass(
    proposal: &Proposal,
    field: &[f64],
    root: f64,
    units: u64,
    cfg: &EstimatorConfig,
    domain: Domain,
    observables: bool,
) -> Result<Vec<RatioAcc>> {
    let n = proposal.n();
    let rank = proposal.rank();
    let dim = if observables { n + n * n.saturating_sub(1) / 2 } else { 0 };
    let rng = CounterRng::new(cfg.seed, domain);
    let replicas: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
    let mut chunks = Vec::new();
    ordered_chunk_reduce(
        units,
        CHUNK_UNITS,
        cfg.jobs,
        |_, range| {
            let mut acc = RatioAcc::new(dim);
            let mut u = vec![0.0; rank];
            let mut z = vec![0.0; rank];
            let mut x = vec![0.0; n];
            let mut scratch = vec![0.0; rank];
            let mut t = vec![vec![0.0; if observables { n } else { 0 }]; replicas.len()];
            let mut s = vec![0.0; replicas.len()];
            let mut unit_f = vec![0.0; dim];
            for unit in range {
                let mut stream = rng.stream(unit);
                GaussianTilt::normals(&mut stream, &mut u);
                let pick = if proposal.needs_pick() { stream.random::<f64>() } else { 0.0 };
                for (r, &sign) in replicas.iter().enumerate() {
                    let mut sum = proposal.place(sign, &u, pick, &mut z, &mut x, &mut scratch);
                    for i in 0..n {
                        let c = field[i] + root * x[i];
                        sum += log_cosh(c);
                        if observables {
                            t[r][i] = odd_tanh(c);
                        }
                    }
                    s[r] = sum;
                }
                let log_w = match s[..] {
                    [a, b] => log_mean_pair(a, b),
                    _ => s[0],
                };
                if observables {
                    let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = s.iter().map(|v| (v - top).exp()).collect();
                    let w_sum: f64 = w.iter().sum();
                    unit_f.iter_mut().for_each(|v| *v = 0.0);
                    for (r, wr) in w.iter().enumerate() {
                        let tr = &t[r];
                        let mut idx = n;
                        for i in 0..n {
                            unit_f[i] += wr * tr[i];
                            for j in (i + 1)..n {
                                unit_f[idx] += wr * tr[i] * tr[j];
                                idx += 1;
                            }
                        }
                    }
                    unit_f.iter_mut().for_each(|v| *v /= w_sum);
                }
                acc.push(log_w, &unit_f);
            }
            acc
        },
        |_, acc| chunks.push(acc),
    )?;
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableEstimate {
    pub magnetizations: Vec<f64>,
    pub magnetization_errors: Vec<f64>,
    /// Row-major `n × n`, unit diagonal.
    pub correlations: Vec<f64>,
    pub correlation_errors: Vec<f64>,
    pub samples: u64,
    pub seed: u64,
    pub elapsed_secs: f64,
    pub ess: f64,
    pub low_ess: bool,
    pub proposal: ProposalKind,
    pub pilot_samples: u64,
}

impl ObservableEstimate {
    pub fn n(&self) -> usize {
        self.magnetizations.len()
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.correlations[i * self.n() + j]
    }

    pub fn correlation_error(&self, i: usize, j: usize) -> f64 {
        self.correlation_errors[i * self.n() + j]
    }
}

/// Self-normalized accumulators for a vector of unit averages `F` with unit
/// weights `W`: `Σ W`, `Σ W²`, `Σ W F`, `Σ W² F`, `Σ W² F²`.
#[derive(Debug, Clone)]
pub(crate) struct RatioAcc {
    pub(crate) weights: WeightAcc,
    pub(crate) wf: Vec<f64>,
    w2f: Vec<f64>,
    w2f2: Vec<f64>,
}

impl RatioAcc {
    pub(crate) fn new(dim: usize) -> Self {
        RatioAcc {
            weights: WeightAcc::default(),
            wf: vec![0.0; dim],
            w2f: vec![0.0; dim],
            w2f2: vec![0.0; dim],
        }
    }

    fn rescale(&mut self, f: f64) {
        let f2 = f * f;
        self.wf.iter_mut().for_each(|v| *v *= f);
        self.w2f.iter_mut().for_each(|v| *v *= f2);
        self.w2f2.iter_mut().for_each(|v| *v *= f2);
    }

    /// Adds a unit of weight `exp(log_w)` whose weighted averages are `unit_f`.
    pub(crate) fn push(&mut self, log_w: f64, unit_f: &[f64]) {
        let old = self.weights.max;
        self.weights.push(log_w);
        let new = self.weights.max;
        if new > old && old > f64::NEG_INFINITY {
            self.rescale((old - new).exp());
        }
        let w = (log_w - new).exp();
        let w2 = w * w;
        for (k, &f) in unit_f.iter().enumerate() {
            self.wf[k] += w * f;
            self.w2f[k] += w2 * f;
            self.w2f2[k] += w2 * f * f;
        }
    }

    pub(crate) fn merge(&mut self, other: &RatioAcc) {
        if other.weights.count == 0 {
            return;
        }
        let m = self.weights.max.max(other.weights.max);
        if self.weights.count > 0 {
            self.rescale((self.weights.max - m).exp());
        }
        let fb = (other.weights.max - m).exp();
        let fb2 = fb * fb;
        for k in 0..self.wf.len() {
            self.wf[k] += fb * other.wf[k];
            self.w2f[k] += fb2 * other.w2f[k];
            self.w2f2[k] += fb2 * other.w2f2[k];
        }
        self.weights.merge(&other.weights);
    }
}

/// Self-normalized estimates of magnetizations and pair correlations.
pub fn formula_observables(
    g: &CouplingMatrix,
    beta: f64,
    h: &ExternalField,
    cfg: &EstimatorConfig,
) -> Result<ObservableEstimate> {
    check_beta(beta)?;
    let units = cfg.units()?;
    let n = g.n();
    let field = h.resolve(n)?;
    let start = Instant::now();
    let factor = factorize(&build_covariance(g))?;
    let rank = factor.rank();
    let pairs = n * n.saturating_sub(1) / 2;

    if beta == 0.0 || rank == 0 {
        // The field drops out: independent spins with ⟨σ_i⟩ = tanh(h_i).
        let m: Vec<f64> = field.iter().map(|&v| odd_tanh(v)).collect();
        let mut corr = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                corr[i * n + j] = if i == j { 1.0 } else { m[i] * m[j] };
            }
        }
        return Ok(ObservableEstimate {
            magnetization_errors: vec![0.0; n],
            magnetizations: m,
            correlations: corr,
            correlation_errors: vec![0.0; n * n],
            samples: units * cfg.replicas(),
            seed: cfg.seed,
            elapsed_secs: start.elapsed().as_secs_f64(),
            ess: units as f64,
            low_ess: false,
            proposal: ProposalKind::Prior,
            pilot_samples: 0,
        });
    }

    let (proposal, pilot_units) = build_proposal(&factor, beta, &field, cfg, units)?;
    let chunks = weighted_pass(&proposal, &field, beta.sqrt(), units, cfg, Domain::FactorizedField, true)?;
    let mut total = RatioAcc::new(n + pairs);
    chunks.iter().for_each(|c| total.merge(c));

    let sw = total.weights.sum_w;
    let sw2 = total.weights.sum_w2;
    let estimate = |k: usize| {
        let mu = total.wf[k] / sw;
        let num = total.w2f2[k] - 2.0 * mu * total.w2f[k] + mu * mu * sw2;
        (mu, num.max(0.0).sqrt() / sw)
    };
    let mut magnetizations = Vec::with_capacity(n);
    let mut magnetization_errors = Vec::with_capacity(n);
    for i in 0..n {
        let (mu, se) = estimate(i);
        magnetizations.push(mu);
        magnetization_errors.push(se);
    }
    let mut correlations = vec![0.0; n * n];
    let mut correlation_errors = vec![0.0; n * n];
    let mut idx = n;
    for i in 0..n {
        correlations[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let (mu, se) = estimate(idx);
            correlations[i * n + j] = mu;
            correlations[j * n + i] = mu;
            correlation_errors[i * n + j] = se;
            correlation_errors[j * n + i] = se;
            idx += 1;
        }
    }
    if magnetizations.iter().chain(&correlations).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("degenerate observable estimate".into()));
    }
    let ess = sw * sw / sw2;
    Ok(ObservableEstimate {
        magnetizations,
        magnetization_errors,
        correlations,
        correlation_errors,
        samples: total.weights.count * cfg.replicas(),
        seed: cfg.seed,
        elapsed_secs: start.elapsed().as_secs_f64(),
        ess,
        low_ess: ess < LOW_ESS_THRESHOLD,
        proposal: proposal.kind(),
        pilot_samples: pilot_units * cfg.replicas(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::generate_sk;
    use crate::oracle::{exact_free_energy, exact_observables, EnumOptions};

    fn pair(v: f64) -> CouplingMatrix {
        CouplingMatrix::from_edges(2, [(0, 1, v)]).unwrap()
    }

    #[test]
    fn rejects_too_few_samples() {
        let g = pair(0.5);
        let err = formula_free_energy(&g, 1.0, &0.0.into(), &EstimatorConfig::new(1, 0));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn infinite_temperature_is_exact() {
        let g = generate_sk(6, 1).unwrap();
        for antithetic in [true, false] {
            let cfg = EstimatorConfig::new(5000, 3).antithetic(antithetic);
            let r = formula_free_energy(&g, 0.0, &0.3.into(), &cfg).unwrap();
            assert!((r.value - 6.0 * log_cosh(0.3)).abs() < 1e-13);
            assert_eq!(r.std_error, 0.0);
        }
    }

    #[test]
    fn single_spin_is_exact() {
        let g = CouplingMatrix::zeros(1).unwrap();
        let r = formula_free_energy(&g, 1.0, &0.5.into(), &EstimatorConfig::new(100, 3)).unwrap();
        assert_eq!(r.value, log_cosh(0.5));
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn odd_samples_lose_one_under_pairing() {
        let g = pair(0.5);
        let r = formula_free_energy(&g, 1.0, &0.0.into(), &EstimatorConfig::new(101, 3)).unwrap();
        assert_eq!(r.samples, 100);
        let r = formula_free_energy(&g, 1.0, &0.0.into(), &EstimatorConfig::new(101, 3).antithetic(false))
            .unwrap();
        assert_eq!(r.samples, 101);
    }

    #[test]
    fn two_spins_agree_with_closed_form() {
        let (beta, v) = (1.0, 0.8);
        let r = formula_free_energy(&pair(v), beta, &0.0.into(), &EstimatorConfig::new(200_000, 11)).unwrap();
        let exact = f64::cosh(beta * v).ln();
        assert!((r.value - exact).abs() < 3.0 * r.std_error, "{} vs {exact} ± {}", r.value, r.std_error);
        assert!(r.bias_estimate.abs() < r.std_error);
    }

    #[test]
    fn small_sk_agrees_with_oracle() {
        let g = generate_sk(6, 40).unwrap();
        let h = ExternalField::Uniform(0.3);
        let exact = exact_free_energy(&g, 0.7, &h, &EnumOptions::default()).unwrap();
        let r = formula_free_energy(&g, 0.7, &h, &EstimatorConfig::new(200_000, 2)).unwrap();
        assert!((r.value - exact).abs() < 3.0 * r.std_error);
        assert!(!r.low_ess);
    }

    #[test]
    fn sweep_reuses_draws_and_matches_single_points() {
        let g = generate_sk(5, 9).unwrap();
        let h = ExternalField::Uniform(0.1);
        let cfg = EstimatorConfig::new(20_000, 5);
        let grid = [0.0, 0.5, 1.0];
        let s = sweep(&g, &grid, &h, &cfg).unwrap();
        assert_eq!(s.len(), 3);
        assert!((s[0].value - 5.0 * log_cosh(0.1)).abs() < 1e-13);
        for (&b, r) in grid.iter().zip(&s) {
            let single = formula_free_energy(&g, b, &h, &cfg).unwrap();
            assert_eq!(single.value, r.value);
            assert_eq!(single.std_error, r.std_error);
        }
        assert!(sweep(&g, &[], &h, &cfg).is_err());
        assert!(sweep(&g, &[0.5, 0.5], &h, &cfg).is_err());
        assert!(sweep(&g, &[-0.1, 0.5], &h, &cfg).is_err());
    }

    #[test]
    fn results_independent_of_jobs() {
        let g = generate_sk(7, 9).unwrap();
        let h = ExternalField::Uniform(0.2);
        let base = EstimatorConfig::new(30_000, 5).bootstrap(Some(50));
        let one = formula_free_energy(&g, 0.8, &h, &base).unwrap();
        for jobs in [2, 8] {
            let other = formula_free_energy(&g, 0.8, &h, &base.clone().jobs(jobs)).unwrap();
            assert_eq!(one.value, other.value);
            assert_eq!(one.std_error, other.std_error);
            assert_eq!(one.bootstrap_std_error, other.bootstrap_std_error);
        }
        let obs1 = formula_observables(&g, 0.8, &h, &base).unwrap();
        let obs8 = formula_observables(&g, 0.8, &h, &base.clone().jobs(8)).unwrap();
        assert_eq!(obs1.magnetizations, obs8.magnetizations);
        assert_eq!(obs1.correlations, obs8.correlations);
    }

    #[test]
    fn bootstrap_error_is_comparable_to_delta_method() {
        let g = generate_sk(6, 3).unwrap();
        let cfg = EstimatorConfig::new(200_000, 8).bootstrap(Some(400));
        let r = formula_free_energy(&g, 1.0, &0.0.into(), &cfg).unwrap();
        let boot = r.bootstrap_std_error.unwrap();
        assert!(boot > 0.5 * r.std_error && boot < 2.0 * r.std_error, "{boot} vs {}", r.std_error);
    }

    #[test]
    fn observables_at_infinite_temperature() {
        let g = generate_sk(4, 2).unwrap();
        let h = vec![0.2, -0.4, 0.0, 1.0];
        let obs = formula_observables(&g, 0.0, &h.clone().into(), &EstimatorConfig::new(10, 1)).unwrap();
        for (i, hi) in h.iter().enumerate() {
            assert_eq!(obs.magnetizations[i], hi.tanh());
            assert_eq!(obs.magnetization_errors[i], 0.0);
            assert_eq!(obs.correlation(i, i), 1.0);
        }
    }

    #[test]
    fn antithetic_pairing_cancels_zero_field_magnetizations() {
        let g = generate_sk(6, 13).unwrap();
        let obs = formula_observables(&g, 1.0, &0.0.into(), &EstimatorConfig::new(10_000, 4)).unwrap();
        assert!(obs.magnetizations.iter().all(|&m| m == 0.0));
        assert!((0..6).all(|i| obs.correlation(i, i) == 1.0 && obs.correlation_error(i, i) == 0.0));
    }

    #[test]
    fn observables_agree_with_oracle() {
        let g = generate_sk(5, 21).unwrap();
        let h = ExternalField::Uniform(0.3);
        let exact = exact_observables(&g, 0.9, &h, &EnumOptions::default()).unwrap();
        let est = formula_observables(&g, 0.9, &h, &EstimatorConfig::new(200_000, 6)).unwrap();
        for i in 0..5 {
            let d = est.magnetizations[i] - exact.magnetizations[i];
            assert!(d.abs() < 4.0 * est.magnetization_errors[i], "m{i}: {d}");
            for j in (i + 1)..5 {
                let d = est.correlation(i, j) - exact.correlation(i, j);
                assert!(d.abs() < 4.0 * est.correlation_error(i, j), "c{i}{j}: {d}");
            }
        }
    }

    #[test]
    fn pair_correlation_is_tanh() {
        let (beta, v) = (1.0, -0.7);
        let est = formula_observables(&pair(v), beta, &0.0.into(), &EstimatorConfig::new(200_000, 6)).unwrap();
        let d = est.correlation(0, 1) - (beta * v).tanh();
        assert!(d.abs() < 3.0 * est.correlation_error(0, 1));
    }

    #[test]
    fn every_proposal_targets_the_same_value() {
        let g = generate_sk(10, 21).unwrap();
        let h = ExternalField::Uniform(0.2);
        let exact = exact_free_energy(&g, 1.0, &h, &EnumOptions::default()).unwrap();
        let mut ess = Vec::new();
        for kind in [ProposalKind::Prior, ProposalKind::Independent, ProposalKind::Adaptive] {
            let cfg = EstimatorConfig::new(200_000, 8).proposal(kind);
            let r = formula_free_energy(&g, 1.0, &h, &cfg).unwrap();
            assert_eq!(r.proposal, kind);
            assert!((r.value - exact).abs() < 4.0 * r.std_error, "{kind:?}: {} vs {exact} ± {}", r.value, r.std_error);
            ess.push(r.ess);
        }
        assert!(ess[2] > ess[0], "{ess:?}");
    }

    #[test]
    fn pilot_is_reported_and_skipped_when_small() {
        let g = generate_sk(5, 3).unwrap();
        let r = formula_free_energy(&g, 0.8, &0.0.into(), &EstimatorConfig::new(20_000, 1)).unwrap();
        assert_eq!(r.proposal, ProposalKind::Adaptive);
        assert_eq!(r.pilot_samples, 2_000);
        assert_eq!(r.samples, 20_000);
        let r = formula_free_energy(&g, 0.8, &0.0.into(), &EstimatorConfig::new(1_000, 1)).unwrap();
        assert_eq!(r.proposal, ProposalKind::Independent);
        assert_eq!(r.pilot_samples, 0);
        let r = formula_free_energy(&g, 0.0, &0.0.into(), &EstimatorConfig::new(1_000, 1)).unwrap();
        assert_eq!(r.proposal, ProposalKind::Prior);
    }

    #[test]
    fn tilted_observables_agree_with_oracle() {
        let g = generate_sk(7, 17).unwrap();
        let h = ExternalField::Uniform(0.25);
        let exact = exact_observables(&g, 1.2, &h, &EnumOptions::default()).unwrap();
        let est = formula_observables(&g, 1.2, &h, &EstimatorConfig::new(100_000, 6)).unwrap();
        assert_eq!(est.proposal, ProposalKind::Adaptive);
        for i in 0..7 {
            let d = est.magnetizations[i] - exact.magnetizations[i];
            assert!(d.abs() < 4.0 * est.magnetization_errors[i] + 1e-12);
        }
    }
}
