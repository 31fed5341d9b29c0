//! Three-body interactions reduced to a two-body problem.
//!
//! Each triple is split by sign and completed to a square,
//! `σ_i σ_j σ_k = ½(σ_i + σ_j σ_k)² − 1` and `−σ_i σ_j σ_k = ½(σ_i − σ_j σ_k)² − 1`,
//! then linearized with one auxiliary Gaussian per square. Given the auxiliary
//! draws, the first spin of the triple sees a field and the product `σ_j σ_k`
//! becomes a pair coupling, which the enumeration oracle solves exactly.

use std::f64::consts::LN_2;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;

use crate::couplings::{parse_index, parse_value, read_records, CouplingMatrix};
use crate::error::{Error, Result};
use crate::estimator::{
    summarize, EstimateResult, EstimatorConfig, GaussianTilt, ProposalKind, RatioAcc, TiltMixture,
    WeightAcc, ADAPTIVE_MIN_SAMPLES, CHUNK_UNITS, DEFENSIVE_SHARE,
};
use crate::field::{check_beta, ExternalField};
use crate::oracle::{log_sum_weights_serial, PairEnergy};
use crate::rng::{CounterRng, Domain};
use crate::stats::{log_cosh, ordered_chunk_reduce};

pub type Triple = (usize, usize, usize);

/// Sparse couplings `g_ijk` on triples `i < j < k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeBodyCouplings {
    n: usize,
    triples: Vec<(Triple, f64)>,
    incident: Vec<Vec<(usize, usize, f64)>>,
}

impl ThreeBodyCouplings {
    /// Listing a triple twice is allowed only with the same value; zero values
    /// are dropped.
    pub fn new<I>(n: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Triple, f64)>,
    {
        if n == 0 {
            return Err(Error::InvalidArgument("number of spins must be positive".into()));
        }
        let mut triples: Vec<(Triple, f64)> = Vec::new();
        for ((i, j, k), v) in entries {
            if !(i < j && j < k) {
                return Err(Error::Validation(format!(
                    "triple ({i},{j},{k}) must have strictly increasing indices"
                )));
            }
            if k >= n {
                return Err(Error::Validation(format!(
                    "triple ({i},{j},{k}) out of range for n = {n}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Validation(format!("value for triple ({i},{j},{k}) is not finite")));
            }
            triples.push(((i, j, k), v));
        }
        triples.sort_by_key(|a| a.0);
        let mut deduped: Vec<(Triple, f64)> = Vec::with_capacity(triples.len());
        for (t, v) in triples {
            match deduped.last() {
                Some(&(prev, pv)) if prev == t => {
                    if pv != v {
                        return Err(Error::Validation(format!(
                            "conflicting values for triple {t:?}: {pv} and {v}"
                        )));
                    }
                }
                _ => deduped.push((t, v)),
            }
        }
        deduped.retain(|&(_, v)| v != 0.0);
        let mut incident = vec![Vec::new(); n];
        for &((i, j, k), v) in &deduped {
            incident[i].push((j, k, v));
            incident[j].push((i, k, v));
            incident[k].push((i, j, v));
        }
        Ok(ThreeBodyCouplings {
            n,
            triples: deduped,
            incident,
        })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, [])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Nonzero triples sorted lexicographically.
    pub fn triples(&self) -> &[(Triple, f64)] {
        &self.triples
    }

    /// For site `k`, the other two indices and the value of every triple
    /// containing it.
    pub fn incident(&self, k: usize) -> &[(usize, usize, f64)] {
        &self.incident[k]
    }

    pub fn abs_sum(&self) -> f64 {
        self.triples.iter().map(|(_, v)| v.abs()).sum()
    }
}

/// Mean-field 3-spin disorder: each triple is present with probability
/// `density` and carries a centered Gaussian of variance `3/n²`.
pub fn generate_pspin3(n: usize, density: f64, seed: u64) -> Result<ThreeBodyCouplings> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidArgument(format!("density {density} not in [0, 1]")));
    }
    let rng = CounterRng::new(seed, Domain::PspinCouplings);
    let scale = 3f64.sqrt() / n as f64;
    let mut entries = Vec::new();
    for k in 2..n {
        for j in 1..k {
            for i in 0..j {
                // Lexicographic rank of the triple among all triples below k.
                let index = (k * (k - 1) * (k - 2) / 6 + j * (j - 1) / 2 + i) as u64;
                let mut r = rng.stream(index);
                let keep = r.random::<f64>() < density;
                let z: f64 = r.sample(StandardNormal);
                if keep {
                    entries.push(((i, j, k), z * scale));
                }
            }
        }
    }
    ThreeBodyCouplings::new(n, entries)
}

/// Reads the 3-tensor format: header line `n`, then `i j k value` lines.
pub fn load_pspin3<R: BufRead>(source: R) -> Result<ThreeBodyCouplings> {
    let (n, records) = read_records(source)?;
    let mut entries = Vec::with_capacity(records.len());
    for (line, content) in &records {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected \"i j k value\", found {} fields", tokens.len()),
            });
        }
        let i = parse_index(tokens[0], *line)?;
        let j = parse_index(tokens[1], *line)?;
        let k = parse_index(tokens[2], *line)?;
        let v = parse_value(tokens[3], *line)?;
        entries.push(((i, j, k), v));
    }
    ThreeBodyCouplings::new(n, entries)
}

pub fn write_pspin3<W: Write>(t: &ThreeBodyCouplings, mut out: W) -> Result<()> {
    writeln!(out, "{}", t.n())?;
    for &((i, j, k), v) in t.triples() {
        writeln!(out, "{i} {j} {k} {v:e}")?;
    }
    Ok(())
}

/// `((σ_i + σ_j σ_k)²/2 − 1, (σ_i − σ_j σ_k)²/2 − 1)`, i.e. `(σ_i σ_j σ_k, −σ_i σ_j σ_k)`.
pub fn babylonian_triple(si: i8, sj: i8, sk: i8) -> Result<(f64, f64)> {
    if [si, sj, sk].iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::InvalidArgument(format!("spins ({si},{sj},{sk}) are not all ±1")));
    }
    let (a, b, c) = (si as f64, sj as f64, sk as f64);
    Ok((0.5 * (a + b * c).powi(2) - 1.0, 0.5 * (a - b * c).powi(2) - 1.0))
}

/// The two-body problem left after linearizing every triple at fixed auxiliary
/// draws. Its Gibbs exponent is
/// `Σ_{j<k} J_jk σ_j σ_k + Σ_i field_i σ_i` (inverse temperature already folded in),
/// and `constant = −β Σ |g_ijk|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedInstance {
    pub effective_pair: CouplingMatrix,
    pub effective_field: Vec<f64>,
    pub constant: f64,
}

/// Auxiliary draws `(ξ, η)` for every triple, in triple order.
pub fn auxiliary_draws(t: &ThreeBodyCouplings, seed: u64, aux_index: u64) -> Vec<(f64, f64)> {
    let mut r: ChaCha8Rng = CounterRng::new(seed, Domain::PspinAuxiliary).stream(aux_index);
    t.triples()
        .iter()
        .map(|_| {
            let xi: f64 = r.sample(StandardNormal);
            let eta: f64 = r.sample(StandardNormal);
            (xi, eta)
        })
        .collect()
}

/// Linear coefficients `(a, b)` of `a(σ_i + σ_j σ_k) + b(σ_i − σ_j σ_k)` per triple.
pub fn linear_coefficients(t: &ThreeBodyCouplings, beta: f64, draws: &[(f64, f64)]) -> Vec<(f64, f64)> {
    t.triples()
        .iter()
        .zip(draws)
        .map(|(&(_, v), &(xi, eta))| {
            let plus = v.max(0.0);
            let minus = (-v).max(0.0);
            ((beta * plus).sqrt() * xi, (beta * minus).sqrt() * eta)
        })
        .collect()
}

fn reduce_with_draws(t: &ThreeBodyCouplings, beta: f64, draws: &[(f64, f64)], sign: f64) -> ReducedInstance {
    let n = t.n();
    let mut pair = vec![0.0; n * n];
    let mut field = vec![0.0; n];
    for (&((i, j, k), _), (a, b)) in t.triples().iter().zip(linear_coefficients(t, beta, draws)) {
        let (a, b) = (sign * a, sign * b);
        field[i] += a + b;
        pair[j * n + k] += a - b;
        pair[k * n + j] += a - b;
    }
    let effective_pair = CouplingMatrix::from_dense(n, pair)
        .expect("reduction builds a symmetric matrix with zero diagonal");
    ReducedInstance {
        effective_pair,
        effective_field: field,
        constant: -beta * t.abs_sum(),
    }
}

/// One reduction step at auxiliary draw `aux_index`.
pub fn reduce_one_level(t: &ThreeBodyCouplings, beta: f64, aux_sample_seed: u64, aux_index: u64) -> ReducedInstance {
    let draws = auxiliary_draws(t, aux_sample_seed, aux_index);
    reduce_with_draws(t, beta, &draws, 1.0)
}

/// `log E_o exp(Σ J σσ + Σ (h_i + field_i) σ_i)` for a reduced instance, by
/// enumeration, or in closed form when no pair coupling survives.
pub fn reduced_log_partition(r: &ReducedInstance, h: &[f64]) -> f64 {
    let n = r.effective_pair.n();
    let field: Vec<f64> = h.iter().zip(&r.effective_field).map(|(a, b)| a + b).collect();
    if r.effective_pair.edges().is_empty() {
        return field.iter().map(|&v| log_cosh(v)).sum();
    }
    let model = PairEnergy {
        couplings: &r.effective_pair,
        beta: 1.0,
        field,
    };
    log_sum_weights_serial(&model) - n as f64 * LN_2
}

/// Pilot runs enumerate `2^n` configurations per triple per draw; beyond this
/// budget the adaptive proposal falls back to the independent-spin one.
const PILOT_BUDGET: usize = 1 << 17;

/// Upper bound on pilot units, whatever the sample size.
const PILOT_MAX_UNITS: u64 = 8192;

/// Each pilot round refits the tilt from draws of the previous one.
const PILOT_ROUNDS: u64 = 2;

/// 3-spin free energy `log E_o exp(β H_3 + Σ h_i σ_i)` by averaging the exactly
/// solved reduced instances over the auxiliary draws.
///
/// Only one auxiliary variable per triple is live: `ζ_t` with coefficient
/// `c_t = √(β|g_t|)` on `f_t(σ) = σ_i + sgn(g_t) σ_j σ_k`. Unless the prior is
/// requested, the live variables are drawn from a Gaussian matched to their
/// conditional law (mean `c ⊙ ⟨f⟩`, covariance `I + c Cov(f) c`) and reweighted.
/// With pairing enabled, each unit uses a draw and its reflection.
pub fn nested_free_energy(
    t: &ThreeBodyCouplings,
    beta: f64,
    h: &ExternalField,
    cfg: &EstimatorConfig,
    cap: usize,
) -> Result<EstimateResult> {
    check_beta(beta)?;
    let units = cfg.units()?;
    let n = t.n();
    if n > cap || n > 63 {
        return Err(Error::CapExceeded { n, cap: cap.min(63) });
    }
    let field = h.resolve(n)?;
    let start = Instant::now();
    let constant = -beta * t.abs_sum();
    let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };

    if cfg.proposal == ProposalKind::Prior || beta == 0.0 || t.triples().is_empty() {
        let mut blocks = Vec::new();
        ordered_chunk_reduce(
            units,
            CHUNK_UNITS,
            cfg.jobs,
            |_, range| {
                let mut acc = WeightAcc::default();
                for unit in range {
                    let draws = auxiliary_draws(t, cfg.seed, unit);
                    let logs: Vec<f64> = signs
                        .iter()
                        .map(|&s| reduced_log_partition(&reduce_with_draws(t, beta, &draws, s), &field))
                        .collect();
                    acc.push(log_mean(&logs));
                }
                acc
            },
            |_, acc| blocks.push(acc),
        )?;
        let mut total = WeightAcc::default();
        blocks.iter().for_each(|b| total.merge(b));
        return summarize(&total, &blocks, constant, cfg, start.elapsed().as_secs_f64());
    }

    let live = LiveAuxiliaries::new(t, beta);
    let mut kind = ProposalKind::Independent;
    let independent = live.independent(&field)?;
    let mut tilt = TiltMixture::single(independent.clone());
    let mut pilot_units = 0;
    let affordable = (1usize << n).saturating_mul(live.len()) <= PILOT_BUDGET;
    if cfg.proposal == ProposalKind::Adaptive
        && affordable
        && units * cfg.replicas() >= ADAPTIVE_MIN_SAMPLES
    {
        let per_round = (units / 10).min(PILOT_MAX_UNITS) / PILOT_ROUNDS;
        for round in 0..PILOT_ROUNDS {
            pilot_units += per_round;
            match live.adapt(t, beta, &field, &tilt, per_round, round, cfg)? {
                Some(adapted) => {
                    tilt = TiltMixture::defensive(adapted, independent.clone(), DEFENSIVE_SHARE);
                    kind = ProposalKind::Adaptive;
                }
                None => break,
            }
        }
    }

    let rng = CounterRng::new(cfg.seed, Domain::PspinAuxiliary);
    let dim = live.len();
    let mut blocks = Vec::new();
    ordered_chunk_reduce(
        units,
        CHUNK_UNITS,
        cfg.jobs,
        |_, range| {
            let mut acc = WeightAcc::default();
            let mut u = vec![0.0; dim];
            let mut w = vec![0.0; dim];
            let mut scratch = vec![0.0; dim];
            let mut logs = vec![0.0; signs.len()];
            for unit in range {
                let mut stream = rng.stream(unit);
                GaussianTilt::normals(&mut stream, &mut u);
                let pick = if tilt.needs_pick() { stream.random::<f64>() } else { 0.0 };
                for (slot, &sign) in logs.iter_mut().zip(signs) {
                    let log_w = tilt.place(sign, &u, pick, &mut w, &mut scratch);
                    let r = reduce_with_draws(t, beta, &live.draws(&w), 1.0);
                    *slot = log_w + reduced_log_partition(&r, &field);
                }
                acc.push(log_mean(&logs));
            }
            acc
        },
        |_, acc| blocks.push(acc),
    )?;
    let mut total = WeightAcc::default();
    blocks.iter().for_each(|b| total.merge(b));
    let mut result = summarize(&total, &blocks, constant, cfg, start.elapsed().as_secs_f64())?;
    result.proposal = kind;
    result.pilot_samples = pilot_units * cfg.replicas();
    Ok(result)
}

/// `log` of the mean of `exp(logs)`.
fn log_mean(logs: &[f64]) -> f64 {
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = logs.iter().map(|v| (v - top).exp()).sum::<f64>() / logs.len() as f64;
    top + mean.ln()
}

/// The live auxiliary variable of each triple with its coefficient and sign.
struct LiveAuxiliaries {
    sites: Vec<Triple>,
    coeff: Vec<f64>,
    positive: Vec<bool>,
}

impl LiveAuxiliaries {
    fn new(t: &ThreeBodyCouplings, beta: f64) -> Self {
        LiveAuxiliaries {
            sites: t.triples().iter().map(|&(s, _)| s).collect(),
            coeff: t.triples().iter().map(|&(_, v)| (beta * v.abs()).sqrt()).collect(),
            positive: t.triples().iter().map(|&(_, v)| v > 0.0).collect(),
        }
    }

    fn len(&self) -> usize {
        self.coeff.len()
    }

    fn sign(&self, k: usize) -> f64 {
        if self.positive[k] {
            1.0
        } else {
            -1.0
        }
    }

    /// `(ξ, η)` pairs with the dead variable of each triple set to zero.
    fn draws(&self, w: &[f64]) -> Vec<(f64, f64)> {
        w.iter()
            .zip(&self.positive)
            .map(|(&v, &p)| if p { (v, 0.0) } else { (0.0, v) })
            .collect()
    }

    /// Tilt matched to independent spins in the external field.
    fn independent(&self, field: &[f64]) -> Result<GaussianTilt> {
        let m: Vec<f64> = field.iter().map(|v| v.tanh()).collect();
        let d = self.len();
        let mut mean = vec![0.0; d];
        let mut cov = vec![0.0; d * d];
        for (k, &(i, j, l)) in self.sites.iter().enumerate() {
            let c = self.coeff[k];
            let pair = m[j] * m[l];
            mean[k] = c * (m[i] + self.sign(k) * pair);
            cov[k * d + k] = 1.0 + c * c * ((1.0 - m[i] * m[i]) + (1.0 - pair * pair));
        }
        GaussianTilt::new(mean, &cov)
    }

    /// Conditional on the draw: `log E_o e^{-E}`, `⟨f_k⟩` and `Var(f_k)`.
    fn feature_moments(&self, r: &ReducedInstance, h: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let n = r.effective_pair.n();
        let field: Vec<f64> = h.iter().zip(&r.effective_field).map(|(a, b)| a + b).collect();
        let spins = |bits: u64| -> Vec<f64> {
            (0..n).map(|i| if (bits >> i) & 1 == 1 { -1.0 } else { 1.0 }).collect()
        };
        let configs = 1u64 << n;
        let energies: Vec<f64> = (0..configs)
            .map(|bits| {
                let s = spins(bits);
                let mut e: f64 = field.iter().zip(&s).map(|(a, b)| a * b).sum();
                for &(i, j, v) in r.effective_pair.edges() {
                    e += v * s[i] * s[j];
                }
                e
            })
            .collect();
        let top = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let d = self.len();
        let (mut z, mut f, mut triple) = (0.0, vec![0.0; d], vec![0.0; d]);
        for (bits, e) in energies.iter().enumerate() {
            let p = (e - top).exp();
            let s = spins(bits as u64);
            z += p;
            for (k, &(i, j, l)) in self.sites.iter().enumerate() {
                f[k] += p * (s[i] + self.sign(k) * s[j] * s[l]);
                triple[k] += p * s[i] * s[j] * s[l];
            }
        }
        let mean: Vec<f64> = f.iter().map(|v| v / z).collect();
        let var: Vec<f64> = (0..d)
            .map(|k| (2.0 + 2.0 * self.sign(k) * triple[k] / z - mean[k] * mean[k]).max(0.0))
            .collect();
        (top + z.ln() - n as f64 * LN_2, mean, var)
    }

    /// Refits the tilt from a pilot run under `tilt`; `None` if the fit fails.
    #[allow(clippy::too_many_arguments)]
    fn adapt(
        &self,
        t: &ThreeBodyCouplings,
        beta: f64,
        h: &[f64],
        tilt: &TiltMixture,
        pilot_units: u64,
        round: u64,
        cfg: &EstimatorConfig,
    ) -> Result<Option<GaussianTilt>> {
        let d = self.len();
        let dim = 2 * d + d * (d + 1) / 2;
        let rng = CounterRng::new(cfg.seed, Domain::PspinPilot);
        let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
        let mut total = RatioAcc::new(dim);
        ordered_chunk_reduce(
            pilot_units,
            CHUNK_UNITS,
            cfg.jobs,
            |_, range| {
                let mut acc = RatioAcc::new(dim);
                let mut u = vec![0.0; d];
                let mut w = vec![0.0; d];
                let mut scratch = vec![0.0; d];
                let mut unit_f = vec![0.0; dim];
                for unit in range {
                    let mut stream = rng.stream(round << 40 | unit);
                    GaussianTilt::normals(&mut stream, &mut u);
                    let pick = if tilt.needs_pick() { stream.random::<f64>() } else { 0.0 };
                    let per_sign: Vec<(f64, Vec<f64>, Vec<f64>)> = signs
                        .iter()
                        .map(|&sign| {
                            let log_w = tilt.place(sign, &u, pick, &mut w, &mut scratch);
                            let r = reduce_with_draws(t, beta, &self.draws(&w), 1.0);
                            let (log_z, mean, var) = self.feature_moments(&r, h);
                            (log_w + log_z, mean, var)
                        })
                        .collect();
                    let logs: Vec<f64> = per_sign.iter().map(|p| p.0).collect();
                    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let ws: Vec<f64> = logs.iter().map(|v| (v - top).exp()).collect();
                    let w_sum: f64 = ws.iter().sum();
                    unit_f.iter_mut().for_each(|v| *v = 0.0);
                    for (wr, (_, mean, var)) in ws.iter().zip(&per_sign) {
                        let wr = wr / w_sum;
                        let mut idx = 2 * d;
                        for a in 0..d {
                            unit_f[a] += wr * mean[a];
                            unit_f[d + a] += wr * var[a];
                            for b in a..d {
                                unit_f[idx] += wr * mean[a] * mean[b];
                                idx += 1;
                            }
                        }
                    }
                    acc.push(log_mean(&logs), &unit_f);
                }
                acc
            },
            |_, acc| total.merge(&acc),
        )?;
        let sw = total.weights.sum_w;
        let moment = |k: usize| total.wf[k] / sw;
        let mean_f: Vec<f64> = (0..d).map(moment).collect();
        let mut cov = vec![0.0; d * d];
        let mut idx = 2 * d;
        for a in 0..d {
            for b in a..d {
                let mut c = moment(idx) - mean_f[a] * mean_f[b];
                if a == b {
                    c = c.max(0.0) + moment(d + a);
                }
                let v = self.coeff[a] * self.coeff[b] * c + if a == b { 1.0 } else { 0.0 };
                cov[a * d + b] = v;
                cov[b * d + a] = v;
                idx += 1;
            }
        }
        let mean: Vec<f64> = mean_f.iter().zip(&self.coeff).map(|(m, c)| c * m).collect();
        if mean.iter().chain(&cov).any(|v| !v.is_finite()) {
            return Ok(None);
        }
        Ok(GaussianTilt::new(mean, &cov).ok())
    }
}
