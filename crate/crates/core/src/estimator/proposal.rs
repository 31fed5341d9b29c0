//! Gaussian importance-sampling proposals for the field.
//!
//! Write `X = L z` with `z ~ N(0, I_r)`. The integrand `φ(z) e^{S(Lz)}`, once
//! normalized, is the mixture `Σ_σ π(σ) N(√β Lᵀσ, I)` where `π` is the Gibbs
//! measure of the spins. Its mean is `√β Lᵀ⟨σ⟩` and its covariance
//! `I + β Lᵀ Cov(σ) L`. A proposal `N(μ, A)` with `A = R Rᵀ` built from (estimates
//! of) these spin moments keeps the log-weight
//! `log φ(z) − log q(z) = −|z|²/2 + |u|²/2 + log det R` bounded above by a
//! quadratic that `S` cannot outgrow, so the weights `φ e^S / q` stay bounded.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussfield::FieldFactor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    /// Sample the field from its own law, `N(0, C)`.
    Prior,
    /// Moments of independent spins in the external field: `⟨σ_i⟩ = tanh h_i`.
    Independent,
    /// Spin moments estimated by a pilot run under the independent proposal.
    Adaptive,
}

/// `N(μ, A)` as a proposal for a standard normal vector, `A = R Rᵀ`.
#[derive(Debug, Clone)]
pub struct GaussianTilt {
    mean: Vec<f64>,
    /// Row-major lower-triangular Cholesky factor; `None` for the identity.
    chol: Option<Vec<f64>>,
    log_det_chol: f64,
}

impl GaussianTilt {
    pub fn identity(dim: usize) -> Self {
        GaussianTilt {
            mean: vec![0.0; dim],
            chol: None,
            log_det_chol: 0.0,
        }
    }

    /// Fails unless `cov` (row-major, symmetric) is positive definite.
    pub fn new(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let r = mean.len();
        if cov.len() != r * r {
            return Err(Error::DimensionMismatch {
                expected: r * r,
                got: cov.len(),
            });
        }
        let chol = cholesky(cov, r).ok_or_else(|| {
            Error::Numerical("proposal covariance is not positive definite".into())
        })?;
        let log_det_chol = (0..r).map(|a| chol[a * r + a].ln()).sum();
        Ok(GaussianTilt {
            mean,
            chol: Some(chol),
            log_det_chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sets `z = μ + sign·R u`; returns the log importance weight
    /// `log φ(z) − log q(z)`. `sign = −1` reflects the draw through `μ`.
    #[inline]
    pub fn place(&self, sign: f64, u: &[f64], z: &mut [f64]) -> f64 {
        let r = self.dim();
        match &self.chol {
            None => {
                for (zk, uk) in z.iter_mut().zip(u) {
                    *zk = sign * uk;
                }
                0.0
            }
            Some(chol) => {
                let mut zz = 0.0;
                let mut uu = 0.0;
                for a in 0..r {
                    let row = &chol[a * r..a * r + a + 1];
                    let ru: f64 = row.iter().zip(&u[..=a]).map(|(c, v)| c * v).sum();
                    z[a] = self.mean[a] + sign * ru;
                    zz += z[a] * z[a];
                    uu += u[a] * u[a];
                }
                0.5 * (uu - zz) + self.log_det_chol
            }
        }
    }

    /// `log q(z)` up to the `(d/2) log 2π` shared with the standard normal.
    pub fn log_density(&self, z: &[f64], scratch: &mut [f64]) -> f64 {
        let r = self.dim();
        match &self.chol {
            None => -0.5 * z.iter().map(|v| v * v).sum::<f64>(),
            Some(chol) => {
                // Forward substitution R y = z − μ.
                let mut yy = 0.0;
                for a in 0..r {
                    let row = &chol[a * r..a * r + a];
                    let dot: f64 = row.iter().zip(&scratch[..a]).map(|(c, y)| c * y).sum();
                    scratch[a] = (z[a] - self.mean[a] - dot) / chol[a * r + a];
                    yy += scratch[a] * scratch[a];
                }
                -0.5 * yy - self.log_det_chol
            }
        }
    }

    /// Fills `u` with standard normals from `rng`.
    #[inline]
    pub fn normals(rng: &mut ChaCha8Rng, u: &mut [f64]) {
        for v in u.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
}

/// A finite mixture of tilts. A defensive component keeps the weights bounded
/// by those of that component alone, should the main one miss part of the
/// target.
#[derive(Debug, Clone)]
pub struct TiltMixture {
    parts: Vec<GaussianTilt>,
    log_shares: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TiltMixture {
    pub fn single(tilt: GaussianTilt) -> Self {
        TiltMixture {
            parts: vec![tilt],
            log_shares: vec![0.0],
            cumulative: vec![1.0],
        }
    }

    /// `(1 − share) · main + share · backup`.
    pub fn defensive(main: GaussianTilt, backup: GaussianTilt, share: f64) -> Self {
        assert!(share > 0.0 && share < 1.0 && main.dim() == backup.dim());
        TiltMixture {
            parts: vec![main, backup],
            log_shares: vec![(1.0 - share).ln(), share.ln()],
            cumulative: vec![1.0 - share, 1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    /// Whether [`place`](Self::place) uses its uniform `pick`.
    pub fn needs_pick(&self) -> bool {
        self.parts.len() > 1
    }

    /// Draws `z` from the component selected by `pick ∈ [0, 1)` with the
    /// standard draw `u` (reflected when `sign = −1`); returns the log weight
    /// `log φ(z) − log q(z)`.
    #[inline]
    pub fn place(&self, sign: f64, u: &[f64], pick: f64, z: &mut [f64], scratch: &mut [f64]) -> f64 {
        if self.parts.len() == 1 {
            return self.parts[0].place(sign, u, z);
        }
        let chosen = self.cumulative.iter().position(|&c| pick < c).unwrap_or(self.parts.len() - 1);
        let log_ratio = self.parts[chosen].place(sign, u, z);
        let zz: f64 = z.iter().map(|v| v * v).sum();
        // log q_chosen(z) = log φ(z) − log_ratio.
        let mut terms = Vec::with_capacity(self.parts.len());
        for (c, part) in self.parts.iter().enumerate() {
            let log_q = if c == chosen {
                -0.5 * zz - log_ratio
            } else {
                part.log_density(z, scratch)
            };
            terms.push(self.log_shares[c] + log_q);
        }
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_q = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
        -0.5 * zz - log_q
    }
}

/// Field proposal: a tilt of the standard normals `z` behind `X = L z`.
#[derive(Debug, Clone)]
pub struct Proposal {
    kind: ProposalKind,
    factor: FieldFactor,
    tilt: TiltMixture,
}

impl Proposal {
    pub fn prior(factor: FieldFactor) -> Self {
        Proposal {
            kind: ProposalKind::Prior,
            tilt: TiltMixture::single(GaussianTilt::identity(factor.rank())),
            factor,
        }
    }

    /// Proposal matched to spin mean `m` and spin covariance `k` (row-major `n × n`).
    pub fn from_spin_moments(
        kind: ProposalKind,
        factor: FieldFactor,
        beta: f64,
        m: &[f64],
        k: &[f64],
    ) -> Result<Self> {
        let n = factor.n();
        let r = factor.rank();
        if m.len() != n || k.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.len(),
            });
        }
        let root = beta.sqrt();
        let mean: Vec<f64> = (0..r)
            .map(|a| root * (0..n).map(|i| factor.get(i, a) * m[i]).sum::<f64>())
            .collect();
        // K L, n × r
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || k[i * n + j] == 0.0));
        let mut kl = vec![0.0; n * r];
        for i in 0..n {
            for a in 0..r {
                kl[i * r + a] = if diagonal {
                    k[i * n + i] * factor.get(i, a)
                } else {
                    (0..n).map(|j| k[i * n + j] * factor.get(j, a)).sum()
                };
            }
        }
        let mut cov = vec![0.0; r * r];
        for a in 0..r {
            for b in 0..=a {
                let v: f64 = (0..n).map(|i| factor.get(i, a) * kl[i * r + b]).sum();
                let v = beta * v + if a == b { 1.0 } else { 0.0 };
                cov[a * r + b] = v;
                cov[b * r + a] = v;
            }
        }
        let tilt = TiltMixture::single(GaussianTilt::new(mean, &cov)?);
        Ok(Proposal { kind, factor, tilt })
    }

    /// Independent spins in the field `h`: `m = tanh h`, `K = diag(1 − m²)`.
    pub fn independent(factor: FieldFactor, beta: f64, field: &[f64]) -> Result<Self> {
        let n = factor.n();
        let m: Vec<f64> = field.iter().map(|h| h.tanh()).collect();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0 - m[i] * m[i];
        }
        Self::from_spin_moments(ProposalKind::Independent, factor, beta, &m, &k)
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.factor.n()
    }

    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    pub fn factor(&self) -> &FieldFactor {
        &self.factor
    }

    /// Mixes in `backup` with weight `share`; both must be single tilts.
    pub fn with_backup(self, backup: &Proposal, share: f64) -> Self {
        let main = self.tilt.parts.into_iter().next().expect("one component");
        let spare = backup.tilt.parts[0].clone();
        Proposal {
            kind: self.kind,
            factor: self.factor,
            tilt: TiltMixture::defensive(main, spare, share),
        }
    }

    pub fn needs_pick(&self) -> bool {
        self.tilt.needs_pick()
    }

    /// Sets `z` as in [`TiltMixture::place`] and `x = L z`; returns the log
    /// importance weight. For the prior the two fields of a pair are exact
    /// negatives.
    #[inline]
    pub fn place(&self, sign: f64, u: &[f64], pick: f64, z: &mut [f64], x: &mut [f64], scratch: &mut [f64]) -> f64 {
        let log_w = self.tilt.place(sign, u, pick, z, scratch);
        self.factor.apply(z, x);
        log_w
    }
}

fn cholesky(a: &[f64], r: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; r * r];
    for j in 0..r {
        let mut d = a[j * r + j];
        for k in 0..j {
            d -= l[j * r + k] * l[j * r + k];
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        l[j * r + j] = d;
        for i in (j + 1)..r {
            let mut s = a[i * r + j];
            for k in 0..j {
                s -= l[i * r + k] * l[j * r + k];
            }
            l[i * r + j] = s / d;
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::generate_sk;
    use crate::gaussfield::{build_covariance, factorize};
    use crate::rng::{CounterRng, Domain};

    #[test]
    fn prior_has_zero_log_weight_and_exact_reflection() {
        let f = factorize(&build_covariance(&generate_sk(5, 1).unwrap())).unwrap();
        let p = Proposal::prior(f);
        let mut rng = CounterRng::new(1, Domain::FactorizedField).stream(0);
        let r = p.rank();
        let (mut u, mut z, mut x) = (vec![0.0; r], vec![0.0; r], vec![0.0; 5]);
        GaussianTilt::normals(&mut rng, &mut u);
        assert_eq!(p.place(1.0, &u, 0.0, &mut z, &mut x, &mut [0.0; 8]), 0.0);
        let plus = x.clone();
        assert_eq!(p.place(-1.0, &u, 0.0, &mut z, &mut x, &mut [0.0; 8]), 0.0);
        assert!(plus.iter().zip(&x).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn zero_temperature_tilt_is_the_prior() {
        let f = factorize(&build_covariance(&generate_sk(4, 2).unwrap())).unwrap();
        let p = Proposal::independent(f, 0.0, &[0.3; 4]).unwrap();
        let u = [0.5, -1.0, 2.0, 0.1];
        let (mut z, mut x) = (vec![0.0; 4], vec![0.0; 4]);
        assert_eq!(p.place(1.0, &u, 0.0, &mut z, &mut x, &mut [0.0; 8]), 0.0);
        assert_eq!(z, u.to_vec());
    }

    #[test]
    fn log_weight_is_density_ratio() {
        // One spin pair: r = 1 after clamping, so everything is scalar.
        let g = crate::couplings::CouplingMatrix::from_edges(2, [(0, 1, 0.5)]).unwrap();
        let f = factorize(&build_covariance(&g)).unwrap();
        assert_eq!(f.rank(), 1);
        let beta = 0.8;
        let p = Proposal::independent(f.clone(), beta, &[0.2, -0.1]).unwrap();
        let (mut z, mut x) = ([0.0], [0.0; 2]);
        let u = [0.7];
        let lw = p.place(1.0, &u, 0.0, &mut z, &mut x, &mut [0.0; 8]);
        // q = N(μ, s²) with μ = √β Σ_i L_i tanh h_i and s² = 1 + β Σ_i L_i² (1 − tanh² h_i).
        let l = [f.get(0, 0), f.get(1, 0)];
        let m = [0.2f64.tanh(), (-0.1f64).tanh()];
        let mu = beta.sqrt() * (l[0] * m[0] + l[1] * m[1]);
        let s2 = 1.0 + beta * (l[0] * l[0] * (1.0 - m[0] * m[0]) + l[1] * l[1] * (1.0 - m[1] * m[1]));
        let zv = mu + s2.sqrt() * u[0];
        assert!((z[0] - zv).abs() < 1e-14);
        let log_phi = -0.5 * zv * zv;
        let log_q = -0.5 * (zv - mu).powi(2) / s2 - 0.5 * s2.ln();
        assert!((lw - (log_phi - log_q)).abs() < 1e-13);
    }

    #[test]
    fn mixture_weight_uses_the_mixture_density() {
        let a = GaussianTilt::new(vec![0.5, -0.2], &[2.0, 0.3, 0.3, 1.5]).unwrap();
        let b = GaussianTilt::identity(2);
        let m = TiltMixture::defensive(a.clone(), b.clone(), 0.25);
        let u = [0.3, -1.1];
        let mut z = [0.0; 2];
        let mut scratch = [0.0; 2];
        for (pick, sign) in [(0.1, 1.0), (0.9, 1.0), (0.5, -1.0)] {
            let lw = m.place(sign, &u, pick, &mut z, &mut scratch);
            let qa = a.log_density(&z, &mut scratch);
            let qb = b.log_density(&z, &mut scratch);
            let q = (0.75 * qa.exp() + 0.25 * qb.exp()).ln();
            let phi = -0.5 * (z[0] * z[0] + z[1] * z[1]);
            assert!((lw - (phi - q)).abs() < 1e-13);
        }
        // The chosen component's own density agrees with its log weight.
        let lw = a.place(1.0, &u, &mut z);
        let phi = -0.5 * (z[0] * z[0] + z[1] * z[1]);
        assert!((phi - a.log_density(&z, &mut scratch) - lw).abs() < 1e-13);
    }
}
