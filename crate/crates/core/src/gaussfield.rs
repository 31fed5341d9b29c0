//! The Gaussian field whose covariance is the coupling matrix with its diagonal
//! replaced by the absolute row sums.
//!
//! Two samplers are provided: one through a factor of the covariance, and one
//! that builds the field from independent Gaussians attached to every ordered
//! pair of the sign split. They agree in distribution, which the tests check.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::couplings::{CouplingMatrix, SignSplit};
use crate::error::{Error, Result};
use crate::rng::{CounterRng, Domain};

/// Relative tolerance (times the largest diagonal entry) below which pivots and
/// eigenvalues are treated as zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Allowed `‖L Lᵀ − C‖_max` relative to the largest diagonal entry.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    n: usize,
    c: Vec<f64>,
}

impl CovarianceSpec {
    /// Wraps an arbitrary symmetric matrix, e.g. to factor something that did not
    /// come from [`build_covariance`].
    pub fn from_dense(n: usize, c: Vec<f64>) -> Result<Self> {
        if c.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: c.len(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                if c[i * n + j] != c[j * n + i] {
                    return Err(Error::Validation(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(CovarianceSpec { n, c })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).fold(0.0, f64::max)
    }

    /// Smallest slack `c_ii − Σ_{j≠i} |c_ij|` over all rows.
    pub fn dominance_margin(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let off: f64 = (0..self.n).filter(|&j| j != i).map(|j| self.get(i, j).abs()).sum();
                self.get(i, i) - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.c)
    }
}

/// `c_ii = Σ_k |g_ik|`, `c_ij = g_ij` for `i ≠ j`.
pub fn build_covariance(g: &CouplingMatrix) -> CovarianceSpec {
    let n = g.n();
    let mut c = g.as_slice().to_vec();
    for i in 0..n {
        c[i * n + i] = g.row(i).iter().map(|v| v.abs()).sum();
    }
    CovarianceSpec { n, c }
}

/// `L` with `L Lᵀ ≈ C`, stored row-major as `n × rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFactor {
    n: usize,
    rank: usize,
    l: Vec<f64>,
    method: FactorMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMethod {
    Zero,
    Cholesky,
    ClampedEigen,
}

impl FieldFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn method(&self) -> FactorMethod {
        self.method
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.l[i * self.rank + k]
    }

    /// `out = L z`.
    #[inline]
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.rank);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.l[i * self.rank..(i + 1) * self.rank];
            *o = row.iter().zip(z).map(|(a, b)| a * b).sum();
        }
    }

    /// `‖L Lᵀ − C‖_max`.
    pub fn reconstruction_error(&self, c: &CovarianceSpec) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                let llt: f64 = (0..self.rank).map(|k| self.get(i, k) * self.get(j, k)).sum();
                worst = worst.max((llt - c.get(i, j)).abs());
            }
        }
        worst
    }
}

fn cholesky(c: &CovarianceSpec, pivot_floor: f64) -> Option<Vec<f64>> {
    let n = c.n;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = c.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= pivot_floor {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = c.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

/// Factors the covariance, falling back from Cholesky to a clamped symmetric
/// eigendecomposition when the matrix is (numerically) singular.
pub fn factorize(c: &CovarianceSpec) -> Result<FieldFactor> {
    let n = c.n;
    let d_max = c.max_diagonal();
    if d_max == 0.0 {
        if c.as_slice().iter().any(|&v| v != 0.0) {
            return Err(Error::NotPsd {
                eigenvalue: f64::NAN,
                tolerance: 0.0,
            });
        }
        return Ok(FieldFactor {
            n,
            rank: 0,
            l: Vec::new(),
            method: FactorMethod::Zero,
        });
    }
    let tol = PSD_TOLERANCE * d_max;
    if let Some(l) = cholesky(c, tol) {
        let factor = FieldFactor {
            n,
            rank: n,
            l,
            method: FactorMethod::Cholesky,
        };
        if factor.reconstruction_error(c) <= RECONSTRUCTION_TOLERANCE * d_max {
            return Ok(factor);
        }
    }

    let eig = SymmetricEigen::new(c.to_matrix());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let min = eig.eigenvalues[order[n - 1]];
    if min < -tol {
        return Err(Error::NotPsd {
            eigenvalue: min,
            tolerance: tol,
        });
    }
    let kept: Vec<usize> = order.into_iter().filter(|&k| eig.eigenvalues[k] > tol).collect();
    let rank = kept.len();
    let mut l = vec![0.0; n * rank];
    for (col, &k) in kept.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        // Fix the eigenvector sign so the factor is reproducible.
        let pivot = (0..n)
            .max_by(|&a, &b| eig.eigenvectors[(a, k)].abs().total_cmp(&eig.eigenvectors[(b, k)].abs()))
            .unwrap_or(0);
        let sign = if eig.eigenvectors[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            l[i * rank + col] = sign * s * eig.eigenvectors[(i, k)];
        }
    }
    Ok(FieldFactor {
        n,
        rank,
        l,
        method: FactorMethod::ClampedEigen,
    })
}

/// One realization of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub x: Vec<f64>,
}

/// `X = L z` with `z` standard normal; sample `m` comes from counter stream `m`.
#[derive(Debug, Clone)]
pub struct FactorizedSampler {
    factor: FieldFactor,
    rng: CounterRng,
}

impl FactorizedSampler {
    pub fn new(factor: FieldFactor, seed: u64) -> Self {
        FactorizedSampler {
            factor,
            rng: CounterRng::new(seed, Domain::FactorizedField),
        }
    }

    pub fn factor(&self) -> &FieldFactor {
        &self.factor
    }

    /// Writes sample `index` into `out`, using `z` (length `rank`) as scratch.
    #[inline]
    pub fn sample_into(&self, index: u64, z: &mut [f64], out: &mut [f64]) {
        let mut r = self.rng.stream(index);
        for zk in z.iter_mut() {
            *zk = r.sample(StandardNormal);
        }
        self.factor.apply(z, out);
    }

    pub fn sample(&self, index: u64) -> FieldSample {
        let mut z = vec![0.0; self.factor.rank];
        let mut x = vec![0.0; self.factor.n];
        self.sample_into(index, &mut z, &mut x);
        FieldSample { x }
    }
}

pub fn sample_field_factorized(
    f: &FieldFactor,
    count: u64,
    seed: u64,
) -> impl Iterator<Item = FieldSample> {
    let sampler = FactorizedSampler::new(f.clone(), seed);
    (0..count).map(move |m| sampler.sample(m))
}

#[derive(Debug, Clone, Copy)]
struct SplitEdge {
    i: usize,
    j: usize,
    sqrt_weight: f64,
    positive: bool,
}

/// Builds the field from the sign split directly:
/// `Z_i = X_{i•} + X_{•i} + Y_{i•} − Y_{•i}` with `X_ij = X̃_ij √g⁺_ij`,
/// `Y_ij = Ỹ_ij √g⁻_ij` over ordered pairs, and returns `Z / √2`.
///
/// Only nonzero entries of the split are materialized, so one sample costs
/// O(edges).
#[derive(Debug, Clone)]
pub struct ConstructiveSampler {
    n: usize,
    edges: Vec<SplitEdge>,
    rng: CounterRng,
}

impl ConstructiveSampler {
    pub fn new(split: &SignSplit, seed: u64) -> Self {
        let n = split.n();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let (p, m) = (split.plus(i, j), split.minus(i, j));
                if p > 0.0 {
                    edges.push(SplitEdge { i, j, sqrt_weight: p.sqrt(), positive: true });
                }
                if m > 0.0 {
                    edges.push(SplitEdge { i, j, sqrt_weight: m.sqrt(), positive: false });
                }
            }
        }
        ConstructiveSampler {
            n,
            edges,
            rng: CounterRng::new(seed, Domain::ConstructiveField),
        }
    }

    pub fn sample_into(&self, index: u64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut r = self.rng.stream(index);
        for e in &self.edges {
            // Independent draws for the two orientations (i,j) and (j,i).
            let a: f64 = r.sample(StandardNormal);
            let b: f64 = r.sample(StandardNormal);
            let (xij, xji) = (a * e.sqrt_weight, b * e.sqrt_weight);
            if e.positive {
                // X_ij feeds X_{i•} and X_{•j}; X_ji feeds X_{j•} and X_{•i}.
                out[e.i] += xij + xji;
                out[e.j] += xij + xji;
            } else {
                // Y_ij enters +Y_{i•} and −Y_{•j}; Y_ji enters +Y_{j•} and −Y_{•i}.
                out[e.i] += xij - xji;
                out[e.j] += xji - xij;
            }
        }
        out.iter_mut().for_each(|v| *v *= FRAC_1_SQRT_2);
    }

    pub fn sample(&self, index: u64) -> FieldSample {
        let mut x = vec![0.0; self.n];
        self.sample_into(index, &mut x);
        FieldSample { x }
    }
}

pub fn sample_field_constructive(
    split: &SignSplit,
    count: u64,
    seed: u64,
) -> impl Iterator<Item = FieldSample> {
    let sampler = ConstructiveSampler::new(split, seed);
    (0..count).map(move |m| sampler.sample(m))
}
