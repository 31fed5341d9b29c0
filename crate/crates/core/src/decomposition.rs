//! Square completion of the two-body Hamiltonian.
//!
//! With `g = g⁺ − g⁻` and Ising spins,
//! `Σ_ij g_ij σ_i σ_j = ½ Σ_ij g⁺_ij (σ_i + σ_j)² + ½ Σ_ij g⁻_ij (σ_i − σ_j)² + G`
//! where `G = −Σ_ij |g_ij|`. Every square carries a nonnegative weight, which is
//! what makes the Gaussian linearization possible.

use crate::couplings::{sign_split, CouplingMatrix, SignSplit};
use crate::error::{Error, Result};
use crate::stats::ordered_sum;

/// Above this size sums over the `n × n` array switch to compensated summation.
const COMPENSATION_THRESHOLD: usize = 1024;

/// A configuration in `{−1, +1}^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    spins: Vec<i8>,
}

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(format!("spin value {bad} is not ±1")));
        }
        Ok(SpinConfig { spins })
    }

    pub fn all_up(n: usize) -> Self {
        SpinConfig { spins: vec![1; n] }
    }

    /// Bit `i` of `bits` set means `σ_i = −1`.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        debug_assert!(n <= 64);
        let spins = (0..n)
            .map(|i| if (bits >> i) & 1 == 1 { -1 } else { 1 })
            .collect();
        SpinConfig { spins }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.spins[i] as f64
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.spins
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedHamiltonian {
    pub split: SignSplit,
    pub g_const: f64,
    pub n: usize,
}

pub fn decompose(g: &CouplingMatrix) -> DecomposedHamiltonian {
    let split = sign_split(g);
    let g_const = constant_g(&split);
    DecomposedHamiltonian {
        n: g.n(),
        split,
        g_const,
    }
}

fn check_len(n: usize, sigma: &SpinConfig) -> Result<()> {
    if sigma.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.len(),
        });
    }
    Ok(())
}

/// `H(σ) = Σ_{i<j} g_ij σ_i σ_j`.
pub fn hamiltonian_raw(g: &CouplingMatrix, sigma: &SpinConfig) -> Result<f64> {
    check_len(g.n(), sigma)?;
    Ok(g.edges()
        .iter()
        .map(|&(i, j, v)| v * sigma.get(i) * sigma.get(j))
        .sum())
}

/// `H(σ)` reassembled from the completed squares and the constant `G`.
pub fn hamiltonian_decomposed(d: &DecomposedHamiltonian, sigma: &SpinConfig) -> Result<f64> {
    check_len(d.n, sigma)?;
    let n = d.n;
    let compensated = n > COMPENSATION_THRESHOLD;
    let terms = (0..n).flat_map(|i| {
        (0..n).map(move |j| {
            let (si, sj) = (sigma.get(i), sigma.get(j));
            let sum = si + sj;
            let diff = si - sj;
            d.split.plus(i, j) * sum * sum + d.split.minus(i, j) * diff * diff
        })
    });
    let squares = ordered_sum(terms, compensated);
    Ok(0.5 * (0.5 * squares + d.g_const))
}

/// `((σ_i + σ_j)²/2 − 1, (σ_i − σ_j)²/2 − 1)`, i.e. `(σ_i σ_j, −σ_i σ_j)`.
pub fn babylonian_pair(si: i8, sj: i8) -> Result<(f64, f64)> {
    SpinConfig::new(vec![si, sj])?;
    let (a, b) = (si as f64, sj as f64);
    Ok((0.5 * (a + b).powi(2) - 1.0, 0.5 * (a - b).powi(2) - 1.0))
}

/// `G = −Σ_ij (g⁺_ij + g⁻_ij)` over the full double sum.
pub fn constant_g(split: &SignSplit) -> f64 {
    let compensated = split.n() > COMPENSATION_THRESHOLD;
    let total = ordered_sum(
        split
            .plus_entries()
            .iter()
            .zip(split.minus_entries())
            .map(|(p, m)| p + m),
        compensated,
    );
    -total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::generate_sk;
    use proptest::prelude::*;

    fn pair(v: f64) -> CouplingMatrix {
        CouplingMatrix::from_edges(2, [(0, 1, v)]).unwrap()
    }

    #[test]
    fn raw_hamiltonian_two_spins() {
        let g = pair(0.5);
        let up = SpinConfig::new(vec![1, 1]).unwrap();
        let mixed = SpinConfig::new(vec![1, -1]).unwrap();
        assert_eq!(hamiltonian_raw(&g, &up).unwrap(), 0.5);
        assert_eq!(hamiltonian_raw(&g, &mixed).unwrap(), -0.5);
        let zero = CouplingMatrix::zeros(3).unwrap();
        for bits in 0..8 {
            assert_eq!(hamiltonian_raw(&zero, &SpinConfig::from_bits(3, bits)).unwrap(), 0.0);
        }
    }

    #[test]
    fn decomposed_matches_raw_on_small_cases() {
        let g = pair(0.5);
        let d = decompose(&g);
        let up = SpinConfig::all_up(2);
        assert_eq!(hamiltonian_decomposed(&d, &up).unwrap(), 0.5);

        let zero = decompose(&CouplingMatrix::zeros(4).unwrap());
        for bits in 0..16 {
            assert_eq!(hamiltonian_decomposed(&zero, &SpinConfig::from_bits(4, bits)).unwrap(), 0.0);
        }

        let g = generate_sk(3, 17).unwrap();
        let d = decompose(&g);
        for bits in 0..8 {
            let s = SpinConfig::from_bits(3, bits);
            let diff = hamiltonian_decomposed(&d, &s).unwrap() - hamiltonian_raw(&g, &s).unwrap();
            assert!(diff.abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = pair(0.5);
        let s = SpinConfig::all_up(3);
        assert!(matches!(
            hamiltonian_raw(&g, &s),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(hamiltonian_decomposed(&decompose(&g), &s).is_err());
    }

    #[test]
    fn babylonian_pair_values() {
        assert_eq!(babylonian_pair(1, 1).unwrap(), (1.0, -1.0));
        assert_eq!(babylonian_pair(1, -1).unwrap(), (-1.0, 1.0));
        assert_eq!(babylonian_pair(-1, 1).unwrap(), (-1.0, 1.0));
        assert_eq!(babylonian_pair(-1, -1).unwrap(), (1.0, -1.0));
        assert!(babylonian_pair(0, 1).is_err());
    }

    #[test]
    fn constant_counts_each_pair_twice() {
        assert_eq!(constant_g(&sign_split(&pair(0.5))), -1.0);
        assert_eq!(constant_g(&sign_split(&pair(-0.5))), -1.0);
        assert_eq!(constant_g(&sign_split(&CouplingMatrix::zeros(5).unwrap())), 0.0);
    }

    #[test]
    fn spin_config_rejects_non_ising_values() {
        assert!(SpinConfig::new(vec![1, 0, -1]).is_err());
        assert_eq!(SpinConfig::from_bits(3, 0b101).as_slice(), &[-1, 1, -1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn identity_holds_on_every_configuration(n in 1usize..=10, seed in any::<u64>()) {
            let g = generate_sk(n, seed).unwrap();
            let d = decompose(&g);
            let tol = 1e-10 * (1.0 + g.abs_sum());
            for bits in 0..(1u64 << n) {
                let s = SpinConfig::from_bits(n, bits);
                let raw = hamiltonian_raw(&g, &s).unwrap();
                let dec = hamiltonian_decomposed(&d, &s).unwrap();
                prop_assert!((raw - dec).abs() <= tol);
            }
        }

        #[test]
        fn squares_carry_nonnegative_weight(n in 2usize..=8, seed in any::<u64>(), bits in any::<u64>()) {
            let g = generate_sk(n, seed).unwrap();
            let split = sign_split(&g);
            let s = SpinConfig::from_bits(n, bits);
            for i in 0..n {
                for j in 0..n {
                    let plus = split.plus(i, j) * (s.get(i) + s.get(j)).powi(2);
                    let minus = split.minus(i, j) * (s.get(i) - s.get(j)).powi(2);
                    prop_assert!(plus >= 0.0 && minus >= 0.0);
                }
            }
        }

        #[test]
        fn sign_split_reconstructs_exactly(n in 1usize..=12, seed in any::<u64>()) {
            let g = generate_sk(n, seed).unwrap();
            let split = sign_split(&g);
            for i in 0..n {
                for j in 0..n {
                    let (p, m) = (split.plus(i, j), split.minus(i, j));
                    prop_assert!(p >= 0.0 && m >= 0.0);
                    prop_assert!(p == 0.0 || m == 0.0);
                    prop_assert_eq!(p - m, g.get(i, j));
                    prop_assert_eq!(p + m, g.get(i, j).abs());
                }
            }
        }
    }
}
