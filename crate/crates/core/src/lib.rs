//! Exact Gaussian-integral representation of finite-volume Ising free energies.
//!
//! For symmetric couplings `g` with zero diagonal,
//!
//! ```text
//! log E_o exp(β Σ_{i<j} g_ij σ_i σ_j + Σ_i h_i σ_i)
//!     = log E exp(Σ_i log cosh(h_i + √β X_i)) − (β/2) Σ_ij |g_ij|
//! ```
//!
//! where `X` is a centered Gaussian field with `Cov(X_i, X_j) = g_ij` off the
//! diagonal and `Var(X_i) = Σ_k |g_ik|`. The crate provides coupling generators,
//! the square-completion algebra behind the identity, two samplers for `X`, a
//! brute-force enumeration oracle, and Monte Carlo estimators for free energies,
//! magnetizations and correlations, plus the three-body extension.

pub mod couplings;
pub mod decomposition;
pub mod error;
pub mod estimator;
pub mod field;
pub mod gaussfield;
pub mod oracle;
pub mod pspin;
pub mod rng;
pub mod stats;
pub mod verify;

pub use couplings::{
    generate_ea, generate_hopfield, generate_sk, load_couplings, sign_split, write_couplings, Boundary,
    CouplingMatrix, ModelSpec, SignSplit,
};
pub use error::{Error, Result};
pub use estimator::{formula_free_energy, formula_observables, sweep, EstimateResult, EstimatorConfig, ObservableEstimate};
pub use field::ExternalField;
pub use oracle::{exact_free_energy, exact_free_energy_pspin3, exact_observables, EnumOptions, ExactObservables};
pub use pspin::{nested_free_energy, ThreeBodyCouplings};
