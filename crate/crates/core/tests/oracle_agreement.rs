//! Cross-module checks against brute-force enumeration.

use babylon::couplings::{generate_ea, generate_hopfield, Boundary, ModelSpec};
use babylon::decomposition::{decompose, hamiltonian_decomposed, hamiltonian_raw, SpinConfig};
use babylon::estimator::{formula_free_energy, sweep, EstimatorConfig, ProposalKind};
use babylon::oracle::{exact_free_energy, EnumOptions};
use babylon::pspin::{generate_pspin3, load_pspin3, nested_free_energy, write_pspin3};
use babylon::{exact_free_energy_pspin3, generate_sk, load_couplings, write_couplings, CouplingMatrix, ExternalField};
use proptest::prelude::*;

fn within(est: f64, se: f64, exact: f64, k: f64) -> bool {
    (est - exact).abs() <= k * se
}

#[test]
fn hopfield_and_periodic_lattice_agree_with_enumeration() {
    let models = [
        generate_hopfield(8, 3, 2).unwrap(),
        generate_ea(&[3, 3], Boundary::Periodic, 4).unwrap(),
        generate_ea(&[2, 2, 2], Boundary::Free, 5).unwrap(),
    ];
    for (k, g) in models.iter().enumerate() {
        let h = ExternalField::Uniform(0.1);
        let exact = exact_free_energy(g, 0.6, &h, &EnumOptions::default()).unwrap();
        let r = formula_free_energy(g, 0.6, &h, &EstimatorConfig::new(200_000, k as u64)).unwrap();
        assert!(within(r.value, r.std_error, exact, 4.0), "model {k}: {} vs {exact} ± {}", r.value, r.std_error);
    }
}

#[test]
fn sweep_tracks_the_oracle_along_the_grid() {
    let g = generate_sk(8, 12).unwrap();
    let betas = [0.2, 0.6, 1.0, 1.4];
    let h = ExternalField::Uniform(0.0);
    let results = sweep(&g, &betas, &h, &EstimatorConfig::new(100_000, 3)).unwrap();
    for (&b, r) in betas.iter().zip(&results) {
        let exact = exact_free_energy(&g, b, &h, &EnumOptions::default()).unwrap();
        assert!(within(r.value, r.std_error, exact, 4.0), "β={b}: {} vs {exact} ± {}", r.value, r.std_error);
    }
}

#[test]
fn written_couplings_reload_to_the_same_free_energy() {
    let g = ModelSpec::Sk { n: 7, seed: 8 }.build().unwrap();
    let mut buf = Vec::new();
    write_couplings(&g, &mut buf).unwrap();
    let back = load_couplings(buf.as_slice()).unwrap();
    let opts = EnumOptions::default();
    let a = exact_free_energy(&g, 1.0, &0.2.into(), &opts).unwrap();
    let b = exact_free_energy(&back, 1.0, &0.2.into(), &opts).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
}

#[test]
fn pspin_round_trip_and_prior_sampling_agree_with_enumeration() {
    let t = generate_pspin3(6, 0.5, 21).unwrap();
    let mut buf = Vec::new();
    write_pspin3(&t, &mut buf).unwrap();
    let t = load_pspin3(buf.as_slice()).unwrap();
    let exact = exact_free_energy_pspin3(&t, 0.4, &0.1.into(), &EnumOptions::default()).unwrap();
    let cfg = EstimatorConfig::new(100_000, 2).proposal(ProposalKind::Prior);
    let r = nested_free_energy(&t, 0.4, &0.1.into(), &cfg, 24).unwrap();
    assert!(within(r.value, r.std_error, exact, 4.0), "{} vs {exact} ± {}", r.value, r.std_error);
}

fn couplings(n: usize) -> impl Strategy<Value = CouplingMatrix> {
    prop::collection::vec(-2.0f64..2.0, n * (n - 1) / 2).prop_map(move |vals| {
        let mut it = vals.into_iter();
        let edges: Vec<_> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, it.next().unwrap()))
            .collect();
        CouplingMatrix::from_edges(n, edges).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_equals_direct_sum_of_decomposed_weights(g in (2usize..8).prop_flat_map(couplings), beta in 0.0f64..1.5) {
        let n = g.n();
        let d = decompose(&g);
        let direct: f64 = (0..1u64 << n)
            .map(|bits| {
                let s = SpinConfig::from_bits(n, bits);
                let raw = hamiltonian_raw(&g, &s).unwrap();
                let dec = hamiltonian_decomposed(&d, &s).unwrap();
                assert!((raw - dec).abs() <= 1e-10 * (1.0 + g.abs_sum()));
                (beta * dec).exp()
            })
            .sum::<f64>()
            .ln()
            - n as f64 * std::f64::consts::LN_2;
        let exact = exact_free_energy(&g, beta, &0.0.into(), &EnumOptions::default()).unwrap();
        prop_assert!((exact - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }
}
