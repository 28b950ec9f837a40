use appd_core::coupling::CouplingKind;
use appd_core::mc::{count_crossings, em_step, mc_threshold_flux, Ensemble};
use appd_core::models::{hh_gating_equilibrium, HodgkinHuxley, Model};
use appd_core::particle::{DiffusionSpec, DomainBox, StateVector};
use nalgebra::{Vector2, Vector4};
use proptest::prelude::*;

fn spread_out<const D: usize>(n: usize) -> Vec<StateVector<D>> {
    (0..n).map(|i| StateVector::<D>::from_element(i as f64 * 0.01)).collect()
}

#[test]
fn noiseless_step_is_euler() {
    let a = nalgebra::Matrix2::new(-0.5, 1.0, -1.0, -0.2);
    let field = |x: &Vector2<f64>| a * x;
    let mut e = Ensemble::new(spread_out::<2>(50), 3, CouplingKind::None);
    let before = e.states.clone();
    em_step(&mut e, &field, &DiffusionSpec::zero(), 0.01, &DomainBox::unbounded());
    for (b, x) in before.iter().zip(&e.states) {
        assert_eq!(*x, b + a * b * 0.01);
    }
    assert_eq!(e.time, 0.01);
}

#[test]
fn same_seed_same_paths() {
    let field = |x: &Vector2<f64>| -x;
    let run = |seed| {
        let mut e = Ensemble::new(spread_out::<2>(200), seed, CouplingKind::None);
        for _ in 0..20 {
            em_step(&mut e, &field, &DiffusionSpec::isotropic(0.1), 0.05, &DomainBox::unbounded());
        }
        e.states
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn ornstein_uhlenbeck_variance_is_k() {
    let k = 0.2;
    let field = |x: &Vector2<f64>| -x;
    let mut e = Ensemble::new(vec![Vector2::zeros(); 20_000], 5, CouplingKind::None);
    for _ in 0..1000 {
        em_step(&mut e, &field, &DiffusionSpec::isotropic(k), 0.005, &DomainBox::unbounded());
    }
    let n = e.len() as f64;
    let var = e.states.iter().map(|x| x[0] * x[0]).sum::<f64>() / n;
    // EM is biased by O(dt) for this process: stationary variance k/(1 - dt/2).
    let expected = k / (1.0 - 0.0025);
    let se = expected * (2.0 / n).sqrt();
    assert!((var - expected).abs() < 4.0 * se, "var {var}, expected {expected}");
}

#[test]
fn flux_counts_upward_crossings_only() {
    let before = [Vector2::new(0.4, 0.0), Vector2::new(0.5, 0.0), Vector2::new(0.44, 0.0), Vector2::new(0.46, 0.0)];
    let after = [Vector2::new(0.45, 0.0), Vector2::new(0.3, 0.0), Vector2::new(0.44, 0.0), Vector2::new(0.47, 0.0)];
    assert_eq!(count_crossings(&before, &after, 0.45), 1);
    assert_eq!(mc_threshold_flux(&before, &after, 0.45, 0.01), 1.0 / (4.0 * 0.01));
}

#[test]
fn all_cross_in_one_step() {
    let before = vec![Vector2::new(0.0, 0.0); 10];
    let after = vec![Vector2::new(1.0, 0.0); 10];
    assert!((mc_threshold_flux(&before, &after, 0.45, 0.01) - 100.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gating_stays_in_unit_interval(seed in any::<u64>(), k in 1e-5f64..5e-2) {
        let model = HodgkinHuxley::excitatory(k, 0.0);
        let (m, n, h) = hh_gating_equilibrium(0.0);
        let start = Vector4::new(0.0, m, n, h);
        let mut e = Ensemble::new(vec![start; 64], seed, CouplingKind::None);
        let field = model.field(0.0);
        for _ in 0..200 {
            em_step(&mut e, &field, &model.diffusion(), 0.01, &model.domain());
            for x in &e.states {
                prop_assert!((1..4).all(|i| (0.0..=1.0).contains(&x[i])));
            }
        }
    }

    #[test]
    fn flux_is_degree_zero_in_n(frac in 0usize..=10, copies in 1usize..5) {
        let mut before = Vec::new();
        let mut after = Vec::new();
        for _ in 0..copies {
            for i in 0..10 {
                before.push(Vector2::new(0.0, 0.0));
                after.push(Vector2::new(if i < frac { 1.0 } else { 0.0 }, 0.0));
            }
        }
        let q = mc_threshold_flux(&before, &after, 0.5, 0.01);
        prop_assert!((q - frac as f64 / 10.0 / 0.01).abs() < 1e-9);
    }
}
