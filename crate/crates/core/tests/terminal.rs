use std::sync::Arc;

use dmpc_core::benchmark::{build_benchmark, default_benchmark, BenchmarkBounds, BenchmarkWeights, ThreeMassParams};
use dmpc_core::model::{BoxSet, Discretization, LinearField, PartitionedSystem, SubsystemSpec};
use dmpc_core::terminal::{
    check_decrease_condition, design_terminal, estimate_alpha, linearize_at_origin, sample_level_set, solve_dare,
    validate_terminal, DesignSettings,
};
use dmpc_core::TerminalError;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn weights(sys: &PartitionedSystem) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_diagonal(&DVector::from_column_slice(sys.state_weights())),
        DMatrix::from_diagonal(&DVector::from_column_slice(sys.input_weights())),
    )
}

#[test]
fn benchmark_design_passes_fresh_validation() {
    let sys = default_benchmark();
    let term = design_terminal(&sys, &DesignSettings::default()).unwrap();
    assert!(term.alpha > 0.0);
    assert!(term.in_terminal_set(&sys, &[0.0; 6]));
    assert_eq!(check_decrease_condition(&sys, &term, &[0.0; 6]), 0.0);
    let report = validate_terminal(&sys, &term, 10_000, 12345);
    assert!(report.max_residual <= 1e-8, "{report:?}");
    assert!(report.passed);
}

#[test]
fn linear_decrease_identity() {
    let sys = default_benchmark();
    let (a, b) = linearize_at_origin(&sys).unwrap();
    let (q, r) = weights(&sys);
    let (p, k) = solve_dare(&a, &b, &q, &r).unwrap();
    let ak = &a + &b * &k;
    let m = ak.transpose() * &p * &ak - &p + &q + k.transpose() * &r * &k;
    let m = 0.5 * (&m + m.transpose());
    let top = SymmetricEigen::new(m).eigenvalues.max();
    assert!(top <= 1e-8, "largest eigenvalue {top}");
}

#[test]
fn margin_gives_strict_decrease_near_origin() {
    let sys = default_benchmark();
    let term = design_terminal(&sys, &DesignSettings::default()).unwrap();
    for x in sample_level_set(&term, 500, 99) {
        let small: Vec<f64> = x.iter().map(|v| v * 1e-2).collect();
        if small.iter().any(|v| *v != 0.0) {
            assert!(check_decrease_condition(&sys, &term, &small) < 0.0);
        }
    }
}

#[test]
fn absurd_margin_fails() {
    let sys = default_benchmark();
    let settings = DesignSettings { decrease_margin: 1e6, ..Default::default() };
    assert!(matches!(design_terminal(&sys, &settings), Err(TerminalError::InvalidMargin(_))));
}

#[test]
fn design_is_deterministic_per_seed() {
    let sys = default_benchmark();
    let a = design_terminal(&sys, &DesignSettings::default()).unwrap();
    let b = design_terminal(&sys, &DesignSettings::default()).unwrap();
    assert_eq!(a, b);
}

fn benchmark_scaled_boxes(scale: f64) -> PartitionedSystem {
    let d = BenchmarkBounds::default();
    let bounds = BenchmarkBounds { position: d.position * scale, velocity: d.velocity * scale, input: d.input * scale };
    build_benchmark(&ThreeMassParams::default(), &BenchmarkWeights::default(), &bounds, 0.15, Discretization::Rk4).unwrap()
}

#[test]
fn benchmark_alpha_monotone_in_boxes() {
    let small = benchmark_scaled_boxes(0.5);
    let large = benchmark_scaled_boxes(2.0);
    let (a, b) = linearize_at_origin(&small).unwrap();
    let (q, r) = weights(&small);
    let (p, k) = solve_dare(&a, &b, &q, &r).unwrap();
    let p = p * 1.05;
    let lo = estimate_alpha(&small, &k, &p, 2000, 3, 1e6).unwrap();
    let hi = estimate_alpha(&large, &k, &p, 2000, 3, 1e6).unwrap();
    assert!(hi >= lo, "{hi} < {lo}");
}

fn linear_2d(state_bound: f64, input_bound: f64) -> PartitionedSystem {
    let field = LinearField {
        a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -0.2]),
        b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    };
    let sub = SubsystemSpec {
        state_dim: 2,
        input_dim: 1,
        state_box: BoxSet::symmetric(&[state_bound, state_bound]).unwrap(),
        input_box: BoxSet::symmetric(&[input_bound]).unwrap(),
        state_weights: vec![1.0, 0.5],
        input_weights: vec![0.2],
    };
    PartitionedSystem::new(vec![sub], Arc::new(field), 0.1, Discretization::Euler).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn alpha_never_shrinks_with_larger_boxes(
        xb in 0.2f64..3.0,
        ub in 0.2f64..3.0,
        grow in 1.0f64..4.0,
        seed in 0u64..1000,
    ) {
        let small = linear_2d(xb, ub);
        let large = linear_2d(xb * grow, ub * grow);
        let (a, b) = linearize_at_origin(&small).unwrap();
        let (q, r) = weights(&small);
        let (p, k) = solve_dare(&a, &b, &q, &r).unwrap();
        let lo = estimate_alpha(&small, &k, &p, 1000, seed, 1e6).unwrap();
        let hi = estimate_alpha(&large, &k, &p, 1000, seed, 1e6).unwrap();
        prop_assert!(hi >= lo);
    }
}
