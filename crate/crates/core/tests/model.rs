use std::sync::Arc;

use dmpc_core::benchmark::{default_benchmark, three_mass_field, ThreeMassParams};
use dmpc_core::model::{BoxSet, Discretization, FnField, PartitionedSystem, SubsystemSpec, Trajectory};
use dmpc_core::terminal::{linearize_at_origin, TerminalIngredients};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn field_no_input(p: &ThreeMassParams, x: &[f64]) -> [f64; 6] {
    three_mass_field(p, x, &[0.0; 3])
}

/// Explicit Euler with `n` steps over `t`.
fn euler(p: &ThreeMassParams, x0: &[f64], t: f64, n: usize) -> Vec<f64> {
    let h = t / n as f64;
    let mut x = x0.to_vec();
    for _ in 0..n {
        let d = field_no_input(p, &x);
        for i in 0..6 {
            x[i] += h * d[i];
        }
    }
    x
}

/// Fine-step Euler with one Richardson extrapolation step (`2 E(h/2) − E(h)`).
fn fine_oracle(p: &ThreeMassParams, x0: &[f64], t: f64, n: usize) -> Vec<f64> {
    let coarse = euler(p, x0, t, n);
    let fine = euler(p, x0, t, 2 * n);
    fine.iter().zip(&coarse).map(|(f, c)| 2.0 * f - c).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rk4_state(sys: &PartitionedSystem, x0: &[f64], steps: usize) -> Vec<f64> {
    let mut x = DVector::from_column_slice(x0);
    for _ in 0..steps {
        x = sys.discretize_step(&x, &DVector::zeros(3)).unwrap();
    }
    x.as_slice().to_vec()
}

#[test]
fn rk4_step_matches_fine_euler() {
    let sys = default_benchmark();
    let x0 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let rk4 = rk4_state(&sys, &x0, 1);
    let oracle = fine_oracle(&ThreeMassParams::default(), &x0, 0.15, 1000);
    assert!(max_diff(&rk4, &oracle) <= 1e-6, "difference {}", max_diff(&rk4, &oracle));
}

#[test]
fn plain_euler_oracle_is_first_order() {
    // Truncation error of the unextrapolated oracle at dt/1000 is a few 1e-6.
    let p = ThreeMassParams::default();
    let x0 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let reference = fine_oracle(&p, &x0, 0.15, 100_000);
    let e1 = max_diff(&euler(&p, &x0, 0.15, 1000), &reference);
    let e2 = max_diff(&euler(&p, &x0, 0.15, 2000), &reference);
    assert!(e1 < 1e-5);
    assert!((e1 / e2 - 2.0).abs() < 0.05);
}

#[test]
fn rk4_is_fourth_order() {
    let x0 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let p = ThreeMassParams::default();
    let oracle = fine_oracle(&p, &x0, 0.15, 100_000);
    let full = rk4_state(&default_benchmark(), &x0, 1);
    let halved = rk4_state(&default_benchmark().with_sampling(0.075, Discretization::Rk4), &x0, 2);
    let ratio = max_diff(&full, &oracle) / max_diff(&halved, &oracle);
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn linearization_matches_rk4_of_analytic_jacobian() {
    let p = ThreeMassParams::default();
    let [m1, m2, m3] = p.masses;
    let k0 = p.k0;
    let (kc, hd) = (p.kc, p.hd);
    #[rustfmt::skip]
    let jc = DMatrix::from_row_slice(6, 6, &[
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        -(k0 + kc) / m1, -hd / m1, kc / m1, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
        kc / m2, 0.0, -(k0 + 2.0 * kc) / m2, -hd / m2, kc / m2, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, kc / m3, 0.0, -(k0 + kc) / m3, -hd / m3,
    ]);
    let mut bc = DMatrix::zeros(6, 3);
    bc[(1, 0)] = 1.0 / m1;
    bc[(3, 1)] = 1.0 / m2;
    bc[(5, 2)] = 1.0 / m3;
    // RK4 applied to a linear field: truncated exponential series.
    let h = 0.15;
    let hj = &jc * h;
    let i = DMatrix::<f64>::identity(6, 6);
    let hj2 = &hj * &hj;
    let hj3 = &hj2 * &hj;
    let hj4 = &hj3 * &hj;
    let ad = &i + &hj + &hj2 / 2.0 + &hj3 / 6.0 + &hj4 / 24.0;
    let bd = (&i + &hj / 2.0 + &hj2 / 6.0 + &hj3 / 24.0) * &bc * h;
    let (a, b) = linearize_at_origin(&default_benchmark()).unwrap();
    assert!((a - ad).amax() <= 1e-6);
    assert!((b - bd).amax() <= 1e-6);
}

fn frozen_identity_system() -> PartitionedSystem {
    let sub = SubsystemSpec {
        state_dim: 2,
        input_dim: 1,
        state_box: BoxSet::symmetric(&[10.0, 10.0]).unwrap(),
        input_box: BoxSet::symmetric(&[10.0]).unwrap(),
        state_weights: vec![1.0, 1.0],
        input_weights: vec![1e-300],
    };
    let field = FnField::new(2, 1, |_x: &[f64], _u: &[f64], d: &mut [f64]| d.fill(0.0));
    PartitionedSystem::new(vec![sub], Arc::new(field), 0.15, Discretization::Rk4).unwrap()
}

#[test]
fn objective_hand_evaluation() {
    let sys = frozen_identity_system();
    let term = TerminalIngredients::new(DMatrix::zeros(1, 2), DMatrix::identity(2, 2), 1.0).unwrap();
    let traj = sys
        .rollout(&DVector::from_vec(vec![1.0, 0.0]), &[DVector::zeros(1)])
        .unwrap();
    assert_eq!(sys.objective(&term, &traj), 2.0);
}

#[test]
fn objective_with_benchmark_weights_matches_summation() {
    let sys = default_benchmark();
    let inputs: Vec<DVector<f64>> = (0..12)
        .map(|t| DVector::from_fn(3, |i, _| 1.2 * ((t * 3 + i) as f64 * 0.7).sin()))
        .collect();
    let traj = sys.rollout(&DVector::from_vec(vec![0.6, 0.1, -0.6, 0.0, 0.45, -0.2]), &inputs).unwrap();
    let term = TerminalIngredients::new(DMatrix::zeros(3, 6), DMatrix::identity(6, 6) * 3.0, 1.0).unwrap();
    let q = [2.0, 0.05, 2.0, 0.05, 2.0, 0.05];
    let r = [0.1, 1.0, 0.1];
    let mut expected = 0.0;
    for t in 0..12 {
        for j in 0..6 {
            expected += q[j] * traj.states[t][j] * traj.states[t][j];
        }
        for j in 0..3 {
            expected += r[j] * traj.inputs[t][j] * traj.inputs[t][j];
        }
    }
    expected += 3.0 * traj.states[12].norm_squared();
    let got = sys.objective(&term, &traj);
    assert!((got - expected).abs() <= 1e-12 * expected.abs());
}

#[test]
fn terminal_violation_is_level_excess() {
    let sys = default_benchmark();
    let term = TerminalIngredients::new(DMatrix::zeros(3, 6), DMatrix::identity(6, 6), 0.2).unwrap();
    let x = DVector::from_vec(vec![0.5_f64.sqrt(), 0.0, 0.0, 0.0, 0.0, 0.0]);
    let traj = Trajectory { states: vec![x], inputs: vec![] };
    let report = sys.check_feasible(&term, &traj, 1e-6);
    assert!((report.terminal_violation - 0.3).abs() < 1e-12);
    assert!(!report.feasible);
}

fn input_seq(len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.5f64..1.5, 3), len)
}

fn to_dvecs(v: &[Vec<f64>]) -> Vec<DVector<f64>> {
    v.iter().map(|u| DVector::from_column_slice(u)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollout_is_deterministic(
        x0 in prop::collection::vec(-1.0f64..1.0, 6),
        inputs in input_seq(10),
    ) {
        let sys = default_benchmark();
        let x0 = DVector::from_vec(x0);
        let a = sys.rollout(&x0, &to_dvecs(&inputs)).unwrap();
        let b = sys.rollout(&x0, &to_dvecs(&inputs)).unwrap();
        for (p, q) in a.states.iter().zip(&b.states) {
            prop_assert!(p.iter().zip(q.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn objective_is_additive_over_subsystems(
        x0 in prop::collection::vec(-1.0f64..1.0, 6),
        inputs in input_seq(8),
        pd in prop::collection::vec(0.5f64..3.0, 6),
    ) {
        let sys = default_benchmark();
        let traj = sys.rollout(&DVector::from_vec(x0), &to_dvecs(&inputs)).unwrap();
        let term = TerminalIngredients::new(
            DMatrix::zeros(3, 6),
            DMatrix::from_diagonal(&DVector::from_vec(pd.clone())),
            1.0,
        ).unwrap();
        let mut by_agent = 0.0;
        for i in 0..3 {
            for t in 0..traj.horizon() {
                by_agent += sys.subsystem_stage_cost(i, traj.states[t].as_slice(), traj.inputs[t].as_slice());
            }
        }
        let xn = traj.terminal_state();
        by_agent += (0..6).map(|j| pd[j] * xn[j] * xn[j]).sum::<f64>();
        let total = sys.objective(&term, &traj);
        prop_assert!((total - by_agent).abs() <= 1e-12 * (1.0 + total.abs()));
    }

    #[test]
    fn input_violation_grows_with_scaling(
        inputs in input_seq(5),
        factor in 1.01f64..3.0,
    ) {
        let sys = default_benchmark();
        let term = TerminalIngredients::new(DMatrix::zeros(3, 6), DMatrix::identity(6, 6), 1e6).unwrap();
        // push one component onto the bound so any scaling > 1 leaves the box
        let mut inputs = inputs;
        inputs[2][1] = 1.5;
        let x0 = DVector::zeros(6);
        let base = sys.rollout(&x0, &to_dvecs(&inputs)).unwrap();
        let scaled: Vec<Vec<f64>> = inputs.iter().map(|u| u.iter().map(|v| v * factor).collect()).collect();
        let bigger = Trajectory { states: base.states.clone(), inputs: to_dvecs(&scaled) };
        let before = sys.check_feasible(&term, &base, 1e-6).max_input_violation;
        let after = sys.check_feasible(&term, &bigger, 1e-6).max_input_violation;
        prop_assert!(after > before);
    }
}
