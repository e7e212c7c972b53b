use dmpc_core::benchmark::{default_benchmark, DEFAULT_INITIAL_STATE};
use dmpc_core::model::BoxSet;
use dmpc_core::nlp::{finite_diff_gradient, solve, NlpProblem, SolveStatus, SolverSettings};
use dmpc_core::shooting::{CentralizedInputs, LocalInputs, ShootingProblem, TailLaw};
use dmpc_core::terminal::{design_terminal, DesignSettings};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `½ zᵀHz + gᵀz` over `[-1, 1]^d` with one half-space `aᵀz <= b`.
#[derive(Clone)]
struct Qp {
    h: DMatrix<f64>,
    g: DVector<f64>,
    a: DVector<f64>,
    b: f64,
    bounds: BoxSet,
}

impl Qp {
    fn value(&self, z: &[f64]) -> f64 {
        let z = DVector::from_column_slice(z);
        0.5 * z.dot(&(&self.h * &z)) + self.g.dot(&z)
    }
}

impl NlpProblem for Qp {
    fn dim(&self) -> usize {
        self.g.len()
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn evaluate(&self, z: &[f64], res: &mut [f64]) -> f64 {
        res[0] = self.a.dot(&DVector::from_column_slice(z)) - self.b;
        self.value(z)
    }
    fn weighted_gradient(&self, z: &[f64], w: &[f64], grad: &mut [f64]) {
        let zv = DVector::from_column_slice(z);
        let gr = &self.h * zv + &self.g + &self.a * w[0];
        grad.copy_from_slice(gr.as_slice());
    }
}

fn random_qp(d: usize, seed: u64) -> Qp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.transpose() * m + DMatrix::identity(d, d) * 0.1;
    let g = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
    let a = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let b = rng.gen_range(-0.5..0.5);
    Qp { h, g, a, b, bounds: BoxSet::symmetric(&vec![1.0; d]).unwrap() }
}

/// Enumerates every face (each coordinate at a bound or free, the half-space active or
/// not), minimizes on its affine hull, and keeps the best feasible stationary point.
fn active_set_oracle(qp: &Qp) -> f64 {
    let d = qp.dim();
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(d as u32) {
        let mut state = vec![0u8; d];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..d).filter(|i| state[*i] == 0).collect();
        let mut z = vec![0.0; d];
        for i in 0..d {
            z[i] = match state[i] {
                1 => -1.0,
                2 => 1.0,
                _ => 0.0,
            };
        }
        for with_cut in [false, true] {
            let nf = free.len();
            let size = nf + with_cut as usize;
            if size == 0 {
                consider(qp, &z, &mut best);
                continue;
            }
            let mut kkt = DMatrix::zeros(size, size);
            let mut rhs = DVector::zeros(size);
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    kkt[(r, c)] = qp.h[(i, j)];
                }
                let fixed: f64 = (0..d).filter(|j| state[*j] != 0).map(|j| qp.h[(i, j)] * z[j]).sum();
                rhs[r] = -qp.g[i] - fixed;
                if with_cut {
                    kkt[(r, nf)] = qp.a[i];
                    kkt[(nf, r)] = qp.a[i];
                }
            }
            if with_cut {
                let fixed: f64 = (0..d).filter(|j| state[*j] != 0).map(|j| qp.a[j] * z[j]).sum();
                rhs[nf] = qp.b - fixed;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let mut cand = z.clone();
            for (r, &i) in free.iter().enumerate() {
                cand[i] = sol[r];
            }
            consider(qp, &cand, &mut best);
        }
    }
    best
}

fn consider(qp: &Qp, z: &[f64], best: &mut f64) {
    let inside = z.iter().all(|v| v.abs() <= 1.0 + 1e-12);
    let cut = qp.a.dot(&DVector::from_column_slice(z)) - qp.b <= 1e-12;
    if inside && cut {
        *best = best.min(qp.value(z));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convex_qp_matches_active_set_enumeration(d in 1usize..=10, seed in any::<u64>()) {
        let qp = random_qp(d, seed);
        let settings = SolverSettings::default();
        let oracle = active_set_oracle(&qp);
        // the solver targets the half-space tightened by its constraint margin
        let tightened = Qp { b: qp.b - settings.constraint_margin * settings.feasibility_tol, ..qp.clone() };
        let tightened_oracle = active_set_oracle(&tightened);
        prop_assume!(tightened_oracle.is_finite());
        let r = solve(&qp, &vec![0.0; d], &settings).unwrap();
        prop_assert!(r.max_constraint_violation <= 1e-6);
        prop_assert!(
            r.objective_value >= oracle - 1e-6 * (1.0 + oracle.abs()),
            "solver {} below the exact optimum {}", r.objective_value, oracle
        );
        prop_assert!(
            (r.objective_value - tightened_oracle).abs() <= 1e-6 * (1.0 + tightened_oracle.abs()),
            "solver {} tightened optimum {}", r.objective_value, tightened_oracle
        );
    }

    #[test]
    fn feasible_warm_start_is_never_worsened(d in 1usize..=8, seed in any::<u64>(), scale in 0.0f64..1.0) {
        let qp = random_qp(d, seed);
        // a point on the segment toward the origin inside the half-space if the origin is
        let warm: Vec<f64> = (0..d).map(|i| scale * (((i as f64) + 0.5).sin())).collect();
        let mut res = [0.0];
        let f0 = qp.evaluate(&warm, &mut res);
        prop_assume!(res[0] <= 1e-6);
        let settings = SolverSettings { max_outer: 2, max_inner: 3, ..Default::default() };
        let r = solve(&qp, &warm, &settings).unwrap();
        prop_assert!(r.objective_value <= f0 + 1e-12);
        prop_assert!(r.max_constraint_violation <= 1e-6);
    }

    #[test]
    fn solve_is_deterministic(d in 1usize..=6, seed in any::<u64>()) {
        let qp = random_qp(d, seed);
        let a = solve(&qp, &vec![0.3; d], &SolverSettings::default()).unwrap();
        let b = solve(&qp, &vec![0.3; d], &SolverSettings::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn nonconvex_fallback_keeps_warm_start() {
    // Rosenbrock with a disk constraint, cut short: must not return anything worse.
    struct Rosen(BoxSet);
    impl NlpProblem for Rosen {
        fn dim(&self) -> usize {
            2
        }
        fn bounds(&self) -> &BoxSet {
            &self.0
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn evaluate(&self, z: &[f64], c: &mut [f64]) -> f64 {
            c[0] = z[0] * z[0] + z[1] * z[1] - 2.0;
            (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2)
        }
    }
    let p = Rosen(BoxSet::symmetric(&[2.0, 2.0]).unwrap());
    let warm = [1.0, 1.0];
    let r = solve(&p, &warm, &SolverSettings::default()).unwrap();
    assert_eq!(r.objective_value, 0.0);
    assert!(matches!(r.status, SolveStatus::Converged | SolveStatus::FallbackWarmStart));
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs().max(x.abs())))
        .fold(0.0, f64::max)
}

#[test]
fn benchmark_gradients_match_differences() {
    let sys = default_benchmark();
    let term = design_terminal(&sys, &DesignSettings::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let np = 16;
    for trial in 0..100 {
        let x0: Vec<f64> = DEFAULT_INITIAL_STATE.iter().map(|v| v * rng.gen_range(0.0..1.5)).collect();
        let (grad, fd) = if trial % 2 == 0 {
            let problem = ShootingProblem::new(&sys, &term, &x0, np, CentralizedInputs::new(&sys, np));
            let z: Vec<f64> = (0..problem.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let mut g = vec![0.0; z.len()];
            problem.weighted_gradient(&z, &vec![0.0; problem.num_constraints()], &mut g);
            (g, finite_diff_gradient(|z| problem.cost(z), &z, 1e-6))
        } else {
            let base: Vec<Vec<f64>> = (0..np).map(|_| (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
            let agent = trial % 3;
            let nc = [10, 12, 16][agent];
            let param = LocalInputs::new(&sys, &term, agent, nc, base, TailLaw::TerminalLaw);
            let problem = ShootingProblem::new(&sys, &term, &x0, np, param);
            let mut z: Vec<f64> = (0..problem.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            *z.last_mut().unwrap() = rng.gen_range(0.0..1.0);
            let mut g = vec![0.0; z.len()];
            problem.weighted_gradient(&z, &vec![0.0; problem.num_constraints()], &mut g);
            (g, finite_diff_gradient(|z| problem.cost(z), &z, 1e-6))
        };
        assert!(relative_gap(&grad, &fd) <= 1e-4, "trial {trial}: gap {}", relative_gap(&grad, &fd));
    }
}

#[test]
fn converged_result_is_the_kkt_point() {
    // an earlier iterate inside the tolerance band outside the half-space is cheaper
    // than the optimum and must not be returned
    let qp = random_qp(2, 13889756630502933471);
    let oracle = active_set_oracle(&qp);
    let r = solve(&qp, &[0.0, 0.0], &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    assert!((r.objective_value - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()), "{} vs {oracle}", r.objective_value);
}
