//! Single-shooting formulations of the finite-horizon problem.
//!
//! The decision vector is mapped to global inputs step by step (possibly through state
//! feedback), the plant is rolled out, and the cost plus all state, input and terminal
//! constraints are evaluated on the resulting trajectory. Gradients are exact: forward
//! sensitivities `dx(t)/dz` are propagated through the derivative of the integrator.

use nalgebra::{DMatrix, DVector};

use crate::model::{check_finite, BoxSet, PartitionedSystem, StepWorkspace, Trajectory};
use crate::nlp::NlpProblem;
use crate::terminal::TerminalIngredients;
use crate::ModelError;

/// How the inputs past an agent's control horizon are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailLaw {
    /// `λ κ_i(x(t)) + (1 − λ) u_ref(t)`.
    #[default]
    TerminalLaw,
    /// `λ u_i(N_c − 1) + (1 − λ) u_ref(t)`: the last free input is held.
    HoldLast,
}

/// Maps a decision vector to the global input at each prediction step.
pub trait InputParameterization {
    fn dim(&self) -> usize;
    fn bounds(&self) -> &BoxSet;

    /// Global input at step `t` given the predicted state `x`.
    fn input(&self, t: usize, x: &[f64], z: &[f64], u: &mut [f64]);

    /// Writes `du/dx` (m×n) and `du/dz` (m×d) at step `t`. Returns `false` when `du/dx` is
    /// identically zero (and was left untouched).
    fn input_jacobian(&self, t: usize, x: &[f64], z: &[f64], du_dx: &mut DMatrix<f64>, du_dz: &mut DMatrix<f64>) -> bool;

    /// Input components at step `t` that are not kept in `U` by the decision bounds and
    /// therefore need explicit constraints.
    fn constrained_inputs(&self, _t: usize) -> std::ops::Range<usize> {
        0..0
    }
}

/// Every input over the horizon is free: `z = (u(0), …, u(Np−1))`.
pub struct CentralizedInputs {
    m: usize,
    bounds: BoxSet,
}

impl CentralizedInputs {
    pub fn new(sys: &PartitionedSystem, horizon: usize) -> Self {
        let u = sys.input_box();
        let bounds = BoxSet {
            lower: (0..horizon).flat_map(|_| u.lower.iter().copied()).collect(),
            upper: (0..horizon).flat_map(|_| u.upper.iter().copied()).collect(),
        };
        CentralizedInputs { m: sys.input_dim(), bounds }
    }
}

impl InputParameterization for CentralizedInputs {
    fn dim(&self) -> usize {
        self.bounds.dim()
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
    fn input(&self, t: usize, _x: &[f64], z: &[f64], u: &mut [f64]) {
        u.copy_from_slice(&z[t * self.m..(t + 1) * self.m]);
    }
    fn input_jacobian(&self, t: usize, _x: &[f64], _z: &[f64], _du_dx: &mut DMatrix<f64>, du_dz: &mut DMatrix<f64>) -> bool {
        du_dz.fill(0.0);
        for r in 0..self.m {
            du_dz[(r, t * self.m + r)] = 1.0;
        }
        false
    }
}

/// Agent `i` optimizes its first `N_c` inputs and the tail weight `λ`; every other agent's
/// inputs are frozen at `base`. `z = (u_i(0), …, u_i(N_c−1), λ)`.
pub struct LocalInputs {
    rows: std::ops::Range<usize>,
    horizon: usize,
    /// Global inputs of the previous iterate (other agents frozen, own tail reference).
    base: Vec<Vec<f64>>,
    /// Rows of `K` belonging to the agent.
    gain: DMatrix<f64>,
    tail: TailLaw,
    bounds: BoxSet,
}

impl LocalInputs {
    pub fn new(
        sys: &PartitionedSystem,
        term: &TerminalIngredients,
        agent: usize,
        horizon: usize,
        base: Vec<Vec<f64>>,
        tail: TailLaw,
    ) -> Self {
        let rows = sys.input_range(agent);
        let ubox = &sys.subsystems()[agent].input_box;
        let mut lower: Vec<f64> = (0..horizon).flat_map(|_| ubox.lower.iter().copied()).collect();
        let mut upper: Vec<f64> = (0..horizon).flat_map(|_| ubox.upper.iter().copied()).collect();
        lower.push(0.0);
        upper.push(1.0);
        let gain = term.gain.rows(rows.start, rows.len()).into_owned();
        LocalInputs { rows, horizon, base, gain, tail, bounds: BoxSet { lower, upper } }
    }

    fn mi(&self) -> usize {
        self.rows.len()
    }

    /// Decision vector reproducing a given own sequence with `λ`.
    pub fn decision_from(&self, own: &[Vec<f64>], lambda: f64) -> Vec<f64> {
        let mut z: Vec<f64> = own[..self.horizon].iter().flatten().copied().collect();
        z.push(lambda);
        z
    }
}

impl InputParameterization for LocalInputs {
    fn dim(&self) -> usize {
        self.bounds.dim()
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
    fn input(&self, t: usize, x: &[f64], z: &[f64], u: &mut [f64]) {
        u.copy_from_slice(&self.base[t]);
        let mi = self.mi();
        if t < self.horizon {
            u[self.rows.clone()].copy_from_slice(&z[t * mi..(t + 1) * mi]);
            return;
        }
        let lambda = z[self.horizon * mi];
        for r in 0..mi {
            let target = match self.tail {
                TailLaw::TerminalLaw => (0..x.len()).map(|j| self.gain[(r, j)] * x[j]).sum::<f64>(),
                TailLaw::HoldLast => z[(self.horizon - 1) * mi + r],
            };
            let reference = self.base[t][self.rows.start + r];
            u[self.rows.start + r] = lambda * target + (1.0 - lambda) * reference;
        }
    }
    fn input_jacobian(&self, t: usize, x: &[f64], z: &[f64], du_dx: &mut DMatrix<f64>, du_dz: &mut DMatrix<f64>) -> bool {
        du_dz.fill(0.0);
        let mi = self.mi();
        if t < self.horizon {
            for r in 0..mi {
                du_dz[(self.rows.start + r, t * mi + r)] = 1.0;
            }
            return false;
        }
        let lambda_idx = self.horizon * mi;
        let lambda = z[lambda_idx];
        match self.tail {
            TailLaw::TerminalLaw => {
                du_dx.fill(0.0);
                for r in 0..mi {
                    let mut kx = 0.0;
                    for j in 0..x.len() {
                        du_dx[(self.rows.start + r, j)] = lambda * self.gain[(r, j)];
                        kx += self.gain[(r, j)] * x[j];
                    }
                    du_dz[(self.rows.start + r, lambda_idx)] = kx - self.base[t][self.rows.start + r];
                }
                true
            }
            TailLaw::HoldLast => {
                for r in 0..mi {
                    let held = z[(self.horizon - 1) * mi + r];
                    du_dz[(self.rows.start + r, (self.horizon - 1) * mi + r)] = lambda;
                    du_dz[(self.rows.start + r, lambda_idx)] = held - self.base[t][self.rows.start + r];
                }
                false
            }
        }
    }
    fn constrained_inputs(&self, t: usize) -> std::ops::Range<usize> {
        if t >= self.horizon {
            self.rows.clone()
        } else {
            0..0
        }
    }
}

/// Supervisor weights: agent `i`'s inputs are `γ_i u_i* + (1 − γ_i) u_i^{p−1}`, `z = γ`.
pub struct BlendInputs {
    agent_rows: Vec<std::ops::Range<usize>>,
    previous: Vec<Vec<f64>>,
    proposals: Vec<Vec<Vec<f64>>>,
    bounds: BoxSet,
}

impl BlendInputs {
    /// `previous[t]` and `proposals[i][t]` are global input vectors; only agent `i`'s block
    /// of `proposals[i]` is used.
    pub fn new(sys: &PartitionedSystem, previous: Vec<Vec<f64>>, proposals: Vec<Vec<Vec<f64>>>) -> Self {
        let n_agents = sys.num_agents();
        BlendInputs {
            agent_rows: (0..n_agents).map(|i| sys.input_range(i)).collect(),
            previous,
            proposals,
            bounds: BoxSet { lower: vec![0.0; n_agents], upper: vec![1.0; n_agents] },
        }
    }
}

impl InputParameterization for BlendInputs {
    fn dim(&self) -> usize {
        self.bounds.dim()
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
    fn input(&self, t: usize, _x: &[f64], z: &[f64], u: &mut [f64]) {
        for (i, rows) in self.agent_rows.iter().enumerate() {
            let g = z[i];
            for r in rows.clone() {
                u[r] = g * self.proposals[i][t][r] + (1.0 - g) * self.previous[t][r];
            }
        }
    }
    fn input_jacobian(&self, t: usize, _x: &[f64], _z: &[f64], _du_dx: &mut DMatrix<f64>, du_dz: &mut DMatrix<f64>) -> bool {
        du_dz.fill(0.0);
        for (i, rows) in self.agent_rows.iter().enumerate() {
            for r in rows.clone() {
                du_dz[(r, i)] = self.proposals[i][t][r] - self.previous[t][r];
            }
        }
        false
    }
}

/// The constrained finite-horizon problem under a given input parameterization.
pub struct ShootingProblem<'a, P> {
    sys: &'a PartitionedSystem,
    term: &'a TerminalIngredients,
    x0: Vec<f64>,
    horizon: usize,
    param: P,
    num_constraints: usize,
}

impl<'a, P: InputParameterization> ShootingProblem<'a, P> {
    pub fn new(sys: &'a PartitionedSystem, term: &'a TerminalIngredients, x0: &[f64], horizon: usize, param: P) -> Self {
        let n = sys.state_dim();
        let m = sys.input_dim();
        let input_rows: usize = (0..horizon).map(|t| param.constrained_inputs(t).len()).sum();
        let num_constraints = 2 * n * horizon + 2 * input_rows + 1 + 2 * m;
        ShootingProblem { sys, term, x0: x0.to_vec(), horizon, param, num_constraints }
    }

    pub fn param(&self) -> &P {
        &self.param
    }

    /// Rolls out the plant under decision `z`.
    pub fn trajectory(&self, z: &[f64]) -> Result<Trajectory, ModelError> {
        let n = self.sys.state_dim();
        let m = self.sys.input_dim();
        let mut ws = StepWorkspace::new(n, m);
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut inputs = Vec::with_capacity(self.horizon);
        let mut x = self.x0.clone();
        let mut u = vec![0.0; m];
        let mut next = vec![0.0; n];
        states.push(DVector::from_column_slice(&x));
        for t in 0..self.horizon {
            self.param.input(t, &x, z, &mut u);
            self.sys.step_into(&mut ws, &x, &u, &mut next);
            check_finite(&next)?;
            inputs.push(DVector::from_column_slice(&u));
            std::mem::swap(&mut x, &mut next);
            states.push(DVector::from_column_slice(&x));
        }
        Ok(Trajectory { states, inputs })
    }

    /// Objective `J` under decision `z` (no constraint bookkeeping).
    pub fn cost(&self, z: &[f64]) -> f64 {
        let mut res = vec![0.0; self.num_constraints];
        self.evaluate(z, &mut res)
    }

    /// Largest constraint residual under decision `z`.
    pub fn violation(&self, z: &[f64]) -> f64 {
        let mut res = vec![0.0; self.num_constraints];
        let f = self.evaluate(z, &mut res);
        if !f.is_finite() {
            return f64::INFINITY;
        }
        res.iter().fold(0.0, |a, c| a.max(*c))
    }
}

impl<'a, P: InputParameterization> NlpProblem for ShootingProblem<'a, P> {
    fn dim(&self) -> usize {
        self.param.dim()
    }
    fn bounds(&self) -> &BoxSet {
        self.param.bounds()
    }
    fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    fn evaluate(&self, z: &[f64], res: &mut [f64]) -> f64 {
        let sys = self.sys;
        let n = sys.state_dim();
        let m = sys.input_dim();
        let xbox = sys.state_box();
        let ubox = sys.input_box();
        let mut ws = StepWorkspace::new(n, m);
        let mut x = self.x0.clone();
        let mut next = vec![0.0; n];
        let mut u = vec![0.0; m];
        let mut cost = 0.0;
        let mut k = 0;
        for t in 0..self.horizon {
            self.param.input(t, &x, z, &mut u);
            cost += sys.stage_cost(&x, &u);
            for r in self.param.constrained_inputs(t) {
                res[k] = u[r] - ubox.upper[r];
                res[k + 1] = ubox.lower[r] - u[r];
                k += 2;
            }
            sys.step_into(&mut ws, &x, &u, &mut next);
            if next.iter().any(|v| !v.is_finite()) {
                res.fill(f64::INFINITY);
                return f64::INFINITY;
            }
            std::mem::swap(&mut x, &mut next);
            for j in 0..n {
                res[k] = x[j] - xbox.upper[j];
                res[k + 1] = xbox.lower[j] - x[j];
                k += 2;
            }
        }
        cost += self.term.terminal_cost(&x);
        res[k] = self.term.terminal_cost(&x) - self.term.alpha;
        k += 1;
        let kx = self.term.law(&x);
        for r in 0..m {
            res[k] = kx[r] - ubox.upper[r];
            res[k + 1] = ubox.lower[r] - kx[r];
            k += 2;
        }
        debug_assert_eq!(k, self.num_constraints);
        cost
    }

    fn weighted_gradient(&self, z: &[f64], w: &[f64], grad: &mut [f64]) {
        let sys = self.sys;
        let n = sys.state_dim();
        let m = sys.input_dim();
        let d = self.param.dim();
        let q = sys.state_weights();
        let r = sys.input_weights();
        let mut ws = StepWorkspace::new(n, m);
        let mut x = self.x0.clone();
        let mut next = vec![0.0; n];
        let mut u = vec![0.0; m];
        let mut sens = DMatrix::<f64>::zeros(n, d);
        let mut sens_next = DMatrix::<f64>::zeros(n, d);
        let mut du_dx = DMatrix::<f64>::zeros(m, n);
        let mut du_dz = DMatrix::<f64>::zeros(m, d);
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DMatrix::<f64>::zeros(n, m);
        // row vector accumulated against the state sensitivity at the current step
        let mut state_coef = vec![0.0; n];
        grad.fill(0.0);
        let mut k = 0;
        for t in 0..self.horizon {
            self.param.input(t, &x, z, &mut u);
            if self.param.input_jacobian(t, &x, z, &mut du_dx, &mut du_dz) {
                du_dz.gemm(1.0, &du_dx, &sens, 1.0);
            }
            // stage cost
            for j in 0..n {
                state_coef[j] = 2.0 * q[j] * x[j];
            }
            let mut input_coef: Vec<f64> = (0..m).map(|i| 2.0 * r[i] * u[i]).collect();
            for row in self.param.constrained_inputs(t) {
                input_coef[row] += w[k] - w[k + 1];
                k += 2;
            }
            accumulate(grad, &state_coef, &sens);
            accumulate(grad, &input_coef, &du_dz);
            sys.step_with_jacobian(&mut ws, &x, &u, &mut next, &mut a, &mut b);
            sens_next.gemm(1.0, &a, &sens, 0.0);
            sens_next.gemm(1.0, &b, &du_dz, 1.0);
            std::mem::swap(&mut sens, &mut sens_next);
            std::mem::swap(&mut x, &mut next);
            for j in 0..n {
                state_coef[j] = w[k] - w[k + 1];
                k += 2;
            }
            accumulate(grad, &state_coef, &sens);
        }
        // terminal cost and level constraint share ∇V_f
        let px: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| self.term.cost[(i, j)] * x[j]).sum::<f64>())
            .collect();
        let level_weight = 1.0 + w[k];
        k += 1;
        for j in 0..n {
            state_coef[j] = 2.0 * level_weight * px[j];
        }
        for row in 0..m {
            let wr = w[k] - w[k + 1];
            k += 2;
            for j in 0..n {
                state_coef[j] += wr * self.term.gain[(row, j)];
            }
        }
        accumulate(grad, &state_coef, &sens);
    }
}

/// `grad += coefᵀ · mat`
fn accumulate(grad: &mut [f64], coef: &[f64], mat: &DMatrix<f64>) {
    for (col, g) in grad.iter_mut().enumerate() {
        let column = mat.column(col);
        let mut acc = 0.0;
        for (c, v) in coef.iter().zip(column.iter()) {
            acc += c * v;
        }
        *g += acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Discretization, FnField, SubsystemSpec};
    use crate::nlp::finite_diff_gradient;
    use std::sync::Arc;

    fn two_agent_nonlinear() -> (PartitionedSystem, TerminalIngredients) {
        let sub = |_| SubsystemSpec {
            state_dim: 2,
            input_dim: 1,
            state_box: BoxSet::symmetric(&[3.0, 2.0]).unwrap(),
            input_box: BoxSet::symmetric(&[1.0]).unwrap(),
            state_weights: vec![1.0, 0.1],
            input_weights: vec![0.2],
        };
        let field = FnField::new(4, 2, |x: &[f64], u: &[f64], d: &mut [f64]| {
            d[0] = x[1];
            d[1] = -x[0].sin() - 0.3 * x[1] + 0.2 * (x[2] - x[0]) + u[0];
            d[2] = x[3];
            d[3] = -x[2] * (-x[2]).exp() - 0.1 * x[3] + 0.2 * (x[0] - x[2]) + u[1];
        });
        let sys = PartitionedSystem::new(vec![sub(0), sub(1)], Arc::new(field), 0.2, Discretization::Rk4).unwrap();
        let term = TerminalIngredients::new(
            DMatrix::from_row_slice(2, 4, &[-0.5, -0.8, 0.1, 0.0, 0.05, 0.0, -0.6, -0.9]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 3.0, 2.0])),
            0.5,
        )
        .unwrap();
        (sys, term)
    }

    fn weights(nc: usize, seed: u64) -> Vec<f64> {
        (0..nc).map(|j| (((j as u64 * 7919 + seed * 104729) % 1000) as f64) / 500.0).collect()
    }

    fn check_gradient<P: InputParameterization>(p: &ShootingProblem<'_, P>, z: &[f64]) {
        let w = weights(p.num_constraints(), 3);
        let mut g = vec![0.0; p.dim()];
        p.weighted_gradient(z, &w, &mut g);
        let mut res = vec![0.0; p.num_constraints()];
        let fd = finite_diff_gradient(
            |z| {
                let f = p.evaluate(z, &mut res);
                f + w.iter().zip(&res).map(|(a, b)| a * b).sum::<f64>()
            },
            z,
            1e-6,
        );
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "analytic {a} vs fd {b}");
        }
    }

    #[test]
    fn centralized_gradient() {
        let (sys, term) = two_agent_nonlinear();
        let p = ShootingProblem::new(&sys, &term, &[0.8, -0.2, -0.5, 0.3], 5, CentralizedInputs::new(&sys, 5));
        let z: Vec<f64> = (0..10).map(|i| ((i as f64) * 0.37).sin() * 0.8).collect();
        check_gradient(&p, &z);
    }

    #[test]
    fn local_gradient_both_tail_laws() {
        let (sys, term) = two_agent_nonlinear();
        let base: Vec<Vec<f64>> = (0..6).map(|t| vec![0.1 * t as f64 - 0.2, -0.3 + 0.05 * t as f64]).collect();
        for tail in [TailLaw::TerminalLaw, TailLaw::HoldLast] {
            for agent in 0..2 {
                let param = LocalInputs::new(&sys, &term, agent, 3, base.clone(), tail);
                let p = ShootingProblem::new(&sys, &term, &[0.8, -0.2, -0.5, 0.3], 6, param);
                check_gradient(&p, &[0.3, -0.4, 0.6, 0.35]);
            }
        }
    }

    #[test]
    fn blend_gradient() {
        let (sys, term) = two_agent_nonlinear();
        let prev: Vec<Vec<f64>> = (0..4).map(|t| vec![0.1 * t as f64, -0.2]).collect();
        let props = vec![
            (0..4).map(|t| vec![-0.5 + 0.1 * t as f64, 9.0]).collect(),
            (0..4).map(|t| vec![9.0, 0.4 - 0.2 * t as f64]).collect(),
        ];
        let p = ShootingProblem::new(&sys, &term, &[0.8, -0.2, -0.5, 0.3], 4, BlendInputs::new(&sys, prev, props));
        check_gradient(&p, &[0.3, 0.8]);
    }

    #[test]
    fn zero_lambda_reproduces_base() {
        let (sys, term) = two_agent_nonlinear();
        let base: Vec<Vec<f64>> = (0..6).map(|t| vec![(t as f64 * 0.9).cos() * 0.3, -0.13 * t as f64]).collect();
        let param = LocalInputs::new(&sys, &term, 1, 2, base.clone(), TailLaw::TerminalLaw);
        let own: Vec<Vec<f64>> = base.iter().map(|u| vec![u[1]]).collect();
        let z = param.decision_from(&own, 0.0);
        let p = ShootingProblem::new(&sys, &term, &[0.8, -0.2, -0.5, 0.3], 6, param);
        let traj = p.trajectory(&z).unwrap();
        for (u, b) in traj.inputs.iter().zip(&base) {
            assert_eq!(u.as_slice(), b.as_slice());
        }
    }
}
