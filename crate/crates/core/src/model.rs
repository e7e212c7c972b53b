//! Partitioned nonlinear plant, its box constraints and the discrete one-step map.
//!
//! The global state is the concatenation of subsystem states in index order, and the
//! same holds for inputs. Every agent sees the whole state (a single shared snapshot).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::terminal::TerminalIngredients;
use crate::ModelError;

/// Absolute feasibility tolerance used when callers do not pick their own.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-6;

/// Componentwise bounds `lower <= v <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        let b = BoxSet { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// `[-bound_i, bound_i]` in every component.
    pub fn symmetric(bounds: &[f64]) -> Result<Self, ModelError> {
        Self::new(bounds.iter().map(|b| -b).collect(), bounds.to_vec())
    }

    pub fn unbounded(dim: usize) -> Self {
        BoxSet {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lower.len() != self.upper.len() {
            return Err(ModelError::InvalidBox(format!(
                "lower has {} entries, upper has {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(ModelError::InvalidBox(format!(
                    "component {i}: lower {lo} must be strictly below upper {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains_origin_strictly(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(lo, hi)| *lo < 0.0 && *hi > 0.0)
    }

    /// Largest componentwise excess outside the box, zero when inside.
    pub fn excess(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim());
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| (lo - x).max(x - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        self.excess(v) <= tol
    }

    pub fn project(&self, v: &mut [f64]) {
        for (x, (lo, hi)) in v.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }

    /// Every bound scaled by `factor` (used to shrink or grow a box around the origin).
    pub fn scaled(&self, factor: f64) -> BoxSet {
        BoxSet {
            lower: self.lower.iter().map(|b| b * factor).collect(),
            upper: self.upper.iter().map(|b| b * factor).collect(),
        }
    }

    /// Cartesian product in order.
    pub fn product<'a>(boxes: impl IntoIterator<Item = &'a BoxSet>) -> BoxSet {
        let mut out = BoxSet { lower: Vec::new(), upper: Vec::new() };
        for b in boxes {
            out.lower.extend_from_slice(&b.lower);
            out.upper.extend_from_slice(&b.upper);
        }
        out
    }
}

/// One agent's share of the plant: dimensions, local constraint sets and diagonal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemSpec {
    pub state_dim: usize,
    pub input_dim: usize,
    pub state_box: BoxSet,
    pub input_box: BoxSet,
    /// Diagonal of Q_i.
    pub state_weights: Vec<f64>,
    /// Diagonal of R_i.
    pub input_weights: Vec<f64>,
}

impl SubsystemSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.state_dim == 0 || self.input_dim == 0 {
            return Err(ModelError::InvalidSubsystem("dimensions must be positive".into()));
        }
        let check_len = |what: &str, got: usize, expected: usize| {
            if got != expected {
                Err(ModelError::DimensionMismatch { what: what.to_string(), expected, got })
            } else {
                Ok(())
            }
        };
        check_len("state box", self.state_box.dim(), self.state_dim)?;
        check_len("input box", self.input_box.dim(), self.input_dim)?;
        check_len("state weights", self.state_weights.len(), self.state_dim)?;
        check_len("input weights", self.input_weights.len(), self.input_dim)?;
        self.state_box.validate()?;
        self.input_box.validate()?;
        if !self.state_box.contains_origin_strictly() || !self.input_box.contains_origin_strictly() {
            return Err(ModelError::InvalidBox(
                "subsystem boxes must contain the origin in their interior".into(),
            ));
        }
        if self.state_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ModelError::InvalidSubsystem("state weights must be finite and >= 0".into()));
        }
        if self.input_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(ModelError::InvalidSubsystem("input weights must be finite and > 0".into()));
        }
        Ok(())
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        quad_diag(&self.state_weights, x) + quad_diag(&self.input_weights, u)
    }
}

fn quad_diag(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(w, v)| w * v * v).sum()
}

/// Continuous-time dynamics `xdot = f(x, u)` of the global plant.
pub trait VectorField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    fn eval(&self, x: &[f64], u: &[f64], xdot: &mut [f64]);

    /// Partial derivatives of `f` with respect to `x` (n×n) and `u` (n×m).
    ///
    /// The default uses central differences; implementors with a closed form should override it.
    fn jacobian(&self, x: &[f64], u: &[f64], jx: &mut DMatrix<f64>, ju: &mut DMatrix<f64>) {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut xp = x.to_vec();
        let mut up = u.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let h = 1e-6 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            self.eval(&xp, u, &mut fp);
            xp[j] = x[j] - h;
            self.eval(&xp, u, &mut fm);
            xp[j] = x[j];
            for i in 0..n {
                jx[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..m {
            let h = 1e-6 * (1.0 + u[j].abs());
            up[j] = u[j] + h;
            self.eval(x, &up, &mut fp);
            up[j] = u[j] - h;
            self.eval(x, &up, &mut fm);
            up[j] = u[j];
            for i in 0..n {
                ju[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }
}

/// Vector field backed by a closure; Jacobians come from central differences.
pub struct FnField<F> {
    n: usize,
    m: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(state_dim: usize, input_dim: usize, f: F) -> Self {
        FnField { n: state_dim, m: input_dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn eval(&self, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        (self.f)(x, u, xdot)
    }
}

/// `xdot = A x + B u`, with the exact Jacobian.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl VectorField for LinearField {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn eval(&self, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        for (i, out) in xdot.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += self.a[(i, j)] * xj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += self.b[(i, j)] * uj;
            }
            *out = acc;
        }
    }
    fn jacobian(&self, _x: &[f64], _u: &[f64], jx: &mut DMatrix<f64>, ju: &mut DMatrix<f64>) {
        jx.copy_from(&self.a);
        ju.copy_from(&self.b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    #[default]
    Rk4,
    Euler,
}

/// The plant: subsystem partition, vector field and sampling.
#[derive(Clone)]
pub struct PartitionedSystem {
    subsystems: Vec<SubsystemSpec>,
    field: Arc<dyn VectorField>,
    sample_time: f64,
    discretization: Discretization,
    state_offsets: Vec<usize>,
    input_offsets: Vec<usize>,
    state_box: BoxSet,
    input_box: BoxSet,
    q_diag: Vec<f64>,
    r_diag: Vec<f64>,
}

impl fmt::Debug for PartitionedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartitionedSystem")
            .field("subsystems", &self.subsystems)
            .field("sample_time", &self.sample_time)
            .field("discretization", &self.discretization)
            .finish_non_exhaustive()
    }
}

impl PartitionedSystem {
    pub fn new(
        subsystems: Vec<SubsystemSpec>,
        field: Arc<dyn VectorField>,
        sample_time: f64,
        discretization: Discretization,
    ) -> Result<Self, ModelError> {
        if subsystems.is_empty() {
            return Err(ModelError::InvalidSubsystem("at least one subsystem is required".into()));
        }
        for s in &subsystems {
            s.validate()?;
        }
        if !(sample_time > 0.0) || !sample_time.is_finite() {
            return Err(ModelError::InvalidSubsystem(format!(
                "sample time must be positive, got {sample_time}"
            )));
        }
        let mut state_offsets = Vec::with_capacity(subsystems.len() + 1);
        let mut input_offsets = Vec::with_capacity(subsystems.len() + 1);
        let (mut n, mut m) = (0, 0);
        for s in &subsystems {
            state_offsets.push(n);
            input_offsets.push(m);
            n += s.state_dim;
            m += s.input_dim;
        }
        state_offsets.push(n);
        input_offsets.push(m);
        if field.state_dim() != n {
            return Err(ModelError::DimensionMismatch {
                what: "vector field state dimension".into(),
                expected: n,
                got: field.state_dim(),
            });
        }
        if field.input_dim() != m {
            return Err(ModelError::DimensionMismatch {
                what: "vector field input dimension".into(),
                expected: m,
                got: field.input_dim(),
            });
        }
        let mut f0 = vec![0.0; n];
        field.eval(&vec![0.0; n], &vec![0.0; m], &mut f0);
        let norm = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= 1e-10) {
            return Err(ModelError::NotEquilibrium { norm });
        }
        let state_box = BoxSet::product(subsystems.iter().map(|s| &s.state_box));
        let input_box = BoxSet::product(subsystems.iter().map(|s| &s.input_box));
        let q_diag = subsystems.iter().flat_map(|s| s.state_weights.iter().copied()).collect();
        let r_diag = subsystems.iter().flat_map(|s| s.input_weights.iter().copied()).collect();
        Ok(PartitionedSystem {
            subsystems,
            field,
            sample_time,
            discretization,
            state_offsets,
            input_offsets,
            state_box,
            input_box,
            q_diag,
            r_diag,
        })
    }

    pub fn subsystems(&self) -> &[SubsystemSpec] {
        &self.subsystems
    }
    pub fn num_agents(&self) -> usize {
        self.subsystems.len()
    }
    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }
    pub fn input_dim(&self) -> usize {
        self.input_box.dim()
    }
    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }
    pub fn discretization(&self) -> Discretization {
        self.discretization
    }
    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }
    /// Global state box `X`.
    pub fn state_box(&self) -> &BoxSet {
        &self.state_box
    }
    /// Global input box `U`.
    pub fn input_box(&self) -> &BoxSet {
        &self.input_box
    }
    pub fn state_weights(&self) -> &[f64] {
        &self.q_diag
    }
    pub fn input_weights(&self) -> &[f64] {
        &self.r_diag
    }
    pub fn state_range(&self, agent: usize) -> std::ops::Range<usize> {
        self.state_offsets[agent]..self.state_offsets[agent + 1]
    }
    pub fn input_range(&self, agent: usize) -> std::ops::Range<usize> {
        self.input_offsets[agent]..self.input_offsets[agent + 1]
    }

    /// Same plant with a different integrator or sample time.
    pub fn with_sampling(&self, sample_time: f64, discretization: Discretization) -> Self {
        let mut s = self.clone();
        s.sample_time = sample_time;
        s.discretization = discretization;
        s
    }

    /// Same vector field and weights with all subsystems fused into a single agent.
    pub fn fused(&self) -> Self {
        let fused = SubsystemSpec {
            state_dim: self.state_dim(),
            input_dim: self.input_dim(),
            state_box: self.state_box.clone(),
            input_box: self.input_box.clone(),
            state_weights: self.q_diag.clone(),
            input_weights: self.r_diag.clone(),
        };
        PartitionedSystem::new(vec![fused], self.field.clone(), self.sample_time, self.discretization)
            .expect("fusing a valid system keeps it valid")
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        quad_diag(&self.q_diag, x) + quad_diag(&self.r_diag, u)
    }

    /// Stage cost of one subsystem, evaluated on the global vectors.
    pub fn subsystem_stage_cost(&self, agent: usize, x: &[f64], u: &[f64]) -> f64 {
        self.subsystems[agent].stage_cost(&x[self.state_range(agent)], &u[self.input_range(agent)])
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.state_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "state".into(),
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.input_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "input".into(),
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// One sample of the discrete map `x+ = F(x, u)`.
    pub fn discretize_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        self.check_dims(x.as_slice(), u.as_slice())?;
        let mut ws = StepWorkspace::new(self.state_dim(), self.input_dim());
        let mut out = DVector::zeros(self.state_dim());
        self.step_into(&mut ws, x.as_slice(), u.as_slice(), out.as_mut_slice());
        check_finite(out.as_slice())?;
        Ok(out)
    }

    /// Unchecked one-step map writing into `out`. Non-finite values are left for the caller.
    pub fn step_into(&self, ws: &mut StepWorkspace, x: &[f64], u: &[f64], out: &mut [f64]) {
        let h = self.sample_time;
        let f = &*self.field;
        match self.discretization {
            Discretization::Euler => {
                f.eval(x, u, &mut ws.k[0]);
                for i in 0..x.len() {
                    out[i] = x[i] + h * ws.k[0][i];
                }
            }
            Discretization::Rk4 => {
                let [k1, k2, k3, k4] = &mut ws.k;
                let tmp = &mut ws.tmp;
                f.eval(x, u, k1);
                axpy_into(tmp, x, 0.5 * h, k1);
                f.eval(tmp, u, k2);
                axpy_into(tmp, x, 0.5 * h, k2);
                f.eval(tmp, u, k3);
                axpy_into(tmp, x, h, k3);
                f.eval(tmp, u, k4);
                for i in 0..x.len() {
                    out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
    }

    /// One-step map together with its exact derivatives `A = dF/dx`, `B = dF/du`
    /// (the derivative of the integrator itself, not of a re-linearized model).
    pub fn step_with_jacobian(
        &self,
        ws: &mut StepWorkspace,
        x: &[f64],
        u: &[f64],
        out: &mut [f64],
        a: &mut DMatrix<f64>,
        b: &mut DMatrix<f64>,
    ) {
        let h = self.sample_time;
        let n = x.len();
        let f = &*self.field;
        match self.discretization {
            Discretization::Euler => {
                f.eval(x, u, &mut ws.k[0]);
                f.jacobian(x, u, &mut ws.fx, &mut ws.fu);
                for i in 0..n {
                    out[i] = x[i] + h * ws.k[0][i];
                }
                a.copy_from(&ws.fx);
                *a *= h;
                for i in 0..n {
                    a[(i, i)] += 1.0;
                }
                b.copy_from(&ws.fu);
                *b *= h;
            }
            Discretization::Rk4 => {
                let StepWorkspace { k, tmp, fx, fu, dkx, dku, stage_x, stage_u } = ws;
                f.eval(x, u, &mut k[0]);
                f.jacobian(x, u, &mut dkx[0], &mut dku[0]);
                // stage s evaluates at x + c_s h k_{s-1}
                let coeffs = [0.5 * h, 0.5 * h, h];
                for s in 1..4 {
                    let c = coeffs[s - 1];
                    let (done, rest) = k.split_at_mut(s);
                    axpy_into(tmp, x, c, &done[s - 1]);
                    f.eval(tmp, u, &mut rest[0]);
                    f.jacobian(tmp, u, fx, fu);
                    let (dx_done, dx_rest) = dkx.split_at_mut(s);
                    let (du_done, du_rest) = dku.split_at_mut(s);
                    stage_x.copy_from(&dx_done[s - 1]);
                    *stage_x *= c;
                    for i in 0..n {
                        stage_x[(i, i)] += 1.0;
                    }
                    stage_u.copy_from(&du_done[s - 1]);
                    *stage_u *= c;
                    dx_rest[0].gemm(1.0, fx, stage_x, 0.0);
                    du_rest[0].copy_from(fu);
                    du_rest[0].gemm(1.0, fx, stage_u, 1.0);
                }
                let [k1, k2, k3, k4] = &*k;
                for i in 0..n {
                    out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                rk4_combine(a, &ws.dkx, h);
                for i in 0..n {
                    a[(i, i)] += 1.0;
                }
                rk4_combine(b, &ws.dku, h);
            }
        }
    }

    /// Propagates `x0` through a sequence of global inputs.
    pub fn rollout(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<Trajectory, ModelError> {
        if x0.len() != self.state_dim() {
            return Err(ModelError::DimensionMismatch {
                what: "initial state".into(),
                expected: self.state_dim(),
                got: x0.len(),
            });
        }
        let mut ws = StepWorkspace::new(self.state_dim(), self.input_dim());
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0.clone());
        for u in inputs {
            self.check_dims(x0.as_slice(), u.as_slice())?;
            let mut next = DVector::zeros(self.state_dim());
            self.step_into(&mut ws, states.last().unwrap().as_slice(), u.as_slice(), next.as_mut_slice());
            check_finite(next.as_slice())?;
            states.push(next);
        }
        Ok(Trajectory { states, inputs: inputs.to_vec() })
    }

    /// Rollout from per-agent input sequences (all of the same length).
    pub fn rollout_agents(
        &self,
        x0: &DVector<f64>,
        per_agent: &[Vec<DVector<f64>>],
    ) -> Result<Trajectory, ModelError> {
        if per_agent.len() != self.num_agents() {
            return Err(ModelError::DimensionMismatch {
                what: "agent plans".into(),
                expected: self.num_agents(),
                got: per_agent.len(),
            });
        }
        let horizon = per_agent[0].len();
        if per_agent.iter().any(|p| p.len() != horizon) {
            return Err(ModelError::InvalidSubsystem("agent plans must share one horizon".into()));
        }
        let inputs: Vec<DVector<f64>> = (0..horizon)
            .map(|t| {
                let mut u = DVector::zeros(self.input_dim());
                for (i, plan) in per_agent.iter().enumerate() {
                    u.rows_mut(self.input_offsets[i], plan[t].len()).copy_from(&plan[t]);
                }
                u
            })
            .collect();
        self.rollout(x0, &inputs)
    }

    /// Finite-horizon cost: stage costs over the horizon plus the terminal cost.
    pub fn objective(&self, term: &TerminalIngredients, traj: &Trajectory) -> f64 {
        let stage: f64 = traj
            .inputs
            .iter()
            .zip(&traj.states)
            .map(|(u, x)| self.stage_cost(x.as_slice(), u.as_slice()))
            .sum();
        stage + term.terminal_cost(traj.terminal_state().as_slice())
    }

    /// Constraint audit of a predicted trajectory against `X`, `U` and `X_f`.
    pub fn check_feasible(&self, term: &TerminalIngredients, traj: &Trajectory, tol: f64) -> FeasibilityReport {
        let max_state_violation = traj
            .states
            .iter()
            .map(|x| self.state_box.excess(x.as_slice()))
            .fold(0.0, f64::max);
        let max_input_violation = traj
            .inputs
            .iter()
            .map(|u| self.input_box.excess(u.as_slice()))
            .fold(0.0, f64::max);
        let terminal_violation = term.set_violation(self, traj.terminal_state().as_slice());
        let feasible = max_state_violation <= tol && max_input_violation <= tol && terminal_violation <= tol;
        FeasibilityReport { max_state_violation, max_input_violation, terminal_violation, feasible }
    }
}

/// Scratch buffers for the one-step map, reused across a rollout.
pub struct StepWorkspace {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    fx: DMatrix<f64>,
    fu: DMatrix<f64>,
    dkx: [DMatrix<f64>; 4],
    dku: [DMatrix<f64>; 4],
    stage_x: DMatrix<f64>,
    stage_u: DMatrix<f64>,
}

impl StepWorkspace {
    pub fn new(n: usize, m: usize) -> Self {
        let z = || vec![0.0; n];
        let mx = || DMatrix::zeros(n, n);
        let mu = || DMatrix::zeros(n, m);
        StepWorkspace {
            k: [z(), z(), z(), z()],
            tmp: z(),
            fx: mx(),
            fu: mu(),
            dkx: [mx(), mx(), mx(), mx()],
            dku: [mu(), mu(), mu(), mu()],
            stage_x: mx(),
            stage_u: mu(),
        }
    }
}

/// `out = h/6 (d1 + 2 d2 + 2 d3 + d4)`
fn rk4_combine(out: &mut DMatrix<f64>, d: &[DMatrix<f64>; 4], h: f64) {
    for (idx, o) in out.iter_mut().enumerate() {
        *o = h / 6.0 * (d[0][idx] + 2.0 * d[1][idx] + 2.0 * d[2][idx] + d[3][idx]);
    }
}

fn axpy_into(out: &mut [f64], x: &[f64], alpha: f64, k: &[f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + alpha * k[i];
    }
}

pub(crate) fn check_finite(v: &[f64]) -> Result<(), ModelError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(component) => Err(ModelError::IntegrationBlowup { component, value: v[component] }),
        None => Ok(()),
    }
}

/// Predicted states `x(0|k)..x(Np|k)` and inputs `u(0|k)..u(Np-1|k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
    pub fn terminal_state(&self) -> &DVector<f64> {
        self.states.last().expect("a trajectory holds at least one state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub max_state_violation: f64,
    pub max_input_violation: f64,
    pub terminal_violation: f64,
    pub feasible: bool,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.max_state_violation.max(self.max_input_violation).max(self.terminal_violation)
    }
}
