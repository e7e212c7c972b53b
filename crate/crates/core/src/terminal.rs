//! Terminal law `κ(x) = Kx`, terminal cost `V_f(x) = xᵀPx` and level `α` of the terminal set.
//!
//! `K` and `P` come from the discrete LQR of the plant linearized at the origin; `P` is
//! inflated by `(1 + margin)` so the linear decrease inequality holds with slack, and the
//! slack absorbs the nonlinearity inside the level set that `estimate_alpha` validates.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{PartitionedSystem, StepWorkspace, DEFAULT_FEASIBILITY_TOL};
use crate::TerminalError;

/// Safety factor applied to the largest validated level.
pub const ALPHA_SAFETY: f64 = 0.95;
/// Largest decrease margin `design_terminal` accepts.
pub const MAX_DECREASE_MARGIN: f64 = 100.0;
const JACOBIAN_STEP: f64 = 1e-6;
const RICCATI_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalIngredients {
    /// `K`, m×n.
    pub gain: DMatrix<f64>,
    /// `P`, n×n symmetric positive definite.
    pub cost: DMatrix<f64>,
    pub alpha: f64,
}

impl TerminalIngredients {
    pub fn new(gain: DMatrix<f64>, cost: DMatrix<f64>, alpha: f64) -> Result<Self, TerminalError> {
        let t = TerminalIngredients { gain, cost, alpha };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TerminalError> {
        let n = self.cost.nrows();
        if self.cost.ncols() != n || self.gain.ncols() != n {
            return Err(TerminalError::Invalid(format!(
                "P is {}x{} and K is {}x{}",
                self.cost.nrows(),
                self.cost.ncols(),
                self.gain.nrows(),
                self.gain.ncols()
            )));
        }
        let asym = (&self.cost - self.cost.transpose()).amax();
        if asym > 1e-10 * (1.0 + self.cost.amax()) {
            return Err(TerminalError::Invalid(format!("P is not symmetric (max asymmetry {asym:e})")));
        }
        if Cholesky::new(self.cost.clone()).is_none() {
            return Err(TerminalError::Invalid("P is not positive definite".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(TerminalError::Invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Checks that the row blocks of `K` line up with the agents of `sys`.
    pub fn check_compatible(&self, sys: &PartitionedSystem) -> Result<(), TerminalError> {
        if self.gain.nrows() != sys.input_dim() || self.gain.ncols() != sys.state_dim() {
            return Err(TerminalError::Invalid(format!(
                "K is {}x{}, system needs {}x{}",
                self.gain.nrows(),
                self.gain.ncols(),
                sys.input_dim(),
                sys.state_dim()
            )));
        }
        Ok(())
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        quad_form(&self.cost, x)
    }

    /// `κ(x) = Kx` for all agents.
    pub fn law(&self, x: &[f64]) -> DVector<f64> {
        &self.gain * DVector::from_column_slice(x)
    }

    /// Agent `i`'s component `κ_i(x)`, written into `out`.
    pub fn agent_law_into(&self, rows: std::ops::Range<usize>, x: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(rows) {
            *o = (0..x.len()).map(|j| self.gain[(r, j)] * x[j]).sum();
        }
    }

    /// Total excess of `x` over the three conditions defining `X_f`.
    pub fn set_violation(&self, sys: &PartitionedSystem, x: &[f64]) -> f64 {
        let level = (self.terminal_cost(x) - self.alpha).max(0.0);
        let kx = self.law(x);
        level + sys.state_box().excess(x) + sys.input_box().excess(kx.as_slice())
    }

    /// Membership in `X_f = {V_f(x) <= α, x ∈ X, Kx ∈ U}` within the default tolerance.
    pub fn in_terminal_set(&self, sys: &PartitionedSystem, x: &[f64]) -> bool {
        let tol = DEFAULT_FEASIBILITY_TOL;
        let kx = self.law(x);
        self.terminal_cost(x) <= self.alpha + tol
            && sys.state_box().contains(x, tol)
            && sys.input_box().contains(kx.as_slice(), tol)
    }

    /// Row-major serializable form.
    pub fn to_spec(&self) -> TerminalSpec {
        TerminalSpec { gain: rows_of(&self.gain), cost: rows_of(&self.cost), alpha: self.alpha }
    }
}

fn quad_form(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += p[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Terminal ingredients as plain row-major arrays, for pinning a validated design in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    pub gain: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl TryFrom<TerminalSpec> for TerminalIngredients {
    type Error = TerminalError;

    fn try_from(spec: TerminalSpec) -> Result<Self, Self::Error> {
        fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, TerminalError> {
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
                return Err(TerminalError::Invalid(format!("{name} must be a non-empty rectangular array")));
            }
            Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
        }
        TerminalIngredients::new(matrix("gain", &spec.gain)?, matrix("cost", &spec.cost)?, spec.alpha)
    }
}

/// Knobs of the terminal design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSettings {
    pub decrease_margin: f64,
    pub samples: usize,
    pub seed: u64,
    /// Initial upper bracket of the level bisection.
    pub alpha_upper: f64,
}

impl Default for DesignSettings {
    fn default() -> Self {
        DesignSettings { decrease_margin: 0.05, samples: 10_000, seed: 7, alpha_upper: 1e6 }
    }
}

/// Central-difference Jacobians of the discrete one-step map at the origin.
pub fn linearize_at_origin(sys: &PartitionedSystem) -> Result<(DMatrix<f64>, DMatrix<f64>), TerminalError> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let mut ws = StepWorkspace::new(n, m);
    let mut f0 = vec![0.0; n];
    sys.field().eval(&vec![0.0; n], &vec![0.0; m], &mut f0);
    let norm = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-10 {
        return Err(TerminalError::NotEquilibrium { norm });
    }
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let u0 = vec![0.0; m];
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j] = JACOBIAN_STEP;
        sys.step_into(&mut ws, &x, &u0, &mut plus);
        x[j] = -JACOBIAN_STEP;
        sys.step_into(&mut ws, &x, &u0, &mut minus);
        x[j] = 0.0;
        for i in 0..n {
            a[(i, j)] = (plus[i] - minus[i]) / (2.0 * JACOBIAN_STEP);
        }
    }
    let x0 = vec![0.0; n];
    let mut u = vec![0.0; m];
    for j in 0..m {
        u[j] = JACOBIAN_STEP;
        sys.step_into(&mut ws, &x0, &u, &mut plus);
        u[j] = -JACOBIAN_STEP;
        sys.step_into(&mut ws, &x0, &u, &mut minus);
        u[j] = 0.0;
        for i in 0..n {
            b[(i, j)] = (plus[i] - minus[i]) / (2.0 * JACOBIAN_STEP);
        }
    }
    Ok((a, b))
}

/// Stabilizing solution of the discrete algebraic Riccati equation and the matching gain,
/// returned as `(P, K)` with the control law `u = Kx`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), TerminalError> {
    let mut p = q.clone();
    let at = a.transpose();
    let bt = b.transpose();
    for _ in 0..RICCATI_MAX_ITER {
        let s = r + &bt * &p * b;
        let s_inv = s.try_inverse().ok_or(TerminalError::Unstabilizable)?;
        let pa = &p * a;
        let next = q + &at * &pa - &at * &p * b * &s_inv * &bt * &pa;
        let next = 0.5 * (&next + next.transpose());
        if !next.iter().all(|v| v.is_finite()) || next.amax() > 1e14 {
            return Err(TerminalError::Unstabilizable);
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= 1e-13 * (1.0 + p.amax()) {
            let s_inv = (r + &bt * &p * b).try_inverse().ok_or(TerminalError::Unstabilizable)?;
            let k = -(s_inv * &bt * &p * a);
            return Ok((p, k));
        }
    }
    Err(TerminalError::Unstabilizable)
}

/// `V_f(F(x, Kx)) + ℓ(x, Kx) − V_f(x)`, using the nonlinear discrete map.
pub fn check_decrease_condition(sys: &PartitionedSystem, term: &TerminalIngredients, x: &[f64]) -> f64 {
    let mut ws = StepWorkspace::new(sys.state_dim(), sys.input_dim());
    decrease_residual(sys, &term.gain, &term.cost, x, &mut ws)
}

fn decrease_residual(
    sys: &PartitionedSystem,
    gain: &DMatrix<f64>,
    cost: &DMatrix<f64>,
    x: &[f64],
    ws: &mut StepWorkspace,
) -> f64 {
    let u: Vec<f64> = (0..gain.nrows())
        .map(|r| (0..x.len()).map(|j| gain[(r, j)] * x[j]).sum())
        .collect();
    let mut next = vec![0.0; x.len()];
    sys.step_into(ws, x, &u, &mut next);
    let value = quad_form(cost, &next) + sys.stage_cost(x, &u) - quad_form(cost, x);
    if value.is_finite() {
        value
    } else {
        f64::INFINITY
    }
}

/// Largest level `α` (times `ALPHA_SAFETY`) at which every sampled boundary point of
/// `{xᵀPx = α}` satisfies the decrease condition and the ellipsoid fits inside `X` with
/// `Kx ∈ U`. The box conditions are checked exactly through the support function of the
/// ellipsoid; the decrease condition is sampled. If the initial upper bracket already
/// validates it is returned as is.
pub fn estimate_alpha(
    sys: &PartitionedSystem,
    gain: &DMatrix<f64>,
    cost: &DMatrix<f64>,
    n_samples: usize,
    seed: u64,
    alpha_upper: f64,
) -> Result<f64, TerminalError> {
    if n_samples < 1000 {
        return Err(TerminalError::TooFewSamples(n_samples));
    }
    let n = sys.state_dim();
    let chol = Cholesky::new(cost.clone()).ok_or_else(|| TerminalError::Invalid("P is not positive definite".into()))?;
    let p_inv = chol.inverse();
    // Points with xᵀPx = 1: x = L⁻ᵀ s for unit s.
    let l_t_inv = chol
        .l()
        .transpose()
        .try_inverse()
        .ok_or_else(|| TerminalError::Invalid("Cholesky factor is singular".into()))?;
    let dirs = unit_sphere_samples(n, n_samples, seed);
    let unit_points: Vec<Vec<f64>> = dirs
        .iter()
        .map(|s| (&l_t_inv * s).iter().copied().collect())
        .collect();

    // Level at which the ellipsoid touches each linear bound.
    let mut box_limit = f64::INFINITY;
    let state_box = sys.state_box();
    for j in 0..n {
        let spread = p_inv[(j, j)];
        let bound = state_box.upper[j].min(-state_box.lower[j]);
        box_limit = box_limit.min(bound * bound / spread);
    }
    let input_box = sys.input_box();
    for r in 0..gain.nrows() {
        let row = gain.row(r).transpose();
        let spread = (row.transpose() * &p_inv * &row)[(0, 0)];
        if spread > 0.0 {
            let bound = input_box.upper[r].min(-input_box.lower[r]);
            box_limit = box_limit.min(bound * bound / spread);
        }
    }

    let accept = |level: f64| -> bool {
        if level > box_limit {
            return false;
        }
        let scale = level.sqrt();
        unit_points.par_iter().all(|p| {
            let x: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let mut ws = StepWorkspace::new(n, sys.input_dim());
            let vf = quad_form(cost, &x);
            decrease_residual(sys, gain, cost, &x, &mut ws) <= 1e-10 * (1.0 + vf)
        })
    };

    if accept(alpha_upper) {
        return Ok(alpha_upper);
    }
    let mut hi = alpha_upper;
    let mut lo = alpha_upper;
    loop {
        lo /= 4.0;
        if lo < 1e-12 {
            return Err(TerminalError::DesignFailed);
        }
        if accept(lo) {
            break;
        }
        hi = lo;
    }
    while hi / lo > 1.0 + 1e-4 {
        let mid = (lo * hi).sqrt();
        if accept(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ALPHA_SAFETY * lo)
}

fn unit_sphere_samples(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: DVector<f64> = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            let norm = v.norm();
            if norm > 1e-12 {
                break v / norm;
            }
        })
        .collect()
}

/// Uniform samples inside the ellipsoid `{xᵀPx <= α}`.
pub fn sample_level_set(term: &TerminalIngredients, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let n = term.cost.nrows();
    let chol = Cholesky::new(term.cost.clone()).expect("validated P is positive definite");
    let l_t_inv = chol.l().transpose().try_inverse().expect("Cholesky factor is invertible");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let dirs = unit_sphere_samples(n, count, seed);
    dirs.into_iter()
        .map(|s| {
            let radius: f64 = rand::Rng::gen::<f64>(&mut rng).powf(1.0 / n as f64);
            &l_t_inv * s * (radius * term.alpha.sqrt())
        })
        .collect()
}

/// Discrete LQR design with inflated `P` and a sampled level.
pub fn design_terminal(sys: &PartitionedSystem, settings: &DesignSettings) -> Result<TerminalIngredients, TerminalError> {
    let margin = settings.decrease_margin;
    if !(0.0..=MAX_DECREASE_MARGIN).contains(&margin) {
        return Err(TerminalError::InvalidMargin(margin));
    }
    let (a, b) = linearize_at_origin(sys)?;
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(sys.state_weights()));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(sys.input_weights()));
    let (p, k) = solve_dare(&a, &b, &q, &r)?;
    let cost = p * (1.0 + margin);
    let alpha = estimate_alpha(sys, &k, &cost, settings.samples, settings.seed, settings.alpha_upper)?;
    TerminalIngredients::new(k, cost, alpha)
}

/// Outcome of re-checking a design on fresh samples from inside `X_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalValidation {
    pub alpha: f64,
    pub samples: usize,
    pub max_residual: f64,
    /// Largest `set_violation` of the sampled points (zero for a consistent design).
    pub max_set_violation: f64,
    pub passed: bool,
}

/// Threshold on the decrease residual for a sample to count as passing.
pub const DECREASE_TOL: f64 = 1e-8;

pub fn validate_terminal(
    sys: &PartitionedSystem,
    term: &TerminalIngredients,
    samples: usize,
    seed: u64,
) -> TerminalValidation {
    let points = sample_level_set(term, samples, seed);
    let (max_residual, max_set_violation) = points
        .par_iter()
        .map(|x| {
            (
                check_decrease_condition(sys, term, x.as_slice()),
                term.set_violation(sys, x.as_slice()),
            )
        })
        .reduce(|| (f64::NEG_INFINITY, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    TerminalValidation {
        alpha: term.alpha,
        samples,
        max_residual,
        max_set_violation,
        passed: max_residual <= DECREASE_TOL && max_set_violation <= DEFAULT_FEASIBILITY_TOL,
    }
}
