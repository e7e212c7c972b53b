//! Small dense NLP solver for `min f(z)  s.t.  c(z) <= 0,  lower <= z <= upper`.
//!
//! Outer loop: PHR augmented Lagrangian with multiplier updates and ×10 penalty growth.
//! Inner loop: box-projected limited-memory BFGS with Armijo backtracking along the
//! projection arc. A feasible warm start is never returned worse: if the solve ends
//! infeasible or with a higher objective, the warm start comes back unchanged.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::model::BoxSet;
use crate::SolverError;

/// A smooth problem over a box with inequality constraints `c(z) <= 0`.
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn bounds(&self) -> &BoxSet;
    fn num_constraints(&self) -> usize {
        0
    }

    /// Objective value at `z`; constraint residuals go to `residuals` (length `num_constraints`).
    /// Returns a non-finite value when `z` cannot be evaluated.
    fn evaluate(&self, z: &[f64], residuals: &mut [f64]) -> f64;

    /// Gradient of `f(z) + Σ_j weights[j] c_j(z)`.
    ///
    /// The default differentiates `evaluate` by central differences.
    fn weighted_gradient(&self, z: &[f64], weights: &[f64], grad: &mut [f64]) {
        let mut res = vec![0.0; self.num_constraints()];
        let g = finite_diff_gradient(
            |z| {
                let f = self.evaluate(z, &mut res);
                f + weights.iter().zip(&res).map(|(w, c)| w * c).sum::<f64>()
            },
            z,
            DEFAULT_FD_STEP,
        );
        grad.copy_from_slice(&g);
    }
}

pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Central differences with per-component step `rel_step·(1 + |z_i|)`.
pub fn finite_diff_gradient(mut f: impl FnMut(&[f64]) -> f64, z: &[f64], rel_step: f64) -> Vec<f64> {
    let mut zz = z.to_vec();
    (0..z.len())
        .map(|i| {
            let h = rel_step * (1.0 + z[i].abs());
            zz[i] = z[i] + h;
            let fp = f(&zz);
            zz[i] = z[i] - h;
            let fm = f(&zz);
            zz[i] = z[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub memory: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Constraints are solved as `c(z) + margin <= 0`, `margin = constraint_margin · feasibility_tol`,
    /// so the small residual infeasibility of the augmented Lagrangian lands inside the tolerance.
    pub constraint_margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            feasibility_tol: 1e-6,
            optimality_tol: 1e-8,
            max_outer: 20,
            max_inner: 200,
            memory: 8,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            constraint_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    FallbackWarmStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub z_star: Vec<f64>,
    pub objective_value: f64,
    pub max_constraint_violation: f64,
    pub status: SolveStatus,
    /// Inner iterations summed over all outer iterations.
    pub iterations: usize,
}

fn max_violation(res: &[f64]) -> f64 {
    res.iter().fold(0.0, |m, c| m.max(*c))
}

/// Augmented Lagrangian of a problem at fixed multipliers and penalty.
struct AugLag<'a, P: ?Sized> {
    problem: &'a P,
    mu: Vec<f64>,
    rho: f64,
    shift: f64,
    res: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a, P: NlpProblem + ?Sized> AugLag<'a, P> {
    fn value(&mut self, z: &[f64]) -> f64 {
        let f = self.problem.evaluate(z, &mut self.res);
        if !f.is_finite() {
            return f64::INFINITY;
        }
        let mut pen = 0.0;
        for (c, mu) in self.res.iter().zip(&self.mu) {
            let t = (mu + self.rho * (c + self.shift)).max(0.0);
            pen += t * t - mu * mu;
        }
        let v = f + pen / (2.0 * self.rho);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&mut self, z: &[f64], grad: &mut [f64]) {
        self.problem.evaluate(z, &mut self.res);
        for ((w, c), mu) in self.weights.iter_mut().zip(&self.res).zip(&self.mu) {
            *w = (mu + self.rho * (c + self.shift)).max(0.0);
        }
        self.problem.weighted_gradient(z, &self.weights, grad);
    }
}

struct InnerOutcome {
    iterations: usize,
    converged: bool,
    /// no descent step exists at working precision
    stalled: bool,
}

fn projected_gradient_norm(z: &[f64], g: &[f64], b: &BoxSet) -> f64 {
    z.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (zi, gi))| ((zi - gi).clamp(b.lower[i], b.upper[i]) - zi).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected L-BFGS on the augmented Lagrangian; updates `z` in place.
fn minimize_box<P: NlpProblem + ?Sized>(
    al: &mut AugLag<'_, P>,
    z: &mut [f64],
    tol: f64,
    settings: &SolverSettings,
) -> InnerOutcome {
    let n = z.len();
    let bounds = al.problem.bounds().clone();
    let mut g = vec![0.0; n];
    let mut value = al.value(z);
    al.gradient(z, &mut g);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.memory);
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha_buf = vec![0.0; settings.memory];
    let mut iterations = 0;

    while iterations < settings.max_inner {
        if projected_gradient_norm(z, &g, &bounds) <= tol {
            return InnerOutcome { iterations, converged: true, stalled: false };
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((z[i] <= bounds.lower[i] && g[i] > 0.0) || (z[i] >= bounds.upper[i] && g[i] < 0.0)))
            .collect();

        let mut accepted = false;
        for attempt in 0..2 {
            let use_memory = attempt == 0 && !memory.is_empty();
            // two-loop recursion on the free variables
            for i in 0..n {
                d[i] = if free[i] { g[i] } else { 0.0 };
            }
            if use_memory {
                // curvature pairs restricted to the free subspace
                let free_dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).filter(|i| free[*i]).map(|i| a[i] * b[i]).sum() };
                let mut last_pair = None;
                for (k, (s, y, _)) in memory.iter().enumerate().rev() {
                    let sy = free_dot(s, y);
                    if !(sy > 1e-12 * free_dot(s, s).sqrt() * free_dot(y, y).sqrt()) {
                        alpha_buf[k] = f64::NAN;
                        continue;
                    }
                    last_pair.get_or_insert((sy, free_dot(y, y)));
                    let a = free_dot(s, &d) / sy;
                    alpha_buf[k] = a;
                    for i in 0..n {
                        if free[i] {
                            d[i] -= a * y[i];
                        }
                    }
                }
                if let Some((sy, yy)) = last_pair {
                    let gamma = sy / yy;
                    for v in d.iter_mut() {
                        *v *= gamma;
                    }
                }
                for (k, (s, y, _)) in memory.iter().enumerate() {
                    if alpha_buf[k].is_nan() {
                        continue;
                    }
                    let b = free_dot(y, &d) / free_dot(s, y);
                    for i in 0..n {
                        if free[i] {
                            d[i] += (alpha_buf[k] - b) * s[i];
                        }
                    }
                }
            }
            for i in 0..n {
                d[i] = if free[i] { -d[i] } else { 0.0 };
            }
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                continue;
            }
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut t = if use_memory { 1.0 } else { (1.0 / dmax).min(1.0) };
            for _ in 0..50 {
                for i in 0..n {
                    trial[i] = (z[i] + t * d[i]).clamp(bounds.lower[i], bounds.upper[i]);
                }
                let moved: f64 = (0..n).map(|i| g[i] * (trial[i] - z[i])).sum();
                let v = al.value(&trial);
                if v.is_finite() && v <= value + 1e-4 * moved && moved < 0.0 {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
            memory.clear();
        }
        iterations += 1;
        if !accepted {
            return InnerOutcome { iterations, converged: false, stalled: true };
        }
        let new_value = al.value(&trial);
        al.gradient(&trial, &mut g_new);
        let s: Vec<f64> = trial.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == settings.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let stalled = (value - new_value).abs() <= 1e-15 * (1.0 + value.abs());
        z.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        value = new_value;
        if stalled {
            let converged = projected_gradient_norm(z, &g, &bounds) <= tol;
            return InnerOutcome { iterations, converged, stalled: true };
        }
    }
    InnerOutcome { iterations, converged: false, stalled: false }
}

/// Solves `problem` from `warm_start` (projected onto the bounds first).
pub fn solve<P: NlpProblem + ?Sized>(
    problem: &P,
    warm_start: &[f64],
    settings: &SolverSettings,
) -> Result<SolveResult, SolverError> {
    let n = problem.dim();
    if warm_start.len() != n {
        return Err(SolverError::DimensionMismatch { expected: n, got: warm_start.len() });
    }
    let bounds = problem.bounds();
    let mut z0 = warm_start.to_vec();
    bounds.project(&mut z0);
    let nc = problem.num_constraints();
    let mut res = vec![0.0; nc];
    let f0 = problem.evaluate(&z0, &mut res);
    if !f0.is_finite() {
        return Err(SolverError::NonFiniteWarmStart(f0));
    }
    let warm_violation = max_violation(&res);
    let tol = settings.feasibility_tol;
    let warm_feasible = warm_violation <= tol;

    let mut al = AugLag {
        problem,
        mu: vec![0.0; nc],
        rho: settings.initial_penalty,
        shift: settings.constraint_margin * tol,
        res: vec![0.0; nc],
        weights: vec![0.0; nc],
    };
    let mut z = z0.clone();
    let mut iterations = 0;
    let mut converged = false;
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut prev_compl = f64::INFINITY;
    let mut last_violation = warm_violation;

    for outer in 0..settings.max_outer.max(1) {
        let inner_tol = if nc == 0 {
            settings.optimality_tol
        } else {
            settings.optimality_tol.max(10f64.powi(-(outer as i32) - 3))
        };
        let inner = minimize_box(&mut al, &mut z, inner_tol, settings);
        iterations += inner.iterations;
        let f = problem.evaluate(&z, &mut res);
        let violation = max_violation(&res);
        last_violation = violation;
        if f.is_finite() && violation <= tol && best.as_ref().map_or(true, |b| f < b.1) {
            best = Some((z.clone(), f, violation));
        }
        if nc == 0 {
            converged = inner.converged;
            break;
        }
        let mut compl: f64 = 0.0;
        // objective error left by the constraint residual, `μ_j |c_j + margin|`
        let mut value_gap: f64 = 0.0;
        for j in 0..nc {
            let shifted = res[j] + al.shift;
            compl = compl.max((-shifted).min(al.mu[j] / al.rho).abs());
            al.mu[j] = (al.mu[j] + al.rho * shifted).max(0.0);
            value_gap = value_gap.max(al.mu[j] * shifted.abs());
        }
        let settled = compl <= 0.1 * tol && value_gap <= 0.1 * tol * (1.0 + f.abs());
        if violation <= tol && settled && (inner.converged || inner.stalled) && inner_tol <= settings.optimality_tol {
            // the KKT point, not a cheaper iterate from the tolerance band outside the constraints
            if f.is_finite() {
                best = Some((z.clone(), f, violation));
            }
            converged = true;
            break;
        }
        if compl > 0.25 * prev_compl {
            al.rho = (al.rho * settings.penalty_growth).min(1e12);
        }
        prev_compl = compl;
    }

    let status = if converged { SolveStatus::Converged } else { SolveStatus::MaxIter };
    match best {
        Some((z_star, f, v)) if !warm_feasible || f < f0 || (converged && f <= f0) => Ok(SolveResult {
            z_star,
            objective_value: f,
            max_constraint_violation: v,
            status,
            iterations,
        }),
        _ if warm_feasible => Ok(SolveResult {
            z_star: z0,
            objective_value: f0,
            max_constraint_violation: warm_violation,
            status: SolveStatus::FallbackWarmStart,
            iterations,
        }),
        _ => {
            let f = problem.evaluate(&z, &mut res);
            Ok(SolveResult {
                z_star: z,
                objective_value: f,
                max_constraint_violation: last_violation,
                status: SolveStatus::MaxIter,
                iterations,
            })
        }
    }
}
