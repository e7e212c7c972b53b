//! Three masses in a row, each tied to ground by a nonlinear spring `k0 r e^{-r}` and a
//! damper, and to its neighbours by linear springs. One agent per mass, input = force.
//!
//! State order is `(r1, v1, r2, v2, r3, v3)`, inputs `(u1, u2, u3)`.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_loop::{simulate, ClosedLoopRun, SimulationSettings};
use crate::model::{BoxSet, Discretization, PartitionedSystem, SubsystemSpec, VectorField};
use crate::negotiation::{HorizonInit, NegotiationConfig};
use crate::terminal::TerminalIngredients;
use crate::{Error, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThreeMassParams {
    /// kg
    pub masses: [f64; 3],
    /// N/m, ground spring
    pub k0: f64,
    /// N/m, coupling springs
    pub kc: f64,
    /// N·s/m
    pub hd: f64,
}

impl Default for ThreeMassParams {
    fn default() -> Self {
        ThreeMassParams { masses: [1.5, 2.0, 1.0], k0: 1.1, kc: 0.25, hd: 0.30 }
    }
}

impl ThreeMassParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.masses[0], self.masses[1], self.masses[2], self.k0, self.kc, self.hd];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::InvalidSubsystem(format!("three-mass parameters must be positive: {self:?}")))
        }
    }
}

/// Derivative of the three-mass state.
pub fn three_mass_field(p: &ThreeMassParams, x: &[f64], u: &[f64]) -> [f64; 6] {
    let (r1, v1, r2, v2, r3, v3) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let ground = |r: f64| p.k0 * r * (-r).exp();
    [
        v1,
        (u[0] - ground(r1) - p.hd * v1 - p.kc * (r1 - r2)) / p.masses[0],
        v2,
        (u[1] - ground(r2) - p.hd * v2 - p.kc * (r2 - r1) - p.kc * (r2 - r3)) / p.masses[1],
        v3,
        (u[2] - ground(r3) - p.hd * v3 - p.kc * (r3 - r2)) / p.masses[2],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeMassField {
    pub params: ThreeMassParams,
}

impl VectorField for ThreeMassField {
    fn state_dim(&self) -> usize {
        6
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &[f64], u: &[f64], xdot: &mut [f64]) {
        xdot.copy_from_slice(&three_mass_field(&self.params, x, u));
    }
    fn jacobian(&self, x: &[f64], _u: &[f64], jx: &mut DMatrix<f64>, ju: &mut DMatrix<f64>) {
        let p = &self.params;
        let dground = |r: f64| p.k0 * (1.0 - r) * (-r).exp();
        jx.fill(0.0);
        ju.fill(0.0);
        let [m1, m2, m3] = p.masses;
        jx[(0, 1)] = 1.0;
        jx[(2, 3)] = 1.0;
        jx[(4, 5)] = 1.0;
        jx[(1, 0)] = (-dground(x[0]) - p.kc) / m1;
        jx[(1, 1)] = -p.hd / m1;
        jx[(1, 2)] = p.kc / m1;
        jx[(3, 0)] = p.kc / m2;
        jx[(3, 2)] = (-dground(x[2]) - 2.0 * p.kc) / m2;
        jx[(3, 3)] = -p.hd / m2;
        jx[(3, 4)] = p.kc / m2;
        jx[(5, 2)] = p.kc / m3;
        jx[(5, 4)] = (-dground(x[4]) - p.kc) / m3;
        jx[(5, 5)] = -p.hd / m3;
        ju[(1, 0)] = 1.0 / m1;
        ju[(3, 1)] = 1.0 / m2;
        ju[(5, 2)] = 1.0 / m3;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkWeights {
    /// Diagonal of Q over `(r1, v1, r2, v2, r3, v3)`.
    pub q: [f64; 6],
    /// Diagonal of R over `(u1, u2, u3)`.
    pub r: [f64; 3],
}

impl Default for BenchmarkWeights {
    fn default() -> Self {
        BenchmarkWeights { q: [2.0, 0.05, 2.0, 0.05, 2.0, 0.05], r: [0.1, 1.0, 0.1] }
    }
}

/// Symmetric per-subsystem bounds `|r_i| <= position`, `|v_i| <= velocity`, `|u_i| <= input`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkBounds {
    pub position: f64,
    pub velocity: f64,
    pub input: f64,
}

impl Default for BenchmarkBounds {
    fn default() -> Self {
        BenchmarkBounds { position: 5.0, velocity: 2.0, input: 1.5 }
    }
}

pub const DEFAULT_SAMPLE_TIME: f64 = 0.15;

/// The three-subsystem plant with its boxes and weights.
pub fn build_benchmark(
    params: &ThreeMassParams,
    weights: &BenchmarkWeights,
    bounds: &BenchmarkBounds,
    sample_time: f64,
    discretization: Discretization,
) -> Result<PartitionedSystem, ModelError> {
    params.validate()?;
    let subsystems = (0..3)
        .map(|i| {
            Ok(SubsystemSpec {
                state_dim: 2,
                input_dim: 1,
                state_box: BoxSet::symmetric(&[bounds.position, bounds.velocity])?,
                input_box: BoxSet::symmetric(&[bounds.input])?,
                state_weights: vec![weights.q[2 * i], weights.q[2 * i + 1]],
                input_weights: vec![weights.r[i]],
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    PartitionedSystem::new(subsystems, Arc::new(ThreeMassField { params: *params }), sample_time, discretization)
}

/// Benchmark with every default.
pub fn default_benchmark() -> PartitionedSystem {
    build_benchmark(
        &ThreeMassParams::default(),
        &BenchmarkWeights::default(),
        &BenchmarkBounds::default(),
        DEFAULT_SAMPLE_TIME,
        Discretization::Rk4,
    )
    .expect("default benchmark is valid")
}

/// Default initial state `(r1, v1, r2, v2, r3, v3)`.
pub const DEFAULT_INITIAL_STATE: [f64; 6] = [0.6, 0.0, -0.6, 0.0, 0.45, 0.0];
/// Default number of simulated steps.
pub const DEFAULT_STEPS: usize = 60;

/// Closed-loop performance index: sum of stage costs over `k = 0..=T_sim`, no terminal term.
pub fn jcc(sys: &PartitionedSystem, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
    states
        .iter()
        .zip(inputs)
        .map(|(x, u)| sys.stage_cost(x.as_slice(), u.as_slice()))
        .sum()
}

/// Horizon grid with `N_p = max_i N_c,i` at every point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub nc1: usize,
    pub nc2_grid: Vec<usize>,
    pub nc3_grid: Vec<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.nc2_grid.is_empty() || self.nc3_grid.is_empty() {
            return Err("sweep grids must be non-empty".into());
        }
        if self.nc1 == 0 || self.nc2_grid.iter().chain(&self.nc3_grid).any(|v| *v == 0) {
            return Err("control horizons must be >= 1".into());
        }
        Ok(())
    }

    /// Grid points in row-major order (`Nc2` outer, `Nc3` inner).
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.nc2_grid
            .iter()
            .flat_map(|a| self.nc3_grid.iter().map(move |b| (*a, *b)))
            .collect()
    }
}

/// Everything one closed-loop experiment on the benchmark needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: PartitionedSystem,
    pub terminal: TerminalIngredients,
    pub initial_state: DVector<f64>,
    pub steps: usize,
    pub negotiation: NegotiationConfig,
    pub horizons: Vec<usize>,
    pub simulation: SimulationSettings,
}

impl Scenario {
    /// Same scenario with fixed horizons `(nc1, nc2, nc3)` and `N_p = max`.
    pub fn with_fixed_horizons(&self, horizons: &[usize]) -> Scenario {
        let mut s = self.clone();
        s.horizons = horizons.to_vec();
        s.negotiation.prediction_horizon = *horizons.iter().max().expect("non-empty horizons");
        s.negotiation.adapt_horizons = false;
        s.negotiation.horizon_init = HorizonInit::Fixed;
        s
    }

    pub fn run(&self) -> Result<ClosedLoopRun, Error> {
        simulate(
            &self.system,
            &self.terminal,
            &self.initial_state,
            self.steps,
            &self.horizons,
            &self.negotiation,
            &self.simulation,
        )
        .map_err(Error::from)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub nc2: usize,
    pub nc3: usize,
    pub jcc: f64,
    pub iterations: usize,
    pub wall_time: f64,
    /// `(control horizon, seconds)` of every local solve in the run.
    pub solve_times: Vec<(usize, f64)>,
}

/// One fixed-horizon closed loop per grid point; rows keep grid order whatever the
/// execution order.
pub fn run_sweep(scenario: &Scenario, sweep: &SweepSpec) -> Result<Vec<SweepRow>, Error> {
    use rayon::prelude::*;
    sweep.validate().map_err(|m| Error::Config(crate::ConfigError::Invalid { field: "sweep".into(), message: m }))?;
    sweep
        .points()
        .into_par_iter()
        .map(|(nc2, nc3)| {
            let started = Instant::now();
            let run = scenario
                .with_fixed_horizons(&[sweep.nc1, nc2, nc3])
                .run()
                .map_err(|e| Error::GridPoint { nc2, nc3, source: Box::new(e) })?;
            Ok(SweepRow {
                nc2,
                nc3,
                jcc: run.jcc,
                iterations: run.total_iterations(),
                wall_time: started.elapsed().as_secs_f64(),
                solve_times: local_solve_times(&run),
            })
        })
        .collect()
}

/// `(control horizon, seconds)` of every local solve in a run.
pub fn local_solve_times(run: &ClosedLoopRun) -> Vec<(usize, f64)> {
    run.traces
        .iter()
        .flat_map(|t| t.records.iter())
        .flat_map(|r| r.horizons.iter().copied().zip(r.solve_times.iter().copied()))
        .collect()
}

/// One row of the horizon-evolution series: horizons in force at a given negotiation
/// iteration, numbered globally across time steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonSample {
    pub global_iteration: usize,
    pub step: usize,
    pub iteration: usize,
    pub horizons: Vec<usize>,
}

pub fn horizon_series(run: &ClosedLoopRun) -> Vec<HorizonSample> {
    let mut out = Vec::new();
    let mut g = 0;
    for (k, trace) in run.traces.iter().enumerate() {
        for rec in &trace.records {
            out.push(HorizonSample { global_iteration: g, step: k, iteration: rec.iteration, horizons: rec.horizons.clone() });
            g += 1;
        }
    }
    out
}

/// Closed loop with horizon shrinking and mean-based re-initialization between steps.
pub fn run_adaptive(scenario: &Scenario) -> Result<(ClosedLoopRun, Vec<HorizonSample>), Error> {
    let mut s = scenario.clone();
    s.negotiation.adapt_horizons = true;
    s.negotiation.horizon_init = HorizonInit::MeanOfPreviousStep;
    let run = s.run()?;
    let series = horizon_series(&run);
    Ok((run, series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn equilibrium_at_origin() {
        let p = ThreeMassParams::default();
        assert_eq!(three_mass_field(&p, &[0.0; 6], &[0.0; 3]), [0.0; 6]);
    }

    #[test]
    fn input_on_first_mass() {
        let p = ThreeMassParams::default();
        let d = three_mass_field(&p, &[0.0; 6], &[1.5, 0.0, 0.0]);
        assert_eq!(d, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn displaced_first_mass_by_hand() {
        let p = ThreeMassParams::default();
        let d = three_mass_field(&p, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 3]);
        assert_relative_eq!(d[1], (-1.1 * (-1f64).exp() - 0.25) / 1.5, epsilon = 1e-15);
        assert_relative_eq!(d[3], 0.25 / 2.0, epsilon = 1e-15);
        assert_eq!(d[5], 0.0);
        assert_eq!([d[0], d[2], d[4]], [0.0; 3]);
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let field = ThreeMassField { params: ThreeMassParams::default() };
        let x = [0.4, -0.3, -1.2, 0.8, 2.1, 0.05];
        let u = [0.2, -0.7, 1.1];
        let mut jx = DMatrix::zeros(6, 6);
        let mut ju = DMatrix::zeros(6, 3);
        field.jacobian(&x, &u, &mut jx, &mut ju);
        struct Fd(ThreeMassField);
        impl VectorField for Fd {
            fn state_dim(&self) -> usize {
                6
            }
            fn input_dim(&self) -> usize {
                3
            }
            fn eval(&self, x: &[f64], u: &[f64], d: &mut [f64]) {
                self.0.eval(x, u, d)
            }
        }
        let mut fx = DMatrix::zeros(6, 6);
        let mut fu = DMatrix::zeros(6, 3);
        Fd(field).jacobian(&x, &u, &mut fx, &mut fu);
        assert!((jx - fx).amax() < 1e-8);
        assert!((ju - fu).amax() < 1e-8);
    }

    #[test]
    fn default_build() {
        let sys = default_benchmark();
        assert_eq!(sys.state_dim(), 6);
        assert_eq!(sys.input_dim(), 3);
        assert_eq!(sys.sample_time(), 0.15);
        for s in sys.subsystems() {
            assert_eq!(s.state_box.lower, vec![-5.0, -2.0]);
            assert_eq!(s.state_box.upper, vec![5.0, 2.0]);
            assert_eq!(s.input_box.lower, vec![-1.5]);
            assert_eq!(s.input_box.upper, vec![1.5]);
        }
        assert_eq!(sys.state_weights(), &[2.0, 0.05, 2.0, 0.05, 2.0, 0.05]);
        assert_eq!(sys.input_weights(), &[0.1, 1.0, 0.1]);
    }

    #[test]
    fn linear_part_is_odd() {
        let p = ThreeMassParams { k0: 1e-300, ..Default::default() };
        let x = [0.4, -0.3, -1.2, 0.8, 2.1, 0.05];
        let u = [0.2, -0.7, 1.1];
        let nx: Vec<f64> = x.iter().map(|v| -v).collect();
        let nu: Vec<f64> = u.iter().map(|v| -v).collect();
        let a = three_mass_field(&p, &x, &u);
        let b = three_mass_field(&p, &nx, &nu);
        for (a, b) in a.iter().zip(&b) {
            assert_relative_eq!(*a, -*b, epsilon = 1e-14);
        }
    }

    #[test]
    fn jcc_of_zero_loop_and_single_step() {
        let sys = default_benchmark();
        let zero = vec![DVector::zeros(6); 3];
        assert_eq!(jcc(&sys, &zero, &vec![DVector::zeros(3); 3]), 0.0);
        let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let x1 = sys.discretize_step(&x0, &DVector::zeros(3)).unwrap();
        let u1 = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let value = jcc(&sys, &[x0, x1.clone()], &[DVector::zeros(3), u1.clone()]);
        assert_relative_eq!(value, 2.0 + sys.stage_cost(x1.as_slice(), u1.as_slice()), epsilon = 1e-14);
    }

    #[test]
    fn sweep_points_are_row_major() {
        let s = SweepSpec { nc1: 10, nc2_grid: vec![8, 12], nc3_grid: vec![8, 12, 16] };
        assert_eq!(s.points(), vec![(8, 8), (8, 12), (8, 16), (12, 8), (12, 12), (12, 16)]);
        assert!(SweepSpec { nc1: 10, nc2_grid: vec![], nc3_grid: vec![8] }.validate().is_err());
    }
}
