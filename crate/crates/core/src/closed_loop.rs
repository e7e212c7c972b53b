//! Receding-horizon simulation: negotiate, apply the first agreed input, shift.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::model::PartitionedSystem;
use crate::negotiation::{update_initial_horizons, NegotiationConfig, NegotiationTrace, Negotiator};
use crate::terminal::TerminalIngredients;
use crate::NegotiationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    /// Relative slack `tol · (1 + |J|)` allowed before a cost increase counts as a violation.
    pub monotonicity_tol: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings { monotonicity_tol: 1e-9 }
    }
}

/// Runtime checks of the closed loop's guarantees.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMonitor {
    /// Iterations whose cost rose above the previous iterate's.
    pub iteration_violations: usize,
    /// Steps whose final cost rose above the previous step's.
    pub step_violations: usize,
    /// Largest constraint residual of any materialized joint plan.
    pub max_feasibility_violation: f64,
    /// Shifted candidates checked feasible.
    pub shift_checks: usize,
}

impl RunMonitor {
    pub fn monotonicity_violations(&self) -> usize {
        self.iteration_violations + self.step_violations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    /// `x(0) … x(T)`.
    pub states: Vec<DVector<f64>>,
    /// `u(0) … u(T)`; the last one is computed but never applied.
    pub inputs: Vec<DVector<f64>>,
    pub traces: Vec<NegotiationTrace>,
    /// Agreed cost at each step.
    pub step_costs: Vec<f64>,
    pub jcc: f64,
    pub monitor: RunMonitor,
    pub wall_time: f64,
}

impl ClosedLoopRun {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn total_iterations(&self) -> usize {
        self.traces.iter().map(|t| t.final_iteration()).sum()
    }
}

/// Simulates `steps` plant steps from `x0`, negotiating at `k = 0, …, steps`.
pub fn simulate(
    sys: &PartitionedSystem,
    term: &TerminalIngredients,
    x0: &DVector<f64>,
    steps: usize,
    horizons: &[usize],
    config: &NegotiationConfig,
    settings: &SimulationSettings,
) -> Result<ClosedLoopRun, NegotiationError> {
    let started = Instant::now();
    let negotiator = Negotiator::new(sys, term, *config)?;
    let mut plans = negotiator.initial_plans(x0.as_slice(), horizons)?;
    let mut initial_horizons = horizons.to_vec();
    let mut x = x0.clone();
    let mut run = ClosedLoopRun {
        states: vec![x.clone()],
        inputs: Vec::with_capacity(steps + 1),
        traces: Vec::with_capacity(steps + 1),
        step_costs: Vec::with_capacity(steps + 1),
        jcc: 0.0,
        monitor: RunMonitor::default(),
        wall_time: 0.0,
    };
    let tol = settings.monotonicity_tol;
    for k in 0..=steps {
        let out = negotiator.negotiate(x.as_slice(), &plans)?;
        let monitor = &mut run.monitor;
        monitor.iteration_violations += out.trace.monotonicity_violations(tol);
        monitor.max_feasibility_violation = monitor.max_feasibility_violation.max(out.trace.max_residual());
        let cost = out.trace.final_cost();
        if let Some(prev) = run.step_costs.last() {
            if cost > prev + tol * (1.0 + prev.abs()) {
                monitor.step_violations += 1;
            }
        }
        let u = out.first_input();
        run.jcc += sys.stage_cost(x.as_slice(), u.as_slice());
        run.step_costs.push(cost);
        run.inputs.push(u.clone());
        if k < steps {
            x = sys.discretize_step(&x, &u)?;
            run.states.push(x.clone());
            initial_horizons =
                update_initial_horizons(&out.trace, &initial_horizons, config.horizon_init, config.prediction_horizon);
            plans = negotiator.shift_candidate(&out.evaluation, x.as_slice(), &initial_horizons, k + 1)?;
            run.monitor.shift_checks += 1;
        }
        run.traces.push(out.trace);
    }
    run.wall_time = started.elapsed().as_secs_f64();
    Ok(run)
}
