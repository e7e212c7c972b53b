//! Iterative negotiation between agents and a supervisor at one time step, plus the
//! shifted warm start and control-horizon adaptation between steps.
//!
//! Every iteration: each agent solves its local problem against a frozen snapshot of the
//! other agents' inputs, the supervisor blends each proposal with the previous iterate, and
//! the blended joint sequence becomes the new iterate. Each stage keeps a feasible, no
//! worse candidate in its search set, so feasibility and cost monotonicity carry over
//! from one iterate to the next whatever the solver returns.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{BoxSet, PartitionedSystem, Trajectory, DEFAULT_FEASIBILITY_TOL};
use crate::nlp::{solve, NlpProblem, SolverSettings};
use crate::shooting::{BlendInputs, CentralizedInputs, InputParameterization, LocalInputs, ShootingProblem, TailLaw};
use crate::terminal::TerminalIngredients;
use crate::NegotiationError;

/// Global input sequence: `sequence[t]` is the stacked input of all agents at step `t`.
pub type InputSequence = Vec<Vec<f64>>;

/// How control horizons are initialised at the next time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonInit {
    /// Keep this step's initial horizons.
    #[default]
    Fixed,
    /// Mean of the horizons used over this step's iterations, rounded half up.
    MeanOfPreviousStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegotiationConfig {
    pub prediction_horizon: usize,
    pub max_iterations: usize,
    /// Stop once the relative cost decrease over one iteration drops below this.
    pub convergence_tol: f64,
    /// Largest cost increase accepted when an agent drops one control step.
    pub epsilon_shrink: f64,
    pub adapt_horizons: bool,
    pub horizon_init: HorizonInit,
    pub tail_law: TailLaw,
    pub feasibility_tol: f64,
    /// Solve the local problems of one iteration on the rayon pool.
    pub parallel: bool,
    pub solver: SolverSettings,
}

impl Default for NegotiationConfig {
    fn default() -> Self {
        NegotiationConfig {
            prediction_horizon: 16,
            max_iterations: 20,
            convergence_tol: 1e-6,
            epsilon_shrink: 5e-6,
            adapt_horizons: false,
            horizon_init: HorizonInit::Fixed,
            tail_law: TailLaw::TerminalLaw,
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
            parallel: true,
            solver: SolverSettings::default(),
        }
    }
}

impl NegotiationConfig {
    pub fn validate(&self) -> Result<(), NegotiationError> {
        let bad = |m: String| Err(NegotiationError::InvalidConfig(m));
        if self.prediction_horizon == 0 {
            return bad("prediction horizon must be >= 1".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        if !(self.epsilon_shrink >= 0.0) {
            return bad(format!("epsilon_shrink must be >= 0, got {}", self.epsilon_shrink));
        }
        if !(self.convergence_tol >= 0.0) || !(self.feasibility_tol > 0.0) {
            return bad("tolerances must be non-negative (feasibility strictly positive)".into());
        }
        Ok(())
    }

    /// Checks a set of control horizons against the agents and the prediction horizon.
    pub fn check_horizons(&self, sys: &PartitionedSystem, horizons: &[usize]) -> Result<(), NegotiationError> {
        if horizons.len() != sys.num_agents() {
            return Err(NegotiationError::InvalidConfig(format!(
                "{} control horizons for {} agents",
                horizons.len(),
                sys.num_agents()
            )));
        }
        if let Some(nc) = horizons.iter().find(|nc| **nc == 0 || **nc > self.prediction_horizon) {
            return Err(NegotiationError::InvalidConfig(format!(
                "control horizon {nc} outside [1, {}]",
                self.prediction_horizon
            )));
        }
        Ok(())
    }
}

/// One agent's inputs over the prediction horizon: `N_c` free inputs followed by the
/// tail `λ κ_i(x(t)) + (1 − λ) tail_reference(t)` (or the held last input under
/// [`TailLaw::HoldLast`]).
#[derive(Debug, Clone, PartialEq)]
pub struct InputPlan {
    pub agent: usize,
    pub control_horizon: usize,
    pub free_inputs: Vec<Vec<f64>>,
    pub lambda: f64,
    pub tail_reference: Vec<Vec<f64>>,
    pub tail_law: TailLaw,
}

impl InputPlan {
    /// Plan reproducing a fixed sequence exactly (`λ = 0`).
    pub fn from_sequence(agent: usize, control_horizon: usize, own: &[Vec<f64>]) -> Self {
        let split = control_horizon.min(own.len());
        InputPlan {
            agent,
            control_horizon,
            free_inputs: own[..split].to_vec(),
            lambda: 0.0,
            tail_reference: own[split..].to_vec(),
            tail_law: TailLaw::TerminalLaw,
        }
    }

    pub fn prediction_horizon(&self) -> usize {
        self.free_inputs.len() + self.tail_reference.len()
    }

    fn validate(&self, sys: &PartitionedSystem, horizon: usize) -> Result<(), NegotiationError> {
        let mi = sys.subsystems()[self.agent].input_dim;
        let ok = self.control_horizon >= 1
            && self.free_inputs.len() == self.control_horizon.min(horizon)
            && self.prediction_horizon() == horizon
            && (0.0..=1.0).contains(&self.lambda)
            && self.free_inputs.iter().chain(&self.tail_reference).all(|u| u.len() == mi);
        if ok {
            Ok(())
        } else {
            Err(NegotiationError::ProtocolViolation(format!(
                "malformed plan for agent {} (N_c {}, {} free + {} tail entries, λ {})",
                self.agent,
                self.control_horizon,
                self.free_inputs.len(),
                self.tail_reference.len(),
                self.lambda
            )))
        }
    }
}

/// Splits a global sequence into agent `i`'s own entries.
pub fn agent_sequence(sys: &PartitionedSystem, agent: usize, sequence: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = sys.input_range(agent);
    sequence.iter().map(|u| u[rows.clone()].to_vec()).collect()
}

/// Joint plans as a zero-dimensional parameterization, so they evaluate through the same
/// rollout as the optimization problems.
struct PlanInputs<'a> {
    plans: &'a [InputPlan],
    rows: Vec<std::ops::Range<usize>>,
    gain: &'a DMatrix<f64>,
    bounds: BoxSet,
    m: usize,
}

impl InputParameterization for PlanInputs<'_> {
    fn dim(&self) -> usize {
        0
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
    fn input(&self, t: usize, x: &[f64], _z: &[f64], u: &mut [f64]) {
        for (plan, rows) in self.plans.iter().zip(&self.rows) {
            let nc = plan.free_inputs.len();
            if t < nc {
                u[rows.clone()].copy_from_slice(&plan.free_inputs[t]);
                continue;
            }
            let reference = &plan.tail_reference[t - nc];
            for (r, row) in rows.clone().enumerate() {
                let target = match plan.tail_law {
                    TailLaw::TerminalLaw => (0..x.len()).map(|j| self.gain[(row, j)] * x[j]).sum::<f64>(),
                    TailLaw::HoldLast => plan.free_inputs[nc - 1][r],
                };
                u[row] = plan.lambda * target + (1.0 - plan.lambda) * reference[r];
            }
        }
    }
    fn input_jacobian(&self, _t: usize, _x: &[f64], _z: &[f64], _dx: &mut DMatrix<f64>, _dz: &mut DMatrix<f64>) -> bool {
        false
    }
    fn constrained_inputs(&self, _t: usize) -> std::ops::Range<usize> {
        0..self.m
    }
}

/// A joint plan rolled out from a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub trajectory: Trajectory,
    pub sequence: InputSequence,
    pub cost: f64,
    pub violation: f64,
}

/// Result of one agent's local problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub plan: InputPlan,
    pub lambda: f64,
    /// Joint sequence with the other agents frozen at the previous iterate.
    pub sequence: InputSequence,
    pub cost: f64,
    pub warm_cost: f64,
    pub violation: f64,
}

/// Result of the supervisor's blending problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordination {
    pub gamma: Vec<f64>,
    pub sequence: InputSequence,
    pub cost: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Control horizons used by the local problems of this iteration.
    pub horizons: Vec<usize>,
    pub feasibility_residual: f64,
    /// Wall time of each agent's local solve, seconds.
    pub solve_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationTrace {
    pub initial_cost: f64,
    pub initial_residual: f64,
    pub records: Vec<IterationRecord>,
    pub reason: StopReason,
}

impl NegotiationTrace {
    pub fn final_iteration(&self) -> usize {
        self.records.len()
    }

    pub fn final_cost(&self) -> f64 {
        self.records.last().map_or(self.initial_cost, |r| r.cost)
    }

    /// Costs from the initial plans through every iteration.
    pub fn costs(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost).chain(self.records.iter().map(|r| r.cost)).collect()
    }

    /// Iterations whose cost exceeds the previous one by more than `tol · (1 + |J|)`.
    pub fn monotonicity_violations(&self, tol: f64) -> usize {
        self.costs().windows(2).filter(|w| w[1] > w[0] + tol * (1.0 + w[0].abs())).count()
    }

    pub fn max_residual(&self) -> f64 {
        self.records.iter().map(|r| r.feasibility_residual).fold(self.initial_residual, f64::max)
    }
}

/// Outcome of one time step's negotiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Negotiated {
    pub plans: Vec<InputPlan>,
    pub evaluation: Evaluation,
    /// Horizons after the last iteration's shrink attempts.
    pub horizons: Vec<usize>,
    pub trace: NegotiationTrace,
}

impl Negotiated {
    /// Input applied to the plant: the first entry of the agreed sequence.
    pub fn first_input(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.evaluation.sequence[0])
    }
}

/// Runs the protocol on a fixed plant and terminal design.
#[derive(Debug, Clone)]
pub struct Negotiator<'a> {
    sys: &'a PartitionedSystem,
    term: &'a TerminalIngredients,
    config: NegotiationConfig,
}

impl<'a> Negotiator<'a> {
    pub fn new(
        sys: &'a PartitionedSystem,
        term: &'a TerminalIngredients,
        config: NegotiationConfig,
    ) -> Result<Self, NegotiationError> {
        config.validate()?;
        term.check_compatible(sys)
            .map_err(|e| NegotiationError::InvalidConfig(e.to_string()))?;
        Ok(Negotiator { sys, term, config })
    }

    pub fn config(&self) -> &NegotiationConfig {
        &self.config
    }

    fn horizon(&self) -> usize {
        self.config.prediction_horizon
    }

    fn tol(&self) -> f64 {
        self.config.feasibility_tol
    }

    fn problem<P: InputParameterization>(&self, x0: &[f64], param: P) -> ShootingProblem<'a, P> {
        ShootingProblem::new(self.sys, self.term, x0, self.horizon(), param)
    }

    fn evaluate_at<P: InputParameterization>(
        &self,
        problem: &ShootingProblem<'_, P>,
        z: &[f64],
    ) -> Result<Evaluation, NegotiationError> {
        let trajectory = problem.trajectory(z)?;
        let sequence = trajectory.inputs.iter().map(|u| u.as_slice().to_vec()).collect();
        Ok(Evaluation { sequence, cost: problem.cost(z), violation: problem.violation(z), trajectory })
    }

    /// Rolls out the joint plans from `x0`, computing tail inputs step by step from the
    /// predicted state.
    pub fn materialize(&self, x0: &[f64], plans: &[InputPlan]) -> Result<Evaluation, NegotiationError> {
        if plans.len() != self.sys.num_agents() {
            return Err(NegotiationError::ProtocolViolation(format!(
                "{} plans for {} agents",
                plans.len(),
                self.sys.num_agents()
            )));
        }
        for (i, p) in plans.iter().enumerate() {
            if p.agent != i {
                return Err(NegotiationError::ProtocolViolation(format!("plan {i} belongs to agent {}", p.agent)));
            }
            p.validate(self.sys, self.horizon())?;
        }
        let param = PlanInputs {
            plans,
            rows: (0..plans.len()).map(|i| self.sys.input_range(i)).collect(),
            gain: &self.term.gain,
            bounds: BoxSet::unbounded(0),
            m: self.sys.input_dim(),
        };
        self.evaluate_at(&self.problem(x0, param), &[])
    }

    /// Evaluates a fixed global sequence.
    pub fn evaluate_sequence(&self, x0: &[f64], sequence: &[Vec<f64>]) -> Result<Evaluation, NegotiationError> {
        let plans = self.plans_from_sequence(sequence, &vec![self.horizon(); self.sys.num_agents()]);
        self.materialize(x0, &plans)
    }

    /// `λ = 0` plans reproducing `sequence`, split at the given control horizons.
    pub fn plans_from_sequence(&self, sequence: &[Vec<f64>], horizons: &[usize]) -> Vec<InputPlan> {
        horizons
            .iter()
            .enumerate()
            .map(|(i, nc)| {
                let mut plan = InputPlan::from_sequence(i, *nc, &agent_sequence(self.sys, i, sequence));
                plan.tail_law = self.config.tail_law;
                plan
            })
            .collect()
    }

    /// Feasible starting plans at the first time step: a centralized solve from zero inputs.
    pub fn initial_plans(&self, x0: &[f64], horizons: &[usize]) -> Result<Vec<InputPlan>, NegotiationError> {
        self.config.check_horizons(self.sys, horizons)?;
        let problem = self.problem(x0, CentralizedInputs::new(self.sys, self.horizon()));
        let zero = vec![0.0; problem.dim()];
        let result = solve(&problem, &zero, &self.config.solver)?;
        if result.max_constraint_violation > self.tol() {
            return Err(NegotiationError::InfeasibleInitialization { violation: result.max_constraint_violation });
        }
        let m = self.sys.input_dim();
        let sequence: InputSequence = result.z_star.chunks(m).map(|c| c.to_vec()).collect();
        Ok(self.plans_from_sequence(&sequence, horizons))
    }

    fn local_inputs(&self, agent: usize, horizon: usize, previous: &[Vec<f64>]) -> LocalInputs {
        LocalInputs::new(self.sys, self.term, agent, horizon, previous.to_vec(), self.config.tail_law)
    }

    /// Agent `agent` re-optimizes its first `control_horizon` inputs and `λ` with every
    /// other agent frozen at `previous`, warm-started from its own previous inputs.
    pub fn solve_local(
        &self,
        agent: usize,
        x0: &[f64],
        previous: &[Vec<f64>],
        control_horizon: usize,
    ) -> Result<LocalSolution, NegotiationError> {
        let horizon = control_horizon.min(self.horizon());
        let param = self.local_inputs(agent, horizon, previous);
        let own = agent_sequence(self.sys, agent, previous);
        let warm = param.decision_from(&own, 0.0);
        let problem = self.problem(x0, param);
        let warm_violation = problem.violation(&warm);
        if warm_violation > self.tol() {
            return Err(NegotiationError::ProtocolViolation(format!(
                "warm start of agent {agent} is infeasible (violation {warm_violation:e})"
            )));
        }
        let warm_cost = problem.cost(&warm);
        let result = solve(&problem, &warm, &self.config.solver)?;
        // The solver projects its warm start onto the input box; an iterate sitting outside
        // the box by less than the tolerance is kept as is unless strictly improved upon.
        let mut z = result.z_star;
        let mut eval = self.evaluate_at(&problem, &z)?;
        if eval.violation > self.tol() || eval.cost > warm_cost {
            z = warm.clone();
            eval = self.evaluate_at(&problem, &z)?;
        }
        if eval.violation > self.tol() || eval.cost > warm_cost {
            return Err(NegotiationError::ProtocolViolation(format!(
                "local solution of agent {agent} lost dominance (cost {} vs {}, violation {:e})",
                eval.cost, warm_cost, eval.violation
            )));
        }
        let mi = self.sys.subsystems()[agent].input_dim;
        let lambda = z[horizon * mi];
        let plan = InputPlan {
            agent,
            control_horizon: horizon,
            free_inputs: z[..horizon * mi].chunks(mi).map(|c| c.to_vec()).collect(),
            lambda,
            tail_reference: own[horizon..].to_vec(),
            tail_law: self.config.tail_law,
        };
        Ok(LocalSolution {
            plan,
            lambda,
            sequence: eval.sequence,
            cost: eval.cost,
            warm_cost,
            violation: eval.violation,
        })
    }

    /// Supervisor step: picks `γ ∈ [0,1]^N` blending each agent's proposal with the
    /// previous iterate. Searches from `0`, every unit vector and all ones, then sweeps each
    /// coordinate over five values, keeping the best feasible point.
    pub fn coordinate(
        &self,
        x0: &[f64],
        previous: &[Vec<f64>],
        proposals: &[InputSequence],
    ) -> Result<Coordination, NegotiationError> {
        let n_agents = self.sys.num_agents();
        let problem = self.problem(x0, BlendInputs::new(self.sys, previous.to_vec(), proposals.to_vec()));
        let tol = self.tol();
        let score = |g: &[f64]| (problem.cost(g), problem.violation(g));

        let zero = vec![0.0; n_agents];
        let (c0, v0) = score(&zero);
        if v0 > tol {
            return Err(NegotiationError::ProtocolViolation(format!(
                "previous iterate is infeasible at coordination (violation {v0:e})"
            )));
        }
        let mut best = (zero.clone(), c0);
        let consider = |g: Vec<f64>, cost: f64, violation: f64, best: &mut (Vec<f64>, f64)| {
            if violation <= tol && cost < best.1 {
                *best = (g, cost);
            }
        };

        let mut starts = vec![zero];
        for i in 0..n_agents {
            let mut e = vec![0.0; n_agents];
            e[i] = 1.0;
            starts.push(e);
        }
        if n_agents > 1 {
            starts.push(vec![1.0; n_agents]);
        }
        for start in &starts {
            let (c, v) = score(start);
            consider(start.clone(), c, v, &mut best);
            let r = solve(&problem, start, &self.config.solver)?;
            consider(r.z_star, r.objective_value, r.max_constraint_violation, &mut best);
        }
        for i in 0..n_agents {
            for level in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let mut g = best.0.clone();
                g[i] = level;
                let (c, v) = score(&g);
                consider(g, c, v, &mut best);
            }
        }
        let eval = self.evaluate_at(&problem, &best.0)?;
        Ok(Coordination { gamma: best.0, sequence: eval.sequence, cost: eval.cost, violation: eval.violation })
    }

    /// Whether agent `agent` may drop one control step: the tail law takes over one step
    /// earlier, with the local solution's `λ`. Returns the horizon to use next.
    pub fn try_shrink_horizon(
        &self,
        agent: usize,
        local: &LocalSolution,
        x0: &[f64],
        previous: &[Vec<f64>],
        epsilon: f64,
    ) -> Result<usize, NegotiationError> {
        let nc = local.plan.control_horizon;
        if nc < 2 {
            return Ok(nc);
        }
        let param = self.local_inputs(agent, nc - 1, previous);
        let z = param.decision_from(&local.plan.free_inputs, local.lambda);
        let problem = self.problem(x0, param);
        let violation = problem.violation(&z);
        let cost = problem.cost(&z);
        Ok(if violation <= self.tol() && cost - local.cost <= epsilon { nc - 1 } else { nc })
    }

    /// Negotiates from feasible initial plans until the relative cost decrease falls below
    /// the tolerance or the iteration cap is reached.
    pub fn negotiate(&self, x0: &[f64], initial: &[InputPlan]) -> Result<Negotiated, NegotiationError> {
        let mut horizons: Vec<usize> = initial.iter().map(|p| p.control_horizon).collect();
        self.config.check_horizons(self.sys, &horizons)?;
        let start = self.materialize(x0, initial)?;
        if start.violation > self.tol() {
            return Err(NegotiationError::ProtocolViolation(format!(
                "initial plans are infeasible (violation {:e})",
                start.violation
            )));
        }
        let mut trace = NegotiationTrace {
            initial_cost: start.cost,
            initial_residual: start.violation,
            records: Vec::new(),
            reason: StopReason::MaxIterations,
        };
        let mut current = start;
        let n_agents = self.sys.num_agents();
        for p in 1..=self.config.max_iterations {
            let previous = current.sequence.clone();
            let solve_agent = |i: usize| {
                let started = Instant::now();
                self.solve_local(i, x0, &previous, horizons[i]).map(|l| (l, started.elapsed().as_secs_f64()))
            };
            let timed: Vec<(LocalSolution, f64)> = if self.config.parallel {
                (0..n_agents).into_par_iter().map(solve_agent).collect::<Result<_, _>>()?
            } else {
                (0..n_agents).map(solve_agent).collect::<Result<_, _>>()?
            };
            let (locals, solve_times): (Vec<LocalSolution>, Vec<f64>) = timed.into_iter().unzip();
            let proposals: Vec<InputSequence> = locals.iter().map(|l| l.sequence.clone()).collect();
            let coordination = self.coordinate(x0, &previous, &proposals)?;
            let used = horizons.clone();
            if self.config.adapt_horizons {
                for (i, local) in locals.iter().enumerate() {
                    horizons[i] = self.try_shrink_horizon(i, local, x0, &previous, self.config.epsilon_shrink)?;
                }
            }
            let next = self.evaluate_sequence(x0, &coordination.sequence)?;
            if next.violation > self.tol() {
                return Err(NegotiationError::ProtocolViolation(format!(
                    "iterate {p} is infeasible (violation {:e})",
                    next.violation
                )));
            }
            trace.records.push(IterationRecord {
                iteration: p,
                cost: next.cost,
                lambdas: locals.iter().map(|l| l.lambda).collect(),
                gammas: coordination.gamma.clone(),
                horizons: used,
                feasibility_residual: next.violation,
                solve_times,
            });
            let threshold = self.config.convergence_tol * current.cost.abs();
            let decrease = current.cost - next.cost;
            current = next;
            if decrease <= threshold {
                trace.reason = StopReason::Converged;
                break;
            }
        }
        let plans = self.plans_from_sequence(&current.sequence, &horizons);
        Ok(Negotiated { plans, evaluation: current, horizons, trace })
    }

    /// Warm start for the next time step: drop the first input, append `κ(x(N_p))`, and
    /// check the result is feasible from the successor state.
    pub fn shift_candidate(
        &self,
        agreed: &Evaluation,
        next_state: &[f64],
        horizons: &[usize],
        step: usize,
    ) -> Result<Vec<InputPlan>, NegotiationError> {
        let sequence = shift_sequence(self.term, agreed);
        let plans = self.plans_from_sequence(&sequence, horizons);
        let eval = self.materialize(next_state, &plans)?;
        if eval.violation > self.tol() {
            return Err(NegotiationError::TerminalDesignInvalid { step, violation: eval.violation });
        }
        Ok(plans)
    }
}

/// `(u(1), …, u(N_p − 1), κ(x(N_p)))`.
pub fn shift_sequence(term: &TerminalIngredients, agreed: &Evaluation) -> InputSequence {
    let terminal = term.law(agreed.trajectory.terminal_state().as_slice());
    agreed.sequence[1..]
        .iter()
        .cloned()
        .chain(std::iter::once(terminal.as_slice().to_vec()))
        .collect()
}

/// Initial control horizons for the next time step.
pub fn update_initial_horizons(
    trace: &NegotiationTrace,
    current: &[usize],
    mode: HorizonInit,
    prediction_horizon: usize,
) -> Vec<usize> {
    match mode {
        HorizonInit::Fixed => current.to_vec(),
        HorizonInit::MeanOfPreviousStep => {
            if trace.records.is_empty() {
                return current.to_vec();
            }
            (0..current.len())
                .map(|i| {
                    let count = trace.records.len();
                    let sum: usize = trace.records.iter().map(|r| r.horizons[i]).sum();
                    // floor(sum / count + 1/2)
                    let rounded = (2 * sum + count) / (2 * count);
                    rounded.clamp(1, prediction_horizon)
                })
                .collect()
        }
    }
}
