//! Cooperative nonlinear distributed MPC where every agent may use its own, possibly
//! shrinking, control horizon.
//!
//! - [`model`]: partitioned plant, constraints, discretization and the finite-horizon cost.
//! - [`terminal`]: terminal law, cost and level set, designed and validated numerically.
//! - [`nlp`]: box/inequality constrained solver with a warm-start dominance guarantee.
//! - [`shooting`]: single-shooting problems (centralized, per-agent, coordination) with
//!   analytic sensitivities.
//! - [`negotiation`]: the iterative agent/supervisor negotiation, shifted warm starts and
//!   control-horizon shrinking.
//! - [`closed_loop`]: receding-horizon simulation with runtime invariant monitoring.
//! - [`benchmark`]: the three-mass spring-damper plant and the sweep/adaptive experiments.
//! - [`config`]: scenario files.

pub mod benchmark;
pub mod closed_loop;
pub mod config;
pub mod model;
pub mod negotiation;
pub mod nlp;
pub mod shooting;
pub mod terminal;

pub use closed_loop::{simulate, ClosedLoopRun, RunMonitor, SimulationSettings};
pub use model::{BoxSet, Discretization, FeasibilityReport, PartitionedSystem, SubsystemSpec, Trajectory, VectorField};
pub use negotiation::{HorizonInit, InputPlan, NegotiationConfig, NegotiationTrace, Negotiator};
pub use nlp::{NlpProblem, SolveResult, SolveStatus, SolverSettings};
pub use terminal::{DesignSettings, TerminalIngredients};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
    #[error("integration blow-up: state component {component} became {value}")]
    IntegrationBlowup { component: usize, value: f64 },
    #[error("origin is not an equilibrium: |f(0, 0)| = {norm:e}")]
    NotEquilibrium { norm: f64 },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid subsystem: {0}")]
    InvalidSubsystem(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerminalError {
    #[error("design error: origin is not an equilibrium (|f(0, 0)| = {norm:e})")]
    NotEquilibrium { norm: f64 },
    #[error("unstabilizable linearization (Riccati iteration diverged)")]
    Unstabilizable,
    #[error("terminal design failed, reduce margin")]
    DesignFailed,
    #[error("decrease margin {0} outside [0, {max}]", max = terminal::MAX_DECREASE_MARGIN)]
    InvalidMargin(f64),
    #[error("at least 1000 samples are needed to estimate alpha, got {0}")]
    TooFewSamples(usize),
    #[error("invalid terminal ingredients: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("warm start has non-finite objective {0}")]
    NonFiniteWarmStart(f64),
    #[error("warm start has {got} entries, problem dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Failures of the negotiation protocol. Any of these means an invariant that the
/// construction guarantees has been broken.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NegotiationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("terminal design invalid: shifted candidate infeasible at step {step} (violation {violation:e})")]
    TerminalDesignInvalid { step: usize, violation: f64 },
    #[error("no feasible initial input sequence (violation {violation:e})")]
    InfeasibleInitialization { violation: f64 },
    #[error("invalid negotiation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Terminal(#[from] TerminalError),
}

/// Any failure of a simulation run.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Terminal(#[from] TerminalError),
    #[error(transparent)]
    Negotiation(#[from] NegotiationError),
    #[error("grid point (Nc2={nc2}, Nc3={nc3})")]
    GridPoint { nc2: usize, nc3: usize, source: Box<Error> },
}
