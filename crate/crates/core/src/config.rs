//! TOML scenario files for the three-mass benchmark.
//!
//! ```toml
//! schema_version = 1
//!
//! [system]
//! initial_state = [0.6, 0.0, -0.6, 0.0, 0.45, 0.0]
//! steps = 60
//!
//! [horizons]
//! control = [10, 12, 16]
//! ```
//!
//! Every section and field is optional and falls back to the benchmark defaults; unknown
//! keys are rejected.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::benchmark::{
    build_benchmark, BenchmarkBounds, BenchmarkWeights, Scenario, SweepSpec, ThreeMassParams, DEFAULT_INITIAL_STATE,
    DEFAULT_SAMPLE_TIME, DEFAULT_STEPS,
};
use crate::closed_loop::SimulationSettings;
use crate::model::Discretization;
use crate::negotiation::{HorizonInit, NegotiationConfig};
use crate::nlp::SolverSettings;
use crate::shooting::TailLaw;
use crate::terminal::{design_terminal, DesignSettings, TerminalIngredients, TerminalSpec};
use crate::ConfigError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub params: ThreeMassParams,
    pub sample_time: f64,
    pub discretization: Discretization,
    pub initial_state: Vec<f64>,
    pub steps: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            params: ThreeMassParams::default(),
            sample_time: DEFAULT_SAMPLE_TIME,
            discretization: Discretization::Rk4,
            initial_state: DEFAULT_INITIAL_STATE.to_vec(),
            steps: DEFAULT_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonSection {
    pub control: Vec<usize>,
    /// Defaults to the largest control horizon.
    pub prediction: Option<usize>,
}

impl Default for HorizonSection {
    fn default() -> Self {
        HorizonSection { control: vec![10, 12, 16], prediction: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegotiationSection {
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub epsilon_shrink: f64,
    /// Unset: off for fixed-horizon runs, on for adaptive runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapt_horizons: Option<bool>,
    pub horizon_init: HorizonInit,
    pub tail_law: TailLaw,
    pub parallel: bool,
}

impl Default for NegotiationSection {
    fn default() -> Self {
        let d = NegotiationConfig::default();
        NegotiationSection {
            max_iterations: d.max_iterations,
            convergence_tol: d.convergence_tol,
            epsilon_shrink: d.epsilon_shrink,
            adapt_horizons: None,
            horizon_init: d.horizon_init,
            tail_law: d.tail_law,
            parallel: d.parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSection {
    pub feasibility: f64,
    pub optimality: f64,
    pub monotonicity: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        let s = SolverSettings::default();
        ToleranceSection {
            feasibility: s.feasibility_tol,
            optimality: s.optimality_tol,
            monotonicity: SimulationSettings::default().monotonicity_tol,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminalSection {
    pub decrease_margin: f64,
    pub samples: usize,
    pub alpha_upper: f64,
    /// A previously validated design; skips the design step when present.
    pub pinned: Option<TerminalSpec>,
}

impl Default for TerminalSection {
    fn default() -> Self {
        let d = DesignSettings::default();
        TerminalSection { decrease_margin: d.decrease_margin, samples: d.samples, alpha_upper: d.alpha_upper, pinned: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub terminal_design: u64,
    pub terminal_validation: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        SeedSection { terminal_design: DesignSettings::default().seed, terminal_validation: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub nc1: usize,
    pub nc2: Vec<usize>,
    pub nc3: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        let grid = vec![8, 12, 16, 20, 24];
        SweepSection { nc1: 10, nc2: grid.clone(), nc3: grid }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<String>,
}

/// Everything needed to reproduce a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub weights: BenchmarkWeights,
    #[serde(default)]
    pub bounds: BenchmarkBounds,
    #[serde(default)]
    pub horizons: HorizonSection,
    #[serde(default)]
    pub negotiation: NegotiationSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub terminal: TerminalSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            system: SystemSection::default(),
            weights: BenchmarkWeights::default(),
            bounds: BenchmarkBounds::default(),
            horizons: HorizonSection::default(),
            negotiation: NegotiationSection::default(),
            tolerances: ToleranceSection::default(),
            terminal: TerminalSection::default(),
            seeds: SeedSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

impl ScenarioConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn prediction_horizon(&self) -> usize {
        self.horizons
            .prediction
            .unwrap_or_else(|| self.horizons.control.iter().copied().max().unwrap_or(1))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        let sys = &self.system;
        sys.params.validate()?;
        if !(sys.sample_time > 0.0) || !sys.sample_time.is_finite() {
            return Err(invalid("system.sample_time", "must be positive"));
        }
        if sys.steps == 0 {
            return Err(invalid("system.steps", "must be >= 1"));
        }
        if sys.initial_state.len() != 6 {
            return Err(invalid("system.initial_state", format!("needs 6 entries, got {}", sys.initial_state.len())));
        }
        let b = &self.bounds;
        if ![b.position, b.velocity, b.input].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(invalid("bounds", "bounds must be positive and finite"));
        }
        for (j, v) in sys.initial_state.iter().enumerate() {
            let limit = if j % 2 == 0 { b.position } else { b.velocity };
            if !(v.abs() < limit) {
                return Err(invalid(
                    "system.initial_state",
                    format!("component {j} = {v} is not strictly inside [-{limit}, {limit}]"),
                ));
            }
        }
        if self.weights.q.iter().any(|q| !(*q >= 0.0)) || self.weights.r.iter().any(|r| !(*r > 0.0)) {
            return Err(invalid("weights", "state weights must be >= 0 and input weights > 0"));
        }
        let np = self.prediction_horizon();
        let control = &self.horizons.control;
        if control.len() != 3 {
            return Err(invalid("horizons.control", format!("needs 3 entries, got {}", control.len())));
        }
        if let Some(nc) = control.iter().find(|nc| **nc == 0 || **nc > np) {
            return Err(invalid("horizons.control", format!("control horizon {nc} outside [1, N_p = {np}]")));
        }
        let n = &self.negotiation;
        if n.max_iterations == 0 {
            return Err(invalid("negotiation.max_iterations", "must be >= 1"));
        }
        if !(n.epsilon_shrink >= 0.0) {
            return Err(invalid("negotiation.epsilon_shrink", "must be >= 0"));
        }
        if !(n.convergence_tol >= 0.0) {
            return Err(invalid("negotiation.convergence_tol", "must be >= 0"));
        }
        let t = &self.tolerances;
        if !(t.feasibility > 0.0) || !(t.optimality > 0.0) || !(t.monotonicity >= 0.0) {
            return Err(invalid("tolerances", "tolerances must be positive"));
        }
        if t.max_outer == 0 || t.max_inner == 0 {
            return Err(invalid("tolerances", "iteration limits must be >= 1"));
        }
        if let Some(spec) = &self.terminal.pinned {
            TerminalIngredients::try_from(spec.clone())?;
        }
        SweepSpec { nc1: self.sweep.nc1, nc2_grid: self.sweep.nc2.clone(), nc3_grid: self.sweep.nc3.clone() }
            .validate()
            .map_err(|m| invalid("sweep", m))?;
        Ok(())
    }

    pub fn design_settings(&self) -> DesignSettings {
        DesignSettings {
            decrease_margin: self.terminal.decrease_margin,
            samples: self.terminal.samples,
            seed: self.seeds.terminal_design,
            alpha_upper: self.terminal.alpha_upper,
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            feasibility_tol: self.tolerances.feasibility,
            optimality_tol: self.tolerances.optimality,
            max_outer: self.tolerances.max_outer,
            max_inner: self.tolerances.max_inner,
            ..SolverSettings::default()
        }
    }

    pub fn negotiation_config(&self) -> NegotiationConfig {
        let n = &self.negotiation;
        NegotiationConfig {
            prediction_horizon: self.prediction_horizon(),
            max_iterations: n.max_iterations,
            convergence_tol: n.convergence_tol,
            epsilon_shrink: n.epsilon_shrink,
            adapt_horizons: n.adapt_horizons.unwrap_or(false),
            horizon_init: n.horizon_init,
            tail_law: n.tail_law,
            feasibility_tol: self.tolerances.feasibility,
            parallel: n.parallel,
            solver: self.solver_settings(),
        }
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec { nc1: self.sweep.nc1, nc2_grid: self.sweep.nc2.clone(), nc3_grid: self.sweep.nc3.clone() }
    }

    /// Builds the plant, designs (or loads) the terminal ingredients and assembles the run.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let system = build_benchmark(
            &self.system.params,
            &self.weights,
            &self.bounds,
            self.system.sample_time,
            self.system.discretization,
        )?;
        let terminal = match &self.terminal.pinned {
            Some(spec) => TerminalIngredients::try_from(spec.clone())?,
            None => design_terminal(&system, &self.design_settings())?,
        };
        terminal.check_compatible(&system)?;
        Ok(Scenario {
            system,
            terminal,
            initial_state: DVector::from_vec(self.system.initial_state.clone()),
            steps: self.system.steps,
            negotiation: self.negotiation_config(),
            horizons: self.horizons.control.clone(),
            simulation: SimulationSettings { monotonicity_tol: self.tolerances.monotonicity },
        })
    }
}
