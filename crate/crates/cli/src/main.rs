//! `dmpc`: closed-loop runs, horizon sweeps, adaptive runs, terminal validation and CSV
//! audits on the three-mass benchmark.

mod audit;
mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dmpc_core::benchmark::{horizon_series, run_adaptive, run_sweep, Scenario, SweepSpec};
use dmpc_core::config::ScenarioConfig;
use dmpc_core::negotiation::HorizonInit;
use dmpc_core::terminal::validate_terminal;
use dmpc_core::ClosedLoopRun;

#[derive(Parser, Debug)]
#[command(name = "dmpc", version, about = "Cooperative distributed MPC with per-agent control horizons")]
struct Cli {
    /// Scenario file (TOML); built-in benchmark defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for CSV output; falls back to the config's `output.dir`, then `out`.
    #[arg(long, global = true, env = "DMPC_OUT_DIR")]
    out_dir: Option<PathBuf>,

    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One closed-loop simulation with fixed control horizons.
    Run,
    /// Fixed-horizon runs over an (Nc2, Nc3) grid.
    Sweep {
        /// Nc2 values as start:step:stop (inclusive) or a single value.
        #[arg(long, value_parser = parse_range)]
        nc2: Option<Grid>,
        /// Nc3 values as start:step:stop (inclusive) or a single value.
        #[arg(long, value_parser = parse_range)]
        nc3: Option<Grid>,
    },
    /// Closed loop with horizon shrinking and mean-based re-initialization.
    Adapt {
        /// Shrink threshold, overriding `negotiation.epsilon_shrink`.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Designs the terminal ingredients and re-checks them on fresh samples.
    ValidateTerminal {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Sampling seed, overriding `seeds.terminal_validation`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-checks stored trajectory and trace CSVs against the run invariants.
    Audit {
        /// Trajectory CSV; defaults to `trajectory.csv` in the output directory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Trace CSV; defaults to `trace.csv` in the output directory if it exists.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Grid(Vec<usize>);

/// `start:step:stop`, inclusive, or a single value.
fn parse_range(text: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("`{s}` is not a non-negative integer"));
    match parts.as_slice() {
        [single] => Ok(Grid(vec![num(single)?])),
        [start, step, stop] => {
            let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
            if step == 0 {
                return Err("step must be positive".into());
            }
            if start > stop {
                return Err(format!("start {start} exceeds stop {stop}"));
            }
            Ok(Grid((start..=stop).step_by(step).collect()))
        }
        _ => Err(format!("expected start:step:stop, got `{text}`")),
    }
}

struct RunSummary {
    jcc: f64,
    steps: usize,
    total_iterations: usize,
    max_feasibility_violation: f64,
    monotonicity_violations: usize,
    wall_time: f64,
}

impl RunSummary {
    fn of(run: &ClosedLoopRun) -> Self {
        RunSummary {
            jcc: run.jcc,
            steps: run.steps(),
            total_iterations: run.total_iterations(),
            max_feasibility_violation: run.monitor.max_feasibility_violation,
            monotonicity_violations: run.monitor.monotonicity_violations(),
            wall_time: run.wall_time,
        }
    }

    fn failures(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        if self.monotonicity_violations > 0 {
            out.push(format!("cost monotonicity ({} violations)", self.monotonicity_violations));
        }
        if self.max_feasibility_violation > tol {
            out.push(format!("recursive feasibility (residual {:e} > {tol:e})", self.max_feasibility_violation));
        }
        out
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "jcc                        {}", self.jcc)?;
        writeln!(f, "steps                      {}", self.steps)?;
        writeln!(f, "total_iterations           {}", self.total_iterations)?;
        writeln!(f, "max_feasibility_violation  {:e}", self.max_feasibility_violation)?;
        writeln!(f, "monotonicity_violations    {}", self.monotonicity_violations)?;
        write!(f, "wall_time                  {:.3} s", self.wall_time)
    }
}

struct Session {
    config: ScenarioConfig,
    out_dir: PathBuf,
}

impl Session {
    fn load(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => ScenarioConfig::from_path(path)?,
            None => ScenarioConfig::default(),
        };
        let out_dir = cli
            .out_dir
            .clone()
            .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Session { config, out_dir })
    }

    fn output(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create output directory {}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }

    fn feasibility_tol(&self) -> f64 {
        self.config.tolerances.feasibility
    }
}

fn fixed_horizons(mut scenario: Scenario) -> Scenario {
    scenario.negotiation.adapt_horizons = false;
    scenario.negotiation.horizon_init = HorizonInit::Fixed;
    scenario
}

fn write_run(session: &Session, run: &ClosedLoopRun) -> Result<()> {
    let trajectory = session.output("trajectory.csv")?;
    let trace = session.output("trace.csv")?;
    output::write_trajectory(&trajectory, run)?;
    output::write_trace(&trace, run)?;
    println!("wrote {} and {}", trajectory.display(), trace.display());
    Ok(())
}

fn verdict(failures: &[String]) -> ExitCode {
    if failures.is_empty() {
        println!("all invariants hold");
        ExitCode::SUCCESS
    } else {
        for f in failures {
            eprintln!("invariant failed: {f}");
        }
        ExitCode::FAILURE
    }
}

fn cmd_run(session: &Session) -> Result<ExitCode> {
    let scenario = fixed_horizons(session.config.build()?);
    let run = scenario.run()?;
    write_run(session, &run)?;
    let summary = RunSummary::of(&run);
    println!("{summary}");
    Ok(verdict(&summary.failures(session.feasibility_tol())))
}

fn cmd_sweep(session: &Session, nc2: Option<Grid>, nc3: Option<Grid>) -> Result<ExitCode> {
    let mut config = session.config.clone();
    if let Some(Grid(values)) = nc2 {
        config.sweep.nc2 = values;
    }
    if let Some(Grid(values)) = nc3 {
        config.sweep.nc3 = values;
    }
    config.validate()?;
    let spec: SweepSpec = config.sweep_spec();
    let scenario = config.build()?;
    let started = Instant::now();
    let rows = run_sweep(&scenario, &spec)?;
    let path = session.output("sweep.csv")?;
    output::write_sweep(&path, spec.nc1, &rows)?;
    println!("{:>4} {:>4} {:>4} {:>22} {:>10}", "nc1", "nc2", "nc3", "jcc", "iterations");
    for r in &rows {
        println!("{:>4} {:>4} {:>4} {:>22} {:>10}", spec.nc1, r.nc2, r.nc3, r.jcc, r.iterations);
    }
    println!("{} grid points in {:.1} s, wrote {}", rows.len(), started.elapsed().as_secs_f64(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_adapt(session: &Session, epsilon: Option<f64>) -> Result<ExitCode> {
    let mut config = session.config.clone();
    if let Some(e) = epsilon {
        config.negotiation.epsilon_shrink = e;
    }
    config.validate()?;
    let scenario = config.build()?;
    let adapt = config.negotiation.adapt_horizons.unwrap_or(true);
    let (run, series) = if adapt {
        run_adaptive(&scenario)?
    } else {
        let run = fixed_horizons(scenario).run()?;
        let series = horizon_series(&run);
        (run, series)
    };
    write_run(session, &run)?;
    let path = session.output("horizons.csv")?;
    output::write_horizons(&path, &series)?;
    println!("wrote {}", path.display());
    println!("adapt_horizons             {adapt}");
    println!("epsilon_shrink             {}", config.negotiation.epsilon_shrink);
    if let Some(last) = series.last() {
        println!("final_horizons             {:?}", last.horizons);
    }
    let summary = RunSummary::of(&run);
    println!("{summary}");
    let mut failures = summary.failures(session.feasibility_tol());
    let increases = series
        .windows(2)
        .filter(|w| w[0].step == w[1].step)
        .filter(|w| w[0].horizons.iter().zip(&w[1].horizons).any(|(a, b)| b > a))
        .count();
    if increases > 0 {
        failures.push(format!("horizons non-increasing within a step ({increases} increases)"));
    }
    Ok(verdict(&failures))
}

fn cmd_validate_terminal(session: &Session, samples: usize, seed: Option<u64>) -> Result<ExitCode> {
    let scenario = session.config.build()?;
    let seed = seed.unwrap_or(session.config.seeds.terminal_validation);
    let started = Instant::now();
    let report = validate_terminal(&scenario.system, &scenario.terminal, samples, seed);
    println!("alpha                      {}", report.alpha);
    println!("samples                    {} (seed {seed})", report.samples);
    println!("max_decrease_residual      {:e}", report.max_residual);
    println!("max_set_violation          {:e}", report.max_set_violation);
    println!("wall_time                  {:.3} s", started.elapsed().as_secs_f64());
    println!("verdict                    {}", if report.passed { "pass" } else { "fail" });
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_audit(session: &Session, trajectory: Option<PathBuf>, trace: Option<PathBuf>) -> Result<ExitCode> {
    let scenario = session.config.build()?;
    let tol = session.feasibility_tol();
    let trajectory = trajectory.unwrap_or_else(|| session.out_dir.join("trajectory.csv"));
    let trace = trace.or_else(|| Some(session.out_dir.join("trace.csv")).filter(|p| Path::exists(p)));
    let mut checks = audit::audit_trajectory(&trajectory, &scenario, tol)?;
    if let Some(trace) = &trace {
        checks.extend(audit::audit_trace(trace, &scenario, tol, session.config.tolerances.monotonicity)?);
    }
    let mut failures = Vec::new();
    for c in &checks {
        println!("{:<40} {:<4} {}", c.name, if c.passed { "ok" } else { "FAIL" }, c.detail);
        if !c.passed {
            failures.push(c.name.to_string());
        }
    }
    Ok(verdict(&failures))
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global()?;
    }
    let session = Session::load(&cli)?;
    match cli.command {
        Command::Run => cmd_run(&session),
        Command::Sweep { nc2, nc3 } => cmd_sweep(&session, nc2, nc3),
        Command::Adapt { epsilon } => cmd_adapt(&session, epsilon),
        Command::ValidateTerminal { samples, seed } => cmd_validate_terminal(&session, samples, seed),
        Command::Audit { trajectory, trace } => cmd_audit(&session, trajectory, trace),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
