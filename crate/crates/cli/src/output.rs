//! CSV artifacts. Floats use `Display`, the shortest text that parses back to the same value.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use dmpc_core::benchmark::{HorizonSample, SweepRow};
use dmpc_core::ClosedLoopRun;

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

/// `k, x1…xn, u1…um`, one row per time step `0..=T`.
pub fn write_trajectory(path: &Path, run: &ClosedLoopRun) -> Result<()> {
    let n = run.states[0].len();
    let m = run.inputs[0].len();
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("k".to_string()).chain(numbered("x", n)).chain(numbered("u", m)).collect();
    w.write_record(&header)?;
    for (k, (x, u)) in run.states.iter().zip(&run.inputs).enumerate() {
        let row: Vec<String> = std::iter::once(k.to_string())
            .chain(x.iter().map(f64::to_string))
            .chain(u.iter().map(f64::to_string))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `k, p, J, λ1…λN, γ1…γN, Nc1…NcN, feas_residual`, one row per negotiation iteration.
pub fn write_trace(path: &Path, run: &ClosedLoopRun) -> Result<()> {
    let agents = run.traces.iter().flat_map(|t| t.records.first()).map(|r| r.horizons.len()).next().unwrap_or(0);
    let mut w = writer(path)?;
    let header: Vec<String> = ["k", "p", "J"]
        .into_iter()
        .map(String::from)
        .chain(numbered("lambda", agents))
        .chain(numbered("gamma", agents))
        .chain(numbered("Nc", agents))
        .chain(std::iter::once("feas_residual".to_string()))
        .collect();
    w.write_record(&header)?;
    for (k, trace) in run.traces.iter().enumerate() {
        for r in &trace.records {
            let row: Vec<String> = [k.to_string(), r.iteration.to_string(), r.cost.to_string()]
                .into_iter()
                .chain(r.lambdas.iter().map(f64::to_string))
                .chain(r.gammas.iter().map(f64::to_string))
                .chain(r.horizons.iter().map(usize::to_string))
                .chain(std::iter::once(r.feasibility_residual.to_string()))
                .collect();
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `global_iteration, k, p, Nc1…NcN`.
pub fn write_horizons(path: &Path, series: &[HorizonSample]) -> Result<()> {
    let agents = series.first().map_or(0, |s| s.horizons.len());
    let mut w = writer(path)?;
    let header: Vec<String> =
        ["global_iteration", "k", "p"].into_iter().map(String::from).chain(numbered("Nc", agents)).collect();
    w.write_record(&header)?;
    for s in series {
        let row: Vec<String> = [s.global_iteration, s.step, s.iteration]
            .into_iter()
            .chain(s.horizons.iter().copied())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `nc1, nc2, nc3, jcc, iterations` in grid order.
pub fn write_sweep(path: &Path, nc1: usize, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["nc1", "nc2", "nc3", "jcc", "iterations"])?;
    for r in rows {
        w.write_record([
            nc1.to_string(),
            r.nc2.to_string(),
            r.nc3.to_string(),
            r.jcc.to_string(),
            r.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
