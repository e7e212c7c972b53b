//! Re-checks stored trajectory and trace CSVs against the closed-loop invariants.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dmpc_core::benchmark::{jcc, Scenario};
use nalgebra::DVector;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .with_context(|| format!("{}: data row {} has a non-numeric field", path.display(), line + 1))?;
        if row.len() != header.len() {
            bail!("{}: data row {} has {} fields, header has {}", path.display(), line + 1, row.len(), header.len());
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn expect_header(path: &Path, got: &[String], expected: &[String]) -> Result<()> {
    if got != expected {
        bail!("{}: header {:?} does not match expected {:?}", path.display(), got, expected);
    }
    Ok(())
}

fn names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

pub fn audit_trajectory(path: &Path, scenario: &Scenario, tol: f64) -> Result<Vec<Check>> {
    let sys = &scenario.system;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let (header, rows) = read_table(path)?;
    let expected: Vec<String> =
        std::iter::once("k".to_string()).chain(names("x", n)).chain(names("u", m)).collect();
    expect_header(path, &header, &expected)?;
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let steps_ok = rows.iter().enumerate().all(|(k, r)| r[0] == k as f64);
    let states: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(&r[1..=n])).collect();
    let inputs: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(&r[n + 1..])).collect();

    let state_excess = states.iter().map(|x| sys.state_box().excess(x.as_slice())).fold(0.0, f64::max);
    let input_excess = inputs.iter().map(|u| sys.input_box().excess(u.as_slice())).fold(0.0, f64::max);
    let mut dynamics = 0.0f64;
    for k in 0..states.len() - 1 {
        let next = sys.discretize_step(&states[k], &inputs[k])?;
        let scale = 1.0 + next.amax();
        dynamics = dynamics.max((next - &states[k + 1]).amax() / scale);
    }
    let start_gap = (&states[0] - &scenario.initial_state).amax();
    Ok(vec![
        check("time index", steps_ok, format!("{} rows, k = 0..{}", rows.len(), rows.len() - 1)),
        check("initial state", start_gap == 0.0, format!("max deviation from config x(0) {start_gap:e}")),
        check("state constraints", state_excess <= tol, format!("max excess {state_excess:e}")),
        check("input constraints", input_excess <= tol, format!("max excess {input_excess:e}")),
        check("plant dynamics", dynamics <= 1e-9, format!("max relative one-step residual {dynamics:e}")),
        check("closed-loop cost", true, format!("J_cc = {}", jcc(sys, &states, &inputs))),
    ])
}

pub fn audit_trace(path: &Path, scenario: &Scenario, tol: f64, monotonicity_tol: f64) -> Result<Vec<Check>> {
    let agents = scenario.system.num_agents();
    let np = scenario.negotiation.prediction_horizon as f64;
    let (header, rows) = read_table(path)?;
    let expected: Vec<String> = ["k", "p", "J"]
        .into_iter()
        .map(String::from)
        .chain(names("lambda", agents))
        .chain(names("gamma", agents))
        .chain(names("Nc", agents))
        .chain(std::iter::once("feas_residual".to_string()))
        .collect();
    expect_header(path, &header, &expected)?;
    let nc_cols = 3 + 2 * agents..3 + 3 * agents;
    let feas_col = 3 + 3 * agents;
    let rises = |a: f64, b: f64| b > a + monotonicity_tol * (1.0 + a.abs());

    let mut iteration_violations = 0;
    let mut horizon_increases = 0;
    let mut finals: Vec<f64> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let same_step = i > 0 && rows[i - 1][0] == r[0];
        if same_step {
            let prev = &rows[i - 1];
            if rises(prev[2], r[2]) {
                iteration_violations += 1;
            }
            horizon_increases += nc_cols.clone().filter(|c| r[*c] > prev[*c]).count();
            *finals.last_mut().expect("step started") = r[2];
        } else {
            finals.push(r[2]);
        }
    }
    let step_violations = finals.windows(2).filter(|w| rises(w[0], w[1])).count();
    let worst_residual = rows.iter().map(|r| r[feas_col]).fold(0.0, f64::max);
    let horizons_in_range = rows.iter().all(|r| nc_cols.clone().all(|c| r[c] >= 1.0 && r[c] <= np));
    let weights_in_range = rows.iter().all(|r| (3..3 + 2 * agents).all(|c| (0.0..=1.0).contains(&r[c])));
    Ok(vec![
        check("iteration monotonicity", iteration_violations == 0, format!("{iteration_violations} violations in {} rows", rows.len())),
        check("step monotonicity", step_violations == 0, format!("{step_violations} violations over {} steps", finals.len())),
        check("feasibility", worst_residual <= tol, format!("max residual {worst_residual:e}")),
        check("horizons non-increasing within steps", horizon_increases == 0, format!("{horizon_increases} increases")),
        check("horizons within [1, N_p]", horizons_in_range, format!("N_p = {np}")),
        check("lambda and gamma within [0, 1]", weights_in_range, String::new()),
    ])
}
