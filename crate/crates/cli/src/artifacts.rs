//! Artifact files shared by `plan`, `rhc` and `plot`.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use lazymtl::dynamics::{track, TrackingOptions};
use lazymtl::mtl::NnfFormula;
use lazymtl::robustness::Witness;
use lazymtl::scenario::{DynamicsSpec, Scenario};

pub const SCENARIO: &str = "scenario.toml";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const INPUTS: &str = "inputs.csv";
pub const UNICYCLE: &str = "unicycle.csv";
pub const WITNESS: &str = "witness.json";
pub const ACTIVATIONS: &str = "activations.csv";
pub const SUMMARY: &str = "summary.json";
pub const STEPS: &str = "steps.jsonl";
pub const EVENTS: &str = "events.json";

/// Column labels for states and inputs.
pub fn labels(s: &Scenario, nx: usize, nu: usize) -> (Vec<String>, Vec<String>) {
    match s.dynamics {
        DynamicsSpec::DoubleIntegrator2d { .. } => (
            ["x", "y", "vx", "vy"].map(String::from).to_vec(),
            ["ux", "uy"].map(String::from).to_vec(),
        ),
        DynamicsSpec::Linear { .. } => (
            (0..nx).map(|i| format!("x{i}")).collect(),
            (0..nu).map(|i| format!("u{i}")).collect(),
        ),
    }
}

/// `k,t,<states>,<inputs>`; the last row has no input.
pub fn write_trajectory(
    path: &Path,
    s: &Scenario,
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
) -> Result<()> {
    let nx = states.first().map_or(0, Vec::len);
    let nu = inputs.first().map_or(s.weights.len(), Vec::len);
    let (xl, ul) = labels(s, nx, nu);
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend(xl);
    header.extend(ul);
    w.write_record(&header)?;
    for (k, x) in states.iter().enumerate() {
        let mut row = vec![k.to_string(), fmt(k as f64 * s.dt())];
        row.extend(x.iter().map(|&v| fmt(v)));
        match inputs.get(k) {
            Some(u) => row.extend(u.iter().map(|&v| fmt(v))),
            None => row.extend(std::iter::repeat_n(String::new(), nu)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_inputs(path: &Path, s: &Scenario, inputs: &[Vec<f64>]) -> Result<()> {
    let nu = inputs.first().map_or(s.weights.len(), Vec::len);
    let (_, ul) = labels(s, 0, nu);
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend(ul);
    w.write_record(&header)?;
    for (k, u) in inputs.iter().enumerate() {
        let mut row = vec![k.to_string(), fmt(k as f64 * s.dt())];
        row.extend(u.iter().map(|&v| fmt(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Unicycle trace under the feedback-linearizing controller, for the planar
/// double integrator only. Returns a note when it cannot be produced.
pub fn write_unicycle(
    path: &Path,
    s: &Scenario,
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
) -> Result<Option<String>> {
    if !matches!(s.dynamics, DynamicsSpec::DoubleIntegrator2d { .. }) || states.is_empty() {
        return Ok(Some(
            "unicycle trace needs the planar double integrator".into(),
        ));
    }
    let run = match track(&states[0], inputs, s.dt(), &TrackingOptions::default()) {
        Ok(r) => r,
        Err(e) => return Ok(Some(format!("unicycle trace skipped: {e}"))),
    };
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["t", "x", "y", "theta", "v", "omega", "vr", "vl"])?;
    for p in &run.trace {
        let st = p.state;
        w.write_record(
            [
                p.t,
                st.x,
                st.y,
                st.theta,
                st.v,
                p.omega,
                p.wheel_right,
                p.wheel_left,
            ]
            .map(fmt),
        )?;
    }
    w.flush()?;
    Ok(None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessView {
    pub value: f64,
    pub index: usize,
    pub t: f64,
    pub occurrence: usize,
    pub predicate: String,
}

impl WitnessView {
    pub fn new(w: &Witness<f64>, f: &NnfFormula, dt: f64) -> Self {
        WitnessView {
            value: w.value,
            index: w.index,
            t: w.index as f64 * dt,
            occurrence: w.occurrence,
            predicate: f
                .occurrences
                .get(w.occurrence)
                .map(|o| o.name.clone())
                .unwrap_or_default(),
        }
    }
}

pub fn write_activations(
    path: &Path,
    f: &NnfFormula,
    dt: f64,
    acts: &[(usize, usize)],
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["order", "occurrence", "predicate", "k", "t"])?;
    for (i, &(o, k)) in acts.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            o.to_string(),
            f.occurrences[o].name.clone(),
            k.to_string(),
            fmt(k as f64 * dt),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Shortest representation that round-trips.
pub fn fmt(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// Reads `trajectory.csv`-style files: returns the header and numeric rows
/// (empty cells become NaN).
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(f64::NAN)
                } else {
                    c.parse::<f64>().with_context(|| {
                        format!("{}: row {}, column `{}`", path.display(), i + 2, header[j])
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
