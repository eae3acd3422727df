//! Scenario files: a TOML description of the system, workspace, predicates,
//! formula and planner settings, plus JSON files of timed predicate updates.
//!
//! ```toml
//! name = "reach-avoid"
//! formula = "(G !unsafe) & (G[8.5,10] goal)"
//! robustness = 0.5
//! deadline = 0.5
//! initial_state = [1.0, 3.0, 0.5, 0.0]
//! weights = [1.0, 1.0]
//!
//! [dynamics]
//! model = "double_integrator_2d"
//! dt = 0.5
//!
//! [workspace]
//! lo = [0.0, 0.0]
//! hi = [10.0, 6.0]
//!
//! [input_bounds]
//! lo = [-2.0, -2.0]
//! hi = [2.0, 2.0]
//!
//! [[predicates]]
//! name = "unsafe"
//! vertices = [[4.0, 2.0], [6.0, 2.0], [6.0, 4.5], [4.0, 4.5]]
//!
//! [[predicates]]
//! name = "goal"
//! a = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
//! b = [9.5, -8.0, 4.0, -2.5]
//!
//! [[placeholders]]
//! name = "obstacle"
//! faces = 4
//! ```
//!
//! Placeholders are unsafe predicates whose geometry is not known up front.
//! They start as a small box outside the workspace and are avoided at all
//! times (`G !name` is conjoined to the formula unless it already mentions
//! them); runtime updates give them real geometry.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{double_integrator_2d, DynamicsError, LinearSystem};
use crate::encoding::PlanningProblem;
use crate::mtl::{self, MtlError, NnfFormula};
use crate::predicate::{Predicate, PredicateError};
use crate::synthesis::PredicateUpdate;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Mtl(#[from] MtlError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

fn default_deadline() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec {
    /// Planar double integrator, state `(x, y, vx, vy)`, input `(ax, ay)`.
    #[serde(rename = "double_integrator_2d")]
    DoubleIntegrator2d { dt: f64 },
    /// Explicit discrete-time matrices; the first `outputs` states are the
    /// coordinates predicates refer to.
    Linear {
        dt: f64,
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        outputs: usize,
    },
}

impl DynamicsSpec {
    pub fn dt(&self) -> f64 {
        match self {
            DynamicsSpec::DoubleIntegrator2d { dt } | DynamicsSpec::Linear { dt, .. } => *dt,
        }
    }

    pub fn build<S: Scalar>(&self) -> Result<LinearSystem<S>, DynamicsError> {
        match self {
            DynamicsSpec::DoubleIntegrator2d { dt } => double_integrator_2d(*dt),
            DynamicsSpec::Linear { dt, a, b, outputs } => LinearSystem::new(
                a.iter()
                    .map(|r| r.iter().map(|&v| S::lit(v)).collect())
                    .collect(),
                b.iter()
                    .map(|r| r.iter().map(|&v| S::lit(v)).collect())
                    .collect(),
                *dt,
                *outputs,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSpec {
    fn check(&self, path: &str, dim: usize) -> Result<(), ScenarioError> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return Err(invalid(
                path,
                format!(
                    "expected {dim} bounds, got lo {} and hi {}",
                    self.lo.len(),
                    self.hi.len()
                ),
            ));
        }
        for (d, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(invalid(
                    format!("{path}.lo[{d}]"),
                    format!("bad interval [{l}, {h}]"),
                ));
            }
        }
        Ok(())
    }
}

/// A named convex set given by 2D vertices or by halfspaces `a y <= b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

impl PredicateSpec {
    pub fn from_vertices(name: impl Into<String>, vertices: Vec<[f64; 2]>) -> Self {
        PredicateSpec {
            name: name.into(),
            vertices: Some(vertices),
            a: None,
            b: None,
        }
    }

    pub fn from_predicate(p: &Predicate<f64>) -> Self {
        PredicateSpec {
            name: p.name.clone(),
            vertices: None,
            a: Some(p.a().to_vec()),
            b: Some(p.b().to_vec()),
        }
    }

    /// Converts to halfspace form and checks the set is non-empty and bounded.
    pub fn build<S: Scalar>(&self, path: &str) -> Result<Predicate<S>, ScenarioError> {
        let pred_err = |e: PredicateError| invalid(path, e.to_string());
        let p = match (&self.vertices, &self.a, &self.b) {
            (Some(v), None, None) => {
                let pts: Vec<[S; 2]> = v.iter().map(|p| [S::lit(p[0]), S::lit(p[1])]).collect();
                Predicate::from_vertices_2d(self.name.clone(), &pts).map_err(pred_err)?
            }
            (None, Some(a), Some(b)) => Predicate::new(
                self.name.clone(),
                a.iter()
                    .map(|r| r.iter().map(|&v| S::lit(v)).collect())
                    .collect(),
                b.iter().map(|&v| S::lit(v)).collect(),
            )
            .map_err(pred_err)?,
            _ => return Err(invalid(path, "give either `vertices` or both `a` and `b`")),
        };
        p.validate().map_err(pred_err)?;
        Ok(p)
    }
}

/// Unsafe predicate reserved for geometry supplied at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceholderSpec {
    pub name: String,
    /// Largest face count an update may use.
    #[serde(default = "default_faces")]
    pub faces: usize,
}

fn default_faces() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub formula: String,
    /// Desired robustness; predicates are resized by this amount.
    pub robustness: f64,
    /// Overrides the horizon implied by the formula.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Per-step planning budget in seconds for receding-horizon runs.
    #[serde(default = "default_deadline")]
    pub deadline: f64,
    pub initial_state: Vec<f64>,
    pub weights: Vec<f64>,
    pub dynamics: DynamicsSpec,
    pub workspace: BoxSpec,
    pub input_bounds: BoxSpec,
    /// Box on the non-output states (velocities for the double integrator).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_bounds: Option<BoxSpec>,
    #[serde(default)]
    pub predicates: Vec<PredicateSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub placeholders: Vec<PlaceholderSpec>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dynamics.dt()
    }

    /// Formula as planned: the declared text conjoined with `G !p` for every
    /// placeholder the text does not mention.
    pub fn effective_formula(&self) -> Result<NnfFormula, ScenarioError> {
        let f = mtl::parse(&self.formula)?;
        let names = f.predicate_names();
        let extra: Vec<String> = self
            .placeholders
            .iter()
            .filter(|p| !names.contains(&p.name))
            .map(|p| format!(" & (G !{})", p.name))
            .collect();
        if extra.is_empty() {
            return Ok(NnfFormula::new(&f)?);
        }
        Ok(NnfFormula::parse(&format!(
            "({}){}",
            self.formula,
            extra.concat()
        ))?)
    }

    pub fn horizon(&self) -> Result<usize, ScenarioError> {
        match self.horizon {
            Some(n) => Ok(n),
            None => Ok(self.effective_formula()?.horizon(self.dt())?),
        }
    }

    pub fn is_placeholder(&self, name: &str) -> bool {
        self.placeholders.iter().any(|p| p.name == name)
    }

    /// Initial geometry of a placeholder: a box just beyond the workspace's
    /// upper corner, padded to the reserved face count.
    pub fn placeholder_geometry<S: Scalar>(
        &self,
        spec: &PlaceholderSpec,
    ) -> Result<Predicate<S>, ScenarioError> {
        let gap = 2.0 * self.robustness + 1.0;
        let lo: Vec<S> = self.workspace.hi.iter().map(|&h| S::lit(h + gap)).collect();
        let hi: Vec<S> = lo.iter().map(|&l| l + S::one()).collect();
        let path = format!("placeholders.{}", spec.name);
        let b = Predicate::axis_box(spec.name.clone(), &lo, &hi)
            .map_err(|e| invalid(&path, e.to_string()))?;
        if spec.faces < b.faces() {
            return Err(invalid(
                format!("{path}.faces"),
                format!("need at least {} faces", b.faces()),
            ));
        }
        b.padded_to(spec.faces)
            .map_err(|e| invalid(path, e.to_string()))
    }

    /// Declared predicates followed by placeholders, in file order.
    pub fn predicates<S: Scalar>(&self) -> Result<Vec<Predicate<S>>, ScenarioError> {
        let mut out = Vec::with_capacity(self.predicates.len() + self.placeholders.len());
        for (i, p) in self.predicates.iter().enumerate() {
            out.push(p.build(&format!("predicates[{i}]"))?);
        }
        for p in &self.placeholders {
            out.push(self.placeholder_geometry(p)?);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let sys = self.dynamics.build::<f64>()?;
        let (nx, nu, ny) = (sys.state_dim(), sys.input_dim(), sys.outputs);
        if !(self.robustness >= 0.0 && self.robustness.is_finite()) {
            return Err(invalid("robustness", "must be finite and non-negative"));
        }
        if !(self.deadline >= 0.0 && self.deadline.is_finite()) {
            return Err(invalid("deadline", "must be finite and non-negative"));
        }
        if self.initial_state.len() != nx {
            return Err(invalid(
                "initial_state",
                format!("expected {nx} entries, got {}", self.initial_state.len()),
            ));
        }
        if self.weights.len() != nu {
            return Err(invalid(
                "weights",
                format!("expected {nu} entries, got {}", self.weights.len()),
            ));
        }
        if let Some(i) = self
            .weights
            .iter()
            .position(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(invalid(
                format!("weights[{i}]"),
                "must be finite and non-negative",
            ));
        }
        self.workspace.check("workspace", ny)?;
        self.input_bounds.check("input_bounds", nu)?;
        if let Some(sb) = &self.state_bounds {
            sb.check("state_bounds", nx - ny)?;
        }
        let mut seen = std::collections::BTreeSet::new();
        let names = self
            .predicates
            .iter()
            .map(|p| &p.name)
            .chain(self.placeholders.iter().map(|p| &p.name));
        for name in names {
            if !seen.insert(name.as_str()) {
                return Err(invalid("predicates", format!("duplicate name `{name}`")));
            }
        }
        let preds = self.predicates::<f64>()?;
        for (i, p) in preds.iter().enumerate().take(self.predicates.len()) {
            if p.dim() != ny {
                return Err(invalid(
                    format!("predicates[{i}]"),
                    format!("dimension {} but the workspace has {ny}", p.dim()),
                ));
            }
        }
        let formula = self.effective_formula()?;
        for o in &formula.occurrences {
            if !seen.contains(o.name.as_str()) {
                return Err(invalid(
                    "formula",
                    format!("unknown predicate `{}`", o.name),
                ));
            }
        }
        if let Some(occ) = formula
            .occurrences
            .iter()
            .find(|o| self.is_placeholder(&o.name) && o.polarity == mtl::Polarity::Safe)
        {
            return Err(invalid(
                "formula",
                format!("placeholder `{}` must only occur negated", occ.name),
            ));
        }
        self.horizon()?;
        Ok(())
    }

    pub fn problem<S: Scalar>(&self) -> Result<PlanningProblem<S>, ScenarioError> {
        let sys = self.dynamics.build::<S>()?;
        let v = |xs: &[f64]| xs.iter().map(|&x| S::lit(x)).collect::<Vec<S>>();
        Ok(PlanningProblem {
            system: sys,
            formula: self.effective_formula()?,
            predicates: self.predicates()?,
            workspace: (v(&self.workspace.lo), v(&self.workspace.hi)),
            state_bounds: self.state_bounds.as_ref().map(|b| (v(&b.lo), v(&b.hi))),
            input_bounds: (v(&self.input_bounds.lo), v(&self.input_bounds.hi)),
            weights: v(&self.weights),
            x0: v(&self.initial_state),
            horizon: self.horizon()?,
            robustness: S::lit(self.robustness),
        })
    }

    /// Converts timed events to step-keyed updates: an event at `t` seconds
    /// takes effect at step `round(t / dt)`.
    pub fn updates<S: Scalar>(
        &self,
        events: &EventFile,
    ) -> Result<Vec<PredicateUpdate<S>>, ScenarioError> {
        let dt = self.dt();
        let known: Vec<&str> = self
            .predicates
            .iter()
            .map(|p| p.name.as_str())
            .chain(self.placeholders.iter().map(|p| p.name.as_str()))
            .collect();
        events
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let path = format!("events[{i}]");
                if !(e.t >= 0.0 && e.t.is_finite()) {
                    return Err(invalid(
                        format!("{path}.t"),
                        "must be finite and non-negative",
                    ));
                }
                if !known.contains(&e.predicate.name.as_str()) {
                    return Err(invalid(
                        format!("{path}.predicate.name"),
                        format!("unknown predicate `{}`", e.predicate.name),
                    ));
                }
                Ok(PredicateUpdate {
                    step: (e.t / dt).round() as usize,
                    name: e.predicate.name.clone(),
                    predicate: e.predicate.build(&format!("{path}.predicate"))?,
                })
            })
            .collect()
    }
}

/// A predicate's new geometry, effective from time `t` (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedEvent {
    pub t: f64,
    pub predicate: PredicateSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventFile {
    pub events: Vec<TimedEvent>,
}

impl EventFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("events serialize to JSON")
    }
}
