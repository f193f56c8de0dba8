//! Scenario files: a JSON description of one fusion episode.
//!
//! ```json
//! {
//!   "mode": "homogeneous",
//!   "state_dim": 2,
//!   "sensors": [{ "position": [0.0, 0.0], "noise_var": 0.25 }],
//!   "graph": { "nodes": 1, "edges": [] },
//!   "truth": [3.0, 4.0],
//!   "priors": [{ "components": [
//!     { "weight": 1.0, "mean": [3.0, 3.5], "cov": [[1.0, 0.0], [0.0, 1.0]] }
//!   ] }],
//!   "consensus": { "tol": 1e-10, "max_iters": 10000 },
//!   "seed": 7,
//!   "emit_particles": 0
//! }
//! ```
//!
//! Optional fields: `dynamics` (`{ "f": [[..]], "q": [[..]] }`, applied once
//! to the priors and the truth before fusion), `measurements` (one value per
//! sensor, replacing simulated ones), `linearization` (`"ekf"` or
//! `"literal"`) and `prune_threshold` (heterogeneous mode).

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::LinearDynamics;
use crate::gmm::{Gaussian, GaussianMixture, WEIGHT_SUM_TOLERANCE};
use crate::network::{ConsensusConfig, SensorGraph, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::sensing::{LinearizationMode, RangeSensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Homogeneous,
    Heterogeneous,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Homogeneous => "homogeneous",
            Mode::Heterogeneous => "heterogeneous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub f: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub position: Vec<f64>,
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSpec {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ConsensusSpec {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub mode: Mode,
    pub state_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensors: Vec<SensorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<Vec<f64>>,
    pub priors: Vec<MixtureSpec>,
    #[serde(default)]
    pub consensus: ConsensusSpec,
    #[serde(default, skip_serializing_if = "is_default")]
    pub linearization: LinearizationMode,
    #[serde(default, skip_serializing_if = "is_default")]
    pub prune_threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub emit_particles: usize,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

fn matrix(
    rows: &[Vec<f64>],
    n: usize,
    what: &str,
    problems: &mut Vec<String>,
) -> Option<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        problems.push(format!("{what}: expected a {n}x{n} matrix"));
        return None;
    }
    Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn finite(values: &[f64], what: &str, problems: &mut Vec<String>) {
    if values.iter().any(|v| !v.is_finite()) {
        problems.push(format!("{what}: non-finite value"));
    }
}

impl Scenario {
    /// Every violated invariant, plus warnings for suspicious but usable input.
    /// Returns the warnings when there are no violations.
    pub fn validate(&self) -> Result<Vec<String>, ScenarioError> {
        let mut problems = Vec::new();
        let mut warnings = Vec::new();
        let n = self.state_dim;
        if n == 0 {
            problems.push("state_dim: must be at least 1".into());
        }

        if let Some(d) = &self.dynamics {
            let f = matrix(&d.f, n, "dynamics.f", &mut problems);
            let q = matrix(&d.q, n, "dynamics.q", &mut problems);
            if let (Some(f), Some(q)) = (f, q) {
                if let Err(e) = LinearDynamics::new(f, q) {
                    problems.push(format!("dynamics: {e}"));
                }
            }
        }

        match self.mode {
            Mode::Homogeneous => {
                if self.priors.len() != 1 {
                    problems.push(format!(
                        "priors: homogeneous mode needs exactly one shared prior, found {}",
                        self.priors.len()
                    ));
                }
                self.validate_sensing(&mut problems, &mut warnings);
            }
            Mode::Heterogeneous => {
                if self.priors.len() != 2 {
                    problems.push(format!(
                        "priors: heterogeneous mode needs exactly two priors, found {}",
                        self.priors.len()
                    ));
                }
                if !(0.0..1.0).contains(&self.prune_threshold) {
                    problems.push(format!(
                        "prune_threshold: must lie in [0, 1), got {}",
                        self.prune_threshold
                    ));
                }
                if !self.sensors.is_empty() || self.measurements.is_some() {
                    warnings
                        .push("sensors and measurements are ignored in heterogeneous mode".into());
                }
            }
        }

        for (k, prior) in self.priors.iter().enumerate() {
            self.validate_mixture(prior, &format!("priors[{k}]"), &mut problems);
        }

        if !(self.consensus.tol > 0.0 && self.consensus.tol.is_finite()) {
            problems.push(format!(
                "consensus.tol: must be positive, got {}",
                self.consensus.tol
            ));
        }
        if self.consensus.max_iters == 0 {
            problems.push("consensus.max_iters: must be at least 1".into());
        }
        if self.emit_particles > 0 && n < 2 {
            problems.push("emit_particles: particle output needs state_dim >= 2".into());
        }

        if problems.is_empty() {
            Ok(warnings)
        } else {
            Err(ScenarioError::Invalid(problems))
        }
    }

    fn validate_sensing(&self, problems: &mut Vec<String>, warnings: &mut Vec<String>) {
        let n = self.state_dim;
        if self.sensors.is_empty() {
            problems.push("sensors: homogeneous mode needs at least one sensor".into());
        }
        for (k, s) in self.sensors.iter().enumerate() {
            if s.position.is_empty() || s.position.len() > n {
                problems.push(format!(
                    "sensors[{k}].position: length {} must be between 1 and state_dim {n}",
                    s.position.len()
                ));
            }
            finite(&s.position, &format!("sensors[{k}].position"), problems);
            if !(s.noise_var > 0.0 && s.noise_var.is_finite()) {
                problems.push(format!(
                    "sensors[{k}].noise_var: must be positive, got {}",
                    s.noise_var
                ));
            }
        }
        if let Some(first) = self.sensors.first() {
            if self.sensors.iter().any(|s| s.noise_var != first.noise_var) {
                warnings.push(
                    "sensors have differing noise variances; sensors are assumed homogeneous"
                        .into(),
                );
            }
        }

        match &self.graph {
            None => problems.push("graph: required in homogeneous mode".into()),
            Some(g) => {
                if g.nodes != self.sensors.len() {
                    problems.push(format!(
                        "graph.nodes: {} does not match the {} sensors",
                        g.nodes,
                        self.sensors.len()
                    ));
                }
                if let Err(e) = SensorGraph::new(g.nodes, g.edges.iter().copied()) {
                    problems.push(format!("graph: {e}"));
                }
            }
        }

        match &self.truth {
            None => problems.push("truth: required in homogeneous mode".into()),
            Some(t) => {
                if t.len() != n {
                    problems.push(format!(
                        "truth: length {} does not match state_dim {n}",
                        t.len()
                    ));
                }
                finite(t, "truth", problems);
            }
        }

        if let Some(m) = &self.measurements {
            if m.len() != self.sensors.len() {
                problems.push(format!(
                    "measurements: {} values for {} sensors",
                    m.len(),
                    self.sensors.len()
                ));
            }
            finite(m, "measurements", problems);
        }
    }

    fn validate_mixture(&self, m: &MixtureSpec, name: &str, problems: &mut Vec<String>) {
        let n = self.state_dim;
        if m.components.is_empty() {
            problems.push(format!("{name}: mixture has no components"));
            return;
        }
        let mut sum = 0.0;
        for (k, c) in m.components.iter().enumerate() {
            let at = format!("{name}.components[{k}]");
            if !(0.0..=1.0).contains(&c.weight) {
                problems.push(format!("{at}.weight: {} outside [0, 1]", c.weight));
            }
            sum += c.weight;
            if c.mean.len() != n {
                problems.push(format!(
                    "{at}.mean: length {} does not match state_dim {n}",
                    c.mean.len()
                ));
                continue;
            }
            finite(&c.mean, &format!("{at}.mean"), problems);
            if let Some(cov) = matrix(&c.cov, n, &format!("{at}.cov"), problems) {
                if let Err(e) = Gaussian::new(DVector::from_column_slice(&c.mean), cov) {
                    problems.push(format!("{at}: {e}"));
                }
            }
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            problems.push(format!("{name}: weights sum to {sum}, expected 1"));
        }
    }

    pub fn dynamics(&self) -> Option<crate::Result<LinearDynamics>> {
        self.dynamics.as_ref().map(|d| {
            let n = self.state_dim;
            LinearDynamics::new(
                DMatrix::from_fn(n, n, |i, j| d.f[i][j]),
                DMatrix::from_fn(n, n, |i, j| d.q[i][j]),
            )
        })
    }

    pub fn sensor_models(&self) -> crate::Result<Vec<RangeSensor>> {
        self.sensors
            .iter()
            .map(|s| RangeSensor::new(s.position.clone(), s.noise_var))
            .collect()
    }

    pub fn sensor_graph(&self) -> crate::Result<Option<SensorGraph>> {
        self.graph
            .as_ref()
            .map(|g| SensorGraph::new(g.nodes, g.edges.iter().copied()))
            .transpose()
    }

    pub fn prior_mixtures(&self) -> crate::Result<Vec<GaussianMixture>> {
        let n = self.state_dim;
        self.priors
            .iter()
            .map(|p| {
                let comps = p
                    .components
                    .iter()
                    .map(|c| {
                        let cov = DMatrix::from_fn(n, n, |i, j| c.cov[i][j]);
                        Ok((
                            c.weight,
                            Gaussian::new(DVector::from_column_slice(&c.mean), cov)?,
                        ))
                    })
                    .collect::<crate::Result<Vec<_>>>()?;
                GaussianMixture::new(comps)
            })
            .collect()
    }

    pub fn consensus_config(&self) -> ConsensusConfig {
        ConsensusConfig {
            tol: self.consensus.tol,
            max_iters: self.consensus.max_iters,
            ..ConsensusConfig::default()
        }
    }

    /// Canonical JSON text of the scenario, as written by [`write_scenario`].
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Parses and validates scenario text. Returns the scenario and any warnings.
pub fn parse_scenario(text: &str) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let warnings = s.validate()?;
    Ok((s, warnings))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    load_scenario_with_warnings(path).map(|(s, _)| s)
}

pub fn load_scenario_with_warnings(
    path: impl AsRef<Path>,
) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn write_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    let mut text = s.to_json();
    text.push('\n');
    std::fs::write(path, text).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}
