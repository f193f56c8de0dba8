//! Runs a [`Scenario`] end to end and writes its result files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::propagate_truth;
use crate::error::{FusionError, Result};
use crate::exec::Execution;
use crate::fusion_heterog::fuse_priors_with;
use crate::fusion_homog::{fuse_homogeneous, ComponentDiagnostics, HomogeneousConfig};
use crate::gmm::{sample_mixture_labeled, GaussianMixture};
use crate::oracle::fuse_centralized;
use crate::scenario::{Mode, Scenario};
use crate::sensing::measure_range;

/// Largest tolerated parameter difference between the two agents' fused
/// mixtures in heterogeneous mode.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

const STREAM_MEASURE: u64 = 1;
const STREAM_TRUTH: u64 = 2;
const STREAM_PARTICLES: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for the `index`-th draw of a given purpose.
fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ stream.rotate_left(32)) ^ index)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRow {
    pub component: usize,
    pub prior: f64,
    pub centralized: f64,
    pub decentralized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationEntry {
    pub i1: usize,
    pub j2: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightTable {
    Homogeneous(Vec<WeightRow>),
    Association(Vec<AssociationEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentDoc {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major.
    pub covariance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureDoc {
    pub label: String,
    pub components: Vec<ComponentDoc>,
}

impl MixtureDoc {
    fn new(label: impl Into<String>, m: &GaussianMixture) -> Self {
        Self {
            label: label.into(),
            components: m
                .iter()
                .map(|(w, g)| ComponentDoc {
                    weight: w,
                    mean: g.mean().iter().copied().collect(),
                    covariance: g.cov().transpose().iter().copied().collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    /// 1-based.
    pub component: usize,
    /// 1-based.
    pub agent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub connected: Option<bool>,
    /// Largest weight gap between the decentralized and centralized rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_centralized_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_agent_disagreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetry_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub mode: Mode,
    pub scenario_sha256: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurements: Option<Vec<f64>>,
    pub weights: WeightTable,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
    /// Fused mixture held by each agent.
    #[serde(skip)]
    pub mixtures: Vec<MixtureDoc>,
    #[serde(skip)]
    pub centralized: Option<MixtureDoc>,
    #[serde(skip)]
    pub particles: Vec<Particle>,
}

/// Hex SHA-256 of the scenario's canonical JSON text.
pub fn scenario_hash(s: &Scenario) -> String {
    let digest = Sha256::digest(s.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_episode(s: &Scenario) -> Result<EpisodeReport> {
    run_episode_with(s, Execution::default())
}

/// Runs one episode. The scenario is validated first; validation failures
/// surface as [`FusionError::InvalidArgument`].
pub fn run_episode_with(s: &Scenario, execution: Execution) -> Result<EpisodeReport> {
    let warnings = s
        .validate()
        .map_err(|e| FusionError::InvalidArgument(e.to_string()))?;
    let dynamics = s.dynamics().transpose()?;
    let mut priors = s.prior_mixtures()?;
    if let Some(d) = &dynamics {
        priors = priors
            .iter()
            .map(|m| {
                let comps = m
                    .iter()
                    .map(|(w, g)| Ok((w, d.predict(g)?)))
                    .collect::<Result<Vec<_>>>()?;
                GaussianMixture::new(comps)
            })
            .collect::<Result<_>>()?;
    }

    let mut report = EpisodeReport {
        mode: s.mode,
        scenario_sha256: scenario_hash(s),
        seed: s.seed,
        truth: None,
        measurements: None,
        weights: WeightTable::Homogeneous(Vec::new()),
        diagnostics: Diagnostics {
            components: Vec::new(),
            connected: None,
            max_centralized_gap: None,
            max_agent_disagreement: None,
            symmetry_gap: None,
        },
        warnings,
        mixtures: Vec::new(),
        centralized: None,
        particles: Vec::new(),
    };

    let reported: Vec<GaussianMixture> = match s.mode {
        Mode::Homogeneous => homogeneous(s, &priors[0], dynamics.as_ref(), execution, &mut report)?,
        Mode::Heterogeneous => heterogeneous(s, &priors[0], &priors[1], execution, &mut report)?,
    };

    if s.emit_particles > 0 {
        for (a, m) in reported.iter().enumerate() {
            let seed = derive_seed(s.seed, STREAM_PARTICLES, a as u64);
            for (k, x) in sample_mixture_labeled(m, s.emit_particles, seed, execution)? {
                report.particles.push(Particle {
                    x: x[0],
                    y: x[1],
                    component: k + 1,
                    agent: a + 1,
                });
            }
        }
    }
    Ok(report)
}

fn homogeneous(
    s: &Scenario,
    prior: &GaussianMixture,
    dynamics: Option<&crate::dynamics::LinearDynamics>,
    execution: Execution,
    report: &mut EpisodeReport,
) -> Result<Vec<GaussianMixture>> {
    let graph = s
        .sensor_graph()?
        .ok_or_else(|| FusionError::InvalidArgument("homogeneous mode needs a graph".into()))?;
    let sensors = s.sensor_models()?;
    let mut truth = DVector::from_column_slice(s.truth.as_deref().unwrap_or_default());
    if let Some(d) = dynamics {
        truth = propagate_truth(&truth, d, derive_seed(s.seed, STREAM_TRUTH, 0))?;
    }
    let observations = match &s.measurements {
        Some(m) => m.clone(),
        None => sensors
            .iter()
            .enumerate()
            .map(|(k, sensor)| {
                measure_range(
                    &truth,
                    sensor,
                    derive_seed(s.seed, STREAM_MEASURE, k as u64),
                )
            })
            .collect::<Result<_>>()?,
    };

    let mut consensus = s.consensus_config();
    consensus.execution = execution;
    let config = HomogeneousConfig {
        consensus,
        linearization: s.linearization,
    };
    let fused = fuse_homogeneous(&graph, prior, &observations, &sensors, &config)?;
    let central = fuse_centralized(prior, &observations, &sensors, s.linearization)?;

    let rows: Vec<WeightRow> = (0..prior.len())
        .map(|i| WeightRow {
            component: i + 1,
            prior: prior.weights()[i],
            centralized: central.posterior.weights()[i],
            decentralized: fused.agents[0].weights()[i],
        })
        .collect();
    let gap = rows
        .iter()
        .map(|r| (r.centralized - r.decentralized).abs())
        .fold(0.0, f64::max);

    if !fused.all_converged() {
        let n = fused.diagnostics.iter().filter(|d| !d.converged).count();
        report.warnings.push(format!(
            "consensus did not converge for {n} component(s) within {} rounds",
            s.consensus.max_iters
        ));
    }
    if !fused.connected {
        report
            .warnings
            .push("sensor graph is disconnected; agents hold different posteriors".into());
    }

    report.truth = Some(truth.iter().copied().collect());
    report.measurements = Some(observations);
    report.weights = WeightTable::Homogeneous(rows);
    report.diagnostics.components = fused.diagnostics.clone();
    report.diagnostics.connected = Some(fused.connected);
    report.diagnostics.max_centralized_gap = Some(gap);
    report.diagnostics.max_agent_disagreement = Some(fused.max_agent_disagreement());
    report.mixtures = fused
        .agents
        .iter()
        .enumerate()
        .map(|(a, m)| MixtureDoc::new(format!("agent {}", a + 1), m))
        .collect();
    report.centralized = Some(MixtureDoc::new("centralized", &central.posterior));
    Ok(fused.agents)
}

fn heterogeneous(
    s: &Scenario,
    m1: &GaussianMixture,
    m2: &GaussianMixture,
    execution: Execution,
    report: &mut EpisodeReport,
) -> Result<Vec<GaussianMixture>> {
    let at_1 = fuse_priors_with(m1, m2, s.prune_threshold, execution)?;
    let at_2 = fuse_priors_with(m2, m1, s.prune_threshold, execution)?;
    let gap = at_1.symmetry_gap(&at_2)?;
    if gap > SYMMETRY_TOLERANCE {
        return Err(FusionError::AsymmetricFusion(format!(
            "agents' fused mixtures differ by {gap:e}"
        )));
    }

    let w = &at_1.weights;
    let mut entries = Vec::with_capacity(w.rows() * w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            entries.push(AssociationEntry {
                i1: i + 1,
                j2: j + 1,
                weight: w.get(i, j),
            });
        }
    }
    report.weights = WeightTable::Association(entries);
    report.diagnostics.symmetry_gap = Some(gap);
    report.mixtures = vec![
        MixtureDoc::new("agent 1", &at_1.mixture),
        MixtureDoc::new("agent 2", &at_2.mixture),
    ];
    Ok(vec![at_1.mixture, at_2.mixture])
}

#[derive(Debug, Error)]
#[error("{path}: {message}")]
pub struct OutputError {
    pub path: PathBuf,
    pub message: String,
}

fn out_err(path: &Path, e: impl std::fmt::Display) -> OutputError {
    OutputError {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::result::Result<(), OutputError> {
    let file = File::create(path).map_err(|e| out_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| out_err(path, e))?;
    w.write_all(b"\n").map_err(|e| out_err(path, e))?;
    w.flush().map_err(|e| out_err(path, e))
}

fn write_csv<T: Serialize>(
    path: &Path,
    rows: &[T],
    header: &[&str],
) -> std::result::Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| out_err(path, e))?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| out_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| out_err(path, e))?;
    }
    w.flush().map_err(|e| out_err(path, e))
}

#[derive(Serialize)]
struct MixtureFile<'a> {
    mixtures: &'a [MixtureDoc],
    #[serde(skip_serializing_if = "Option::is_none")]
    centralized: Option<&'a MixtureDoc>,
}

/// Writes `weights.csv`, `mixture.json`, `report.json` and, when the report
/// carries particles, `particles.csv` into `out_dir` (created if missing).
/// Returns the written paths.
pub fn emit_outputs(
    r: &EpisodeReport,
    out_dir: impl AsRef<Path>,
) -> std::result::Result<Vec<PathBuf>, OutputError> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    let mut written = Vec::new();

    let weights = dir.join("weights.csv");
    match &r.weights {
        WeightTable::Homogeneous(rows) => write_csv(
            &weights,
            rows,
            &["component", "prior", "centralized", "decentralized"],
        )?,
        WeightTable::Association(rows) => write_csv(&weights, rows, &["i1", "j2", "weight"])?,
    }
    written.push(weights);

    let mixture = dir.join("mixture.json");
    write_json(
        &mixture,
        &MixtureFile {
            mixtures: &r.mixtures,
            centralized: r.centralized.as_ref(),
        },
    )?;
    written.push(mixture);

    if !r.particles.is_empty() {
        let particles = dir.join("particles.csv");
        write_csv(&particles, &r.particles, &["x", "y", "component", "agent"])?;
        written.push(particles);
    }

    let report = dir.join("report.json");
    write_json(&report, r)?;
    written.push(report);
    Ok(written)
}
