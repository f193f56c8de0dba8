//! Decentralized fusion when every agent holds the same prior mixture.
//!
//! For each prior component, every agent linearizes its range measurement at
//! the component's predicted mean and forms an [`InfoDelta`] holding its
//! information vector and matrix contributions together with its local
//! measurement log-likelihood `ln p(z_s | μ⁻_i)`. MHMC consensus drives every
//! agent to the network average of those deltas; scaling by the network size
//! `S` recovers the network sums, from which each agent forms
//!
//! - the continuous update `y⁺ = y⁻ + S·δī`, `Y⁺ = Y⁻ + S·δĪ`, and
//! - the component likelihood
//!   `ln l_i = ln p_i(μ⁻_i) − ln p⁺_i(μ⁻_i) + S·l̃̄_i`,
//!
//! and finally the weight update `ω⁺_i ∝ ω_i l_i` via log-sum-exp.
//!
//! Each agent seeds its log-likelihood slot with its own local value (not
//! zero), so that the consensus average times `S` is the network sum.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::gmm::{from_information, to_information, Gaussian, GaussianMixture, InformationState};
use crate::linalg::{self, pack_upper, unpack_upper, upper_triangle_len};
use crate::network::{run_consensus_with, ConsensusPayload, SensorGraph};
use crate::sensing::{
    info_contribution, measurement_loglik, InfoDelta, LinearizationMode, ScalarMeasurement,
};

pub use crate::network::ConsensusConfig;

/// Settings for [`fuse_homogeneous`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HomogeneousConfig {
    pub consensus: ConsensusConfig,
    pub linearization: LinearizationMode,
}

/// Fixed layout of a consensus payload carrying `components` stacked deltas of
/// dimension `dim`: every component's `δi`, then every component's `δI` upper
/// triangle in row-major order, then every component's `l̃` scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadLayout {
    pub dim: usize,
    pub components: usize,
}

impl PayloadLayout {
    pub fn new(dim: usize, components: usize) -> Self {
        Self { dim, components }
    }

    pub fn len(&self) -> usize {
        self.components * (self.dim + upper_triangle_len(self.dim) + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, deltas: &[InfoDelta]) -> Result<ConsensusPayload> {
        if deltas.len() != self.components {
            return Err(FusionError::dim(
                "payload components",
                self.components,
                deltas.len(),
            ));
        }
        let mut out = Vec::with_capacity(self.len());
        for d in deltas {
            if d.dim() != self.dim {
                return Err(FusionError::dim("payload delta", self.dim, d.dim()));
            }
            out.extend(d.di.iter());
        }
        for d in deltas {
            pack_upper(&d.d_info, &mut out);
        }
        out.extend(deltas.iter().map(|d| d.log_lik));
        Ok(ConsensusPayload(out))
    }

    pub fn unpack(&self, payload: &[f64]) -> Result<Vec<InfoDelta>> {
        if payload.len() != self.len() {
            return Err(FusionError::dim(
                "payload length",
                self.len(),
                payload.len(),
            ));
        }
        let n = self.dim;
        let tri = upper_triangle_len(n);
        let mats_at = self.components * n;
        let logs_at = mats_at + self.components * tri;
        Ok((0..self.components)
            .map(|c| InfoDelta {
                di: DVector::from_column_slice(&payload[c * n..(c + 1) * n]),
                d_info: unpack_upper(&payload[mats_at + c * tri..mats_at + (c + 1) * tri], n),
                log_lik: payload[logs_at + c],
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDiagnostics {
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousFusionResult {
    /// Posterior mixture held by each agent.
    pub agents: Vec<GaussianMixture>,
    /// `ln l_i` per agent and component.
    pub log_likelihoods: Vec<Vec<f64>>,
    pub diagnostics: Vec<ComponentDiagnostics>,
    pub connected: bool,
}

impl HomogeneousFusionResult {
    pub fn all_converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }

    /// Largest absolute difference of any weight, mean or covariance entry
    /// between agent 0 and any other agent.
    pub fn max_agent_disagreement(&self) -> f64 {
        let reference = &self.agents[0];
        let mut worst: f64 = 0.0;
        for agent in &self.agents[1..] {
            for ((wa, ga), (wb, gb)) in reference.iter().zip(agent.iter()) {
                worst = worst.max((wa - wb).abs());
                worst = worst.max((ga.mean() - gb.mean()).amax());
                worst = worst.max((ga.cov() - gb.cov()).amax());
            }
        }
        worst
    }
}

/// One agent's contribution for one prior component: information deltas from
/// the linearized measurement and `ln p(z | μ⁻)` at the component mean.
pub fn local_component_update<M: ScalarMeasurement + ?Sized>(
    component: &Gaussian,
    z: f64,
    sensor: &M,
    mode: LinearizationMode,
) -> Result<InfoDelta> {
    let mut delta = info_contribution(z, component.mean(), sensor, mode)?;
    delta.log_lik = measurement_loglik(z, component.mean(), sensor)?;
    Ok(delta)
}

/// `ln l_i = ln p_i(μ⁻_i) − ln p⁺_i(μ⁻_i) + Σ_s ln p(z_s | μ⁻_i)`.
pub fn component_likelihood_log(
    prior: &Gaussian,
    posterior: &Gaussian,
    loglik_sum: f64,
) -> Result<f64> {
    let at = prior.mean();
    Ok(prior.logpdf(at)? - posterior.logpdf(at)? + loglik_sum)
}

struct ComponentRun {
    posteriors: Vec<Gaussian>,
    log_likelihoods: Vec<f64>,
    diagnostics: ComponentDiagnostics,
}

fn fuse_component<M: ScalarMeasurement + Sync>(
    g: &SensorGraph,
    prior: &Gaussian,
    observations: &[f64],
    sensors: &[M],
    config: &HomogeneousConfig,
) -> Result<ComponentRun> {
    let agents = g.node_count();
    let layout = PayloadLayout::new(prior.dim(), 1);
    let init = observations
        .iter()
        .zip(sensors)
        .map(|(z, s)| {
            let d = local_component_update(prior, *z, s, config.linearization)?;
            layout.pack(std::slice::from_ref(&d))
        })
        .collect::<Result<Vec<_>>>()?;

    let outcome = run_consensus_with(g, init, &config.consensus)?;
    let prior_info = to_information(prior)?;
    let scale = agents as f64;

    let mut posteriors = Vec::with_capacity(agents);
    let mut log_likelihoods = Vec::with_capacity(agents);
    for payload in &outcome.payloads {
        let avg = layout.unpack(payload)?.remove(0);
        let info = InformationState::new(
            prior_info.info_vector() + &avg.di * scale,
            prior_info.info_matrix() + linalg::symmetrize(&avg.d_info) * scale,
        )?;
        let post = from_information(&info)?;
        log_likelihoods.push(component_likelihood_log(prior, &post, avg.log_lik * scale)?);
        posteriors.push(post);
    }
    Ok(ComponentRun {
        posteriors,
        log_likelihoods,
        diagnostics: ComponentDiagnostics {
            iterations: outcome.iterations,
            converged: outcome.converged,
        },
    })
}

/// Decentralized homogeneous-prior fusion of one measurement per agent.
///
/// `observations[s]` and `sensors[s]` belong to graph node `s`. Every agent
/// must know the network size, which is taken from the graph. On a
/// disconnected graph the per-agent posteriors disagree; this is reported
/// through `connected` rather than as an error.
pub fn fuse_homogeneous<M: ScalarMeasurement + Sync>(
    g: &SensorGraph,
    prior: &GaussianMixture,
    observations: &[f64],
    sensors: &[M],
    config: &HomogeneousConfig,
) -> Result<HomogeneousFusionResult> {
    let agents = g.node_count();
    if observations.len() != agents {
        return Err(FusionError::dim("observations", agents, observations.len()));
    }
    if sensors.len() != agents {
        return Err(FusionError::dim("sensors", agents, sensors.len()));
    }
    if let Some(bad) = sensors.iter().find(|s| s.state_dim_min() > prior.dim()) {
        return Err(FusionError::dim(
            "sensor state",
            bad.state_dim_min(),
            prior.dim(),
        ));
    }
    config.consensus.validate()?;

    // Parallelize across components when there are several; a single
    // component parallelizes inside each consensus round instead.
    let mut inner = *config;
    if prior.len() > 1 {
        inner.consensus.execution = Execution::Sequential;
    }
    let runs = try_map_indexed(config.consensus.execution, prior.len(), |i| {
        fuse_component(g, &prior.components()[i], observations, sensors, &inner)
    })?;

    let mut mixtures = Vec::with_capacity(agents);
    let mut log_likelihoods = Vec::with_capacity(agents);
    for s in 0..agents {
        let lls: Vec<f64> = runs.iter().map(|r| r.log_likelihoods[s]).collect();
        let log_weights: Vec<f64> = prior
            .weights()
            .iter()
            .zip(&lls)
            .map(|(w, ll)| w.ln() + ll)
            .collect();
        let components = runs.iter().map(|r| r.posteriors[s].clone()).collect();
        mixtures.push(GaussianMixture::from_log_weights(&log_weights, components)?);
        log_likelihoods.push(lls);
    }

    Ok(HomogeneousFusionResult {
        agents: mixtures,
        log_likelihoods,
        diagnostics: runs.iter().map(|r| r.diagnostics).collect(),
        connected: g.is_connected(),
    })
}
