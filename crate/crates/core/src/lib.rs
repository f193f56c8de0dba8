//! Decentralized fusion of Gaussian-mixture target estimates over a sensor graph.
//!
//! Agents hold Gaussian-mixture beliefs about a single target, take scalar range
//! measurements, and agree on a common posterior by exchanging information-form
//! Kalman contributions through Metropolis-Hastings (MHMC) average consensus.
//!
//! Two fusion problems are covered:
//!
//! - [`fusion_homog`]: every agent starts from the same prior mixture. Component
//!   means and covariances are fused through consensus on information deltas,
//!   component weights through consensus on per-agent measurement log-likelihoods.
//! - [`fusion_heterog`]: two agents with different prior mixtures fuse them by
//!   using each other's component means as pseudo-observations.
//!
//! [`oracle`] holds a centralized reference implementation used to check the
//! decentralized paths, and [`episode`] drives complete scenarios from JSON files.
//!
//! With the default `parallel` feature, independent work items (consensus
//! nodes within a round, mixture components, association pairs, particle
//! chunks) run on the rayon pool. [`Execution::Sequential`] or building without
//! the feature gives the same results on a single thread.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod episode;
pub mod error;
pub mod exec;
pub mod fusion_heterog;
pub mod fusion_homog;
pub mod gmm;
mod linalg;
pub mod network;
pub mod oracle;
pub mod scenario;
pub mod sensing;

pub use dynamics::{predict_information, propagate_truth, LinearDynamics};
pub use error::{FusionError, Result};
pub use exec::Execution;
pub use fusion_heterog::{
    association_likelihood, fuse_priors, pairwise_component_fuse, AssociationWeights,
    HeterogeneousFusion,
};
pub use fusion_homog::{
    component_likelihood_log, fuse_homogeneous, local_component_update, HomogeneousConfig,
    HomogeneousFusionResult,
};
pub use gmm::{
    from_information, gaussian_logpdf, mixture_logpdf, sample_mixture, to_information, Gaussian,
    GaussianMixture, InformationState,
};
pub use network::{
    consensus_round, mhmc_weights, run_consensus, ConsensusConfig, ConsensusOutcome,
    ConsensusPayload, SensorGraph,
};
pub use sensing::{
    info_contribution, measure_range, measurement_loglik, range_jacobian, InfoDelta, LinearSensor,
    LinearizationMode, RangeSensor, ScalarMeasurement,
};

pub use nalgebra::{DMatrix, DVector};
