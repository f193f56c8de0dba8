//! Centralized reference fusion.
//!
//! Written independently of the decentralized path: component posteriors come
//! from a batch covariance-form EKF update over all sensors at once, densities
//! use explicit inverses and determinants, and no consensus is involved. It is
//! slow and is meant for checking, not for production use.

use nalgebra::{DMatrix, DVector};

use crate::error::{FusionError, Result};
use crate::gmm::{Gaussian, GaussianMixture};
use crate::sensing::{LinearizationMode, ScalarMeasurement};

/// Densities below `exp(LOG_DENSITY_FLOOR)` make the point-evaluated weight
/// update ill-conditioned.
pub const LOG_DENSITY_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedResult {
    pub posterior: GaussianMixture,
    /// `ln l_i` per component.
    pub log_likelihoods: Vec<f64>,
}

fn naive_logpdf(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    let inv = cov
        .clone()
        .try_inverse()
        .ok_or_else(|| FusionError::Singular("oracle covariance inverse".into()))?;
    let det = cov.determinant();
    if !(det > 0.0) {
        return Err(FusionError::Singular(
            "oracle covariance determinant".into(),
        ));
    }
    let d = x - mean;
    let quad = (d.transpose() * inv * &d)[(0, 0)];
    let n = mean.len() as f64;
    Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad))
}

fn scalar_loglik(z: f64, predicted: f64, var: f64) -> f64 {
    let r = z - predicted;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var)
}

fn update_component<M: ScalarMeasurement>(
    prior: &Gaussian,
    observations: &[f64],
    sensors: &[M],
    mode: LinearizationMode,
) -> Result<(Gaussian, f64)> {
    let mu = prior.mean();
    let p = prior.cov();
    let n = mu.len();
    let s = observations.len();

    let mut h = DMatrix::zeros(s, n);
    let mut innovation = DVector::zeros(s);
    let mut noise = DMatrix::zeros(s, s);
    let mut loglik_sum = 0.0;
    for (k, (z, sensor)) in observations.iter().zip(sensors).enumerate() {
        let row = sensor.jacobian(mu)?;
        h.row_mut(k).copy_from(&row.row(0));
        let predicted = sensor.predict(mu)?;
        innovation[k] = match mode {
            LinearizationMode::Ekf => z - predicted,
            // raw z treated as if h were linear through the origin
            LinearizationMode::Literal => z - (&row * mu)[0],
        };
        noise[(k, k)] = sensor.noise_var();
        loglik_sum += scalar_loglik(*z, predicted, sensor.noise_var());
    }

    let innov_cov = &h * p * h.transpose() + noise;
    let innov_inv = innov_cov
        .try_inverse()
        .ok_or_else(|| FusionError::Singular("oracle innovation covariance".into()))?;
    let gain = p * h.transpose() * innov_inv;
    let mean = mu + &gain * innovation;
    let cov = p - &gain * &h * p;
    let cov = (&cov + cov.transpose()) * 0.5;

    let ln_l = naive_logpdf(mu, p, mu)? - naive_logpdf(&mean, &cov, mu)? + loglik_sum;
    Ok((Gaussian::new(mean, cov)?, ln_l))
}

/// Centralized fusion of every agent's measurement into a shared prior.
pub fn fuse_centralized<M: ScalarMeasurement>(
    prior: &GaussianMixture,
    observations: &[f64],
    sensors: &[M],
    mode: LinearizationMode,
) -> Result<CentralizedResult> {
    if observations.len() != sensors.len() {
        return Err(FusionError::dim(
            "observations",
            sensors.len(),
            observations.len(),
        ));
    }
    if observations.is_empty() {
        return Err(FusionError::InvalidArgument(
            "at least one agent required".into(),
        ));
    }
    let mut components = Vec::with_capacity(prior.len());
    let mut log_likelihoods = Vec::with_capacity(prior.len());
    for c in prior.components() {
        let (post, ln_l) = update_component(c, observations, sensors, mode)?;
        components.push(post);
        log_likelihoods.push(ln_l);
    }

    let max = log_likelihoods
        .iter()
        .zip(prior.weights())
        .filter(|(_, w)| **w > 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(FusionError::DegenerateWeights);
    }
    let unnorm: Vec<f64> = prior
        .weights()
        .iter()
        .zip(&log_likelihoods)
        .map(|(w, l)| w * (l - max).exp())
        .collect();
    let total: f64 = unnorm.iter().sum();
    let posterior =
        GaussianMixture::new(unnorm.iter().map(|u| u / total).zip(components).collect())?;
    Ok(CentralizedResult {
        posterior,
        log_likelihoods,
    })
}

fn guard(log_density: f64, component: usize) -> Result<f64> {
    if log_density > LOG_DENSITY_FLOOR {
        Ok(log_density)
    } else {
        Err(FusionError::IllConditioned {
            component,
            log_density,
            limit: LOG_DENSITY_FLOOR,
        })
    }
}

fn check_pairing(prior: &GaussianMixture, posterior: &GaussianMixture) -> Result<()> {
    if prior.len() != posterior.len() {
        return Err(FusionError::dim(
            "posterior components",
            prior.len(),
            posterior.len(),
        ));
    }
    Ok(())
}

/// Weight update from prior/posterior density ratios at one evaluation point,
/// `ω⁺_i ∝ ω_i p_i(x_c) / p⁺_i(x_c)`, evaluated in linear arithmetic.
///
/// The measurement likelihood cancels across components, which is exact only
/// when every component sees the same (linear) measurement model. Fails when
/// any density at `x_c` drops below `exp(-700)`.
pub fn weight_update_at_point(
    prior: &GaussianMixture,
    posterior: &GaussianMixture,
    x_c: &DVector<f64>,
) -> Result<Vec<f64>> {
    check_pairing(prior, posterior)?;
    let mut unnorm = Vec::with_capacity(prior.len());
    for (i, (pc, qc)) in prior
        .components()
        .iter()
        .zip(posterior.components())
        .enumerate()
    {
        let lp = guard(naive_logpdf(pc.mean(), pc.cov(), x_c)?, i)?;
        let lq = guard(naive_logpdf(qc.mean(), qc.cov(), x_c)?, i)?;
        unnorm.push(prior.weights()[i] * lp.exp() / lq.exp());
    }
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|u| u / total).collect())
}

/// Point-evaluated weight update keeping the measurement likelihood, with each
/// component's measurement model linearized at that component's prior mean
/// (the model its EKF posterior was computed under):
///
/// `l_i = p_i(x_c) Π_s N(z_s; h_s(μ_i) + H_s,i (x_c − μ_i), R_s) / p⁺_i(x_c)`.
pub fn weight_update_at_point_with_measurements<M: ScalarMeasurement>(
    prior: &GaussianMixture,
    posterior: &GaussianMixture,
    observations: &[f64],
    sensors: &[M],
    x_c: &DVector<f64>,
) -> Result<Vec<f64>> {
    check_pairing(prior, posterior)?;
    if observations.len() != sensors.len() {
        return Err(FusionError::dim(
            "observations",
            sensors.len(),
            observations.len(),
        ));
    }
    let mut log_terms = Vec::with_capacity(prior.len());
    for (i, (pc, qc)) in prior
        .components()
        .iter()
        .zip(posterior.components())
        .enumerate()
    {
        let lp = guard(naive_logpdf(pc.mean(), pc.cov(), x_c)?, i)?;
        let lq = guard(naive_logpdf(qc.mean(), qc.cov(), x_c)?, i)?;
        let mu = pc.mean();
        let mut ll = 0.0;
        for (z, s) in observations.iter().zip(sensors) {
            let lin = s.predict(mu)? + (s.jacobian(mu)? * (x_c - mu))[0];
            ll += scalar_loglik(*z, lin, s.noise_var());
        }
        log_terms.push(prior.weights()[i].ln() + lp - lq + ll);
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(FusionError::DegenerateWeights);
    }
    let unnorm: Vec<f64> = log_terms.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|u| u / total).collect())
}
