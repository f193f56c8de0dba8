//! Linear stochastic dynamics `x' = F x + w`, `w ~ N(0, Q)`, and the
//! information-form prediction step.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FusionError, Result};
use crate::gmm::{from_information, to_information, Gaussian, InformationState};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    transition: DMatrix<f64>,
    process_noise: DMatrix<f64>,
    noise_sqrt: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(transition: DMatrix<f64>, process_noise: DMatrix<f64>) -> Result<Self> {
        let n = linalg::check_square(&transition, "transition matrix")?;
        let nq = linalg::check_square(&process_noise, "process noise")?;
        if n != nq {
            return Err(FusionError::dim("process noise", n, nq));
        }
        let process_noise = linalg::psd_checked(&process_noise, "process noise")?;
        let noise_sqrt = linalg::psd_sqrt(&process_noise);
        Ok(Self {
            transition,
            process_noise,
            noise_sqrt,
        })
    }

    /// Nearly-constant-velocity model on a `[pos…, vel…]` state with white
    /// acceleration noise of spectral density `accel_psd`.
    pub fn constant_velocity(spatial_dims: usize, dt: f64, accel_psd: f64) -> Result<Self> {
        let n = 2 * spatial_dims;
        let mut f = DMatrix::identity(n, n);
        let mut q = DMatrix::zeros(n, n);
        for d in 0..spatial_dims {
            let v = spatial_dims + d;
            f[(d, v)] = dt;
            q[(d, d)] = accel_psd * dt.powi(3) / 3.0;
            q[(d, v)] = accel_psd * dt.powi(2) / 2.0;
            q[(v, d)] = accel_psd * dt.powi(2) / 2.0;
            q[(v, v)] = accel_psd * dt;
        }
        Self::new(f, q)
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.process_noise
    }

    /// Covariance-form prediction of a single Gaussian.
    pub fn predict(&self, g: &Gaussian) -> Result<Gaussian> {
        if g.dim() != self.dim() {
            return Err(FusionError::dim("prediction input", self.dim(), g.dim()));
        }
        let f = &self.transition;
        let mean = f * g.mean();
        let cov = f * g.cov() * f.transpose() + &self.process_noise;
        Gaussian::new(mean, linalg::symmetrize(&cov)).map_err(|e| match e {
            FusionError::NotPositiveDefinite(msg) => {
                FusionError::Singular(format!("predicted covariance: {msg}"))
            }
            other => other,
        })
    }
}

/// Propagates a true state one step, drawing process noise from a ChaCha8
/// stream seeded with `seed`. With `Q = 0` the result is exactly `F x`.
pub fn propagate_truth(x: &DVector<f64>, d: &LinearDynamics, seed: u64) -> Result<DVector<f64>> {
    if x.len() != d.dim() {
        return Err(FusionError::dim("truth state", d.dim(), x.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(d.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(d.transition() * x + &d.noise_sqrt * z)
}

/// Information-form prediction. The predicted state satisfies
/// `Y⁻ = (F (Y⁺)⁻¹ Fᵀ + Q)⁻¹` and `y⁻ = Y⁻ F (Y⁺)⁻¹ y⁺`, computed by a round
/// trip through covariance form.
pub fn predict_information(
    prev: &InformationState,
    d: &LinearDynamics,
) -> Result<InformationState> {
    let g = from_information(prev)?;
    to_information(&d.predict(&g)?)
}
