//! Scalar measurement models, EKF linearization and per-agent information
//! contributions.
//!
//! State vectors place the target position in their leading entries; a
//! [`RangeSensor`] with a 2-D position reads `x[0..2]` and ignores the rest
//! (velocities and so on).

use std::ops::{Add, AddAssign};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};

/// Below this sensor-to-target distance the range Jacobian is undefined.
pub const MIN_RANGE: f64 = 1e-9;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A scalar measurement `z = h(x) + v`, `v ~ N(0, R)`.
pub trait ScalarMeasurement {
    fn state_dim_min(&self) -> usize;

    fn predict(&self, x: &DVector<f64>) -> Result<f64>;

    /// Row Jacobian `∂h/∂x` at `x`, shape `1 × n_x`.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    fn noise_var(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSensor {
    position: Vec<f64>,
    noise_var: f64,
}

impl RangeSensor {
    pub fn new(position: Vec<f64>, noise_var: f64) -> Result<Self> {
        if position.is_empty() || position.iter().any(|p| !p.is_finite()) {
            return Err(FusionError::InvalidArgument(
                "sensor position must be a non-empty finite vector".into(),
            ));
        }
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(FusionError::InvalidArgument(format!(
                "sensor noise variance must be positive, got {noise_var}"
            )));
        }
        Ok(Self {
            position,
            noise_var,
        })
    }

    pub fn position(&self) -> &[f64] {
        &self.position
    }

    fn offset(&self, x: &DVector<f64>) -> Result<(Vec<f64>, f64)> {
        let p = self.position.len();
        if x.len() < p {
            return Err(FusionError::dim("range sensor state", p, x.len()));
        }
        let offset: Vec<f64> = (0..p).map(|k| x[k] - self.position[k]).collect();
        let dist = offset.iter().map(|d| d * d).sum::<f64>().sqrt();
        Ok((offset, dist))
    }
}

impl ScalarMeasurement for RangeSensor {
    fn state_dim_min(&self) -> usize {
        self.position.len()
    }

    fn predict(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.offset(x)?.1)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (offset, dist) = self.offset(x)?;
        if !(dist > MIN_RANGE) {
            return Err(FusionError::DegenerateGeometry { distance: dist });
        }
        let mut h = DMatrix::zeros(1, x.len());
        for (k, d) in offset.iter().enumerate() {
            h[(0, k)] = d / dist;
        }
        Ok(h)
    }

    fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

/// Linear scalar measurement `z = row · x + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSensor {
    row: DVector<f64>,
    noise_var: f64,
}

impl LinearSensor {
    pub fn new(row: Vec<f64>, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(FusionError::InvalidArgument(format!(
                "sensor noise variance must be positive, got {noise_var}"
            )));
        }
        Ok(Self {
            row: DVector::from_vec(row),
            noise_var,
        })
    }
}

impl ScalarMeasurement for LinearSensor {
    fn state_dim_min(&self) -> usize {
        self.row.len()
    }

    fn predict(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.row.len() {
            return Err(FusionError::dim(
                "linear sensor state",
                self.row.len(),
                x.len(),
            ));
        }
        Ok(self.row.dot(x))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x.len() != self.row.len() {
            return Err(FusionError::dim(
                "linear sensor state",
                self.row.len(),
                x.len(),
            ));
        }
        Ok(DMatrix::from_row_slice(
            1,
            self.row.len(),
            self.row.as_slice(),
        ))
    }

    fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

/// How the information vector contribution treats a nonlinear measurement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearizationMode {
    /// `δi = Hᵀ R⁻¹ (z − h(μ⁻) + H μ⁻)`; matches the covariance-form EKF.
    #[default]
    Ekf,
    /// `δi = Hᵀ R⁻¹ z`, exact only for linear `h`.
    Literal,
}

/// One agent's additive contribution to a component's information state,
/// plus its local measurement log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoDelta {
    pub di: DVector<f64>,
    pub d_info: DMatrix<f64>,
    pub log_lik: f64,
}

impl InfoDelta {
    pub fn zeros(n: usize) -> Self {
        Self {
            di: DVector::zeros(n),
            d_info: DMatrix::zeros(n, n),
            log_lik: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.di.len()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            di: &self.di * factor,
            d_info: &self.d_info * factor,
            log_lik: self.log_lik * factor,
        }
    }
}

impl AddAssign<&InfoDelta> for InfoDelta {
    fn add_assign(&mut self, rhs: &InfoDelta) {
        self.di += &rhs.di;
        self.d_info += &rhs.d_info;
        self.log_lik += rhs.log_lik;
    }
}

impl Add<&InfoDelta> for InfoDelta {
    type Output = InfoDelta;

    fn add(mut self, rhs: &InfoDelta) -> InfoDelta {
        self += rhs;
        self
    }
}

/// Simulates a range measurement from the true state.
pub fn measure_range(truth: &DVector<f64>, sensor: &RangeSensor, seed: u64) -> Result<f64> {
    let (_, dist) = sensor.offset(truth)?;
    if !(dist > MIN_RANGE) {
        return Err(FusionError::DegenerateGeometry { distance: dist });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: f64 = rng.sample(StandardNormal);
    Ok(dist + sensor.noise_var.sqrt() * v)
}

/// Range Jacobian at the predicted state; zero outside the position block.
pub fn range_jacobian(mu_pred: &DVector<f64>, sensor: &RangeSensor) -> Result<DMatrix<f64>> {
    sensor.jacobian(mu_pred)
}

/// Information contribution of one scalar measurement linearized at `mu_pred`.
/// The returned `log_lik` is zero; see [`measurement_loglik`].
pub fn info_contribution<M: ScalarMeasurement + ?Sized>(
    z: f64,
    mu_pred: &DVector<f64>,
    sensor: &M,
    mode: LinearizationMode,
) -> Result<InfoDelta> {
    let h = sensor.jacobian(mu_pred)?;
    let r_inv = 1.0 / sensor.noise_var();
    let z_eff = match mode {
        LinearizationMode::Literal => z,
        LinearizationMode::Ekf => z - sensor.predict(mu_pred)? + (&h * mu_pred)[0],
    };
    let ht = h.transpose();
    Ok(InfoDelta {
        di: ht.column(0) * (r_inv * z_eff),
        d_info: &ht * &h * r_inv,
        log_lik: 0.0,
    })
}

/// `ln N(z; h(x_eval), R)`.
pub fn measurement_loglik<M: ScalarMeasurement + ?Sized>(
    z: f64,
    x_eval: &DVector<f64>,
    sensor: &M,
) -> Result<f64> {
    let predicted = sensor.predict(x_eval)?;
    let r = sensor.noise_var();
    let resid = z - predicted;
    Ok(-0.5 * (LN_2PI + r.ln() + resid * resid / r))
}
