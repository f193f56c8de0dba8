//! Gaussian and Gaussian-mixture value types.
//!
//! Covariances are validated once at construction: the input is symmetrized and
//! rejected unless its smallest eigenvalue exceeds `1e-12` times its largest.
//! The lower Cholesky factor and log-determinant are cached so density
//! evaluation and sampling never refactor.
//!
//! Sampling uses ChaCha8 seeded with `seed_from_u64(seed)`. Draws are produced
//! in chunks of [`SAMPLE_CHUNK`]; chunk `k` uses ChaCha stream `k`, so the
//! output is identical under sequential and parallel execution.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FusionError, Result};
use crate::exec::{map_indexed, Execution};
use crate::linalg;

/// Tolerance on the sum of mixture weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Number of particles drawn from one ChaCha stream.
pub const SAMPLE_CHUNK: usize = 1024;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        linalg::check_vector(&mean, "Gaussian mean")?;
        let n = linalg::check_square(&cov, "Gaussian covariance")?;
        if n != mean.len() {
            return Err(FusionError::dim("Gaussian covariance", mean.len(), n));
        }
        let cov = linalg::spd_checked(&cov, "Gaussian covariance")?;
        let chol = linalg::cholesky_lower(&cov, "Gaussian covariance")?;
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let n = mean.len();
        if cov_row_major.len() != n * n {
            return Err(FusionError::dim(
                "Gaussian covariance entries",
                n * n,
                cov_row_major.len(),
            ));
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(n, n, cov_row_major),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(FusionError::dim(
                "Gaussian evaluation point",
                self.dim(),
                x.len(),
            ));
        }
        let diff = x - &self.mean;
        let w = self
            .chol
            .solve_lower_triangular(&diff)
            .ok_or_else(|| FusionError::Singular("triangular solve".into()))?;
        Ok(w.norm_squared())
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        let quad = self.mahalanobis_sq(x)?;
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + self.log_det + quad))
    }

    /// Draws one sample using standard normals from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }
}

/// Natural-log density of `g` at `x`.
pub fn gaussian_logpdf(g: &Gaussian, x: &DVector<f64>) -> Result<f64> {
    g.logpdf(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn new(components: Vec<(f64, Gaussian)>) -> Result<Self> {
        let (weights, components): (Vec<f64>, Vec<Gaussian>) = components.into_iter().unzip();
        if components.is_empty() {
            return Err(FusionError::EmptyMixture);
        }
        let dim = components[0].dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != dim) {
            return Err(FusionError::dim("mixture component", dim, bad.dim()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0 || **w > 1.0)
        {
            return Err(FusionError::InvalidWeights(format!(
                "weight {i} = {w} is outside [0, 1]"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(FusionError::InvalidWeights(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    /// Builds a mixture from unnormalized log weights, normalizing with log-sum-exp.
    pub fn from_log_weights(log_weights: &[f64], components: Vec<Gaussian>) -> Result<Self> {
        if log_weights.len() != components.len() {
            return Err(FusionError::dim(
                "mixture log weights",
                components.len(),
                log_weights.len(),
            ));
        }
        let weights =
            linalg::normalize_log_weights(log_weights).ok_or(FusionError::DegenerateWeights)?;
        Self::new(weights.into_iter().zip(components).collect())
    }

    pub fn single(component: Gaussian) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Gaussian)> {
        self.weights.iter().copied().zip(self.components.iter())
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        let terms = self
            .iter()
            .map(|(w, g)| Ok(w.ln() + g.logpdf(x)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(linalg::log_sum_exp(&terms))
    }

    /// Overall mean of the mixture.
    pub fn mean(&self) -> DVector<f64> {
        self.iter()
            .fold(DVector::zeros(self.dim()), |acc, (w, g)| acc + g.mean() * w)
    }
}

/// Natural-log density of the mixture at `x`, computed with log-sum-exp.
pub fn mixture_logpdf(m: &GaussianMixture, x: &DVector<f64>) -> Result<f64> {
    m.logpdf(x)
}

/// Information-form Gaussian: `info_matrix = P⁻¹`, `info_vector = P⁻¹ μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationState {
    info_vector: DVector<f64>,
    info_matrix: DMatrix<f64>,
}

impl InformationState {
    pub fn new(info_vector: DVector<f64>, info_matrix: DMatrix<f64>) -> Result<Self> {
        linalg::check_vector(&info_vector, "information vector")?;
        let n = linalg::check_square(&info_matrix, "information matrix")?;
        if n != info_vector.len() {
            return Err(FusionError::dim("information matrix", info_vector.len(), n));
        }
        let info_matrix =
            linalg::spd_checked(&info_matrix, "information matrix").map_err(|e| match e {
                FusionError::NotPositiveDefinite(msg) => FusionError::Singular(msg),
                other => other,
            })?;
        Ok(Self {
            info_vector,
            info_matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.info_vector.len()
    }

    pub fn info_vector(&self) -> &DVector<f64> {
        &self.info_vector
    }

    pub fn info_matrix(&self) -> &DMatrix<f64> {
        &self.info_matrix
    }
}

pub fn to_information(g: &Gaussian) -> Result<InformationState> {
    let info_matrix = linalg::spd_inverse(g.cov(), "covariance inverse")?;
    let info_vector = &info_matrix * g.mean();
    InformationState::new(info_vector, info_matrix)
}

pub fn from_information(s: &InformationState) -> Result<Gaussian> {
    let chol = nalgebra::Cholesky::new(s.info_matrix.clone())
        .ok_or_else(|| FusionError::Singular("information matrix factorization".into()))?;
    let mean = chol.solve(&s.info_vector);
    let cov = linalg::symmetrize(&chol.inverse());
    Gaussian::new(mean, cov)
}

/// Draws `count` samples together with the index of the component each came from.
pub fn sample_mixture_labeled(
    m: &GaussianMixture,
    count: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<(usize, DVector<f64>)>> {
    if count == 0 {
        return Err(FusionError::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let mut cumulative = Vec::with_capacity(m.len());
    let mut acc = 0.0;
    for w in m.weights() {
        acc += w;
        cumulative.push(acc);
    }
    // Rounding may leave the last cumulative weight a hair under 1.
    let last_positive = m.weights().iter().rposition(|w| *w > 0.0).unwrap_or(0);

    let chunks = count.div_ceil(SAMPLE_CHUNK);
    let per_chunk = map_indexed(execution, chunks, |chunk| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64);
        let n = SAMPLE_CHUNK.min(count - chunk * SAMPLE_CHUNK);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let k = cumulative
                    .iter()
                    .position(|c| u < *c)
                    .unwrap_or(last_positive);
                (k, m.components()[k].sample(&mut rng))
            })
            .collect::<Vec<_>>()
    });
    Ok(per_chunk.into_iter().flatten().collect())
}

/// Draws `count` samples from the mixture, deterministic for a given seed.
pub fn sample_mixture(m: &GaussianMixture, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    Ok(
        sample_mixture_labeled(m, count, seed, Execution::default())?
            .into_iter()
            .map(|(_, x)| x)
            .collect(),
    )
}
