//! Two-agent fusion of different prior mixtures.
//!
//! Each component mean of one agent is treated as an identity-mapped
//! observation of the other agent's state. Every pair `(i, j)` of components
//! yields one fused Gaussian
//!
//! ```text
//! P⁺ = (P_i⁻¹ + P_j⁻¹)⁻¹
//! μ⁺ = P⁺ (P_i⁻¹ μ_i + P_j⁻¹ μ_j)
//! ```
//!
//! weighted by `ω_i · ω_j · N(μ_i − μ_j; 0, P_i + P_j)` and normalized over
//! all pairs. Every quantity is computed from commutative sums of per-argument
//! terms, so swapping the agents yields bit-identical results after transposing
//! the pair indices.

use nalgebra::{DMatrix, DVector};

use crate::error::{FusionError, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::gmm::{Gaussian, GaussianMixture};
use crate::linalg;

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.0;

/// Posterior weight of every component pair, `n1 × n2`, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationWeights {
    matrix: DMatrix<f64>,
}

impl AssociationWeights {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn transpose(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.matrix.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneousFusion {
    /// Fused mixture, components in row-major `(i, j)` order after pruning.
    pub mixture: GaussianMixture,
    /// `(i, j)` origin of each mixture component.
    pub labels: Vec<(usize, usize)>,
    /// Association weights before pruning.
    pub weights: AssociationWeights,
}

impl HeterogeneousFusion {
    /// Largest parameter difference against `other` once `other`'s pair
    /// indices are transposed. Errors if the component sets differ.
    pub fn symmetry_gap(&self, other: &HeterogeneousFusion) -> Result<f64> {
        if self.weights.matrix.shape() != other.weights.matrix.transpose().shape()
            || self.labels.len() != other.labels.len()
        {
            return Err(FusionError::AsymmetricFusion(
                "component sets differ in shape".into(),
            ));
        }
        let mut worst = (&self.weights.matrix - other.weights.matrix.transpose()).amax();
        for (k, &(i, j)) in self.labels.iter().enumerate() {
            let Some(m) = other.labels.iter().position(|&l| l == (j, i)) else {
                return Err(FusionError::AsymmetricFusion(format!(
                    "component ({i}, {j}) has no transposed counterpart"
                )));
            };
            let a = &self.mixture.components()[k];
            let b = &other.mixture.components()[m];
            worst = worst
                .max((self.mixture.weights()[k] - other.mixture.weights()[m]).abs())
                .max((a.mean() - b.mean()).amax())
                .max((a.cov() - b.cov()).amax());
        }
        Ok(worst)
    }
}

fn same_dim(g1: &Gaussian, g2: &Gaussian) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(FusionError::dim("component pair", g1.dim(), g2.dim()));
    }
    Ok(())
}

/// Fuses two Gaussian estimates of the same state, each serving as the other's
/// full-state observation.
pub fn pairwise_component_fuse(g1: &Gaussian, g2: &Gaussian) -> Result<Gaussian> {
    same_dim(g1, g2)?;
    let y1 = linalg::spd_inverse(g1.cov(), "fusion input covariance")?;
    let y2 = linalg::spd_inverse(g2.cov(), "fusion input covariance")?;
    let info = &y1 + &y2;
    let info_vec: DVector<f64> = &y1 * g1.mean() + &y2 * g2.mean();
    let cov = linalg::spd_inverse(&info, "fused information")?;
    let mean = &cov * info_vec;
    Gaussian::new(mean, cov)
}

/// `ln N(μ1 − μ2; 0, P1 + P2)`, symmetric in its arguments.
pub fn association_likelihood(g1: &Gaussian, g2: &Gaussian) -> Result<f64> {
    same_dim(g1, g2)?;
    let joint = Gaussian::new(DVector::zeros(g1.dim()), g1.cov() + g2.cov())?;
    joint.logpdf(&(g1.mean() - g2.mean()))
}

/// Order-independent log-sum-exp: terms are sorted before accumulation.
fn sorted_log_sum_exp(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    linalg::log_sum_exp(&sorted)
}

fn sorted_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.iter().sum()
}

/// Fuses two agents' prior mixtures into one mixture of up to `n1 · n2`
/// components. Pairs whose association weight falls below `prune_threshold`
/// are dropped and the remaining weights renormalized.
pub fn fuse_priors(
    m1: &GaussianMixture,
    m2: &GaussianMixture,
    prune_threshold: f64,
) -> Result<HeterogeneousFusion> {
    fuse_priors_with(m1, m2, prune_threshold, Execution::default())
}

pub fn fuse_priors_with(
    m1: &GaussianMixture,
    m2: &GaussianMixture,
    prune_threshold: f64,
    execution: Execution,
) -> Result<HeterogeneousFusion> {
    if m1.dim() != m2.dim() {
        return Err(FusionError::dim("prior mixtures", m1.dim(), m2.dim()));
    }
    if !(0.0..1.0).contains(&prune_threshold) {
        return Err(FusionError::InvalidArgument(format!(
            "prune threshold must lie in [0, 1), got {prune_threshold}"
        )));
    }
    let (n1, n2) = (m1.len(), m2.len());
    let pairs = try_map_indexed(execution, n1 * n2, |k| {
        let (i, j) = (k / n2, k % n2);
        let (c1, c2) = (&m1.components()[i], &m2.components()[j]);
        let fused = pairwise_component_fuse(c1, c2)?;
        // prior weights first so the sum is identical with agents swapped
        let log_w = (m1.weights()[i].ln() + m2.weights()[j].ln()) + association_likelihood(c1, c2)?;
        Ok::<_, FusionError>((fused, log_w))
    })?;

    let log_weights: Vec<f64> = pairs.iter().map(|(_, lw)| *lw).collect();
    if log_weights.iter().any(|v| v.is_nan()) {
        return Err(FusionError::DegenerateAssociation);
    }
    let lse = sorted_log_sum_exp(&log_weights);
    if !lse.is_finite() {
        return Err(FusionError::DegenerateAssociation);
    }
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - lse).exp()).collect();
    let matrix = DMatrix::from_row_slice(n1, n2, &weights);

    let kept: Vec<usize> = (0..n1 * n2)
        .filter(|&k| weights[k] >= prune_threshold)
        .collect();
    if kept.is_empty() {
        return Err(FusionError::DegenerateAssociation);
    }
    let kept_weights: Vec<f64> = kept.iter().map(|&k| weights[k]).collect();
    let total = sorted_sum(&kept_weights);
    let components: Vec<(f64, Gaussian)> = kept
        .iter()
        .zip(&kept_weights)
        .map(|(&k, w)| (w / total, pairs[k].0.clone()))
        .collect();

    Ok(HeterogeneousFusion {
        mixture: GaussianMixture::new(components)?,
        labels: kept.iter().map(|&k| (k / n2, k % n2)).collect(),
        weights: AssociationWeights { matrix },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g(mean: &[f64], cov: &[f64]) -> Gaussian {
        Gaussian::from_slices(mean, cov).unwrap()
    }

    const I2: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

    #[test]
    fn identical_estimates_halve_covariance() {
        let a = g(&[1.0, -2.0], &I2);
        let f = pairwise_component_fuse(&a, &a).unwrap();
        assert!((f.mean() - a.mean()).norm() < 1e-15);
        assert!((f.cov() - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
    }

    #[test]
    fn equal_covariances_meet_at_midpoint() {
        let f = pairwise_component_fuse(&g(&[0.0, 0.0], &I2), &g(&[2.0, 0.0], &I2)).unwrap();
        assert_relative_eq!(f.mean()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(f.mean()[1], 0.0, epsilon = 1e-15);
        assert!((f.cov() - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
    }

    #[test]
    fn matches_kalman_form() {
        let p1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p2 = DMatrix::from_row_slice(2, 2, &[0.5, -0.1, -0.1, 3.0]);
        let m1 = DVector::from_vec(vec![1.0, 4.0]);
        let m2 = DVector::from_vec(vec![-2.0, 0.5]);
        let f = pairwise_component_fuse(
            &Gaussian::new(m1.clone(), p1.clone()).unwrap(),
            &Gaussian::new(m2.clone(), p2.clone()).unwrap(),
        )
        .unwrap();
        let s_inv = (&p1 + &p2).try_inverse().unwrap();
        let cov_k = &p1 - &p1 * &s_inv * &p1;
        let mean_k = &m1 + &p1 * &s_inv * (&m2 - &m1);
        assert!((f.cov() - cov_k).amax() < 1e-12);
        assert!((f.mean() - mean_k).amax() < 1e-12);
    }

    #[test]
    fn association_examples() {
        let a = g(&[1.0, 1.0], &I2);
        let v = association_likelihood(&a, &a).unwrap();
        assert_relative_eq!(v, -(4.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
        assert_relative_eq!(v, -2.531_024_246_969_290_7, epsilon = 1e-12);

        let b = g(&[3.0, -1.0], &[0.7, 0.2, 0.2, 1.3]);
        let c = g(&[-0.5, 2.0], &[1.1, -0.3, -0.3, 0.4]);
        assert_eq!(
            association_likelihood(&b, &c).unwrap(),
            association_likelihood(&c, &b).unwrap()
        );

        // P1 + P2 = I and |μ1 − μ2| = 10 gives Mahalanobis distance 10.
        let far1 = g(&[0.0, 0.0], &[0.5, 0.0, 0.0, 0.5]);
        let far2 = g(&[10.0, 0.0], &[0.5, 0.0, 0.0, 0.5]);
        assert!(association_likelihood(&far1, &far2).unwrap() < -50.0);
    }

    #[test]
    fn two_by_three_gives_six_components() {
        let m1 = GaussianMixture::new(vec![
            (0.3, g(&[0.0, 0.0], &[4.0, 0.0, 0.0, 4.0])),
            (0.7, g(&[1.0, 1.0], &[3.0, 0.5, 0.5, 3.0])),
        ])
        .unwrap();
        let m2 = GaussianMixture::new(vec![
            (0.25, g(&[0.5, -0.5], &[4.0, 0.0, 0.0, 2.0])),
            (0.30, g(&[-0.5, 0.5], &[2.0, 0.0, 0.0, 4.0])),
            (0.45, g(&[0.0, 1.0], &[3.0, 0.0, 0.0, 3.0])),
        ])
        .unwrap();
        let f = fuse_priors(&m1, &m2, 0.0).unwrap();
        assert_eq!(f.mixture.len(), 6);
        assert_eq!(
            f.labels,
            vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
        );
        assert_relative_eq!(f.weights.sum(), 1.0, epsilon = 1e-12);

        let r = fuse_priors(&m2, &m1, 0.0).unwrap();
        assert_eq!(r.weights.transpose(), f.weights);
        assert_eq!(f.symmetry_gap(&r).unwrap(), 0.0);
    }

    #[test]
    fn single_components_fuse_to_half_covariance() {
        let a = g(&[2.0, 3.0], &[2.0, 0.4, 0.4, 1.0]);
        let m = GaussianMixture::single(a.clone());
        let f = fuse_priors(&m, &m, 0.0).unwrap();
        assert_eq!(f.mixture.len(), 1);
        assert_eq!(f.mixture.weights(), &[1.0]);
        assert!((f.mixture.components()[0].cov() - a.cov() * 0.5).amax() < 1e-14);
    }

    #[test]
    fn pruning_drops_inconsistent_pairs() {
        let m1 = GaussianMixture::new(vec![
            (0.5, g(&[0.0, 0.0], &I2)),
            (0.5, g(&[50.0, 0.0], &I2)),
        ])
        .unwrap();
        let m2 = GaussianMixture::single(g(&[0.2, 0.0], &I2));
        let f = fuse_priors(&m1, &m2, 1e-4).unwrap();
        assert_eq!(f.labels, vec![(0, 0)]);
        assert_eq!(f.mixture.weights(), &[1.0]);
        assert!(f.weights.get(1, 0) < 1e-100);
        assert!(fuse_priors(&m1, &m2, 1.5).is_err());
    }

    #[test]
    fn vanishing_associations_are_an_error() {
        let m1 = GaussianMixture::single(g(&[0.0], &[1e-6]));
        let m2 = GaussianMixture::single(g(&[1e200], &[1e-6]));
        assert_eq!(
            fuse_priors(&m1, &m2, 0.0).unwrap_err(),
            FusionError::DegenerateAssociation
        );
    }

    #[test]
    fn dimension_mismatch() {
        let a = g(&[0.0], &[1.0]);
        let b = g(&[0.0, 0.0], &I2);
        assert!(pairwise_component_fuse(&a, &b).is_err());
        assert!(association_likelihood(&a, &b).is_err());
    }
}
