#![allow(dead_code)]

use gmfusion::{DMatrix, DVector, Gaussian, GaussianMixture, RangeSensor, SensorGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spd(rng: &mut impl Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let m = &b * b.transpose() + DMatrix::identity(n, n) * floor;
    (&m + m.transpose()) * 0.5
}

pub fn random_vector(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

pub fn random_gaussian(rng: &mut impl Rng, n: usize) -> Gaussian {
    Gaussian::new(random_vector(rng, n, -3.0, 3.0), random_spd(rng, n, 0.2)).unwrap()
}

/// Mixture with components spread over a box around `center`.
pub fn random_mixture(
    rng: &mut impl Rng,
    n: usize,
    k: usize,
    center: &DVector<f64>,
    spread: f64,
) -> GaussianMixture {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let comps = raw
        .iter()
        .map(|w| {
            let mean = center + random_vector(rng, n, -spread, spread);
            (
                w / total,
                Gaussian::new(mean, random_spd(rng, n, 0.3)).unwrap(),
            )
        })
        .collect();
    GaussianMixture::new(comps).unwrap()
}

/// Random recursive tree plus extra edges with probability `p`; always connected.
pub fn random_connected_graph(rng: &mut impl Rng, s: usize, p: f64) -> SensorGraph {
    let mut edges = Vec::new();
    for k in 1..s {
        edges.push((rng.random_range(0..k), k));
    }
    for i in 0..s {
        for j in i + 1..s {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    SensorGraph::new(s, edges).unwrap()
}

/// Erdős–Rényi graph, possibly disconnected.
pub fn random_graph(rng: &mut impl Rng, s: usize, p: f64) -> SensorGraph {
    let mut edges = Vec::new();
    for i in 0..s {
        for j in i + 1..s {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    SensorGraph::new(s, edges).unwrap()
}

/// Sensors on a ring of radius `r` around the origin, equal noise.
pub fn ring_sensors(s: usize, r: f64, noise_var: f64) -> Vec<RangeSensor> {
    (0..s)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / s as f64;
            RangeSensor::new(vec![r * a.cos(), r * a.sin()], noise_var).unwrap()
        })
        .collect()
}

pub fn noisy_ranges(rng: &mut impl Rng, truth: &DVector<f64>, sensors: &[RangeSensor]) -> Vec<f64> {
    sensors
        .iter()
        .map(|s| {
            let p = s.position();
            let d = ((truth[0] - p[0]).powi(2) + (truth[1] - p[1]).powi(2)).sqrt();
            let z: f64 = rng.sample(StandardNormal);
            d + z * gmfusion::ScalarMeasurement::noise_var(s).sqrt()
        })
        .collect()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}
