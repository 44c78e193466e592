#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wcc_core::{Dataset, LocationBlock};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One location drawn around `beta` (and `eta` for the global part), with
/// an intercept column, random inclusion probabilities in `[0.05, 1]` and
/// population size 200.
pub fn block_around(rng: &mut ChaCha8Rng, id: &str, n: usize, beta: &[f64], eta: &[f64], noise: f64) -> LocationBlock {
    let p = beta.len();
    let q = eta.len();
    let x = DMatrix::from_fn(n, p, |_, k| if k == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let z = DMatrix::from_fn(n, q, |_, _| rng.sample(StandardNormal));
    let y = DVector::from_fn(n, |h, _| {
        let e: f64 = rng.sample(StandardNormal);
        (0..p).map(|k| x[(h, k)] * beta[k]).sum::<f64>() + (0..q).map(|k| z[(h, k)] * eta[k]).sum::<f64>() + noise * e
    });
    let pi = DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
    LocationBlock::new(id, 200.0, y, x, z, pi, None).unwrap()
}

/// `m` locations with independent random coefficients.
pub fn random_dataset(rng: &mut ChaCha8Rng, m: usize, p: usize, q: usize) -> Dataset {
    let eta: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
    let blocks = (0..m)
        .map(|i| {
            let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let n = rng.random_range(p + q + 3..p + q + 15);
            block_around(rng, &format!("loc{i}"), n, &beta, &eta, 0.5)
        })
        .collect();
    Dataset::new(blocks).unwrap()
}

/// Locations whose coefficients are `centers[labels[i]]`.
pub fn grouped_dataset(rng: &mut ChaCha8Rng, labels: &[usize], centers: &[Vec<f64>], n: usize, noise: f64) -> Dataset {
    let blocks = labels
        .iter()
        .enumerate()
        .map(|(i, &g)| block_around(rng, &format!("loc{i}"), n, &centers[g], &[], noise))
        .collect();
    Dataset::new(blocks).unwrap()
}

pub fn sup_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
