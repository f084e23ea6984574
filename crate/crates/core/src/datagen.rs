//! Seeded synthetic datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// How generated rows are laid out in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowOrder {
    /// Rows of the same cluster are stored contiguously.
    #[default]
    Grouped,
    /// Rows are stored in a uniformly random order.
    Shuffled,
}

/// Isotropic Gaussian mixture with centers drawn uniformly from `[0, extent]^m`.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    centers: Vec<Vec<f64>>,
    spread: f64,
}

impl ClusterModel {
    pub fn new(clusters: usize, m: usize, extent: f64, spread: f64, seed: u64) -> Result<Self> {
        if clusters == 0 || m == 0 {
            return Err(Error::input("cluster model needs at least one cluster and one feature"));
        }
        if !(spread > 0.0) || !(extent > 0.0) {
            return Err(Error::input("cluster spread and extent must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..clusters)
            .map(|_| (0..m).map(|_| rng.random::<f64>() * extent).collect())
            .collect();
        Ok(Self { centers, spread })
    }

    pub fn clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn m(&self) -> usize {
        self.centers[0].len()
    }

    /// `n` points with their cluster labels. Cluster sizes differ by at most one.
    pub fn sample(&self, n: usize, order: RowOrder, seed: u64) -> Result<(FeatureMatrix, Vec<u32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.spread).expect("spread validated at construction");
        let k = self.centers.len();
        let mut labels: Vec<u32> = (0..n).map(|i| (i * k / n.max(1)) as u32).collect();
        if order == RowOrder::Shuffled {
            labels.shuffle(&mut rng);
        }
        let mut data = Vec::with_capacity(n * self.m());
        for &c in &labels {
            for &mu in &self.centers[c as usize] {
                data.push(mu + noise.sample(&mut rng));
            }
        }
        Ok((FeatureMatrix::new(n, self.m(), data)?, labels))
    }

    /// `n` points drawn i.i.d. from the mixture (random cluster per point).
    pub fn sample_queries(&self, n: usize, seed: u64) -> Result<FeatureMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.spread).expect("spread validated at construction");
        let mut data = Vec::with_capacity(n * self.m());
        for _ in 0..n {
            let c = rng.random_range(0..self.centers.len());
            for &mu in &self.centers[c] {
                data.push(mu + noise.sample(&mut rng));
            }
        }
        FeatureMatrix::new(n, self.m(), data)
    }
}

pub fn uniform(n: usize, m: usize, seed: u64) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * m).map(|_| rng.random::<f64>()).collect();
    FeatureMatrix::new(n, m, data)
}
