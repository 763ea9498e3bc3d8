//! Controlled data-generation processes: d independent Gaussian factors
//! rotated into a larger ambient space, and PCA-truncated datasets.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta};
use crate::error::{precondition, Result};
use crate::linalg::{pca, random_rotation, Matrix};
use crate::rng;

/// Standard deviation of class centroids in factor space (variance 4).
pub const CENTROID_STD: f64 = 2.0;

/// `n_samples` points whose class-conditional distribution is
/// `N(μ_y, I_d)` in factor space, with centroids `μ_k ~ N(0, 4·I_d)`, mapped
/// into `ambient_dim` dimensions by a random orthonormal `ambient_dim × d`
/// matrix. Labels are balanced (round-robin) and then shuffled.
pub fn gen_synthetic(
    d: usize,
    n_classes: usize,
    n_samples: usize,
    ambient_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    if d == 0 || d > ambient_dim {
        return Err(precondition(
            "gen_synthetic",
            format!("need 1 <= d <= ambient_dim, got d={d}, ambient_dim={ambient_dim}"),
        ));
    }
    if n_classes < 2 {
        return Err(precondition("gen_synthetic", "need at least two classes"));
    }
    let mut r = rng::seeded(seed);
    let centroid = Normal::new(0.0, CENTROID_STD).expect("valid std");
    let centroids = Matrix::from_fn(n_classes, d, |_, _| centroid.sample(&mut r));
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    let order = rng::permutation(n_samples, &mut r);
    labels = order.iter().map(|&i| labels[i]).collect();
    let factors = Matrix::from_fn(n_samples, d, |i, j| {
        let z: f64 = StandardNormal.sample(&mut r);
        centroids[(labels[i], j)] + z
    });
    let rotation = random_rotation(ambient_dim, d, seed)?;
    let x = factors.matmul_t(&rotation);
    Dataset::new(
        x,
        labels,
        n_classes,
        DatasetMeta {
            name: format!("synthetic-d{d}"),
            d_factors: Some(d),
            seed: Some(seed),
        },
    )
}

/// How PCA-controlled data is materialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMode {
    /// Keep the ambient dimension: `mean + projected · componentsᵀ`.
    #[default]
    Reconstruct,
    /// Use the `k` principal coordinates as inputs.
    Project,
}

/// Dataset whose energy is confined to its top-`k` principal components,
/// at the original dimension.
pub fn pca_control(source: &Dataset, k: usize) -> Result<Dataset> {
    pca_control_with(source, k, PcaMode::Reconstruct)
}

pub fn pca_control_with(source: &Dataset, k: usize, mode: PcaMode) -> Result<Dataset> {
    if k == 0 || k > source.dim() {
        return Err(precondition(
            "pca_control",
            format!("k must be in 1..={}, got {k}", source.dim()),
        ));
    }
    let p = pca(&source.x, k)?;
    let x = match mode {
        PcaMode::Reconstruct => p.reconstructed,
        PcaMode::Project => p.projected,
    };
    let mut meta = source.meta.clone();
    meta.name = format!("{}-pca{k}", source.meta.name);
    Dataset::new(x, source.y.clone(), source.k, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::exact_rank;

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(3, 4, 40, 6, 5).unwrap();
        let b = gen_synthetic(3, 4, 40, 6, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, gen_synthetic(3, 4, 40, 6, 6).unwrap().x);
        assert!(a.missing_classes().is_empty());
    }

    #[test]
    fn square_case_is_full_rank() {
        let ds = gen_synthetic(2, 2, 100, 2, 1).unwrap();
        let (c, _) = ds.x.covariance();
        assert_eq!(exact_rank(&c).unwrap(), 2);
    }

    #[test]
    fn preconditions() {
        assert!(gen_synthetic(5, 2, 10, 4, 0).is_err());
        assert!(gen_synthetic(0, 2, 10, 4, 0).is_err());
        assert!(gen_synthetic(2, 1, 10, 4, 0).is_err());
        let ds = gen_synthetic(2, 2, 10, 4, 0).unwrap();
        assert!(pca_control(&ds, 0).is_err());
        assert!(pca_control(&ds, 5).is_err());
    }

    #[test]
    fn project_mode_has_k_columns() {
        let ds = gen_synthetic(3, 3, 30, 8, 2).unwrap();
        let p = pca_control_with(&ds, 2, PcaMode::Project).unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.y, ds.y);
    }
}
