//! Datasets: IDX ingestion, synthetic d-factor data, PCA-controlled data,
//! splits and minibatching.

mod container;
mod idx;
mod synthetic;

pub use container::{read_container, write_container, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use idx::{
    load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages,
    IMAGES_MAGIC, LABELS_MAGIC, MNIST_CLASSES,
};
pub use synthetic::{gen_synthetic, pca_control, pca_control_with, PcaMode};

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub d_factors: Option<usize>,
    pub seed: Option<u64>,
}

/// Inputs `x` (N × D) with labels in `0..k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub k: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, k: usize, meta: DatasetMeta) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Dimension {
                context: "Dataset labels".into(),
                expected: x.rows(),
                got: y.len(),
            });
        }
        if let Some(&label) = y.iter().find(|&&l| l >= k) {
            return Err(Error::LabelRange { label, classes: k });
        }
        Ok(Self { x, y, k, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            k: self.k,
            meta: self.meta.clone(),
        }
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.y {
            counts[l] += 1;
        }
        counts
    }

    pub fn missing_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(k, _)| k)
            .collect()
    }

    /// Concatenation of `self` and `other` (validation merge-back).
    pub fn merged(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() || self.k != other.k {
            return Err(precondition("Dataset::merged", "incompatible datasets"));
        }
        let mut data = self.x.data().to_vec();
        data.extend_from_slice(other.x.data());
        let x = Matrix::from_vec(self.len() + other.len(), self.dim(), data)?;
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Dataset::new(x, y, self.k, self.meta.clone())
    }
}

/// Sizes of the train/validation/test partitions. `test_n == 0` assigns every
/// sample not used by train or validation to the test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_n: usize,
    pub val_n: usize,
    #[serde(default)]
    pub test_n: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Disjoint seeded split into `(train, val, test)`.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let n = ds.len();
    let used = spec.train_n + spec.val_n + spec.test_n;
    if spec.train_n == 0 || used > n {
        return Err(precondition(
            "split",
            format!(
                "train={} val={} test={} does not fit {n} samples",
                spec.train_n, spec.val_n, spec.test_n
            ),
        ));
    }
    let mut r = rng::seeded(spec.seed);
    let order = rng::permutation(n, &mut r);
    let (train_idx, rest) = order.split_at(spec.train_n);
    let (val_idx, rest) = rest.split_at(spec.val_n);
    let test_idx = if spec.test_n == 0 {
        rest
    } else {
        &rest[..spec.test_n]
    };
    Ok((ds.subset(train_idx), ds.subset(val_idx), ds.subset(test_idx)))
}

/// Seeded minibatches for one epoch: a fresh shuffle per `(seed, epoch)`,
/// with a final short batch when `batch` does not divide N.
pub fn minibatches(ds: &Dataset, batch: usize, seed: u64, epoch: usize) -> Result<Minibatches<'_>> {
    if batch == 0 || batch > ds.len() {
        return Err(precondition(
            "minibatches",
            format!("batch must be in 1..={}, got {batch}", ds.len()),
        ));
    }
    let mut r = rng::seeded(rng::derive_seed(seed, epoch as u64));
    Ok(Minibatches {
        ds,
        order: rng::permutation(ds.len(), &mut r),
        batch,
        pos: 0,
    })
}

pub struct Minibatches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch: usize,
    pos: usize,
}

impl Iterator for Minibatches<'_> {
    type Item = (Matrix, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some((
            self.ds.x.select_rows(idx),
            idx.iter().map(|&i| self.ds.y[i]).collect(),
        ))
    }
}
