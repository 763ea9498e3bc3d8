//! Bounds on mixture entropy and on the mutual information between a layer's
//! representation and the input or the label.
//!
//! The representation is modelled as `z + ε`, `ε ~ N(0, σ²I)`, so the
//! empirical distribution becomes a uniform mixture of isotropic Gaussians
//! centred on the captured activations. Pairwise estimators bound its
//! entropy: KL divergences give an upper bound and Bhattacharyya
//! (Chernoff-½) distances a lower bound. Units are nats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::linalg::Matrix;
use crate::network::ActivationCapture;
use crate::rng;

pub const DEFAULT_SIGMA_FRACTION: f64 = 0.1;
pub const DEFAULT_MAX_SAMPLES: usize = 2000;

/// Uniform mixture of `N(center_n, σ²I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    pub centers: Matrix,
    pub sigma2: f64,
}

impl MixtureModel {
    pub fn new(centers: Matrix, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(precondition("mixture", format!("sigma2 must be > 0, got {sigma2}")));
        }
        if centers.rows() == 0 || centers.cols() == 0 {
            return Err(precondition("mixture", "need at least one component"));
        }
        Ok(Self { centers, sigma2 })
    }

    /// Entropy of one component, `(M/2)·ln(2πeσ²)`.
    pub fn component_entropy(&self) -> f64 {
        0.5 * self.centers.cols() as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E * self.sigma2).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiBounds {
    pub lower: f64,
    pub upper: f64,
    pub sigma2: f64,
    pub n: usize,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `(lower, upper)` bounds on the mixture entropy.
pub fn entropy_bounds(mix: &MixtureModel) -> (f64, f64) {
    let c = &mix.centers;
    let n = c.rows();
    let h_comp = mix.component_entropy();
    if n == 1 {
        return (h_comp, h_comp);
    }
    let kl = 1.0 / (2.0 * mix.sigma2);
    let bd = 1.0 / (8.0 * mix.sigma2);
    let ln_n = (n as f64).ln();
    let (sum_bd, sum_kl) = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = c.row(i);
            let d2: Vec<f64> = (0..n)
                .map(|j| zi.iter().zip(c.row(j)).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let e_bd: Vec<f64> = d2.iter().map(|d| -bd * d).collect();
            let e_kl: Vec<f64> = d2.iter().map(|d| -kl * d).collect();
            (log_sum_exp(&e_bd) - ln_n, log_sum_exp(&e_kl) - ln_n)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    (h_comp - sum_bd / n as f64, h_comp - sum_kl / n as f64)
}

/// `σ² = fraction × mean per-unit variance`; 1 for constant activations,
/// where any positive value gives the same (zero) information.
pub fn default_sigma2(z: &Matrix, fraction: f64) -> f64 {
    let (c, _) = z.covariance();
    let mean_var = (0..c.rows()).map(|i| c[(i, i)]).sum::<f64>() / c.rows().max(1) as f64;
    if mean_var > 0.0 {
        fraction * mean_var
    } else {
        1.0
    }
}

/// Bounds on `I(z; x) = H(z) − H(z|x)`, where `H(z|x)` is one component's
/// entropy.
pub fn mi_zx_bounds(cap: &ActivationCapture, sigma2: f64) -> Result<MiBounds> {
    if cap.samples() < 2 {
        return Err(precondition("mi_zx_bounds", "need at least 2 samples"));
    }
    let mix = MixtureModel::new(cap.z.clone(), sigma2)?;
    let h = mix.component_entropy();
    let (lo, hi) = entropy_bounds(&mix);
    Ok(MiBounds {
        lower: (lo - h).max(0.0),
        upper: (hi - h).max(0.0),
        sigma2,
        n: cap.samples(),
    })
}

/// Bounds on `I(z; y) = H(z) − Σ_k p_k H(z | y = k)`.
pub fn mi_zy_bounds(cap: &ActivationCapture, sigma2: f64) -> Result<MiBounds> {
    let n = cap.samples();
    if cap.labels.len() != n {
        return Err(Error::Dimension {
            context: "mi_zy_bounds labels".into(),
            expected: n,
            got: cap.labels.len(),
        });
    }
    if n < 2 {
        return Err(precondition("mi_zy_bounds", "need at least 2 samples"));
    }
    let mix = MixtureModel::new(cap.z.clone(), sigma2)?;
    let k = cap.labels.iter().max().map_or(0, |m| m + 1);
    let mut rows = vec![Vec::new(); k];
    for (i, &l) in cap.labels.iter().enumerate() {
        rows[l].push(i);
    }
    rows.retain(|r| !r.is_empty());
    if rows.len() <= 1 {
        return Ok(MiBounds {
            lower: 0.0,
            upper: 0.0,
            sigma2,
            n,
        });
    }
    let (h_lo, h_hi) = entropy_bounds(&mix);
    let mut cond_lo = 0.0;
    let mut cond_hi = 0.0;
    for idx in &rows {
        let p = idx.len() as f64 / n as f64;
        let (lo, hi) = entropy_bounds(&MixtureModel::new(cap.z.select_rows(idx), sigma2)?);
        cond_lo += p * lo;
        cond_hi += p * hi;
    }
    Ok(MiBounds {
        lower: (h_lo - cond_hi).max(0.0),
        upper: (h_hi - cond_lo).max(0.0),
        sigma2,
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    /// Fixed σ²; when absent, a fraction of the mean unit variance.
    #[serde(default)]
    pub sigma2: Option<f64>,
    #[serde(default = "default_fraction")]
    pub sigma_fraction: f64,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_fraction() -> f64 {
    DEFAULT_SIGMA_FRACTION
}

fn default_max_samples() -> usize {
    DEFAULT_MAX_SAMPLES
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            sigma2: None,
            sigma_fraction: DEFAULT_SIGMA_FRACTION,
            max_samples: DEFAULT_MAX_SAMPLES,
            seed: 0,
        }
    }
}

/// Seeded subsample of at most `max` rows (sorted indices).
pub fn subsample(cap: &ActivationCapture, max: usize, seed: u64) -> ActivationCapture {
    if cap.samples() <= max {
        return cap.clone();
    }
    let mut r = rng::seeded(seed);
    let mut idx = rng::permutation(cap.samples(), &mut r);
    idx.truncate(max);
    idx.sort_unstable();
    ActivationCapture {
        layer: cap.layer,
        z: cap.z.select_rows(&idx),
        h: cap.h.select_rows(&idx),
        labels: if cap.labels.is_empty() {
            Vec::new()
        } else {
            idx.iter().map(|&i| cap.labels[i]).collect()
        },
    }
}

/// `(I(z;x), I(z;y))` bounds with subsampling and the σ² rule of `cfg`.
pub fn mi_bounds(cap: &ActivationCapture, cfg: &MiConfig) -> Result<(MiBounds, MiBounds)> {
    let sub = subsample(cap, cfg.max_samples, cfg.seed);
    let sigma2 = cfg.sigma2.unwrap_or_else(|| default_sigma2(&sub.z, cfg.sigma_fraction));
    Ok((mi_zx_bounds(&sub, sigma2)?, mi_zy_bounds(&sub, sigma2)?))
}
