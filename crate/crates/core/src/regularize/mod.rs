//! Representation and weight penalties with their gradients.
//!
//! Moment-based penalties use population moments (divide by the batch or
//! class size). L1R is the raw sum over the batch. RR trains on the Hölder
//! surrogate; the exact SVD value is available through [`penalty`].

mod moments;

pub use moments::{class_moments, ClassMoment, ClassWiseMoments};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::linalg::{stable_rank, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegKind {
    L1W,
    L2W,
    L1R,
    CR,
    #[serde(rename = "cw-CR")]
    CwCR,
    VR,
    #[serde(rename = "cw-VR")]
    CwVR,
    RR,
    #[serde(rename = "cw-RR")]
    CwRR,
}

impl RegKind {
    pub const ALL: [RegKind; 9] = [
        RegKind::L1W,
        RegKind::L2W,
        RegKind::L1R,
        RegKind::CR,
        RegKind::CwCR,
        RegKind::VR,
        RegKind::CwVR,
        RegKind::RR,
        RegKind::CwRR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegKind::L1W => "L1W",
            RegKind::L2W => "L2W",
            RegKind::L1R => "L1R",
            RegKind::CR => "CR",
            RegKind::CwCR => "cw-CR",
            RegKind::VR => "VR",
            RegKind::CwVR => "cw-VR",
            RegKind::RR => "RR",
            RegKind::CwRR => "cw-RR",
        }
    }

    /// Penalizes weights rather than activations.
    pub fn on_weights(self) -> bool {
        matches!(self, RegKind::L1W | RegKind::L2W)
    }

    pub fn class_wise(self) -> bool {
        matches!(self, RegKind::CwCR | RegKind::CwVR | RegKind::CwRR)
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown regularizer '{s}'")))
    }
}

/// How a representation penalty is scaled before weighting by λ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScale {
    /// The penalty expression as written.
    Raw,
    /// Divided by the minibatch size.
    PerSample,
    /// Divided by the number of summed terms, so λ weighs an average entry:
    /// N·M activations (L1R), M(M-1) pairs (CR), M units (VR), the weight
    /// count (L1W, L2W), one ratio (RR); class-wise kinds also average over
    /// the classes present. Keeps one λ grid meaningful across kinds.
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub kind: RegKind,
    pub loss_weight: f64,
    /// Layer index, 1-based (layer 0 is the input).
    pub target_layer: usize,
    #[serde(default)]
    pub scale: PenaltyScale,
}

impl RegularizerConfig {
    pub fn new(kind: RegKind, loss_weight: f64, target_layer: usize) -> Self {
        Self {
            kind,
            loss_weight,
            target_layer,
            scale: PenaltyScale::default(),
        }
    }

    fn factor(&self, z: &Matrix, labels: &[usize], weights: &Matrix) -> f64 {
        match self.scale {
            PenaltyScale::Raw => 1.0,
            PenaltyScale::PerSample if self.kind.on_weights() => 1.0,
            PenaltyScale::PerSample => 1.0 / z.rows() as f64,
            PenaltyScale::Mean => {
                let m = z.cols() as f64;
                let classes = if self.kind.class_wise() {
                    class_rows(labels).len().max(1) as f64
                } else {
                    1.0
                };
                let terms = match self.kind {
                    RegKind::L1W | RegKind::L2W => (weights.rows() * weights.cols()) as f64,
                    RegKind::L1R => (z.rows() * z.cols()) as f64,
                    RegKind::CR | RegKind::CwCR => m * (m - 1.0),
                    RegKind::VR | RegKind::CwVR => m,
                    RegKind::RR | RegKind::CwRR => 1.0,
                };
                1.0 / (terms * classes).max(1.0)
            }
        }
    }
}

fn check_labels(z: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != z.rows() {
        return Err(Error::Dimension {
            context: "penalty labels".into(),
            expected: z.rows(),
            got: labels.len(),
        });
    }
    Ok(())
}

fn n_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn offdiag_sq_sum(c: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            if i != j {
                s += c[(i, j)] * c[(i, j)];
            }
        }
    }
    s
}

fn cr_value(z: &Matrix) -> f64 {
    offdiag_sq_sum(&z.covariance().0)
}

fn vr_value(z: &Matrix) -> f64 {
    let (c, _) = z.covariance();
    (0..c.rows()).map(|i| c[(i, i)]).sum()
}

/// Unscaled penalty value. RR kinds give the exact stable rank.
fn raw_penalty(kind: RegKind, z: &Matrix, labels: &[usize], weights: &Matrix) -> Result<f64> {
    Ok(match kind {
        RegKind::L1W => weights.data().iter().map(|w| w.abs()).sum(),
        RegKind::L2W => weights.data().iter().map(|w| w * w).sum(),
        RegKind::L1R => z.data().iter().map(|v| v.abs()).sum(),
        RegKind::CR => cr_value(z),
        RegKind::VR => vr_value(z),
        RegKind::RR => stable_rank(z)?,
        RegKind::CwCR | RegKind::CwVR | RegKind::CwRR => {
            check_labels(z, labels)?;
            let mut total = 0.0;
            for idx in class_rows(labels) {
                let zk = z.select_rows(&idx);
                total += match kind {
                    RegKind::CwCR => cr_value(&zk),
                    RegKind::CwVR => vr_value(&zk),
                    _ => stable_rank(&zk)?,
                };
            }
            total
        }
    })
}

/// Row indices per present class, in class order.
fn class_rows(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); n_classes(labels)];
    for (n, &l) in labels.iter().enumerate() {
        rows[l].push(n);
    }
    rows.retain(|r| !r.is_empty());
    rows
}

/// Penalty Ω for one minibatch. `z` is the target layer's activations and
/// `weights` its weight matrix (used only by L1W/L2W).
pub fn penalty(cfg: &RegularizerConfig, z: &Matrix, labels: &[usize], weights: &Matrix) -> Result<f64> {
    Ok(cfg.factor(z, labels, weights) * raw_penalty(cfg.kind, z, labels, weights)?)
}

/// Σ z² / (‖Z‖₁·‖Z‖_∞): a lower bound on the stable rank that avoids an SVD.
pub fn rr_surrogate(z: &Matrix) -> Result<f64> {
    let a = z.norm_1();
    let b = z.norm_inf();
    if a == 0.0 {
        return Err(Error::UndefinedRank);
    }
    Ok(z.frobenius_sq() / (a * b))
}

fn argmax_lowest(v: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
            tie = false;
        } else if x == v[best] {
            tie = true;
        }
    }
    (best, tie)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`rr_surrogate`] and whether an argmax tie was broken.
/// An all-zero `z` yields a zero gradient.
pub fn rr_surrogate_gradient(z: &Matrix) -> (Matrix, bool) {
    let cols = z.abs_col_sums();
    let rows = z.abs_row_sums();
    let (i_star, tie_i) = argmax_lowest(&cols);
    let (n_star, tie_n) = argmax_lowest(&rows);
    let a = cols.get(i_star).copied().unwrap_or(0.0);
    let b = rows.get(n_star).copied().unwrap_or(0.0);
    let mut g = Matrix::zeros(z.rows(), z.cols());
    if a == 0.0 {
        return (g, false);
    }
    let f = z.frobenius_sq();
    let ab = a * b;
    for n in 0..z.rows() {
        for i in 0..z.cols() {
            let v = z[(n, i)];
            let mut d = 2.0 * v / ab;
            if i == i_star {
                d -= f / (a * ab) * sign(v);
            }
            if n == n_star {
                d -= f / (b * ab) * sign(v);
            }
            g[(n, i)] = d;
        }
    }
    (g, tie_i || tie_n)
}

/// (4/N)·Zc·C_offdiag
fn cr_gradient(z: &Matrix) -> Matrix {
    let n = z.rows() as f64;
    let (zc, _) = z.centered();
    let (mut c, _) = z.covariance();
    for i in 0..c.rows() {
        c[(i, i)] = 0.0;
    }
    zc.matmul(&c).scale(4.0 / n)
}

/// (2/N)·(Z − μ)
fn vr_gradient(z: &Matrix) -> Matrix {
    let n = z.rows() as f64;
    z.centered().0.scale(2.0 / n)
}

/// Gradient of [`penalty`] with respect to `z`, or with respect to `weights`
/// for the weight kinds. RR kinds differentiate the surrogate.
pub fn penalty_gradient(
    cfg: &RegularizerConfig,
    z: &Matrix,
    labels: &[usize],
    weights: &Matrix,
) -> Result<Matrix> {
    let g = match cfg.kind {
        RegKind::L1W => weights.map(sign),
        RegKind::L2W => weights.scale(2.0),
        RegKind::L1R => z.map(sign),
        RegKind::CR => cr_gradient(z),
        RegKind::VR => vr_gradient(z),
        RegKind::RR => rr_surrogate_gradient(z).0,
        RegKind::CwCR | RegKind::CwVR | RegKind::CwRR => {
            check_labels(z, labels)?;
            let mut g = Matrix::zeros(z.rows(), z.cols());
            for idx in class_rows(labels) {
                let zk = z.select_rows(&idx);
                let gk = match cfg.kind {
                    RegKind::CwCR => cr_gradient(&zk),
                    RegKind::CwVR => vr_gradient(&zk),
                    _ => rr_surrogate_gradient(&zk).0,
                };
                for (r, &n) in idx.iter().enumerate() {
                    g.row_mut(n).copy_from_slice(gk.row(r));
                }
            }
            g
        }
    };
    Ok(g.scale(cfg.factor(z, labels, weights)))
}

/// Value that training actually minimizes: like [`penalty`] but RR kinds use
/// the surrogate, and all-zero blocks contribute 0 instead of failing.
pub fn training_penalty(cfg: &RegularizerConfig, z: &Matrix, labels: &[usize], weights: &Matrix) -> Result<f64> {
    let surrogate = |m: &Matrix| rr_surrogate(m).unwrap_or(0.0);
    let v = match cfg.kind {
        RegKind::RR => surrogate(z),
        RegKind::CwRR => {
            check_labels(z, labels)?;
            class_rows(labels)
                .iter()
                .map(|idx| surrogate(&z.select_rows(idx)))
                .sum()
        }
        kind => raw_penalty(kind, z, labels, weights)?,
    };
    Ok(cfg.factor(z, labels, weights) * v)
}

pub(crate) fn validate(cfg: &RegularizerConfig, layers: usize) -> Result<()> {
    if cfg.target_layer == 0 || cfg.target_layer >= layers {
        return Err(precondition(
            "regularizer",
            format!(
                "{} targets layer {}, but hidden layers are 1..{}",
                cfg.kind, cfg.target_layer, layers
            ),
        ));
    }
    if !(cfg.loss_weight >= 0.0 && cfg.loss_weight.is_finite()) {
        return Err(precondition("regularizer", format!("bad loss weight {}", cfg.loss_weight)));
    }
    Ok(())
}
