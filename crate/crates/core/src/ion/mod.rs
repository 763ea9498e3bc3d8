//! Weight rewrites of layers `l` and `l+1` that change layer `l`'s
//! representation while preserving (or approximately preserving) the
//! network output.
//!
//! For an affine map `z̃_l = Q(z_l − m)` the rewrite is
//! `W̃_l = W_l·Qᵀ`, `b̃_l = Q(b_l − m)`, `W̃_{l+1} = Q⁻ᵀ·W_{l+1}`,
//! `b̃_{l+1} = b_{l+1} + W_{l+1}ᵀ·m`. It is exact for linear layers and,
//! with `m = 0`, for ReLU layers when `Q` is a permuted positive diagonal
//! matrix.

mod cpn;

pub use cpn::{
    cpn_csv, cpn_search, fine_tune_output, CpnConfig, CpnObjective, CpnReport, CpnTrial, FineTuneConfig,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::linalg::{condition_number, exact_rank_from_singular, inverse, sym_eig, whitening, Matrix};
use crate::network::{ActivationCapture, Activation, Network};
use crate::rng;

/// Largest condition number accepted for `Q`.
pub const MAX_CONDITION: f64 = 1e9;
/// Condition bound for randomly sampled general transforms.
pub const RANDOM_Q_MAX_CONDITION: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    General,
    PermutedPositiveDiagonal,
    Whitening,
    OnesRandomDiagonal,
}

/// `z ↦ Q(z − m)` on one layer's units.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineTransform {
    pub q: Matrix,
    pub m: Vec<f64>,
    pub kind: TransformKind,
}

impl AffineTransform {
    pub fn identity(width: usize) -> Self {
        Self {
            q: Matrix::identity(width),
            m: vec![0.0; width],
            kind: TransformKind::PermutedPositiveDiagonal,
        }
    }

    /// `Q_{i,perm[i]} = scales[perm[i]]`, `m = 0`.
    pub fn permuted_positive_diagonal(perm: &[usize], scales: &[f64]) -> Result<Self> {
        let n = perm.len();
        if scales.len() != n {
            return Err(Error::Dimension {
                context: "permutation scales".into(),
                expected: n,
                got: scales.len(),
            });
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(precondition("permuted_positive_diagonal", "not a permutation"));
            }
        }
        if let Some(s) = scales.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(precondition(
                "permuted_positive_diagonal",
                format!("scales must be positive, got {s}"),
            ));
        }
        let mut q = Matrix::zeros(n, n);
        for (i, &p) in perm.iter().enumerate() {
            q[(i, p)] = scales[p];
        }
        Ok(Self {
            q,
            m: vec![0.0; n],
            kind: TransformKind::PermutedPositiveDiagonal,
        })
    }

    /// Random permutation with `U(lo, hi)` scales.
    pub fn random_ppd(width: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let perm = rng::permutation(width, &mut r);
        let scales: Vec<f64> = (0..width).map(|_| r.random_range(lo..hi)).collect();
        Self::permuted_positive_diagonal(&perm, &scales)
    }

    /// I.i.d. `U(−1, 1)` entries, resampled until the condition number is at
    /// most `max_cond`; `m` has `U(−1, 1)` entries.
    pub fn random_general(width: usize, max_cond: f64, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        for _ in 0..1000 {
            let q = Matrix::from_fn(width, width, |_, _| r.random_range(-1.0..1.0));
            if condition_number(&q)? <= max_cond {
                let m = (0..width).map(|_| r.random_range(-1.0..1.0)).collect();
                return Ok(Self {
                    q,
                    m,
                    kind: TransformKind::General,
                });
            }
        }
        Err(precondition(
            "random_general",
            format!("no {width}x{width} draw with condition <= {max_cond} in 1000 tries"),
        ))
    }

    /// Ones everywhere except a `U(0, 1)` diagonal, `m = 0`.
    pub fn ones_random_diagonal(width: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut q = Matrix::filled(width, width, 1.0);
        for i in 0..width {
            q[(i, i)] = r.random_range(0.0..1.0);
        }
        Self {
            q,
            m: vec![0.0; width],
            kind: TransformKind::OnesRandomDiagonal,
        }
    }

    /// Whitening of the captured activations (mean and population
    /// covariance of `cap.z`).
    pub fn whitening_of(cap: &ActivationCapture, eps: f64) -> Result<Self> {
        let (c, mean) = cap.z.covariance();
        let (q, m) = whitening(&c, &mean, eps)?;
        Ok(Self {
            q,
            m,
            kind: TransformKind::Whitening,
        })
    }

    /// Whitening computed from the pre-activations `h`, as if the layer's
    /// nonlinearity were absent.
    pub fn whitening_of_pre_activation(cap: &ActivationCapture, eps: f64) -> Result<Self> {
        let (c, mean) = cap.h.covariance();
        let (q, m) = whitening(&c, &mean, eps)?;
        Ok(Self {
            q,
            m,
            kind: TransformKind::Whitening,
        })
    }

    pub fn width(&self) -> usize {
        self.q.rows()
    }

    /// Checks shape, conditioning and, for the permuted positive diagonal
    /// kind, its structure.
    pub fn validate(&self) -> Result<()> {
        let n = self.q.rows();
        if !self.q.is_square() || self.m.len() != n {
            return Err(Error::Dimension {
                context: "affine transform".into(),
                expected: n,
                got: self.m.len(),
            });
        }
        if self.kind == TransformKind::PermutedPositiveDiagonal && !is_ppd(&self.q) {
            return Err(precondition("affine transform", "Q is not a permuted positive diagonal matrix"));
        }
        let cond = condition_number(&self.q)?;
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned(cond));
        }
        Ok(())
    }
}

/// Exactly one strictly positive entry per row and column, zeros elsewhere.
pub fn is_ppd(q: &Matrix) -> bool {
    if !q.is_square() {
        return false;
    }
    let n = q.rows();
    let mut col_hits = vec![0; n];
    for i in 0..n {
        let mut row_hits = 0;
        for j in 0..n {
            let v = q[(i, j)];
            if v > 0.0 {
                row_hits += 1;
                col_hits[j] += 1;
            } else if v != 0.0 {
                return false;
            }
        }
        if row_hits != 1 {
            return false;
        }
    }
    col_hits.iter().all(|&c| c == 1)
}

fn check_layer(net: &Network, l: usize, t: &AffineTransform) -> Result<()> {
    if l == 0 || l >= net.num_layers() {
        return Err(precondition(
            "rewrite",
            format!("layer {l} needs a successor; valid layers are 1..{}", net.num_layers()),
        ));
    }
    if net.layer(l).spec.batch_norm {
        return Err(precondition("rewrite", format!("layer {l} uses batch norm")));
    }
    if t.width() != net.width(l) {
        return Err(Error::Dimension {
            context: format!("transform for layer {l}"),
            expected: net.width(l),
            got: t.width(),
        });
    }
    Ok(())
}

/// Applies the affine rewrite to layers `l` and `l+1` regardless of the
/// activation of layer `l`.
pub fn rewrite_affine(net: &Network, l: usize, t: &AffineTransform) -> Result<Network> {
    check_layer(net, l, t)?;
    t.validate()?;
    let q_inv = inverse(&t.q)?;
    let mut out = net.clone();
    let cur = net.layer(l);
    let next = net.layer(l + 1);
    let shifted: Vec<f64> = cur.b.iter().zip(&t.m).map(|(b, m)| b - m).collect();
    {
        let layer = out.layer_mut(l);
        layer.w = cur.w.matmul_t(&t.q);
        layer.b = t.q.matvec(&shifted);
    }
    {
        let layer = out.layer_mut(l + 1);
        layer.w = q_inv.t_matmul(&next.w);
        let shift = next.w.t_matmul(&Matrix::from_vec(t.m.len(), 1, t.m.clone())?);
        layer.b = next.b.iter().zip(shift.data()).map(|(b, s)| b + s).collect();
    }
    Ok(out)
}

/// Output-identical rewrite of a linear layer.
pub fn ion_linear(net: &Network, l: usize, t: &AffineTransform) -> Result<Network> {
    check_layer(net, l, t)?;
    if net.layer(l).spec.activation != Activation::Linear {
        return Err(precondition("ion_linear", format!("layer {l} is not linear")));
    }
    rewrite_affine(net, l, t)
}

/// Output-identical rewrite of a ReLU layer by a permutation and positive
/// per-unit scales.
pub fn ion_relu(net: &Network, l: usize, perm: &[usize], scales: &[f64]) -> Result<Network> {
    let t = AffineTransform::permuted_positive_diagonal(perm, scales)?;
    check_layer(net, l, &t)?;
    if net.layer(l).spec.activation != Activation::Relu {
        return Err(precondition("ion_relu", format!("layer {l} is not ReLU")));
    }
    rewrite_affine(net, l, &t)
}

/// Largest absolute eval-mode output difference over the rows of `x`.
pub fn verify_identical(a: &Network, b: &Network, x: &Matrix) -> Result<f64> {
    if a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim() {
        return Err(precondition("verify_identical", "networks have different input/output widths"));
    }
    let ya = a.predict(x)?;
    let yb = b.predict(x)?;
    Ok(ya
        .data()
        .iter()
        .zip(yb.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug)]
pub struct DeadUnitAlignment {
    pub network: Network,
    /// Transformed units spanning the covariance null space.
    pub null_units: Vec<usize>,
    /// Largest |activation| of those units on the capture set before
    /// snapping.
    pub max_null_abs: f64,
    pub rank: usize,
}

/// Rotates a linear layer into the eigenbasis of its covariance (`m` = mean)
/// so that its null directions become units that are constant at 0 on the
/// capture set. With `snap`, those units' incoming weights and biases are set
/// to exactly zero, making them dead units; outputs then agree up to the
/// pre-snap residual times the outgoing weights.
pub fn dead_unit_alignment(net: &Network, l: usize, cap: &ActivationCapture, snap: bool) -> Result<DeadUnitAlignment> {
    if l == 0 || l >= net.num_layers() || net.layer(l).spec.activation != Activation::Linear {
        return Err(precondition("dead_unit_alignment", format!("layer {l} must be a linear hidden layer")));
    }
    if cap.units() != net.width(l) {
        return Err(Error::Dimension {
            context: "alignment capture".into(),
            expected: net.width(l),
            got: cap.units(),
        });
    }
    let (c, mean) = cap.z.covariance();
    let eig = sym_eig(&c)?;
    let sv: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let rank = exact_rank_from_singular(&sv);
    let m = cap.units();
    if rank == m {
        return Err(Error::NoNullSpace { rank, units: m });
    }
    let t = AffineTransform {
        q: eig.vectors.transpose(),
        m: mean,
        kind: TransformKind::General,
    };
    let mut aligned = ion_linear(net, l, &t)?;
    let null_units: Vec<usize> = (rank..m).collect();
    let z = &cap.z.centered().0.matmul_t(&t.q);
    let max_null_abs = null_units
        .iter()
        .flat_map(|&u| (0..z.rows()).map(move |n| z[(n, u)].abs()))
        .fold(0.0, f64::max);
    if snap {
        let layer = aligned.layer_mut(l);
        for &u in &null_units {
            for i in 0..layer.w.rows() {
                layer.w[(i, u)] = 0.0;
            }
            layer.b[u] = 0.0;
        }
    }
    Ok(DeadUnitAlignment {
        network: aligned,
        null_units,
        max_null_abs,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerSpec;

    #[test]
    fn ppd_detection() {
        let t = AffineTransform::permuted_positive_diagonal(&[2, 0, 1], &[0.5, 2.0, 1.0]).unwrap();
        assert!(is_ppd(&t.q));
        assert!(!is_ppd(&Matrix::filled(2, 2, 1.0)));
        assert!(AffineTransform::permuted_positive_diagonal(&[0, 0], &[1.0, 1.0]).is_err());
        assert!(AffineTransform::permuted_positive_diagonal(&[0, 1], &[1.0, -1.0]).is_err());
    }

    #[test]
    fn identity_rewrite_is_exact() {
        let net = Network::new(3, &[LayerSpec::linear(4), LayerSpec::softmax(2)], 1).unwrap();
        let out = ion_linear(&net, 1, &AffineTransform::identity(4)).unwrap();
        assert_eq!(out, net);
    }

    #[test]
    fn singular_q_rejected() {
        let net = Network::new(3, &[LayerSpec::linear(2), LayerSpec::softmax(2)], 1).unwrap();
        let t = AffineTransform {
            q: Matrix::filled(2, 2, 1.0),
            m: vec![0.0; 2],
            kind: TransformKind::General,
        };
        assert!(matches!(ion_linear(&net, 1, &t), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn activation_checks() {
        let net = Network::mlp(3, &[4], 2, 0).unwrap();
        assert!(ion_linear(&net, 1, &AffineTransform::identity(4)).is_err());
        assert!(ion_relu(&net, 1, &[0, 1, 2, 3], &[1.0, 1.0, 0.0, 1.0]).is_err());
        assert!(ion_relu(&net, 2, &[0, 1], &[1.0, 1.0]).is_err());
        let same = ion_relu(&net, 1, &[0, 1, 2, 3], &[1.0; 4]).unwrap();
        assert_eq!(same, net);
    }
}
