//! Dense linear algebra: decompositions, rotations, whitening, PCA and rank
//! measures. Everything here is a pure function of its inputs.

mod eig;
mod matrix;
mod svd;

pub use eig::{sym_eig, EigResult};
pub use matrix::Matrix;
pub use svd::{singular_values, svd, SvdResult, MAX_SWEEPS};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{precondition, Error, Result};
use crate::rng;

/// Singular values at or below `RANK_TOL · s_max` do not count toward the
/// exact rank.
pub const RANK_TOL: f64 = 1e-10;

/// Default regularizer added to eigenvalues before inverting them in
/// [`whitening`].
pub const WHITENING_EPS: f64 = 1e-6;

/// `out_dim × in_dim` matrix with orthonormal columns: a Gaussian matrix
/// orthonormalized by twice-repeated modified Gram-Schmidt.
pub fn random_rotation(out_dim: usize, in_dim: usize, seed: u64) -> Result<Matrix> {
    if in_dim == 0 || out_dim < in_dim {
        return Err(precondition(
            "random_rotation",
            format!("need out_dim >= in_dim >= 1, got ({out_dim}, {in_dim})"),
        ));
    }
    let mut rng = rng::seeded(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(in_dim);
    while cols.len() < in_dim {
        let mut v: Vec<f64> = (0..out_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // A Gaussian draw landing in the span is a measure-zero event; redraw.
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        cols.push(v);
    }
    let mut r = Matrix::zeros(out_dim, in_dim);
    for (j, c) in cols.iter().enumerate() {
        r.set_col(j, c);
    }
    Ok(r)
}

/// Whitening transform for covariance `c`: `q = diag((λ+eps)^-1/2) · Eᵀ`,
/// so that `q (z − m)` has approximately identity covariance. Returns `q`
/// and the mean `m` unchanged.
pub fn whitening(c: &Matrix, mean: &[f64], eps: f64) -> Result<(Matrix, Vec<f64>)> {
    if !(eps > 0.0) {
        return Err(precondition("whitening", format!("eps must be > 0, got {eps}")));
    }
    if mean.len() != c.rows() {
        return Err(Error::Dimension {
            context: "whitening mean".into(),
            expected: c.rows(),
            got: mean.len(),
        });
    }
    let eig = sym_eig(c)?;
    let n = c.rows();
    if let Some(&lmin) = eig.values.last() {
        if lmin < -1e-8 {
            return Err(precondition(
                "whitening",
                format!("not a covariance: eigenvalue {lmin:.3e} < -1e-8"),
            ));
        }
    }
    let mut q = eig.vectors.transpose();
    for (i, &lambda) in eig.values.iter().enumerate() {
        let f = 1.0 / (lambda.max(0.0) + eps).sqrt();
        q.row_mut(i).iter_mut().for_each(|v| *v *= f);
    }
    debug_assert_eq!(q.shape(), (n, n));
    Ok((q, mean.to_vec()))
}

#[derive(Clone, Debug)]
pub struct Pca {
    /// `D × k`; columns are the leading principal directions.
    pub components: Matrix,
    /// `N × k` coordinates of the centered data.
    pub projected: Matrix,
    /// `N × D`, `mean + projected · componentsᵀ`.
    pub reconstructed: Matrix,
    pub mean: Vec<f64>,
    /// Eigenvalues of the population covariance, descending (all `D`).
    pub variances: Vec<f64>,
}

/// Principal components of `x` (rows are samples) from the eigendecomposition
/// of its covariance.
pub fn pca(x: &Matrix, k: usize) -> Result<Pca> {
    if k == 0 || k > x.cols() {
        return Err(precondition(
            "pca",
            format!("k must be in 1..={}, got {k}", x.cols()),
        ));
    }
    if x.rows() == 0 {
        return Err(precondition("pca", "no samples"));
    }
    let (centered, mean) = x.centered();
    let mut cov = centered.t_matmul(&centered);
    cov.symmetrize();
    let eig = sym_eig(&cov)?;
    let n = x.rows() as f64;
    let variances = eig.values.iter().map(|v| v / n).collect();
    let idx: Vec<usize> = (0..k).collect();
    let components = eig.vectors.select_cols(&idx);
    let projected = centered.matmul(&components);
    let mut reconstructed = projected.matmul_t(&components);
    reconstructed.add_row_vector(&mean);
    Ok(Pca {
        components,
        projected,
        reconstructed,
        mean,
        variances,
    })
}

/// `‖a‖_F² / ‖a‖₂²`.
pub fn stable_rank(a: &Matrix) -> Result<f64> {
    let s = singular_values(a)?;
    stable_rank_from_singular(&s)
}

pub fn stable_rank_from_singular(s: &[f64]) -> Result<f64> {
    let top = s.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Err(Error::UndefinedRank);
    }
    Ok(s.iter().map(|v| (v / top) * (v / top)).sum())
}

/// Number of singular values above `RANK_TOL · s_max`.
pub fn exact_rank(a: &Matrix) -> Result<usize> {
    Ok(exact_rank_from_singular(&singular_values(a)?))
}

pub fn exact_rank_from_singular(s: &[f64]) -> usize {
    let top = s.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_TOL * top).count()
}

/// `s_max / s_min`; infinite when singular.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let s = singular_values(a)?;
    let smin = *s.last().unwrap();
    Ok(if smin == 0.0 { f64::INFINITY } else { s[0] / smin })
}

/// Inverse by LU factorization with partial pivoting.
pub fn inverse(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() || a.is_empty() {
        return Err(precondition("inverse", "expected a nonempty square matrix"));
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = a.max_abs();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| lu[(i, col)].abs().total_cmp(&lu[(j, col)].abs()))
            .unwrap();
        if lu[(pivot, col)].abs() <= f64::EPSILON * scale * n as f64 {
            return Err(Error::IllConditioned(f64::INFINITY));
        }
        if pivot != col {
            perm.swap(pivot, col);
            for j in 0..n {
                let t = lu[(pivot, j)];
                lu[(pivot, j)] = lu[(col, j)];
                lu[(col, j)] = t;
            }
        }
        let p = lu[(col, col)];
        for i in col + 1..n {
            let f = lu[(i, col)] / p;
            lu[(i, col)] = f;
            if f != 0.0 {
                for j in col + 1..n {
                    lu[(i, j)] -= f * lu[(col, j)];
                }
            }
        }
    }
    let mut inv = Matrix::zeros(n, n);
    let mut x = vec![0.0; n];
    for c in 0..n {
        // Solve L U x = P e_c.
        for i in 0..n {
            let mut s = if perm[i] == c { 1.0 } else { 0.0 };
            for j in 0..i {
                s -= lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= lu[(i, j)] * x[j];
            }
            x[i] = s / lu[(i, i)];
        }
        inv.set_col(c, &x);
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_rank_closed_forms() {
        assert!((stable_rank(&Matrix::identity(4)).unwrap() - 4.0).abs() < 1e-12);
        let r1 = Matrix::from_fn(3, 3, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
        assert!((stable_rank(&r1).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::from_diag(&[2.0, 1.0, 1.0]);
        assert!((stable_rank(&d).unwrap() - 1.5).abs() < 1e-12);
        assert!(matches!(stable_rank(&Matrix::zeros(2, 2)), Err(Error::UndefinedRank)));
    }

    #[test]
    fn exact_rank_threshold() {
        assert_eq!(exact_rank(&Matrix::from_diag(&[1.0, 1e-9, 1e-11])).unwrap(), 2);
        assert_eq!(exact_rank(&Matrix::zeros(3, 3)).unwrap(), 0);
    }

    #[test]
    fn rotation_preconditions_and_determinism() {
        assert!(random_rotation(2, 3, 1).is_err());
        assert!(random_rotation(3, 0, 1).is_err());
        let a = random_rotation(5, 3, 9).unwrap();
        let b = random_rotation(5, 3, 9).unwrap();
        assert_eq!(a.data(), b.data());
        let rtr = a.t_matmul(&a);
        assert!(rtr.sub(&Matrix::identity(3)).max_abs() < 1e-12);
    }

    #[test]
    fn whitening_diagonal_case() {
        let c = Matrix::from_diag(&[4.0, 1.0]);
        let (q, m) = whitening(&c, &[1.0, 2.0], 1e-12).unwrap();
        assert_eq!(m, vec![1.0, 2.0]);
        // q = diag(1/2, 1) · P with P the axis permutation from sym_eig
        assert!((q[(0, 0)].abs() - 0.5).abs() < 1e-9);
        assert!(q[(0, 1)].abs() < 1e-12);
        assert!((q[(1, 1)].abs() - 1.0).abs() < 1e-9);
        let w = q.matmul(&c).matmul_t(&q);
        assert!(w.sub(&Matrix::identity(2)).max_abs() < 1e-9);
    }

    #[test]
    fn whitening_rejects_non_covariance() {
        let c = Matrix::from_diag(&[1.0, -1.0]);
        assert!(whitening(&c, &[0.0, 0.0], 1e-6).is_err());
        assert!(whitening(&Matrix::identity(2), &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let a = Matrix::from_rows(&[
            vec![0.0, 2.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![3.0, 0.0, 1.0],
        ])
        .unwrap();
        let inv = inverse(&a).unwrap();
        assert!(a.matmul(&inv).sub(&Matrix::identity(3)).max_abs() < 1e-14);
        assert!(inverse(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn pca_full_basis_and_range() {
        let x = Matrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let p = pca(&x, 3).unwrap();
        assert!(p.reconstructed.sub(&x).max_abs() < 1e-10);
        assert!(pca(&x, 0).is_err());
        assert!(pca(&x, 4).is_err());
    }
}
