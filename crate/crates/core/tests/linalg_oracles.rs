//! Decompositions checked against independent oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replab_core::linalg::{
    exact_rank, pca, random_rotation, stable_rank, svd, sym_eig, whitening, Matrix,
};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Classical two-sided cyclic Jacobi on a symmetric matrix, run until the
/// off-diagonal mass is negligible. Returns eigenvalues, descending.
fn jacobi_eigenvalues(c: &Matrix) -> Vec<f64> {
    let n = c.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| c.row(i).to_vec()).collect();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = cs * akp - sn * akq;
                    a[k][q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = cs * apk - sn * aqk;
                    a[q][k] = sn * apk + cs * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn svd_matches_jacobi_oracle_on_gram_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_matrix(5, 4, &mut rng);
    let s = svd(&a).unwrap().s;
    let oracle: Vec<f64> = jacobi_eigenvalues(&a.t_matmul(&a))
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    assert_eq!(s.len(), 4);
    for (x, y) in s.iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-8, "{x} vs {y}");
    }
}

#[test]
fn sym_eig_cross_checks_against_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let r = random_matrix(6, 6, &mut rng);
    let c = r.add(&r.transpose());
    let eig = sym_eig(&c).unwrap();
    let mut abs_vals: Vec<f64> = eig.values.iter().map(|v| v.abs()).collect();
    abs_vals.sort_by(|x, y| y.total_cmp(x));
    let s = svd(&c).unwrap().s;
    for (x, y) in abs_vals.iter().zip(&s) {
        assert!((x - y).abs() < 1e-8);
    }
    // C v = λ v and orthonormality
    let cv = c.matmul(&eig.vectors);
    for j in 0..6 {
        for i in 0..6 {
            let want = eig.values[j] * eig.vectors[(i, j)];
            assert!((cv[(i, j)] - want).abs() < 1e-8 * eig.values[0].abs());
        }
    }
    let vtv = eig.vectors.t_matmul(&eig.vectors);
    assert!(vtv.sub(&Matrix::identity(6)).max_abs() < 1e-8);
}

#[test]
fn reconstruction_on_a_thousand_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let rows = rng.random_range(1..=64);
        let cols = rng.random_range(1..=64);
        let a = random_matrix(rows, cols, &mut rng);
        let r = svd(&a).unwrap();
        assert_eq!(r.s.len(), rows.min(cols));
        assert!(r.s.windows(2).all(|w| w[0] >= w[1]) && r.s.iter().all(|&s| s >= 0.0));
        let err = r.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm();
        assert!(err <= 1e-9, "svd reconstruction {err} for {rows}x{cols}");

        let n = rows.min(cols);
        let sym = Matrix::from_fn(n, n, |i, j| a[(i, j)] + a[(j, i)]);
        let e = sym_eig(&sym).unwrap();
        let mut vd = e.vectors.clone();
        for j in 0..n {
            for i in 0..n {
                vd[(i, j)] *= e.values[j];
            }
        }
        let back = vd.matmul_t(&e.vectors);
        let err = back.sub(&sym).frobenius_norm() / sym.frobenius_norm().max(1e-300);
        assert!(err <= 1e-8, "eig reconstruction {err} for {n}x{n}");
    }
}

#[test]
fn stable_rank_bounded_by_exact_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let rows = rng.random_range(2..20);
        let cols = rng.random_range(2..20);
        let inner = rng.random_range(1..=rows.min(cols));
        // product of random factors has rank `inner`
        let a = random_matrix(rows, inner, &mut rng).matmul(&random_matrix(inner, cols, &mut rng));
        let sr = stable_rank(&a).unwrap();
        let er = exact_rank(&a).unwrap();
        assert_eq!(er, inner);
        assert!(sr >= 1.0 - 1e-12 && sr <= er as f64 + 1e-9);
    }
}

#[test]
fn rotation_shapes_from_the_synthetic_generator() {
    let r = random_rotation(1000, 10, 3).unwrap();
    for j in 0..10 {
        let norm: f64 = r.col(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-10);
    }
    let sq = random_rotation(3, 3, 4).unwrap();
    assert!(sq.t_matmul(&sq).sub(&Matrix::identity(3)).max_abs() < 1e-10);
}

#[test]
fn whitening_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mix = Matrix::from_rows(&[
        vec![2.0, 0.0, 0.0],
        vec![1.2, 0.7, 0.0],
        vec![-0.5, 0.3, 1.5],
    ])
    .unwrap();
    let g = Matrix::from_fn(500, 3, |_, _| {
        rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let mut x = g.matmul_t(&mix);
    x.add_row_vector(&[1.0, -2.0, 0.5]);
    let (c, mean) = x.covariance();
    let (q, m) = whitening(&c, &mean, 1e-6).unwrap();
    let (centered, _) = x.centered();
    let _ = m;
    let white = centered.matmul_t(&q);
    let (wc, _) = white.covariance();
    assert!(wc.sub(&Matrix::identity(3)).max_abs() < 0.05);
}

#[test]
fn pca_eckart_young() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random_matrix(100, 50, &mut rng);
    let p = pca(&x, 10).unwrap();
    let err = p.reconstructed.sub(&x).frobenius_norm();
    let (centered, _) = x.centered();
    let s = svd(&centered).unwrap().s;
    let tail = s[10..].iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((err - tail).abs() < 1e-8, "{err} vs {tail}");

    let mut prev = f64::INFINITY;
    for k in [1, 5, 10, 25, 50] {
        let e = pca(&x, k).unwrap().reconstructed.sub(&x).frobenius_norm();
        assert!(e <= prev + 1e-12);
        prev = e;
    }
    assert!(prev < 1e-8);
}

#[test]
fn pca_recovers_a_plane() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let basis = random_matrix(2, 5, &mut rng);
    let coords = random_matrix(40, 2, &mut rng);
    let mut x = coords.matmul(&basis);
    x.add_row_vector(&[3.0, -1.0, 0.0, 2.0, 5.0]);
    let p = pca(&x, 2).unwrap();
    assert!(p.reconstructed.sub(&x).frobenius_norm() < 1e-9);
}

fn orthogonal(n: usize, seed: u64) -> Matrix {
    random_rotation(n, n, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stable_rank_is_orthogonally_invariant(seed in any::<u64>(), rows in 2usize..12, cols in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(rows, cols, &mut rng);
        let left = orthogonal(rows, seed ^ 1);
        let right = orthogonal(cols, seed ^ 2);
        let rotated = left.matmul(&a).matmul(&right);
        let d = (stable_rank(&a).unwrap() - stable_rank(&rotated).unwrap()).abs();
        prop_assert!(d < 1e-9);
    }
}
