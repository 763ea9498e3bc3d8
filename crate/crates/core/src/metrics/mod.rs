//! Characteristics of a captured layer: amplitude, covariance, correlation,
//! sparsity, dead units and rank.
//!
//! "Zero" means exactly 0.0. With the positive-only convention (for ReLU
//! layers) amplitude, covariance and correlation use only active entries:
//! a pair of units is compared over the samples where both are active, or
//! where either is, depending on [`PairMode`]. Rank measures always use the
//! full-sample covariance, so a dead unit is always a null direction.

mod csv;

pub use csv::{activation_dump, report_csv_header, report_csv_row, REPORT_COLUMNS};

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::linalg::{exact_rank_from_singular, stable_rank_from_singular, sym_eig, Matrix};
use crate::network::ActivationCapture;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    #[default]
    BothActive,
    EitherActive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacteristicsOptions {
    pub positive_only: bool,
    #[serde(default)]
    pub pair_mode: PairMode,
}

impl CharacteristicsOptions {
    pub fn positive_only() -> Self {
        Self {
            positive_only: true,
            pair_mode: PairMode::BothActive,
        }
    }

    pub fn all_samples() -> Self {
        Self {
            positive_only: false,
            pair_mode: PairMode::BothActive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicsReport {
    pub layer: usize,
    pub n_samples: usize,
    pub units: usize,
    pub positive_only: bool,
    pub amplitude: f64,
    pub mean_cov: f64,
    pub mean_corr: f64,
    pub sparsity: f64,
    pub dead_fraction: f64,
    pub dead_units: usize,
    pub stable_rank_cov: f64,
    pub stable_rank_act: f64,
    pub exact_rank_cov: usize,
    /// No entry qualified for the amplitude average.
    pub empty_amplitude: bool,
    /// Pairs left out of the covariance average (too few shared samples).
    pub skipped_cov_pairs: usize,
    /// Pairs left out of the correlation average (also zero variance).
    pub skipped_corr_pairs: usize,
}

pub fn characteristics(cap: &ActivationCapture, positive_only: bool) -> Result<CharacteristicsReport> {
    characteristics_with(
        cap,
        CharacteristicsOptions {
            positive_only,
            pair_mode: PairMode::BothActive,
        },
    )
}

pub fn characteristics_with(cap: &ActivationCapture, opts: CharacteristicsOptions) -> Result<CharacteristicsReport> {
    let z = &cap.z;
    let (n, m) = z.shape();
    if n < 2 || m == 0 {
        return Err(precondition(
            "characteristics",
            format!("need at least 2 samples and 1 unit, got {n}x{m}"),
        ));
    }
    if !z.is_finite() {
        return Err(precondition("characteristics", "activations must be finite"));
    }
    let zeros = z.data().iter().filter(|&&v| v == 0.0).count();
    let cols: Vec<Vec<f64>> = (0..m).map(|j| z.col(j)).collect();
    let dead_units = cols.iter().filter(|c| c.iter().all(|&v| v == 0.0)).count();

    let (amp_sum, amp_count) = if opts.positive_only {
        z.data().iter().filter(|&&v| v > 0.0).fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1))
    } else {
        (z.data().iter().map(|v| v.abs()).sum(), n * m)
    };

    let pairs = pair_stats(&cols, opts);

    let (cov, _) = z.covariance();
    let cov_sv = abs_eigenvalues(&cov)?;
    let gram = z.t_matmul(z);
    let act_sv: Vec<f64> = abs_eigenvalues(&gram)?.iter().map(|v| v.sqrt()).collect();

    Ok(CharacteristicsReport {
        layer: cap.layer,
        n_samples: n,
        units: m,
        positive_only: opts.positive_only,
        amplitude: if amp_count > 0 { amp_sum / amp_count as f64 } else { 0.0 },
        mean_cov: pairs.mean_cov,
        mean_corr: pairs.mean_corr,
        sparsity: zeros as f64 / (n * m) as f64,
        dead_fraction: dead_units as f64 / m as f64,
        dead_units,
        stable_rank_cov: stable_rank_or_zero(&cov_sv),
        stable_rank_act: stable_rank_or_zero(&act_sv),
        exact_rank_cov: exact_rank_from_singular(&cov_sv),
        empty_amplitude: amp_count == 0,
        skipped_cov_pairs: pairs.skipped_cov,
        skipped_corr_pairs: pairs.skipped_corr,
    })
}

/// Singular values of a symmetric PSD matrix, descending.
fn abs_eigenvalues(c: &Matrix) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = sym_eig(c)?.values.iter().map(|x| x.abs()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

/// The zero matrix has no stable rank; reports carry 0.
fn stable_rank_or_zero(s: &[f64]) -> f64 {
    stable_rank_from_singular(s).unwrap_or(0.0)
}

struct PairSummary {
    mean_cov: f64,
    mean_corr: f64,
    skipped_cov: usize,
    skipped_corr: usize,
}

fn pair_stats(cols: &[Vec<f64>], opts: CharacteristicsOptions) -> PairSummary {
    let m = cols.len();
    let mut cov_sum = 0.0;
    let mut cov_n = 0usize;
    let mut corr_sum = 0.0;
    let mut corr_n = 0usize;
    let mut skipped_cov = 0;
    let mut skipped_corr = 0;
    let mut idx: Vec<usize> = Vec::with_capacity(cols.first().map_or(0, Vec::len));
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (&cols[i], &cols[j]);
            idx.clear();
            if opts.positive_only {
                idx.extend((0..a.len()).filter(|&n| match opts.pair_mode {
                    PairMode::BothActive => a[n] > 0.0 && b[n] > 0.0,
                    PairMode::EitherActive => a[n] > 0.0 || b[n] > 0.0,
                }));
            } else {
                idx.extend(0..a.len());
            }
            if idx.len() < 2 {
                skipped_cov += 1;
                skipped_corr += 1;
                continue;
            }
            let k = idx.len() as f64;
            let ma = idx.iter().map(|&n| a[n]).sum::<f64>() / k;
            let mb = idx.iter().map(|&n| b[n]).sum::<f64>() / k;
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for &n in &idx {
                let (da, db) = (a[n] - ma, b[n] - mb);
                sab += da * db;
                saa += da * da;
                sbb += db * db;
            }
            cov_sum += sab / k;
            cov_n += 1;
            if saa > 0.0 && sbb > 0.0 {
                corr_sum += sab / (saa.sqrt() * sbb.sqrt());
                corr_n += 1;
            } else {
                skipped_corr += 1;
            }
        }
    }
    PairSummary {
        mean_cov: if cov_n > 0 { cov_sum / cov_n as f64 } else { 0.0 },
        mean_corr: if corr_n > 0 { corr_sum / corr_n as f64 } else { 0.0 },
        skipped_cov,
        skipped_corr,
    }
}

/// Slack of `P_d ≤ P_s` and of `M·P_d ≤ M − r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub sparsity_slack: f64,
    pub rank_slack: f64,
}

const INEQUALITY_TOL: f64 = 1e-9;

pub fn verify_inequalities(rep: &CharacteristicsReport, m: usize) -> Result<InequalityCheck> {
    let sparsity_slack = rep.sparsity - rep.dead_fraction;
    if sparsity_slack < -INEQUALITY_TOL {
        return Err(Error::InvariantViolation(format!(
            "dead fraction {} exceeds sparsity {} (layer {})",
            rep.dead_fraction, rep.sparsity, rep.layer
        )));
    }
    let lhs = m as f64 * rep.dead_fraction;
    let rhs = m as f64 - rep.exact_rank_cov as f64;
    if lhs > rhs + INEQUALITY_TOL {
        return Err(Error::InvariantViolation(format!(
            "M*P_d = {lhs} exceeds M - rank = {rhs} (layer {})",
            rep.layer
        )));
    }
    Ok(InequalityCheck {
        sparsity_slack,
        rank_slack: rhs - lhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cap(z: Matrix) -> ActivationCapture {
        ActivationCapture {
            layer: 1,
            h: z.clone(),
            z,
            labels: Vec::new(),
        }
    }

    #[test]
    fn all_zero_capture() {
        let rep = characteristics(&cap(Matrix::zeros(5, 3)), true).unwrap();
        assert_eq!(rep.sparsity, 1.0);
        assert_eq!(rep.dead_fraction, 1.0);
        assert_eq!(rep.amplitude, 0.0);
        assert!(rep.empty_amplitude);
        assert_eq!(rep.exact_rank_cov, 0);
        let chk = verify_inequalities(&rep, 3).unwrap();
        assert_eq!(chk.sparsity_slack, 0.0);
        assert_eq!(chk.rank_slack, 0.0);
    }

    #[test]
    fn perfectly_correlated_pair() {
        let z = Matrix::from_fn(6, 2, |i, j| (i + 1) as f64 * (j + 1) as f64);
        for positive_only in [false, true] {
            let rep = characteristics(&cap(z.clone()), positive_only).unwrap();
            assert!((rep.mean_corr - 1.0).abs() < 1e-12);
            assert_eq!(rep.sparsity, 0.0);
        }
    }

    #[test]
    fn positive_only_pairs_ignore_inactive_samples() {
        // Unit 1 is inactive whenever unit 0 is small, which would add a
        // spurious correlation if zeros were included.
        let z = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![5.0, 3.0],
            vec![6.0, 3.0],
            vec![7.0, 3.0],
        ])
        .unwrap();
        let pos = characteristics(&cap(z.clone()), true).unwrap();
        assert_eq!(pos.mean_cov, 0.0);
        assert_eq!(pos.skipped_corr_pairs, 1);
        assert!((pos.amplitude - 30.0 / 8.0).abs() < 1e-12);
        let all = characteristics(&cap(z.clone()), false).unwrap();
        assert!(all.mean_corr > 0.9);
        let either = characteristics_with(
            &cap(z),
            CharacteristicsOptions {
                positive_only: true,
                pair_mode: PairMode::EitherActive,
            },
        )
        .unwrap();
        assert!(either.mean_corr > 0.9);
    }

    #[test]
    fn fabricated_violation_detected() {
        let mut rep = characteristics(&cap(Matrix::identity(3)), true).unwrap();
        rep.dead_fraction = 0.9;
        assert!(matches!(verify_inequalities(&rep, 3), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn needs_two_samples() {
        assert!(characteristics(&cap(Matrix::zeros(1, 3)), true).is_err());
    }
}
