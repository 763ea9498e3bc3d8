//! CSV emission. Floats use Rust's shortest round-trip formatting, so values
//! parse back bit-exactly and output is byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::CharacteristicsReport;
use crate::error::{precondition, Result};
use crate::network::ActivationCapture;

/// Characteristics CSV columns, in order.
pub const REPORT_COLUMNS: [&str; 18] = [
    "run",
    "layer",
    "regularizer",
    "loss_weight",
    "n_samples",
    "units",
    "positive_only",
    "amplitude",
    "mean_cov",
    "mean_corr",
    "sparsity",
    "dead_fraction",
    "dead_units",
    "stable_rank_cov",
    "stable_rank_act",
    "exact_rank_cov",
    "skipped_cov_pairs",
    "skipped_corr_pairs",
];

pub fn report_csv_header() -> String {
    REPORT_COLUMNS.join(",")
}

pub fn report_csv_row(run: &str, regularizer: &str, loss_weight: f64, rep: &CharacteristicsReport) -> String {
    format!(
        "{run},{},{regularizer},{loss_weight},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        rep.layer,
        rep.n_samples,
        rep.units,
        rep.positive_only,
        rep.amplitude,
        rep.mean_cov,
        rep.mean_corr,
        rep.sparsity,
        rep.dead_fraction,
        rep.dead_units,
        rep.stable_rank_cov,
        rep.stable_rank_act,
        rep.exact_rank_cov,
        rep.skipped_cov_pairs,
        rep.skipped_corr_pairs,
    )
}

/// Per-sample activations of selected units: `label,z_<u>...`.
pub fn activation_dump(cap: &ActivationCapture, units: &[usize], path: &Path) -> Result<()> {
    if let Some(&u) = units.iter().find(|&&u| u >= cap.units()) {
        return Err(precondition(
            "activation_dump",
            format!("unit {u} out of range for {} units", cap.units()),
        ));
    }
    let mut out = String::from("label");
    for u in units {
        write!(out, ",z_{u}").unwrap();
    }
    out.push('\n');
    for n in 0..cap.samples() {
        if let Some(l) = cap.labels.get(n) {
            write!(out, "{l}").unwrap();
        }
        for &u in units {
            write!(out, ",{}", cap.z[(n, u)]).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
