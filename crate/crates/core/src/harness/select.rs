//! Choosing among regularizers and loss weights by validation error.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::run::RunReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index into the input reports.
    pub index: usize,
    pub label: String,
    pub method: Method,
    pub loss_weight: f64,
    pub val_error_mean: f64,
    pub val_error_std: f64,
    pub test_error_mean: f64,
    /// Baseline mean validation error minus the selected one; `None`
    /// without a baseline report.
    pub improvement: Option<f64>,
}

fn by_validation(a: &RunReport, b: &RunReport) -> Ordering {
    a.val_error
        .mean
        .total_cmp(&b.val_error.mean)
        .then(a.val_error.std.total_cmp(&b.val_error.std))
        .then_with(|| a.label().cmp(&b.label()))
}

/// Lowest mean validation error; ties go to the lower std, then the
/// label in lexical order.
pub fn best_of_set(reports: &[RunReport]) -> Option<Selection> {
    let (index, best) = reports
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| by_validation(a, b))?;
    let improvement = reports
        .iter()
        .filter(|r| r.method == Method::Baseline)
        .min_by(|a, b| by_validation(a, b))
        .map(|b| b.val_error.mean - best.val_error.mean);
    Some(Selection {
        index,
        label: best.label(),
        method: best.method,
        loss_weight: best.loss_weight,
        val_error_mean: best.val_error.mean,
        val_error_std: best.val_error.std,
        test_error_mean: best.test_error.mean,
        improvement,
    })
}

/// Per method, the loss weight with the best validation error, in order of
/// first appearance.
pub fn best_per_method(reports: &[RunReport]) -> Vec<Selection> {
    let mut methods: Vec<Method> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .filter_map(|m| {
            let idx: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].method == m).collect();
            let subset: Vec<RunReport> = idx.iter().map(|&i| reports[i].clone()).collect();
            let mut s = best_of_set(&subset)?;
            s.index = idx[s.index];
            s.improvement = None;
            Some(s)
        })
        .collect()
}
