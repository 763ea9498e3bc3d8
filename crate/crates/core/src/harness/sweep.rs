//! Sweeps over one config axis, optionally crossed with regularizers and
//! data dimension.

use std::fmt::{self, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{DataSource, ExperimentConfig, RegularizerChoice, Splits};
use super::run::{run_on, RunReport};
use super::table::csv_to_table;
use crate::error::{Error, Result};
use crate::network::{OptimizerConfig, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LossWeight,
    DFactors,
    PcaK,
    DataSize,
    LayerWidth,
    Optimizer,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LossWeight => "loss_weight",
            SweepAxis::DFactors => "d_factors",
            SweepAxis::PcaK => "pca_k",
            SweepAxis::DataSize => "data_size",
            SweepAxis::LayerWidth => "layer_width",
            SweepAxis::Optimizer => "optimizer",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axis: SweepAxis,
    pub values: Vec<Value>,
    /// Crossed with every value: synthetic factor count, or PCA `k` for
    /// other sources. Empty keeps the base dataset.
    #[serde(default)]
    pub d_values: Vec<usize>,
    /// Crossed with every value. Empty keeps the base regularizer.
    #[serde(default)]
    pub regularizers: Vec<RegularizerChoice>,
}

/// One resolved grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub d: Option<usize>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub point: SweepPoint,
    /// Error message for a failed run.
    pub outcome: std::result::Result<RunReport, String>,
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Object(o) => o.get("kind").map_or_else(|| v.to_string(), value_label),
        _ => v.to_string(),
    }
}

fn as_usize(axis: SweepAxis, v: &Value) -> Result<usize> {
    v.as_u64()
        .filter(|&n| n > 0)
        .map(|n| n as usize)
        .ok_or_else(|| Error::Config(format!("{axis} values must be positive integers, got {v}")))
}

fn apply(cfg: &mut ExperimentConfig, axis: SweepAxis, v: &Value) -> Result<()> {
    match axis {
        SweepAxis::LossWeight => {
            cfg.regularizer.loss_weight = v
                .as_f64()
                .ok_or_else(|| Error::Config(format!("loss_weight values must be numbers, got {v}")))?;
        }
        SweepAxis::DFactors => {
            let d = as_usize(axis, v)?;
            match &mut cfg.dataset.source {
                DataSource::Synthetic { d: slot, .. } => *slot = d,
                _ => return Err(Error::Config("d_factors axis needs a synthetic dataset".into())),
            }
        }
        SweepAxis::PcaK => cfg.dataset.pca_k = Some(as_usize(axis, v)?),
        SweepAxis::DataSize => cfg.dataset.split.train_n = as_usize(axis, v)?,
        SweepAxis::LayerWidth => {
            let w = as_usize(axis, v)?;
            cfg.architecture.hidden.iter_mut().for_each(|h| *h = w);
        }
        SweepAxis::Optimizer => {
            cfg.optimizer = match v {
                Value::String(_) => {
                    let kind: OptimizerKind =
                        serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string()))?;
                    OptimizerConfig::default_for(kind)
                }
                _ => serde_json::from_value(v.clone()).map_err(|e| Error::Config(e.to_string()))?,
            };
        }
    }
    Ok(())
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.points()?;
        Ok(spec)
    }

    /// Grid points in canonical order: regularizer, then d, then value.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep values must be nonempty".into()));
        }
        let regs = if self.regularizers.is_empty() {
            vec![self.base.regularizer]
        } else {
            self.regularizers.clone()
        };
        let ds: Vec<Option<usize>> = if self.d_values.is_empty() {
            vec![None]
        } else {
            self.d_values.iter().map(|&d| Some(d)).collect()
        };
        let mut out = Vec::new();
        for r in &regs {
            for &d in &ds {
                for v in &self.values {
                    let mut cfg = self.base.clone();
                    cfg.regularizer = *r;
                    if let Some(d) = d {
                        if d == 0 {
                            return Err(Error::Config("d_values must be positive".into()));
                        }
                        cfg.dataset.set_dimension_knob(d);
                    }
                    apply(&mut cfg, self.axis, v)?;
                    let label = value_label(v);
                    cfg.name = format!("{}-{}={}", self.base.name, self.axis, label);
                    if let Some(d) = d {
                        cfg.name.push_str(&format!("-d={d}"));
                    }
                    cfg.name = format!("{}-{}", cfg.name, r.method);
                    cfg.validate()?;
                    out.push(SweepPoint {
                        value: label,
                        d: cfg.dataset.dimension_knob(),
                        config: cfg,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Runs every point on the current rayon pool. Configuration errors abort
/// before any training; failures during a point (divergence included) are
/// recorded on its row and the sweep continues.
pub fn sweep(spec: &SweepSpec, base: &Path) -> Result<Vec<SweepRow>> {
    let points = spec.points()?;
    let rows = points
        .into_par_iter()
        .map(|point| {
            let outcome = point
                .config
                .dataset
                .load(base)
                .and_then(|splits: Splits| run_on(&point.config, &splits))
                .map(|o| o.report)
                .map_err(|e| e.to_string());
            SweepRow { point, outcome }
        })
        .collect();
    Ok(rows)
}

pub const SWEEP_COLUMNS: [&str; 23] = [
    "axis",
    "value",
    "d",
    "regularizer",
    "loss_weight",
    "trials",
    "failed",
    "val_error_mean",
    "val_error_std",
    "test_error_mean",
    "test_error_std",
    "accuracy_mean",
    "accuracy_std",
    "layer",
    "amplitude",
    "mean_cov",
    "mean_corr",
    "sparsity",
    "dead_fraction",
    "stable_rank_cov",
    "exact_rank_cov",
    "mi_x_hi",
    "mi_y_hi",
];

/// One row per grid point. Characteristic columns average the first
/// captured layer over trials; a failed row leaves metrics empty and puts
/// the error in a trailing `error` column.
pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = SWEEP_COLUMNS.join(",");
    s.push_str(",error\n");
    for row in rows {
        let cfg = &row.point.config;
        let d = row.point.d.map_or(String::new(), |d| d.to_string());
        let _ = write!(
            s,
            "{axis},{},{d},{},{},{},",
            row.point.value, cfg.regularizer.method, cfg.regularizer.loss_weight, cfg.trials
        );
        match &row.outcome {
            Ok(rep) => {
                let acc: Vec<f64> = rep.trials.iter().map(|t| 100.0 - t.test_error).collect();
                let acc = super::run::MeanStd::of(&acc);
                let _ = write!(
                    s,
                    "false,{},{},{},{},{},{}",
                    rep.val_error.mean, rep.val_error.std, rep.test_error.mean, rep.test_error.std, acc.mean, acc.std
                );
                let layer = cfg.capture_layers()[0];
                match rep.mean_layer(layer) {
                    Some(m) => {
                        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                        let _ = write!(
                            s,
                            ",{layer},{},{},{},{},{},{},{},{},{}",
                            m.amplitude,
                            m.mean_cov,
                            m.mean_corr,
                            m.sparsity,
                            m.dead_fraction,
                            m.stable_rank_cov,
                            m.exact_rank_cov,
                            opt(m.mi_x_hi),
                            opt(m.mi_y_hi)
                        );
                    }
                    None => s.push_str(&",".repeat(10)),
                }
                s.push_str(",\n");
            }
            Err(e) => {
                s.push_str("true");
                s.push_str(&",".repeat(SWEEP_COLUMNS.len() - 7));
                let _ = writeln!(s, ",{}", e.replace([',', '\n'], ";"));
            }
        }
    }
    s
}

pub fn sweep_table(axis: SweepAxis, rows: &[SweepRow]) -> String {
    csv_to_table(&sweep_csv(axis, rows))
}
