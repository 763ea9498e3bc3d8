//! Multi-trial runs of one configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method, Splits};
use super::table::{fmt_num, render_table};
use crate::data::Dataset;
use crate::error::Result;
use crate::metrics::{characteristics_with, CharacteristicsOptions, CharacteristicsReport, REPORT_COLUMNS};
use crate::mi::{mi_bounds, MiBounds};
use crate::network::{save_checkpoint, train, History, Network, TrainConfig};
use crate::rng::derive_seed;
use crate::stats;

/// Extra columns appended to the characteristics CSV.
pub const MI_COLUMNS: [&str; 6] = ["mi_x_lo", "mi_x_hi", "mi_y_lo", "mi_y_hi", "sigma2", "n_sub"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        Self {
            mean: stats::mean(v),
            std: stats::std(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    pub report: CharacteristicsReport,
    /// `(I(z;x), I(z;y))`.
    pub mi: Option<(MiBounds, MiBounds)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Percent.
    pub val_error: f64,
    pub test_error: f64,
    pub layers: Vec<LayerResult>,
    pub history: History,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub method: Method,
    pub loss_weight: f64,
    pub trials: Vec<TrialResult>,
    pub val_error: MeanStd,
    pub test_error: MeanStd,
}

impl RunReport {
    /// `"L1R(0.1)"`, or just the method name when no weight applies.
    pub fn label(&self) -> String {
        if self.method.weighted() {
            let w = self.loss_weight;
            if w != 0.0 && !(1e-4..1e6).contains(&w.abs()) {
                format!("{}({w:e})", self.method)
            } else {
                format!("{}({w})", self.method)
            }
        } else {
            self.method.to_string()
        }
    }

    /// Characteristics of `layer` averaged over trials.
    pub fn mean_layer(&self, layer: usize) -> Option<LayerMeans> {
        let per: Vec<&LayerResult> = self
            .trials
            .iter()
            .filter_map(|t| t.layers.iter().find(|l| l.report.layer == layer))
            .collect();
        if per.is_empty() {
            return None;
        }
        let avg = |f: &dyn Fn(&LayerResult) -> f64| stats::mean(&per.iter().map(|l| f(l)).collect::<Vec<_>>());
        let mi = per.iter().all(|l| l.mi.is_some());
        let mi_avg = |f: &dyn Fn(&(MiBounds, MiBounds)) -> f64| {
            mi.then(|| avg(&|l: &LayerResult| f(l.mi.as_ref().expect("checked"))))
        };
        Some(LayerMeans {
            layer,
            amplitude: avg(&|l| l.report.amplitude),
            mean_cov: avg(&|l| l.report.mean_cov),
            mean_corr: avg(&|l| l.report.mean_corr),
            sparsity: avg(&|l| l.report.sparsity),
            dead_fraction: avg(&|l| l.report.dead_fraction),
            stable_rank_cov: avg(&|l| l.report.stable_rank_cov),
            stable_rank_act: avg(&|l| l.report.stable_rank_act),
            exact_rank_cov: avg(&|l| l.report.exact_rank_cov as f64),
            mi_x_hi: mi_avg(&|m| m.0.upper),
            mi_y_hi: mi_avg(&|m| m.1.upper),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMeans {
    pub layer: usize,
    pub amplitude: f64,
    pub mean_cov: f64,
    pub mean_corr: f64,
    pub sparsity: f64,
    pub dead_fraction: f64,
    pub stable_rank_cov: f64,
    pub stable_rank_act: f64,
    pub exact_rank_cov: f64,
    pub mi_x_hi: Option<f64>,
    pub mi_y_hi: Option<f64>,
}

/// A finished run with its trained networks, in trial order.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub networks: Vec<Network>,
}

pub fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    derive_seed(cfg.seed, trial as u64)
}

/// Loads the configured data relative to `base` and runs every trial.
pub fn run(cfg: &ExperimentConfig, base: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let splits = cfg.dataset.load(base)?;
    run_on(cfg, &splits)
}

/// Runs every trial on already loaded data. Trials execute on the current
/// rayon pool and are collected in trial order.
pub fn run_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<RunOutput> {
    cfg.validate()?;
    let merged;
    let train_set: &Dataset = if cfg.dataset.merge_validation && !splits.val.is_empty() {
        merged = splits.train.merged(&splits.val)?;
        &merged
    } else {
        &splits.train
    };
    let results: Vec<Result<(TrialResult, Network)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t, train_set, splits))
        .collect();
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut networks = Vec::with_capacity(cfg.trials);
    for r in results {
        let (t, n) = r?;
        trials.push(t);
        networks.push(n);
    }
    let val: Vec<f64> = trials.iter().map(|t| t.val_error).collect();
    let test: Vec<f64> = trials.iter().map(|t| t.test_error).collect();
    Ok(RunOutput {
        report: RunReport {
            name: cfg.name.clone(),
            method: cfg.regularizer.method,
            loss_weight: cfg.regularizer.loss_weight,
            val_error: MeanStd::of(&val),
            test_error: MeanStd::of(&test),
            trials,
        },
        networks,
    })
}

fn run_trial(cfg: &ExperimentConfig, trial: usize, train_set: &Dataset, splits: &Splits) -> Result<(TrialResult, Network)> {
    let seed = trial_seed(cfg, trial);
    let init = cfg.build_network(train_set.dim(), train_set.k, seed)?;
    let tc = TrainConfig {
        optimizer: cfg.optimizer,
        regularizers: cfg.regularizer.penalties(),
        epochs: cfg.epochs,
        batch: cfg.batch.min(train_set.len()),
        seed,
    };
    let val = (!splits.val.is_empty()).then_some(&splits.val);
    let (net, history) = train(&init, train_set, val, &tc)?;
    let val_error = match val {
        Some(v) => net.evaluate(v)?,
        None => f64::NAN,
    };
    let test_error = net.evaluate(&splits.test)?;
    let opts = CharacteristicsOptions {
        positive_only: cfg.positive_only,
        pair_mode: cfg.pair_mode,
    };
    let layers = net
        .capture(&splits.test, &cfg.capture_layers())?
        .iter()
        .map(|cap| {
            let report = characteristics_with(cap, opts)?;
            let mi = match &cfg.mi {
                Some(m) => {
                    let mut m = *m;
                    m.seed = derive_seed(m.seed, seed);
                    Some(mi_bounds(cap, &m)?)
                }
                None => None,
            };
            Ok(LayerResult { report, mi })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        TrialResult {
            trial,
            seed,
            val_error,
            test_error,
            layers,
            history,
        },
        net,
    ))
}

pub fn trials_csv(rep: &RunReport) -> String {
    let mut s = String::from("run,regularizer,loss_weight,trial,seed,val_error,test_error,final_train_loss\n");
    for t in &rep.trials {
        let loss = t.history.last().map_or(f64::NAN, |e| e.train_loss);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            rep.name, rep.method, rep.loss_weight, t.trial, t.seed, t.val_error, t.test_error, loss
        );
    }
    s
}

/// Characteristics CSV with the MI columns appended (empty without MI).
pub fn characteristics_csv(rep: &RunReport) -> String {
    let mut s = REPORT_COLUMNS.iter().chain(MI_COLUMNS.iter()).copied().collect::<Vec<_>>().join(",");
    s.push('\n');
    for t in &rep.trials {
        let run = format!("{}/t{}", rep.name, t.trial);
        for l in &t.layers {
            s.push_str(&crate::metrics::report_csv_row(&run, rep.method.name(), rep.loss_weight, &l.report));
            match &l.mi {
                Some((x, y)) => {
                    let _ = write!(s, ",{},{},{},{},{},{}", x.lower, x.upper, y.lower, y.upper, x.sigma2, x.n);
                }
                None => s.push_str(",,,,,,"),
            }
            s.push('\n');
        }
    }
    s
}

pub fn history_csv(rep: &RunReport) -> String {
    let mut s = String::from("trial,epoch,train_loss,val_error,penalty,rr_exact\n");
    for t in &rep.trials {
        for e in &t.history {
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                t.trial,
                e.epoch,
                e.train_loss,
                opt(e.val_error),
                opt(e.penalties.first().copied()),
                opt(e.rr_exact.first().copied().flatten()),
            );
        }
    }
    s
}

/// Per-trial errors, the mean±std line and the captured-layer averages.
pub fn summary_table(rep: &RunReport) -> String {
    let headers: Vec<String> = ["trial", "val_error", "test_error"].iter().map(|s| s.to_string()).collect();
    let mut rows: Vec<Vec<String>> = rep
        .trials
        .iter()
        .map(|t| vec![t.trial.to_string(), fmt_num(t.val_error), fmt_num(t.test_error)])
        .collect();
    rows.push(vec![
        "mean±std".into(),
        format!("{}±{}", fmt_num(rep.val_error.mean), fmt_num(rep.val_error.std)),
        format!("{}±{}", fmt_num(rep.test_error.mean), fmt_num(rep.test_error.std)),
    ]);
    let mut out = format!("{} ({})\n", rep.name, rep.label());
    out.push_str(&render_table(&headers, &rows));
    let layers: Vec<usize> = rep
        .trials
        .first()
        .map(|t| t.layers.iter().map(|l| l.report.layer).collect())
        .unwrap_or_default();
    if !layers.is_empty() {
        let headers: Vec<String> = ["layer", "amplitude", "cov", "corr", "sparsity", "dead", "srank", "rank"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = layers
            .iter()
            .filter_map(|&l| rep.mean_layer(l))
            .map(|m| {
                vec![
                    m.layer.to_string(),
                    fmt_num(m.amplitude),
                    fmt_num(m.mean_cov),
                    fmt_num(m.mean_corr),
                    fmt_num(m.sparsity),
                    fmt_num(m.dead_fraction),
                    fmt_num(m.stable_rank_cov),
                    fmt_num(m.exact_rank_cov),
                ]
            })
            .collect();
        out.push('\n');
        out.push_str(&render_table(&headers, &rows));
    }
    out
}

/// Writes `config.json`, `trials.csv`, `characteristics.csv`,
/// `history.csv`, `summary.txt`, `report.json` and, when enabled, one checkpoint per trial.
pub fn write_run(out: &RunOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json() + "\n")?;
    fs::write(dir.join("trials.csv"), trials_csv(&out.report))?;
    fs::write(dir.join("characteristics.csv"), characteristics_csv(&out.report))?;
    fs::write(dir.join("history.csv"), history_csv(&out.report))?;
    fs::write(dir.join("summary.txt"), summary_table(&out.report))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)? + "\n")?;
    if cfg.checkpoints {
        let cp = dir.join("checkpoints");
        fs::create_dir_all(&cp)?;
        for (t, net) in out.networks.iter().enumerate() {
            save_checkpoint(net, &cp.join(format!("trial_{t}.rlnn")))?;
        }
    }
    Ok(())
}
