//! Comparable-performance search: non-identity rewrites of a ReLU layer
//! followed by output-layer fine-tuning.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rewrite_affine, AffineTransform};
use crate::data::{Dataset, DatasetMeta};
use crate::error::{precondition, Result};
use crate::linalg::{Matrix, WHITENING_EPS};
use crate::metrics::{characteristics, CharacteristicsReport};
use crate::network::{train, Activation, Mode, Network, OptimizerConfig, TrainConfig};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub batch: usize,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            optimizer: OptimizerConfig::adam(1e-4),
            batch: 100,
            seed: 0,
        }
    }
}

/// Eval-mode activations of layer `l` (the input when `l == 0`).
fn layer_output(net: &Network, x: &Matrix, l: usize) -> Result<Matrix> {
    if l == 0 {
        return Ok(x.clone());
    }
    Ok(net.forward(x, Mode::Eval, &[l])?.1.remove(0).z)
}

/// The network made of layers `from..=L`, fed by layer `from − 1`.
fn tail(net: &Network, from: usize) -> Result<Network> {
    Network::from_layers(net.width(from - 1), net.layers()[from - 1..].to_vec())
}

fn with_inputs(ds: &Dataset, x: Matrix) -> Result<Dataset> {
    Dataset::new(x, ds.y.clone(), ds.k, DatasetMeta::default())
}

/// Trains only the output layer, on cached eval-mode activations of the
/// penultimate layer. Every other parameter is returned bit-identical.
pub fn fine_tune_output(net: &Network, train_ds: &Dataset, cfg: &FineTuneConfig) -> Result<Network> {
    let last = net.num_layers();
    let feats = layer_output(net, &train_ds.x, last - 1)?;
    let tuned = fine_tune_tail(net, last, &with_inputs(train_ds, feats)?, cfg)?;
    Ok(tuned)
}

/// Fine-tunes the output layer of `net` given a dataset of layer
/// `from − 1` activations.
fn fine_tune_tail(net: &Network, from: usize, cached: &Dataset, cfg: &FineTuneConfig) -> Result<Network> {
    if cfg.epochs == 0 {
        return Ok(net.clone());
    }
    let last = net.num_layers();
    let out = tail(net, last)?;
    let feats = if from == last {
        cached.clone()
    } else {
        let head = tail(net, from)?;
        with_inputs(cached, layer_output(&head, &cached.x, last - from)?)?
    };
    let tc = TrainConfig {
        optimizer: cfg.optimizer,
        regularizers: Vec::new(),
        epochs: cfg.epochs,
        batch: cfg.batch.min(feats.len()),
        seed: cfg.seed,
    };
    let (tuned, _) = train(&out, &feats, None, &tc)?;
    let mut result = net.clone();
    let src = tuned.layer(1);
    let dst = result.layer_mut(last);
    dst.w = src.w.clone();
    dst.b = src.b.clone();
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpnObjective {
    /// Ones matrices with random diagonals; keep the highest correlation.
    MaxCorr,
    /// The whitening transform; keep the lowest correlation.
    MinCorr,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpnConfig {
    pub trials: usize,
    pub seed: u64,
    pub objective: CpnObjective,
    /// Allowed increase of validation error over the original, in points.
    pub margin: f64,
    pub fine_tune: FineTuneConfig,
}

impl Default for CpnConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            objective: CpnObjective::MaxCorr,
            margin: 1.0,
            fine_tune: FineTuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpnTrial {
    pub trial: usize,
    /// Validation error (percent) before fine-tuning.
    pub raw_error: f64,
    /// Validation error (percent) after fine-tuning.
    pub error: f64,
    pub comparable: bool,
    pub report: CharacteristicsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpnReport {
    pub baseline_error: f64,
    pub baseline: CharacteristicsReport,
    pub trials: Vec<CpnTrial>,
    /// Index into `trials` of the returned network.
    pub selected: usize,
    /// Whether the selected trial is within the margin.
    pub comparable: bool,
}

/// Searches rewrites of ReLU layer `l`, fine-tunes the output layer on
/// `train_ds`, and returns the trial that best meets the objective among
/// those within `margin` of the original validation error. Without any
/// comparable trial the lowest-error one is returned, flagged.
pub fn cpn_search(
    net: &Network,
    l: usize,
    train_ds: &Dataset,
    val: &Dataset,
    cfg: &CpnConfig,
) -> Result<(Network, CpnReport)> {
    if l == 0 || l >= net.num_layers() || net.layer(l).spec.activation != Activation::Relu {
        return Err(precondition("cpn_search", format!("layer {l} must be a ReLU hidden layer")));
    }
    if cfg.trials == 0 {
        return Err(precondition("cpn_search", "trials must be >= 1"));
    }
    let baseline_error = net.evaluate(val)?;
    let baseline = characteristics(&net.capture_layer(val, l)?, true)?;
    // Everything below layer l is untouched, so its outputs are cached once.
    let train_in = with_inputs(train_ds, layer_output(net, &train_ds.x, l - 1)?)?;
    let val_in = with_inputs(val, layer_output(net, &val.x, l - 1)?)?;
    let whitening = match cfg.objective {
        CpnObjective::MinCorr => {
            let cap = tail(net, l)?.capture_layer(&train_in, 1)?;
            // Statistics of h, the affine output before the ReLU.
            Some(AffineTransform::whitening_of_pre_activation(&cap, WHITENING_EPS)?)
        }
        CpnObjective::MaxCorr => None,
    };
    let n_trials = if whitening.is_some() { 1 } else { cfg.trials };
    let width = net.width(l);
    let outcomes: Vec<Result<(Network, CpnTrial)>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let t = match &whitening {
                Some(w) => w.clone(),
                None => AffineTransform::ones_random_diagonal(width, rng::derive_seed(cfg.seed, trial as u64)),
            };
            let rewritten = rewrite_affine(net, l, &t)?;
            let sub = tail(&rewritten, l)?;
            let raw_error = sub.evaluate(&val_in)?;
            let mut ft = cfg.fine_tune;
            ft.seed = rng::derive_seed(cfg.fine_tune.seed, trial as u64);
            let tuned_sub = fine_tune_tail(&sub, 1, &train_in, &ft)?;
            let error = tuned_sub.evaluate(&val_in)?;
            let report = characteristics(&tuned_sub.capture_layer(&val_in, 1)?, true)?;
            let mut tuned = rewritten;
            let last = tuned.num_layers();
            *tuned.layer_mut(last) = tuned_sub.layer(tuned_sub.num_layers()).clone();
            let mut report = report;
            report.layer = l;
            Ok((
                tuned,
                CpnTrial {
                    trial,
                    raw_error,
                    error,
                    comparable: error <= baseline_error + cfg.margin,
                    report,
                },
            ))
        })
        .collect();
    let mut nets = Vec::with_capacity(n_trials);
    let mut trials = Vec::with_capacity(n_trials);
    for o in outcomes {
        let (n, t) = o?;
        nets.push(n);
        trials.push(t);
    }
    let score = |t: &CpnTrial| match cfg.objective {
        CpnObjective::MaxCorr => t.report.mean_corr,
        CpnObjective::MinCorr => -t.report.mean_corr,
    };
    let comparable: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].comparable).collect();
    let selected = if comparable.is_empty() {
        (0..trials.len())
            .min_by(|&a, &b| trials[a].error.total_cmp(&trials[b].error))
            .unwrap()
    } else {
        // First index wins ties.
        comparable
            .iter()
            .copied()
            .fold(comparable[0], |best, i| if score(&trials[i]) > score(&trials[best]) { i } else { best })
    };
    let report = CpnReport {
        baseline_error,
        baseline,
        comparable: trials[selected].comparable,
        trials,
        selected,
    };
    Ok((nets.swap_remove(selected), report))
}

/// Per-trial CSV: `trial,error,amplitude,cov,corr,sparsity,dead,rank`, with
/// the original network as trial `-1`.
pub fn cpn_csv(report: &CpnReport) -> String {
    let mut out = String::from("trial,error,amplitude,cov,corr,sparsity,dead,rank\n");
    let mut row = |trial: &str, err: f64, r: &CharacteristicsReport| {
        writeln!(
            out,
            "{trial},{err},{},{},{},{},{},{}",
            r.amplitude, r.mean_cov, r.mean_corr, r.sparsity, r.dead_fraction, r.stable_rank_cov
        )
        .unwrap();
    };
    row("-1", report.baseline_error, &report.baseline);
    for t in &report.trials {
        row(&t.trial.to_string(), t.error, &t.report);
    }
    out
}
