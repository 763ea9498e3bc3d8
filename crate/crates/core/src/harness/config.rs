//! Experiment configuration (JSON) and presets.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_synthetic, load_idx, pca_control_with, read_container, split, Dataset, PcaMode, SplitSpec,
};
use crate::error::{Error, Result};
use crate::metrics::PairMode;
use crate::mi::MiConfig;
use crate::network::{Activation, LayerSpec, Network, OptimizerConfig};
use crate::regularize::{PenaltyScale, RegKind, RegularizerConfig};

/// One entry of the regularizer set: the unregularized baseline, dropout,
/// batch normalization, or one of the penalty kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Baseline,
    Dropout,
    BatchNorm,
    Penalty(RegKind),
}

impl Method {
    /// Baseline, L1W, L2W, dropout, BN, then the seven representation
    /// penalties.
    pub const SET: [Method; 12] = [
        Method::Baseline,
        Method::Penalty(RegKind::L1W),
        Method::Penalty(RegKind::L2W),
        Method::Dropout,
        Method::BatchNorm,
        Method::Penalty(RegKind::CR),
        Method::Penalty(RegKind::CwCR),
        Method::Penalty(RegKind::VR),
        Method::Penalty(RegKind::CwVR),
        Method::Penalty(RegKind::L1R),
        Method::Penalty(RegKind::RR),
        Method::Penalty(RegKind::CwRR),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Dropout => "dropout",
            Method::BatchNorm => "BN",
            Method::Penalty(k) => k.name(),
        }
    }

    /// Whether a loss weight applies.
    pub fn weighted(self) -> bool {
        matches!(self, Method::Penalty(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "none" => Ok(Method::Baseline),
            "dropout" => Ok(Method::Dropout),
            "bn" | "batch_norm" | "batchnorm" => Ok(Method::BatchNorm),
            _ => s.parse().map(Method::Penalty),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// IDX image/label files; optional separate test files.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
    Synthetic {
        d: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        samples: usize,
        #[serde(default = "default_ambient")]
        ambient_dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// An `RLDS` container file.
    Container { path: PathBuf },
}

fn default_classes() -> usize {
    10
}

fn default_ambient() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub source: DataSource,
    /// Keep only the top-k principal components (fitted on the full pool).
    #[serde(default)]
    pub pca_k: Option<usize>,
    #[serde(default)]
    pub pca_mode: PcaMode,
    pub split: SplitSpec,
    /// Merge validation data back into training after selection.
    #[serde(default)]
    pub merge_validation: bool,
}

/// Train, validation and test partitions.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DatasetSpec {
    /// Number of factors for synthetic data, `k` for PCA-controlled data.
    pub fn dimension_knob(&self) -> Option<usize> {
        match &self.source {
            DataSource::Synthetic { d, .. } => Some(*d),
            _ => self.pca_k,
        }
    }

    /// Sets the synthetic factor count, or the PCA `k` for other sources.
    pub fn set_dimension_knob(&mut self, v: usize) {
        match &mut self.source {
            DataSource::Synthetic { d, .. } => *d = v,
            _ => self.pca_k = Some(v),
        }
    }

    pub fn load(&self, base: &Path) -> Result<Splits> {
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let (pool, external_test) = match &self.source {
            DataSource::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } => {
                let pool = load_idx(&resolve(images), &resolve(labels))?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(load_idx(&resolve(i), &resolve(l))?),
                    (None, None) => None,
                    _ => return Err(Error::Config("test_images and test_labels go together".into())),
                };
                (pool, test)
            }
            DataSource::Synthetic {
                d,
                classes,
                samples,
                ambient_dim,
                seed,
            } => (gen_synthetic(*d, *classes, *samples, *ambient_dim, *seed)?, None),
            DataSource::Container { path } => (read_container(&resolve(path))?, None),
        };
        let (pool, external_test) = match self.pca_k {
            Some(k) => {
                // Fit on pool and external test together so both share a basis.
                match external_test {
                    Some(test) => {
                        let joint = pca_control_with(&pool.merged(&test)?, k, self.pca_mode)?;
                        let n = pool.len();
                        let idx: Vec<usize> = (0..n).collect();
                        let rest: Vec<usize> = (n..joint.len()).collect();
                        (joint.subset(&idx), Some(joint.subset(&rest)))
                    }
                    None => (pca_control_with(&pool, k, self.pca_mode)?, None),
                }
            }
            None => (pool, external_test),
        };
        let (train, val, test) = match external_test {
            Some(test) => {
                let mut spec = self.split;
                spec.test_n = 0;
                let (train, val, _) = split(&pool, &spec)?;
                let test = if self.split.test_n > 0 { test.head(self.split.test_n) } else { test };
                (train, val, test)
            }
            None => split(&pool, &self.split)?,
        };
        let missing = train.missing_classes();
        if !missing.is_empty() {
            return Err(Error::Config(format!("training split lacks classes {missing:?}")));
        }
        Ok(Splits { train, val, test })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    /// Per hidden layer; ReLU when omitted.
    #[serde(default)]
    pub activations: Option<Vec<Activation>>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![100; 5],
            activations: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerChoice {
    pub method: Method,
    #[serde(default)]
    pub loss_weight: f64,
    /// Hidden layer the regularizer acts on, 1-based.
    #[serde(default = "default_target")]
    pub target_layer: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub scale: PenaltyScale,
}

fn default_target() -> usize {
    5
}

fn default_dropout() -> f64 {
    0.5
}

impl Default for RegularizerChoice {
    fn default() -> Self {
        Self::baseline()
    }
}

impl RegularizerChoice {
    pub fn baseline() -> Self {
        Self::new(Method::Baseline, 0.0)
    }

    pub fn new(method: Method, loss_weight: f64) -> Self {
        Self {
            method,
            loss_weight,
            target_layer: default_target(),
            dropout_rate: default_dropout(),
            scale: PenaltyScale::default(),
        }
    }

    pub fn penalties(&self) -> Vec<RegularizerConfig> {
        match self.method {
            Method::Penalty(kind) => vec![RegularizerConfig {
                kind,
                loss_weight: self.loss_weight,
                target_layer: self.target_layer,
                scale: self.scale,
            }],
            _ => Vec::new(),
        }
    }
}

fn default_epochs() -> usize {
    50
}

fn default_batch() -> usize {
    100
}

fn default_trials() -> usize {
    5
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub regularizer: RegularizerChoice,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Layers whose characteristics are reported, 1-based. Empty means the
    /// regularizer's target layer.
    #[serde(default)]
    pub capture_layers: Vec<usize>,
    #[serde(default = "default_true")]
    pub positive_only: bool,
    #[serde(default)]
    pub pair_mode: PairMode,
    /// Mutual-information bounds on captured layers.
    #[serde(default)]
    pub mi: Option<MiConfig>,
    /// Write a checkpoint per trial.
    #[serde(default)]
    pub checkpoints: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn num_layers(&self) -> usize {
        self.architecture.hidden.len() + 1
    }

    pub fn capture_layers(&self) -> Vec<usize> {
        if self.capture_layers.is_empty() {
            vec![self.regularizer.target_layer.min(self.architecture.hidden.len())]
        } else {
            self.capture_layers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = self.architecture.hidden.len();
        let bad = |msg: String| Err(Error::Config(msg));
        if hidden == 0 || self.architecture.hidden.contains(&0) {
            return bad("architecture needs at least one non-empty hidden layer".into());
        }
        if let Some(acts) = &self.architecture.activations {
            if acts.len() != hidden || acts.contains(&Activation::Softmax) {
                return bad("activations must list relu/linear for every hidden layer".into());
            }
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        let r = &self.regularizer;
        if r.method != Method::Baseline && (r.target_layer == 0 || r.target_layer > hidden) {
            return bad(format!("target layer {} is not a hidden layer (1..={hidden})", r.target_layer));
        }
        if !(r.loss_weight >= 0.0 && r.loss_weight.is_finite()) {
            return bad(format!("loss weight {} must be finite and >= 0", r.loss_weight));
        }
        if !(0.0..1.0).contains(&r.dropout_rate) {
            return bad(format!("dropout rate {} not in [0,1)", r.dropout_rate));
        }
        if let Some(&l) = self.capture_layers.iter().find(|&&l| l == 0 || l > hidden) {
            return bad(format!("capture layer {l} is not a hidden layer (1..={hidden})"));
        }
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn layer_specs(&self, classes: usize) -> Vec<LayerSpec> {
        let r = &self.regularizer;
        let mut specs: Vec<LayerSpec> = self
            .architecture
            .hidden
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let act = self
                    .architecture
                    .activations
                    .as_ref()
                    .map_or(Activation::Relu, |a| a[i]);
                let mut s = LayerSpec {
                    width: w,
                    activation: act,
                    dropout_rate: 0.0,
                    batch_norm: false,
                };
                if i + 1 == r.target_layer {
                    match r.method {
                        Method::Dropout => s.dropout_rate = r.dropout_rate,
                        Method::BatchNorm => s.batch_norm = true,
                        _ => {}
                    }
                }
                s
            })
            .collect();
        specs.push(LayerSpec::softmax(classes));
        specs
    }

    pub fn build_network(&self, input_dim: usize, classes: usize, seed: u64) -> Result<Network> {
        Network::new(input_dim, &self.layer_specs(classes), seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full MNIST protocol: 50k/10k/10k, 50 epochs, five trials.
    Paper,
    /// Laptop scale: the bundled 10k MNIST sample, 7k/1k/2k, fewer epochs.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset '{s}' (paper|desk)"))),
        }
    }
}

pub const DESK_EPOCHS: usize = 30;

impl Preset {
    /// Baseline MNIST configuration; data paths are relative to the
    /// repository root.
    pub fn config(self) -> ExperimentConfig {
        let (dataset, epochs, trials) = match self {
            Preset::Paper => (
                DatasetSpec {
                    source: DataSource::Idx {
                        images: "data/mnist/train-images-idx3-ubyte.gz".into(),
                        labels: "data/mnist/train-labels-idx1-ubyte.gz".into(),
                        test_images: Some("data/mnist/t10k-images-idx3-ubyte.gz".into()),
                        test_labels: Some("data/mnist/t10k-labels-idx1-ubyte.gz".into()),
                    },
                    pca_k: None,
                    pca_mode: PcaMode::Reconstruct,
                    split: SplitSpec {
                        train_n: 50_000,
                        val_n: 10_000,
                        test_n: 0,
                        seed: 0,
                    },
                    merge_validation: false,
                },
                50,
                5,
            ),
            Preset::Desk => (
                DatasetSpec {
                    source: DataSource::Idx {
                        images: "data/mnist-10k/images-idx3-ubyte.gz".into(),
                        labels: "data/mnist-10k/labels-idx1-ubyte.gz".into(),
                        test_images: None,
                        test_labels: None,
                    },
                    pca_k: None,
                    pca_mode: PcaMode::Reconstruct,
                    split: SplitSpec {
                        train_n: 7000,
                        val_n: 1000,
                        test_n: 2000,
                        seed: 0,
                    },
                    merge_validation: false,
                },
                DESK_EPOCHS,
                1,
            ),
        };
        ExperimentConfig {
            name: "baseline".into(),
            dataset,
            architecture: Architecture::default(),
            optimizer: OptimizerConfig::adam(1e-4),
            regularizer: RegularizerChoice::baseline(),
            epochs,
            batch: 100,
            trials,
            seed: 0,
            capture_layers: Vec::new(),
            positive_only: true,
            pair_mode: PairMode::BothActive,
            mi: None,
            checkpoints: false,
        }
    }

    /// Synthetic d-factor data with the same network, for the rank and
    /// sparsity sweeps.
    pub fn synthetic_config(self, d: usize) -> ExperimentConfig {
        let mut cfg = self.config();
        let (samples, split) = match self {
            Preset::Paper => (60_000, (50_000, 5_000)),
            Preset::Desk => (4_000, (3_000, 500)),
        };
        cfg.dataset = DatasetSpec {
            source: DataSource::Synthetic {
                d,
                classes: 10,
                samples,
                ambient_dim: 1000,
                seed: 0,
            },
            pca_k: None,
            pca_mode: PcaMode::Reconstruct,
            split: SplitSpec {
                train_n: split.0,
                val_n: split.1,
                test_n: 0,
                seed: 0,
            },
            merge_validation: false,
        };
        cfg
    }
}

/// Loss weights swept per penalty.
pub const LOSS_WEIGHT_GRID: [f64; 6] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];
