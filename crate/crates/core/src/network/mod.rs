//! Multilayer perceptron with batch normalization, dropout and activation
//! capture.
//!
//! Layer `l` computes `h_l = z_{l-1}·W_l + b_l` on row-major batches, so
//! `W_l` is `width(l-1) × width(l)`. With batch normalization `h_l` is the
//! normalized, scaled and shifted value, i.e. the input of the activation.
//! The output layer's `h` are the logits.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use optim::{OptimizerConfig, OptimizerKind};
pub use train::{softmax_cross_entropy, train, EpochRecord, History, TrainConfig};

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{precondition, Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, Rng};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    /// Output layer only; the network returns logits and the softmax lives
    /// in the loss.
    Softmax,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Softmax => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Linear),
            2 => Ok(Activation::Softmax),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn relu(width: usize) -> Self {
        Self::plain(width, Activation::Relu)
    }

    pub fn linear(width: usize) -> Self {
        Self::plain(width, Activation::Linear)
    }

    pub fn softmax(width: usize) -> Self {
        Self::plain(width, Activation::Softmax)
    }

    fn plain(width: usize, activation: Activation) -> Self {
        Self {
            width,
            activation,
            dropout_rate: 0.0,
            batch_norm: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub w: Matrix,
    pub b: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active (masks drawn from `seed`), batch statistics for BN.
    Train { seed: u64 },
    /// No dropout, running statistics for BN.
    Eval,
}

/// Activations of one layer over a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationCapture {
    pub layer: usize,
    /// Post-activation, N × M.
    pub z: Matrix,
    /// Pre-activation, N × M.
    pub h: Matrix,
    /// Empty when captured from a bare forward pass.
    pub labels: Vec<usize>,
}

impl ActivationCapture {
    pub fn units(&self) -> usize {
        self.z.cols()
    }

    pub fn samples(&self) -> usize {
        self.z.rows()
    }
}

/// Per-layer intermediate values kept for backpropagation.
pub(crate) struct LayerCache {
    pub input: Matrix,
    pub h: Matrix,
    pub z: Matrix,
    pub xhat: Option<Matrix>,
    pub inv_std: Vec<f64>,
    pub mask: Option<Matrix>,
}

impl Network {
    /// He-uniform init for ReLU layers, Xavier-uniform otherwise, zero biases.
    pub fn new(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(input_dim, specs)?;
        let mut r = rng::seeded(seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let limit = match spec.activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + spec.width) as f64).sqrt(),
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let w = Matrix::from_fn(fan_in, spec.width, |_, _| dist.sample(&mut r));
            layers.push(Layer {
                spec: *spec,
                w,
                b: vec![0.0; spec.width],
                bn: spec.batch_norm.then(|| BatchNorm::new(spec.width)),
            });
            fan_in = spec.width;
        }
        Ok(Self { input_dim, layers })
    }

    /// ReLU hidden layers followed by a softmax output.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut specs: Vec<LayerSpec> = hidden.iter().map(|&w| LayerSpec::relu(w)).collect();
        specs.push(LayerSpec::softmax(classes));
        Self::new(input_dim, &specs, seed)
    }

    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(input_dim, &specs)?;
        let mut fan_in = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            let width = layer.spec.width;
            if layer.w.shape() != (fan_in, width) || layer.b.len() != width {
                return Err(Error::Dimension {
                    context: format!("layer {} parameters", i + 1),
                    expected: fan_in * width,
                    got: layer.w.rows() * layer.w.cols(),
                });
            }
            if layer.bn.is_some() != layer.spec.batch_norm {
                return Err(Error::Format(format!("layer {} batch-norm state mismatch", i + 1)));
            }
            fan_in = width;
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.spec.width)
    }

    /// Number of weight layers, the output layer included.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Layer {
        &mut self.layers[l - 1]
    }

    /// Width of layer `l`; `width(0)` is the input dimension.
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.layers[l - 1].spec.width
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.w.is_finite()
                && l.b.iter().all(|v| v.is_finite())
                && l.bn.as_ref().map_or(true, |bn| {
                    [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                        .iter()
                        .all(|v| v.iter().all(|x| x.is_finite()))
                })
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Dimension {
                context: "network input (layer 0)".into(),
                expected: self.input_dim,
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Logits for `x` plus captures of the requested layers (1-based).
    pub fn forward(&self, x: &Matrix, mode: Mode, capture: &[usize]) -> Result<(Matrix, Vec<ActivationCapture>)> {
        self.check_input(x)?;
        if let Some(&l) = capture.iter().find(|&&l| l == 0 || l > self.layers.len()) {
            return Err(precondition("forward", format!("no layer {l} to capture")));
        }
        let mut drop_rng = match mode {
            Mode::Train { seed } => Some(rng::seeded(seed)),
            Mode::Eval => None,
        };
        let mut caps = Vec::new();
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (h, z, _, _) = layer_forward(layer, &a, drop_rng.is_some());
            if capture.contains(&(i + 1)) {
                caps.push(ActivationCapture {
                    layer: i + 1,
                    z: z.clone(),
                    h: h.clone(),
                    labels: Vec::new(),
                });
            }
            a = match drop_rng.as_mut() {
                Some(r) if i + 1 < self.layers.len() => dropout(&z, layer.spec.dropout_rate, r).0,
                _ => z,
            };
        }
        caps.sort_by_key(|c| capture.iter().position(|&l| l == c.layer));
        Ok((a, caps))
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x, Mode::Eval, &[])?.0)
    }

    /// Eval-mode captures over a dataset, labels attached.
    pub fn capture(&self, ds: &Dataset, layers: &[usize]) -> Result<Vec<ActivationCapture>> {
        let (_, mut caps) = self.forward(&ds.x, Mode::Eval, layers)?;
        for c in &mut caps {
            c.labels = ds.y.clone();
        }
        Ok(caps)
    }

    pub fn capture_layer(&self, ds: &Dataset, layer: usize) -> Result<ActivationCapture> {
        Ok(self.capture(ds, &[layer])?.remove(0))
    }

    /// Training-mode pass that updates BN running statistics and keeps what
    /// backpropagation needs.
    pub(crate) fn forward_cached(&mut self, x: &Matrix, r: &mut Rng) -> (Matrix, Vec<LayerCache>) {
        let n_layers = self.layers.len();
        let mut caches = Vec::with_capacity(n_layers);
        let mut a = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (h, z, xhat, stats) = layer_forward(layer, &a, true);
            let mut inv_std = Vec::new();
            if let (Some(bn), Some((mean, var))) = (layer.bn.as_mut(), stats) {
                for j in 0..mean.len() {
                    bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * mean[j];
                    bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * var[j];
                }
                inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            }
            let (next, mask) = if i + 1 < n_layers {
                dropout(&z, layer.spec.dropout_rate, r)
            } else {
                (z.clone(), None)
            };
            caches.push(LayerCache {
                input: std::mem::replace(&mut a, next),
                h,
                z,
                xhat,
                inv_std,
                mask,
            });
        }
        (a, caches)
    }

    /// Classification error in percent; ties go to the lowest class index.
    pub fn evaluate(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Ok(0.0);
        }
        let logits = self.predict(&ds.x)?;
        Ok(error_rate(&logits, &ds.y))
    }
}

/// Percent of rows whose argmax (lowest index on ties) differs from the label.
pub fn error_rate(logits: &Matrix, labels: &[usize]) -> f64 {
    let wrong = (0..logits.rows())
        .filter(|&n| argmax(logits.row(n)) != labels[n])
        .count();
    100.0 * wrong as f64 / logits.rows().max(1) as f64
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

type BnStats = (Vec<f64>, Vec<f64>);

/// Returns `(h, z, xhat, batch stats)`. `batch_stats` selects batch versus
/// running BN statistics.
fn layer_forward(layer: &Layer, a: &Matrix, batch_stats: bool) -> (Matrix, Matrix, Option<Matrix>, Option<BnStats>) {
    let mut h = a.matmul(&layer.w);
    h.add_row_vector(&layer.b);
    let mut xhat_out = None;
    let mut stats = None;
    if let Some(bn) = &layer.bn {
        let (mean, var) = if batch_stats {
            let (c, m) = column_mean_var(&h);
            (m, c)
        } else {
            (bn.running_mean.clone(), bn.running_var.clone())
        };
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xhat = Matrix::from_fn(h.rows(), h.cols(), |n, j| (h[(n, j)] - mean[j]) * inv[j]);
        h = Matrix::from_fn(h.rows(), h.cols(), |n, j| bn.gamma[j] * xhat[(n, j)] + bn.beta[j]);
        if batch_stats {
            xhat_out = Some(xhat);
            stats = Some((mean, var));
        }
    }
    let z = match layer.spec.activation {
        Activation::Relu => h.map(|v| v.max(0.0)),
        Activation::Linear | Activation::Softmax => h.clone(),
    };
    (h, z, xhat_out, stats)
}

/// Biased per-column variance and mean.
fn column_mean_var(h: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = h.col_means();
    let n = h.rows() as f64;
    let mut var = vec![0.0; h.cols()];
    for i in 0..h.rows() {
        for (j, v) in h.row(i).iter().enumerate() {
            var[j] += (v - mean[j]).powi(2);
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (var, mean)
}

/// Inverted dropout; returns the scaled output and the mask (entries 0 or
/// 1/(1−p)).
fn dropout(z: &Matrix, p: f64, r: &mut Rng) -> (Matrix, Option<Matrix>) {
    if p <= 0.0 {
        return (z.clone(), None);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Matrix::from_fn(z.rows(), z.cols(), |_, _| if r.random::<f64>() < p { 0.0 } else { keep });
    (z.zip_with(&mask, |a, m| a * m), Some(mask))
}

fn validate_specs(input_dim: usize, specs: &[LayerSpec]) -> Result<()> {
    if input_dim == 0 || specs.is_empty() {
        return Err(precondition("network", "need a positive input dimension and at least one layer"));
    }
    for (i, s) in specs.iter().enumerate() {
        let last = i + 1 == specs.len();
        if s.width == 0 {
            return Err(precondition("network", format!("layer {} has zero width", i + 1)));
        }
        if s.activation == Activation::Softmax && !last {
            return Err(precondition("network", format!("softmax on hidden layer {}", i + 1)));
        }
        if !(0.0..1.0).contains(&s.dropout_rate) {
            return Err(precondition("network", format!("layer {} dropout {} not in [0,1)", i + 1, s.dropout_rate)));
        }
        if last && (s.dropout_rate > 0.0 || s.batch_norm) {
            return Err(precondition("network", "output layer takes neither dropout nor batch norm"));
        }
    }
    Ok(())
}
