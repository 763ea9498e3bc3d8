use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use super::{Activation, LayerCache, Network, OptimizerConfig};
use crate::data::{minibatches, Dataset};
use crate::error::{precondition, Error, Result};
use crate::linalg::Matrix;
use crate::regularize::{self, penalty, penalty_gradient, training_penalty, RegKind, RegularizerConfig};
use crate::rng;

/// Stream offset separating dropout masks from minibatch shuffles.
const DROPOUT_STREAM: u64 = 0x6472_6f70_0000_0000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub regularizers: Vec<RegularizerConfig>,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's minibatches.
    pub train_loss: f64,
    /// Percent; `None` without a validation set.
    pub val_error: Option<f64>,
    /// Mean penalty value per regularizer (surrogate for RR kinds).
    pub penalties: Vec<f64>,
    /// Exact stable-rank penalty on the last minibatch, RR kinds only.
    pub rr_exact: Vec<Option<f64>>,
}

pub type History = Vec<EpochRecord>;

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows();
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[labels[i]];
        let g = grad.row_mut(i);
        for (j, v) in row.iter().enumerate() {
            g[j] = (v - lse).exp() / n as f64;
        }
        g[labels[i]] -= 1.0 / n as f64;
    }
    (loss / n as f64, grad)
}

/// Parameter gradients in the order W, b, then γ, β for BN layers.
pub(crate) fn backward(
    net: &Network,
    caches: &[LayerCache],
    dlogits: Matrix,
    extra_dz: &mut [Option<Matrix>],
) -> Vec<Vec<f64>> {
    let n_layers = net.num_layers();
    let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_layers];
    let mut upstream = dlogits;
    for i in (0..n_layers).rev() {
        let layer = &net.layers[i];
        let cache = &caches[i];
        let mut dh = if i + 1 == n_layers {
            upstream
        } else {
            let mut dz = match &cache.mask {
                Some(mask) => upstream.zip_with(mask, |g, m| g * m),
                None => upstream,
            };
            if let Some(extra) = extra_dz[i].take() {
                dz.axpy(1.0, &extra);
            }
            match layer.spec.activation {
                Activation::Relu => dz.zip_with(&cache.h, |g, h| if h > 0.0 { g } else { 0.0 }),
                Activation::Linear | Activation::Softmax => dz,
            }
        };
        let mut grads = Vec::with_capacity(4);
        let mut bn_grads = None;
        if let (Some(bn), Some(xhat)) = (&layer.bn, &cache.xhat) {
            let (rows, cols) = dh.shape();
            let mut dgamma = vec![0.0; cols];
            let mut dbeta = vec![0.0; cols];
            let mut sum_dx = vec![0.0; cols];
            let mut sum_dx_xhat = vec![0.0; cols];
            for r in 0..rows {
                for j in 0..cols {
                    let g = dh[(r, j)];
                    dgamma[j] += g * xhat[(r, j)];
                    dbeta[j] += g;
                    let dx = g * bn.gamma[j];
                    sum_dx[j] += dx;
                    sum_dx_xhat[j] += dx * xhat[(r, j)];
                }
            }
            let nf = rows as f64;
            dh = Matrix::from_fn(rows, cols, |r, j| {
                let dx = dh[(r, j)] * bn.gamma[j];
                cache.inv_std[j] / nf * (nf * dx - sum_dx[j] - xhat[(r, j)] * sum_dx_xhat[j])
            });
            bn_grads = Some((dgamma, dbeta));
        }
        let dw = cache.input.t_matmul(&dh);
        let db = dh.col_means().iter().map(|m| m * dh.rows() as f64).collect();
        if i > 0 {
            upstream = dh.matmul_t(&layer.w);
        } else {
            upstream = Matrix::zeros(0, 0);
        }
        grads.push(dw.into_vec());
        grads.push(db);
        if let Some((g, b)) = bn_grads {
            grads.push(g);
            grads.push(b);
        }
        per_layer[i] = grads;
    }
    per_layer.into_iter().flatten().collect()
}


pub(crate) struct BatchStep {
    pub cross_entropy: f64,
    pub total: f64,
    pub penalties: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
    /// Target activations and labels for RR kinds, for exact-value logging.
    pub rr_inputs: Vec<Option<(Matrix, Vec<usize>)>>,
}

/// Train-mode forward and backward pass on one minibatch. Updates BN running
/// statistics but not the parameters.
pub(crate) fn batch_gradients(
    net: &mut Network,
    xb: &Matrix,
    yb: &[usize],
    regs: &[RegularizerConfig],
    drop_rng: &mut rng::Rng,
) -> Result<BatchStep> {
    let (logits, caches) = net.forward_cached(xb, drop_rng);
    let (ce, dlogits) = softmax_cross_entropy(&logits, yb);
    let mut total = ce;
    let mut penalties = Vec::with_capacity(regs.len());
    let mut rr_inputs = Vec::with_capacity(regs.len());
    let mut extra_dz: Vec<Option<Matrix>> = vec![None; net.num_layers()];
    let mut weight_grads = Vec::new();
    for reg in regs {
        let l = reg.target_layer;
        let z = &caches[l - 1].z;
        let w = &net.layers[l - 1].w;
        let value = training_penalty(reg, z, yb, w)?;
        penalties.push(value);
        total += reg.loss_weight * value;
        if reg.loss_weight > 0.0 {
            let g = penalty_gradient(reg, z, yb, w)?.scale(reg.loss_weight);
            if reg.kind.on_weights() {
                weight_grads.push((net.weight_slot(l), g));
            } else {
                match &mut extra_dz[l - 1] {
                    Some(acc) => acc.axpy(1.0, &g),
                    slot => *slot = Some(g),
                }
            }
        }
        rr_inputs.push(
            matches!(reg.kind, RegKind::RR | RegKind::CwRR).then(|| (z.clone(), yb.to_vec())),
        );
    }
    let mut grads = backward(net, &caches, dlogits, &mut extra_dz);
    for (slot, g) in weight_grads {
        for (a, b) in grads[slot].iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    Ok(BatchStep {
        cross_entropy: ce,
        total,
        penalties,
        grads,
        rr_inputs,
    })
}

impl Network {
    /// Training objective on one batch and its gradient, tensors ordered as
    /// in [`Network::parameters`]. Dropout masks are drawn from `seed`.
    pub fn loss_gradient(
        &self,
        x: &Matrix,
        labels: &[usize],
        regs: &[RegularizerConfig],
        seed: u64,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check_input(x)?;
        for r in regs {
            regularize::validate(r, self.num_layers())?;
        }
        let mut scratch = self.clone();
        let step = batch_gradients(&mut scratch, x, labels, regs, &mut rng::seeded(seed))?;
        Ok((step.total, step.grads))
    }

    /// Trainable tensors: per layer W (row-major), b, then γ, β with BN.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(layer.w.data());
            out.push(&layer.b);
            if let Some(bn) = &layer.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.w.data_mut());
            out.push(&mut layer.b);
            if let Some(bn) = &mut layer.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    fn param_sizes(&mut self) -> Vec<usize> {
        self.parameters_mut().iter().map(|p| p.len()).collect()
    }

    /// Index of layer `l`'s weight tensor in the parameter list.
    fn weight_slot(&self, l: usize) -> usize {
        self.layers[..l - 1]
            .iter()
            .map(|layer| if layer.bn.is_some() { 4 } else { 2 })
            .sum()
    }
}

fn divergence(epoch: usize, regs: &[RegularizerConfig]) -> Error {
    let desc = if regs.is_empty() {
        "none".to_string()
    } else {
        regs.iter()
            .map(|r| format!("{}(lambda={}, layer={})", r.kind, r.loss_weight, r.target_layer))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Error::Divergence {
        epoch,
        regularizers: desc,
    }
}

/// Minimizes mean softmax cross-entropy plus Σ λ·Ω over seeded minibatches.
pub fn train(net: &Network, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Network, History)> {
    cfg.optimizer.validate()?;
    for r in &cfg.regularizers {
        regularize::validate(r, net.num_layers())?;
    }
    if train.dim() != net.input_dim() {
        return Err(Error::Dimension {
            context: "training inputs".into(),
            expected: net.input_dim(),
            got: train.dim(),
        });
    }
    if train.k > net.output_dim() {
        return Err(precondition(
            "train",
            format!("{} classes but only {} outputs", train.k, net.output_dim()),
        ));
    }
    let mut net = net.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((net, history));
    }
    let mut opt = Optimizer::new(cfg.optimizer, &net.param_sizes());
    let n_regs = cfg.regularizers.len();
    for epoch in 0..cfg.epochs {
        let mut drop_rng = rng::seeded(rng::derive_seed(cfg.seed, DROPOUT_STREAM + epoch as u64));
        let mut loss_sum = 0.0;
        let mut pen_sum = vec![0.0; n_regs];
        let mut batches = 0usize;
        let mut last_z: Vec<Option<(Matrix, Vec<usize>)>> = vec![None; n_regs];
        for (xb, yb) in minibatches(train, cfg.batch, cfg.seed, epoch)? {
            let step = batch_gradients(&mut net, &xb, &yb, &cfg.regularizers, &mut drop_rng)?;
            if !step.total.is_finite() {
                return Err(divergence(epoch, &cfg.regularizers));
            }
            for (r, v) in step.penalties.iter().enumerate() {
                pen_sum[r] += v;
            }
            for (r, z) in step.rr_inputs.into_iter().enumerate() {
                if z.is_some() {
                    last_z[r] = z;
                }
            }
            let ce = step.cross_entropy;
            let grads = step.grads;
            opt.step(net.parameters_mut(), &grads);
            loss_sum += ce;
            batches += 1;
        }
        if !net.is_finite() {
            return Err(divergence(epoch, &cfg.regularizers));
        }
        let rr_exact = cfg
            .regularizers
            .iter()
            .zip(&last_z)
            .map(|(reg, z)| {
                z.as_ref().map(|(z, y)| {
                    penalty(reg, z, y, &Matrix::zeros(0, 0)).unwrap_or(f64::NAN)
                })
            })
            .collect();
        let val_error = match val {
            Some(v) if !v.is_empty() => Some(net.evaluate(v)?),
            _ => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_error,
            penalties: pen_sum.iter().map(|s| s / batches as f64).collect(),
            rr_exact,
        });
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetMeta;
    use crate::network::LayerSpec;

    #[test]
    fn cross_entropy_uniform() {
        let (loss, g) = softmax_cross_entropy(&Matrix::zeros(2, 4), &[0, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((g[(0, 0)] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!((g[(1, 1)] - 0.125).abs() < 1e-12);
    }

    fn toy() -> Dataset {
        let x = Matrix::from_fn(200, 2, |i, j| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            side * (1.0 + (i as f64 * 0.13 + j as f64).sin().abs())
        });
        let y = (0..200).map(|i| i % 2).collect();
        Dataset::new(x, y, 2, DatasetMeta::default()).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let net = Network::mlp(2, &[4], 2, 0).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::adam(1e-3),
            regularizers: vec![],
            epochs: 0,
            batch: 10,
            seed: 0,
        };
        let (out, hist) = train(&net, &toy(), None, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(hist.is_empty());
    }

    #[test]
    fn bad_target_layer_rejected() {
        let net = Network::mlp(2, &[4], 2, 0).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::adam(1e-3),
            regularizers: vec![RegularizerConfig::new(RegKind::CR, 1.0, 2)],
            epochs: 1,
            batch: 10,
            seed: 0,
        };
        assert!(train(&net, &toy(), None, &cfg).is_err());
    }

    #[test]
    fn divergence_reports_weights() {
        let net = Network::new(2, &[LayerSpec::linear(4), LayerSpec::softmax(2)], 0).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::momentum(10.0, 0.9),
            regularizers: vec![RegularizerConfig::new(RegKind::VR, 1e6, 1)],
            epochs: 50,
            batch: 10,
            seed: 0,
        };
        match train(&net, &toy(), None, &cfg) {
            Err(Error::Divergence { regularizers, .. }) => assert!(regularizers.contains("VR")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
