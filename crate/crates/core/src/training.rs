//! Small-scale SGD training with hand-written backpropagation.
//!
//! Batch-normalized layers either use stored statistics (frozen) or the
//! statistics of the current mini-batch, in which case gradients flow
//! through the batch mean and variance.

use std::fmt::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::batchnorm::{compute_stats_with, StatsOptions, StatsSource};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::network::{BNState, BnMode, Layer, NetworkSpec};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    ZeroBias,
    RandomBias,
    BnWarmup,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_bias" => Ok(InitMode::ZeroBias),
            "random_bias" => Ok(InitMode::RandomBias),
            "bn_warmup" => Ok(InitMode::BnWarmup),
            _ => Err(Error::InvalidArgument(format!("unknown init mode {s:?} (zero_bias, random_bias, bn_warmup)"))),
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::ZeroBias => "zero_bias",
            InitMode::RandomBias => "random_bias",
            InitMode::BnWarmup => "bn_warmup",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Softmax cross-entropy; a scalar head is read as logits `[0, z]`.
    SoftmaxCrossEntropy,
    Hinge,
    /// `|z - t|^2 / 2` with `t = +-1` for a scalar head and one-hot otherwise.
    Squared,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax_cross_entropy" | "cross_entropy" => Ok(Loss::SoftmaxCrossEntropy),
            "hinge" => Ok(Loss::Hinge),
            "squared" => Ok(Loss::Squared),
            _ => Err(Error::InvalidArgument(format!("unknown loss {s:?} (softmax_cross_entropy, hinge, squared)"))),
        }
    }
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Loss::SoftmaxCrossEntropy => "softmax_cross_entropy",
            Loss::Hinge => "hinge",
            Loss::Squared => "squared",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub init_mode: InitMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub seed: u64,
    /// Keep every BN parameter fixed and use the stored statistics.
    pub bn_frozen: bool,
    /// Record a snapshot every this many epochs; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl TrainConfig {
    pub fn new(init_mode: InitMode) -> Self {
        TrainConfig {
            init_mode,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            loss: Loss::SoftmaxCrossEntropy,
            seed: 0,
            bn_frozen: init_mode == InitMode::BnWarmup,
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Half-width of the Glorot uniform range.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fresh parameters for the architecture of `template`.
///
/// Weights are Glorot uniform. `RandomBias` draws biases from the same range as
/// the layer's weights. `BnWarmup` puts BN on every hidden layer with
/// statistics of the whole `dataset`, `gamma = 1`, `beta = 0` and `c_L = 0`.
pub fn initialize(template: &NetworkSpec, mode: InitMode, dataset: ArrayView2<f64>, seed: u64) -> Result<(NetworkSpec, BNState)> {
    let widths = template.widths();
    // separate streams keep the weights identical across modes
    let (mut rw, mut rb) = (rng::stream(seed, 0), rng::stream(seed, 1));
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let a = glorot_bound(w[0], w[1]);
        let weights = Array2::from_shape_fn((w[1], w[0]), |_| rw.random_range(-a..=a));
        let bias = match mode {
            InitMode::RandomBias => Array1::from_shape_fn(w[1], |_| rb.random_range(-a..=a)),
            _ => Array1::zeros(w[1]),
        };
        layers.push(Layer::new(weights, bias));
    }
    let depth = layers.len();
    let bn_layers: Vec<usize> = if mode == InitMode::BnWarmup { (1..depth).collect() } else { vec![] };
    let net = NetworkSpec::new(template.activation(), layers, &bn_layers)?;
    let mut bn = BNState::for_network(&net);
    if mode == InitMode::BnWarmup && !bn_layers.is_empty() {
        if dataset.nrows() == 0 {
            return Err(Error::InvalidArgument("BN warm-up needs a nonempty dataset".into()));
        }
        let stats = compute_stats_with(&net, &bn, dataset, StatsOptions::default(), StatsSource::FullSet { size: dataset.nrows() })?;
        bn = stats.to_bn_state(&bn);
    }
    Ok((net, bn))
}

/// Where BN layers take `mu` and `sigma` from during a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatMode {
    Stored,
    Batch,
}

struct Cache {
    /// `z[0]` is the input batch.
    z: Vec<Array2<f64>>,
    h: Vec<Array2<f64>>,
    hhat: Vec<Option<Array2<f64>>>,
    sigma: Vec<Option<Array1<f64>>>,
}

fn forward_batch(net: &NetworkSpec, bn: &BNState, x: ArrayView2<f64>, stats: StatMode) -> Result<Cache> {
    let depth = net.depth();
    let act = net.activation();
    let mut cache = Cache { z: vec![x.to_owned()], h: Vec::with_capacity(depth), hhat: Vec::new(), sigma: Vec::new() };
    for l in 1..=depth {
        let u = cache.z[l - 1].dot(&net.weights(l).t());
        let (h, hhat, sigma) = if net.has_bn(l) {
            let p = bn.get(l).ok_or(Error::MissingBatchNorm(l))?;
            let (mu, sigma) = match stats {
                StatMode::Stored => (p.mu.clone(), p.sigma.clone()),
                StatMode::Batch => {
                    let mu = u.mean_axis(Axis(0)).ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
                    let var = (&u - &mu).mapv(|c| c * c).mean_axis(Axis(0)).unwrap();
                    if let Some(k) = var.iter().position(|&v| !(v > 0.0)) {
                        return Err(Error::DegenerateStatistic { layer: l, unit: k, variance: var[k] });
                    }
                    (mu, var.mapv(f64::sqrt))
                }
            };
            let hhat = (&u - &mu) / &sigma;
            let h = &hhat * &p.gamma + &p.beta;
            (h, Some(hhat), Some(sigma))
        } else {
            (u + net.bias(l), None, None)
        };
        let z = if l < depth { h.mapv(|v| act.apply(v)) } else { h.clone() };
        cache.h.push(h);
        cache.hhat.push(hhat);
        cache.sigma.push(sigma);
        cache.z.push(z);
    }
    Ok(cache)
}

fn check_labels(net: &NetworkSpec, x: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if labels.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    let classes = net.output_dim().max(2);
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean loss over the batch and its gradient with respect to the logits.
fn loss_grad(loss: Loss, logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    let scalar = logits.ncols() == 1;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let y = labels[i];
        let mut g = grad.row_mut(i);
        match (loss, scalar) {
            (Loss::SoftmaxCrossEntropy, true) => {
                let z = row[0];
                total += softplus(z) - y as f64 * z;
                g[0] = 1.0 / (1.0 + (-z).exp()) - y as f64;
            }
            (Loss::SoftmaxCrossEntropy, false) => {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let e = row.mapv(|v| (v - m).exp());
                let s = e.sum();
                total += m + s.ln() - row[y];
                g.assign(&(e / s));
                g[y] -= 1.0;
            }
            (Loss::Hinge, true) => {
                let s = if y == 1 { 1.0 } else { -1.0 };
                let margin = 1.0 - s * row[0];
                if margin > 0.0 {
                    total += margin;
                    g[0] = -s;
                }
            }
            (Loss::Hinge, false) => {
                for j in 0..row.len() {
                    let margin = 1.0 + row[j] - row[y];
                    if j != y && margin > 0.0 {
                        total += margin;
                        g[j] += 1.0;
                        g[y] -= 1.0;
                    }
                }
            }
            (Loss::Squared, _) => {
                for j in 0..row.len() {
                    let t = match scalar {
                        true => {
                            if y == 1 {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        false => (j == y) as u8 as f64,
                    };
                    total += 0.5 * (row[j] - t).powi(2);
                    g[j] = row[j] - t;
                }
            }
        }
    }
    (total / n, grad / n)
}

fn predictions(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| match r.len() {
            1 => (r[0] >= 0.0) as usize,
            _ => r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b }).0,
        })
        .collect()
}

/// Gradients of the mean loss, indexed by layer `l - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
    pub gamma: Vec<Option<Array1<f64>>>,
    pub beta: Vec<Option<Array1<f64>>>,
}

/// Mean loss and its gradient over a batch.
pub fn gradients(
    net: &NetworkSpec,
    bn: &BNState,
    x: ArrayView2<f64>,
    labels: &[usize],
    loss: Loss,
    stats: StatMode,
) -> Result<(f64, Gradients)> {
    check_labels(net, x, labels)?;
    let cache = forward_batch(net, bn, x, stats)?;
    let depth = net.depth();
    let act = net.activation();
    let (value, mut g) = loss_grad(loss, &cache.z[depth], labels);
    let mut grads = Gradients { weights: Vec::new(), bias: Vec::new(), gamma: Vec::new(), beta: Vec::new() };
    for l in (1..=depth).rev() {
        let mut dh = g;
        if l < depth {
            dh.zip_mut_with(&cache.h[l - 1], |d, &h| *d *= act.slope(h));
        }
        let du = if net.has_bn(l) {
            let p = bn.get(l).ok_or(Error::MissingBatchNorm(l))?;
            let hhat = cache.hhat[l - 1].as_ref().unwrap();
            let sigma = cache.sigma[l - 1].as_ref().unwrap();
            grads.gamma.push(Some((&dh * hhat).sum_axis(Axis(0))));
            grads.beta.push(Some(dh.sum_axis(Axis(0))));
            grads.bias.push(Array1::zeros(net.width(l)));
            let dhat = &dh * &p.gamma;
            match stats {
                StatMode::Stored => dhat / sigma,
                StatMode::Batch => {
                    let m1 = dhat.mean_axis(Axis(0)).unwrap();
                    let m2 = (&dhat * hhat).mean_axis(Axis(0)).unwrap();
                    (dhat - &m1 - hhat * &m2) / sigma
                }
            }
        } else {
            grads.gamma.push(None);
            grads.beta.push(None);
            grads.bias.push(dh.sum_axis(Axis(0)));
            dh
        };
        grads.weights.push(du.t().dot(&cache.z[l - 1]));
        g = du.dot(net.weights(l));
    }
    grads.weights.reverse();
    grads.bias.reverse();
    grads.gamma.reverse();
    grads.beta.reverse();
    Ok((value, grads))
}

/// Mean loss and accuracy over a labeled set.
pub fn evaluate(net: &NetworkSpec, bn: &BNState, x: ArrayView2<f64>, labels: &[usize], loss: Loss, stats: StatMode) -> Result<(f64, f64)> {
    check_labels(net, x, labels)?;
    let cache = forward_batch(net, bn, x, stats)?;
    let logits = &cache.z[net.depth()];
    let (value, _) = loss_grad(loss, logits, labels);
    let correct = predictions(logits).iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok((value, correct as f64 / labels.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub net: NetworkSpec,
    pub bn: BNState,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Full-dataset loss after each epoch.
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub holdout_accuracy: Option<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,acc,holdout_acc\n");
        for e in 0..self.loss.len() {
            let hold = self.holdout_accuracy.as_ref().map_or(String::new(), |h| format!("{:.17e}", h[e]));
            writeln!(out, "{},{:.17e},{:.17e},{hold}", e + 1, self.loss[e], self.accuracy[e]).unwrap();
        }
        out
    }
}

/// Plain mini-batch SGD; the epoch order is reshuffled from `(seed, epoch)`.
///
/// Without `bn_frozen`, BN layers normalize with each mini-batch's statistics,
/// `gamma`/`beta` are trained, and evaluation and the stored `mu`/`sigma` use
/// full-training-set statistics.
pub fn train(
    net: &mut NetworkSpec,
    bn: &mut BNState,
    data: &LabeledDataset,
    config: &TrainConfig,
    holdout: Option<&LabeledDataset>,
) -> Result<TrainHistory> {
    config.validate()?;
    let labels = data.labels()?;
    check_labels(net, data.inputs.view(), labels)?;
    bn.validate(net)?;
    let use_batch = !config.bn_frozen && !net.bn_layers().is_empty();
    let stats = if use_batch { StatMode::Batch } else { StatMode::Stored };
    let n = data.len();
    let mut history = TrainHistory { holdout_accuracy: holdout.map(|_| Vec::new()), ..TrainHistory::default() };
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        let mut r = rng::stream(config.seed, epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut r);
        for chunk in order.chunks(config.batch_size) {
            if use_batch && chunk.len() < 2 {
                continue;
            }
            let x = data.inputs.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (value, g) = gradients(net, bn, x.view(), &y, config.loss, stats)?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1 });
            }
            apply_step(net, bn, &g, config.learning_rate, !config.bn_frozen);
        }
        if use_batch {
            refresh_stats(net, bn, data.inputs.view())?;
        }
        let (value, acc) = evaluate(net, bn, data.inputs.view(), labels, config.loss, StatMode::Stored)?;
        if !value.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        history.loss.push(value);
        history.accuracy.push(acc);
        if let (Some(h), Some(hist)) = (holdout, history.holdout_accuracy.as_mut()) {
            hist.push(evaluate(net, bn, h.inputs.view(), h.labels()?, config.loss, StatMode::Stored)?.1);
        }
        if config.snapshot_every > 0 && (epoch + 1) % config.snapshot_every == 0 {
            history.snapshots.push(Snapshot { epoch: epoch + 1, net: net.clone(), bn: bn.clone() });
        }
    }
    Ok(history)
}

fn apply_step(net: &mut NetworkSpec, bn: &mut BNState, g: &Gradients, lr: f64, train_bn: bool) {
    for l in 1..=net.depth() {
        net.weights_mut(l).scaled_add(-lr, &g.weights[l - 1]);
        if net.has_bn(l) {
            if train_bn {
                let p = bn.get_mut(l).unwrap();
                p.gamma.scaled_add(-lr, g.gamma[l - 1].as_ref().unwrap());
                p.beta.scaled_add(-lr, g.beta[l - 1].as_ref().unwrap());
            }
        } else {
            net.bias_mut(l).scaled_add(-lr, &g.bias[l - 1]);
        }
    }
}

/// Replace stored `mu`/`sigma` with full-set statistics under the current parameters.
fn refresh_stats(net: &NetworkSpec, bn: &mut BNState, x: ArrayView2<f64>) -> Result<()> {
    let stats = compute_stats_with(net, bn, x, StatsOptions::default(), StatsSource::FullSet { size: x.nrows() })?;
    for l in stats.layers() {
        let s = stats.get(l).unwrap();
        let p = bn.get_mut(l).unwrap();
        p.mu.assign(&s.mu);
        p.sigma.assign(&s.sigma);
    }
    bn.mode = BnMode::Batch;
    Ok(())
}

pub const FD_STEP: f64 = 1e-3;
/// Gradient magnitudes below this are compared absolutely rather than relatively.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter with the largest error, e.g. `W2[0,3]`.
    pub worst: String,
    pub parameters: usize,
}

/// Compare analytic gradients with extrapolated central differences for every parameter.
///
/// Fails with [`Error::NearKink`] when some pre-activation lies within
/// `10 * step` of an activation kink, or when any perturbed evaluation
/// changes a hidden activation sign.
pub fn grad_check(net: &NetworkSpec, bn: &BNState, loss: Loss, x: ArrayView2<f64>, labels: &[usize], stats: StatMode) -> Result<GradCheck> {
    let step = FD_STEP;
    let cache = forward_batch(net, bn, x, stats)?;
    let margin = (1..net.depth()).flat_map(|l| cache.h[l - 1].iter().map(|v| v.abs()).collect::<Vec<_>>()).fold(f64::INFINITY, f64::min);
    if margin <= 10.0 * step {
        return Err(Error::NearKink { margin });
    }
    let (_, g) = gradients(net, bn, x, labels, loss, stats)?;
    let signs =
        |c: &Cache| -> Vec<bool> { (1..net.depth()).flat_map(|l| c.h[l - 1].iter().map(|&v| v >= 0.0).collect::<Vec<_>>()).collect() };
    let base = signs(&cache);
    let eval = |n: &NetworkSpec, b: &BNState| -> Result<f64> {
        let c = forward_batch(n, b, x, stats)?;
        if signs(&c) != base {
            return Err(Error::NearKink { margin });
        }
        Ok(loss_grad(loss, &c.z[n.depth()], labels).0)
    };
    // Richardson-extrapolated central difference of `t -> f(theta + t)`
    let numeric = |f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        let wide = (f(step)? - f(-step)?) / (2.0 * step);
        let narrow = (f(step / 2.0)? - f(-step / 2.0)?) / step;
        Ok((4.0 * narrow - wide) / 3.0)
    };
    let mut worst = (0.0f64, String::new());
    let mut count = 0usize;
    let mut record = |analytic: f64, numeric: f64, name: String| {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, name);
        }
        count += 1;
    };
    for l in 1..=net.depth() {
        let (rows, cols) = net.weights(l).dim();
        for i in 0..rows {
            for j in 0..cols {
                let f = |t: f64| {
                    let mut n = net.clone();
                    n.weights_mut(l)[[i, j]] += t;
                    eval(&n, bn)
                };
                record(g.weights[l - 1][[i, j]], numeric(&f)?, format!("W{l}[{i},{j}]"));
            }
        }
        if net.has_bn(l) {
            for (name, which) in [("gamma", 0), ("beta", 1)] {
                for i in 0..net.width(l) {
                    let f = |t: f64| {
                        let mut b = bn.clone();
                        let p = b.get_mut(l).unwrap();
                        if which == 0 {
                            p.gamma[i] += t;
                        } else {
                            p.beta[i] += t;
                        }
                        eval(net, &b)
                    };
                    let analytic = if which == 0 { g.gamma[l - 1].as_ref().unwrap()[i] } else { g.beta[l - 1].as_ref().unwrap()[i] };
                    record(analytic, numeric(&f)?, format!("{name}{l}[{i}]"));
                }
            }
        } else {
            for i in 0..net.width(l) {
                let f = |t: f64| {
                    let mut n = net.clone();
                    n.bias_mut(l)[i] += t;
                    eval(&n, bn)
                };
                record(g.bias[l - 1][i], numeric(&f)?, format!("c{l}[{i}]"));
            }
        }
    }
    Ok(GradCheck { max_rel_error: worst.0, worst: worst.1, parameters: count })
}

/// Whether every output unit takes strictly positive and strictly negative
/// values over `minibatch`.
///
/// The BN statistics in `bn` must be those of this mini-batch. A batch with
/// fewer than two rows cannot straddle anything and yields `false`.
pub fn each_side_check(net: &NetworkSpec, bn: &BNState, minibatch: ArrayView2<f64>) -> Result<Vec<bool>> {
    if minibatch.nrows() < 2 {
        return Ok(vec![false; net.output_dim()]);
    }
    if !net.bn_layers().is_empty() {
        let own = compute_stats_with(net, bn, minibatch, StatsOptions::default(), StatsSource::FullSet { size: minibatch.nrows() })?;
        for l in own.layers() {
            let (s, p) = (own.get(l).unwrap(), bn.get(l).ok_or(Error::MissingBatchNorm(l))?);
            let close = |a: &Array1<f64>, b: &Array1<f64>| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10 * (1.0 + x.abs()));
            if !close(&s.mu, &p.mu) || !close(&s.sigma, &p.sigma) {
                return Err(Error::Precondition(format!("BN statistics of layer {l} were not computed from this mini-batch")));
            }
        }
    }
    let out = &forward_batch(net, bn, minibatch, StatMode::Stored)?.z[net.depth()];
    Ok(out.columns().into_iter().map(|c| c.iter().any(|&v| v > 0.0) && c.iter().any(|&v| v < 0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batchnorm::compute_stats;
    use crate::datasets::{two_class_2d, TwoClassKind};
    use crate::geometry::centroid_incidence;
    use crate::network::Activation;
    use crate::testutil::{gaussian_batch, random_net};
    use ndarray::array;

    fn template(widths: &[usize], act: Activation) -> NetworkSpec {
        let layers = widths.windows(2).map(|w| Layer::zero_bias(Array2::zeros((w[1], w[0])))).collect();
        NetworkSpec::new(act, layers, &[]).unwrap()
    }

    #[test]
    fn initialization_modes() {
        let data = gaussian_batch(1, 64, 2);
        let t = template(&[2, 8, 8, 1], Activation::LeakyRelu(0.1));
        let (net, bn) = initialize(&t, InitMode::ZeroBias, data.view(), 3).unwrap();
        assert!((1..=3).all(|l| net.bias(l).iter().all(|&c| c == 0.0)));
        assert!(net.bn_layers().is_empty() && bn.validate(&net).is_ok());
        let (net, _) = initialize(&t, InitMode::RandomBias, data.view(), 3).unwrap();
        let a = glorot_bound(2, 8);
        assert!(net.bias(1).iter().all(|&c| c.abs() <= a) && net.bias(1).iter().any(|&c| c != 0.0));
        let (zb, _) = initialize(&t, InitMode::ZeroBias, data.view(), 3).unwrap();
        assert!((1..=3).all(|l| zb.weights(l) == net.weights(l)));
        let (net, bn) = initialize(&t, InitMode::BnWarmup, data.view(), 3).unwrap();
        assert_eq!(net.bn_layers(), vec![1, 2]);
        assert!(net.bias(3).iter().all(|&c| c == 0.0));
        for l in [1, 2] {
            assert!(centroid_incidence(&net, &bn, l, data.view()).unwrap() <= 1e-10);
            assert!(bn.get(l).unwrap().gamma.iter().all(|&g| g == 1.0));
        }
        assert_eq!(initialize(&t, InitMode::BnWarmup, data.view(), 3).unwrap(), (net, bn));
        assert!("warm".parse::<InitMode>().is_err());
    }

    fn interior_point(net: &NetworkSpec, bn: &BNState, stats: StatMode, seed: u64, n: usize) -> Option<Array2<f64>> {
        (0..50u64).find_map(|t| {
            let x = gaussian_batch(seed * 1000 + t, n, net.input_dim());
            let c = forward_batch(net, bn, x.view(), stats).ok()?;
            let ok = (1..net.depth()).all(|l| c.h[l - 1].iter().all(|v| v.abs() > 10.0 * FD_STEP));
            ok.then_some(x)
        })
    }

    #[test]
    fn grad_check_linear_squared_is_exact() {
        let (net, bn) = random_net(2, &[3, 2], Activation::Relu, false);
        let x = gaussian_batch(4, 5, 3);
        let r = grad_check(&net, &bn, Loss::Squared, x.view(), &[0, 1, 1, 0, 1], StatMode::Stored).unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
    }

    #[test]
    fn grad_check_bn_nets() {
        for (seed, act) in [(1, Activation::LeakyRelu(0.1)), (2, Activation::Abs), (3, Activation::Relu)] {
            let (net, bn) = random_net(seed, &[3, 5, 4, 2], act, true);
            for (stats, loss) in [
                (StatMode::Stored, Loss::SoftmaxCrossEntropy),
                (StatMode::Batch, Loss::SoftmaxCrossEntropy),
                (StatMode::Batch, Loss::Squared),
            ] {
                let x = interior_point(&net, &bn, stats, seed, 6).unwrap();
                let r = grad_check(&net, &bn, loss, x.view(), &[0, 1, 1, 0, 1, 0], stats).unwrap();
                assert!(r.max_rel_error <= 1e-5, "{act:?} {stats:?} {r:?}");
            }
        }
    }

    #[test]
    fn grad_check_detects_kinks() {
        let net =
            NetworkSpec::new(Activation::LeakyRelu(0.1), vec![Layer::zero_bias(array![[1.0, 0.0]]), Layer::zero_bias(array![[1.0]])], &[])
                .unwrap();
        let bn = BNState::for_network(&net);
        let x = array![[1e-7, 1.0]];
        assert!(matches!(grad_check(&net, &bn, Loss::Hinge, x.view(), &[1], StatMode::Stored), Err(Error::NearKink { .. })));
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = two_class_2d(TwoClassKind::Xor, 64, 0.2, 1).unwrap();
        let t = template(&[2, 6, 1], Activation::LeakyRelu(0.1));
        for mode in [InitMode::ZeroBias, InitMode::BnWarmup] {
            let (mut net, mut bn) = initialize(&t, mode, data.inputs.view(), 2).unwrap();
            let (n0, b0) = (net.clone(), bn.clone());
            let mut cfg = TrainConfig::new(mode);
            cfg.learning_rate = 0.0;
            cfg.epochs = 3;
            let h = train(&mut net, &mut bn, &data, &cfg, None).unwrap();
            assert_eq!((net, bn), (n0, b0));
            assert!(h.loss.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn linear_net_separates_clusters() {
        let data = two_class_2d(TwoClassKind::Clusters, 100, 0.3, 5).unwrap();
        let t = template(&[2, 1], Activation::Relu);
        let (mut net, mut bn) = initialize(&t, InitMode::ZeroBias, data.inputs.view(), 5).unwrap();
        let mut cfg = TrainConfig::new(InitMode::ZeroBias);
        cfg.epochs = 200;
        cfg.learning_rate = 0.1;
        let h = train(&mut net, &mut bn, &data, &cfg, Some(&data)).unwrap();
        assert_eq!(h.len(), 200);
        assert_eq!(*h.accuracy.last().unwrap(), 1.0);
        assert_eq!(h.holdout_accuracy.as_ref().unwrap().len(), 200);
    }

    #[test]
    fn rings_defeat_linear_classifiers() {
        let data = two_class_2d(TwoClassKind::Rings, 200, 0.05, 5).unwrap();
        let t = template(&[2, 1], Activation::Relu);
        let (mut net, mut bn) = initialize(&t, InitMode::RandomBias, data.inputs.view(), 5).unwrap();
        let mut cfg = TrainConfig::new(InitMode::RandomBias);
        cfg.epochs = 200;
        let h = train(&mut net, &mut bn, &data, &cfg, None).unwrap();
        assert!(h.accuracy.iter().all(|&a| a < 1.0));
    }

    #[test]
    fn frozen_bn_and_determinism() {
        let data = two_class_2d(TwoClassKind::Rings, 128, 0.1, 8).unwrap();
        let t = template(&[2, 8, 8, 1], Activation::LeakyRelu(0.1));
        let (net0, bn0) = initialize(&t, InitMode::BnWarmup, data.inputs.view(), 8).unwrap();
        let run = |cfg: &TrainConfig| {
            let (mut n, mut b) = (net0.clone(), bn0.clone());
            let h = train(&mut n, &mut b, &data, cfg, None).unwrap();
            (n, b, h)
        };
        let mut cfg = TrainConfig::new(InitMode::BnWarmup);
        cfg.epochs = 5;
        cfg.snapshot_every = 2;
        let (n1, b1, h1) = run(&cfg);
        assert_eq!(b1, bn0);
        assert_ne!(n1, net0);
        assert_eq!(h1.snapshots.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(run(&cfg).2, h1);
        cfg.bn_frozen = false;
        let (_, b2, h2) = run(&cfg);
        assert_ne!(b2, bn0);
        assert!(h2.loss.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn divergence_is_reported() {
        let data = two_class_2d(TwoClassKind::Clusters, 32, 0.5, 1).unwrap();
        let t = template(&[2, 4, 1], Activation::Abs);
        let (mut net, mut bn) = initialize(&t, InitMode::ZeroBias, data.inputs.view(), 1).unwrap();
        let mut cfg = TrainConfig::new(InitMode::ZeroBias);
        cfg.loss = Loss::Squared;
        cfg.learning_rate = 1e6;
        assert!(matches!(train(&mut net, &mut bn, &data, &cfg, None), Err(Error::Diverged { .. })));
    }

    #[test]
    fn each_side_cases_and_preconditions() {
        let (net, _) = random_net(4, &[2, 6, 6, 1], Activation::LeakyRelu(0.1), true);
        let one = gaussian_batch(3, 1, 2);
        assert_eq!(each_side_check(&net, &BNState::for_network(&net), one.view()).unwrap(), vec![false]);
        let batch = gaussian_batch(3, 16, 2);
        let mut net0 = net.clone();
        net0.bias_mut(3).fill(0.0);
        let bn = compute_stats(&net0, batch.view(), StatsOptions::default()).unwrap().bn_state();
        assert_eq!(each_side_check(&net0, &bn, batch.view()).unwrap().len(), 1);
        let other = gaussian_batch(9, 16, 2);
        assert!(each_side_check(&net0, &bn, other.view()).is_err());
        let mut shifted = net0.clone();
        shifted.bias_mut(3).fill(1e3);
        assert_eq!(each_side_check(&shifted, &bn, batch.view()).unwrap(), vec![false]);
    }

    #[test]
    fn history_csv_shape() {
        let h = TrainHistory { loss: vec![1.0, 0.5], accuracy: vec![0.5, 1.0], holdout_accuracy: None, snapshots: vec![] };
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("2,"));
    }
}
