//! Batch-normalization statistics.
//!
//! Statistics are computed layer by layer: the batch is pushed through
//! layers `1..l-1` with the statistics already computed for them, then
//! `mu_l` and `sigma_l` are the mean and population (`1/|B|`) standard
//! deviation of `W_l z_{l-1}` over the batch.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{ChiSquared, Distribution, Normal};

use crate::error::{Error, Result};
use crate::network::{BNState, BnMode, BnParams, NetworkSpec};
use crate::{par, rng};

/// Options for [`compute_stats`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsOptions {
    /// Lower bound applied to sigma. Zero means degenerate units are an error.
    pub sigma_floor: f64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions { sigma_floor: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsSource {
    MiniBatch { id: usize, size: usize },
    FullSet { size: usize },
}

/// Statistics of one BN layer, plus the plug-in moments used by noise control.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
    /// Per-unit `<w_k^2, rho>` with `rho` the per-coordinate batch variance of `z_{l-1}`.
    pub diag_var: Array1<f64>,
    /// Per-unit fourth central moment of `<w_k, z_{l-1}>` over the batch.
    pub fourth_moment: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    layers: Vec<Option<LayerStats>>,
    pub source: StatsSource,
}

impl BatchStats {
    pub fn get(&self, l: usize) -> Option<&LayerStats> {
        self.layers.get(l.wrapping_sub(1)).and_then(|s| s.as_ref())
    }

    pub fn get_mut(&mut self, l: usize) -> Option<&mut LayerStats> {
        self.layers.get_mut(l.wrapping_sub(1)).and_then(|s| s.as_mut())
    }

    /// 1-based indices of the layers that carry statistics.
    pub fn layers(&self) -> Vec<usize> {
        (1..=self.layers.len()).filter(|&l| self.layers[l - 1].is_some()).collect()
    }

    /// These statistics with `gamma`/`beta` taken from `template` (defaults 1/0).
    pub fn to_bn_state(&self, template: &BNState) -> BNState {
        let mut out = template.clone();
        for l in self.layers() {
            let s = self.get(l).unwrap();
            let p = match template.get(l) {
                Some(t) => BnParams { mu: s.mu.clone(), sigma: s.sigma.clone(), gamma: t.gamma.clone(), beta: t.beta.clone() },
                None => BnParams::standard(s.mu.clone(), s.sigma.clone()),
            };
            out.set(l, p);
        }
        out.mode = BnMode::Batch;
        out
    }

    pub fn bn_state(&self) -> BNState {
        self.to_bn_state(&BNState::empty(self.layers.len()))
    }
}

/// Population mean and variance of a sequence.
pub fn mean_var(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.into_iter().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Statistics of `batch` (rows are inputs) with `gamma = 1`, `beta = 0`.
pub fn compute_stats(net: &NetworkSpec, batch: ArrayView2<f64>, options: StatsOptions) -> Result<BatchStats> {
    compute_stats_with(net, &BNState::for_network(net), batch, options, StatsSource::FullSet { size: batch.nrows() })
}

/// Statistics of `batch`, propagating with `gamma`/`beta` from `template`.
pub fn compute_stats_with(
    net: &NetworkSpec,
    template: &BNState,
    batch: ArrayView2<f64>,
    options: StatsOptions,
    source: StatsSource,
) -> Result<BatchStats> {
    let n = batch.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("batch is empty".into()));
    }
    if batch.ncols() != net.input_dim() {
        return Err(Error::Dimension(format!("batch has {} columns, network expects {}", batch.ncols(), net.input_dim())));
    }
    let bn_layers = net.bn_layers();
    let Some(&last) = bn_layers.last() else {
        return Err(Error::InvalidNetwork("network has no batch-norm layers".into()));
    };
    let act = net.activation();
    let nf = n as f64;
    let mut layers = vec![None; net.depth()];
    let mut z = batch.to_owned();
    for l in 1..=last {
        let w = net.weights(l);
        let u = z.dot(&w.t());
        if !net.has_bn(l) {
            z = (u + net.bias(l)).mapv(|v| act.apply(v));
            continue;
        }
        let mu = u.mean_axis(Axis(0)).expect("batch is nonempty");
        let centered = &u - &mu;
        let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).unwrap();
        let fourth = centered.mapv(|c| c.powi(4)).mean_axis(Axis(0)).unwrap();
        let zmean = z.mean_axis(Axis(0)).unwrap();
        let rho = (&z - &zmean).mapv(|c| c * c).sum_axis(Axis(0)) / nf;
        let diag_var = w.mapv(|x| x * x).dot(&rho);
        let mut sigma = var.mapv(f64::sqrt);
        for (k, s) in sigma.iter_mut().enumerate() {
            let degenerate = !(var[k] > 0.0) || !s.is_finite();
            if options.sigma_floor > 0.0 {
                if degenerate || *s < options.sigma_floor {
                    warn!("layer {l} unit {k}: sigma {s:e} raised to floor {:e}", options.sigma_floor);
                    *s = options.sigma_floor;
                }
            } else if degenerate {
                return Err(Error::DegenerateStatistic { layer: l, unit: k, variance: var[k] });
            }
        }
        let (gamma, beta) = match template.get(l) {
            Some(p) => (p.gamma.clone(), p.beta.clone()),
            None => (Array1::ones(mu.len()), Array1::zeros(mu.len())),
        };
        let scale = &gamma / &sigma;
        let h = (&u - &mu) * &scale + &beta;
        z = h.mapv(|v| act.apply(v));
        layers[l - 1] = Some(LayerStats { mu, sigma, diag_var, fourth_moment: fourth });
    }
    Ok(BatchStats { layers, source })
}

/// Predicted sampling variances of one unit's BN statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariancePrediction {
    pub var_mu: f64,
    pub var_sigma2: f64,
    /// `<w^2, rho>`, the unit's pre-activation variance.
    pub diag_var: f64,
    pub fourth_moment: f64,
    pub batch_size: usize,
}

/// Sampling variance of `mu` and `sigma^2` for a unit with weights `w` whose
/// input has diagonal covariance `rho`, given the fourth central moment
/// `phi4` of `<w, z>` and the batch size.
///
/// `var(sigma^2)` is the textbook expression for the unbiased (`|B|-1`)
/// variance estimator; the biased estimator used by [`compute_stats`] has
/// variance smaller by a factor `((|B|-1)/|B|)^2`.
pub fn variance_prediction(w: ArrayView1<f64>, rho: ArrayView1<f64>, phi4: f64, batch_size: usize) -> Result<VariancePrediction> {
    if w.len() != rho.len() {
        return Err(Error::Dimension("weights and variances differ in length".into()));
    }
    if rho.iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidArgument("variances must be non-negative".into()));
    }
    let s2: f64 = w.iter().zip(rho).map(|(w, r)| w * w * r).sum();
    variance_from_moments(s2, phi4, batch_size)
}

/// [`variance_prediction`] from the pre-activation variance directly.
pub fn variance_from_moments(diag_var: f64, phi4: f64, batch_size: usize) -> Result<VariancePrediction> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!("batch size must be at least 2, got {batch_size}")));
    }
    let n = batch_size as f64;
    Ok(VariancePrediction {
        var_mu: diag_var / n,
        var_sigma2: (phi4 - diag_var * diag_var * (n - 3.0) / (n - 1.0)) / n,
        diag_var,
        fourth_moment: phi4,
        batch_size,
    })
}

/// Rows of `dataset` picked uniformly without replacement for draw `draw`.
///
/// Indices are returned in ascending order, so a batch covering the whole
/// dataset is the dataset itself.
pub fn minibatch_indices(n: usize, batch_size: usize, seed: u64, draw: u64) -> Result<Vec<usize>> {
    if batch_size > n {
        return Err(Error::InvalidArgument(format!("batch size {batch_size} exceeds dataset size {n}")));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut r = rng::stream(seed, draw);
    let mut idx = rand::seq::index::sample(&mut r, n, batch_size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn minibatch(dataset: ArrayView2<f64>, batch_size: usize, seed: u64, draw: u64) -> Result<Array2<f64>> {
    let idx = minibatch_indices(dataset.nrows(), batch_size, seed, draw)?;
    Ok(dataset.select(Axis(0), &idx))
}

/// BN statistics of repeated mini-batch draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Realizations {
    pub draws: Vec<BatchStats>,
    pub batch_size: usize,
    pub seed: u64,
}

/// Statistics of draw `draw`.
pub fn realization(
    net: &NetworkSpec,
    template: &BNState,
    dataset: ArrayView2<f64>,
    batch_size: usize,
    seed: u64,
    draw: usize,
    options: StatsOptions,
) -> Result<BatchStats> {
    let batch = minibatch(dataset, batch_size, seed, draw as u64)?;
    compute_stats_with(net, template, batch.view(), options, StatsSource::MiniBatch { id: draw, size: batch_size })
}

/// `n_draws` independent mini-batch realizations. Draw `i` uses random
/// stream `i` of `seed`, so the result is independent of scheduling.
pub fn sample_realizations(
    net: &NetworkSpec,
    template: &BNState,
    dataset: ArrayView2<f64>,
    batch_size: usize,
    n_draws: usize,
    seed: u64,
    options: StatsOptions,
) -> Result<Realizations> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    if batch_size > dataset.nrows() {
        return Err(Error::InvalidArgument(format!("batch size {batch_size} exceeds dataset size {}", dataset.nrows())));
    }
    let draws = par::try_map_range(n_draws, |i| realization(net, template, dataset, batch_size, seed, i, options))?;
    Ok(Realizations { draws, batch_size, seed })
}

/// Perturb statistics computed on a batch of `actual_size` so their
/// sampling variance matches a batch of `virtual_size`.
///
/// Each `mu` gets zero-mean Gaussian noise with variance
/// `var_mu(virtual) - var_mu(actual)`. Each `sigma^2` is multiplied by
/// `chi2_k / k` (unit mean, variance `2/k`) with `k` chosen so the added
/// variance equals the `var(sigma^2)` gap. The gaps use the plug-in moments
/// stored in `stats`.
pub fn noise_controlled(stats: &BatchStats, actual_size: usize, virtual_size: usize, seed: u64) -> Result<BatchStats> {
    if virtual_size < 2 || actual_size < 2 {
        return Err(Error::InvalidArgument("batch sizes must be at least 2".into()));
    }
    if virtual_size >= actual_size {
        return Err(Error::InvalidArgument(format!("virtual size {virtual_size} must be smaller than actual size {actual_size}")));
    }
    let mut r = rng::stream(seed, 0);
    let mut out = stats.clone();
    for l in out.layers() {
        let s = out.get_mut(l).unwrap();
        for k in 0..s.mu.len() {
            let small = variance_from_moments(s.diag_var[k], s.fourth_moment[k], virtual_size)?;
            let large = variance_from_moments(s.diag_var[k], s.fourth_moment[k], actual_size)?;
            let mu_gap = small.var_mu - large.var_mu;
            if mu_gap > 0.0 {
                s.mu[k] += Normal::new(0.0, mu_gap.sqrt()).unwrap().sample(&mut r);
            }
            let sigma2 = s.sigma[k] * s.sigma[k];
            let factor_var = (small.var_sigma2 - large.var_sigma2).max(0.0) / (sigma2 * sigma2);
            if factor_var > 0.0 && factor_var.is_finite() {
                let dof = 2.0 / factor_var;
                let f: f64 = ChiSquared::new(dof).unwrap().sample(&mut r) / dof;
                s.sigma[k] *= f.sqrt();
            }
        }
    }
    Ok(out)
}

/// Empirical variance of `mu_{l,k}` and `sigma^2_{l,k}` across draws (population form).
pub fn empirical_variance(draws: &[BatchStats], l: usize, k: usize) -> (f64, f64) {
    let (_, var_mu) = mean_var(draws.iter().map(|d| d.get(l).unwrap().mu[k]));
    let (_, var_s2) = mean_var(draws.iter().map(|d| d.get(l).unwrap().sigma[k].powi(2)));
    (var_mu, var_s2)
}
