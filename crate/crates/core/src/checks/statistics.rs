//! Checks of the BN sampling statistics, the each-side property and the gradients.

use std::fmt::Write;

use ndarray::{array, Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{batch_bn, rel_gap, shifted_gaussian, uniform_net, CheckConfig, CheckReport};
use crate::batchnorm::{compute_stats, mean_var, variance_prediction, StatsOptions};
use crate::datasets::gaussian_inputs;
use crate::error::{Error, Result};
use crate::jitter::{analytic_predictions, distribution_report, noise_controlled_ensemble, stats_ensemble};
use crate::network::{forward, Activation, BNState, BnParams, Layer, NetworkSpec};
use crate::par;
use crate::rng::{derive_seed, stream};
use crate::training::{each_side_check, glorot_bound, grad_check, Loss, StatMode};

pub const MC_DRAWS: usize = 1_000_000;
pub const MC_BATCH_SIZES: [usize; 3] = [16, 64, 256];
pub const MC_MU_TOL: f64 = 0.02;
pub const MC_SIGMA2_TOL: f64 = 0.05;
pub const FIG7_SAMPLES: usize = 1000;
pub const FIG7_BATCH: usize = 64;
pub const FIG7_DRAWS: usize = 10_000;
pub const FIG7_TOL: f64 = 0.10;
pub const NOISE_VIRTUAL: usize = 32;
const MC_CHUNK: usize = 1000;

/// Sample mean and population variance of `<w, z>` over `MC_DRAWS` Gaussian batches.
fn monte_carlo(seed: u64, w: &[f64; 3], mean: &[f64; 3], sd: &[f64; 3], b: usize) -> Vec<(f64, f64)> {
    let chunks = par::map_range(MC_DRAWS / MC_CHUNK, |c| {
        let mut r = stream(seed, c as u64);
        (0..MC_CHUNK)
            .map(|_| {
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..b {
                    let u: f64 = (0..3).map(|d| w[d] * (mean[d] + sd[d] * r.sample::<f64, _>(StandardNormal))).sum();
                    s += u;
                    s2 += u * u;
                }
                let m = s / b as f64;
                (m, s2 / b as f64 - m * m)
            })
            .collect::<Vec<_>>()
    });
    chunks.into_iter().flatten().collect()
}

pub(super) fn bn_variance(cfg: &CheckConfig) -> Result<CheckReport> {
    let w = [1.0, -2.0, 0.5];
    let mean = [0.5, -1.0, 2.0];
    let rho = [1.0, 0.5, 2.0];
    let sd = rho.map(f64::sqrt);
    let s2: f64 = (0..3).map(|d| w[d] * w[d] * rho[d]).sum();
    let mut csv = String::from("setting,unit,batch,empirical_var_mu,analytic_var_mu,gap_mu,empirical_var_sigma2,analytic_var_sigma2,gap_sigma2,gap_sigma2_biased\n");
    let mut passed = true;
    let mut worst = (0.0f64, 0.0f64);
    for b in MC_BATCH_SIZES {
        let draws = monte_carlo(derive_seed(cfg.seed, 80 + b as u64), &w, &mean, &sd, b);
        let (_, var_mu) = mean_var(draws.iter().map(|d| d.0));
        let (_, var_s2) = mean_var(draws.iter().map(|d| d.1));
        let unbiased = var_s2 * (b as f64 / (b as f64 - 1.0)).powi(2);
        let p = variance_prediction(Array1::from(w.to_vec()).view(), Array1::from(rho.to_vec()).view(), 3.0 * s2 * s2, b)?;
        let (gm, gs, gb) = (rel_gap(var_mu, p.var_mu), rel_gap(unbiased, p.var_sigma2), rel_gap(var_s2, p.var_sigma2));
        passed &= gm <= MC_MU_TOL && gs <= MC_SIGMA2_TOL;
        worst = (worst.0.max(gm), worst.1.max(gs));
        writeln!(csv, "iid,0,{b},{var_mu:e},{:e},{gm:e},{unbiased:e},{:e},{gs:e},{gb:e}", p.var_mu, p.var_sigma2).unwrap();
    }
    let fig7_mean = array![1.0, 0.0, -1.0];
    let fig7_cov = array![1.0, 3.0, 0.1];
    let data = gaussian_inputs(FIG7_SAMPLES, fig7_mean.view(), fig7_cov.view(), derive_seed(cfg.seed, 81))?;
    let net = NetworkSpec::new(Activation::Relu, vec![Layer::zero_bias(Array2::eye(3)), Layer::zero_bias(array![[1.0, 1.0, 1.0]])], &[1])?;
    let template = BNState::for_network(&net);
    let ens = stats_ensemble(&net, &template, data.inputs.view(), FIG7_BATCH, FIG7_DRAWS, derive_seed(cfg.seed, 82))?;
    let reference = compute_stats(&net, data.inputs.view(), StatsOptions::default())?;
    let rows = distribution_report(&ens, &analytic_predictions(&reference, FIG7_BATCH)?)?;
    let mut fig7_worst = 0.0f64;
    for row in &rows {
        let population = fig7_cov[row.unit] / FIG7_BATCH as f64;
        fig7_worst = fig7_worst.max(row.rel_gap_mu.abs());
        writeln!(
            csv,
            "fig7,{},{FIG7_BATCH},{:e},{:e},{:e},{:e},{:e},{:e},population_gap={:e}",
            row.unit,
            row.var_mu,
            row.analytic_var_mu,
            row.rel_gap_mu.abs(),
            row.var_sigma2_unbiased,
            row.analytic_var_sigma2,
            row.rel_gap_sigma2.abs(),
            rel_gap(row.var_mu, population)
        )
        .unwrap();
    }
    let nc = noise_controlled_ensemble(&ens, NOISE_VIRTUAL, derive_seed(cfg.seed, 83))?;
    let nc_rows = distribution_report(&nc, &analytic_predictions(&reference, NOISE_VIRTUAL)?)?;
    let mut nc_worst = 0.0f64;
    for row in &nc_rows {
        let gap_s2 = rel_gap(row.var_sigma2, row.analytic_var_sigma2);
        nc_worst = nc_worst.max(row.rel_gap_mu.abs());
        writeln!(
            csv,
            "noise_controlled,{},{NOISE_VIRTUAL},{:e},{:e},{:e},{:e},{:e},{gap_s2:e},",
            row.unit,
            row.var_mu,
            row.analytic_var_mu,
            row.rel_gap_mu.abs(),
            row.var_sigma2,
            row.analytic_var_sigma2
        )
        .unwrap();
    }
    passed &= fig7_worst <= FIG7_TOL && nc_worst <= FIG7_TOL;
    let summary = format!(
        "i.i.d. |B| in {MC_BATCH_SIZES:?}: worst var(mu) gap {:.2}% (tol {:.0}%), worst var(sigma^2) gap {:.2}% (tol {:.0}%); Fig. 7 setting worst var(mu) gap {:.2}%, noise-controlled {FIG7_BATCH}->{NOISE_VIRTUAL} {:.2}% (tol {:.0}%)",
        100.0 * worst.0,
        100.0 * MC_MU_TOL,
        100.0 * worst.1,
        100.0 * MC_SIGMA2_TOL,
        100.0 * fig7_worst,
        100.0 * nc_worst,
        100.0 * FIG7_TOL
    );
    Ok(CheckReport::new("bn_variance", passed, summary, csv))
}

pub const EACH_SIDE_TRIALS: usize = 500;

struct EachSideTrial {
    widths: Vec<usize>,
    alpha: f64,
    batch: usize,
    holds: bool,
    /// Smallest and largest head output over the mini-batch.
    range: (f64, f64),
}

fn each_side_trial(cfg: &CheckConfig, t: usize) -> Result<EachSideTrial> {
    let mut r = stream(derive_seed(cfg.seed, 9), t as u64);
    loop {
        let alpha = r.random_range(0.05..0.5);
        let depth = r.random_range(2..=4);
        let mut widths = vec![r.random_range(1..=4)];
        widths.extend((1..depth).map(|_| r.random_range(1..=8)));
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let a = glorot_bound(w[0], w[1]);
                Layer::zero_bias(Array2::from_shape_fn((w[1], w[0]), |_| r.random_range(-a..a)))
            })
            .collect();
        let net = NetworkSpec::new(Activation::leaky(alpha)?, layers, &(1..depth).collect::<Vec<_>>())?;
        let m = r.random_range(2..=32);
        let batch = shifted_gaussian(&mut r, m, widths[0]);
        let bn = match batch_bn(&net, &batch, None) {
            Ok(bn) => bn,
            Err(Error::DegenerateStatistic { .. }) => continue,
            Err(e) => return Err(e),
        };
        let holds = each_side_check(&net, &bn, batch.view())?.iter().all(|&b| b);
        let mut range = (f64::INFINITY, f64::NEG_INFINITY);
        for x in batch.rows() {
            let y = forward(&net, &bn, x)?.output()[0];
            range = (range.0.min(y), range.1.max(y));
        }
        return Ok(EachSideTrial { widths, alpha, batch: m, holds, range });
    }
}

pub(super) fn each_side(cfg: &CheckConfig) -> Result<CheckReport> {
    let trials = par::try_map_range(EACH_SIDE_TRIALS, |t| each_side_trial(cfg, t))?;
    let mut csv = String::from("trial,widths,alpha,batch,holds,min_output,max_output\n");
    let mut findings = vec![];
    for (t, tr) in trials.iter().enumerate() {
        let widths = tr.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x");
        writeln!(csv, "{t},{widths},{:.4},{},{},{:e},{:e}", tr.alpha, tr.batch, tr.holds, tr.range.0, tr.range.1).unwrap();
        if !tr.holds {
            findings.push(format!(
                "trial {t}: widths {widths}, alpha {:.3}, batch {}: outputs span [{:.4e}, {:.4e}]",
                tr.alpha, tr.batch, tr.range.0, tr.range.1
            ));
        }
    }
    let held = trials.iter().filter(|t| t.holds).count();
    let small = trials.iter().filter(|t| !t.holds && t.batch <= 4).count();
    let summary = format!(
        "each-side holds in {held}/{EACH_SIDE_TRIALS} trials ({} failures, {small} of them with batches of at most 4)",
        EACH_SIDE_TRIALS - held
    );
    let mut report = CheckReport::new("each_side", held == EACH_SIDE_TRIALS, summary, csv);
    report.findings = findings;
    Ok(report)
}

pub const GRAD_POINTS: usize = 50;
pub const GRAD_TOL: f64 = 1e-5;
const GRAD_ATTEMPTS: usize = 200;

struct Arch {
    name: &'static str,
    widths: &'static [usize],
    act: Activation,
    bn: bool,
    loss: Loss,
    stats: StatMode,
    batch: usize,
}

const ARCHS: [Arch; 4] = [
    Arch {
        name: "leaky_bn_stored_ce",
        widths: &[2, 8, 8, 1],
        act: Activation::LeakyRelu(0.1),
        bn: true,
        loss: Loss::SoftmaxCrossEntropy,
        stats: StatMode::Stored,
        batch: 1,
    },
    Arch {
        name: "abs_bn_batch_ce",
        widths: &[3, 6, 5, 2],
        act: Activation::Abs,
        bn: true,
        loss: Loss::SoftmaxCrossEntropy,
        stats: StatMode::Batch,
        batch: 8,
    },
    Arch {
        name: "relu_plain_hinge",
        widths: &[4, 7, 3],
        act: Activation::Relu,
        bn: false,
        loss: Loss::Hinge,
        stats: StatMode::Stored,
        batch: 1,
    },
    Arch {
        name: "leaky_bn_batch_squared",
        widths: &[2, 5, 5, 1],
        act: Activation::LeakyRelu(0.2),
        bn: true,
        loss: Loss::Squared,
        stats: StatMode::Batch,
        batch: 8,
    },
];

/// Worst relative error and the number of redraws due to nearby kinks.
fn grad_point(cfg: &CheckConfig, a: usize, p: usize) -> Result<(f64, usize)> {
    let arch = &ARCHS[a];
    let mut r = stream(derive_seed(cfg.seed, 13), (a * 1000 + p) as u64);
    let depth = arch.widths.len() - 1;
    let classes = arch.widths[depth].max(2);
    for attempt in 0..GRAD_ATTEMPTS {
        let bn_layers: Vec<usize> = if arch.bn { (1..depth).collect() } else { vec![] };
        let net = uniform_net(&mut r, arch.widths, arch.act, &bn_layers)?;
        let mut bn = BNState::for_network(&net);
        for &l in &bn_layers {
            let d = net.width(l);
            let mut draw = |lo: f64, hi: f64| Array1::from_shape_fn(d, |_| r.random_range(lo..hi));
            bn.set(l, BnParams { mu: draw(-0.5, 0.5), sigma: draw(0.5, 2.0), gamma: draw(0.5, 2.0), beta: draw(-0.3, 0.3) });
        }
        let x = Array2::from_shape_fn((arch.batch, arch.widths[0]), |_| r.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..arch.batch).map(|_| r.random_range(0..classes)).collect();
        match grad_check(&net, &bn, arch.loss, x.view(), &labels, arch.stats) {
            Ok(g) => return Ok((g.max_rel_error, attempt)),
            Err(Error::NearKink { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoConvergence(format!("no kink-free point for {} after {GRAD_ATTEMPTS} draws", arch.name)))
}

pub(super) fn gradients(cfg: &CheckConfig) -> Result<CheckReport> {
    let mut csv = String::from("architecture,point,max_rel_error,redraws\n");
    let mut parts = vec![];
    let mut worst = 0.0f64;
    for (a, arch) in ARCHS.iter().enumerate() {
        let rows = par::try_map_range(GRAD_POINTS, |p| grad_point(cfg, a, p))?;
        let arch_worst = rows.iter().map(|r| r.0).fold(0.0, f64::max);
        for (p, (e, redraw)) in rows.iter().enumerate() {
            writeln!(csv, "{},{p},{e:e},{redraw}", arch.name).unwrap();
        }
        worst = worst.max(arch_worst);
        parts.push(format!("{} {arch_worst:.1e}", arch.name));
    }
    let summary = format!("{GRAD_POINTS} points per architecture, max relative error {worst:.2e} (tol {GRAD_TOL:e}): {}", parts.join(", "));
    Ok(CheckReport::new("gradients", worst <= GRAD_TOL, summary, csv))
}
