//! Directional experiment checks and the determinism check.

use std::fmt::Write;

use ndarray::Array2;

use super::{batch_bn, shifted_gaussian, uniform_net, CheckConfig, CheckReport};
use crate::concentration::{concentration_curve, concentration_map};
use crate::datasets::{matched_gaussian, star2d, two_class_2d, StarProfile, TwoClassKind, STAR_DEFAULT_ARMS, STAR_DEFAULT_N};
use crate::error::{Error, Result};
use crate::geometry::grid_folded_distance;
use crate::jitter::{boundary_ensemble, HAUSDORFF_SAMPLES};
use crate::network::{Activation, Layer, NetworkSpec};
use crate::par;
use crate::partition::{hausdorff, trace, BBox, Segment};
use crate::rng::{derive_seed, stream};
use crate::training::{initialize, train, InitMode, Loss, TrainConfig};

/// Network with zero weights, used only for its widths and activation.
pub fn template(widths: &[usize], act: Activation) -> Result<NetworkSpec> {
    let layers = widths.windows(2).map(|w| Layer::zero_bias(Array2::zeros((w[1], w[0])))).collect();
    NetworkSpec::new(act, layers, &[])
}

pub const CONCENTRATION_SEEDS: u64 = 10;
pub const CONCENTRATION_WIDTH: usize = 64;
pub const CONCENTRATION_HIDDEN: usize = 11;
pub const CONCENTRATION_RESOLUTION: usize = 128;
pub const CONCENTRATION_EPSILON: f64 = 0.1;

/// Layers whose maps are compared, each normalized by its own maximum.
pub const CONCENTRATION_LAYERS: [usize; 3] = [1, 7, 11];

pub(super) fn concentration(cfg: &CheckConfig) -> Result<CheckReport> {
    let mut widths = vec![2];
    widths.extend([CONCENTRATION_WIDTH; CONCENTRATION_HIDDEN]);
    widths.push(1);
    let t = template(&widths, Activation::LeakyRelu(0.1))?;
    let all: Vec<usize> = (1..=CONCENTRATION_HIDDEN).collect();
    let bbox = BBox::default();
    let mut csv = String::from("seed,init,layer_1,layer_7,layer_11,per_layer_mean,all_layers_pooled\n");
    let mut curves = String::from("seed,bn_data_curve,bn_gaussian_curve\n");
    let (mut init_wins, mut pooled_wins, mut fig5_wins) = (0, 0, 0);
    for s in 0..CONCENTRATION_SEEDS {
        let seed = derive_seed(cfg.seed, 100 + s);
        let star = star2d(STAR_DEFAULT_N, STAR_DEFAULT_ARMS, StarProfile::default(), seed)?;
        let (mut means, mut pooled) = ([0.0; 3], [0.0; 3]);
        let mut bn_net = None;
        for (m, mode) in [InitMode::BnWarmup, InitMode::RandomBias, InitMode::ZeroBias].into_iter().enumerate() {
            let (net, bn) = initialize(&t, mode, star.inputs.view(), seed)?;
            let at_data = |layers: &[usize]| -> Result<f64> {
                let map = concentration_map(&net, &bn, bbox, CONCENTRATION_RESOLUTION, CONCENTRATION_EPSILON, layers)?;
                Ok(star.inputs.rows().into_iter().map(|p| map.normalized_at([p[0], p[1]])).sum::<f64>() / star.len() as f64)
            };
            let per_layer = CONCENTRATION_LAYERS.iter().map(|&l| at_data(&[l])).collect::<Result<Vec<f64>>>()?;
            means[m] = per_layer.iter().sum::<f64>() / per_layer.len() as f64;
            pooled[m] = at_data(&all)?;
            writeln!(csv, "{s},{mode},{:.6},{:.6},{:.6},{:.6},{:.6}", per_layer[0], per_layer[1], per_layer[2], means[m], pooled[m])
                .unwrap();
            if mode == InitMode::BnWarmup {
                bn_net = Some((net, bn));
            }
        }
        let (net, bn) = bn_net.unwrap();
        let gauss = matched_gaussian(star.inputs.view(), STAR_DEFAULT_N, derive_seed(seed, 1))?;
        let data_curve = concentration_curve(&net, &bn, star.inputs.view(), &[CONCENTRATION_EPSILON])?[0].1;
        let gauss_curve = concentration_curve(&net, &bn, gauss.inputs.view(), &[CONCENTRATION_EPSILON])?[0].1;
        init_wins += (means[0] > means[1] && means[0] > means[2]) as usize;
        pooled_wins += (pooled[0] > pooled[1] && pooled[0] > pooled[2]) as usize;
        fig5_wins += (data_curve > gauss_curve) as usize;
        writeln!(curves, "{s},{data_curve:.4},{gauss_curve:.4}").unwrap();
    }
    let n = CONCENTRATION_SEEDS as usize;
    let summary = format!(
        "BN above random-bias and zero-bias at layers {CONCENTRATION_LAYERS:?} in {init_wins}/{n} seeds (all layers pooled: {pooled_wins}/{n}); data above matched Gaussian at eps {CONCENTRATION_EPSILON} in {fig5_wins}/{n} seeds"
    );
    csv.push_str(&curves);
    Ok(CheckReport::new("concentration", init_wins == n && fig5_wins == n, summary, csv))
}

pub const JITTER_SEEDS: u64 = 10;
pub const JITTER_DATASET: usize = 1024;
pub const JITTER_DRAWS: usize = 20;
pub const JITTER_SMALL: usize = 16;
pub const JITTER_LARGE: usize = 256;

/// Mean pairwise Hausdorff distance over the nonempty boundaries, and how many were empty.
fn spread(boundaries: &[Vec<Segment>]) -> (f64, usize) {
    let live: Vec<&Vec<Segment>> = boundaries.iter().filter(|b| !b.is_empty()).collect();
    let pairs: Vec<(usize, usize)> = (0..live.len()).flat_map(|i| (i + 1..live.len()).map(move |j| (i, j))).collect();
    let d = par::map_slice(&pairs, |&(i, j)| hausdorff(live[i], live[j], HAUSDORFF_SAMPLES));
    let mean = if d.is_empty() { f64::NAN } else { d.iter().sum::<f64>() / d.len() as f64 };
    (mean, boundaries.len() - live.len())
}

pub(super) fn jitter(cfg: &CheckConfig) -> Result<CheckReport> {
    let t = template(&[2, 8, 8, 1], Activation::LeakyRelu(0.1))?;
    let bbox = BBox::default();
    let mut csv = String::from("seed,hausdorff_small,hausdorff_large,empty_small,empty_large,skipped\n");
    let mut wins = 0;
    for s in 0..JITTER_SEEDS {
        let seed = derive_seed(cfg.seed, 200 + s);
        let data = two_class_2d(TwoClassKind::Rings, JITTER_DATASET, 0.1, seed)?;
        let (net, bn) = initialize(&t, InitMode::BnWarmup, data.inputs.view(), seed)?;
        let mut res = vec![];
        for b in [JITTER_SMALL, JITTER_LARGE] {
            let ens = boundary_ensemble(&net, &bn, data.inputs.view(), b, JITTER_DRAWS, bbox, derive_seed(seed, b as u64))?;
            let (h, empty) = spread(ens.boundaries.as_deref().unwrap_or(&[]));
            res.push((h, empty, ens.skipped.len()));
        }
        wins += (res[1].0 < res[0].0) as usize;
        writeln!(csv, "{s},{:.6},{:.6},{},{},{}", res[0].0, res[1].0, res[0].1, res[1].1, res[0].2 + res[1].2).unwrap();
    }
    let n = JITTER_SEEDS as usize;
    let summary = format!(
        "mean pairwise Hausdorff at batch {JITTER_LARGE} below batch {JITTER_SMALL} in {wins}/{n} seeds ({JITTER_DRAWS} draws each)"
    );
    Ok(CheckReport::new("jitter", wins == n, summary, csv))
}

pub const SMART_SEEDS: u64 = 10;
pub const SMART_RATES: [f64; 3] = [0.01, 0.03, 0.1];
pub const SMART_EPOCHS: usize = 20;
pub const SMART_BATCH: usize = 32;
pub const SMART_DATASET: usize = 512;

pub(super) fn smart_init(cfg: &CheckConfig) -> Result<CheckReport> {
    let t = template(&[2, 16, 16, 1], Activation::LeakyRelu(0.1))?;
    let arms = [InitMode::BnWarmup, InitMode::ZeroBias];
    let jobs: Vec<(usize, usize, u64)> =
        (0..arms.len()).flat_map(|a| (0..SMART_RATES.len()).flat_map(move |l| (0..SMART_SEEDS).map(move |s| (a, l, s)))).collect();
    let losses = par::try_map_range(jobs.len(), |j| -> Result<f64> {
        let (a, l, s) = jobs[j];
        let seed = derive_seed(cfg.seed, 300 + s);
        let data = two_class_2d(TwoClassKind::Rings, SMART_DATASET, 0.1, seed)?;
        let (mut net, mut bn) = initialize(&t, arms[a], data.inputs.view(), seed)?;
        let mut config = TrainConfig::new(arms[a]);
        config.learning_rate = SMART_RATES[l];
        config.epochs = SMART_EPOCHS;
        config.batch_size = SMART_BATCH;
        config.loss = Loss::SoftmaxCrossEntropy;
        config.seed = seed;
        match train(&mut net, &mut bn, &data, &config, None) {
            Ok(h) => Ok(*h.loss.last().expect("at least one epoch")),
            Err(Error::Diverged { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    })?;
    let mut csv = String::from("init,learning_rate,mean_loss\n");
    let mut best = [f64::INFINITY; 2];
    for a in 0..arms.len() {
        for (l, rate) in SMART_RATES.iter().enumerate() {
            let vals: Vec<f64> = jobs.iter().zip(&losses).filter(|(j, _)| j.0 == a && j.1 == l).map(|(_, &v)| v).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            best[a] = best[a].min(mean);
            writeln!(csv, "{},{rate},{mean:.6}", arms[a]).unwrap();
        }
    }
    let summary = format!(
        "best-of-{} mean epoch-{SMART_EPOCHS} training loss over {SMART_SEEDS} seeds: bn_warmup {:.4}, zero_bias {:.4}",
        SMART_RATES.len(),
        best[0],
        best[1]
    );
    Ok(CheckReport::new("smart_init", best[0] < best[1], summary, csv))
}

/// Outputs of the parallel code paths, rendered as text.
fn parallel_outputs(cfg: &CheckConfig) -> Result<Vec<String>> {
    let mut r = stream(derive_seed(cfg.seed, 400), 0);
    let net = uniform_net(&mut r, &[2, 6, 6, 6, 1], Activation::LeakyRelu(0.1), &[1, 2, 3])?;
    let data = shifted_gaussian(&mut r, 128, 2);
    let bn = batch_bn(&net, &data, None)?;
    let bbox = BBox::default();
    let part = trace(&net, &bn, 4, bbox)?;
    let map = concentration_map(&net, &bn, bbox, 48, 0.1, &[1, 2, 3])?;
    let ens = boundary_ensemble(&net, &bn, data.view(), 16, 6, bbox, 7)?;
    let boundaries: String = ens.boundaries.iter().flatten().flatten().map(|s| format!("{:?}\n", s)).collect();
    let grid = grid_folded_distance(&net, &bn, [0.3, -0.2], 2, 0, bbox, 200)?;
    Ok(vec![part.segments_csv(), part.regions_csv(), map.to_csv(), ens.stats_csv(), boundaries, format!("{grid:?}")])
}

pub(super) fn determinism(cfg: &CheckConfig) -> Result<CheckReport> {
    let was_parallel = par::is_parallel();
    par::set_sequential(true);
    let sequential = parallel_outputs(cfg);
    par::set_sequential(false);
    let parallel = parallel_outputs(cfg);
    par::set_sequential(!was_parallel);
    let again = parallel_outputs(cfg)?;
    let (sequential, parallel) = (sequential?, parallel?);
    let names = ["segments", "regions", "concentration", "jitter_stats", "boundaries", "grid_distance"];
    let mut csv = String::from("output,bytes,sequential_equals_parallel,rerun_equal\n");
    let mut ok = true;
    for i in 0..names.len() {
        let (same, rerun) = (sequential[i] == parallel[i], parallel[i] == again[i]);
        ok &= same && rerun;
        writeln!(csv, "{},{},{same},{rerun}", names[i], sequential[i].len()).unwrap();
    }
    let summary = format!("{} outputs byte-identical sequential vs parallel and on rerun: {ok}", names.len());
    Ok(CheckReport::new("determinism", ok, summary, csv))
}
