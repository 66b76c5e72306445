//! One function per subcommand. Each writes its files into `out` and
//! returns whether the run passed (only `verify` can fail without an error).

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use splinelens::batchnorm::{compute_stats_with, BatchStats, StatsOptions, StatsSource};
use splinelens::checks::{run_check, CheckConfig, CHECKS};
use splinelens::concentration::{concentration_curve, concentration_map, curve_csv, log_spaced};
use splinelens::datasets::{gaussian_inputs, matched_gaussian, star2d, two_class_2d, LabeledDataset, StarProfile, TwoClassKind};
use splinelens::jitter::{
    analytic_predictions, boundary_ensemble, distribution_report, noise_controlled_ensemble, report_csv, stats_ensemble, JitterEnsemble,
    HAUSDORFF_SAMPLES,
};
use splinelens::network::{parse_network, write_network};
use splinelens::partition::{hausdorff, trace, BBox, Segment};
use splinelens::rng::derive_seed;
use splinelens::svg::{boundary_overlay_svg, heatmap_svg, partition_svg, Dot, SvgStyle};
use splinelens::training::{initialize, train, InitMode, Loss, TrainConfig};
use splinelens::{par, Activation, BNState, Error, Layer, NetworkSpec};

use crate::config::{Command, Config};
use crate::CliError;

const DATA_TAG: u64 = 1;
const NET_TAG: u64 = 2;
const DRAW_TAG: u64 = 3;
const GAUSSIAN_TAG: u64 = 4;
const HOLDOUT_TAG: u64 = 5;

pub fn run(cfg: &Config, out: &Path) -> Result<bool, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Input(format!("cannot create {}: {e}", out.display())))?;
    write(out, "config.resolved", &cfg.resolved())?;
    match cfg.command {
        Command::Partition => partition(cfg, out).map(|_| true),
        Command::Verify => verify(cfg, out),
        Command::Concentration => concentration(cfg, out).map(|_| true),
        Command::Jitter => jitter(cfg, out).map(|_| true),
        Command::Train => train_cmd(cfg, out).map(|_| true),
        Command::Stats => stats(cfg, out).map(|_| true),
    }
}

fn write(out: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = out.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn seed(cfg: &Config, tag: u64) -> Result<u64, CliError> {
    Ok(derive_seed(cfg.get("seed")?, tag))
}

pub fn parse_activation(s: &str) -> Result<Activation, CliError> {
    match s.split_once(':') {
        None if s == "relu" => Ok(Activation::Relu),
        None if s == "abs" => Ok(Activation::Abs),
        Some(("leaky_relu" | "leaky", a)) => {
            let a: f64 = a.parse().map_err(|e| CliError::Input(format!("bad leaky slope {a:?}: {e}")))?;
            Ok(Activation::leaky(a)?)
        }
        _ => Err(CliError::Input(format!("unknown activation {s:?} (relu, abs, leaky_relu:ALPHA)"))),
    }
}

fn bbox(cfg: &Config) -> Result<BBox, CliError> {
    let v: Vec<f64> = cfg.list("box")?;
    let [x0, x1, y0, y1] = v[..] else {
        return Err(CliError::Input(format!("box needs xmin,xmax,ymin,ymax, got {} values", v.len())));
    };
    Ok(BBox::new([x0, y0], [x1, y1])?)
}

fn style(cfg: &Config) -> Result<SvgStyle, CliError> {
    Ok(SvgStyle { size: cfg.get("svg.size")?, ..SvgStyle::default() })
}

fn dataset(cfg: &Config) -> Result<LabeledDataset, CliError> {
    if let Some(path) = cfg.path("dataset.file") {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        return Ok(LabeledDataset::from_csv(&text)?);
    }
    let s = seed(cfg, DATA_TAG)?;
    let n: usize = cfg.get("dataset.n")?;
    let kind = cfg.raw("dataset.kind");
    Ok(match kind {
        "star" => {
            let profile = StarProfile { radial_noise: cfg.get("dataset.noise")?, ..StarProfile::default() };
            star2d(n, cfg.get("dataset.arms")?, profile, s)?
        }
        "gaussian" => {
            let mean = Array1::from(cfg.list::<f64>("dataset.mean")?);
            let var = Array1::from(cfg.list::<f64>("dataset.var")?);
            gaussian_inputs(n, mean.view(), var.view(), s)?
        }
        other => two_class_2d(other.parse::<TwoClassKind>()?, n, cfg.get("dataset.noise")?, s)?,
    })
}

fn template(widths: &[usize], act: Activation) -> Result<NetworkSpec, CliError> {
    let layers = widths.windows(2).map(|w| Layer::zero_bias(Array2::zeros((w[1], w[0])))).collect();
    Ok(NetworkSpec::new(act, layers, &[])?)
}

fn generated_template(cfg: &Config, input_dim: usize) -> Result<NetworkSpec, CliError> {
    let depth: usize = cfg.get("network.depth")?;
    let width: usize = cfg.get("network.width")?;
    if depth > 0 && width == 0 {
        return Err(CliError::Input("network.width must be positive".into()));
    }
    let mut widths = vec![input_dim];
    widths.extend(std::iter::repeat_n(width, depth));
    widths.push(1);
    template(&widths, parse_activation(cfg.raw("network.activation"))?)
}

fn load_network(cfg: &Config) -> Result<Option<(NetworkSpec, BNState)>, CliError> {
    let Some(path) = cfg.path("network.file") else { return Ok(None) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(Some(parse_network(&text)?))
}

/// The configured network: loaded from `network.file` as stored, or freshly
/// initialized with `mode`.
fn network(cfg: &Config, mode: InitMode, data: &LabeledDataset) -> Result<(NetworkSpec, BNState), CliError> {
    if let Some(loaded) = load_network(cfg)? {
        return Ok(loaded);
    }
    Ok(initialize(&generated_template(cfg, data.dim())?, mode, data.inputs.view(), seed(cfg, NET_TAG)?)?)
}

/// `net` with BN on every hidden layer, statistics from `data`, and
/// `gamma`/`beta` kept from `bn` where it had them.
fn with_data_bn(net: &NetworkSpec, bn: &BNState, data: &LabeledDataset) -> Result<(NetworkSpec, BNState), CliError> {
    let layers: Vec<usize> = (1..net.depth()).collect();
    let net = net.with_bn_layers(&layers)?;
    let mut template = BNState::for_network(&net);
    for &l in &layers {
        if let (Some(old), Some(new)) = (bn.get(l), template.get_mut(l)) {
            new.gamma.assign(&old.gamma);
            new.beta.assign(&old.beta);
        }
    }
    let stats = full_stats(&net, &template, data)?;
    let bn = stats.to_bn_state(&template);
    Ok((net, bn))
}

fn full_stats(net: &NetworkSpec, bn: &BNState, data: &LabeledDataset) -> Result<BatchStats, CliError> {
    Ok(compute_stats_with(net, bn, data.inputs.view(), StatsOptions::default(), StatsSource::FullSet { size: data.len() })?)
}

fn require_bn(net: &NetworkSpec) -> Result<(), CliError> {
    if net.bn_layers().is_empty() {
        return Err(Error::Precondition("this command needs a network with batch normalization".into()).into());
    }
    Ok(())
}

fn dots(data: &LabeledDataset) -> Vec<Dot> {
    if data.dim() != 2 {
        return vec![];
    }
    Dot::from_rows(data.inputs.view(), data.labels.as_deref())
}

fn partition(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let data = dataset(cfg)?;
    let bbox = bbox(cfg)?;
    let style = style(cfg)?;
    let plain_init: InitMode = cfg.get("partition.plain_init")?;
    if plain_init == InitMode::BnWarmup {
        return Err(CliError::Input("partition.plain_init must be zero_bias or random_bias".into()));
    }
    let (plain, with_bn) = match load_network(cfg)? {
        Some((net, bn)) => {
            let plain = net.with_bn_layers(&[])?;
            let plain_bn = BNState::for_network(&plain);
            ((plain, plain_bn), with_data_bn(&net, &bn, &data)?)
        }
        None => {
            let t = generated_template(cfg, data.dim())?;
            let s = seed(cfg, NET_TAG)?;
            (initialize(&t, plain_init, data.inputs.view(), s)?, initialize(&t, InitMode::BnWarmup, data.inputs.view(), s)?)
        }
    };
    let hidden = plain.0.depth() - 1;
    let mut variants = vec![("nobn", plain)];
    if hidden > 0 {
        variants.push(("bn", with_bn));
    }
    let dots = dots(&data);
    let mut summary = String::from("variant,layer,regions,segments,slivers_merged\n");
    for (name, (net, bn)) in &variants {
        for j in (1..=hidden).chain((hidden == 0).then_some(0)) {
            let p = trace(net, bn, j, bbox)?;
            write(out, &format!("partition_{name}_layer{j}.svg"), &partition_svg(&p, &dots, style))?;
            writeln!(summary, "{name},{j},{},{},{}", p.regions.len(), p.segments.len(), p.slivers_merged).unwrap();
            if j == hidden {
                write(out, &format!("regions_{name}.csv"), &p.regions_csv())?;
                write(out, &format!("segments_{name}.csv"), &p.segments_csv())?;
            }
        }
        write(out, &format!("network_{name}.net"), &write_network(net, bn))?;
    }
    write(out, "partition_summary.csv", &summary)?;
    print!("{summary}");
    Ok(())
}

fn verify(cfg: &Config, out: &Path) -> Result<bool, CliError> {
    let only = cfg.raw("verify.only");
    let names: Vec<&str> = if only == "all" { CHECKS.to_vec() } else { only.split(',').map(str::trim).collect() };
    if let Some(bad) = names.iter().find(|n| !CHECKS.contains(n)) {
        return Err(CliError::Input(format!("unknown check {bad:?}; known: {}", CHECKS.join(", "))));
    }
    let config = CheckConfig { seed: cfg.get("seed")?, mu_offset: cfg.get("verify.mu_offset")? };
    let mut summary = String::from("check,passed,summary\n");
    let mut findings = String::new();
    let mut all = true;
    for name in names {
        let report = run_check(name, &config)?;
        println!("{}", report.line());
        all &= report.passed;
        write(out, &format!("verify_{name}.csv"), &report.csv)?;
        writeln!(summary, "{name},{},\"{}\"", report.passed, report.summary.replace('"', "'")).unwrap();
        for f in &report.findings {
            writeln!(findings, "{name}: {f}").unwrap();
        }
    }
    write(out, "verify_summary.csv", &summary)?;
    write(out, "findings.txt", &findings)?;
    Ok(all)
}

fn concentration(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let data = dataset(cfg)?;
    let bbox = bbox(cfg)?;
    let style = style(cfg)?;
    let modes: Vec<InitMode> = cfg.list("concentration.modes")?;
    let resolution: usize = cfg.get("concentration.resolution")?;
    let epsilon: f64 = cfg.get("concentration.epsilon")?;
    let (lo, hi, count): (f64, f64, usize) =
        (cfg.get("concentration.eps_min")?, cfg.get("concentration.eps_max")?, cfg.get("concentration.eps_count")?);
    if !(lo > 0.0 && lo <= hi) {
        return Err(CliError::Input(format!("need 0 < eps_min <= eps_max, got {lo} and {hi}")));
    }
    let epsilons = log_spaced(lo, hi, count);
    let gaussian = matched_gaussian(data.inputs.view(), data.len(), seed(cfg, GAUSSIAN_TAG)?)?;
    let dots = dots(&data);
    let mut summary = String::from("mode,max_count,mean_normalized_at_data,curve_data_at_eps_min,curve_gaussian_at_eps_min\n");
    for mode in modes {
        let (net, bn) = network(cfg, mode, &data)?;
        let layers: Vec<usize> = match cfg.raw("concentration.layers") {
            "all" => (1..net.depth().max(2)).collect(),
            _ => cfg.list("concentration.layers")?,
        };
        let map = concentration_map(&net, &bn, bbox, resolution, epsilon, &layers)?;
        write(out, &format!("concentration_{mode}.csv"), &map.to_csv())?;
        let values = map.normalized().unwrap_or_else(|| vec![0.0; map.counts.len()]);
        write(out, &format!("concentration_{mode}.svg"), &heatmap_svg(bbox, resolution, resolution, &values, &dots, style))?;
        let at_data = data.inputs.rows().into_iter().map(|r| map.normalized_at([r[0], r[1]])).sum::<f64>() / data.len() as f64;
        let on_data = concentration_curve(&net, &bn, data.inputs.view(), &epsilons)?;
        let off_data = concentration_curve(&net, &bn, gaussian.inputs.view(), &epsilons)?;
        write(out, &format!("curve_{mode}_data.csv"), &curve_csv(&on_data))?;
        write(out, &format!("curve_{mode}_gaussian.csv"), &curve_csv(&off_data))?;
        let first = |c: &[(f64, f64)]| c.first().map_or(f64::NAN, |p| p.1);
        writeln!(summary, "{mode},{},{at_data:.17e},{:.17e},{:.17e}", map.max, first(&on_data), first(&off_data)).unwrap();
    }
    write(out, "concentration_summary.csv", &summary)?;
    print!("{summary}");
    Ok(())
}

/// Mean pairwise Hausdorff distance over the non-empty boundaries, and how many were empty.
fn spread(boundaries: &[Vec<Segment>]) -> (Option<f64>, usize) {
    let live: Vec<&Vec<Segment>> = boundaries.iter().filter(|b| !b.is_empty()).collect();
    let pairs: Vec<(usize, usize)> = (0..live.len()).flat_map(|i| (i + 1..live.len()).map(move |j| (i, j))).collect();
    let d = par::map_slice(&pairs, |&(i, j)| hausdorff(live[i], live[j], HAUSDORFF_SAMPLES));
    let mean = (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64);
    (mean, boundaries.len() - live.len())
}

fn write_distribution(out: &Path, name: &str, ens: &JitterEnsemble, reference: &BatchStats) -> Result<(), CliError> {
    if ens.realizations.len() < 2 {
        return Ok(());
    }
    let analytic = analytic_predictions(reference, ens.batch_size)?;
    write(out, name, &report_csv(&distribution_report(ens, &analytic)?))
}

fn jitter(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let data = dataset(cfg)?;
    let bbox = bbox(cfg)?;
    let style = style(cfg)?;
    let (net, bn) = network(cfg, cfg.get("init.mode")?, &data)?;
    require_bn(&net)?;
    let reference = full_stats(&net, &bn, &data)?;
    let draws: usize = cfg.get("jitter.draws")?;
    let virtual_size: usize = cfg.get("jitter.virtual")?;
    let dots = dots(&data);
    let mut summary = String::from("batch_size,draws,kept,empty,mean_pairwise_hausdorff\n");
    for b in cfg.list::<usize>("jitter.batch_sizes")? {
        let ens = boundary_ensemble(&net, &bn, data.inputs.view(), b, draws, bbox, derive_seed(seed(cfg, DRAW_TAG)?, b as u64))?;
        let boundaries = ens.boundaries.as_deref().unwrap_or_default();
        write(out, &format!("jitter_b{b}.svg"), &boundary_overlay_svg(bbox, boundaries, &dots, style))?;
        write(out, &format!("jitter_b{b}_stats.csv"), &ens.stats_csv())?;
        write_distribution(out, &format!("jitter_b{b}_distribution.csv"), &ens, &reference)?;
        if virtual_size > 0 {
            let nc = noise_controlled_ensemble(&ens, virtual_size, derive_seed(seed(cfg, DRAW_TAG)?, (b + virtual_size) as u64))?;
            write(out, &format!("jitter_b{b}_v{virtual_size}_stats.csv"), &nc.stats_csv())?;
            // the prediction being matched is the one of the virtual size
            let target = JitterEnsemble { batch_size: virtual_size, ..nc };
            write_distribution(out, &format!("jitter_b{b}_v{virtual_size}_distribution.csv"), &target, &reference)?;
        }
        let (mean, empty) = spread(boundaries);
        let mean = mean.map_or(String::new(), |m| format!("{m:.17e}"));
        writeln!(summary, "{b},{draws},{},{empty},{mean}", ens.realizations.len()).unwrap();
    }
    write(out, "jitter_summary.csv", &summary)?;
    print!("{summary}");
    Ok(())
}

fn train_cmd(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let data = dataset(cfg)?;
    let mode: InitMode = cfg.get("init.mode")?;
    let (mut net, mut bn) = network(cfg, mode, &data)?;
    let frozen = match cfg.raw("train.frozen") {
        "auto" => mode == InitMode::BnWarmup,
        _ => cfg.get("train.frozen")?,
    };
    let config = TrainConfig {
        init_mode: mode,
        learning_rate: cfg.get("train.learning_rate")?,
        epochs: cfg.get("train.epochs")?,
        batch_size: cfg.get("train.batch_size")?,
        loss: cfg.get::<Loss>("train.loss")?,
        seed: seed(cfg, DRAW_TAG)?,
        bn_frozen: frozen,
        snapshot_every: cfg.get("train.snapshot_every")?,
    };
    let holdout_n: usize = cfg.get("train.holdout_n")?;
    let holdout = if holdout_n == 0 {
        None
    } else if cfg.path("dataset.file").is_some() {
        return Err(CliError::Input("train.holdout_n needs a generated dataset".into()));
    } else {
        let kind: TwoClassKind = cfg.get("dataset.kind")?;
        Some(two_class_2d(kind, holdout_n, cfg.get("dataset.noise")?, seed(cfg, HOLDOUT_TAG)?)?)
    };
    write(out, "init.net", &write_network(&net, &bn))?;
    let history = train(&mut net, &mut bn, &data, &config, holdout.as_ref())?;
    write(out, "history.csv", &history.to_csv())?;
    for s in &history.snapshots {
        write(out, &format!("snapshot_{:04}.net", s.epoch), &write_network(&s.net, &s.bn))?;
    }
    if !history.is_empty() {
        write(out, "final.net", &write_network(&net, &bn))?;
        println!(
            "epochs {} final loss {:.6e} accuracy {:.4}",
            history.len(),
            history.loss.last().unwrap(),
            history.accuracy.last().unwrap()
        );
    } else {
        println!("epochs 0; wrote the initialization only");
    }
    Ok(())
}

fn stats(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let data = dataset(cfg)?;
    let (net, bn) = network(cfg, cfg.get("init.mode")?, &data)?;
    require_bn(&net)?;
    let reference = full_stats(&net, &bn, &data)?;
    let mut full = String::from("layer,unit,mu,sigma,diag_var,fourth_moment\n");
    for l in reference.layers() {
        let s = reference.get(l).unwrap();
        for k in 0..s.mu.len() {
            writeln!(full, "{l},{k},{:.17e},{:.17e},{:.17e},{:.17e}", s.mu[k], s.sigma[k], s.diag_var[k], s.fourth_moment[k]).unwrap();
        }
    }
    write(out, "stats_full.csv", &full)?;
    let b: usize = cfg.get("stats.batch_size")?;
    let ens = stats_ensemble(&net, &bn, data.inputs.view(), b, cfg.get("stats.draws")?, seed(cfg, DRAW_TAG)?)?;
    write(out, "stats_draws.csv", &ens.stats_csv())?;
    write_distribution(out, "distribution.csv", &ens, &reference)?;
    let virtual_size: usize = cfg.get("stats.virtual")?;
    if virtual_size > 0 {
        let nc = noise_controlled_ensemble(&ens, virtual_size, derive_seed(seed(cfg, DRAW_TAG)?, virtual_size as u64))?;
        let target = JitterEnsemble { batch_size: virtual_size, ..nc };
        write_distribution(out, &format!("distribution_v{virtual_size}.csv"), &target, &reference)?;
    }
    println!("{} draws kept, {} skipped", ens.realizations.len(), ens.skipped.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_strings() {
        assert_eq!(parse_activation("relu").unwrap(), Activation::Relu);
        assert_eq!(parse_activation("leaky_relu:0.2").unwrap(), Activation::LeakyRelu(0.2));
        assert!(parse_activation("leaky_relu:-1").is_err());
        assert!(parse_activation("tanh").is_err());
    }

    #[test]
    fn box_needs_four_values() {
        let mut c = Config::new(Command::Partition);
        c.set("box=0,1,0").unwrap();
        assert!(matches!(bbox(&c), Err(CliError::Input(_))));
        c.set("box=1,0,0,1").unwrap();
        assert!(bbox(&c).is_err());
    }

    #[test]
    fn file_network_gets_data_statistics() {
        let c = Config::new(Command::Partition);
        let data = dataset(&c).unwrap();
        let (net, _) = network(&c, InitMode::RandomBias, &data).unwrap();
        let (bn_net, bn) = with_data_bn(&net, &BNState::for_network(&net), &data).unwrap();
        assert_eq!(bn_net.bn_layers(), (1..net.depth()).collect::<Vec<_>>());
        let mean = data.inputs.mean_axis(ndarray::Axis(0)).unwrap();
        let mu = bn.get(1).unwrap().mu[0];
        assert!((mu - net.unit_weights(1, 0).dot(&mean)).abs() < 1e-12);
    }
}
