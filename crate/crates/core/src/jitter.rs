//! Mini-batch variability of BN statistics and of the decision boundary.

use std::fmt::Write;

use log::warn;
use ndarray::ArrayView2;

use crate::batchnorm::{
    compute_stats_with, empirical_variance, mean_var, minibatch, noise_controlled, variance_from_moments, BatchStats, StatsOptions,
    StatsSource, VariancePrediction,
};
use crate::error::{Error, Result};
use crate::network::{BNState, NetworkSpec};
use crate::par;
use crate::partition::{hausdorff, trace, BBox, Segment};
use crate::rng::derive_seed;

/// Arc-length samples per boundary when comparing two boundaries.
pub const HAUSDORFF_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct JitterEnsemble {
    /// Statistics of each kept draw.
    pub realizations: Vec<BatchStats>,
    /// Decision boundary of each kept draw, when traced.
    pub boundaries: Option<Vec<Vec<Segment>>>,
    /// Draw indices that were dropped because their statistics were degenerate.
    pub skipped: Vec<usize>,
    pub seed: u64,
    pub batch_size: usize,
    pub n_draws: usize,
}

impl JitterEnsemble {
    /// `draw_id,layer,unit,mu,sigma`.
    pub fn stats_csv(&self) -> String {
        let mut out = String::from("draw_id,layer,unit,mu,sigma\n");
        for s in &self.realizations {
            let id = match s.source {
                StatsSource::MiniBatch { id, .. } => id,
                StatsSource::FullSet { .. } => 0,
            };
            for l in s.layers() {
                let st = s.get(l).unwrap();
                for k in 0..st.mu.len() {
                    writeln!(out, "{id},{l},{k},{:.17e},{:.17e}", st.mu[k], st.sigma[k]).unwrap();
                }
            }
        }
        out
    }

    /// Mean Hausdorff distance over all pairs of boundaries.
    pub fn mean_pairwise_hausdorff(&self) -> Result<f64> {
        let b = self.boundaries.as_ref().ok_or_else(|| Error::Precondition("ensemble has no traced boundaries".into()))?;
        if b.len() < 2 {
            return Err(Error::Precondition("need at least two boundaries".into()));
        }
        let pairs: Vec<(usize, usize)> = (0..b.len()).flat_map(|i| (i + 1..b.len()).map(move |j| (i, j))).collect();
        let d = par::map_slice(&pairs, |&(i, j)| hausdorff(&b[i], &b[j], HAUSDORFF_SAMPLES));
        Ok(d.iter().sum::<f64>() / d.len() as f64)
    }
}

fn draw_stats(
    net: &NetworkSpec,
    template: &BNState,
    dataset: ArrayView2<f64>,
    batch_size: usize,
    seed: u64,
    draw: usize,
) -> Result<Option<BatchStats>> {
    let batch = minibatch(dataset, batch_size, seed, draw as u64)?;
    match compute_stats_with(net, template, batch.view(), StatsOptions::default(), StatsSource::MiniBatch { id: draw, size: batch_size }) {
        Ok(s) => Ok(Some(s)),
        Err(e @ Error::DegenerateStatistic { .. }) => {
            warn!("draw {draw} skipped: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Statistics and decision boundary of `n_draws` resampled mini-batches.
///
/// `gamma`/`beta` come from `template`. Draws whose statistics are degenerate are skipped.
#[allow(clippy::too_many_arguments)]
pub fn boundary_ensemble(
    net: &NetworkSpec,
    template: &BNState,
    dataset: ArrayView2<f64>,
    batch_size: usize,
    n_draws: usize,
    bbox: BBox,
    seed: u64,
) -> Result<JitterEnsemble> {
    if net.input_dim() != 2 || net.output_dim() != 1 {
        return Err(Error::Precondition("boundary ensembles need a 2-D input and a scalar head".into()));
    }
    check_draws(dataset, batch_size, n_draws)?;
    let results = par::try_map_range(n_draws, |i| -> Result<Option<(BatchStats, Vec<Segment>)>> {
        let Some(stats) = draw_stats(net, template, dataset, batch_size, seed, i)? else {
            return Ok(None);
        };
        let bn = stats.to_bn_state(template);
        let boundary = trace(net, &bn, net.depth(), bbox)?.decision_boundary(net)?;
        Ok(Some((stats, boundary)))
    })?;
    let mut ens = JitterEnsemble { realizations: vec![], boundaries: Some(vec![]), skipped: vec![], seed, batch_size, n_draws };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some((s, b)) => {
                ens.realizations.push(s);
                ens.boundaries.as_mut().unwrap().push(b);
            }
            None => ens.skipped.push(i),
        }
    }
    Ok(ens)
}

/// Statistics-only ensemble.
pub fn stats_ensemble(
    net: &NetworkSpec,
    template: &BNState,
    dataset: ArrayView2<f64>,
    batch_size: usize,
    n_draws: usize,
    seed: u64,
) -> Result<JitterEnsemble> {
    check_draws(dataset, batch_size, n_draws)?;
    let results = par::try_map_range(n_draws, |i| draw_stats(net, template, dataset, batch_size, seed, i))?;
    let mut ens = JitterEnsemble { realizations: vec![], boundaries: None, skipped: vec![], seed, batch_size, n_draws };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(s) => ens.realizations.push(s),
            None => ens.skipped.push(i),
        }
    }
    Ok(ens)
}

fn check_draws(dataset: ArrayView2<f64>, batch_size: usize, n_draws: usize) -> Result<()> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    if batch_size < 2 || batch_size > dataset.nrows() {
        return Err(Error::InvalidArgument(format!("batch size must be in 2..={}, got {batch_size}", dataset.nrows())));
    }
    Ok(())
}

/// Apply [`noise_controlled`] to every realization, draw `i` using sub-seed `i`.
pub fn noise_controlled_ensemble(ens: &JitterEnsemble, virtual_size: usize, seed: u64) -> Result<JitterEnsemble> {
    let realizations = par::try_map_range(ens.realizations.len(), |i| {
        noise_controlled(&ens.realizations[i], ens.batch_size, virtual_size, derive_seed(seed, i as u64))
    })?;
    Ok(JitterEnsemble { realizations, boundaries: None, ..ens.clone() })
}

/// Analytic variances per BN unit, from moments of a reference set (usually the full dataset).
pub fn analytic_predictions(reference: &BatchStats, batch_size: usize) -> Result<Vec<(usize, usize, VariancePrediction)>> {
    let mut out = Vec::new();
    for l in reference.layers() {
        let s = reference.get(l).unwrap();
        for k in 0..s.mu.len() {
            out.push((l, k, variance_from_moments(s.diag_var[k], s.fourth_moment[k], batch_size)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRow {
    pub layer: usize,
    pub unit: usize,
    pub mean_mu: f64,
    pub var_mu: f64,
    pub mean_sigma: f64,
    /// Variance of the population `sigma^2` stored by BN.
    pub var_sigma2: f64,
    /// Variance of the Bessel-corrected `sigma^2 |B| / (|B| - 1)`.
    pub var_sigma2_unbiased: f64,
    pub analytic_var_mu: f64,
    pub analytic_var_sigma2: f64,
    /// `(empirical - analytic) / analytic` for `var(mu)`.
    pub rel_gap_mu: f64,
    /// Same for the Bessel-corrected `var(sigma^2)`.
    pub rel_gap_sigma2: f64,
}

/// Empirical against analytic statistics for every unit with a prediction.
pub fn distribution_report(ens: &JitterEnsemble, analytic: &[(usize, usize, VariancePrediction)]) -> Result<Vec<DistributionRow>> {
    let draws = &ens.realizations;
    if draws.len() < 2 {
        return Err(Error::Precondition(format!("need at least two realizations, have {}", draws.len())));
    }
    let bessel = {
        let n = ens.batch_size as f64;
        (n / (n - 1.0)).powi(2)
    };
    let rel = |e: f64, a: f64| {
        if a != 0.0 {
            (e - a) / a
        } else if e == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    analytic
        .iter()
        .map(|&(l, k, ref p)| {
            if draws[0].get(l).is_none_or(|s| k >= s.mu.len()) {
                return Err(Error::InvalidArgument(format!("ensemble has no unit ({l}, {k})")));
            }
            let (var_mu, var_s2) = empirical_variance(draws, l, k);
            let (mean_mu, _) = mean_var(draws.iter().map(|d| d.get(l).unwrap().mu[k]));
            let (mean_sigma, _) = mean_var(draws.iter().map(|d| d.get(l).unwrap().sigma[k]));
            Ok(DistributionRow {
                layer: l,
                unit: k,
                mean_mu,
                var_mu,
                mean_sigma,
                var_sigma2: var_s2,
                var_sigma2_unbiased: var_s2 * bessel,
                analytic_var_mu: p.var_mu,
                analytic_var_sigma2: p.var_sigma2,
                rel_gap_mu: rel(var_mu, p.var_mu),
                rel_gap_sigma2: rel(var_s2 * bessel, p.var_sigma2),
            })
        })
        .collect()
}

pub fn report_csv(rows: &[DistributionRow]) -> String {
    let mut out = String::from(
        "layer,unit,mean_mu,var_mu,analytic_var_mu,rel_gap_mu,mean_sigma,var_sigma2,var_sigma2_unbiased,analytic_var_sigma2,rel_gap_sigma2\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.layer,
            r.unit,
            r.mean_mu,
            r.var_mu,
            r.analytic_var_mu,
            r.rel_gap_mu,
            r.mean_sigma,
            r.var_sigma2,
            r.var_sigma2_unbiased,
            r.analytic_var_sigma2,
            r.rel_gap_sigma2
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batchnorm::compute_stats;
    use crate::datasets::{gaussian_inputs, two_class_2d, TwoClassKind};
    use crate::network::{forward, Activation, Layer};
    use crate::testutil::random_net;
    use ndarray::{array, Array2};

    fn setup(seed: u64) -> (NetworkSpec, BNState, Array2<f64>) {
        let (net, bn) = random_net(seed, &[2, 6, 6, 1], Activation::LeakyRelu(0.1), true);
        let data = two_class_2d(TwoClassKind::Rings, 256, 0.1, seed).unwrap().inputs;
        (net, bn, data)
    }

    #[test]
    fn exhaustive_batches_give_one_boundary() {
        let (net, bn, data) = setup(1);
        let e = boundary_ensemble(&net, &bn, data.view(), 256, 4, BBox::default(), 3).unwrap();
        let b = e.boundaries.as_ref().unwrap();
        assert!(b.windows(2).all(|w| w[0] == w[1]));
        assert!(e.mean_pairwise_hausdorff().unwrap() < 1e-12);
    }

    #[test]
    fn single_draw_matches_direct_trace() {
        let (net, bn, data) = setup(2);
        let e = boundary_ensemble(&net, &bn, data.view(), 32, 1, BBox::default(), 5).unwrap();
        let batch = minibatch(data.view(), 32, 5, 0).unwrap();
        let direct =
            compute_stats_with(&net, &bn, batch.view(), StatsOptions::default(), StatsSource::MiniBatch { id: 0, size: 32 }).unwrap();
        let bn2 = direct.to_bn_state(&bn);
        let boundary = trace(&net, &bn2, 3, BBox::default()).unwrap().decision_boundary(&net).unwrap();
        assert_eq!(e.boundaries.unwrap()[0], boundary);
        for s in &boundary {
            for t in [0.0, 0.5, 1.0] {
                let q = s.point_at(t);
                assert!(forward(&net, &bn2, array![q[0], q[1]].view()).unwrap().output()[0].abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn ensembles_are_deterministic_and_skip_degenerate_draws() {
        let (net, bn, data) = setup(3);
        let a = boundary_ensemble(&net, &bn, data.view(), 16, 6, BBox::default(), 9).unwrap();
        par::set_sequential(true);
        let b = boundary_ensemble(&net, &bn, data.view(), 16, 6, BBox::default(), 9).unwrap();
        par::set_sequential(false);
        assert_eq!(a, b);
        assert_eq!(a.stats_csv(), b.stats_csv());
        let mut dup = data.clone();
        for r in 0..200 {
            dup.row_mut(r).assign(&array![0.5, 0.5]);
        }
        let c = stats_ensemble(&net, &bn, dup.view(), 2, 50, 1).unwrap();
        assert!(!c.skipped.is_empty());
        assert_eq!(c.skipped.len() + c.realizations.len(), 50);
    }

    #[test]
    fn report_against_gaussian_inputs() {
        let net = NetworkSpec::new(Activation::Relu, vec![Layer::zero_bias(Array2::eye(3)), Layer::zero_bias(Array2::ones((1, 3)))], &[1])
            .unwrap();
        let data = gaussian_inputs(20_000, array![1.0, 0.0, -1.0].view(), array![1.0, 3.0, 0.1].view(), 4).unwrap().inputs;
        let full = compute_stats(&net, data.view(), StatsOptions::default()).unwrap();
        let bn = full.bn_state();
        let ens = stats_ensemble(&net, &bn, data.view(), 64, 4000, 8).unwrap();
        let rows = distribution_report(&ens, &analytic_predictions(&full, 64).unwrap()).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.rel_gap_mu.abs() < 0.1, "{r:?}");
            assert!(r.rel_gap_sigma2.abs() < 0.15, "{r:?}");
        }
        assert_eq!(report_csv(&rows).lines().count(), 4);
        let one = JitterEnsemble { realizations: ens.realizations[..1].to_vec(), ..ens.clone() };
        assert!(distribution_report(&one, &[]).is_err());
    }

    #[test]
    fn zero_variance_unit_has_no_mu_jitter() {
        let net = NetworkSpec::new(
            Activation::Relu,
            vec![Layer::zero_bias(array![[1.0, 0.0], [0.0, 1.0]]), Layer::zero_bias(Array2::ones((1, 2)))],
            &[1],
        )
        .unwrap();
        let mut data = gaussian_inputs(500, array![0.0, 2.0].view(), array![1.0, 0.0].view(), 1).unwrap().inputs;
        data.column_mut(1).fill(2.0);
        let full = compute_stats_with(
            &net,
            &BNState::for_network(&net),
            data.view(),
            StatsOptions { sigma_floor: 1e-9 },
            StatsSource::FullSet { size: 500 },
        )
        .unwrap();
        let bn = full.bn_state();
        let batches: Vec<BatchStats> = (0..100)
            .map(|i| {
                let b = minibatch(data.view(), 16, 2, i).unwrap();
                compute_stats_with(
                    &net,
                    &bn,
                    b.view(),
                    StatsOptions { sigma_floor: 1e-9 },
                    StatsSource::MiniBatch { id: i as usize, size: 16 },
                )
                .unwrap()
            })
            .collect();
        let ens = JitterEnsemble { realizations: batches, boundaries: None, skipped: vec![], seed: 2, batch_size: 16, n_draws: 100 };
        let rows = distribution_report(&ens, &analytic_predictions(&full, 16).unwrap()).unwrap();
        assert!(rows[1].var_mu <= 1e-12);
        assert_eq!(rows[1].rel_gap_mu, 0.0);
    }
}
