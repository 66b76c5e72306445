//! Density of partition boundaries around points.
//!
//! A unit's facet near `x` is measured inside `x`'s own region: the distance
//! from `x` to the zero set of the unit's affine pre-activation there.
//! Facets that only come close to `x` from neighboring regions are not seen.

use std::fmt::Write;

use log::debug;
use ndarray::{array, Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::network::{activate_affine, preactivation_affine, BNState, NetworkSpec, RegionAffine, ZERO_NORMAL};
use crate::par;
use crate::partition::BBox;

/// Local facet distance of every unit in every layer, `out[j - 1][k]`.
///
/// Units that are constant on `x`'s region get `f64::INFINITY`.
pub fn unit_distances(net: &NetworkSpec, bn: &BNState, x: ArrayView1<f64>) -> Result<Vec<Array1<f64>>> {
    if x.len() != net.input_dim() {
        return Err(Error::Dimension(format!("input has {} entries, network expects {}", x.len(), net.input_dim())));
    }
    let act = net.activation();
    let mut map = RegionAffine::identity(net.input_dim());
    let mut out = Vec::with_capacity(net.depth());
    let mut degenerate = 0usize;
    for j in 1..=net.depth() {
        let (m, v) = preactivation_affine(net, bn, j, &map)?;
        let h = m.dot(&x) + &v;
        let d: Array1<f64> = m
            .rows()
            .into_iter()
            .zip(&h)
            .map(|(row, &hk)| {
                let n = row.dot(&row).sqrt();
                if n < ZERO_NORMAL {
                    degenerate += 1;
                    f64::INFINITY
                } else {
                    hk.abs() / n
                }
            })
            .collect();
        out.push(d);
        if j < net.depth() {
            let slopes = h.mapv(|u| act.slope(u));
            map = activate_affine(m, v, &slopes, j);
        }
    }
    if degenerate > 0 {
        debug!("{degenerate} units constant on the region of the query point, not counted");
    }
    Ok(out)
}

fn check_layers(net: &NetworkSpec, layers: &[usize]) -> Result<()> {
    match layers.iter().find(|&&l| l == 0 || l > net.depth()) {
        Some(l) => Err(Error::InvalidArgument(format!("layer {l} outside 1..={}", net.depth()))),
        None => Ok(()),
    }
}

fn count_within(dist: &[Array1<f64>], layers: &[usize], eps: f64) -> usize {
    layers.iter().map(|&l| dist[l - 1].iter().filter(|&&d| d <= eps).count()).sum()
}

/// Number of units of `layers` whose local facet passes within `epsilon` of `x`.
pub fn ball_count(net: &NetworkSpec, bn: &BNState, x: ArrayView1<f64>, epsilon: f64, layers: &[usize]) -> Result<usize> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    check_layers(net, layers)?;
    bn.validate(net)?;
    Ok(count_within(&unit_distances(net, bn, x)?, layers, epsilon))
}

/// Ball counts at the centers of a `resolution x resolution` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    pub bbox: BBox,
    pub resolution: usize,
    pub epsilon: f64,
    /// Row-major, row 0 at the bottom of the box.
    pub counts: Vec<usize>,
    pub max: usize,
}

impl ConcentrationMap {
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let r = self.resolution as f64;
        [self.bbox.min[0] + (col as f64 + 0.5) / r * self.bbox.width(), self.bbox.min[1] + (row as f64 + 0.5) / r * self.bbox.height()]
    }

    /// Counts divided by the map maximum; `None` when the map is all zero.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        (self.max > 0).then(|| self.counts.iter().map(|&c| c as f64 / self.max as f64).collect())
    }

    /// Cell containing `p`, clamped to the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let r = self.resolution;
        let idx = |v: f64, lo: f64, w: f64| (((v - lo) / w * r as f64).floor().max(0.0) as usize).min(r - 1);
        (idx(p[1], self.bbox.min[1], self.bbox.height()), idx(p[0], self.bbox.min[0], self.bbox.width()))
    }

    /// Normalized value of the cell containing `p` (0 for an all-zero map).
    pub fn normalized_at(&self, p: [f64; 2]) -> f64 {
        let (row, col) = self.cell_of(p);
        match self.max {
            0 => 0.0,
            m => self.counts[row * self.resolution + col] as f64 / m as f64,
        }
    }

    /// `row,col,x,y,count,normalized`; normalized is empty in an all-zero map.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,x,y,count,normalized\n");
        for row in 0..self.resolution {
            for col in 0..self.resolution {
                let c = self.cell_center(row, col);
                let count = self.counts[row * self.resolution + col];
                let norm = if self.max > 0 { format!("{:.17e}", count as f64 / self.max as f64) } else { String::new() };
                writeln!(out, "{row},{col},{:.17e},{:.17e},{count},{norm}", c[0], c[1]).unwrap();
            }
        }
        out
    }
}

pub fn concentration_map(
    net: &NetworkSpec,
    bn: &BNState,
    bbox: BBox,
    resolution: usize,
    epsilon: f64,
    layers: &[usize],
) -> Result<ConcentrationMap> {
    if net.input_dim() != 2 {
        return Err(Error::Dimension("concentration maps need a 2-D input".into()));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    check_layers(net, layers)?;
    bn.validate(net)?;
    let mut map = ConcentrationMap { bbox, resolution, epsilon, counts: Vec::new(), max: 0 };
    let rows = par::try_map_range(resolution, |row| -> Result<Vec<usize>> {
        (0..resolution)
            .map(|col| {
                let c = map.cell_center(row, col);
                Ok(count_within(&unit_distances(net, bn, array![c[0], c[1]].view())?, layers, epsilon))
            })
            .collect()
    })?;
    map.counts = rows.concat();
    map.max = map.counts.iter().copied().max().unwrap_or(0);
    if map.max == 0 {
        debug!("concentration map is all zero; normalization skipped");
    }
    Ok(map)
}

/// Mean ball count over `points` and all layers, for each epsilon.
pub fn concentration_curve(net: &NetworkSpec, bn: &BNState, points: ArrayView2<f64>, epsilons: &[f64]) -> Result<Vec<(f64, f64)>> {
    if points.nrows() == 0 {
        return Err(Error::InvalidArgument("no points".into()));
    }
    if epsilons.windows(2).any(|w| !(w[0] <= w[1])) || epsilons.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidArgument("epsilons must be nonnegative and sorted ascending".into()));
    }
    bn.validate(net)?;
    let layers: Vec<usize> = (1..=net.depth()).collect();
    let dists = par::try_map_range(points.nrows(), |i| unit_distances(net, bn, points.row(i)))?;
    Ok(epsilons
        .iter()
        .map(|&e| {
            let total: usize = dists.iter().map(|d| count_within(d, &layers, e)).sum();
            (e, total as f64 / points.nrows() as f64)
        })
        .collect())
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp()).collect(),
    }
}

pub fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("epsilon,mean_count\n");
    for (e, m) in curve {
        writeln!(out, "{e:.17e},{m:.17e}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::facet_local_distance;
    use crate::network::{Activation, BnParams, Layer};
    use crate::partition::{distance_to_segments, trace};
    use crate::rng::stream;
    use crate::testutil::{gaussian_batch, random_net};
    use rand::Rng;

    #[test]
    fn distances_match_facet_local_distance() {
        let (net, bn) = random_net(3, &[2, 5, 4, 3], Activation::LeakyRelu(0.2), true);
        let x = array![0.4, -0.9];
        let d = unit_distances(&net, &bn, x.view()).unwrap();
        for j in 1..=3 {
            for (k, dk) in d[j - 1].iter().enumerate() {
                let f = facet_local_distance(&net, &bn, x.view(), j, k).unwrap().unwrap();
                assert!((dk - f).abs() <= 1e-12 * (1.0 + f));
            }
        }
    }

    #[test]
    fn extreme_epsilons() {
        let (net, bn) = random_net(4, &[2, 6, 5, 1], Activation::Abs, true);
        let x = array![0.123, 0.456];
        assert_eq!(ball_count(&net, &bn, x.view(), 0.0, &[1, 2, 3]).unwrap(), 0);
        assert_eq!(ball_count(&net, &bn, x.view(), f64::INFINITY, &[1, 2, 3]).unwrap(), 12);
        assert_eq!(ball_count(&net, &bn, x.view(), f64::INFINITY, &[2]).unwrap(), 5);
        assert!(ball_count(&net, &bn, x.view(), -1.0, &[1]).is_err());
        assert!(ball_count(&net, &bn, x.view(), 1.0, &[4]).is_err());
    }

    #[test]
    fn counts_monotone_in_epsilon() {
        let (net, bn) = random_net(5, &[2, 8, 8, 1], Activation::LeakyRelu(0.1), true);
        let mut r = stream(1, 2);
        for _ in 0..20 {
            let x = array![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
            let counts: Vec<usize> =
                log_spaced(1e-3, 3.0, 12).iter().map(|&e| ball_count(&net, &bn, x.view(), e, &[1, 2, 3]).unwrap()).collect();
            assert!(counts.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn agrees_with_traced_segments_for_small_balls() {
        let mut agree = 0;
        let mut total = 0;
        for seed in 0..5 {
            let (net, bn) = random_net(seed, &[2, 4, 4, 1], Activation::LeakyRelu(0.1), true);
            let p = trace(&net, &bn, 2, BBox::default()).unwrap();
            let mut r = stream(seed, 9);
            for _ in 0..10 {
                let x = [r.random_range(-2.5..2.5), r.random_range(-2.5..2.5)];
                let region = &p.regions[p.region_at(x).unwrap()];
                let eps = 0.4 * region.polygon.inradius_at(x);
                let exact: usize =
                    p.segments_by_unit().iter().filter(|(&(j, _), segs)| j <= 2 && distance_to_segments(x, segs).unwrap() <= eps).count();
                total += 1;
                agree += (exact == ball_count(&net, &bn, array![x[0], x[1]].view(), eps, &[1, 2]).unwrap()) as usize;
            }
        }
        assert!(agree * 100 >= 95 * total, "{agree}/{total}");
    }

    #[test]
    fn single_layer_map_bands() {
        let net =
            NetworkSpec::new(Activation::Relu, vec![Layer::zero_bias(array![[1.0, 0.0]]), Layer::zero_bias(array![[1.0]])], &[1]).unwrap();
        let mut bn = BNState::for_network(&net);
        bn.set(1, BnParams::standard(array![0.5], array![1.0]));
        let m = concentration_map(&net, &bn, BBox::default(), 12, 0.3, &[1]).unwrap();
        assert_eq!(m.max, 1);
        for row in 0..12 {
            for col in 0..12 {
                let c = m.cell_center(row, col);
                assert_eq!(m.counts[row * 12 + col], ((c[0] - 0.5).abs() <= 0.3) as usize);
            }
        }
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 145);
        let empty = concentration_map(&net, &bn, BBox::default(), 4, 0.0, &[1]).unwrap();
        assert!(empty.normalized().is_none());
        assert_eq!(m.normalized_at([0.5, 0.0]), 1.0);
    }

    #[test]
    fn map_is_deterministic_across_schedules() {
        let (net, bn) = random_net(6, &[2, 16, 16, 1], Activation::LeakyRelu(0.1), true);
        let a = concentration_map(&net, &bn, BBox::default(), 32, 0.1, &[1, 2]).unwrap();
        par::set_sequential(true);
        let b = concentration_map(&net, &bn, BBox::default(), 32, 0.1, &[1, 2]).unwrap();
        par::set_sequential(false);
        assert_eq!(a, b);
    }

    #[test]
    fn curve_cases() {
        let (net, bn) = random_net(7, &[2, 6, 6, 1], Activation::LeakyRelu(0.1), true);
        let pts = gaussian_batch(2, 1, 2);
        let c = concentration_curve(&net, &bn, pts.view(), &[0.5]).unwrap();
        assert_eq!(c[0].1, ball_count(&net, &bn, pts.row(0), 0.5, &[1, 2, 3]).unwrap() as f64);
        let pts = gaussian_batch(3, 30, 2);
        let c = concentration_curve(&net, &bn, pts.view(), &log_spaced(1e-3, 1.0, 10)).unwrap();
        assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(concentration_curve(&net, &bn, pts.view(), &[1.0, 0.5]).is_err());
        assert!(concentration_curve(&net, &bn, pts.slice(ndarray::s![0..0, ..]), &[1.0]).is_err());
    }
}
