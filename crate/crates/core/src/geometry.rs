//! Hyperplanes, distances, total-least-squares fits and angle formulas.
//!
//! All public distances are unsquared Euclidean distances.

use std::f64::consts::PI;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use crate::batchnorm::mean_var;
use crate::error::{Error, Result};
use crate::network::{activation_code, forward, region_affine, ActivationCode, BNState, BnMode, NetworkSpec, ZERO_NORMAL};
use crate::par;
use crate::partition::{distance_to_segments, BBox, Partition2D, Point};

/// The set `{z : <w, z> = offset}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    normal: Array1<f64>,
    offset: f64,
}

impl Hyperplane {
    pub fn new(normal: Array1<f64>, offset: f64) -> Result<Self> {
        let n = normal.dot(&normal).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument("hyperplane normal must be nonzero".into()));
        }
        Ok(Hyperplane { normal, offset })
    }

    pub fn normal(&self) -> &Array1<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed value `<w, v> - offset`.
    pub fn eval(&self, v: ArrayView1<f64>) -> f64 {
        self.normal.dot(&v) - self.offset
    }
}

pub fn distance_to_hyperplane(v: ArrayView1<f64>, h: &Hyperplane) -> Result<f64> {
    if v.len() != h.normal.len() {
        return Err(Error::Dimension(format!("point has {} entries, hyperplane lives in R^{}", v.len(), h.normal.len())));
    }
    Ok(h.eval(v).abs() / h.normal.dot(&h.normal).sqrt())
}

/// Hyperplane of unit `(l, k)` in layer `l`'s input space.
pub fn unit_hyperplane(net: &NetworkSpec, bn: &BNState, l: usize, k: usize) -> Result<Hyperplane> {
    Hyperplane::new(net.unit_weights(l, k).to_owned(), net.unit_offset(bn, l, k)?)
}

fn check_rows(w: ArrayView2<f64>, batch: ArrayView2<f64>) -> Result<()> {
    if batch.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if w.ncols() != batch.ncols() {
        return Err(Error::Dimension(format!("weights have {} columns, batch has {}", w.ncols(), batch.ncols())));
    }
    if let Some(k) = w.rows().into_iter().position(|r| r.dot(&r) == 0.0) {
        return Err(Error::InvalidArgument(format!("row {k} of the weight matrix is zero")));
    }
    Ok(())
}

/// Mean squared distance of the batch to the hyperplane `<w, z> = mu`.
pub fn tls_loss_row(mu: f64, w: ArrayView1<f64>, batch: ArrayView2<f64>) -> f64 {
    let n2 = w.dot(&w);
    batch.rows().into_iter().map(|v| (w.dot(&v) - mu).powi(2)).sum::<f64>() / (batch.nrows() as f64 * n2)
}

/// Sum over rows of [`tls_loss_row`].
pub fn tls_loss(mu: ArrayView1<f64>, w: ArrayView2<f64>, batch: ArrayView2<f64>) -> Result<f64> {
    check_rows(w, batch)?;
    if mu.len() != w.nrows() {
        return Err(Error::Dimension(format!("{} offsets for {} rows", mu.len(), w.nrows())));
    }
    Ok(w.rows().into_iter().zip(mu).map(|(r, &m)| tls_loss_row(m, r, batch)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub golden_iters: usize,
    pub newton_iters: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { golden_iters: 60, newton_iters: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Row {
    pub argmin: f64,
    pub batch_mean: f64,
    pub gap: f64,
    pub loss_at_min: f64,
    /// `sigma^2 / |w|^2` with the population variance of the projections.
    pub predicted_loss: f64,
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub rows: Vec<Theorem1Row>,
}

impl Theorem1Report {
    pub fn max_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.gap).fold(0.0, f64::max)
    }

    pub fn max_identity_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.identity_residual).fold(0.0, f64::max)
    }
}

/// Minimize each row's loss numerically and compare with the batch mean of the projections.
pub fn verify_theorem1(w: ArrayView2<f64>, batch: ArrayView2<f64>, config: SearchConfig) -> Result<Theorem1Report> {
    check_rows(w, batch)?;
    let mut rows = Vec::with_capacity(w.nrows());
    for (k, wk) in w.rows().into_iter().enumerate() {
        let proj: Vec<f64> = batch.rows().into_iter().map(|v| wk.dot(&v)).collect();
        let (lo, hi) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
        let f = |m: f64| tls_loss_row(m, wk, batch);
        let argmin = minimize_1d(f, lo, hi, config).ok_or_else(|| Error::NoConvergence(format!("TLS search on row {k}")))?;
        let (mean, var) = mean_var(proj.iter().copied());
        let loss_at_min = f(argmin);
        let predicted_loss = var / wk.dot(&wk);
        rows.push(Theorem1Row {
            argmin,
            batch_mean: mean,
            gap: (argmin - mean).abs(),
            loss_at_min,
            predicted_loss,
            identity_residual: (loss_at_min - predicted_loss).abs(),
        });
    }
    Ok(Theorem1Report { rows })
}

/// Golden-section bracketing on `[lo, hi]` followed by Newton steps with
/// central finite differences.
fn minimize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, config: SearchConfig) -> Option<f64> {
    let spread = (hi - lo).max(f64::EPSILON * (1.0 + lo.abs()));
    let (mut a, mut b) = (lo - 0.1 * spread, hi + 0.1 * spread);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..config.golden_iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut x = (a + b) / 2.0;
    let h = spread;
    for _ in 0..config.newton_iters {
        let (fm, f0, fp) = (f(x - h), f(x), f(x + h));
        let curv = (fp - 2.0 * f0 + fm) / (h * h);
        if !(curv > 0.0) {
            return None;
        }
        let step = (fp - fm) / (2.0 * h) / curv;
        x -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (x.abs() + spread) {
            break;
        }
    }
    x.is_finite().then_some(x)
}

/// Per-unit `|<w_{l,k}, mean z_{l-1}> - mu_{l,k}|` over the propagated batch.
pub fn centroid_residuals(net: &NetworkSpec, bn: &BNState, l: usize, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
    if !net.has_bn(l) {
        return Err(Error::MissingBatchNorm(l));
    }
    if bn.mode != BnMode::Batch {
        return Err(Error::Precondition("centroid incidence needs statistics computed from the batch".into()));
    }
    if batch.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut mean = Array1::<f64>::zeros(net.width(l - 1));
    for x in batch.rows() {
        mean += forward(net, bn, x)?.z(l - 1);
    }
    mean /= batch.nrows() as f64;
    let mu = &bn.get(l).ok_or(Error::MissingBatchNorm(l))?.mu;
    Ok((net.weights(l).dot(&mean) - mu).mapv(f64::abs))
}

/// Worst incidence residual of the propagated batch centroid against layer `l`'s hyperplanes.
pub fn centroid_incidence(net: &NetworkSpec, bn: &BNState, l: usize, batch: ArrayView2<f64>) -> Result<f64> {
    Ok(centroid_residuals(net, bn, l, batch)?.fold(0.0, |a: f64, &b| a.max(b)))
}

/// Distance from `x` to the facet of unit `(j, k)` extended across `x`'s region.
///
/// `None` when the unit is constant on the region.
pub fn facet_local_distance(net: &NetworkSpec, bn: &BNState, x: ArrayView1<f64>, j: usize, k: usize) -> Result<Option<f64>> {
    if j == 0 || j > net.depth() || k >= net.width(j) {
        return Err(Error::InvalidArgument(format!("unit ({j}, {k}) does not exist")));
    }
    let code = activation_code(net, bn, x)?;
    let map = region_affine(net, bn, &code, j)?;
    let w = net.unit_weights(j, k);
    let normal = map.a.t().dot(&w);
    let norm = normal.dot(&normal).sqrt();
    if norm < ZERO_NORMAL {
        return Ok(None);
    }
    let z = map.apply(x);
    Ok(Some((w.dot(&z) - net.unit_offset(bn, j, k)?).abs() / norm))
}

/// Exact distance from `x` to the traced folded hyperplane `(j, k)` inside the box.
///
/// `None` when the folded hyperplane does not enter the box.
pub fn folded_distance(partition: &Partition2D, x: Point, j: usize, k: usize) -> Result<Option<f64>> {
    Ok(distance_to_segments(x, &partition.folded_hyperplane(j, k)?))
}

/// Forward-only estimate of the distance from `x` to the zero set of
/// `h_{j,k}`, from sign changes along the edges of a `res x res` grid.
///
/// Accurate to about one cell diagonal.
pub fn grid_folded_distance(net: &NetworkSpec, bn: &BNState, x: Point, j: usize, k: usize, bbox: BBox, res: usize) -> Result<Option<f64>> {
    if net.input_dim() != 2 {
        return Err(Error::Dimension("grid oracle needs a 2-D input".into()));
    }
    if res < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    bn.validate(net)?;
    let node = |i: usize, n: usize, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let rows = par::try_map_range(res, |r| -> Result<Vec<f64>> {
        let y = node(r, res, bbox.min[1], bbox.max[1]);
        (0..res)
            .map(|c| {
                let xx = node(c, res, bbox.min[0], bbox.max[0]);
                Ok(crate::network::forward_unchecked(net, bn, ndarray::array![xx, y].view())?.h(j)[k])
            })
            .collect()
    })?;
    let mut best: Option<f64> = None;
    let mut visit = |p: Point, hp: f64, q: Point, hq: f64| {
        if (hp >= 0.0) != (hq >= 0.0) {
            let t = hp / (hp - hq);
            let z = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            let d = (z[0] - x[0]).hypot(z[1] - x[1]);
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    };
    for r in 0..res {
        let y = node(r, res, bbox.min[1], bbox.max[1]);
        for c in 0..res {
            let xx = node(c, res, bbox.min[0], bbox.max[0]);
            if c + 1 < res {
                visit([xx, y], rows[r][c], [node(c + 1, res, bbox.min[0], bbox.max[0]), y], rows[r][c + 1]);
            }
            if r + 1 < res {
                visit([xx, y], rows[r][c], [xx, node(r + 1, res, bbox.min[1], bbox.max[1])], rows[r + 1][c]);
            }
        }
    }
    Ok(best)
}

pub const THEOREM2_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Report {
    pub feature_distance: f64,
    pub feature_distance_alt: f64,
    pub folded_distance: f64,
    pub folded_distance_alt: f64,
    /// Whether `mu'` lies on the same side of `<w, z_{j-1}(x)>` as `mu`.
    pub same_side: bool,
    /// Closer in feature space implies closer in input space.
    pub implication_holds: bool,
    /// Zero feature distance iff zero folded distance, for both offsets.
    pub corollary_holds: bool,
}

/// Compare feature-space and input-space distances of `x` to unit `(j, k)`
/// under the network's offset and under `mu_alt`.
///
/// `partition_alt` must be traced with `mu_{j,k}` replaced by `mu_alt` and nothing else changed.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem2(
    net: &NetworkSpec,
    bn: &BNState,
    x: Point,
    j: usize,
    k: usize,
    mu_alt: f64,
    partition: &Partition2D,
    partition_alt: &Partition2D,
) -> Result<Theorem2Report> {
    if !net.has_bn(j) {
        return Err(Error::MissingBatchNorm(j));
    }
    let z = forward(net, bn, ndarray::array![x[0], x[1]].view())?.z(j - 1).clone();
    let w = net.unit_weights(j, k);
    let mut bn_alt = bn.clone();
    bn_alt.get_mut(j).ok_or(Error::MissingBatchNorm(j))?.mu[k] = mu_alt;
    let h = unit_hyperplane(net, bn, j, k)?;
    let h_alt = unit_hyperplane(net, &bn_alt, j, k)?;
    let d = distance_to_hyperplane(z.view(), &h)?;
    let d_alt = distance_to_hyperplane(z.view(), &h_alt)?;
    let unreachable = || Error::Precondition(format!("folded hyperplane ({j}, {k}) does not enter the box"));
    let f = folded_distance(partition, x, j, k)?.ok_or_else(unreachable)?;
    let f_alt = folded_distance(partition_alt, x, j, k)?.ok_or_else(unreachable)?;
    let proj = w.dot(&z);
    let same_side = (h.offset() - proj) * (h_alt.offset() - proj) > 0.0;
    let implies = |a: f64, b: f64, fa: f64, fb: f64| !(a < b - THEOREM2_TOL) || fa < fb + THEOREM2_TOL;
    let implication_holds = implies(d, d_alt, f, f_alt) && implies(d_alt, d, f_alt, f);
    let zero_iff = |a: f64, fa: f64| (a <= THEOREM2_TOL) == (fa <= THEOREM2_TOL);
    Ok(Theorem2Report {
        feature_distance: d,
        feature_distance_alt: d_alt,
        folded_distance: f,
        folded_distance_alt: f_alt,
        same_side,
        implication_holds,
        corollary_holds: zero_iff(d, f) && zero_iff(d_alt, f_alt),
    })
}

/// Diagonal of the slope matrix of layer `l` on a region: `alpha / sigma` or `1 / sigma`.
/// Layers without batch normalization use `sigma = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    pub layer: usize,
    pub diag: Array1<f64>,
}

pub fn q_matrix(net: &NetworkSpec, bn: &BNState, l: usize, code: &ActivationCode) -> Result<QMatrix> {
    if l == 0 || l >= net.depth() {
        return Err(Error::InvalidArgument(format!("layer {l} has no activation")));
    }
    if code.num_layers() < l || code.signs(l).len() != net.width(l) {
        return Err(Error::Dimension(format!("code does not cover layer {l}")));
    }
    let slopes = code.layer_values(net.activation(), l);
    let diag = match net.has_bn(l) {
        true => {
            let p = bn.get(l).ok_or(Error::MissingBatchNorm(l))?;
            if let Some(i) = p.sigma.iter().position(|&s| !(s > 0.0)) {
                return Err(Error::NonPositiveSigma { layer: l, unit: i, value: p.sigma[i] });
            }
            &slopes / &p.sigma
        }
        false => slopes,
    };
    Ok(QMatrix { layer: l, diag })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DihedralReport {
    pub theta_f_h: f64,
    pub theta_fp_h: f64,
    pub theta_f_fp: f64,
    /// `pi - theta_f_fp`, the dihedral reading without the absolute value.
    pub theta_f_fp_unfolded: f64,
}

fn angle(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
    if nu < ZERO_NORMAL || nv < ZERO_NORMAL {
        return Err(Error::Precondition("zero-norm normal in angle formula".into()));
    }
    Ok((u.dot(&v).abs() / (nu * nv)).clamp(-1.0, 1.0).acos())
}

/// Angles between the facets of `F_{2,k}` on two regions adjacent across
/// `H_{1,i}`, and between each facet and `H_{1,i}`.
pub fn dihedral_angles(net: &NetworkSpec, bn: &BNState, k: usize, i: usize, omega: &[bool], omega_p: &[bool]) -> Result<DihedralReport> {
    if net.depth() < 2 || k >= net.width(2) || i >= net.width(1) {
        return Err(Error::InvalidArgument(format!("units (1, {i}) and (2, {k}) must exist")));
    }
    if omega.len() != net.width(1) || omega_p.len() != net.width(1) {
        return Err(Error::Dimension("codes must cover layer 1".into()));
    }
    let diff: Vec<usize> = (0..omega.len()).filter(|&u| omega[u] != omega_p[u]).collect();
    if diff != [i] {
        return Err(Error::Precondition(format!("codes must differ exactly at unit {i}, they differ at {diff:?}")));
    }
    let w1 = net.weights(1);
    let w2 = net.unit_weights(2, k);
    let normal = |code: &[bool]| -> Result<Array1<f64>> {
        let q = q_matrix(net, bn, 1, &ActivationCode::from_signs(vec![code.to_vec()]))?;
        Ok(w1.t().dot(&(&q.diag * &w2)))
    };
    let (n, np) = (normal(omega)?, normal(omega_p)?);
    let h = w1.index_axis(Axis(0), i);
    let theta_f_fp = angle(n.view(), np.view())?;
    Ok(DihedralReport {
        theta_f_h: angle(n.view(), h)?,
        theta_fp_h: angle(np.view(), h)?,
        theta_f_fp,
        theta_f_fp_unfolded: PI - theta_f_fp,
    })
}

/// Angle in `[0, pi/2]` between two undirected 2-D lines given by direction vectors.
pub fn line_angle(u: Point, v: Point) -> f64 {
    let c = (u[0] * v[0] + u[1] * v[1]).abs() / (u[0].hypot(u[1]) * v[0].hypot(v[1]));
    c.clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batchnorm::{compute_stats, StatsOptions};
    use crate::network::{Activation, BnParams, Layer};
    use crate::partition::trace;
    use crate::rng::stream;
    use crate::testutil::{gaussian_batch, random_net};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn hyperplane_distances() {
        let h = Hyperplane::new(array![1.0, 0.0], 0.0).unwrap();
        assert_eq!(distance_to_hyperplane(array![3.0, 4.0].view(), &h).unwrap(), 3.0);
        let h = Hyperplane::new(array![3.0, 4.0], 5.0).unwrap();
        assert_eq!(distance_to_hyperplane(array![0.0, 0.0].view(), &h).unwrap(), 1.0);
        assert_eq!(distance_to_hyperplane(array![3.0, -1.0].view(), &h).unwrap(), 0.0);
        assert!(Hyperplane::new(array![0.0, 0.0], 1.0).is_err());
        assert!(distance_to_hyperplane(array![1.0].view(), &h).is_err());
    }

    proptest! {
        #[test]
        fn distance_is_scale_invariant(w in prop::array::uniform3(-3.0f64..3.0), mu in -2.0f64..2.0,
                                       v in prop::array::uniform3(-3.0f64..3.0), c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
            prop_assume!(w.iter().map(|a| a * a).sum::<f64>() > 1e-3);
            let w = Array1::from(w.to_vec());
            let v = Array1::from(v.to_vec());
            let a = distance_to_hyperplane(v.view(), &Hyperplane::new(w.clone(), mu).unwrap()).unwrap();
            let b = distance_to_hyperplane(v.view(), &Hyperplane::new(&w * c, mu * c).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }

    #[test]
    fn tls_hand_cases() {
        let w = array![[1.0]];
        let batch = array![[-1.0], [1.0]];
        assert_eq!(tls_loss(array![0.0].view(), w.view(), batch.view()).unwrap(), 1.0);
        let w = array![[1.0, 1.0], [1.0, -1.0]];
        let on = array![[1.0, 1.0], [1.0, 1.0]];
        assert_eq!(tls_loss(array![2.0, 0.0].view(), w.view(), on.view()).unwrap(), 0.0);
        assert!(tls_loss(array![0.0].view(), array![[0.0, 0.0]].view(), on.view()).is_err());
    }

    #[test]
    fn tls_matches_naive_sum() {
        let mut rng = stream(11, 0);
        let w = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let mu = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
        let batch = gaussian_batch(3, 40, 3);
        let mut naive = 0.0;
        for k in 0..5 {
            let n2: f64 = (0..3).map(|d| w[[k, d]] * w[[k, d]]).sum();
            let mut acc = 0.0;
            for v in 0..40 {
                let p: f64 = (0..3).map(|d| w[[k, d]] * batch[[v, d]]).sum();
                acc += (p - mu[k]) * (p - mu[k]) / n2;
            }
            naive += acc / 40.0;
        }
        assert_abs_diff_eq!(tls_loss(mu.view(), w.view(), batch.view()).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn theorem1_cases() {
        let r = verify_theorem1(array![[1.0]].view(), array![[-1.0], [1.0]].view(), SearchConfig::default()).unwrap();
        assert!(r.max_gap() < 1e-12 && r.rows[0].argmin.abs() < 1e-12);
        for seed in 0..20 {
            let mut rng = stream(seed, 7);
            let w = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
            let batch = gaussian_batch(seed, 50, 4);
            let r = verify_theorem1(w.view(), batch.view(), SearchConfig::default()).unwrap();
            assert!(r.max_gap() <= 1e-9, "gap {}", r.max_gap());
            assert!(r.max_identity_residual() <= 1e-10);
            let t = array![0.7, -1.3, 2.0, 0.1];
            let moved = &batch + &t;
            let r2 = verify_theorem1(w.view(), moved.view(), SearchConfig::default()).unwrap();
            for (k, (a, b)) in r.rows.iter().zip(&r2.rows).enumerate() {
                assert!((b.argmin - a.argmin - w.row(k).dot(&t)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn central_arrangement() {
        for seed in 0..5 {
            let (net, _) = random_net(seed, &[3, 6, 5, 2], Activation::LeakyRelu(0.1), true);
            let batch = gaussian_batch(seed + 50, 64, 3);
            let bn = compute_stats(&net, batch.view(), StatsOptions::default()).unwrap().bn_state();
            for l in net.bn_layers() {
                let res = centroid_residuals(&net, &bn, l, batch.view()).unwrap();
                assert!(res.iter().all(|&r| r <= 1e-10));
                // explicit recomputation of the propagated mean
                let rows: Vec<Array1<f64>> = batch.rows().into_iter().map(|x| forward(&net, &bn, x).unwrap().z(l - 1).clone()).collect();
                let mean = rows.iter().fold(Array1::zeros(net.width(l - 1)), |a, b| a + b) / rows.len() as f64;
                let direct = (net.weights(l).dot(&mean) - &bn.get(l).unwrap().mu).mapv(f64::abs);
                assert!((&direct - &res).iter().all(|d| d.abs() < 1e-12));
            }
            let mut shifted = bn.clone();
            shifted.get_mut(2).unwrap().mu[1] += 1.0;
            let res = centroid_residuals(&net, &shifted, 2, batch.view()).unwrap();
            assert!((res[1] - 1.0).abs() < 1e-10);
            let mut fixed = bn.clone();
            fixed.mode = BnMode::Fixed;
            assert!(centroid_incidence(&net, &fixed, 1, batch.view()).is_err());
        }
    }

    #[test]
    fn facet_distance_first_layer_is_hyperplane_distance() {
        let (net, bn) = random_net(8, &[3, 4, 4, 1], Activation::Abs, true);
        let x = array![0.3, -0.8, 1.1];
        for k in 0..4 {
            let d = facet_local_distance(&net, &bn, x.view(), 1, k).unwrap().unwrap();
            let h = unit_hyperplane(&net, &bn, 1, k).unwrap();
            assert_eq!(d, distance_to_hyperplane(x.view(), &h).unwrap());
        }
    }

    #[test]
    fn facet_distance_vanishes_on_traced_facets() {
        let (net, bn) = random_net(21, &[2, 4, 4, 1], Activation::LeakyRelu(0.1), true);
        let p = trace(&net, &bn, 2, BBox::default()).unwrap();
        for s in p.folded_hyperplane(2, 1).unwrap() {
            let m = s.midpoint();
            let d = facet_local_distance(&net, &bn, array![m[0], m[1]].view(), 2, 1).unwrap().unwrap();
            assert!(d < 1e-10);
        }
    }

    #[test]
    fn folded_distance_single_layer() {
        let net = NetworkSpec::new(Activation::Relu, vec![Layer::new(array![[3.0, 4.0]], array![-5.0])], &[]).unwrap();
        let bn = BNState::for_network(&net);
        let p = trace(&net, &bn, 1, BBox::default()).unwrap();
        let d = folded_distance(&p, [0.0, 0.0], 1, 0).unwrap().unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let grid = grid_folded_distance(&net, &bn, [0.0, 0.0], 1, 0, BBox::default(), 200).unwrap().unwrap();
        assert!((grid - 1.0).abs() < 6.0 * 2f64.sqrt() / 199.0);
    }

    #[test]
    fn theorem2_identity_and_on_hyperplane() {
        let (net, _) = random_net(5, &[2, 4, 4, 1], Activation::LeakyRelu(0.1), true);
        let batch = gaussian_batch(5, 32, 2);
        let bn = compute_stats(&net, batch.view(), StatsOptions::default()).unwrap().to_bn_state(&BNState::for_network(&net));
        let mut bn = bn;
        for l in [1, 2] {
            let p = bn.get_mut(l).unwrap();
            p.gamma.fill(1.0);
            p.beta.fill(0.0);
        }
        let p = trace(&net, &bn, 2, BBox::default()).unwrap();
        let x = [0.2, -0.4];
        let mu = bn.get(2).unwrap().mu[0];
        let r = verify_theorem2(&net, &bn, x, 2, 0, mu, &p, &p).unwrap();
        assert_eq!(r.feature_distance, r.feature_distance_alt);
        assert!(r.implication_holds && r.corollary_holds);
        let z = forward(&net, &bn, array![x[0], x[1]].view()).unwrap().z(1).clone();
        let on = net.unit_weights(2, 0).dot(&z);
        let mut bn_on = bn.clone();
        bn_on.get_mut(2).unwrap().mu[0] = on;
        let p_on = trace(&net, &bn_on, 2, BBox::default()).unwrap();
        let r = verify_theorem2(&net, &bn, x, 2, 0, on, &p, &p_on).unwrap();
        assert!(r.feature_distance_alt < 1e-12 && r.folded_distance_alt < 1e-8);
        assert!(r.corollary_holds && r.implication_holds);
    }

    #[test]
    fn q_matrix_cases() {
        let net = NetworkSpec::new(Activation::Abs, vec![Layer::zero_bias(Array2::eye(2)), Layer::zero_bias(Array2::ones((1, 2)))], &[1])
            .unwrap();
        let mut bn = BNState::for_network(&net);
        bn.set(1, BnParams::standard(Array1::zeros(2), array![2.0, 2.0]));
        let q = q_matrix(&net, &bn, 1, &ActivationCode::from_signs(vec![vec![true, false]])).unwrap();
        assert_eq!(q.diag, array![0.5, -0.5]);
        let relu = net.with_activation(Activation::Relu).unwrap();
        let q = q_matrix(&relu, &bn, 1, &ActivationCode::from_signs(vec![vec![false, false]])).unwrap();
        assert_eq!(q.diag, array![0.0, 0.0]);
        assert!(q_matrix(&net, &bn, 2, &ActivationCode::from_signs(vec![vec![true, true]])).is_err());
    }

    #[test]
    fn q_matrix_matches_region_affine_factors() {
        let (net, mut bn) = random_net(14, &[3, 4, 2], Activation::LeakyRelu(0.1), true);
        let p = bn.get_mut(1).unwrap();
        p.sigma.fill(1.0);
        p.gamma.fill(1.0);
        let code = ActivationCode::from_signs(vec![vec![true, false, false, true]]);
        let q = q_matrix(&net, &bn, 1, &code).unwrap();
        assert_eq!(q.diag, array![1.0, 0.1, 0.1, 1.0]);
        let a = region_affine(&net, &bn, &code, 2).unwrap().a;
        let expect = Array2::from_diag(&q.diag).dot(net.weights(1));
        assert!((&a - &expect).iter().all(|d| d.abs() < 1e-15));
    }

    fn identity_abs_net() -> (NetworkSpec, BNState) {
        let net =
            NetworkSpec::new(Activation::Abs, vec![Layer::zero_bias(Array2::eye(2)), Layer::zero_bias(array![[1.0, 1.0]])], &[1]).unwrap();
        let mut bn = BNState::for_network(&net);
        bn.set(1, BnParams::standard(Array1::zeros(2), Array1::ones(2)));
        (net, bn)
    }

    #[test]
    fn dihedral_hand_case() {
        let (net, bn) = identity_abs_net();
        let r = dihedral_angles(&net, &bn, 0, 0, &[true, true], &[false, true]).unwrap();
        assert_abs_diff_eq!(r.theta_f_h, PI / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.theta_fp_h, PI / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.theta_f_fp, PI / 2.0, epsilon = 1e-12);
        assert!(dihedral_angles(&net, &bn, 0, 0, &[true, true], &[false, false]).is_err());
    }

    #[test]
    fn dihedral_symmetry_and_scale() {
        let (net, bn) = random_net(31, &[2, 4, 3, 1], Activation::LeakyRelu(0.2), true);
        let (a, b) = ([true, false, true, true], [true, false, false, true]);
        let r1 = dihedral_angles(&net, &bn, 1, 2, &a, &b).unwrap();
        let r2 = dihedral_angles(&net, &bn, 1, 2, &b, &a).unwrap();
        assert_abs_diff_eq!(r1.theta_f_fp, r2.theta_f_fp, epsilon = 1e-14);
        let mut scaled = net.clone();
        scaled.weights_mut(2).row_mut(1).mapv_inplace(|w| w * 7.5);
        let r3 = dihedral_angles(&scaled, &bn, 1, 2, &a, &b).unwrap();
        assert_abs_diff_eq!(r1.theta_f_h, r3.theta_f_h, epsilon = 1e-12);
        assert_abs_diff_eq!(r1.theta_f_fp, r3.theta_f_fp, epsilon = 1e-12);
        assert_abs_diff_eq!(r1.theta_f_fp_unfolded, PI - r1.theta_f_fp, epsilon = 0.0);
    }

    #[test]
    fn dihedral_flattens_for_large_sigma_near_linear() {
        let mut net = identity_abs_net().0.with_activation(Activation::LeakyRelu(0.999)).unwrap();
        net.weights_mut(2).assign(&array![[1.0, 1.0]]);
        let mut bn = BNState::for_network(&net);
        bn.set(1, BnParams::standard(Array1::zeros(2), array![1e6, 1.0]));
        let r = dihedral_angles(&net, &bn, 0, 0, &[true, true], &[false, true]).unwrap();
        assert!(r.theta_f_fp < 1e-6);
    }

    #[test]
    fn sigma_does_not_move_first_layer_hyperplanes() {
        let (net, bn) = random_net(3, &[2, 3, 1], Activation::Relu, true);
        let mut bn2 = bn.clone();
        let p = bn2.get_mut(1).unwrap();
        p.sigma.mapv_inplace(|s| s * 3.7);
        p.beta.fill(0.0);
        let mut bn1 = bn.clone();
        bn1.get_mut(1).unwrap().beta.fill(0.0);
        for k in 0..3 {
            assert_eq!(unit_hyperplane(&net, &bn1, 1, k).unwrap(), unit_hyperplane(&net, &bn2, 1, k).unwrap());
        }
    }
}
