//! Synthetic data generators and CSV I/O.
//!
//! Generators are pure functions of their parameters and seed; all draws come
//! from [`crate::rng::stream`].

use std::f64::consts::TAU;
use std::fmt::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::batchnorm::mean_var;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    /// `generator=...;seed=...` description of where the data came from.
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(inputs: Array2<f64>, labels: Option<Vec<usize>>, provenance: impl Into<String>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset must have at least one row and column".into()));
        }
        if let Some(l) = &labels {
            if l.len() != inputs.nrows() {
                return Err(Error::Dimension(format!("{} labels for {} rows", l.len(), inputs.nrows())));
            }
        }
        Ok(LabeledDataset { inputs, labels, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or_else(|| Error::Precondition("dataset has no labels".into()))
    }

    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# {}", self.provenance).unwrap();
        let mut header: Vec<String> = (0..self.dim()).map(|d| format!("x{d}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        writeln!(out, "{}", header.join(",")).unwrap();
        for (i, row) in self.inputs.rows().into_iter().enumerate() {
            let mut cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            if let Some(l) = &self.labels {
                cells.push(l[i].to_string());
            }
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut provenance = String::new();
        let mut header: Option<(usize, bool)> = None;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |msg: String| Error::Parse { line: lineno + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if provenance.is_empty() {
                    provenance = c.trim().to_string();
                }
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let Some((dim, labelled)) = header else {
                let labelled = cells.last() == Some(&"label");
                let dim = cells.len() - labelled as usize;
                if dim == 0 || cells[..dim].iter().enumerate().any(|(d, c)| *c != format!("x{d}")) {
                    return Err(err(format!("expected header x0,...,x{{D-1}}[,label], found {line:?}")));
                }
                header = Some((dim, labelled));
                continue;
            };
            if cells.len() != dim + labelled as usize {
                return Err(err(format!("expected {} fields, found {}", dim + labelled as usize, cells.len())));
            }
            for c in &cells[..dim] {
                values.push(c.parse::<f64>().map_err(|e| err(format!("bad number {c:?}: {e}")))?);
            }
            if labelled {
                labels.push(cells[dim].parse::<usize>().map_err(|e| err(format!("bad label {:?}: {e}", cells[dim])))?);
            }
        }
        let (dim, labelled) = header.ok_or(Error::Parse { line: 0, msg: "missing header".into() })?;
        let n = values.len() / dim;
        let inputs = Array2::from_shape_vec((n, dim), values).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        LabeledDataset::new(inputs, labelled.then_some(labels), provenance)
    }
}

/// Radius `r0 (1 + amplitude cos(arms theta))` plus Gaussian radial noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarProfile {
    pub r0: f64,
    pub amplitude: f64,
    pub radial_noise: f64,
}

impl Default for StarProfile {
    fn default() -> Self {
        StarProfile { r0: 1.5, amplitude: 0.4, radial_noise: 0.0 }
    }
}

pub const STAR_DEFAULT_N: usize = 50;
pub const STAR_DEFAULT_ARMS: usize = 5;

/// Unlabeled points on a star-shaped curve at uniform random angles.
pub fn star2d(n: usize, arms: usize, profile: StarProfile, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("star2d needs n >= 1".into()));
    }
    if arms < 3 {
        return Err(Error::InvalidArgument(format!("star needs at least 3 arms, got {arms}")));
    }
    let mut r = rng::stream(seed, 0);
    let mut x = Array2::zeros((n, 2));
    for i in 0..n {
        let t = r.random_range(0.0..TAU);
        let noise: f64 = r.sample(StandardNormal);
        let rad = profile.r0 * (1.0 + profile.amplitude * (arms as f64 * t).cos()) + profile.radial_noise * noise;
        x[[i, 0]] = rad * t.cos();
        x[[i, 1]] = rad * t.sin();
    }
    let prov = format!(
        "generator=star2d;n={n};arms={arms};r0={};amplitude={};radial_noise={};seed={seed}",
        profile.r0, profile.amplitude, profile.radial_noise
    );
    LabeledDataset::new(x, None, prov)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoClassKind {
    Clusters,
    Rings,
    Xor,
}

impl std::str::FromStr for TwoClassKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clusters" => Ok(TwoClassKind::Clusters),
            "rings" => Ok(TwoClassKind::Rings),
            "xor" => Ok(TwoClassKind::Xor),
            _ => Err(Error::InvalidArgument(format!("unknown dataset kind {s:?} (clusters, rings, xor)"))),
        }
    }
}

impl std::fmt::Display for TwoClassKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TwoClassKind::Clusters => "clusters",
            TwoClassKind::Rings => "rings",
            TwoClassKind::Xor => "xor",
        })
    }
}

/// Balanced binary task in the plane; row `i` has label `i % 2`.
pub fn two_class_2d(kind: TwoClassKind, n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("two_class_2d needs n >= 1".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be nonnegative, got {noise}")));
    }
    let mut r = rng::stream(seed, 0);
    let mut x = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let (e0, e1): (f64, f64) = (r.sample(StandardNormal), r.sample(StandardNormal));
        let p = match kind {
            TwoClassKind::Clusters => {
                let c = if label == 0 { -1.0 } else { 1.0 };
                [c + noise * e0, c + noise * e1]
            }
            TwoClassKind::Rings => {
                let t = r.random_range(0.0..TAU);
                let rad = if label == 0 { 1.0 } else { 2.0 } + noise * e0;
                [rad * t.cos(), rad * t.sin()]
            }
            TwoClassKind::Xor => {
                let sx = if r.random::<bool>() { 1.0 } else { -1.0 };
                let sy = if label == 0 { sx } else { -sx };
                [sx + noise * e0, sy + noise * e1]
            }
        };
        x[[i, 0]] = p[0];
        x[[i, 1]] = p[1];
        labels.push(label);
    }
    LabeledDataset::new(x, Some(labels), format!("generator=two_class_2d;kind={kind};n={n};noise={noise};seed={seed}"))
}

/// `n` i.i.d. draws from `N(mean, diag(diag_cov))`.
pub fn gaussian_inputs(n: usize, mean: ArrayView1<f64>, diag_cov: ArrayView1<f64>, seed: u64) -> Result<LabeledDataset> {
    if n == 0 || mean.is_empty() {
        return Err(Error::InvalidArgument("gaussian_inputs needs n >= 1 and D >= 1".into()));
    }
    if mean.len() != diag_cov.len() {
        return Err(Error::Dimension(format!("mean has {} entries, covariance {}", mean.len(), diag_cov.len())));
    }
    if diag_cov.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("covariance diagonal must be nonnegative".into()));
    }
    let sd = diag_cov.mapv(f64::sqrt);
    let mut r = rng::stream(seed, 0);
    let x = Array2::from_shape_fn((n, mean.len()), |(_, d)| mean[d] + sd[d] * r.sample::<f64, _>(StandardNormal));
    LabeledDataset::new(x, None, format!("generator=gaussian_inputs;n={n};d={};seed={seed}", mean.len()))
}

/// Gaussian points with the per-coordinate mean and variance of `points`.
pub fn matched_gaussian(points: ArrayView2<f64>, n: usize, seed: u64) -> Result<LabeledDataset> {
    let (mean, var): (Vec<f64>, Vec<f64>) = points.columns().into_iter().map(|c| mean_var(c.iter().copied())).unzip();
    let mut d = gaussian_inputs(n, Array1::from(mean).view(), Array1::from(var).view(), seed)?;
    d.provenance = format!("generator=matched_gaussian;n={n};seed={seed}");
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn star_points_lie_on_the_curve() {
        let p = StarProfile::default();
        let d = star2d(STAR_DEFAULT_N, 5, p, 3).unwrap();
        assert_eq!(d.len(), 50);
        for row in d.inputs.rows() {
            let t = row[1].atan2(row[0]);
            let rad = row[0].hypot(row[1]);
            assert!((rad - p.r0 * (1.0 + p.amplitude * (5.0 * t).cos())).abs() < 1e-12);
        }
        assert_eq!(star2d(1, 5, p, 3).unwrap().len(), 1);
        assert_eq!(star2d(50, 5, p, 9).unwrap(), star2d(50, 5, p, 9).unwrap());
        assert!(star2d(10, 2, p, 9).is_err());
        assert!(star2d(0, 5, p, 9).is_err());
    }

    #[test]
    fn two_class_properties() {
        let d = two_class_2d(TwoClassKind::Clusters, 11, 0.0, 1).unwrap();
        for (i, row) in d.inputs.rows().into_iter().enumerate() {
            let c = if i % 2 == 0 { -1.0 } else { 1.0 };
            assert_eq!(row.to_vec(), vec![c, c]);
        }
        for kind in [TwoClassKind::Clusters, TwoClassKind::Rings, TwoClassKind::Xor] {
            let d = two_class_2d(kind, 101, 0.1, 4).unwrap();
            let ones = d.labels().unwrap().iter().filter(|&&l| l == 1).count();
            assert!((101 - 2 * ones as i64).abs() <= 1);
            assert_eq!(d, two_class_2d(kind, 101, 0.1, 4).unwrap());
        }
        assert!("moons".parse::<TwoClassKind>().is_err());
    }

    #[test]
    fn gaussian_statistics() {
        let mean = array![1.0, -2.0];
        let d = gaussian_inputs(5, mean.view(), array![0.0, 0.0].view(), 1).unwrap();
        assert!(d.inputs.rows().into_iter().all(|r| r == mean));
        let n = 100_000;
        let d = gaussian_inputs(n, mean.view(), array![1.0, 1.0].view(), 2).unwrap();
        let m = d.inputs.mean_axis(ndarray::Axis(0)).unwrap();
        for k in 0..2 {
            assert!((m[k] - mean[k]).abs() <= 4.0 / (n as f64).sqrt());
        }
        let c = (&d.inputs - &m).t().dot(&(&d.inputs - &m)) / n as f64;
        assert!(c[[0, 1]].abs() <= 0.05);
        assert!(gaussian_inputs(3, mean.view(), array![1.0, -1.0].view(), 1).is_err());
    }

    #[test]
    fn matched_gaussian_moments() {
        let star = star2d(500, 5, StarProfile::default(), 1).unwrap();
        let g = matched_gaussian(star.inputs.view(), 200_000, 2).unwrap();
        for k in 0..2 {
            let (m0, v0) = mean_var(star.inputs.column(k).iter().copied());
            let (m1, v1) = mean_var(g.inputs.column(k).iter().copied());
            assert!((m0 - m1).abs() < 0.02 && (v0 - v1).abs() < 0.02 * v0);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        for d in [
            two_class_2d(TwoClassKind::Rings, 37, 0.3, 5).unwrap(),
            gaussian_inputs(20, array![0.1, 0.2, 0.3].view(), array![1e-30, 1.0, 1e30].view(), 6).unwrap(),
        ] {
            let back = LabeledDataset::from_csv(&d.to_csv()).unwrap();
            assert_eq!(back, d);
        }
        assert!(LabeledDataset::from_csv("y0,y1\n1,2\n").is_err());
        assert!(LabeledDataset::from_csv("x0,x1\n1\n").is_err());
        assert!(LabeledDataset::from_csv("x0,label\n1,a\n").is_err());
    }
}
