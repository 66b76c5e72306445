//! Exact spline partitions of networks with a 2-D input.
//!
//! Tracing starts from a bounding box and refines it layer by layer. Inside
//! each current region the layer's pre-activations are affine in `x`, so
//! every unit contributes a straight cut; the union of those cuts over all
//! regions is the unit's folded hyperplane.

use std::collections::BTreeMap;
use std::fmt::Write;

use log::debug;
use ndarray::{array, Array1, Array2};

use crate::error::{Error, Result};
use crate::network::{activate_affine, preactivation_affine, ActivationCode, BNState, NetworkSpec, RegionAffine, ZERO_NORMAL};

pub type Point = [f64; 2];

/// Axis-aligned rectangle in the input plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        if !(max[0] > min[0] && max[1] > min[1]) || min.iter().chain(&max).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("degenerate box {min:?}..{max:?}")));
        }
        Ok(BBox { min, max })
    }

    /// `[-r, r]^2`.
    pub fn square(r: f64) -> Result<Self> {
        BBox::new([-r, -r], [r, r])
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn polygon(&self) -> ConvexPolygon {
        ConvexPolygon { vertices: vec![self.min, [self.max[0], self.min[1]], self.max, [self.min[0], self.max[1]]] }
    }
}

impl Default for BBox {
    fn default() -> Self {
        BBox { min: [-3.0, -3.0], max: [3.0, 3.0] }
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

enum Split {
    Whole,
    Cut { neg: ConvexPolygon, pos: ConvexPolygon, chord: (Point, Point) },
}

impl ConvexPolygon {
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
    }

    /// Area centroid; strictly interior for a non-degenerate polygon.
    pub fn centroid(&self) -> Point {
        let n = self.vertices.len();
        let o = self.vertices[0];
        let (mut cx, mut cy, mut aa) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let a = [self.vertices[i][0] - o[0], self.vertices[i][1] - o[1]];
            let b = [self.vertices[(i + 1) % n][0] - o[0], self.vertices[(i + 1) % n][1] - o[1]];
            let cross = a[0] * b[1] - a[1] * b[0];
            aa += cross;
            cx += (a[0] + b[0]) * cross;
            cy += (a[1] + b[1]) * cross;
        }
        if aa.abs() < f64::MIN_POSITIVE {
            let m = self.vertices.iter().fold([0.0, 0.0], |m, v| [m[0] + v[0], m[1] + v[1]]);
            return [m[0] / n as f64, m[1] / n as f64];
        }
        [o[0] + cx / (3.0 * aa), o[1] + cy / (3.0 * aa)]
    }

    /// Point-in-polygon test with an absolute tolerance on edge distance.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len = ex.hypot(ey);
            len == 0.0 || (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / len >= -tol
        })
    }

    /// Distance from `p` to the polygon's interior (zero inside).
    pub fn inradius_at(&self, p: Point) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                let len = ex.hypot(ey);
                if len == 0.0 {
                    f64::INFINITY
                } else {
                    (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / len
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Split by the line `n . x + d = 0`. Vertices within `tol` of the line are snapped onto it.
    fn split(&self, n: [f64; 2], d: f64, tol: f64) -> Split {
        let s: Vec<f64> = self
            .vertices
            .iter()
            .map(|v| {
                let val = n[0] * v[0] + n[1] * v[1] + d;
                if val.abs() <= tol {
                    0.0
                } else {
                    val
                }
            })
            .collect();
        if !s.iter().any(|&v| v > 0.0) || !s.iter().any(|&v| v < 0.0) {
            return Split::Whole;
        }
        let len = self.vertices.len();
        let (mut neg, mut pos, mut on) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..len {
            let j = (i + 1) % len;
            let v = self.vertices[i];
            if s[i] >= 0.0 {
                pos.push(v);
            }
            if s[i] <= 0.0 {
                neg.push(v);
            }
            if s[i] == 0.0 {
                on.push(v);
            }
            if s[i] * s[j] < 0.0 {
                let t = s[i] / (s[i] - s[j]);
                let w = self.vertices[j];
                let p = [v[0] + t * (w[0] - v[0]), v[1] + t * (w[1] - v[1])];
                pos.push(p);
                neg.push(p);
                on.push(p);
            }
        }
        debug_assert_eq!(on.len(), 2, "convex polygon meets a line in two boundary points");
        Split::Cut { neg: ConvexPolygon { vertices: neg }, pos: ConvexPolygon { vertices: pos }, chord: (on[0], on[on.len() - 1]) }
    }
}

/// A straight piece of the partition boundary, produced by unit `unit` of layer `layer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    pub layer: usize,
    pub unit: usize,
}

impl Segment {
    pub fn midpoint(&self) -> Point {
        [(self.a[0] + self.b[0]) / 2.0, (self.a[1] + self.b[1]) / 2.0]
    }

    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    pub fn point_at(&self, t: f64) -> Point {
        [self.a[0] + t * (self.b[0] - self.a[0]), self.a[1] + t * (self.b[1] - self.a[1])]
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance(&self, p: Point) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 { 0.0 } else { (((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len2).clamp(0.0, 1.0) };
        let q = self.point_at(t);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }
}

/// One linear region of a traced partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub polygon: ConvexPolygon,
    /// Code of the traced hidden layers.
    pub code: ActivationCode,
    /// Output signs when the trace reached the linear head.
    pub head_signs: Option<Vec<bool>>,
    /// `maps[j]` sends `x` to `z_j`, for `j = 0..=depth`.
    pub maps: Vec<RegionAffine>,
}

impl Region {
    /// Code string including head signs, distinct across regions.
    pub fn label(&self) -> String {
        let mut s = self.code.to_code_string();
        if let Some(h) = &self.head_signs {
            if !s.is_empty() {
                s.push('|');
            }
            s.extend(h.iter().map(|&b| if b { '+' } else { '-' }));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    pub region_budget: usize,
    /// Relative tolerance for classifying a vertex as lying on a cut line.
    pub snap_tol: f64,
    /// Pieces smaller than this fraction of the box area are not split off.
    pub sliver_frac: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { region_budget: 1_000_000, snap_tol: 1e-12, sliver_frac: 1e-12 }
    }
}

/// The input-space partition of a network up to some layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition2D {
    pub bbox: BBox,
    pub depth: usize,
    pub regions: Vec<Region>,
    pub segments: Vec<Segment>,
    /// Cuts skipped because one side would have been a sliver.
    pub slivers_merged: usize,
}

/// Trace the partition induced by layers `1..=depth` inside `bbox`.
pub fn trace(net: &NetworkSpec, bn: &BNState, depth: usize, bbox: BBox) -> Result<Partition2D> {
    trace_with(net, bn, depth, bbox, TraceOptions::default())
}

pub fn trace_with(net: &NetworkSpec, bn: &BNState, depth: usize, bbox: BBox, opts: TraceOptions) -> Result<Partition2D> {
    if net.input_dim() != 2 {
        return Err(Error::Dimension(format!("tracing needs a 2-D input, network has {}", net.input_dim())));
    }
    if depth > net.depth() {
        return Err(Error::InvalidArgument(format!("depth {depth} exceeds network depth {}", net.depth())));
    }
    let bbox = BBox::new(bbox.min, bbox.max)?;
    bn.validate(net)?;
    let sliver = opts.sliver_frac * bbox.area();
    let extent = bbox.min.iter().chain(&bbox.max).fold(0.0f64, |m, v| m.max(v.abs()));

    let mut regions = vec![Region {
        polygon: bbox.polygon(),
        code: ActivationCode::from_signs(vec![]),
        head_signs: None,
        maps: vec![RegionAffine::identity(2)],
    }];
    let mut segments = Vec::new();
    let mut slivers = 0usize;

    for j in 1..=depth {
        let mut next = Vec::with_capacity(regions.len() * 2);
        for region in regions {
            let (m, v) = preactivation_affine(net, bn, j, region.maps.last().unwrap())?;
            let mut pieces = vec![region.polygon.clone()];
            for k in 0..m.nrows() {
                let n = [m[[k, 0]], m[[k, 1]]];
                let norm = n[0].hypot(n[1]);
                if norm < ZERO_NORMAL {
                    continue;
                }
                let tol = opts.snap_tol * (norm * extent + v[k].abs()).max(f64::MIN_POSITIVE);
                let mut split_pieces = Vec::with_capacity(pieces.len() + 1);
                for poly in pieces {
                    match poly.split(n, v[k], tol) {
                        Split::Whole => split_pieces.push(poly),
                        Split::Cut { neg, pos, chord } => {
                            if neg.area() < sliver || pos.area() < sliver {
                                slivers += 1;
                                split_pieces.push(poly);
                            } else {
                                segments.push(Segment { a: chord.0, b: chord.1, layer: j, unit: k });
                                split_pieces.push(neg);
                                split_pieces.push(pos);
                            }
                        }
                    }
                }
                pieces = split_pieces;
                if next.len() + pieces.len() > opts.region_budget {
                    return Err(Error::RegionBudget { budget: opts.region_budget });
                }
            }
            for poly in pieces {
                let c = poly.centroid();
                let h = m.dot(&array![c[0], c[1]]) + &v;
                let signs: Vec<bool> = h.iter().map(|&u| u >= 0.0).collect();
                let mut code = region.code.clone();
                let mut maps = region.maps.clone();
                let mut head_signs = None;
                if j < net.depth() {
                    let slopes: Array1<f64> = signs.iter().map(|&s| if s { 1.0 } else { net.activation().alpha() }).collect();
                    maps.push(activate_affine(m.clone(), v.clone(), &slopes, j));
                    code.push_layer(signs);
                } else {
                    maps.push(RegionAffine { layer: j + 1, a: m.clone(), b: v.clone() });
                    head_signs = Some(signs);
                }
                next.push(Region { polygon: poly, code, head_signs, maps });
            }
        }
        regions = next;
    }
    if slivers > 0 {
        debug!("trace: {slivers} sliver cuts merged");
    }
    let segments = split_at_junctions(segments, opts.snap_tol.max(1e-12) * 1e3 * bbox.diagonal());
    Ok(Partition2D { bbox, depth, regions, segments, slivers_merged: slivers })
}

impl Partition2D {
    pub fn total_area(&self) -> f64 {
        self.regions.iter().map(|r| r.polygon.area()).sum()
    }

    /// Index of a region containing `p`, preferring the one `p` is deepest inside.
    pub fn region_at(&self, p: Point) -> Option<usize> {
        let mut best = None;
        let mut depth = -1e-9 * self.bbox.diagonal();
        for (i, r) in self.regions.iter().enumerate() {
            let d = r.polygon.inradius_at(p);
            if d >= depth {
                depth = d;
                best = Some(i);
            }
        }
        best
    }

    /// Segments of folded hyperplane `(j, k)`.
    pub fn folded_hyperplane(&self, j: usize, k: usize) -> Result<Vec<Segment>> {
        if j == 0 || j > self.depth {
            return Err(Error::InvalidArgument(format!("layer {j} outside traced depth {}", self.depth)));
        }
        Ok(self.segments.iter().filter(|s| s.layer == j && s.unit == k).copied().collect())
    }

    /// Zero set of a scalar head, for a partition traced through the head.
    pub fn decision_boundary(&self, net: &NetworkSpec) -> Result<Vec<Segment>> {
        if net.output_dim() != 1 {
            return Err(Error::Precondition(format!("decision boundary needs a scalar head, network has {} outputs", net.output_dim())));
        }
        if self.depth != net.depth() {
            return Err(Error::Precondition(format!("partition traced to depth {}, head is layer {}", self.depth, net.depth())));
        }
        self.folded_hyperplane(net.depth(), 0)
    }

    /// Segments grouped by `(layer, unit)`.
    pub fn segments_by_unit(&self) -> BTreeMap<(usize, usize), Vec<Segment>> {
        let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for s in &self.segments {
            out.entry((s.layer, s.unit)).or_default().push(*s);
        }
        out
    }

    /// `id,code,vertices` with vertices as `x:y` pairs joined by `;`.
    pub fn regions_csv(&self) -> String {
        let mut out = String::from("id,code,vertices\n");
        for (i, r) in self.regions.iter().enumerate() {
            let verts: Vec<String> = r.polygon.vertices().iter().map(|v| format!("{:.17e}:{:.17e}", v[0], v[1])).collect();
            writeln!(out, "{i},{},{}", r.label(), verts.join(";")).unwrap();
        }
        out
    }

    pub fn segments_csv(&self) -> String {
        let mut out = String::from("id,x1,y1,x2,y2,layer,unit\n");
        for (i, s) in self.segments.iter().enumerate() {
            writeln!(out, "{i},{:.17e},{:.17e},{:.17e},{:.17e},{},{}", s.a[0], s.a[1], s.b[0], s.b[1], s.layer, s.unit).unwrap();
        }
        out
    }
}

/// Split every segment at the endpoints of other segments lying on its interior,
/// so each piece is a single edge between two regions.
fn split_at_junctions(segments: Vec<Segment>, tol: f64) -> Vec<Segment> {
    let mut out = Vec::with_capacity(segments.len() * 2);
    for (i, s) in segments.iter().enumerate() {
        let len = s.length();
        if len == 0.0 {
            continue;
        }
        let (lo, hi) = ([s.a[0].min(s.b[0]) - tol, s.a[1].min(s.b[1]) - tol], [s.a[0].max(s.b[0]) + tol, s.a[1].max(s.b[1]) + tol]);
        let dir = [(s.b[0] - s.a[0]) / len, (s.b[1] - s.a[1]) / len];
        let mut cuts: Vec<f64> = Vec::new();
        for (j, o) in segments.iter().enumerate() {
            if i == j {
                continue;
            }
            for p in [o.a, o.b] {
                if p[0] < lo[0] || p[0] > hi[0] || p[1] < lo[1] || p[1] > hi[1] {
                    continue;
                }
                let (rx, ry) = (p[0] - s.a[0], p[1] - s.a[1]);
                let along = rx * dir[0] + ry * dir[1];
                let across = (rx * dir[1] - ry * dir[0]).abs();
                if across <= tol && along > tol && along < len - tol {
                    cuts.push(along / len);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b) * len <= tol);
        let mut start = s.a;
        for t in cuts {
            let p = s.point_at(t);
            out.push(Segment { a: start, b: p, ..*s });
            start = p;
        }
        out.push(Segment { a: start, ..*s });
    }
    out
}

/// Minimum distance from `p` to a set of segments; `None` for an empty set.
pub fn distance_to_segments(p: Point, segments: &[Segment]) -> Option<f64> {
    segments.iter().map(|s| s.distance(p)).reduce(f64::min)
}

/// Points spaced evenly by arc length along a set of segments.
pub fn sample_polyline(segments: &[Segment], count: usize) -> Vec<Point> {
    let total: f64 = segments.iter().map(Segment::length).sum();
    if segments.is_empty() || count == 0 || total == 0.0 {
        return segments.iter().map(|s| s.a).take(count).collect();
    }
    let mut out = Vec::with_capacity(count);
    let mut idx = 0;
    let mut start = 0.0;
    for i in 0..count {
        let target = total * (i as f64 + 0.5) / count as f64;
        while idx + 1 < segments.len() && start + segments[idx].length() < target {
            start += segments[idx].length();
            idx += 1;
        }
        let len = segments[idx].length();
        let t = if len > 0.0 { ((target - start) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(segments[idx].point_at(t));
    }
    out
}

/// Symmetric Hausdorff distance between two segment sets, measured on
/// `samples` arc-length samples of each.
pub fn hausdorff(a: &[Segment], b: &[Segment], samples: usize) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { f64::INFINITY };
    }
    let directed = |from: &[Segment], to: &[Segment]| {
        sample_polyline(from, samples).into_iter().map(|p| distance_to_segments(p, to).unwrap()).fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Map from `x` to `z_j` as a 2-column matrix and offset, for callers that
/// want the raw arrays.
pub fn region_map(region: &Region, j: usize) -> (&Array2<f64>, &Array1<f64>) {
    let m = &region.maps[j];
    (&m.a, &m.b)
}
