//! Deterministic SVG rendering of partitions, boundaries and heat maps.

use std::fmt::Write;

use crate::partition::{BBox, Partition2D, Point, Segment};

const CURRENT: &str = "#1f4fd8";
const EARLIER: &str = "#9a9a9a";
const CLASS_COLORS: [&str; 4] = ["#d62728", "#2ca02c", "#ff7f0e", "#9467bd"];

/// A dot drawn over a figure, optionally colored by class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dot {
    pub at: Point,
    pub class: Option<usize>,
}

impl Dot {
    pub fn from_rows(xs: ndarray::ArrayView2<f64>, labels: Option<&[usize]>) -> Vec<Dot> {
        xs.rows().into_iter().enumerate().map(|(i, r)| Dot { at: [r[0], r[1]], class: labels.map(|l| l[i]) }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvgStyle {
    /// Canvas edge length in pixels; the box is stretched to a square.
    pub size: f64,
    pub fill_regions: bool,
    pub dot_radius: f64,
}

impl Default for SvgStyle {
    fn default() -> Self {
        SvgStyle { size: 512.0, fill_regions: true, dot_radius: 3.0 }
    }
}

struct Canvas {
    bbox: BBox,
    size: f64,
    out: String,
}

impl Canvas {
    fn new(bbox: BBox, size: f64) -> Self {
        let mut out = String::new();
        writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s:.0}" height="{s:.0}" viewBox="0 0 {s:.0} {s:.0}">"#, s = size)
            .unwrap();
        Canvas { bbox, size, out }
    }

    fn px(&self, p: Point) -> (f64, f64) {
        let x = (p[0] - self.bbox.min[0]) / self.bbox.width() * self.size;
        let y = (self.bbox.max[1] - p[1]) / self.bbox.height() * self.size;
        (x, y)
    }

    fn rect(&mut self) {
        writeln!(
            self.out,
            r#"<rect x="0" y="0" width="{s:.3}" height="{s:.3}" fill="white" stroke="black" stroke-width="1"/>"#,
            s = self.size
        )
        .unwrap();
    }

    fn polygon(&mut self, vertices: &[Point], fill: &str) {
        let pts: Vec<String> = vertices
            .iter()
            .map(|&v| {
                let (x, y) = self.px(v);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        writeln!(self.out, r#"<polygon points="{}" fill="{fill}" stroke="none"/>"#, pts.join(" ")).unwrap();
    }

    fn segment(&mut self, s: &Segment, color: &str, width: f64) {
        let (x1, y1) = self.px(s.a);
        let (x2, y2) = self.px(s.b);
        writeln!(self.out, r#"<path d="M{x1:.3} {y1:.3} L{x2:.3} {y2:.3}" stroke="{color}" stroke-width="{width:.2}" fill="none"/>"#)
            .unwrap();
    }

    fn dots(&mut self, dots: &[Dot], r: f64) {
        for d in dots {
            let (x, y) = self.px(d.at);
            let color = d.class.map_or("black", |c| CLASS_COLORS[c % CLASS_COLORS.len()]);
            writeln!(self.out, r#"<circle cx="{x:.3}" cy="{y:.3}" r="{r:.2}" fill="{color}"/>"#).unwrap();
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Pastel fill derived from a region label, stable across runs.
fn region_fill(label: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    let c = |shift: u32| 170 + ((h >> shift) & 0x3f) as u8;
    format!("#{:02x}{:02x}{:02x}", c(0), c(8), c(16))
}

/// Render a partition. Segments of the deepest traced layer are blue, earlier ones gray.
pub fn partition_svg(partition: &Partition2D, dots: &[Dot], style: SvgStyle) -> String {
    let mut c = Canvas::new(partition.bbox, style.size);
    c.rect();
    if style.fill_regions && partition.depth > 0 {
        for r in &partition.regions {
            c.polygon(r.polygon.vertices(), &region_fill(&r.label()));
        }
    }
    for s in &partition.segments {
        if s.layer == partition.depth {
            c.segment(s, CURRENT, 1.5);
        } else {
            c.segment(s, EARLIER, 1.0);
        }
    }
    c.dots(dots, style.dot_radius);
    c.finish()
}

/// Overlay several boundaries (one per realization) on the same box.
pub fn boundary_overlay_svg(bbox: BBox, boundaries: &[Vec<Segment>], dots: &[Dot], style: SvgStyle) -> String {
    let mut c = Canvas::new(bbox, style.size);
    c.rect();
    for b in boundaries {
        for s in b {
            c.segment(s, CURRENT, 0.8);
        }
    }
    c.dots(dots, style.dot_radius);
    c.finish()
}

/// Grayscale heat map; `values` is row-major with row 0 at the bottom of the box,
/// each value in `[0, 1]` with 1 drawn black.
pub fn heatmap_svg(bbox: BBox, rows: usize, cols: usize, values: &[f64], dots: &[Dot], style: SvgStyle) -> String {
    assert_eq!(values.len(), rows * cols, "heat map needs rows * cols values");
    let mut c = Canvas::new(bbox, style.size);
    c.rect();
    let (cw, ch) = (style.size / cols as f64, style.size / rows as f64);
    for r in 0..rows {
        for col in 0..cols {
            let v = values[r * cols + col].clamp(0.0, 1.0);
            let g = (255.0 * (1.0 - v)).round() as u8;
            let y = style.size - (r + 1) as f64 * ch;
            writeln!(
                c.out,
                r##"<rect x="{:.3}" y="{y:.3}" width="{cw:.3}" height="{ch:.3}" fill="#{g:02x}{g:02x}{g:02x}"/>"##,
                col as f64 * cw
            )
            .unwrap();
        }
    }
    c.dots(dots, style.dot_radius);
    c.finish()
}
