//! Shape geometry, scene rendering, and random scene sampling.
//!
//! Pixel `(x, y)` has its centre at the continuous point `(x, y)`; a pixel
//! belongs to a shape when its centre does.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::skeleton::break_blocks;
use super::{Meta, SymmetrySample};
use crate::error::{Result, SrnError};
use crate::image::{BinaryMap, Image};

pub type Point = (f64, f64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Capsule,
    Rectangle,
    Ellipse,
    PolylineTube,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Capsule => "capsule",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::PolylineTube => "polyline-tube",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    /// Stadium around the segment `a`-`b`.
    Capsule {
        a: Point,
        b: Point,
        radius: f64,
    },
    /// `length` along `angle`, `width` across; `length >= 1.5 * width`.
    Rectangle {
        center: Point,
        angle: f64,
        length: f64,
        width: f64,
    },
    /// Semi-axes `a >= b`, major axis along `angle`.
    Ellipse {
        center: Point,
        angle: f64,
        a: f64,
        b: f64,
    },
    Polyline {
        points: Vec<Point>,
        radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub geometry: Geometry,
    pub intensity: f64,
}

fn sub(p: Point, q: Point) -> Point {
    (p.0 - q.0, p.1 - q.1)
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = sub(b, a);
    let (px, py) = sub(p, a);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
    };
    let (ex, ey) = (px - t * dx, py - t * dy);
    (ex * ex + ey * ey).sqrt()
}

/// Coordinates of `p` in the frame centred at `c` with x along `angle`.
fn local(p: Point, c: Point, angle: f64) -> Point {
    let (dx, dy) = sub(p, c);
    let (s, co) = angle.sin_cos();
    (dx * co + dy * s, -dx * s + dy * co)
}

fn along(c: Point, angle: f64, t: f64) -> Point {
    (c.0 + t * angle.cos(), c.1 + t * angle.sin())
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self.geometry {
            Geometry::Capsule { .. } => ShapeKind::Capsule,
            Geometry::Rectangle { .. } => ShapeKind::Rectangle,
            Geometry::Ellipse { .. } => ShapeKind::Ellipse,
            Geometry::Polyline { .. } => ShapeKind::PolylineTube,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match &self.geometry {
            Geometry::Capsule { a, b, radius } => dist_to_segment(p, *a, *b) <= *radius,
            Geometry::Rectangle {
                center,
                angle,
                length,
                width,
            } => {
                let (u, v) = local(p, *center, *angle);
                u.abs() <= length / 2.0 && v.abs() <= width / 2.0
            }
            Geometry::Ellipse {
                center,
                angle,
                a,
                b,
            } => {
                let (u, v) = local(p, *center, *angle);
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Geometry::Polyline { points, radius } => points
                .windows(2)
                .any(|w| dist_to_segment(p, w[0], w[1]) <= *radius),
        }
    }

    /// Segments of the analytic medial axis that form the ground truth.
    pub fn axis(&self) -> Vec<(Point, Point)> {
        match &self.geometry {
            Geometry::Capsule { a, b, .. } => vec![(*a, *b)],
            Geometry::Rectangle {
                center,
                angle,
                length,
                width,
            } => {
                let h = (length - width) / 2.0;
                vec![(along(*center, *angle, -h), along(*center, *angle, h))]
            }
            Geometry::Ellipse {
                center,
                angle,
                a,
                b,
            } => {
                let h = a - b * b / a;
                vec![(along(*center, *angle, -h), along(*center, *angle, h))]
            }
            Geometry::Polyline { points, .. } => points.windows(2).map(|w| (w[0], w[1])).collect(),
        }
    }

    /// Centre and radius of a circle enclosing the shape.
    pub fn bounds(&self) -> (Point, f64) {
        match &self.geometry {
            Geometry::Capsule { a, b, radius } => {
                let c = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
                (c, dist_to_segment(*a, c, c) + radius)
            }
            Geometry::Rectangle {
                center,
                length,
                width,
                ..
            } => (*center, (length * length + width * width).sqrt() / 2.0),
            Geometry::Ellipse { center, a, .. } => (*center, *a),
            Geometry::Polyline { points, radius } => {
                let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
                for p in points {
                    x0 = x0.min(p.0);
                    y0 = y0.min(p.1);
                    x1 = x1.max(p.0);
                    y1 = y1.max(p.1);
                }
                let c = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
                let r = points
                    .iter()
                    .map(|p| dist_to_segment(*p, c, c))
                    .fold(0.0, f64::max);
                (c, r + radius)
            }
        }
    }

    /// Tight axis-aligned box `(x0, y0, x1, y1)` of the continuous shape.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let around = |c: Point, ex: f64, ey: f64| (c.0 - ex, c.1 - ey, c.0 + ex, c.1 + ey);
        match &self.geometry {
            Geometry::Capsule { a, b, radius } => (
                a.0.min(b.0) - radius,
                a.1.min(b.1) - radius,
                a.0.max(b.0) + radius,
                a.1.max(b.1) + radius,
            ),
            Geometry::Rectangle {
                center,
                angle,
                length,
                width,
            } => {
                let (s, c) = (angle.sin().abs(), angle.cos().abs());
                around(
                    *center,
                    (c * length + s * width) / 2.0,
                    (s * length + c * width) / 2.0,
                )
            }
            Geometry::Ellipse {
                center,
                angle,
                a,
                b,
            } => {
                let (s, c) = (angle.sin(), angle.cos());
                around(
                    *center,
                    (a * a * c * c + b * b * s * s).sqrt(),
                    (a * a * s * s + b * b * c * c).sqrt(),
                )
            }
            Geometry::Polyline { points, radius } => points.iter().fold(
                (f64::MAX, f64::MAX, f64::MIN, f64::MIN),
                |(x0, y0, x1, y1), p| {
                    (
                        x0.min(p.0 - radius),
                        y0.min(p.1 - radius),
                        x1.max(p.0 + radius),
                        y1.max(p.1 + radius),
                    )
                },
            ),
        }
    }

    /// `(pose, size)` as meta strings.
    fn describe(&self) -> (String, String) {
        match &self.geometry {
            Geometry::Capsule { a, b, radius } => (
                format!("{:.3},{:.3};{:.3},{:.3}", a.0, a.1, b.0, b.1),
                format!("radius={radius:.3}"),
            ),
            Geometry::Rectangle {
                center,
                angle,
                length,
                width,
            } => (
                format!("{:.3},{:.3};angle={angle:.4}", center.0, center.1),
                format!("length={length:.3},width={width:.3}"),
            ),
            Geometry::Ellipse {
                center,
                angle,
                a,
                b,
            } => (
                format!("{:.3},{:.3};angle={angle:.4}", center.0, center.1),
                format!("a={a:.3},b={b:.3}"),
            ),
            Geometry::Polyline { points, radius } => (
                points
                    .iter()
                    .map(|p| format!("{:.3},{:.3}", p.0, p.1))
                    .collect::<Vec<_>>()
                    .join(";"),
                format!("radius={radius:.3}"),
            ),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = match &self.geometry {
            Geometry::Capsule { radius, .. } | Geometry::Polyline { radius, .. } => *radius > 0.0,
            Geometry::Rectangle { length, width, .. } => *width > 0.0 && *length >= 1.5 * width,
            Geometry::Ellipse { a, b, .. } => *b > 0.0 && a > b,
        };
        if !positive {
            return Err(SrnError::Input(format!(
                "degenerate {} size",
                self.kind().name()
            )));
        }
        if let Geometry::Polyline { points, .. } = &self.geometry {
            if points.len() < 2 {
                return Err(SrnError::Input("polyline needs two points".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Background {
    Flat(f64),
    /// Linear ramp from `from` to `to` along `angle`.
    Gradient {
        from: f64,
        to: f64,
        angle: f64,
    },
    /// Value noise around `base` plus distractor ring outlines.
    Clutter {
        base: f64,
        seed: u64,
    },
}

impl Background {
    fn name(&self) -> &'static str {
        match self {
            Background::Flat(_) => "flat",
            Background::Gradient { .. } => "gradient",
            Background::Clutter { .. } => "clutter",
        }
    }
}

/// Axis-aligned rectangle, inclusive pixel bounds, repainted with background.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Occluder {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub shapes: Vec<Shape>,
    pub background: Background,
    pub occlusion: Option<Occluder>,
    pub noise_seed: u64,
    pub noise_std: f64,
}

/// Pixels of the segment between the rounded end points.
pub fn bresenham(a: Point, b: Point) -> Vec<(isize, isize)> {
    let (mut x0, mut y0) = (a.0.round() as isize, a.1.round() as isize);
    let (x1, y1) = (b.0.round() as isize, b.1.round() as isize);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn render_background(spec: &SceneSpec) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    match &spec.background {
        Background::Flat(v) => vec![*v; w * h],
        Background::Gradient { from, to, angle } => {
            let (s, c) = angle.sin_cos();
            let proj = |x: f64, y: f64| x * c + y * s;
            let corners = [
                proj(0.0, 0.0),
                proj(w as f64, 0.0),
                proj(0.0, h as f64),
                proj(w as f64, h as f64),
            ];
            let lo = corners.iter().copied().fold(f64::MAX, f64::min);
            let hi = corners.iter().copied().fold(f64::MIN, f64::max);
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let t = (proj(x as f64, y as f64) - lo) / (hi - lo);
                    out.push(from + t * (to - from));
                }
            }
            out
        }
        Background::Clutter { base, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let cell = 8usize;
            let (gw, gh) = (w / cell + 2, h / cell + 2);
            let grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-0.12..0.12)).collect();
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let (fx, fy) = (x as f64 / cell as f64, y as f64 / cell as f64);
                    let (ix, iy) = (fx as usize, fy as usize);
                    let (tx, ty) = (fx - ix as f64, fy - iy as f64);
                    let g = |i: usize, j: usize| grid[j * gw + i];
                    let v = g(ix, iy) * (1.0 - tx) * (1.0 - ty)
                        + g(ix + 1, iy) * tx * (1.0 - ty)
                        + g(ix, iy + 1) * (1.0 - tx) * ty
                        + g(ix + 1, iy + 1) * tx * ty;
                    out.push(base + v);
                }
            }
            let rings = rng.gen_range(2..=4);
            for _ in 0..rings {
                let c = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
                let r = rng.gen_range(4.0..(w.min(h) as f64 / 5.0).max(5.0));
                let v = rng.gen_range(0.45..0.8);
                for y in 0..h {
                    for x in 0..w {
                        let d = dist_to_segment((x as f64, y as f64), c, c);
                        if (d - r).abs() <= 0.5 {
                            out[y * w + x] = v;
                        }
                    }
                }
            }
            out
        }
    }
}

/// Renders a scene and its analytic medial-axis ground truth.
pub fn gen_sample(spec: &SceneSpec) -> Result<SymmetrySample> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(SrnError::Input("empty canvas".into()));
    }
    for (i, s) in spec.shapes.iter().enumerate() {
        s.validate()?;
        let (x0, y0, x1, y1) = s.extent();
        if x0 < 0.0 || y0 < 0.0 || x1 > (w - 1) as f64 || y1 > (h - 1) as f64 {
            return Err(SrnError::Input(format!(
                "shape {i} ({}) extends outside the canvas",
                s.kind().name()
            )));
        }
    }

    let background = render_background(spec);
    let mut data = background.clone();
    for s in &spec.shapes {
        for y in 0..h {
            for x in 0..w {
                if s.contains((x as f64, y as f64)) {
                    data[y * w + x] = s.intensity;
                }
            }
        }
    }
    if let Some(o) = spec.occlusion {
        for y in o.y0..=o.y1.min(h - 1) {
            for x in o.x0..=o.x1.min(w - 1) {
                data[y * w + x] = background[y * w + x];
            }
        }
    }
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
        let normal =
            Normal::new(0.0, spec.noise_std).map_err(|e| SrnError::Input(e.to_string()))?;
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    let mut image = Image::new(
        1,
        w,
        h,
        data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )?;
    image.quantize();

    let mut mask = BinaryMap::new(w, h);
    for s in &spec.shapes {
        for (a, b) in s.axis() {
            for (x, y) in bresenham(a, b) {
                mask.set_signed(x, y, true);
            }
        }
    }
    break_blocks(&mut mask);

    let mut meta = Meta::default();
    meta.push("width", w);
    meta.push("height", h);
    meta.push("background", spec.background.name());
    meta.push("noise_seed", spec.noise_seed);
    meta.push("shapes", spec.shapes.len());
    for (i, s) in spec.shapes.iter().enumerate() {
        let (pose, size) = s.describe();
        meta.push(format!("shape{i}.kind"), s.kind().name());
        meta.push(format!("shape{i}.pose"), pose);
        meta.push(format!("shape{i}.size"), size);
        meta.push(format!("shape{i}.intensity"), format!("{:.4}", s.intensity));
    }
    meta.push("capsule_axis", "between_cap_centres");
    meta.push(
        "occluder",
        match spec.occlusion {
            Some(o) => format!("{},{},{},{}", o.x0, o.y0, o.x1, o.y1),
            None => "none".into(),
        },
    );
    Ok(SymmetrySample { image, mask, meta })
}

/// Mask of the pixels covered by any shape, ignoring occlusion.
pub fn shape_mask(spec: &SceneSpec) -> BinaryMap {
    let mut m = BinaryMap::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            if spec.shapes.iter().any(|s| s.contains((x as f64, y as f64))) {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// Difficulty knobs for one sampled scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneTraits {
    pub multi_object: bool,
    pub occluded: bool,
    pub clutter: bool,
    pub gradient: bool,
}

fn random_shape(rng: &mut ChaCha8Rng, k: f64, center: Point) -> Shape {
    let kinds = [
        ShapeKind::Capsule,
        ShapeKind::Rectangle,
        ShapeKind::Ellipse,
        ShapeKind::PolylineTube,
    ];
    let kind = *kinds.choose(rng).expect("non-empty");
    let angle = rng.gen_range(0.0..PI);
    let intensity = rng.gen_range(0.6..0.95);
    let geometry = match kind {
        ShapeKind::Capsule => {
            let radius = rng.gen_range(2.5..4.5) * k;
            let half = rng.gen_range(4.0..12.0) * k;
            Geometry::Capsule {
                a: along(center, angle, -half),
                b: along(center, angle, half),
                radius,
            }
        }
        ShapeKind::Rectangle => {
            let width = rng.gen_range(5.0..9.0) * k;
            let min_len = (1.5 * width).max(width + 6.0 * k);
            let length = rng.gen_range(min_len..min_len.max(28.0 * k) + 1e-9);
            Geometry::Rectangle {
                center,
                angle,
                length,
                width,
            }
        }
        ShapeKind::Ellipse => {
            let b = rng.gen_range(3.0..5.5) * k;
            let min_a = (1.6 * b).max(b + 5.0 * k);
            let a = rng.gen_range(min_a..min_a.max(15.0 * k) + 1e-9);
            Geometry::Ellipse {
                center,
                angle,
                a,
                b,
            }
        }
        ShapeKind::PolylineTube => {
            let radius = rng.gen_range(2.0..3.5) * k;
            let l1 = rng.gen_range(7.0..12.0) * k;
            let l2 = rng.gen_range(7.0..12.0) * k;
            let turn = rng.gen_range(0.35..1.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let p1 = center;
            let p0 = along(p1, angle + PI, l1);
            let p2 = along(p1, angle + turn, l2);
            Geometry::Polyline {
                points: vec![p0, p1, p2],
                radius,
            }
        }
    };
    Shape {
        geometry,
        intensity,
    }
}

/// Places `count` non-overlapping random shapes; `None` if placement fails.
fn place_shapes(rng: &mut ChaCha8Rng, size: usize, count: usize) -> Option<Vec<Shape>> {
    let k = size as f64 / 64.0;
    let margin = 2.0;
    let mut shapes: Vec<Shape> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..400 {
            let c = (
                rng.gen_range(0.0..size as f64),
                rng.gen_range(0.0..size as f64),
            );
            let s = random_shape(rng, k, c);
            let (bc, r) = s.bounds();
            let hi = (size - 1) as f64 - margin;
            if bc.0 - r < margin || bc.1 - r < margin || bc.0 + r > hi || bc.1 + r > hi {
                continue;
            }
            let clear = shapes.iter().all(|o| {
                let (oc, or) = o.bounds();
                dist_to_segment(bc, oc, oc) > r + or + margin
            });
            if clear {
                shapes.push(s);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(shapes)
}

/// Samples a square scene with the given traits.
pub fn random_scene(size: usize, traits: SceneTraits, rng: &mut ChaCha8Rng) -> SceneSpec {
    let base = rng.gen_range(0.08..0.35);
    let background = if traits.clutter {
        Background::Clutter {
            base,
            seed: rng.gen(),
        }
    } else if traits.gradient {
        Background::Gradient {
            from: base,
            to: (base + rng.gen_range(0.1..0.25)).min(0.5),
            angle: rng.gen_range(0.0..2.0 * PI),
        }
    } else {
        Background::Flat(base)
    };
    let shapes = loop {
        let count = if traits.multi_object {
            rng.gen_range(2..=3)
        } else {
            1
        };
        if let Some(s) = place_shapes(rng, size, count) {
            break s;
        }
        if let Some(s) = place_shapes(rng, size, count.min(2)) {
            break s;
        }
    };
    let occlusion = traits.occluded.then(|| {
        let axis = shapes[0].axis();
        let (a, b) = axis[rng.gen_range(0..axis.len())];
        let t = rng.gen_range(0.2..0.8);
        let p = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        let half = rng.gen_range(3.0..6.0) * size as f64 / 64.0;
        let clamp = |v: f64| v.round().clamp(0.0, (size - 1) as f64) as usize;
        Occluder {
            x0: clamp(p.0 - half),
            y0: clamp(p.1 - half),
            x1: clamp(p.0 + half),
            y1: clamp(p.1 + half),
        }
    });
    SceneSpec {
        width: size,
        height: size,
        shapes,
        background,
        occlusion,
        noise_seed: rng.gen(),
        noise_std: 0.02,
    }
}
