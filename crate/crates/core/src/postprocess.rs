//! Non-maximal suppression and thresholding of soft symmetry maps.
//!
//! Orientation comes from the Gaussian-smoothed structure tensor of the
//! response. The reported angle is the ridge direction, i.e. perpendicular to
//! the dominant gradient eigenvector, so a horizontal ridge has angle 0.
//! Pixels are compared with their bilinear neighbours one pixel away along
//! the ridge normal.

use std::f64::consts::PI;

use crate::error::{Result, SrnError};
use crate::image::{BinaryMap, ResponseMap};

/// Structure-tensor smoothing radius used by [`nms`].
pub const NMS_RADIUS: usize = 2;
/// Below this coherence an orientation is unreliable and suppression is skipped.
pub const MIN_COHERENCE: f64 = 0.05;
const MIN_ENERGY: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct OrientationMap {
    pub width: usize,
    pub height: usize,
    /// Ridge direction in `[0, pi)`.
    pub theta: Vec<f64>,
    /// `(l1 - l2) / (l1 + l2)` of the smoothed structure tensor.
    pub coherence: Vec<f64>,
    pub confident: Vec<bool>,
}

impl OrientationMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.theta[y * self.width + x]
    }
}

fn gaussian_1d(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamped borders.
fn blur(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * data[y * w + clamp(x as isize + k as isize - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * tmp[clamp(y as isize + k as isize - half, h) * w + x])
                .sum();
        }
    }
    out
}

/// Per-pixel ridge orientation from the structure tensor smoothed with `sigma = radius`.
pub fn estimate_orientation(map: &ResponseMap, radius: usize) -> Result<OrientationMap> {
    if radius == 0 {
        return Err(SrnError::Config(
            "orientation radius must be at least 1".into(),
        ));
    }
    let (w, h) = (map.width, map.height);
    let v = |x: isize, y: isize| {
        map.get(
            x.clamp(0, w as isize - 1) as usize,
            y.clamp(0, h as isize - 1) as usize,
        )
    };
    let mut jxx = vec![0.0; w * h];
    let mut jxy = vec![0.0; w * h];
    let mut jyy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (v(x + 1, y) - v(x - 1, y)) / 2.0;
            let gy = (v(x, y + 1) - v(x, y - 1)) / 2.0;
            let i = y as usize * w + x as usize;
            jxx[i] = gx * gx;
            jxy[i] = gx * gy;
            jyy[i] = gy * gy;
        }
    }
    let k = gaussian_1d(radius as f64);
    let (jxx, jxy, jyy) = (
        blur(&jxx, w, h, &k),
        blur(&jxy, w, h, &k),
        blur(&jyy, w, h, &k),
    );
    let mut theta = Vec::with_capacity(w * h);
    let mut coherence = Vec::with_capacity(w * h);
    let mut confident = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let trace = jxx[i] + jyy[i];
        let diff = ((jxx[i] - jyy[i]).powi(2) + 4.0 * jxy[i] * jxy[i]).sqrt();
        let coh = if trace > MIN_ENERGY {
            diff / trace
        } else {
            0.0
        };
        let gradient_dir = 0.5 * (2.0 * jxy[i]).atan2(jxx[i] - jyy[i]);
        theta.push((gradient_dir + PI / 2.0).rem_euclid(PI));
        coherence.push(coh);
        confident.push(trace > MIN_ENERGY && coh >= MIN_COHERENCE);
    }
    Ok(OrientationMap {
        width: w,
        height: h,
        theta,
        coherence,
        confident,
    })
}

/// Bilinear sample; points outside the map read as `None`.
fn sample(map: &ResponseMap, x: f64, y: f64) -> Option<f64> {
    let eps = 1e-9;
    if x < -eps || y < -eps || x > (map.width - 1) as f64 + eps || y > (map.height - 1) as f64 + eps
    {
        return None;
    }
    let x = x.clamp(0.0, (map.width - 1) as f64);
    let y = y.clamp(0.0, (map.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(map.width - 1), (y0 + 1).min(map.height - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let snap = |t: f64| {
        if t < eps {
            0.0
        } else if t > 1.0 - eps {
            1.0
        } else {
            t
        }
    };
    let (tx, ty) = (snap(tx), snap(ty));
    let mut acc = 0.0;
    for (xx, yy, wgt) in [
        (x0, y0, (1.0 - tx) * (1.0 - ty)),
        (x1, y0, tx * (1.0 - ty)),
        (x0, y1, (1.0 - tx) * ty),
        (x1, y1, tx * ty),
    ] {
        if wgt != 0.0 {
            acc += wgt * map.get(xx, yy);
        }
    }
    Some(acc)
}

/// Length of the run of values equal to `v` stepping by `(dx, dy)`, and the
/// value just past it (`None` past the border).
fn walk(map: &ResponseMap, x: f64, y: f64, dx: f64, dy: f64, v: f64) -> (usize, Option<f64>) {
    let limit = map.width.max(map.height);
    let mut k = 1;
    loop {
        let s = sample(map, x + k as f64 * dx, y + k as f64 * dy);
        match s {
            Some(s) if s == v && k <= limit => k += 1,
            other => return (k - 1, other),
        }
    }
}

/// One suppression pass; returns the new map and whether anything changed.
fn nms_pass(map: &ResponseMap, radius: usize) -> Result<(ResponseMap, bool)> {
    let orient = estimate_orientation(map, radius)?;
    let mut out = map.clone();
    let mut changed = false;
    for y in 0..map.height {
        for x in 0..map.width {
            let i = y * map.width + x;
            let v = map.data[i];
            if v == 0.0 || !orient.confident[i] {
                continue;
            }
            let (s, c) = orient.theta[i].sin_cos();
            // unit normal to the ridge; "forward" is +normal
            let (nx, ny) = (-s, c);
            let (xf, yf) = (x as f64, y as f64);
            let (fc, fv) = walk(map, xf, yf, nx, ny, v);
            let (bc, bv) = walk(map, xf, yf, -nx, -ny, v);
            let below = |n: Option<f64>| n.map_or(true, |n| n < v);
            // Strictly above the forward side, at least the backward side; a flat
            // run keeps its centre (the backward-of-centre pixel when even).
            let keep = below(fv) && below(bv) && (bc == fc || bc == fc + 1);
            if !keep {
                out.data[i] = 0.0;
                changed = true;
            }
        }
    }
    Ok((out, changed))
}

/// Thins ridges to one pixel. Passes repeat, re-estimating orientation, until
/// nothing changes, so `nms(nms(m)) == nms(m)`.
pub fn nms(map: &ResponseMap) -> ResponseMap {
    nms_with_radius(map, NMS_RADIUS).expect("radius is positive")
}

pub fn nms_with_radius(map: &ResponseMap, radius: usize) -> Result<ResponseMap> {
    let mut cur = map.clone();
    loop {
        let (next, changed) = nms_pass(&cur, radius)?;
        if !changed {
            return Ok(cur);
        }
        cur = next;
    }
}

/// `value >= t`.
pub fn binarize(map: &ResponseMap, t: f64) -> BinaryMap {
    BinaryMap {
        width: map.width,
        height: map.height,
        data: map.data.iter().map(|&v| v >= t).collect(),
    }
}
