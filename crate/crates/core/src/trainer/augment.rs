//! Dihedral and multi-scale augmentation of image/mask pairs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SrnError};
use crate::image::{BinaryMap, Image};
use crate::synth::SymmetrySample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Augment {
    #[default]
    None,
    /// The 8 dihedral variants: 4 rotations, each optionally mirrored.
    RotateFlip,
    /// Dihedral variants at scales 0.8, 1.0 and 1.2.
    RotateFlipMultiScale,
}

pub const SCALES: [f64; 3] = [0.8, 1.0, 1.2];

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augment::None => "None",
            Augment::RotateFlip => "RotateFlip",
            Augment::RotateFlipMultiScale => "RotateFlipMultiScale",
        })
    }
}

impl FromStr for Augment {
    type Err = SrnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "None" => Ok(Augment::None),
            "RotateFlip" => Ok(Augment::RotateFlip),
            "RotateFlipMultiScale" => Ok(Augment::RotateFlipMultiScale),
            _ => Err(SrnError::Config(format!("unknown augmentation {s:?}"))),
        }
    }
}

/// Generic planar remap: `dst(x, y) = src(f(x, y))` with new dims.
fn remap<T: Copy>(
    src: &[T],
    planes: usize,
    w: usize,
    h: usize,
    nw: usize,
    nh: usize,
    f: impl Fn(usize, usize) -> (usize, usize),
) -> Vec<T> {
    let mut out = Vec::with_capacity(planes * nw * nh);
    for p in 0..planes {
        for y in 0..nh {
            for x in 0..nw {
                let (sx, sy) = f(x, y);
                out.push(src[(p * h + sy) * w + sx]);
            }
        }
    }
    out
}

/// Rotates image and mask by 90 degrees counter-clockwise.
pub fn rotate90(s: &SymmetrySample) -> SymmetrySample {
    let (w, h) = (s.image.width, s.image.height);
    // dst is h wide and w tall; dst(x, y) = src(w - 1 - y, x)
    let f = |x: usize, y: usize| (w - 1 - y, x);
    SymmetrySample {
        image: Image {
            channels: s.image.channels,
            width: h,
            height: w,
            data: remap(&s.image.data, s.image.channels, w, h, h, w, f),
        },
        mask: BinaryMap {
            width: h,
            height: w,
            data: remap(&s.mask.data, 1, w, h, h, w, f),
        },
        meta: s.meta.clone(),
    }
}

/// Mirrors image and mask left to right.
pub fn flip(s: &SymmetrySample) -> SymmetrySample {
    let (w, h) = (s.image.width, s.image.height);
    let f = |x: usize, y: usize| (w - 1 - x, y);
    SymmetrySample {
        image: Image {
            channels: s.image.channels,
            width: w,
            height: h,
            data: remap(&s.image.data, s.image.channels, w, h, w, h, f),
        },
        mask: BinaryMap {
            width: w,
            height: h,
            data: remap(&s.mask.data, 1, w, h, w, h, f),
        },
        meta: s.meta.clone(),
    }
}

/// Rescales by `factor`: bilinear image, nearest-neighbour mask.
///
/// The mask is not re-thinned, so curves may break when shrinking and
/// thicken when enlarging.
pub fn rescale(s: &SymmetrySample, factor: f64) -> SymmetrySample {
    let (w, h) = (s.image.width, s.image.height);
    let nw = ((w as f64 * factor).round() as usize).max(1);
    let nh = ((h as f64 * factor).round() as usize).max(1);
    let (fx, fy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    let src_coord = |d: usize, scale: f64, len: usize| {
        ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64)
    };

    let mut data = Vec::with_capacity(s.image.channels * nw * nh);
    for c in 0..s.image.channels {
        for y in 0..nh {
            let sy = src_coord(y, fy, h);
            let (y0, ty) = (sy.floor() as usize, sy.fract());
            let y1 = (y0 + 1).min(h - 1);
            for x in 0..nw {
                let sx = src_coord(x, fx, w);
                let (x0, tx) = (sx.floor() as usize, sx.fract());
                let x1 = (x0 + 1).min(w - 1);
                let v = s.image.get(c, x0, y0) * (1.0 - tx) * (1.0 - ty)
                    + s.image.get(c, x1, y0) * tx * (1.0 - ty)
                    + s.image.get(c, x0, y1) * (1.0 - tx) * ty
                    + s.image.get(c, x1, y1) * tx * ty;
                data.push(v);
            }
        }
    }
    let mut image = Image {
        channels: s.image.channels,
        width: nw,
        height: nh,
        data,
    };
    image.quantize();
    let mask = BinaryMap {
        width: nw,
        height: nh,
        data: remap(&s.mask.data, 1, w, h, nw, nh, |x, y| {
            (
                src_coord(x, fx, w).round() as usize,
                src_coord(y, fy, h).round() as usize,
            )
        }),
    };
    SymmetrySample {
        image,
        mask,
        meta: s.meta.clone(),
    }
}

fn dihedral(s: &SymmetrySample, tag: &str) -> Vec<SymmetrySample> {
    let mut out = Vec::with_capacity(8);
    for mirrored in [false, true] {
        let mut cur = if mirrored { flip(s) } else { s.clone() };
        for rot in 0..4 {
            let mut v = cur.clone();
            v.meta.push(
                "augment",
                format!(
                    "{tag}rot{}{}",
                    rot * 90,
                    if mirrored { "_flip" } else { "" }
                ),
            );
            out.push(v);
            cur = rotate90(&cur);
        }
    }
    out
}

/// All variants of `sample` under `mode`; the first is always the original.
pub fn augment(sample: &SymmetrySample, mode: Augment) -> Vec<SymmetrySample> {
    match mode {
        Augment::None => vec![sample.clone()],
        Augment::RotateFlip => dihedral(sample, ""),
        Augment::RotateFlipMultiScale => {
            let mut out = dihedral(sample, "");
            for &k in &SCALES {
                if k != 1.0 {
                    out.extend(dihedral(&rescale(sample, k), &format!("scale{k}_")));
                }
            }
            out
        }
    }
}
