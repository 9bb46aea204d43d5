//! Planar image, binary mask, and soft response containers.

use crate::error::{Result, SrnError};
use crate::tensor::Tensor;

/// Planar (channel-major) image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 || data.len() != channels * width * height {
            return Err(SrnError::Shape(format!(
                "{channels}x{height}x{width} image with {} values",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn filled(channels: usize, width: usize, height: usize, value: f64) -> Self {
        Image {
            channels,
            width,
            height,
            data: vec![value; channels * width * height],
        }
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// `1 x C x H x W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("image dims are consistent")
    }

    /// Rounds every value to the nearest multiple of 1/255.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = quantize_u8(*v) as f64 / 255.0;
        }
    }
}

pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMap {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(SrnError::Shape(format!(
                "{width}x{height} mask with {} values",
                data.len()
            )));
        }
        Ok(BinaryMap {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds reads are `false`.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn set_signed(&mut self, x: isize, y: isize, v: bool) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.set(x as usize, y as usize, v);
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub fn union(&self, other: &BinaryMap) -> BinaryMap {
        assert_eq!((self.width, self.height), (other.width, other.height));
        BinaryMap {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    /// True when no 2x2 window is entirely set.
    pub fn is_thin(&self) -> bool {
        for y in 0..self.height.saturating_sub(1) {
            for x in 0..self.width.saturating_sub(1) {
                if self.get(x, y)
                    && self.get(x + 1, y)
                    && self.get(x, y + 1)
                    && self.get(x + 1, y + 1)
                {
                    return false;
                }
            }
        }
        true
    }
}

/// Soft per-pixel response in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ResponseMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(SrnError::Shape(format!(
                "{width}x{height} map with {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SrnError::Input(format!(
                "response value {v} outside [0, 1]"
            )));
        }
        Ok(ResponseMap {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ResponseMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Takes the single plane of a `1x1xHxW` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = t.nchw()?;
        if n != 1 || c != 1 {
            return Err(SrnError::Shape(format!(
                "expected one plane, got {:?}",
                t.dims()
            )));
        }
        Self::new(w, h, t.data().to_vec())
    }
}

/// Reflect-pads a `1xCxHxW` tensor on the bottom/right so both spatial dims
/// become multiples of `multiple`.
pub fn pad_reflect(t: &Tensor, multiple: usize) -> Result<Tensor> {
    let [n, c, h, w] = t.nchw()?;
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    let reflect = |i: usize, len: usize| -> usize {
        if len == 1 {
            return 0;
        }
        let period = 2 * (len - 1);
        let m = i % period;
        if m < len {
            m
        } else {
            period - m
        }
    };
    let src = t.data();
    let mut data = Vec::with_capacity(n * c * ph * pw);
    for p in 0..n * c {
        for y in 0..ph {
            let sy = reflect(y, h);
            for x in 0..pw {
                data.push(src[(p * h + sy) * w + reflect(x, w)]);
            }
        }
    }
    Tensor::new(vec![n, c, ph, pw], data)
}
