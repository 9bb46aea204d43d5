//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::path::Path;

use crate::error::{Result, SrnError};
use crate::image::{quantize_u8, BinaryMap, Image};
use crate::io_util::write_atomic;

/// Encodes a 1-channel image as P5 or a 3-channel image as P6.
pub fn encode(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(SrnError::Shape(format!(
                "cannot encode a {c}-channel image"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    let plane = image.width * image.height;
    out.reserve(plane * image.channels);
    for i in 0..plane {
        for c in 0..image.channels {
            out.push(quantize_u8(image.data[c * plane + i]));
        }
    }
    Ok(out)
}

pub fn encode_mask(mask: &BinaryMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> SrnError {
        SrnError::format(self.path, self.pos, msg)
    }

    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| SrnError::format(self.path, start, format!("{what} out of range")))
    }
}

/// Decodes P5/P6 bytes into `(channels, width, height, samples)`.
fn decode_raw(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(cur.err("expected P5 or P6 magic")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(SrnError::format(
            path,
            maxval_at,
            format!("maxval {maxval} is not 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(SrnError::format(path, maxval_at, "zero image dimension"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected a single whitespace byte after maxval")),
    }
    let n = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < n {
        return Err(SrnError::format(
            path,
            bytes.len(),
            format!("truncated payload: {} of {n} bytes", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(SrnError::format(
            path,
            cur.pos + n,
            "trailing bytes after payload",
        ));
    }
    Ok((channels, width, height, payload.to_vec()))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Image> {
    let (channels, width, height, samples) = decode_raw(bytes, path)?;
    let plane = width * height;
    let mut data = vec![0.0; samples.len()];
    for i in 0..plane {
        for c in 0..channels {
            data[c * plane + i] = samples[i * channels + c] as f64 / 255.0;
        }
    }
    Image::new(channels, width, height, data)
}

/// Decodes a P5 mask whose samples are all 0 or 255.
pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<BinaryMap> {
    let (channels, width, height, samples) = decode_raw(bytes, path)?;
    if channels != 1 {
        return Err(SrnError::format(path, 0, "mask must be a P5 graymap"));
    }
    let header = bytes.len() - samples.len();
    let data = samples
        .iter()
        .enumerate()
        .map(|(i, &v)| match v {
            0 => Ok(false),
            255 => Ok(true),
            v => Err(SrnError::format(
                path,
                header + i,
                format!("mask value {v} is not 0 or 255"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryMap::from_data(width, height, data)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &encode(image)?)
}

pub fn write_mask(path: &Path, mask: &BinaryMap) -> Result<()> {
    write_atomic(path, &encode_mask(mask))
}

pub fn read_image(path: &Path) -> Result<Image> {
    decode(&std::fs::read(path)?, path)
}

pub fn read_mask(path: &Path) -> Result<BinaryMap> {
    decode_mask(&std::fs::read(path)?, path)
}
