//! Continuous-valued scalar image with bilinear sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Whether bilinear sampling is defined at `p`.
    pub fn in_bounds(&self, p: &Vec2) -> bool {
        self.width >= 2
            && self.height >= 2
            && p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    pub fn bilinear(&self, p: &Vec2) -> Option<f64> {
        self.bilinear_with_gradient(p).map(|(v, _)| v)
    }

    /// Bilinear value and its exact derivative inside the containing cell.
    pub fn bilinear_with_gradient(&self, p: &Vec2) -> Option<(f64, [f64; 2])> {
        if !self.in_bounds(p) {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(self.width - 2);
        let y0 = (p.y.floor() as usize).min(self.height - 2);
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        let i00 = self.get(x0, y0);
        let i10 = self.get(x0 + 1, y0);
        let i01 = self.get(x0, y0 + 1);
        let i11 = self.get(x0 + 1, y0 + 1);
        let top = i00 + fx * (i10 - i00);
        let bottom = i01 + fx * (i11 - i01);
        let value = top + fy * (bottom - top);
        let du = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
        let dv = bottom - top;
        Some((value, [du, dv]))
    }

    /// Central-difference gradient magnitude of the bilinear surface at `p`,
    /// with one-pixel steps. Zero where the stencil leaves the image.
    pub fn gradient_magnitude(&self, p: &Vec2) -> f64 {
        let sample = |dx: f64, dy: f64| self.bilinear(&Vec2::new(p.x + dx, p.y + dy));
        match (sample(1.0, 0.0), sample(-1.0, 0.0), sample(0.0, 1.0), sample(0.0, -1.0)) {
            (Some(r), Some(l), Some(d), Some(u)) => {
                let gx = (r - l) / 2.0;
                let gy = (d - u) / 2.0;
                (gx * gx + gy * gy).sqrt()
            }
            _ => 0.0,
        }
    }

    /// 8-bit grayscale export, clamping to [0, 1].
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Binary PGM (P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_gray8());
        out
    }

    /// 16-bit binary PGM, clamping to [0, 1]; quantization step is 1/65535.
    pub fn to_pgm16(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        out.reserve(2 * self.data.len());
        for v in &self.data {
            out.extend(((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
        }
        out
    }

    /// Decodes a binary PGM of either depth into [0, 1] intensities.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Parse { line: 0, message: format!("pgm: {m}") };
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ascii"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(bad("maxval out of range"));
        }
        let data = &bytes[(pos + 1).min(bytes.len())..];
        let depth = if maxval < 256 { 1 } else { 2 };
        if data.len() != width * height * depth {
            return Err(bad("pixel data length does not match header"));
        }
        let scale = maxval as f64;
        let data = if depth == 1 {
            data.iter().map(|&b| b as f64 / scale).collect()
        } else {
            data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale).collect()
        };
        Ok(Self { width, height, data })
    }
}
