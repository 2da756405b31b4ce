//! Metric depth maps from an external depth estimator.
//!
//! Two encodings are read: PFM (single channel, float32 meters, rows stored
//! bottom-up) and 16-bit grayscale PNG whose values are multiplied by
//! `scale_m_per_unit`. Either may carry a sidecar `<file stem>.json` with
//! `{ "scale_m_per_unit": .., "f2": .. }`; the PNG form requires it.

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::camera::DepthSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Row-major, top row first, meters; 0 marks missing depth.
    pub meters: Vec<f64>,
    /// Focal length of the depth estimator, pixels; `None` means "same as
    /// the motion estimator" (no calibration).
    pub f2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    #[serde(default = "unit_scale")]
    pub scale_m_per_unit: f64,
    #[serde(default)]
    pub f2: Option<f64>,
}

fn unit_scale() -> f64 {
    1.0
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl DepthMap {
    pub fn new(width: u32, height: u32, meters: Vec<f64>, f2: Option<f64>) -> Result<Self> {
        let map = DepthMap {
            width,
            height,
            meters,
            f2,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("depth map has zero size"));
        }
        if self.meters.len() != self.width as usize * self.height as usize {
            return Err(Error::validation(format!(
                "depth map has {} values for {}x{} pixels",
                self.meters.len(),
                self.width,
                self.height
            )));
        }
        if self.meters.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::validation("depth values must be finite and non-negative"));
        }
        if let Some(f2) = self.f2 {
            if !(f2 > 0.0 && f2.is_finite()) {
                return Err(Error::validation("f2 must be positive"));
            }
        }
        Ok(())
    }

    /// Depth at `p`, bilinear between the four surrounding pixel centres
    /// (clamped at the border). If any of them lacks depth the containing
    /// pixel's value is used instead. Calibrated with the map's `f2` or,
    /// when it has none, `default_f2`.
    pub fn sample(&self, p: &Vector2<f64>, default_f2: f64) -> Result<DepthSample> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h) {
            return Err(Error::validation(format!(
                "pixel ({:.2}, {:.2}) outside the {}x{} depth map",
                p.x, p.y, self.width, self.height
            )));
        }
        let at = |x: usize, y: usize| self.meters[y * self.width as usize + x];
        let (fx, fy) = ((p.x - 0.5).clamp(0.0, w - 1.0), (p.y - 0.5).clamp(0.0, h - 1.0));
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = (
            (x0 + 1).min(self.width as usize - 1),
            (y0 + 1).min(self.height as usize - 1),
        );
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let corners = [at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1)];
        let d = if corners.iter().all(|&c| c > 0.0) {
            (corners[0] * (1.0 - tx) + corners[1] * tx) * (1.0 - ty) + (corners[2] * (1.0 - tx) + corners[3] * tx) * ty
        } else {
            at(p.x as usize, p.y as usize)
        };
        if !(d > 0.0) {
            return Err(Error::degenerate(format!("no depth at pixel ({:.2}, {:.2})", p.x, p.y)));
        }
        Ok(DepthSample {
            depth: d,
            f2: self.f2.unwrap_or(default_f2),
        })
    }

    /// Reads a `.pfm` or `.png` depth map plus its sidecar.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let sidecar: Option<DepthSidecar> = if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::parse(&side, e))?)
        } else {
            None
        };
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let map = match ext.as_str() {
            "pfm" => {
                let (w, h, m) = decode_pfm(&bytes).map_err(|e| Error::parse(path, e))?;
                let scale = sidecar.map_or(1.0, |s| s.scale_m_per_unit);
                DepthMap {
                    width: w,
                    height: h,
                    meters: m.into_iter().map(|v| v * scale).collect(),
                    f2: sidecar.and_then(|s| s.f2),
                }
            }
            "png" => {
                let sc = sidecar
                    .ok_or_else(|| Error::parse(path, "16-bit PNG depth needs a sidecar JSON with scale_m_per_unit"))?;
                let img = crate::render::decode_png(&bytes).map_err(|e| Error::parse(path, e))?;
                if img.channels != 1 || img.bit_depth != 16 {
                    return Err(Error::parse(path, "depth PNG must be 16-bit grayscale"));
                }
                DepthMap {
                    width: img.width,
                    height: img.height,
                    meters: img.samples.iter().map(|&v| v as f64 * sc.scale_m_per_unit).collect(),
                    f2: sc.f2,
                }
            }
            _ => return Err(Error::parse(path, "depth maps must be .pfm or .png")),
        };
        map.validate().map_err(|e| Error::parse(path, e))?;
        Ok(map)
    }

    /// Writes PFM plus a sidecar carrying `f2` when present.
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, encode_pfm(self.width, self.height, &self.meters)).map_err(|e| Error::io(path, e))?;
        if let Some(f2) = self.f2 {
            let side = sidecar_path(path);
            let text = serde_json::to_string_pretty(&DepthSidecar {
                scale_m_per_unit: 1.0,
                f2: Some(f2),
            })
            .expect("sidecar serializes");
            std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }
}

/// Little-endian single-channel PFM of a top-row-first buffer.
pub fn encode_pfm(width: u32, height: u32, values: &[f64]) -> Vec<u8> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    for row in (0..height as usize).rev() {
        let start = row * width as usize;
        for v in &values[start..start + width as usize] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Parses a single-channel PFM into a top-row-first buffer.
pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<(u32, u32, Vec<f64>), String> {
    // header: three whitespace-separated tokens after the magic, then one
    // whitespace byte before the raster
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PFM header".into());
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "Pf" {
        return Err(format!("expected single-channel PFM (Pf), found {:?}", tokens[0]));
    }
    let width: u32 = tokens[1].parse().map_err(|_| "bad PFM width")?;
    let height: u32 = tokens[2].parse().map_err(|_| "bad PFM height")?;
    let scale: f64 = tokens[3].parse().map_err(|_| "bad PFM scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err("PFM scale must be non-zero".into());
    }
    let n = width as usize * height as usize;
    let data = bytes.get(pos..).ok_or("truncated PFM raster")?;
    if data.len() != n * 4 {
        return Err(format!("PFM raster has {} bytes, expected {}", data.len(), n * 4));
    }
    let little = scale < 0.0;
    let mut out = vec![0.0; n];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, col) = (i / width as usize, i % width as usize);
        out[(height as usize - 1 - row) * width as usize + col] = v as f64;
    }
    Ok((width, height, out))
}
