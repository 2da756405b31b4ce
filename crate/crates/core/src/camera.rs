//! Pinhole camera with a world-to-camera rigid transform.
//!
//! Points are row vectors on this boundary: `x_cam = x_world * R_w2c + T_w2c`
//! and `x_world = (x_cam - T_w2c) * R_w2c^-1`. The camera looks down +z with
//! image y pointing down. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`, so its
//! centre is at `(i + 0.5, j + 0.5)`.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{is_rotation, row_mul};

/// Points closer than this to the image plane are clipped.
pub const DEFAULT_NEAR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub k: Matrix3<f64>,
    /// Focal length the motion estimator assumed, in pixels.
    pub f1: f64,
    /// Row-vector convention, see module docs.
    pub r_w2c: Matrix3<f64>,
    pub t_w2c: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

/// Metric depth sampled at a pixel, with the depth estimator's focal length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub depth: f64,
    pub f2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CameraJson {
    #[serde(rename = "K")]
    k: [f64; 9],
    f1: f64,
    #[serde(rename = "R_w2c")]
    r_w2c: [f64; 9],
    #[serde(rename = "T_w2c")]
    t_w2c: [f64; 3],
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(
        k: Matrix3<f64>,
        f1: f64,
        r_w2c: Matrix3<f64>,
        t_w2c: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = CameraModel {
            k,
            f1,
            r_w2c,
            t_w2c,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel intrinsics with the principal point at the image centre.
    pub fn simple(focal: f64, width: u32, height: u32, r_w2c: Matrix3<f64>, t_w2c: Vector3<f64>) -> Result<Self> {
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, focal, r_w2c, t_w2c, width, height)
    }

    /// Camera placed at `eye` (world), looking towards `target`, with world
    /// `up` mapping to image-up.
    pub fn look_at(
        focal: f64,
        width: u32,
        height: u32,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let fwd = (target - eye).normalize();
        let right = fwd.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::degenerate("look direction is parallel to up"));
        }
        let right = right.normalize();
        let down = fwd.cross(&right);
        // camera axes (x right, y down, z forward) as world rows; column
        // convention world->camera rotation has them as rows, so the row
        // convention matrix has them as columns.
        let rot_col = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let r_w2c = rot_col.transpose();
        let t_w2c = -row_mul(&eye, &r_w2c);
        Self::simple(focal, width, height, r_w2c, t_w2c)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.k;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("intrinsics contain non-finite values"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::validation("intrinsics must be upper-triangular"));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::validation("intrinsic focal entries must be positive"));
        }
        if k[(2, 2)] != 1.0 {
            return Err(Error::validation("intrinsics K[2][2] must be 1"));
        }
        if !(self.f1 > 0.0 && self.f1.is_finite()) {
            return Err(Error::validation("f1 must be positive"));
        }
        if !is_rotation(&self.r_w2c, 1e-6) {
            return Err(Error::validation("R_w2c must be orthonormal with det +1"));
        }
        if self.t_w2c.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("T_w2c contains non-finite values"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("image size must be positive"));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        row_mul(p, &self.r_w2c) + self.t_w2c
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        row_mul(&(p - self.t_w2c), &self.r_w2c.transpose())
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.camera_to_world(&Vector3::zeros())
    }

    /// World direction of the optical axis.
    pub fn view_direction(&self) -> Vector3<f64> {
        row_mul(&Vector3::z(), &self.r_w2c.transpose())
    }

    /// The same camera imaging onto a `width x height` grid: the first two
    /// rows of K scale with the pixel size, extrinsics and f1 are kept.
    pub fn resized(&self, width: u32, height: u32) -> Result<CameraModel> {
        if width == 0 || height == 0 {
            return Err(Error::validation("image size must be positive"));
        }
        let (sx, sy) = (width as f64 / self.width as f64, height as f64 / self.height as f64);
        let mut k = self.k;
        k.row_mut(0).scale_mut(sx);
        k.row_mut(1).scale_mut(sy);
        Ok(CameraModel {
            k,
            width,
            height,
            ..self.clone()
        })
    }

    /// Pixel coordinates of a camera-space point (no near-plane check).
    pub fn project_camera(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let h = self.k * p;
        Vector2::new(h.x / h.z, h.y / h.z)
    }

    /// `K^-1 [u, v, 1]^T`: the camera-space ray through a pixel with z = 1.
    pub fn pixel_ray(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>> {
        let inv = self
            .k
            .try_inverse()
            .ok_or_else(|| Error::degenerate("intrinsics are not invertible"))?;
        Ok(inv * Vector3::new(pixel.x, pixel.y, 1.0))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let row_major = |m: &Matrix3<f64>| {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[r * 3 + c] = m[(r, c)];
                }
            }
            out
        };
        serde_json::to_value(CameraJson {
            k: row_major(&self.k),
            f1: self.f1,
            r_w2c: row_major(&self.r_w2c),
            t_w2c: [self.t_w2c.x, self.t_w2c.y, self.t_w2c.z],
            width: self.width,
            height: self.height,
        })
        .expect("camera serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: CameraJson =
            serde_json::from_value(value.clone()).map_err(|e| Error::validation(format!("camera: {e}")))?;
        Self::new(
            Matrix3::from_row_slice(&raw.k),
            raw.f1,
            Matrix3::from_row_slice(&raw.r_w2c),
            Vector3::from(raw.t_w2c),
            raw.width,
            raw.height,
        )
        .map_err(|e| e.context("camera"))
    }
}

/// Camera file: one camera object, or a list of per-frame cameras.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraTrack {
    Single(CameraModel),
    PerFrame(Vec<CameraModel>),
}

impl CameraTrack {
    pub fn frame(&self, n: usize) -> &CameraModel {
        match self {
            CameraTrack::Single(c) => c,
            CameraTrack::PerFrame(v) => &v[n.min(v.len() - 1)],
        }
    }

    pub fn first(&self) -> &CameraModel {
        self.frame(0)
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> Option<usize> {
        match self {
            CameraTrack::Single(_) => None,
            CameraTrack::PerFrame(v) => Some(v.len()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CameraTrack::Single(c) => c.to_json(),
            CameraTrack::PerFrame(v) => serde_json::Value::Array(v.iter().map(CameraModel::to_json).collect()),
        }
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        match value {
            serde_json::Value::Array(items) => {
                if items.is_empty() {
                    return Err(Error::validation("camera list is empty"));
                }
                let cams = items
                    .iter()
                    .enumerate()
                    .map(|(i, v)| CameraModel::from_json(v).map_err(|e| e.context(&format!("frame {i}"))))
                    .collect::<Result<_>>()?;
                Ok(CameraTrack::PerFrame(cams))
            }
            other => Ok(CameraTrack::Single(CameraModel::from_json(other)?)),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        Self::from_json(&value).map_err(|e| match e {
            Error::Validation(m) => Error::parse(path, m),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("camera serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
