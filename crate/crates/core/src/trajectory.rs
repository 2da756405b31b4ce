//! Drawn 2D trajectories to world-space 3D trajectories.
//!
//! Pipeline per edit: interpolate the drawn keypoints to one pixel per frame,
//! lift each pixel to the world (depth unprojection with focal calibration,
//! or ray/ground intersection), re-time the lifted path to the original
//! motion's speed profile, derive headings, and apply the combined rigid
//! edit to the posed vertices. Points are row vectors here; see
//! [`crate::camera`].

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, DepthSample};
use crate::error::{Error, Result};
use crate::rotation::{axis_angle_to_matrix, rot_y, row_mul, split_yaw};
use crate::world::WorldFrame;

/// Displacements below this (meters, ground plane) carry no heading.
pub const HEADING_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory2D {
    pub keypoints: Vec<Keypoint>,
}

impl Trajectory2D {
    pub fn new(keypoints: Vec<Keypoint>) -> Self {
        Trajectory2D { keypoints }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let keypoints: Vec<Keypoint> = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        Ok(Trajectory2D { keypoints })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.keypoints).expect("keypoints serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Checks pixel bounds and frame ordering.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        for (i, k) in self.keypoints.iter().enumerate() {
            if !(k.u.is_finite() && k.v.is_finite())
                || k.u < 0.0
                || k.v < 0.0
                || k.u >= width as f64
                || k.v >= height as f64
            {
                return Err(Error::validation(format!(
                    "keypoint {i} at ({}, {}) lies outside the {width}x{height} image",
                    k.u, k.v
                )));
            }
        }
        let pinned: Vec<usize> = self.keypoints.iter().filter_map(|k| k.frame).collect();
        if pinned.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("keypoint frame indices must be strictly increasing"));
        }
        Ok(())
    }

    /// Frame position of every keypoint: pinned ones keep their index,
    /// unpinned ones are spread evenly between their pinned neighbours
    /// (the ends default to `0` and `n - 1`).
    pub fn keypoint_frames(&self, n: usize) -> Result<Vec<f64>> {
        let k = self.keypoints.len();
        if k < 2 {
            return Err(Error::validation(format!("need at least 2 keypoints, got {k}")));
        }
        let last = (n - 1) as f64;
        let mut anchors: Vec<Option<f64>> = self.keypoints.iter().map(|kp| kp.frame.map(|f| f as f64)).collect();
        if anchors.iter().flatten().any(|&f| f > last) {
            return Err(Error::validation(format!(
                "keypoint frame index beyond last frame {}",
                n - 1
            )));
        }
        if anchors
            .iter()
            .flatten()
            .collect::<Vec<_>>()
            .windows(2)
            .any(|w| w[1] <= w[0])
        {
            return Err(Error::validation("keypoint frame indices must be strictly increasing"));
        }
        if anchors[0].is_none() {
            anchors[0] = Some(0.0);
        }
        if anchors[k - 1].is_none() {
            anchors[k - 1] = Some(last);
        }
        let mut out = vec![0.0; k];
        let mut prev = 0usize;
        out[0] = anchors[0].unwrap();
        for i in 1..k {
            if let Some(f) = anchors[i] {
                let (a, b) = (out[prev], f);
                if b < a {
                    return Err(Error::validation("keypoint frame indices must be increasing"));
                }
                let gap = (i - prev) as f64;
                for (step, slot) in out.iter_mut().enumerate().take(i).skip(prev + 1) {
                    let t = (step - prev) as f64 / gap;
                    *slot = (1.0 - t) * a + t * b;
                }
                out[i] = f;
                prev = i;
            }
        }
        if out.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("keypoints collapse onto the same frame"));
        }
        Ok(out)
    }
}

/// Piecewise-linear per-frame pixels through the keypoints.
pub fn interpolate_keypoints(traj: &Trajectory2D, n: usize) -> Result<Vec<Vector2<f64>>> {
    if n < 2 {
        return Err(Error::validation(format!("need at least 2 frames, got {n}")));
    }
    let frames = traj.keypoint_frames(n)?;
    let pts: Vec<Vector2<f64>> = traj.keypoints.iter().map(|k| Vector2::new(k.u, k.v)).collect();
    let mut seg = 0;
    Ok((0..n)
        .map(|i| {
            let f = i as f64;
            if f <= frames[0] {
                return pts[0];
            }
            if f >= frames[frames.len() - 1] {
                return pts[pts.len() - 1];
            }
            while frames[seg + 1] < f {
                seg += 1;
            }
            let t = (f - frames[seg]) / (frames[seg + 1] - frames[seg]);
            pts[seg] * (1.0 - t) + pts[seg + 1] * t
        })
        .collect())
}

/// Camera-space point for a pixel: `K^-1 [u, v, 1]^T * d * f2 / f1`.
pub fn unproject_point(pixel: &Vector2<f64>, cam: &CameraModel, depth: &DepthSample) -> Result<Vector3<f64>> {
    if !(depth.depth > 0.0 && depth.depth.is_finite()) {
        return Err(Error::validation(format!(
            "depth must be positive, got {}",
            depth.depth
        )));
    }
    if !(depth.f2 > 0.0 && depth.f2.is_finite()) {
        return Err(Error::validation(format!("f2 must be positive, got {}", depth.f2)));
    }
    Ok(cam.pixel_ray(pixel)? * depth.depth * depth.f2 / cam.f1)
}

/// World point where the pixel's viewing ray meets the ground plane.
pub fn ground_intersect(pixel: &Vector2<f64>, cam: &CameraModel, frame: &WorldFrame) -> Result<Vector3<f64>> {
    let origin = cam.center();
    let dir = row_mul(&cam.pixel_ray(pixel)?, &cam.r_w2c.transpose());
    let normal = frame.axis_y;
    let denom = dir.dot(&normal);
    if denom.abs() <= 1e-12 * dir.norm() {
        return Err(Error::degenerate("viewing ray is parallel to the ground plane"));
    }
    let plane_point = frame.ground_point();
    let t = (plane_point - origin).dot(&normal) / denom;
    if t <= 0.0 {
        return Err(Error::degenerate("viewing ray points away from the ground plane"));
    }
    let mut p = origin + dir * t;
    // snap onto the plane exactly
    let off = (p - plane_point).dot(&normal);
    p -= normal * off;
    if normal == Vector3::y() {
        p.y = plane_point.y;
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl Norm {
    pub fn of(self, v: &Vector3<f64>) -> f64 {
        match self {
            Norm::L1 => v.x.abs() + v.y.abs() + v.z.abs(),
            Norm::L2 => v.norm(),
        }
    }
}

/// Running sum of per-frame displacement norms, starting at 0.
pub fn cumulative_arc_length(points: &[Vector3<f64>], norm: Norm) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += norm.of(&(p - points[i - 1]));
        }
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedAlignOptions {
    pub norm: Norm,
    /// Scale the original arc profile so the whole edited path is traversed.
    pub rescale: bool,
}

impl Default for SpeedAlignOptions {
    fn default() -> Self {
        SpeedAlignOptions {
            norm: Norm::L1,
            rescale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedAlignment {
    pub positions: Vec<Vector3<f64>>,
    /// Factor applied to the original arc profile.
    pub rescale_factor: f64,
    /// Rescaled original profile actually reproduced by `positions`.
    pub target_arc: Vec<f64>,
    /// Frames whose increment was cut short by the end of the path.
    pub clamped_frames: Vec<usize>,
    /// Total distance lost to those cuts. With rescaling this is rounding
    /// noise on smooth paths; on paths that double back sharply the walk's
    /// end is discontinuous in the factor and the last step may fall short.
    pub end_shortfall: f64,
}

/// Polyline walker used by [`align_speed`].
struct PathWalk<'a> {
    path: &'a [Vector3<f64>],
    norm: Norm,
    seg: usize,
    t: f64,
    point: Vector3<f64>,
}

impl<'a> PathWalk<'a> {
    fn new(path: &'a [Vector3<f64>], norm: Norm) -> Self {
        PathWalk {
            path,
            norm,
            seg: 0,
            t: 0.0,
            point: path[0],
        }
    }

    fn at(&self, seg: usize, t: f64) -> Vector3<f64> {
        let (a, b) = (self.path[seg], self.path[seg + 1]);
        a * (1.0 - t) + b * t
    }

    fn at_end(&self) -> bool {
        self.seg + 1 >= self.path.len()
    }

    /// Advances to the first point further along the path whose distance from
    /// the current point equals `step`. Returns false if the path ended first.
    fn advance(&mut self, step: f64) -> bool {
        if step <= 0.0 {
            return true;
        }
        let from = self.point;
        let dist = |p: &Vector3<f64>| self.norm.of(&(p - from));
        while !self.at_end() {
            let end = self.path[self.seg + 1];
            if dist(&end) < step {
                self.seg += 1;
                self.t = 0.0;
                continue;
            }
            // distance along a segment is convex in t and below `step` at
            // the current position, so the crossing is unique
            let (mut lo, mut hi) = (self.t, 1.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if dist(&self.at(self.seg, mid)) < step {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (plo, phi) = (self.at(self.seg, lo), self.at(self.seg, hi));
            let pick_hi = (dist(&phi) - step).abs() <= (step - dist(&plo)).abs();
            self.t = if pick_hi { hi } else { lo };
            self.point = if pick_hi { phi } else { plo };
            if self.t >= 1.0 {
                self.seg += 1;
                self.t = 0.0;
                self.point = end;
            }
            return true;
        }
        self.point = self.path[self.path.len() - 1];
        false
    }
}

/// Shortfalls below this (meters) are rounding, not clamping.
const CLAMP_TOL: f64 = 1e-9;

struct Walked {
    positions: Vec<Vector3<f64>>,
    clamped: Vec<usize>,
    shortfall: f64,
    reached_end: bool,
}

fn walk(path: &[Vector3<f64>], norm: Norm, steps: &[f64], k: f64) -> Walked {
    let mut w = PathWalk::new(path, norm);
    let mut positions = Vec::with_capacity(steps.len() + 1);
    let mut clamped = Vec::new();
    let mut shortfall = 0.0;
    positions.push(w.point);
    for (i, s) in steps.iter().enumerate() {
        let from = w.point;
        if !w.advance(s * k) {
            let short = (s * k - norm.of(&(w.point - from))).max(0.0);
            if short > CLAMP_TOL {
                clamped.push(i + 1);
                shortfall += short;
            }
        }
        positions.push(w.point);
    }
    Walked {
        positions,
        clamped,
        shortfall,
        reached_end: w.at_end(),
    }
}

/// Re-times `edited` so its per-frame displacements follow the original
/// motion's cumulative-distance profile.
///
/// Each output frame lies on the edited polyline, further along than the
/// previous one, at a distance (in `opts.norm`) from it equal to the
/// corresponding original increment times the rescale factor. With
/// `opts.rescale` the factor is the smallest one whose walk reaches the
/// edited path's end; without it the factor is 1. Frames that would run past
/// the end are pinned there and listed in `clamped_frames`.
pub fn align_speed(edited: &[Vector3<f64>], original_arc: &[f64], opts: SpeedAlignOptions) -> Result<SpeedAlignment> {
    let n = edited.len();
    if n != original_arc.len() {
        return Err(Error::validation(format!(
            "edited path has {n} frames, original profile has {}",
            original_arc.len()
        )));
    }
    if n == 0 {
        return Err(Error::validation("empty trajectory"));
    }
    if original_arc.iter().any(|d| !d.is_finite()) || edited.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation("trajectory contains non-finite values"));
    }
    let steps: Vec<f64> = original_arc.windows(2).map(|w| w[1] - w[0]).collect();
    if steps.iter().any(|&s| s < -1e-12) {
        return Err(Error::validation("original cumulative distance must be non-decreasing"));
    }
    let steps: Vec<f64> = steps.into_iter().map(|s| s.max(0.0)).collect();
    let total_orig: f64 = steps.iter().sum();
    let edited_arc = cumulative_arc_length(edited, opts.norm);
    let total_edit = edited_arc[n - 1];

    if total_orig == 0.0 {
        return Ok(SpeedAlignment {
            positions: vec![edited[0]; n],
            rescale_factor: 1.0,
            target_arc: vec![0.0; n],
            clamped_frames: Vec::new(),
            end_shortfall: 0.0,
        });
    }
    if total_edit == 0.0 {
        return Err(Error::degenerate(
            "edited path has zero length but the original motion moves",
        ));
    }
    if original_arc
        .iter()
        .zip(&edited_arc)
        .all(|(a, b)| a - original_arc[0] == *b)
    {
        return Ok(SpeedAlignment {
            positions: edited.to_vec(),
            rescale_factor: 1.0,
            target_arc: edited_arc,
            clamped_frames: Vec::new(),
            end_shortfall: 0.0,
        });
    }

    let k = if opts.rescale {
        // chords never exceed arcs, so at total_edit/total_orig the walk
        // reaches the end; bisect for the factor that lands exactly on it
        let mut hi = total_edit / total_orig;
        let mut lo = 0.0;
        let reaches = |k: f64| walk(edited, opts.norm, &steps, k).reached_end;
        if !reaches(hi) {
            // numerical slack on straight paths
            hi *= 1.0 + 1e-12;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if reaches(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // the smallest factor that reaches the end; any clipping of the final
        // increment is within the bisection resolution
        hi
    } else {
        1.0
    };

    let walked = walk(edited, opts.norm, &steps, k);
    let target_arc = original_arc.iter().map(|d| (d - original_arc[0]) * k).collect();
    Ok(SpeedAlignment {
        positions: walked.positions,
        rescale_factor: k,
        target_arc,
        clamped_frames: walked.clamped,
        end_shortfall: walked.shortfall,
    })
}

/// The heading rotation for angle `psi`:
///
/// ```text
/// [ cos  0  -sin ]
/// [  0   1    0  ]
/// [ sin  0   cos ]
/// ```
pub fn heading_matrix(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Headings {
    /// Unwrapped, smoothed heading per frame.
    pub angles: Vec<f64>,
    pub rotations: Vec<Matrix3<f64>>,
    /// Frames whose displacement was below the threshold.
    pub held_frames: Vec<usize>,
    /// No frame moved; angles are all zero and carry no information.
    pub all_static: bool,
}

/// Headings from ground-plane frame differences: `atan2(dz, dx)`, held over
/// near-static frames, unwrapped, then box-smoothed over `window` frames.
pub fn derive_headings(points: &[Vector3<f64>], window: usize, eps: f64) -> Result<Headings> {
    let n = points.len();
    if n < 2 {
        return Err(Error::validation(format!("headings need at least 2 frames, got {n}")));
    }
    if window == 0 {
        return Err(Error::validation("smoothing window must be at least 1"));
    }
    let mut raw: Vec<Option<f64>> = vec![None; n];
    let mut held = Vec::new();
    for i in 1..n {
        let d = points[i] - points[i - 1];
        if d.x.hypot(d.z) >= eps {
            raw[i] = Some(d.z.atan2(d.x));
        } else {
            held.push(i);
        }
    }
    let Some(first) = raw.iter().flatten().next().copied() else {
        return Ok(Headings {
            angles: vec![0.0; n],
            rotations: vec![Matrix3::identity(); n],
            held_frames: (0..n).collect(),
            all_static: true,
        });
    };
    let mut angles = vec![0.0; n];
    let mut prev = first;
    for i in 1..n {
        let a = match raw[i] {
            Some(a) => {
                // unwrap against the previous heading
                let mut a = a;
                while a - prev > std::f64::consts::PI {
                    a -= 2.0 * std::f64::consts::PI;
                }
                while a - prev < -std::f64::consts::PI {
                    a += 2.0 * std::f64::consts::PI;
                }
                a
            }
            None => prev,
        };
        angles[i] = a;
        prev = a;
    }
    angles[0] = angles[1];
    let smoothed = if window > 1 {
        box_filter(&angles, window)
    } else {
        angles
    };
    Ok(Headings {
        rotations: smoothed.iter().map(|&a| heading_matrix(a)).collect(),
        angles: smoothed,
        held_frames: held,
        all_static: false,
    })
}

/// Centred moving average; the window shrinks at the sequence ends.
pub fn box_filter(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// How the source global orientation is removed before the heading is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationRemoval {
    /// Invert the whole global orientation.
    #[default]
    Full,
    /// Invert only its yaw about +y, keeping lean and pitch.
    YawOnly,
}

/// The rigid edit `p -> (p - root) * A * heading + new_root` in row form,
/// with `A` undoing the source orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetargetTransform {
    /// Row-form linear part `A * heading`.
    pub row_matrix: Matrix3<f64>,
    pub source_root: Vector3<f64>,
    pub target_root: Vector3<f64>,
}

impl RetargetTransform {
    pub fn new(
        orientation: &Vector3<f64>,
        source_root: Vector3<f64>,
        heading: &Matrix3<f64>,
        target_root: Vector3<f64>,
        removal: OrientationRemoval,
    ) -> Self {
        let r = axis_angle_to_matrix(orientation);
        // row vector q * M == M^T q, so the row form of rot^-1 is rot itself
        let undo = match removal {
            OrientationRemoval::Full => r,
            OrientationRemoval::YawOnly => rot_y(split_yaw(&r).0),
        };
        RetargetTransform {
            row_matrix: undo * heading,
            source_root,
            target_root,
        }
    }

    /// Translation-only edit (keeps the source orientation).
    pub fn translation_only(source_root: Vector3<f64>, target_root: Vector3<f64>) -> Self {
        RetargetTransform {
            row_matrix: Matrix3::identity(),
            source_root,
            target_root,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        row_mul(&(p - self.source_root), &self.row_matrix) + self.target_root
    }

    /// The same rotation in the column convention.
    pub fn column_rotation(&self) -> Matrix3<f64> {
        self.row_matrix.transpose()
    }
}

/// Applies the trajectory and orientation edit to every vertex.
pub fn retarget_vertices(mesh: &[Vector3<f64>], edit: &RetargetTransform) -> Vec<Vector3<f64>> {
    mesh.iter().map(|p| edit.apply(p)).collect()
}

/// Lifts every frame so that, within a centred window, the lowest foot
/// vertex touches `y = 0`.
///
/// The sliding-window minimum of the per-frame foot height is subtracted
/// first. Windows can still lack a contact frame afterwards (e.g. under a
/// steady drift), so the morphological opening of the residual is subtracted
/// as well; after that every window holds a frame at exactly zero and a
/// second application changes nothing. Returns the vertical shift applied to
/// each frame.
pub fn ground_feet(frames: &mut [Vec<Vector3<f64>>], foot_ids: Option<&[usize]>, window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::validation(format!(
            "grounding window must be odd and >= 1, got {window}"
        )));
    }
    if frames.is_empty() || frames.iter().any(|f| f.is_empty()) {
        return Err(Error::validation("grounding needs non-empty frames"));
    }
    if let Some(ids) = foot_ids {
        if ids.is_empty() {
            return Err(Error::validation("foot vertex list is empty"));
        }
        let v = frames.iter().map(Vec::len).min().unwrap_or(0);
        if ids.iter().any(|&i| i >= v) {
            return Err(Error::validation("foot vertex id out of range"));
        }
    }
    let half = window / 2;
    let min_y = |f: &[Vector3<f64>]| match foot_ids {
        Some(ids) => ids.iter().map(|&i| f[i].y).fold(f64::INFINITY, f64::min),
        None => f.iter().map(|p| p.y).fold(f64::INFINITY, f64::min),
    };
    let mins: Vec<f64> = frames.iter().map(|f| min_y(f)).collect();
    let first = erode(&mins, half);
    let residual: Vec<f64> = mins.iter().zip(&first).map(|(m, c)| m - c).collect();
    let second = dilate(&erode(&residual, half), half);
    let mut total = vec![0.0; frames.len()];
    for (i, frame) in frames.iter_mut().enumerate() {
        for c in [first[i], second[i]] {
            if c != 0.0 {
                frame.iter_mut().for_each(|p| p.y -= c);
                total[i] -= c;
            }
        }
    }
    Ok(total)
}

fn window_fold(values: &[f64], half: usize, init: f64, f: fn(f64, f64) -> f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            values[i.saturating_sub(half)..=(i + half).min(n - 1)]
                .iter()
                .copied()
                .fold(init, f)
        })
        .collect()
}

fn erode(values: &[f64], half: usize) -> Vec<f64> {
    window_fold(values, half, f64::INFINITY, f64::min)
}

fn dilate(values: &[f64], half: usize) -> Vec<f64> {
    window_fold(values, half, f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests;
