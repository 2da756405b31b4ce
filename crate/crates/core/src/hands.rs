//! Camera-space hand estimates merged into the world-space body.
//!
//! Hand orientations are column-convention rotations taking hand-local
//! coordinates to camera coordinates. With the row-convention camera of
//! [`crate::camera`], camera-to-world for column vectors is `R_w2c` itself,
//! so the hand's world orientation is `R_w2c * Phi_h` (the row form of which
//! is `Phi_h^T * R_w2c^-1`). The wrist's local rotation is that orientation
//! with the parent chain `Omega` removed.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::body::{chain_global_rotation, BodyModelAsset, LEFT, RIGHT};
use crate::camera::{CameraModel, CameraTrack};
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::rotation::{is_rotation, matrix_to_axis_angle};

pub const DEFAULT_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct HandEstimate {
    pub side: usize,
    pub global_orientation: Matrix3<f64>,
    pub hand_pose: Vec<Vector3<f64>>,
    pub confidence: f64,
}

impl HandEstimate {
    pub fn validate(&self) -> Result<()> {
        if self.side > RIGHT {
            return Err(Error::validation(format!(
                "hand side {} is neither left nor right",
                self.side
            )));
        }
        if !is_rotation(&self.global_orientation, 1e-6) {
            return Err(Error::validation("hand orientation must be orthonormal with det +1"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::validation(format!(
                "hand confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if self.hand_pose.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("hand pose contains non-finite values"));
        }
        Ok(())
    }
}

/// Per-frame `[left, right]` estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandTrack {
    pub frames: Vec<[Option<HandEstimate>; 2]>,
}

#[derive(Serialize, Deserialize)]
struct HandJson {
    #[serde(rename = "R")]
    r: Vec<f64>,
    theta: Vec<f64>,
    conf: f64,
}

#[derive(Serialize, Deserialize, Default)]
struct FrameJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<HandJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<HandJson>,
}

impl HandTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_json(&self) -> Value {
        let enc = |h: &Option<HandEstimate>| {
            h.as_ref().map(|h| HandJson {
                r: (0..9).map(|i| h.global_orientation[(i / 3, i % 3)]).collect(),
                theta: h.hand_pose.iter().flat_map(|v| [v.x, v.y, v.z]).collect(),
                conf: h.confidence,
            })
        };
        let frames: Vec<FrameJson> = self
            .frames
            .iter()
            .map(|[l, r]| FrameJson {
                left: enc(l),
                right: enc(r),
            })
            .collect();
        serde_json::to_value(frames).expect("hands serialize")
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let raw: Vec<FrameJson> =
            serde_json::from_value(value.clone()).map_err(|e| Error::validation(format!("hands: {e}")))?;
        let dec = |h: Option<HandJson>, side: usize, frame: usize| -> Result<Option<HandEstimate>> {
            let Some(h) = h else { return Ok(None) };
            let ctx = |m: &str| Error::validation(format!("hands frame {frame} side {side}: {m}"));
            if h.r.len() != 9 {
                return Err(ctx(&format!("R has {} numbers, expected 9", h.r.len())));
            }
            if h.theta.len() % 3 != 0 {
                return Err(ctx(&format!(
                    "theta has {} numbers, not a multiple of 3",
                    h.theta.len()
                )));
            }
            let est = HandEstimate {
                side,
                global_orientation: Matrix3::from_row_slice(&h.r),
                hand_pose: h
                    .theta
                    .chunks_exact(3)
                    .map(|c| Vector3::new(c[0], c[1], c[2]))
                    .collect(),
                confidence: h.conf,
            };
            est.validate().map_err(|e| e.context(&format!("hands frame {frame}")))?;
            Ok(Some(est))
        };
        let frames = raw
            .into_iter()
            .enumerate()
            .map(|(i, f)| Ok([dec(f.left, LEFT, i)?, dec(f.right, RIGHT, i)?]))
            .collect::<Result<_>>()?;
        Ok(HandTrack { frames })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        Self::from_json(&value).map_err(|e| match e {
            Error::Validation(m) => Error::parse(path, m),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("hands serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Wrist local rotation `Omega^-1 * (R_w2c * Phi_h)` for a hand estimate,
/// where `omega` is the global rotation of the wrist's parent joint.
/// Returns `None` when the estimate is below `min_confidence`.
pub fn match_hand_orientation(
    hand: &HandEstimate,
    cam: &CameraModel,
    omega: &Matrix3<f64>,
    min_confidence: f64,
) -> Result<Option<Matrix3<f64>>> {
    hand.validate()?;
    if !is_rotation(omega, 1e-6) {
        return Err(Error::validation("chain rotation must be orthonormal with det +1"));
    }
    if hand.confidence < min_confidence {
        return Ok(None);
    }
    Ok(Some(omega.transpose() * (cam.r_w2c * hand.global_orientation)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MergeReport {
    /// Frames per side where the wrist was replaced.
    pub merged: [usize; 2],
    /// `(frame, side)` pairs skipped for low confidence.
    pub low_confidence: Vec<(usize, usize)>,
}

/// Replaces wrist rotations and finger poses with the hand estimates.
pub fn merge_hands(
    seq: &MotionSequence,
    hands: &HandTrack,
    asset: &BodyModelAsset,
    cams: &CameraTrack,
    min_confidence: f64,
) -> Result<(MotionSequence, MergeReport)> {
    if hands.is_empty() {
        return Ok((seq.clone(), MergeReport::default()));
    }
    if hands.len() != seq.len() {
        return Err(Error::validation(format!(
            "hand track has {} frames but the body sequence has {}",
            hands.len(),
            seq.len()
        )));
    }
    if let Some(n) = cams.len() {
        if n != seq.len() {
            return Err(Error::validation(format!(
                "camera track has {n} frames but the body sequence has {}",
                seq.len()
            )));
        }
    }
    let mut slots = [0usize; 2];
    let mut parents = [0usize; 2];
    for side in [LEFT, RIGHT] {
        let wrist = asset.hand_joint_ids[side];
        slots[side] = asset
            .body_pose_slot(wrist)
            .ok_or_else(|| Error::validation(format!("wrist joint {wrist} is not driven by the body pose")))?;
        parents[side] = asset.joint_parents[wrist].ok_or_else(|| Error::validation("wrist joint is the root"))?;
    }

    let results: Vec<_> = seq
        .frames
        .par_iter()
        .enumerate()
        .map(|(n, pose)| {
            let mut pose = pose.clone();
            let mut merged = [false; 2];
            let mut skipped = Vec::new();
            for side in [LEFT, RIGHT] {
                let Some(hand) = &hands.frames[n][side] else { continue };
                if hand.hand_pose.len() != asset.hand_pose_joints[side].len() {
                    return Err(Error::validation(format!(
                        "frame {n}: hand pose has {} joints, asset expects {}",
                        hand.hand_pose.len(),
                        asset.hand_pose_joints[side].len()
                    )));
                }
                let omega =
                    chain_global_rotation(asset, &pose, parents[side]).map_err(|e| e.context(&format!("frame {n}")))?;
                match match_hand_orientation(hand, cams.frame(n), &omega, min_confidence)
                    .map_err(|e| e.context(&format!("frame {n}")))?
                {
                    Some(local) => {
                        pose.body_pose[slots[side]] = matrix_to_axis_angle(&local);
                        pose.hand_pose[side] = hand.hand_pose.clone();
                        merged[side] = true;
                    }
                    None => skipped.push((n, side)),
                }
            }
            Ok((pose, merged, skipped))
        })
        .collect::<Result<_>>()?;

    let mut out = seq.clone();
    let mut report = MergeReport::default();
    for (n, (pose, merged, skipped)) in results.into_iter().enumerate() {
        out.frames[n] = pose;
        for side in [LEFT, RIGHT] {
            report.merged[side] += merged[side] as usize;
        }
        report.low_confidence.extend(skipped);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::mannequin::{mannequin, LEFT_WRIST, RIGHT_WRIST};
    use crate::body::FramePose;
    use crate::rotation::{axis_angle_to_matrix, rot_x, rot_y, rot_z};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cam_with(r: Matrix3<f64>) -> CameraModel {
        CameraModel::simple(500.0, 64, 64, r, Vector3::new(0.0, 0.0, 3.0)).unwrap()
    }

    fn est(side: usize, r: Matrix3<f64>, conf: f64) -> HandEstimate {
        HandEstimate {
            side,
            global_orientation: r,
            hand_pose: vec![Vector3::new(0.1, 0.2, 0.3); 3],
            confidence: conf,
        }
    }

    #[test]
    fn orientation_examples() {
        let phi = rot_x(0.4) * rot_z(-1.0);
        let out = match_hand_orientation(
            &est(LEFT, phi, 1.0),
            &cam_with(Matrix3::identity()),
            &Matrix3::identity(),
            0.5,
        )
        .unwrap()
        .unwrap();
        assert_abs_diff_eq!(out, phi, epsilon = 1e-15);
        let out = match_hand_orientation(&est(LEFT, phi, 1.0), &cam_with(Matrix3::identity()), &phi, 0.5)
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(out, Matrix3::identity(), epsilon = 1e-15);
        let low = match_hand_orientation(&est(LEFT, phi, 0.2), &cam_with(Matrix3::identity()), &phi, 0.5).unwrap();
        assert!(low.is_none());
        let mut bad = est(LEFT, phi, 1.0);
        bad.global_orientation[(0, 0)] = 3.0;
        assert!(match_hand_orientation(&bad, &cam_with(Matrix3::identity()), &phi, 0.5).is_err());
    }

    fn walking_pose(asset: &BodyModelAsset) -> FramePose {
        let mut p = FramePose::zeros(asset);
        p.global_orientation = Vector3::new(0.1, 0.8, -0.05);
        for (i, v) in p.body_pose.iter_mut().enumerate() {
            *v = Vector3::new(0.05 * i as f64, -0.03 * i as f64, 0.02);
        }
        p
    }

    #[test]
    fn empty_track_leaves_sequence_alone() {
        let asset = mannequin();
        let seq = MotionSequence::new(30.0, vec![walking_pose(&asset); 2]);
        let cams = CameraTrack::Single(cam_with(Matrix3::identity()));
        let (out, report) = merge_hands(&seq, &HandTrack::default(), &asset, &cams, 0.5).unwrap();
        assert_eq!(out, seq);
        assert_eq!(report.merged, [0, 0]);
        let short = HandTrack {
            frames: vec![[None, None]],
        };
        let err = merge_hands(&seq, &short, &asset, &cams, 0.5).unwrap_err();
        assert!(err.to_string().contains('1') && err.to_string().contains('2'));
    }

    #[test]
    fn self_generated_hands_reproduce_the_source() {
        let asset = mannequin();
        let pose = walking_pose(&asset);
        let seq = MotionSequence::new(30.0, vec![pose.clone(), pose]);
        let cam = cam_with(rot_y(0.6) * rot_x(-0.3));
        let mut frames = Vec::new();
        for f in &seq.frames {
            let mut pair = [None, None];
            for side in [LEFT, RIGHT] {
                let g = chain_global_rotation(&asset, f, asset.hand_joint_ids[side]).unwrap();
                pair[side] = Some(HandEstimate {
                    side,
                    global_orientation: cam.r_w2c.transpose() * g,
                    hand_pose: f.hand_pose[side].clone(),
                    confidence: 0.9,
                });
            }
            frames.push(pair);
        }
        let track = HandTrack { frames };
        let (out, report) = merge_hands(&seq, &track, &asset, &CameraTrack::Single(cam), 0.5).unwrap();
        assert_eq!(report.merged, [2, 2]);
        for (a, b) in out.frames.iter().zip(&seq.frames) {
            for (x, y) in a.body_pose.iter().zip(&b.body_pose) {
                assert_abs_diff_eq!(axis_angle_to_matrix(x), axis_angle_to_matrix(y), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn low_confidence_keeps_prior_values() {
        let asset = mannequin();
        let seq = MotionSequence::new(30.0, vec![walking_pose(&asset)]);
        let track = HandTrack {
            frames: vec![[Some(est(LEFT, rot_z(1.0), 0.1)), Some(est(RIGHT, rot_z(1.0), 0.9))]],
        };
        let cams = CameraTrack::Single(cam_with(Matrix3::identity()));
        let (out, report) = merge_hands(&seq, &track, &asset, &cams, 0.5).unwrap();
        assert_eq!(report.low_confidence, vec![(0, LEFT)]);
        let slot = asset.body_pose_slot(LEFT_WRIST).unwrap();
        assert_eq!(out.frames[0].body_pose[slot], seq.frames[0].body_pose[slot]);
        assert_eq!(out.frames[0].hand_pose[LEFT], seq.frames[0].hand_pose[LEFT]);
        let slot = asset.body_pose_slot(RIGHT_WRIST).unwrap();
        assert_ne!(out.frames[0].body_pose[slot], seq.frames[0].body_pose[slot]);
    }

    #[test]
    fn hand_json_roundtrip() {
        let track = HandTrack {
            frames: vec![
                [Some(est(LEFT, rot_y(0.3), 0.7)), None],
                [None, Some(est(RIGHT, rot_x(1.0), 0.2))],
            ],
        };
        let back = HandTrack::from_json(&track.to_json()).unwrap();
        assert_eq!(back, track);
        let mut v = track.to_json();
        v[0]["left"]["R"] = serde_json::json!([1, 0, 0]);
        assert!(HandTrack::from_json(&v).is_err());
        let mut v = track.to_json();
        v[0]["left"]["conf"] = serde_json::json!(1.5);
        assert!(HandTrack::from_json(&v).is_err());
    }

    fn rotation_strategy() -> impl Strategy<Value = Matrix3<f64>> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b, c)| axis_angle_to_matrix(&Vector3::new(a, b, c)))
    }

    proptest! {
        #[test]
        fn prop_recomposition(
            body in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 21),
            root in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
            cam_r in rotation_strategy(),
            phi in rotation_strategy(),
        ) {
            let asset = mannequin();
            let mut pose = FramePose::zeros(&asset);
            pose.global_orientation = Vector3::new(root.0, root.1, root.2);
            for (slot, b) in body.iter().enumerate() {
                pose.body_pose[slot] = Vector3::new(b.0, b.1, b.2);
            }
            let seq = MotionSequence::new(30.0, vec![pose]);
            let cam = cam_with(cam_r);
            let track = HandTrack { frames: vec![[Some(est(LEFT, phi, 1.0)), Some(est(RIGHT, phi.transpose(), 1.0))]] };
            let (out, _) = merge_hands(&seq, &track, &asset, &CameraTrack::Single(cam.clone()), 0.5).unwrap();
            for (side, want_cam) in [(LEFT, phi), (RIGHT, phi.transpose())] {
                let g = chain_global_rotation(&asset, &out.frames[0], asset.hand_joint_ids[side]).unwrap();
                // row form: Phi_h^T * R_w2c^-1
                let want_row = want_cam.transpose() * cam.r_w2c.transpose();
                prop_assert!((g.transpose() - want_row).abs().max() < 1e-9);
            }
            let (again, _) = merge_hands(&out, &track, &asset, &CameraTrack::Single(cam), 0.5).unwrap();
            for (a, b) in again.frames[0].body_pose.iter().zip(&out.frames[0].body_pose) {
                prop_assert!((axis_angle_to_matrix(a) - axis_angle_to_matrix(b)).abs().max() < 1e-9);
            }
        }
    }
}
