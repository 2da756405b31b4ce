//! Parametric skinned body model.
//!
//! A [`BodyModelAsset`] holds the rest-pose template, the kinematic tree and
//! the skinning weights. A [`FramePose`] holds one frame of parameters:
//! translation, global orientation, body pose, shape, hand pose, an opaque
//! expression payload and the adult/child blend factor.

mod asset_io;
pub mod container;
pub mod mannequin;

use nalgebra::{Matrix3, Vector3};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rotation::{axis_angle_to_matrix, is_rotation};

pub use asset_io::{load_asset, save_asset, save_asset_json};

/// Left and right hand indices used for `[T; 2]` hand arrays.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModelAsset {
    pub name: String,
    pub template_vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub joint_rest_positions: Vec<Vector3<f64>>,
    /// Parent of each joint; `None` for the root. Parents precede children.
    pub joint_parents: Vec<Option<usize>>,
    /// Dense `V x J` row-major weights.
    pub skinning_weights: Vec<f64>,
    /// `V x 3 x S` row-major, meters per unit of shape coefficient.
    pub shape_directions: Option<Vec<f64>>,
    pub shape_count: usize,
    pub child_template_vertices: Option<Vec<Vector3<f64>>>,
    /// `J x V` joint regressor; when present joints follow the shaped mesh.
    pub joint_regressor: Option<Vec<f64>>,
    /// `V x 3 x 9(J-1)` pose-dependent corrective offsets.
    pub pose_correctives: Option<Vec<f64>>,
    pub semantic_vertex_colors: Vec<[f64; 3]>,
    /// Wrist joints, `[left, right]`.
    pub hand_joint_ids: [usize; 2],
    /// Joints driven by the body pose vector, in order.
    pub body_pose_joints: Vec<usize>,
    /// Finger joints driven by the hand pose, `[left, right]`, same length.
    pub hand_pose_joints: [Vec<usize>; 2],
    pub foot_vertex_ids: Option<Vec<usize>>,
    sparse_weights: Vec<Vec<(usize, f64)>>,
}

/// One frame of body parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePose {
    pub translation: Vector3<f64>,
    pub global_orientation: Vector3<f64>,
    pub body_pose: Vec<Vector3<f64>>,
    pub shape: Vec<f64>,
    pub hand_pose: [Vec<Vector3<f64>>; 2],
    /// Carried through untouched.
    pub expression: Option<Value>,
    pub child_factor: f64,
}

impl FramePose {
    /// All-zero pose sized for `asset`.
    pub fn zeros(asset: &BodyModelAsset) -> Self {
        let h = asset.hand_pose_joints[LEFT].len();
        FramePose {
            translation: Vector3::zeros(),
            global_orientation: Vector3::zeros(),
            body_pose: vec![Vector3::zeros(); asset.body_pose_joints.len()],
            shape: vec![0.0; asset.shape_count],
            hand_pose: [vec![Vector3::zeros(); h], vec![Vector3::zeros(); h]],
            expression: None,
            child_factor: 0.0,
        }
    }

    pub fn check_against(&self, asset: &BodyModelAsset) -> Result<()> {
        if self.body_pose.len() != asset.body_pose_joints.len() {
            return Err(Error::validation(format!(
                "body pose has {} joints, asset expects {}",
                self.body_pose.len(),
                asset.body_pose_joints.len()
            )));
        }
        if self.shape.len() != asset.shape_count {
            return Err(Error::validation(format!(
                "shape has {} coefficients, asset expects {}",
                self.shape.len(),
                asset.shape_count
            )));
        }
        for side in [LEFT, RIGHT] {
            if self.hand_pose[side].len() != asset.hand_pose_joints[side].len() {
                return Err(Error::validation(format!(
                    "hand pose has {} joints, asset expects {}",
                    self.hand_pose[side].len(),
                    asset.hand_pose_joints[side].len()
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.child_factor) {
            return Err(Error::validation(format!(
                "child factor {} outside [0, 1]",
                self.child_factor
            )));
        }
        let finite = self.translation.iter().all(|v| v.is_finite())
            && self.global_orientation.iter().all(|v| v.is_finite())
            && self.body_pose.iter().flatten().all(|v| v.is_finite())
            && self.hand_pose.iter().flatten().flatten().all(|v| v.is_finite())
            && self.shape.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("pose contains non-finite values"));
        }
        Ok(())
    }
}

/// Rigid transform in the column convention: `x' = rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Skinned output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshFrame {
    pub vertices: Vec<Vector3<f64>>,
    /// World positions of the posed joints.
    pub joints: Vec<Vector3<f64>>,
}

impl BodyModelAsset {
    /// Builds an asset and checks its invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        template_vertices: Vec<Vector3<f64>>,
        faces: Vec<[u32; 3]>,
        joint_rest_positions: Vec<Vector3<f64>>,
        joint_parents: Vec<Option<usize>>,
        skinning_weights: Vec<f64>,
        semantic_vertex_colors: Vec<[f64; 3]>,
        hand_joint_ids: [usize; 2],
        body_pose_joints: Vec<usize>,
        hand_pose_joints: [Vec<usize>; 2],
    ) -> Result<Self> {
        let mut asset = BodyModelAsset {
            name: name.into(),
            template_vertices,
            faces,
            joint_rest_positions,
            joint_parents,
            skinning_weights,
            shape_directions: None,
            shape_count: 0,
            child_template_vertices: None,
            joint_regressor: None,
            pose_correctives: None,
            semantic_vertex_colors,
            hand_joint_ids,
            body_pose_joints,
            hand_pose_joints,
            foot_vertex_ids: None,
            sparse_weights: Vec::new(),
        };
        asset.finalize()?;
        Ok(asset)
    }

    pub fn with_shape_directions(mut self, dirs: Vec<f64>, count: usize) -> Result<Self> {
        self.shape_directions = Some(dirs);
        self.shape_count = count;
        self.finalize()?;
        Ok(self)
    }

    pub fn with_child_template(mut self, verts: Vec<Vector3<f64>>) -> Result<Self> {
        self.child_template_vertices = Some(verts);
        self.finalize()?;
        Ok(self)
    }

    pub fn with_joint_regressor(mut self, regressor: Vec<f64>) -> Result<Self> {
        self.joint_regressor = Some(regressor);
        self.finalize()?;
        Ok(self)
    }

    pub fn with_pose_correctives(mut self, correctives: Vec<f64>) -> Result<Self> {
        self.pose_correctives = Some(correctives);
        self.finalize()?;
        Ok(self)
    }

    pub fn with_foot_vertices(mut self, ids: Vec<usize>) -> Result<Self> {
        self.foot_vertex_ids = Some(ids);
        self.finalize()?;
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rest_positions.len()
    }

    pub fn weight(&self, vertex: usize, joint: usize) -> f64 {
        self.skinning_weights[vertex * self.joint_count() + joint]
    }

    /// Non-zero skinning weights of one vertex.
    pub fn vertex_weights(&self, vertex: usize) -> &[(usize, f64)] {
        &self.sparse_weights[vertex]
    }

    pub fn root(&self) -> usize {
        self.joint_parents.iter().position(Option::is_none).unwrap_or(0)
    }

    /// True when `joint` equals `ancestor` or lies below it in the tree.
    pub fn is_descendant(&self, joint: usize, ancestor: usize) -> bool {
        let mut j = Some(joint);
        while let Some(cur) = j {
            if cur == ancestor {
                return true;
            }
            j = self.joint_parents[cur];
        }
        false
    }

    /// Vertices whose dominant joint lies in the subtree of the given wrist.
    pub fn hand_vertex_ids(&self, side: usize) -> Vec<usize> {
        let wrist = self.hand_joint_ids[side];
        (0..self.vertex_count())
            .filter(|&v| {
                let dominant = self.sparse_weights[v]
                    .iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|&(j, _)| j);
                dominant.is_some_and(|j| self.is_descendant(j, wrist))
            })
            .collect()
    }

    /// Body-pose slot that drives `joint`, if any.
    pub fn body_pose_slot(&self, joint: usize) -> Option<usize> {
        self.body_pose_joints.iter().position(|&j| j == joint)
    }

    fn finalize(&mut self) -> Result<()> {
        self.validate()?;
        let j = self.joint_count();
        self.sparse_weights = self
            .skinning_weights
            .chunks_exact(j)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(i, &w)| (i, w))
                    .collect()
            })
            .collect();
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let v = self.vertex_count();
        let j = self.joint_count();
        let bad = |m: String| Err(Error::validation(format!("asset '{}': {m}", self.name)));
        if v == 0 || j == 0 {
            return bad("asset needs at least one vertex and one joint".into());
        }
        if self.template_vertices.iter().flatten().any(|x| !x.is_finite()) {
            return bad("template has non-finite coordinates".into());
        }
        if self.joint_parents.len() != j {
            return bad(format!("{} parents for {} joints", self.joint_parents.len(), j));
        }
        let roots = self.joint_parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return bad(format!("kinematic tree has {roots} roots, expected exactly one"));
        }
        for (i, p) in self.joint_parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= i {
                    return bad(format!("joint {i} has parent {p}; parents must precede children"));
                }
            }
        }
        if let Some(f) = self.faces.iter().flatten().find(|&&i| i as usize >= v) {
            return bad(format!("face index {f} out of range for {v} vertices"));
        }
        if self.skinning_weights.len() != v * j {
            return bad(format!(
                "skinning weights have {} entries, expected {}",
                self.skinning_weights.len(),
                v * j
            ));
        }
        for (vi, row) in self.skinning_weights.chunks_exact(j).enumerate() {
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return bad(format!("vertex {vi} has a negative or non-finite weight"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return bad(format!("weights of vertex {vi} sum to {s}"));
            }
        }
        if self.semantic_vertex_colors.len() != v {
            return bad("semantic colors must have one entry per vertex".into());
        }
        if let Some(dirs) = &self.shape_directions {
            if dirs.len() != v * 3 * self.shape_count {
                return bad(format!("shape directions have {} entries, expected V*3*S", dirs.len()));
            }
        } else if self.shape_count != 0 {
            return bad("shape count set without shape directions".into());
        }
        if let Some(child) = &self.child_template_vertices {
            if child.len() != v {
                return bad(format!("child template has {} vertices, expected {v}", child.len()));
            }
        }
        if let Some(reg) = &self.joint_regressor {
            if reg.len() != j * v {
                return bad("joint regressor must be J x V".into());
            }
        }
        if let Some(pc) = &self.pose_correctives {
            if pc.len() != v * 3 * 9 * (j - 1) {
                return bad("pose correctives must be V x 3 x 9(J-1)".into());
            }
        }
        if self.hand_joint_ids.iter().any(|&h| h >= j) {
            return bad("wrist joint id out of range".into());
        }
        if self.hand_pose_joints[LEFT].len() != self.hand_pose_joints[RIGHT].len() {
            return bad("left and right hands must drive the same number of joints".into());
        }
        let driven: Vec<usize> = self
            .body_pose_joints
            .iter()
            .chain(self.hand_pose_joints.iter().flatten())
            .copied()
            .collect();
        let root = self.root();
        for (k, &d) in driven.iter().enumerate() {
            if d >= j || d == root {
                return bad(format!("pose slot drives invalid joint {d}"));
            }
            if driven[..k].contains(&d) {
                return bad(format!("joint {d} is driven by two pose slots"));
            }
        }
        if let Some(feet) = &self.foot_vertex_ids {
            if feet.iter().any(|&f| f >= v) {
                return bad("foot vertex id out of range".into());
            }
        }
        Ok(())
    }
}

/// Shaped rest-pose template: template blended toward the child template,
/// then shape offsets added.
pub fn apply_shape(asset: &BodyModelAsset, shape: &[f64], child_factor: f64) -> Result<Vec<Vector3<f64>>> {
    if shape.len() != asset.shape_count {
        return Err(Error::validation(format!(
            "shape has {} coefficients, asset expects {}",
            shape.len(),
            asset.shape_count
        )));
    }
    if !(0.0..=1.0).contains(&child_factor) {
        return Err(Error::validation(format!("child factor {child_factor} outside [0, 1]")));
    }
    let mut out = match (&asset.child_template_vertices, child_factor > 0.0) {
        (_, false) => asset.template_vertices.clone(),
        (Some(child), true) => asset
            .template_vertices
            .iter()
            .zip(child)
            .map(|(a, c)| a + (c - a) * child_factor)
            .collect(),
        (None, true) => {
            return Err(Error::validation(
                "child factor > 0 requires a child template in the asset",
            ))
        }
    };
    if let Some(dirs) = &asset.shape_directions {
        let s = asset.shape_count;
        for (vi, v) in out.iter_mut().enumerate() {
            for axis in 0..3 {
                let base = (vi * 3 + axis) * s;
                let offset: f64 = dirs[base..base + s].iter().zip(shape).map(|(d, b)| d * b).sum();
                v[axis] += offset;
            }
        }
    }
    Ok(out)
}

/// Joint rest positions for a shaped template.
pub fn shaped_joints(asset: &BodyModelAsset, shaped: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    match &asset.joint_regressor {
        None => asset.joint_rest_positions.clone(),
        Some(reg) => reg
            .chunks_exact(asset.vertex_count())
            .map(|row| {
                row.iter()
                    .zip(shaped)
                    .filter(|(w, _)| **w != 0.0)
                    .fold(Vector3::zeros(), |acc, (w, p)| acc + p * *w)
            })
            .collect(),
    }
}

/// Local rotation of every joint for `pose`.
pub fn local_rotations(asset: &BodyModelAsset, pose: &FramePose) -> Vec<Matrix3<f64>> {
    let mut local = vec![Matrix3::identity(); asset.joint_count()];
    local[asset.root()] = axis_angle_to_matrix(&pose.global_orientation);
    for (slot, &j) in asset.body_pose_joints.iter().enumerate() {
        local[j] = axis_angle_to_matrix(&pose.body_pose[slot]);
    }
    for side in [LEFT, RIGHT] {
        for (slot, &j) in asset.hand_pose_joints[side].iter().enumerate() {
            local[j] = axis_angle_to_matrix(&pose.hand_pose[side][slot]);
        }
    }
    local
}

fn compose_chain(
    asset: &BodyModelAsset,
    local: &[Matrix3<f64>],
    rest_joints: &[Vector3<f64>],
    translation: &Vector3<f64>,
) -> Vec<RigidTransform> {
    let mut global: Vec<RigidTransform> = Vec::with_capacity(asset.joint_count());
    for (j, parent) in asset.joint_parents.iter().enumerate() {
        let t = match parent {
            None => RigidTransform {
                rotation: local[j],
                translation: rest_joints[j] + translation,
            },
            Some(p) => {
                let g = &global[*p];
                RigidTransform {
                    rotation: g.rotation * local[j],
                    translation: g.translation + g.rotation * (rest_joints[j] - rest_joints[*p]),
                }
            }
        };
        global.push(t);
    }
    global
}

/// Global joint transforms. `translation` of each entry is the posed joint
/// position; `rotation` is the accumulated rotation from the root.
pub fn forward_kinematics(asset: &BodyModelAsset, pose: &FramePose) -> Result<Vec<RigidTransform>> {
    pose.check_against(asset)?;
    let shaped = apply_shape(asset, &pose.shape, pose.child_factor)?;
    let rest = shaped_joints(asset, &shaped);
    Ok(compose_chain(
        asset,
        &local_rotations(asset, pose),
        &rest,
        &pose.translation,
    ))
}

/// Global rotation of `joint`: product of local rotations from the root down.
pub fn chain_global_rotation(asset: &BodyModelAsset, pose: &FramePose, joint: usize) -> Result<Matrix3<f64>> {
    if joint >= asset.joint_count() {
        return Err(Error::validation(format!(
            "joint id {joint} out of range for {} joints",
            asset.joint_count()
        )));
    }
    pose.check_against(asset)?;
    let local = local_rotations(asset, pose);
    let mut chain = vec![joint];
    while let Some(p) = asset.joint_parents[*chain.last().unwrap()] {
        chain.push(p);
    }
    Ok(chain.iter().rev().fold(Matrix3::identity(), |acc, &j| acc * local[j]))
}

/// Linear blend skinning of the shaped template.
pub fn skin_vertices(asset: &BodyModelAsset, pose: &FramePose) -> Result<MeshFrame> {
    pose.check_against(asset)?;
    let mut shaped = apply_shape(asset, &pose.shape, pose.child_factor)?;
    let rest = shaped_joints(asset, &shaped);
    let local = local_rotations(asset, pose);
    if let Some(pc) = &asset.pose_correctives {
        add_pose_correctives(asset, pc, &local, &mut shaped);
    }
    let global = compose_chain(asset, &local, &rest, &pose.translation);
    let vertices = shaped
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            asset.sparse_weights[vi].iter().fold(Vector3::zeros(), |acc, &(j, w)| {
                let g = &global[j];
                acc + (g.rotation * (v - rest[j]) + g.translation) * w
            })
        })
        .collect();
    Ok(MeshFrame {
        vertices,
        joints: global.iter().map(|g| g.translation).collect(),
    })
}

fn add_pose_correctives(asset: &BodyModelAsset, pc: &[f64], local: &[Matrix3<f64>], shaped: &mut [Vector3<f64>]) {
    let root = asset.root();
    let feature: Vec<f64> = (0..asset.joint_count())
        .filter(|&j| j != root)
        .flat_map(|j| {
            let d = local[j] - Matrix3::identity();
            // row-major flatten
            (0..9).map(move |k| d[(k / 3, k % 3)])
        })
        .collect();
    let p = feature.len();
    for (vi, v) in shaped.iter_mut().enumerate() {
        for axis in 0..3 {
            let base = (vi * 3 + axis) * p;
            v[axis] += pc[base..base + p].iter().zip(&feature).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Checks every FK rotation for orthonormality.
pub fn transforms_are_rigid(ts: &[RigidTransform], tol: f64) -> bool {
    ts.iter().all(|t| is_rotation(&t.rotation, tol))
}
