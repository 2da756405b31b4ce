//! Asset (de)serialization on top of [`Container`].
//!
//! Files ending in `.json` use the pure-JSON container form; everything else
//! is read as the binary container.

use std::path::Path;

use nalgebra::Vector3;
use serde_json::Value;

use super::container::Container;
use super::{BodyModelAsset, LEFT, RIGHT};
use crate::error::{Error, Result};

fn to_vecs(flat: &[f64]) -> Vec<Vector3<f64>> {
    flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

fn flatten(vs: &[Vector3<f64>]) -> Vec<f64> {
    vs.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

fn to_indices(name: &str, v: &[i32]) -> Result<Vec<usize>> {
    v.iter()
        .map(|&i| usize::try_from(i).map_err(|_| Error::validation(format!("'{name}' has negative index {i}"))))
        .collect()
}

pub fn asset_to_container(asset: &BodyModelAsset) -> Container {
    let v = asset.vertex_count();
    let j = asset.joint_count();
    let mut c = Container::new();
    c.meta.insert("kind".into(), Value::from("body-model"));
    c.meta.insert("name".into(), Value::from(asset.name.clone()));
    c.push_f64("template_vertices", vec![v, 3], flatten(&asset.template_vertices));
    c.push_i32(
        "faces",
        vec![asset.faces.len(), 3],
        asset.faces.iter().flatten().map(|&i| i as i32).collect(),
    );
    c.push_f64("joint_rest_positions", vec![j, 3], flatten(&asset.joint_rest_positions));
    c.push_i32(
        "joint_parents",
        vec![j],
        asset.joint_parents.iter().map(|p| p.map_or(-1, |p| p as i32)).collect(),
    );
    c.push_f64("skinning_weights", vec![v, j], asset.skinning_weights.clone());
    c.push_f64(
        "semantic_vertex_colors",
        vec![v, 3],
        asset.semantic_vertex_colors.iter().flatten().copied().collect(),
    );
    c.push_i32(
        "hand_joint_ids",
        vec![2],
        asset.hand_joint_ids.iter().map(|&i| i as i32).collect(),
    );
    c.push_i32(
        "body_pose_joints",
        vec![asset.body_pose_joints.len()],
        asset.body_pose_joints.iter().map(|&i| i as i32).collect(),
    );
    let h = asset.hand_pose_joints[LEFT].len();
    c.push_i32(
        "hand_pose_joints",
        vec![2, h],
        asset.hand_pose_joints.iter().flatten().map(|&i| i as i32).collect(),
    );
    if let Some(d) = &asset.shape_directions {
        c.push_f64("shape_directions", vec![v, 3, asset.shape_count], d.clone());
    }
    if let Some(child) = &asset.child_template_vertices {
        c.push_f64("child_template_vertices", vec![v, 3], flatten(child));
    }
    if let Some(reg) = &asset.joint_regressor {
        c.push_f64("joint_regressor", vec![j, v], reg.clone());
    }
    if let Some(pc) = &asset.pose_correctives {
        c.push_f64("pose_correctives", vec![v, 3, 9 * (j - 1)], pc.clone());
    }
    if let Some(feet) = &asset.foot_vertex_ids {
        c.push_i32(
            "foot_vertex_ids",
            vec![feet.len()],
            feet.iter().map(|&i| i as i32).collect(),
        );
    }
    c
}

pub fn asset_from_container(c: &Container) -> Result<BodyModelAsset> {
    let req_f = |name: &str, shape: &[Option<usize>]| -> Result<Vec<f64>> {
        c.f64_array(name, shape)?
            .map(|(_, d)| d.to_vec())
            .ok_or_else(|| Error::validation(format!("missing required array '{name}'")))
    };
    let req_i = |name: &str, shape: &[Option<usize>]| -> Result<Vec<i32>> {
        c.i32_array(name, shape)?
            .map(|(_, d)| d.to_vec())
            .ok_or_else(|| Error::validation(format!("missing required array '{name}'")))
    };
    let template = to_vecs(&req_f("template_vertices", &[None, Some(3)])?);
    let v = template.len();
    let joints = to_vecs(&req_f("joint_rest_positions", &[None, Some(3)])?);
    let j = joints.len();
    let faces: Vec<[u32; 3]> = req_i("faces", &[None, Some(3)])?
        .chunks_exact(3)
        .map(|f| {
            let idx = |i: i32| u32::try_from(i).map_err(|_| Error::validation(format!("negative face index {i}")));
            Ok([idx(f[0])?, idx(f[1])?, idx(f[2])?])
        })
        .collect::<Result<_>>()?;
    let parents = req_i("joint_parents", &[Some(j)])?
        .into_iter()
        .map(|p| if p < 0 { None } else { Some(p as usize) })
        .collect();
    let weights = req_f("skinning_weights", &[Some(v), Some(j)])?;
    let colors = req_f("semantic_vertex_colors", &[Some(v), Some(3)])?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let wrists = to_indices("hand_joint_ids", &req_i("hand_joint_ids", &[Some(2)])?)?;
    let body_pose_joints = to_indices("body_pose_joints", &req_i("body_pose_joints", &[None])?)?;
    let hand_joints = req_i("hand_pose_joints", &[Some(2), None])?;
    let h = hand_joints.len() / 2;
    let hand_pose_joints = [
        to_indices("hand_pose_joints", &hand_joints[..h])?,
        to_indices("hand_pose_joints", &hand_joints[h..])?,
    ];
    let name = c
        .meta
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or("unnamed")
        .to_string();
    let mut asset = BodyModelAsset::new(
        name,
        template,
        faces,
        joints,
        parents,
        weights,
        colors,
        [wrists[LEFT], wrists[RIGHT]],
        body_pose_joints,
        hand_pose_joints,
    )?;
    if let Some((shape, d)) = c.f64_array("shape_directions", &[Some(v), Some(3), None])? {
        asset = asset.with_shape_directions(d.to_vec(), shape[2])?;
    }
    if let Some((_, d)) = c.f64_array("child_template_vertices", &[Some(v), Some(3)])? {
        asset = asset.with_child_template(to_vecs(d))?;
    }
    if let Some((_, d)) = c.f64_array("joint_regressor", &[Some(j), Some(v)])? {
        asset = asset.with_joint_regressor(d.to_vec())?;
    }
    if let Some((_, d)) = c.f64_array("pose_correctives", &[Some(v), Some(3), Some(9 * (j.max(1) - 1))])? {
        asset = asset.with_pose_correctives(d.to_vec())?;
    }
    if let Some((_, d)) = c.i32_array("foot_vertex_ids", &[None])? {
        asset = asset.with_foot_vertices(to_indices("foot_vertex_ids", d)?)?;
    }
    Ok(asset)
}

/// Loads an asset from the binary container, or from the JSON form when the
/// path ends in `.json`.
pub fn load_asset(path: &Path) -> Result<BodyModelAsset> {
    let container = if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        Container::from_json(&value).map_err(|m| Error::parse(path, m))?
    } else {
        Container::read(path)?
    };
    asset_from_container(&container).map_err(|e| e.context(&path.display().to_string()))
}

pub fn save_asset(asset: &BodyModelAsset, path: &Path) -> Result<()> {
    asset_to_container(asset).write(path)
}

pub fn save_asset_json(asset: &BodyModelAsset, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&asset_to_container(asset).to_json()).expect("json serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
