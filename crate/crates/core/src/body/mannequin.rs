//! Procedural mannequin asset: 28 joints, tube-shaped limbs, ~2.5k vertices.
//!
//! It follows the layout of the licensed parametric bodies closely enough to
//! exercise every code path: 21 body-pose joints (wrists included), a small
//! finger chain per hand, ten shape directions, a child template, a joint
//! regressor and foot vertices. The body faces +z with +y up; its left side
//! is +x.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::BodyModelAsset;

pub const JOINT_NAMES: [&str; 28] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_finger1",
    "left_finger2",
    "left_finger3",
    "right_finger1",
    "right_finger2",
    "right_finger3",
];

const PARENTS: [i32; 28] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 22, 23, 21, 25, 26,
];

pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;
pub const LEFT_HIP: usize = 1;
pub const RIGHT_HIP: usize = 2;
pub const LEFT_KNEE: usize = 4;
pub const RIGHT_KNEE: usize = 5;
pub const LEFT_SHOULDER: usize = 16;
pub const RIGHT_SHOULDER: usize = 17;
pub const LEFT_ELBOW: usize = 18;
pub const RIGHT_ELBOW: usize = 19;
pub const SHAPE_COUNT: usize = 10;

const RADIAL: usize = 12;

fn rest_joints() -> Vec<Vector3<f64>> {
    let p = |x, y, z| Vector3::new(x, y, z);
    vec![
        p(0.0, 0.95, 0.0),
        p(0.09, 0.90, 0.0),
        p(-0.09, 0.90, 0.0),
        p(0.0, 1.05, 0.0),
        p(0.09, 0.52, 0.01),
        p(-0.09, 0.52, 0.01),
        p(0.0, 1.20, 0.0),
        p(0.09, 0.10, -0.01),
        p(-0.09, 0.10, -0.01),
        p(0.0, 1.33, 0.0),
        p(0.09, 0.05, 0.14),
        p(-0.09, 0.05, 0.14),
        p(0.0, 1.50, 0.0),
        p(0.07, 1.45, 0.0),
        p(-0.07, 1.45, 0.0),
        p(0.0, 1.60, 0.01),
        p(0.18, 1.43, 0.0),
        p(-0.18, 1.43, 0.0),
        p(0.45, 1.43, 0.0),
        p(-0.45, 1.43, 0.0),
        p(0.70, 1.43, 0.0),
        p(-0.70, 1.43, 0.0),
        p(0.78, 1.43, 0.0),
        p(0.83, 1.43, 0.0),
        p(0.87, 1.43, 0.0),
        p(-0.78, 1.43, 0.0),
        p(-0.83, 1.43, 0.0),
        p(-0.87, 1.43, 0.0),
    ]
}

/// Tube radius for the bone driven by `joint`.
fn radius(joint: usize) -> f64 {
    match joint {
        0 | 3 | 6 => 0.13,
        9 => 0.12,
        1 | 2 => 0.08,
        4 | 5 => 0.055,
        7 | 8 => 0.045,
        12 => 0.05,
        13 | 14 => 0.05,
        16 | 17 => 0.045,
        18 | 19 => 0.038,
        20 | 21 => 0.035,
        _ => 0.018,
    }
}

struct Builder {
    verts: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    weights: Vec<Vec<(usize, f64)>>,
    /// Vertices of rings centred on each joint.
    joint_rings: Vec<Vec<usize>>,
    foot: Vec<usize>,
}

impl Builder {
    fn ring(&mut self, center: Vector3<f64>, e1: Vector3<f64>, e2: Vector3<f64>, r: f64, w: &[(usize, f64)]) -> usize {
        let start = self.verts.len();
        for k in 0..RADIAL {
            let a = 2.0 * PI * k as f64 / RADIAL as f64;
            self.verts.push(center + (e1 * a.cos() + e2 * a.sin()) * r);
            self.weights.push(w.to_vec());
        }
        start
    }

    fn connect(&mut self, a: usize, b: usize) {
        for k in 0..RADIAL {
            let k1 = (k + 1) % RADIAL;
            let (a0, a1, b0, b1) = ((a + k) as u32, (a + k1) as u32, (b + k) as u32, (b + k1) as u32);
            self.faces.push([a0, b0, a1]);
            self.faces.push([a1, b0, b1]);
        }
    }

    fn cap(&mut self, ring: usize, tip: Vector3<f64>, w: &[(usize, f64)], flip: bool) {
        let c = self.verts.len() as u32;
        self.verts.push(tip);
        self.weights.push(w.to_vec());
        for k in 0..RADIAL {
            let (a, b) = ((ring + k) as u32, (ring + (k + 1) % RADIAL) as u32);
            self.faces.push(if flip { [b, a, c] } else { [a, b, c] });
        }
    }
}

fn frame_for(d: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let reference = if d.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let e1 = d.cross(&reference).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

fn normalized(w: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for (j, x) in w {
        if x <= 0.0 {
            continue;
        }
        match merged.iter_mut().find(|(k, _)| *k == j) {
            Some(e) => e.1 += x,
            None => merged.push((j, x)),
        }
    }
    let s: f64 = merged.iter().map(|e| e.1).sum();
    merged.iter_mut().for_each(|e| e.1 /= s);
    merged
}

/// Builds the mannequin asset.
pub fn mannequin() -> BodyModelAsset {
    let joints = rest_joints();
    let parents: Vec<Option<usize>> = PARENTS.iter().map(|&p| (p >= 0).then_some(p as usize)).collect();
    let jn = joints.len();
    let mut b = Builder {
        verts: Vec::new(),
        faces: Vec::new(),
        weights: Vec::new(),
        joint_rings: vec![Vec::new(); jn],
        foot: Vec::new(),
    };

    for child in 0..jn {
        let Some(driver) = parents[child] else { continue };
        let (p0, p1) = (joints[driver], joints[child]);
        let axis = p1 - p0;
        let len = axis.norm();
        let d = axis / len;
        let (e1, e2) = frame_for(d);
        let r = radius(driver);
        let rings = ((len / 0.03).ceil() as usize + 1).clamp(3, 12);
        let grand = parents[driver];
        let child_has_bones = parents.contains(&Some(child));
        let mut ring_starts = Vec::with_capacity(rings);
        for i in 0..rings {
            let t = i as f64 / (rings - 1) as f64;
            let mut w = vec![(driver, 1.0)];
            if t < 0.25 {
                if let Some(g) = grand {
                    let blend = 0.4 * (1.0 - t / 0.25);
                    w = vec![(driver, 1.0 - blend), (g, blend)];
                }
            } else if t > 0.75 && child_has_bones {
                let blend = 0.4 * (t - 0.75) / 0.25;
                w = vec![(driver, 1.0 - blend), (child, blend)];
            }
            let w = normalized(w);
            let start = b.ring(p0 + axis * t, e1, e2, r, &w);
            if i == 0 {
                b.joint_rings[driver].extend(start..start + RADIAL);
            }
            if i == rings - 1 {
                b.joint_rings[child].extend(start..start + RADIAL);
            }
            if driver == 7 || driver == 8 {
                b.foot.extend(start..start + RADIAL);
            }
            ring_starts.push(start);
        }
        for pair in ring_starts.windows(2) {
            b.connect(pair[0], pair[1]);
        }
        let first_w = b.weights[ring_starts[0]].clone();
        let last_w = b.weights[*ring_starts.last().unwrap()].clone();
        b.cap(ring_starts[0], p0 - d * (r * 0.3), &first_w, true);
        let tip = b.verts.len();
        b.cap(*ring_starts.last().unwrap(), p1 + d * (r * 0.3), &last_w, false);
        if driver == 7 || driver == 8 {
            b.foot.push(tip);
        }
    }

    // head: a UV sphere above the head joint
    let center = joints[15] + Vector3::new(0.0, 0.1, 0.0);
    let head_r = 0.1;
    let lat = 8;
    let top = b.verts.len();
    b.verts.push(center + Vector3::new(0.0, head_r, 0.0));
    b.weights.push(vec![(15, 1.0)]);
    let mut bands = Vec::new();
    for i in 1..lat {
        let phi = PI * i as f64 / lat as f64;
        let start = b.ring(
            center + Vector3::new(0.0, head_r * phi.cos(), 0.0),
            Vector3::x(),
            -Vector3::z(),
            head_r * phi.sin(),
            &[(15, 1.0)],
        );
        bands.push(start);
    }
    for k in 0..RADIAL {
        let (a, c) = ((bands[0] + k) as u32, (bands[0] + (k + 1) % RADIAL) as u32);
        b.faces.push([top as u32, c, a]);
    }
    for pair in bands.windows(2) {
        b.connect(pair[0], pair[1]);
    }
    let last = *bands.last().unwrap();
    b.cap(last, center - Vector3::new(0.0, head_r, 0.0), &[(15, 1.0)], false);

    let v = b.verts.len();
    let mut dense = vec![0.0; v * jn];
    for (vi, w) in b.weights.iter().enumerate() {
        for &(j, x) in w {
            dense[vi * jn + j] = x;
        }
    }

    let (lo, hi) = b.verts.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let colors = b
        .verts
        .iter()
        .map(|p| {
            let n = (p - lo).component_div(&(hi - lo));
            [n.x, n.y, n.z]
        })
        .collect();

    let mut regressor = vec![0.0; jn * v];
    for (j, ring) in b.joint_rings.iter().enumerate() {
        let w = 1.0 / ring.len() as f64;
        for &vi in ring {
            regressor[j * v + vi] = w;
        }
    }

    let shape_dirs = shape_directions(&b.verts);
    let child: Vec<Vector3<f64>> = b
        .verts
        .iter()
        .map(|p| Vector3::new(p.x * 0.68, p.y * 0.6, p.z * 0.7))
        .collect();

    BodyModelAsset::new(
        "mannequin",
        b.verts,
        b.faces,
        joints,
        parents,
        dense,
        colors,
        [LEFT_WRIST, RIGHT_WRIST],
        (1..=21).collect(),
        [vec![22, 23, 24], vec![25, 26, 27]],
    )
    .and_then(|a| a.with_shape_directions(shape_dirs, SHAPE_COUNT))
    .and_then(|a| a.with_child_template(child))
    .and_then(|a| a.with_joint_regressor(regressor))
    .and_then(|a| a.with_foot_vertices(b.foot))
    .expect("mannequin satisfies asset invariants")
}

/// `V x 3 x S`: height, girth, belly, then seven low-amplitude smooth fields.
fn shape_directions(verts: &[Vector3<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; verts.len() * 3 * SHAPE_COUNT];
    for (vi, p) in verts.iter().enumerate() {
        let mut set = |axis: usize, s: usize, val: f64| out[(vi * 3 + axis) * SHAPE_COUNT + s] = val;
        set(1, 0, 0.05 * p.y);
        set(0, 1, 0.05 * p.x);
        set(2, 1, 0.05 * p.z);
        if p.x.abs() < 0.16 && p.y > 0.85 && p.y < 1.4 {
            set(2, 2, 0.02 * (-((p.y - 1.1) / 0.15).powi(2)).exp());
        }
        for s in 3..SHAPE_COUNT {
            let k = s as f64;
            set(0, s, 0.004 * (k * p.y + 0.3 * k).sin());
            set(2, s, 0.004 * (k * 1.7 * p.y).cos() * p.x.signum());
        }
    }
    out
}
