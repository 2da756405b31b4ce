//! Software z-buffer rasterizer for guidance maps.
//!
//! Pixels are sampled at their centres `(i + 0.5, j + 0.5)`. A pixel is
//! covered by a triangle when it lies strictly inside or on a top or left
//! edge; depth is camera-space z, interpolated perspective-correctly, and
//! the nearest triangle wins with ties going to the lower face index.
//! Triangles crossing the near plane are clipped against it.

mod output;

use nalgebra::{Vector2, Vector3};

use crate::body::BodyModelAsset;
use crate::camera::{CameraModel, DEFAULT_NEAR};
use crate::error::{Error, Result};

pub use output::{
    decode_png, encode_depth_png, encode_mask_png, encode_rgb_png, render_frames, render_sequence, DecodedImage,
    ManifestFile, MapType, RenderManifest, RenderOptions, MANIFEST_VERSION,
};

/// Hand pixels hidden behind the body by more than this are zeroed, meters.
pub const HAND_OCCLUSION_DELTA: f64 = 0.005;

/// A world point seen by the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedVertex {
    pub u: f64,
    pub v: f64,
    /// Camera-space depth, meters.
    pub z: f64,
}

/// Projects a world point, or `None` when it is not in front of the near
/// plane and has to be clipped.
pub fn project_vertex(p: &Vector3<f64>, cam: &CameraModel, near: f64) -> Option<ProjectedVertex> {
    let c = cam.world_to_camera(p);
    if !(c.z > near) {
        return None;
    }
    let px = cam.project_camera(&c);
    Some(ProjectedVertex {
        u: px.x,
        v: px.y,
        z: c.z,
    })
}

/// One frame of guidance maps, row-major, `width * height` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceFrame {
    pub width: u32,
    pub height: u32,
    /// Camera-space depth in meters, 0 for background.
    pub depth: Vec<f64>,
    /// Camera-space unit normal encoded as `(n + 1) / 2 * 255`.
    pub normal: Vec<[u8; 3]>,
    pub semantic: Vec<[u8; 3]>,
    /// Hand colours, zeroed where the body hides the hand.
    pub hand: Vec<[u8; 3]>,
    /// 1 on the foreground, 0 elsewhere.
    pub mask: Vec<u8>,
}

impl GuidanceFrame {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        GuidanceFrame {
            width,
            height,
            depth: vec![0.0; n],
            normal: vec![[0; 3]; n],
            semantic: vec![[0; 3]; n],
            hand: vec![[0; 3]; n],
            mask: vec![0; n],
        }
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

pub fn encode_normal(n: &Vector3<f64>) -> [u8; 3] {
    let c = |v: f64| ((v + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8;
    [c(n.x), c(n.y), c(n.z)]
}

pub fn decode_normal(c: [u8; 3]) -> Vector3<f64> {
    let d = |v: u8| v as f64 / 255.0 * 2.0 - 1.0;
    Vector3::new(d(c[0]), d(c[1]), d(c[2]))
}

pub fn encode_color(c: &[f64; 3]) -> [u8; 3] {
    c.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Triangle mesh plus per-vertex colours in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderMesh {
    pub faces: Vec<[u32; 3]>,
    pub colors: Vec<[f64; 3]>,
    /// Faces drawn into the hand map.
    pub hand_faces: Vec<[u32; 3]>,
}

impl RenderMesh {
    /// The asset's faces and semantic palette; hand faces are those whose
    /// three vertices all belong to a hand.
    pub fn from_asset(asset: &BodyModelAsset) -> Self {
        let mut in_hand = vec![false; asset.vertex_count()];
        for side in 0..2 {
            for v in asset.hand_vertex_ids(side) {
                in_hand[v] = true;
            }
        }
        let hand_faces = asset
            .faces
            .iter()
            .filter(|f| f.iter().all(|&v| in_hand[v as usize]))
            .copied()
            .collect();
        RenderMesh {
            faces: asset.faces.clone(),
            colors: asset.semantic_vertex_colors.clone(),
            hand_faces,
        }
    }

    /// Overrides the palette, e.g. from a palette file.
    pub fn with_colors(mut self, colors: Vec<[f64; 3]>) -> Result<Self> {
        if colors.len() != self.colors.len() {
            return Err(Error::validation(format!(
                "palette has {} colours, mesh has {} vertices",
                colors.len(),
                self.colors.len()
            )));
        }
        self.colors = colors;
        Ok(self)
    }

    fn check(&self, vertex_count: usize) -> Result<()> {
        if self.colors.len() != vertex_count {
            return Err(Error::validation(format!(
                "{} vertex colours for {vertex_count} vertices",
                self.colors.len()
            )));
        }
        let bad = self
            .faces
            .iter()
            .chain(&self.hand_faces)
            .flatten()
            .find(|&&i| i as usize >= vertex_count);
        match bad {
            Some(i) => Err(Error::validation(format!(
                "face index {i} out of range ({vertex_count} vertices)"
            ))),
            None => Ok(()),
        }
    }
}

/// Z-buffer contents before encoding.
struct Raster {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    normal: Vec<Vector3<f64>>,
    color: Vec<[f64; 3]>,
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vector3<f64>,
    c: [f64; 3],
}

fn lerp_vertex(a: &ClipVertex, b: &ClipVertex, t: f64) -> ClipVertex {
    ClipVertex {
        p: a.p + (b.p - a.p) * t,
        c: [0, 1, 2].map(|i| a.c[i] + (b.c[i] - a.c[i]) * t),
    }
}

/// Sutherland-Hodgman against `z >= near`; at most four vertices come out.
fn clip_near(tri: [ClipVertex; 3], near: f64) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let (a, b) = (&tri[i], &tri[(i + 1) % 3]);
        let (ina, inb) = (a.p.z >= near, b.p.z >= near);
        if ina {
            out.push(*a);
        }
        if ina != inb {
            let t = (near - a.p.z) / (b.p.z - a.p.z);
            let mut v = lerp_vertex(a, b, t);
            v.p.z = near;
            out.push(v);
        }
    }
    out
}

/// Edge function evaluated with the endpoints in a canonical order, so a
/// shared edge gives bit-identical (negated) values in both triangles.
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    let raw = |a: &Vector2<f64>, b: &Vector2<f64>| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (a.x, a.y) <= (b.x, b.y) {
        raw(a, b)
    } else {
        -raw(b, a)
    }
}

/// Top or left edge of a triangle with positive edge-function area
/// (clockwise on screen, y down).
fn is_top_left(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let d = b - a;
    (d.y == 0.0 && d.x > 0.0) || d.y < 0.0
}

impl Raster {
    fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Raster {
            width,
            height,
            depth: vec![f64::INFINITY; n],
            normal: vec![Vector3::zeros(); n],
            color: vec![[0.0; 3]; n],
        }
    }

    fn draw(
        &mut self,
        cam_verts: &[Vector3<f64>],
        colors: &[[f64; 3]],
        faces: &[[u32; 3]],
        cam: &CameraModel,
        near: f64,
    ) {
        for f in faces {
            let tri = f.map(|i| ClipVertex {
                p: cam_verts[i as usize],
                c: colors[i as usize],
            });
            let mut n = (tri[1].p - tri[0].p).cross(&(tri[2].p - tri[0].p));
            let len = n.norm();
            if !(len > 0.0) {
                continue;
            }
            n /= len;
            if n.dot(&tri[0].p) > 0.0 {
                n = -n;
            }
            if tri.iter().all(|v| v.p.z > near) {
                self.fill(&tri, &n, cam);
            } else {
                let poly = clip_near(tri, near);
                for k in 1..poly.len().saturating_sub(1) {
                    self.fill(&[poly[0], poly[k], poly[k + 1]], &n, cam);
                }
            }
        }
    }

    fn fill(&mut self, tri: &[ClipVertex; 3], normal: &Vector3<f64>, cam: &CameraModel) {
        let mut s = tri.map(|v| cam.project_camera(&v.p));
        let mut t = *tri;
        let mut area = edge(&s[0], &s[1], &s[2]);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        if area < 0.0 {
            s.swap(1, 2);
            t.swap(1, 2);
            area = -area;
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let lo_x = s.iter().map(|p| p.x).fold(f64::MAX, f64::min);
        let hi_x = s.iter().map(|p| p.x).fold(f64::MIN, f64::max);
        let lo_y = s.iter().map(|p| p.y).fold(f64::MAX, f64::min);
        let hi_y = s.iter().map(|p| p.y).fold(f64::MIN, f64::max);
        // pixel centres i + 0.5 inside [lo, hi]
        let x0 = (lo_x - 0.5).ceil().max(0.0);
        let x1 = (hi_x - 0.5).floor().min(w - 1.0);
        let y0 = (lo_y - 0.5).ceil().max(0.0);
        let y1 = (hi_y - 0.5).floor().min(h - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let top_left = [
            is_top_left(&s[1], &s[2]),
            is_top_left(&s[2], &s[0]),
            is_top_left(&s[0], &s[1]),
        ];
        let inv_z = t.map(|v| 1.0 / v.p.z);
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let e = [edge(&s[1], &s[2], &p), edge(&s[2], &s[0], &p), edge(&s[0], &s[1], &p)];
                let inside = (0..3).all(|i| e[i] > 0.0 || (e[i] == 0.0 && top_left[i]));
                if !inside {
                    continue;
                }
                let b = e.map(|v| v / area);
                let wsum = b[0] * inv_z[0] + b[1] * inv_z[1] + b[2] * inv_z[2];
                let depth = 1.0 / wsum;
                let idx = y * self.width + x;
                if !(depth < self.depth[idx]) {
                    continue;
                }
                self.depth[idx] = depth;
                self.normal[idx] = *normal;
                self.color[idx] = [0, 1, 2].map(|c| (0..3).map(|i| b[i] * inv_z[i] * t[i].c[c]).sum::<f64>() * depth);
            }
        }
    }

    fn depth_or_zero(&self, idx: usize) -> f64 {
        if self.depth[idx].is_finite() {
            self.depth[idx]
        } else {
            0.0
        }
    }
}

fn camera_space(vertices: &[Vector3<f64>], cam: &CameraModel) -> Vec<Vector3<f64>> {
    vertices.iter().map(|v| cam.world_to_camera(v)).collect()
}

fn check_inputs(vertices: &[Vector3<f64>], mesh: &RenderMesh, cam: &CameraModel) -> Result<()> {
    cam.validate()?;
    mesh.check(vertices.len())?;
    if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
        return Err(Error::validation("mesh vertices contain non-finite values"));
    }
    Ok(())
}

/// Depth, normal, semantic and mask maps of one mesh at the camera's
/// resolution; the hand map is left empty.
pub fn rasterize_frame(vertices: &[Vector3<f64>], mesh: &RenderMesh, cam: &CameraModel) -> Result<GuidanceFrame> {
    check_inputs(vertices, mesh, cam)?;
    let cv = camera_space(vertices, cam);
    Ok(rasterize_body(&cv, mesh, cam).1)
}

fn rasterize_body(cv: &[Vector3<f64>], mesh: &RenderMesh, cam: &CameraModel) -> (Raster, GuidanceFrame) {
    let mut r = Raster::new(cam.width as usize, cam.height as usize);
    r.draw(cv, &mesh.colors, &mesh.faces, cam, DEFAULT_NEAR);
    let mut g = GuidanceFrame::empty(cam.width, cam.height);
    for i in 0..r.depth.len() {
        if r.depth[i].is_finite() {
            g.depth[i] = r.depth[i];
            g.normal[i] = encode_normal(&r.normal[i]);
            g.semantic[i] = encode_color(&r.color[i]);
            g.mask[i] = 1;
        }
    }
    (r, g)
}

fn hand_map(cv: &[Vector3<f64>], mesh: &RenderMesh, cam: &CameraModel, body: &Raster) -> Vec<[u8; 3]> {
    let mut r = Raster::new(cam.width as usize, cam.height as usize);
    r.draw(cv, &mesh.colors, &mesh.hand_faces, cam, DEFAULT_NEAR);
    (0..r.depth.len())
        .map(|i| {
            let hd = r.depth[i];
            if !hd.is_finite() {
                return [0; 3];
            }
            let bd = body.depth_or_zero(i);
            if bd > 0.0 && bd < hd - HAND_OCCLUSION_DELTA {
                [0; 3]
            } else {
                encode_color(&r.color[i])
            }
        })
        .collect()
}

/// Hands drawn alone, with pixels zeroed where the full body lies more than
/// [`HAND_OCCLUSION_DELTA`] in front of the hand.
pub fn render_hands_with_occlusion(
    vertices: &[Vector3<f64>],
    mesh: &RenderMesh,
    cam: &CameraModel,
) -> Result<Vec<[u8; 3]>> {
    check_inputs(vertices, mesh, cam)?;
    let cv = camera_space(vertices, cam);
    let (body, _) = rasterize_body(&cv, mesh, cam);
    Ok(hand_map(&cv, mesh, cam, &body))
}

/// All five maps for one frame.
pub fn render_guidance(vertices: &[Vector3<f64>], mesh: &RenderMesh, cam: &CameraModel) -> Result<GuidanceFrame> {
    check_inputs(vertices, mesh, cam)?;
    let cv = camera_space(vertices, cam);
    let (body, mut g) = rasterize_body(&cv, mesh, cam);
    g.hand = hand_map(&cv, mesh, cam, &body);
    Ok(g)
}
