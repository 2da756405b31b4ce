//! PNG encoding, sequence rendering and the output manifest.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{render_guidance, GuidanceFrame, RenderMesh, HAND_OCCLUSION_DELTA};
use crate::camera::CameraTrack;
use crate::depth::encode_pfm;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapType {
    Depth,
    Normal,
    Semantic,
    Hand,
    Mask,
}

impl MapType {
    pub const ALL: [MapType; 5] = [
        MapType::Depth,
        MapType::Normal,
        MapType::Semantic,
        MapType::Hand,
        MapType::Mask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapType::Depth => "depth",
            MapType::Normal => "normal",
            MapType::Semantic => "semantic",
            MapType::Hand => "hand",
            MapType::Mask => "mask",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown map type {s:?}")))
    }

    fn encoding(self) -> &'static str {
        match self {
            MapType::Depth => "png gray16, millimeters, 0 = background, saturates at 65.535 m",
            MapType::Normal => "png rgb8, camera-space unit normal as (n + 1) / 2 * 255, facing the camera",
            MapType::Semantic => "png rgb8, perspective-correct blend of vertex colours",
            MapType::Hand => "png rgb8, hand vertex colours, zeroed where occluded by the body",
            MapType::Mask => "png gray8, 255 = foreground",
        }
    }

    /// Encoded PNG bytes of this map.
    pub fn encode(self, g: &GuidanceFrame) -> Vec<u8> {
        match self {
            MapType::Depth => encode_depth_png(g.width, g.height, &g.depth),
            MapType::Normal => encode_rgb_png(g.width, g.height, &g.normal),
            MapType::Semantic => encode_rgb_png(g.width, g.height, &g.semantic),
            MapType::Hand => encode_rgb_png(g.width, g.height, &g.hand),
            MapType::Mask => encode_mask_png(g.width, g.height, &g.mask),
        }
    }
}

fn encode_png(width: u32, height: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// Depth in millimetres; covered pixels never round down to background.
pub fn encode_depth_png(width: u32, height: u32, meters: &[f64]) -> Vec<u8> {
    let mut data = Vec::with_capacity(meters.len() * 2);
    for &d in meters {
        let mm = if d > 0.0 {
            (d * 1000.0).round().clamp(1.0, 65535.0) as u16
        } else {
            0
        };
        data.extend_from_slice(&mm.to_be_bytes());
    }
    encode_png(width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn encode_rgb_png(width: u32, height: u32, rgb: &[[u8; 3]]) -> Vec<u8> {
    encode_png(
        width,
        height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        rgb.as_flattened(),
    )
}

pub fn encode_mask_png(width: u32, height: u32, mask: &[u8]) -> Vec<u8> {
    let data: Vec<u8> = mask.iter().map(|&m| if m > 0 { 255 } else { 0 }).collect();
    encode_png(width, height, png::ColorType::Grayscale, png::BitDepth::Eight, &data)
}

/// A decoded PNG, samples widened to u16.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedImage {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub bit_depth: u8,
    pub samples: Vec<u16>,
}

pub fn decode_png(bytes: &[u8]) -> std::result::Result<DecodedImage, String> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("PNG too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    let samples = match info.bit_depth {
        png::BitDepth::Eight => buf.iter().map(|&b| b as u16).collect(),
        png::BitDepth::Sixteen => buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        other => return Err(format!("unsupported PNG bit depth {other:?}")),
    };
    Ok(DecodedImage {
        width: info.width,
        height: info.height,
        channels,
        bit_depth: info.bit_depth as u8,
        samples,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub width: u32,
    pub height: u32,
    /// Also write lossless float depth as `depth_pfm/frame_%06d.pfm`.
    pub depth_pfm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to check a render: where each file is and what it
/// hashes to. No timestamps, so identical inputs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderManifest {
    pub version: u32,
    pub resolution: [u32; 2],
    pub frame_count: usize,
    /// The cameras actually used, i.e. resized to the output resolution.
    pub cameras: serde_json::Value,
    pub encodings: BTreeMap<String, String>,
    pub hand_occlusion_delta_m: f64,
    pub files: BTreeMap<String, Vec<ManifestFile>>,
}

impl RenderManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

fn resized_track(cams: &CameraTrack, frames: usize, width: u32, height: u32) -> Result<CameraTrack> {
    if let Some(n) = cams.len() {
        if n != frames {
            return Err(Error::validation(format!("{n} per-frame cameras for {frames} frames")));
        }
    }
    Ok(match cams {
        CameraTrack::Single(c) => CameraTrack::Single(c.resized(width, height)?),
        CameraTrack::PerFrame(v) => {
            CameraTrack::PerFrame(v.iter().map(|c| c.resized(width, height)).collect::<Result<_>>()?)
        }
    })
}

/// Renders every frame in memory, in parallel; frame `n` uses camera `n`
/// of a per-frame track.
pub fn render_frames(
    frames: &[Vec<Vector3<f64>>],
    mesh: &RenderMesh,
    cams: &CameraTrack,
    width: u32,
    height: u32,
) -> Result<Vec<GuidanceFrame>> {
    let track = resized_track(cams, frames.len(), width, height)?;
    frames
        .par_iter()
        .enumerate()
        .map(|(n, v)| render_guidance(v, mesh, track.frame(n)).map_err(|e| e.context(&format!("frame {n}"))))
        .collect()
}

/// Renders and writes `<out>/<type>/frame_%06d.png` for all five map types,
/// plus `manifest.json`.
pub fn render_sequence(
    frames: &[Vec<Vector3<f64>>],
    mesh: &RenderMesh,
    cams: &CameraTrack,
    opts: &RenderOptions,
    out_dir: &Path,
) -> Result<RenderManifest> {
    if frames.is_empty() {
        return Err(Error::validation("nothing to render: the sequence has no frames"));
    }
    let track = resized_track(cams, frames.len(), opts.width, opts.height)?;
    let mut dirs: Vec<&str> = MapType::ALL.iter().map(|m| m.name()).collect();
    if opts.depth_pfm {
        dirs.push("depth_pfm");
    }
    for d in &dirs {
        let p = out_dir.join(d);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let written: Vec<Vec<(String, ManifestFile)>> = frames
        .par_iter()
        .enumerate()
        .map(|(n, v)| {
            let g = render_guidance(v, mesh, track.frame(n)).map_err(|e| e.context(&format!("frame {n}")))?;
            let mut files = Vec::with_capacity(dirs.len());
            let mut put = |kind: &str, ext: &str, bytes: Vec<u8>| -> Result<()> {
                let rel = format!("{kind}/frame_{n:06}.{ext}");
                let path = out_dir.join(&rel);
                std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
                files.push((
                    kind.to_string(),
                    ManifestFile {
                        path: rel,
                        sha256: sha256_hex(&bytes),
                    },
                ));
                Ok(())
            };
            for m in MapType::ALL {
                put(m.name(), "png", m.encode(&g))?;
            }
            if opts.depth_pfm {
                put("depth_pfm", "pfm", encode_pfm(g.width, g.height, &g.depth))?;
            }
            Ok(files)
        })
        .collect::<Result<_>>()?;

    let mut files: BTreeMap<String, Vec<ManifestFile>> = BTreeMap::new();
    for (kind, f) in written.into_iter().flatten() {
        files.entry(kind).or_default().push(f);
    }
    let mut encodings: BTreeMap<String, String> = MapType::ALL
        .iter()
        .map(|m| (m.name().to_string(), m.encoding().to_string()))
        .collect();
    if opts.depth_pfm {
        encodings.insert(
            "depth_pfm".into(),
            "pfm float32 little-endian, meters, 0 = background".into(),
        );
    }
    let manifest = RenderManifest {
        version: MANIFEST_VERSION,
        resolution: [opts.width, opts.height],
        frame_count: frames.len(),
        cameras: track.to_json(),
        encodings,
        hand_occlusion_delta_m: HAND_OCCLUSION_DELTA,
        files,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json_string()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
