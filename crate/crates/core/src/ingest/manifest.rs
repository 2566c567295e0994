//! JSON episode manifests and the image files they reference.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Detection, DetectionSource, Episode, PosedFrame};
use crate::error::{Error, Result};
use crate::image::BBox;
use crate::imageio;
use crate::{Intrinsics, Pose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthFormat {
    /// Raw little-endian `f32` meters.
    #[default]
    #[serde(rename = "f32")]
    F32,
    /// 16-bit grayscale PNG, millimeters.
    #[serde(rename = "png16_mm")]
    Png16Mm,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    episode_id: String,
    environment_id: String,
    target_class: u32,
    #[serde(default)]
    reference_view: Option<u32>,
    frames: Vec<FrameDoc>,
    detections: Vec<DetectionDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    view_index: u32,
    rgb: String,
    depth: String,
    depth_format: DepthFormat,
    intrinsics: Intrinsics,
    /// Row-major 4×4 reference→camera transform.
    pose: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionDoc {
    view_index: u32,
    class_id: u32,
    confidence: f64,
    mask: String,
    bbox: [u32; 4],
    source: DetectionSource,
}

/// File names used for one frame when writing an episode.
#[derive(Clone, Debug)]
pub struct FrameFiles {
    pub rgb: String,
    pub depth: String,
}

#[derive(Clone, Debug, Default)]
pub struct WriteOptions {
    pub depth_format: DepthFormat,
}

/// Loads and fully validates an episode manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_episode(manifest_path: &Path) -> Result<Episode> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let doc: ManifestDoc = serde_json::from_str(&text)
        .map_err(|e| Error::manifest(manifest_path, "<document>", e.to_string()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf { base.join(p) };
    let field_err = |field: String, e: Error| Error::manifest(manifest_path, field, e.to_string());

    let mut frames = Vec::with_capacity(doc.frames.len());
    for (i, f) in doc.frames.iter().enumerate() {
        f.intrinsics.validate().map_err(|e| field_err(format!("frames[{i}].intrinsics"), e))?;
        let pose = Pose::from_matrix(&f.pose).map_err(|e| field_err(format!("frames[{i}].pose"), e))?;
        let rgb = imageio::read_rgb_png(&resolve(&f.rgb))?;
        let dims = (f.intrinsics.width, f.intrinsics.height);
        if rgb.dims() != dims {
            return Err(Error::manifest(
                manifest_path,
                format!("frames[{i}].intrinsics"),
                format!("rgb size {:?} does not match intrinsics {dims:?}", rgb.dims()),
            ));
        }
        let depth_path = resolve(&f.depth);
        let depth = match f.depth_format {
            DepthFormat::F32 => imageio::read_depth_f32(&depth_path, f.intrinsics.width, f.intrinsics.height)?,
            DepthFormat::Png16Mm => imageio::read_depth_png16(&depth_path)?,
        };
        if depth.dims() != dims {
            return Err(Error::manifest(
                manifest_path,
                format!("frames[{i}].intrinsics"),
                format!("depth size {:?} does not match intrinsics {dims:?}", depth.dims()),
            ));
        }
        frames.push(PosedFrame {
            view_index: f.view_index,
            timestamp: f.timestamp.unwrap_or(f.view_index as f64),
            intrinsics: f.intrinsics,
            pose,
            rgb,
            depth,
        });
    }

    let mut detections = Vec::with_capacity(doc.detections.len());
    for (i, d) in doc.detections.iter().enumerate() {
        let mask = imageio::read_mask_png(&resolve(&d.mask))?;
        let det = Detection {
            view_index: d.view_index,
            class_id: d.class_id,
            confidence: d.confidence,
            mask,
            bbox: BBox { x: d.bbox[0], y: d.bbox[1], w: d.bbox[2], h: d.bbox[3] },
            source: d.source,
        };
        det.validate().map_err(|e| field_err(format!("detections[{i}]"), e))?;
        detections.push(det);
    }

    Episode::new(doc.episode_id, doc.environment_id, doc.target_class, doc.reference_view, frames, detections)
        .map_err(|e| field_err("episode".into(), e))
}

/// Writes an episode into `dir` (images plus `manifest.json`) and returns
/// the manifest path.
pub fn write_episode(episode: &Episode, dir: &Path, opts: &WriteOptions) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for f in &episode.frames {
        let rgb = format!("rgb_{:03}.png", f.view_index);
        let depth = match opts.depth_format {
            DepthFormat::F32 => format!("depth_{:03}.bin", f.view_index),
            DepthFormat::Png16Mm => format!("depth_{:03}.png", f.view_index),
        };
        imageio::write_rgb_png(&dir.join(&rgb), &f.rgb)?;
        match opts.depth_format {
            DepthFormat::F32 => imageio::write_depth_f32(&dir.join(&depth), &f.depth)?,
            DepthFormat::Png16Mm => imageio::write_depth_png16(&dir.join(&depth), &f.depth)?,
        }
        frames.push(FrameDoc {
            view_index: f.view_index,
            rgb,
            depth,
            depth_format: opts.depth_format,
            intrinsics: f.intrinsics,
            pose: f.pose.to_matrix().to_vec(),
            timestamp: Some(f.timestamp),
        });
    }
    let mut detections = Vec::new();
    for (i, d) in episode.detections.iter().enumerate() {
        let mask = format!("mask_{:03}_{:03}.png", d.view_index, i);
        imageio::write_mask_png(&dir.join(&mask), &d.mask)?;
        detections.push(DetectionDoc {
            view_index: d.view_index,
            class_id: d.class_id,
            confidence: d.confidence,
            mask,
            bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
            source: d.source,
        });
    }
    let doc = ManifestDoc {
        episode_id: episode.episode_id.clone(),
        environment_id: episode.environment_id.clone(),
        target_class: episode.target_class,
        reference_view: Some(episode.reference_view),
        frames,
        detections,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&doc).expect("manifest serializes");
    imageio::write_atomic(&path, &json)?;
    Ok(path)
}
