//! COCO-style 2D annotation files and the 3D box list.
//!
//! Masks are stored as polygons of their pixel-edge boundary, one ring per
//! boundary loop (holes included). Decoding fills pixel centers by the
//! even-odd rule, which reproduces the encoded mask exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BBox, Mask};
use crate::imageio::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    DetectorSeed,
    WeakSeed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub episode_id: String,
    pub view_index: u32,
    /// Set when no label could be produced for this view.
    #[serde(default)]
    pub empty_label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub area: f64,
    pub segmentation: Vec<Vec<f64>>,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default = "one")]
    pub score: f64,
    /// Simulator instance the annotation belongs to, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u32>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::manifest(path, json_path(&e), e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("COCO data serializes");
        write_atomic(path, text.as_bytes())
    }

    /// Image id for `(episode_id, view_index)`.
    pub fn image_index(&self) -> BTreeMap<(String, u32), u64> {
        self.images.iter().map(|i| ((i.episode_id.clone(), i.view_index), i.id)).collect()
    }
}

/// One oriented 3D label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box3DRecord {
    pub episode_id: String,
    pub class_id: u32,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
    #[serde(default = "one")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u32>,
}

pub fn read_boxes(path: &Path) -> Result<Vec<Box3DRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::manifest(path, json_path(&e), e.to_string()))
}

pub fn write_boxes(path: &Path, boxes: &[Box3DRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(boxes).expect("boxes serialize");
    write_atomic(path, text.as_bytes())
}

fn json_path(e: &serde_json::Error) -> String {
    format!("line {} column {}", e.line(), e.column())
}

/// Boundary rings of `mask` in pixel-corner coordinates, flattened as
/// `[x0, y0, x1, y1, …]`. Pixel `(u, v)` covers `[u, u+1] × [v, v+1]`.
pub fn mask_to_polygons(mask: &Mask) -> Vec<Vec<f64>> {
    let (w, h) = mask.dims();
    let at = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && *mask.get(x as u32, y as u32);
    // Directed edges, clockwise around each pixel on screen; shared edges never appear.
    let mut out_edges: BTreeMap<(i64, i64), Vec<(i64, i64)>> = BTreeMap::new();
    let mut add = |a: (i64, i64), b: (i64, i64)| out_edges.entry(a).or_default().push(b);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if !at(x, y) {
                continue;
            }
            if !at(x, y - 1) {
                add((x, y), (x + 1, y));
            }
            if !at(x + 1, y) {
                add((x + 1, y), (x + 1, y + 1));
            }
            if !at(x, y + 1) {
                add((x + 1, y + 1), (x, y + 1));
            }
            if !at(x - 1, y) {
                add((x, y + 1), (x, y));
            }
        }
    }
    let mut rings = Vec::new();
    while let Some((&start, _)) = out_edges.iter().next() {
        let mut ring = vec![start];
        let mut cur = start;
        loop {
            let list = out_edges.get_mut(&cur).expect("boundary is closed");
            let next = list.remove(0);
            if list.is_empty() {
                out_edges.remove(&cur);
            }
            if next == start {
                break;
            }
            ring.push(next);
            cur = next;
        }
        rings.push(simplify(ring));
    }
    rings
        .into_iter()
        .map(|r| r.into_iter().flat_map(|(x, y)| [x as f64, y as f64]).collect())
        .collect()
}

/// Drops vertices in the middle of straight runs.
fn simplify(ring: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    let n = ring.len();
    (0..n)
        .filter(|&i| {
            let p = ring[(i + n - 1) % n];
            let c = ring[i];
            let q = ring[(i + 1) % n];
            (c.0 - p.0) * (q.1 - c.1) - (c.1 - p.1) * (q.0 - c.0) != 0
        })
        .map(|i| ring[i])
        .collect()
}

/// Even-odd fill of pixel centers.
pub fn polygons_to_mask(polygons: &[Vec<f64>], width: u32, height: u32) -> Result<Mask> {
    let mut edges = Vec::new();
    for (k, poly) in polygons.iter().enumerate() {
        if poly.len() % 2 != 0 || poly.len() < 6 {
            return Err(Error::InvalidInput(format!("segmentation[{k}] is not a polygon")));
        }
        if poly.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("segmentation[{k}] has non-finite coordinates")));
        }
        let pts: Vec<(f64, f64)> = poly.chunks(2).map(|c| (c[0], c[1])).collect();
        for i in 0..pts.len() {
            edges.push((pts[i], pts[(i + 1) % pts.len()]));
        }
    }
    let mut mask = Mask::filled(width, height, false);
    let mut xs = Vec::new();
    for v in 0..height {
        let yc = v as f64 + 0.5;
        xs.clear();
        for &((x0, y0), (x1, y1)) in &edges {
            if (y0 <= yc && yc < y1) || (y1 <= yc && yc < y0) {
                xs.push(x0 + (yc - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks(2) {
            if pair.len() < 2 {
                break;
            }
            let lo = (pair[0] - 0.5).ceil().max(0.0);
            let hi = (pair[1] - 0.5).ceil().min(width as f64);
            let mut u = lo;
            while u < hi {
                mask.set(u as u32, v, true);
                u += 1.0;
            }
        }
    }
    Ok(mask)
}

pub fn bbox_to_coco(b: &BBox) -> [f64; 4] {
    [b.x as f64, b.y as f64, b.w as f64, b.h as f64]
}
