//! Pseudo-labels from a 3D segmentation: per-view masks and boxes by
//! reprojection, one oriented 3D box, and their on-disk export.

mod box3d;
pub mod coco;
mod reproject;

pub use box3d::{convex_hull, fit_box3d, min_area_rect, wrap_half_pi, Box3D, Rect};
pub use coco::{Box3DRecord, CocoAnnotation, CocoCategory, CocoFile, CocoImage, Provenance};
pub use reproject::{reproject_to_mask, ReprojectConfig, ViewMask};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{BBox, Mask};
use crate::ingest::{DetectionSource, Episode};
use crate::segment3d::ObjectSegmentation;

pub const LABELS_2D: &str = "labels_2d.json";
pub const LABELS_3D: &str = "labels_3d.json";

#[derive(Clone, Debug, PartialEq)]
pub struct ViewLabel {
    pub view_index: u32,
    pub class_id: u32,
    pub mask: Mask,
    /// `None` for views flagged as empty.
    pub bbox: Option<BBox>,
    pub provenance: Provenance,
    /// Mean foreground marginal of the points visible in this view, scaled
    /// by the pose confidence when poses were refined.
    pub score: f64,
}

impl ViewLabel {
    pub fn is_empty(&self) -> bool {
        self.bbox.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub episode_id: String,
    pub views: Vec<ViewLabel>,
    pub box3d: Box3D<f64>,
    pub box_score: f64,
}

impl From<DetectionSource> for Provenance {
    fn from(s: DetectionSource) -> Self {
        match s {
            DetectionSource::Detector => Provenance::DetectorSeed,
            DetectionSource::GroundTruthSeed => Provenance::WeakSeed,
        }
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Reprojects the object into every frame of `episode` and fits its box in
/// the manifest frame.
pub fn generate_pseudolabels(episode: &Episode, seg: &ObjectSegmentation, config: &ReprojectConfig) -> Result<PseudoLabelSet> {
    let labels = seg.full_labels();
    let marg = seg.full_marginals();
    let (points, scores): (Vec<_>, Vec<f64>) = seg
        .cloud
        .full_points
        .iter()
        .zip(&labels)
        .zip(&marg)
        .filter(|((_, &l), _)| l)
        .map(|((p, _), &m)| (p.point.position(), m))
        .unzip();
    let provenance = Provenance::from(seg.seed_source);
    let views = episode
        .frames
        .par_iter()
        .map(|frame| {
            let rel = seg.cloud.reference_to_camera(frame);
            let vm = reproject_to_mask(&points, &rel, frame, config)?;
            let score = if vm.is_empty() { 0.0 } else { mean(vm.visible.iter().map(|&i| scores[i])) };
            if vm.is_empty() {
                log::debug!("episode {}: view {} has no reprojected label", episode.episode_id, frame.view_index);
            }
            Ok(ViewLabel { view_index: frame.view_index, class_id: seg.class_id, bbox: vm.bbox, mask: vm.mask, provenance, score })
        })
        .collect::<Result<Vec<_>>>()?;
    let to_manifest = seg.cloud.reference_to_manifest;
    let world: Vec<_> = points.iter().map(|p| to_manifest.apply(*p)).collect();
    let box3d = fit_box3d(&world, seg.class_id)?;
    Ok(PseudoLabelSet { episode_id: episode.episode_id.clone(), views, box3d, box_score: mean(scores.iter().copied()) })
}

impl PseudoLabelSet {
    /// Assigns `class_id` to every view label and to the 3D box.
    pub fn relabel(&mut self, class_id: u32) {
        for v in &mut self.views {
            v.class_id = class_id;
        }
        self.box3d.class_id = class_id;
    }
}

/// Class with the largest summed confidence among detections of at least
/// `min_confidence` whose mask overlaps the view's label by `min_iou` or
/// more. The current label class wins ties and is kept when nothing votes.
pub fn consensus_class(episode: &Episode, set: &PseudoLabelSet, min_confidence: f64, min_iou: f64) -> Result<u32> {
    let current = set.box3d.class_id;
    let mut votes: BTreeMap<u32, f64> = BTreeMap::new();
    for label in set.views.iter().filter(|v| !v.is_empty()) {
        for det in episode.detections.iter().filter(|d| d.view_index == label.view_index && d.confidence >= min_confidence) {
            if crate::evalkit::mask_iou(&det.mask, &label.mask)? >= min_iou {
                *votes.entry(det.class_id).or_default() += det.confidence;
            }
        }
    }
    let top = votes.get(&current).copied().unwrap_or(0.0);
    Ok(votes.into_iter().filter(|&(_, w)| w > top).max_by(|a, b| a.1.total_cmp(&b.1)).map_or(current, |(c, _)| c))
}

/// Category list for the given class ids; unnamed classes become `class_<id>`.
pub fn categories(ids: impl IntoIterator<Item = u32>, names: &BTreeMap<u32, String>) -> Vec<CocoCategory> {
    let mut ids: Vec<u32> = ids.into_iter().collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| CocoCategory { id, name: names.get(&id).cloned().unwrap_or_else(|| format!("class_{id}")) })
        .collect()
}

/// In-memory 2D/3D export of `sets`.
pub fn to_coco(sets: &[PseudoLabelSet], names: &BTreeMap<u32, String>) -> (CocoFile, Vec<Box3DRecord>) {
    let mut file = CocoFile::default();
    let mut boxes = Vec::new();
    for set in sets {
        for v in &set.views {
            let image_id = file.images.len() as u64 + 1;
            file.images.push(CocoImage {
                id: image_id,
                file_name: format!("{}/rgb_{:03}.png", set.episode_id, v.view_index),
                width: v.mask.width(),
                height: v.mask.height(),
                episode_id: set.episode_id.clone(),
                view_index: v.view_index,
                empty_label: v.is_empty(),
                provenance: Some(v.provenance),
            });
            if let Some(b) = v.bbox {
                file.annotations.push(CocoAnnotation {
                    id: file.annotations.len() as u64 + 1,
                    image_id,
                    category_id: v.class_id,
                    bbox: coco::bbox_to_coco(&b),
                    area: v.mask.count() as f64,
                    segmentation: coco::mask_to_polygons(&v.mask),
                    iscrowd: 0,
                    score: v.score,
                    instance_id: None,
                });
            }
        }
        let b = &set.box3d;
        boxes.push(Box3DRecord {
            episode_id: set.episode_id.clone(),
            class_id: b.class_id,
            center: b.center.to_array(),
            dims: b.dims,
            yaw: b.yaw,
            score: set.box_score,
            instance_id: None,
        });
    }
    let mut ids: Vec<u32> = file.annotations.iter().map(|a| a.category_id).collect();
    ids.extend(boxes.iter().map(|b| b.class_id));
    file.categories = categories(ids, names);
    (file, boxes)
}

/// Writes `labels_2d.json` and `labels_3d.json` into `out_dir`.
pub fn export_labels(sets: &[PseudoLabelSet], out_dir: &Path, names: &BTreeMap<u32, String>) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (file, boxes) = to_coco(sets, names);
    let p2 = out_dir.join(LABELS_2D);
    let p3 = out_dir.join(LABELS_3D);
    file.write(&p2)?;
    coco::write_boxes(&p3, &boxes)?;
    Ok((p2, p3))
}

/// Reads an export back into label sets, one per 3D record.
pub fn import_labels(dir: &Path) -> Result<Vec<PseudoLabelSet>> {
    let p2 = dir.join(LABELS_2D);
    let file = CocoFile::read(&p2)?;
    let boxes = coco::read_boxes(&dir.join(LABELS_3D))?;
    let mut by_image: BTreeMap<u64, &CocoAnnotation> = BTreeMap::new();
    for (k, a) in file.annotations.iter().enumerate() {
        if by_image.insert(a.image_id, a).is_some() {
            return Err(Error::manifest(&p2, format!("annotations[{k}].image_id"), "more than one label for an image"));
        }
    }
    let mut sets = Vec::new();
    for b in &boxes {
        let mut views = Vec::new();
        for (k, img) in file.images.iter().enumerate().filter(|(_, i)| i.episode_id == b.episode_id) {
            let provenance = img.provenance.unwrap_or(Provenance::DetectorSeed);
            let view = match by_image.get(&img.id) {
                Some(a) => {
                    let mask = coco::polygons_to_mask(&a.segmentation, img.width, img.height)
                        .map_err(|e| Error::manifest(&p2, format!("images[{k}] annotation"), e.to_string()))?;
                    ViewLabel { view_index: img.view_index, class_id: a.category_id, bbox: mask.bbox(), mask, provenance, score: a.score }
                }
                None => ViewLabel {
                    view_index: img.view_index,
                    class_id: b.class_id,
                    mask: Mask::filled(img.width, img.height, false),
                    bbox: None,
                    provenance,
                    score: 0.0,
                },
            };
            views.push(view);
        }
        sets.push(PseudoLabelSet {
            episode_id: b.episode_id.clone(),
            views,
            box3d: Box3D { center: crate::Vec3::from_array(b.center), dims: b.dims, yaw: b.yaw, class_id: b.class_id },
            box_score: b.score,
        });
    }
    Ok(sets)
}
