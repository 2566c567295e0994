//! Evaluation of exported labels against ground-truth files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::iou::{box_iou, iou_3d, mask_iou, Iou3dMode};
use super::map::{compute_map, pr_sweep, EvalRecord, GroundTruth, Scored, SweepRow};
use crate::error::Result;
use crate::image::Mask;
use crate::labelgen::coco::{polygons_to_mask, Box3DRecord, CocoFile};
use crate::labelgen::Box3D;
use crate::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub iou_3d: f64,
    pub mode_3d: Iou3dMode,
    /// Compare masks instead of boxes.
    pub mask_iou: bool,
    /// Confidence thresholds of the sweep, if any.
    pub sweep: Option<Vec<f64>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_thresholds: vec![0.5, 0.3], iou_3d: 0.25, mode_3d: Iou3dMode::Volumetric, mask_iou: false, sweep: None }
    }
}

/// Standard sweep thresholds `0.0, 0.1, …, 1.0`.
pub fn default_sweep() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub n_ground_truth: usize,
    pub n_predictions: usize,
    /// Predictions on images absent from the ground truth.
    pub ignored_predictions: usize,
    pub two_d: Vec<EvalRecord>,
    pub three_d: Option<EvalRecord>,
    pub sweep: Option<Vec<SweepRow>>,
}

impl EvalReport {
    /// mAP at a 2D IoU threshold, if evaluated and defined.
    pub fn map_at(&self, iou: f64) -> Option<f64> {
        self.two_d.iter().find(|r| r.iou_threshold == iou).and_then(|r| r.map)
    }
}

#[derive(Clone, Debug)]
struct Item {
    bbox: [f64; 4],
    mask: Option<Mask>,
}

fn items(file: &CocoFile, index: &BTreeMap<(String, u32), u64>, with_masks: bool) -> Result<(Vec<(u64, u32, f64, Item)>, usize)> {
    let images: BTreeMap<u64, _> = file.images.iter().map(|i| (i.id, i)).collect();
    let mut out = Vec::new();
    let mut ignored = 0;
    for (k, a) in file.annotations.iter().enumerate() {
        let Some(img) = images.get(&a.image_id) else {
            return Err(crate::Error::InvalidInput(format!("annotations[{k}].image_id {} has no image", a.image_id)));
        };
        let Some(&key) = index.get(&(img.episode_id.clone(), img.view_index)) else {
            ignored += 1;
            continue;
        };
        let mask = if with_masks { Some(polygons_to_mask(&a.segmentation, img.width, img.height)?) } else { None };
        out.push((key, a.category_id, a.score, Item { bbox: a.bbox, mask }));
    }
    Ok((out, ignored))
}

fn item_iou(a: &Item, b: &Item) -> f64 {
    match (&a.mask, &b.mask) {
        (Some(x), Some(y)) => mask_iou(x, y).unwrap_or(0.0),
        _ => box_iou(a.bbox, b.bbox),
    }
}

/// 2D evaluation; images are matched by `(episode_id, view_index)` and the
/// ground truth defines the evaluated image set.
pub fn evaluate_2d(pred: &CocoFile, gt: &CocoFile, config: &EvalConfig) -> Result<EvalReport> {
    let index = gt.image_index();
    let (gts, _) = items(gt, &index, config.mask_iou)?;
    let (preds, ignored) = items(pred, &index, config.mask_iou)?;
    if ignored > 0 {
        log::warn!("{ignored} predictions refer to images without ground truth and were ignored");
    }
    let gts: Vec<GroundTruth<Item>> = gts.into_iter().map(|(image, class_id, _, item)| GroundTruth { image, class_id, item }).collect();
    let preds: Vec<Scored<Item>> = preds.into_iter().map(|(image, class_id, score, item)| Scored { image, class_id, score, item }).collect();
    let two_d = config.iou_thresholds.iter().map(|&t| compute_map(&preds, &gts, item_iou, t)).collect();
    let sweep = config.sweep.as_ref().map(|th| {
        let t = config.iou_thresholds.first().copied().unwrap_or(0.5);
        pr_sweep(&preds, &gts, th, item_iou, t)
    });
    Ok(EvalReport {
        n_images: gt.images.len(),
        n_ground_truth: gts.len(),
        n_predictions: preds.len(),
        ignored_predictions: ignored,
        two_d,
        three_d: None,
        sweep,
    })
}

fn to_box(r: &Box3DRecord) -> Box3D<f64> {
    Box3D { center: Vec3::from_array(r.center), dims: r.dims, yaw: r.yaw, class_id: r.class_id }
}

/// 3D evaluation with one image per episode.
pub fn evaluate_3d(pred: &[Box3DRecord], gt: &[Box3DRecord], threshold: f64, mode: Iou3dMode) -> EvalRecord {
    let mut episodes: BTreeMap<&str, u64> = BTreeMap::new();
    for g in gt {
        let n = episodes.len() as u64;
        episodes.entry(g.episode_id.as_str()).or_insert(n);
    }
    let gts: Vec<_> = gt
        .iter()
        .map(|g| GroundTruth { image: episodes[g.episode_id.as_str()], class_id: g.class_id, item: to_box(g) })
        .collect();
    let preds: Vec<_> = pred
        .iter()
        .filter_map(|p| {
            let image = *episodes.get(p.episode_id.as_str())?;
            Some(Scored { image, class_id: p.class_id, score: p.score, item: to_box(p) })
        })
        .collect();
    compute_map(&preds, &gts, |a, b| iou_3d(a, b, mode), threshold)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// Human-readable summary.
pub fn render_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "images {}  ground truth {}  predictions {}", report.n_images, report.n_ground_truth, report.n_predictions);
    let mut rows: Vec<(String, &EvalRecord)> = report.two_d.iter().map(|r| (format!("2D@{}", r.iou_threshold), r)).collect();
    if let Some(r) = &report.three_d {
        rows.push((format!("3D@{}", r.iou_threshold), r));
    }
    for (name, r) in rows {
        let _ = writeln!(s, "{name:<8} mAP {:>6}  P {:>6}  R {:>6}", pct(r.map), pct(r.precision), pct(r.recall));
        for c in &r.classes {
            let _ = writeln!(s, "  class {:<4} AP {:>6}  gt {:<4} tp {:<4} fp {:<4}", c.class_id, pct(c.ap), c.n_gt, c.tp, c.fp);
        }
    }
    if let Some(rows) = &report.sweep {
        let _ = writeln!(s, "threshold  precision  recall  mAP     tp    fp");
        for r in rows {
            let _ = writeln!(
                s,
                "{:<9.2}  {:>9}  {:>6}  {:>6}  {:<5} {}",
                r.threshold,
                pct(r.precision),
                pct(r.recall),
                pct(r.map),
                r.tp,
                r.fp
            );
        }
    }
    s
}
