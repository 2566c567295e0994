//! Episode data model, on-disk manifests, mask morphology, and assembly of
//! the partitioned foreground / background / unknown pointcloud.

mod centroid;
pub(crate) mod cloud;
mod manifest;
pub mod morphology;

pub use centroid::estimate_centroid;
pub use cloud::{build_partitioned_cloud, CloudConfig, Label, LabeledCloud, ReferenceFrame};
pub use manifest::{load_episode, write_episode, DepthFormat, FrameFiles, WriteOptions};
pub use morphology::{close, dilate, erode, largest_component, morphology, MorphOp};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BBox, ColorImage, DepthImage, Mask};
use crate::{Intrinsics, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    Detector,
    GroundTruthSeed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub view_index: u32,
    pub class_id: u32,
    pub confidence: f64,
    pub mask: Mask,
    pub bbox: BBox,
    pub source: DetectionSource,
}

impl Detection {
    /// Builds a detection whose box is the tight box of `mask`.
    pub fn from_mask(view_index: u32, class_id: u32, confidence: f64, mask: Mask, source: DetectionSource) -> Result<Self> {
        let bbox = mask
            .bbox()
            .ok_or_else(|| Error::InvalidInput(format!("empty detection mask in view {view_index}")))?;
        let det = Self { view_index, class_id, confidence, mask, bbox, source };
        det.validate()?;
        Ok(det)
    }

    /// A weak-supervision seed: ground-truth mask with confidence one.
    pub fn ground_truth_seed(view_index: u32, class_id: u32, mask: Mask) -> Result<Self> {
        Self::from_mask(view_index, class_id, 1.0, mask, DetectionSource::GroundTruthSeed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidInput(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        if self.source == DetectionSource::GroundTruthSeed && self.confidence != 1.0 {
            return Err(Error::InvalidInput("ground-truth seeds must have confidence 1".into()));
        }
        if self.mask.bbox() != Some(self.bbox) {
            return Err(Error::InvalidInput(format!(
                "bbox {:?} is not the tight box of the mask ({:?})",
                self.bbox,
                self.mask.bbox()
            )));
        }
        Ok(())
    }
}

/// One RGB-D observation with its camera model and reference→camera pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedFrame {
    pub view_index: u32,
    pub timestamp: f64,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub rgb: ColorImage,
    pub depth: DepthImage,
}

impl PosedFrame {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate(1e-9)?;
        let dims = (self.intrinsics.width, self.intrinsics.height);
        if self.rgb.dims() != dims || self.depth.dims() != dims {
            return Err(Error::Dimension(format!(
                "view {}: rgb {:?} / depth {:?} vs intrinsics {dims:?}",
                self.view_index,
                self.rgb.dims(),
                self.depth.dims()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub environment_id: String,
    pub target_class: u32,
    pub reference_view: u32,
    pub frames: Vec<PosedFrame>,
    pub detections: Vec<Detection>,
}

impl Episode {
    /// Assembles an episode; `reference_view` defaults to the view of the
    /// highest-confidence detection of `target_class`.
    pub fn new(
        episode_id: impl Into<String>,
        environment_id: impl Into<String>,
        target_class: u32,
        reference_view: Option<u32>,
        frames: Vec<PosedFrame>,
        detections: Vec<Detection>,
    ) -> Result<Self> {
        let reference_view = match reference_view {
            Some(v) => v,
            None => best_detection(&detections, |d| d.class_id == target_class)
                .or_else(|| best_detection(&detections, |_| true))
                .map(|d| d.view_index)
                .or_else(|| frames.first().map(|f| f.view_index))
                .unwrap_or(0),
        };
        let ep = Self {
            episode_id: episode_id.into(),
            environment_id: environment_id.into(),
            target_class,
            reference_view,
            frames,
            detections,
        };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidInput(format!("episode {} has no frames", self.episode_id)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.frames {
            f.validate()?;
            if !seen.insert(f.view_index) {
                return Err(Error::InvalidInput(format!("duplicate view index {}", f.view_index)));
            }
        }
        for d in &self.detections {
            d.validate()?;
            let frame = self.frame(d.view_index).ok_or_else(|| {
                Error::InvalidInput(format!("detection references missing view {}", d.view_index))
            })?;
            if !d.mask.same_dims(&frame.depth) {
                return Err(Error::Dimension(format!("detection mask in view {} has wrong size", d.view_index)));
            }
        }
        if self.frame(self.reference_view).is_none() {
            return Err(Error::InvalidInput(format!("reference view {} not in episode", self.reference_view)));
        }
        Ok(())
    }

    pub fn frame(&self, view: u32) -> Option<&PosedFrame> {
        self.frames.iter().find(|f| f.view_index == view)
    }

    pub fn detections_in(&self, view: u32) -> impl Iterator<Item = &Detection> {
        self.detections.iter().filter(move |d| d.view_index == view)
    }

    /// Highest-confidence target-class detection in the reference view.
    pub fn seed_detection(&self) -> Option<&Detection> {
        let rv = self.reference_view;
        best_detection(&self.detections, |d| d.view_index == rv && d.class_id == self.target_class)
            .or_else(|| best_detection(&self.detections, |d| d.view_index == rv))
    }

    /// Keeps only the listed views (in their original order).
    pub fn with_views(&self, views: &[u32]) -> Result<Episode> {
        let keep = |v: u32| views.contains(&v);
        let ep = Episode {
            frames: self.frames.iter().filter(|f| keep(f.view_index)).cloned().collect(),
            detections: self.detections.iter().filter(|d| keep(d.view_index)).cloned().collect(),
            ..self.clone()
        };
        ep.validate()?;
        Ok(ep)
    }
}

/// First detection with the highest confidence among those matching `pred`.
fn best_detection<'a>(dets: &'a [Detection], pred: impl Fn(&Detection) -> bool) -> Option<&'a Detection> {
    let mut best: Option<&Detection> = None;
    for d in dets.iter().filter(|d| pred(d)) {
        if best.is_none_or(|b| d.confidence > b.confidence) {
            best = Some(d);
        }
    }
    best
}
