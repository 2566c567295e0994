//! Mock 2D detector driven by ground-truth instance masks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{unoccluded_pixels, Rendered};
use super::world::SynthWorld;
use crate::error::{Error, Result};
use crate::ingest::{erode, Detection, DetectionSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockDetectorConfig {
    pub base_conf: f64,
    pub occlusion_exponent: f64,
    pub misclass_rate: f64,
    /// Detections below this confidence are not reported.
    pub min_confidence: f64,
    /// Masks are eroded by a uniform random radius in `0..=max_erosion`.
    pub max_erosion: u32,
    pub rng_seed: u64,
}

impl Default for MockDetectorConfig {
    fn default() -> Self {
        Self { base_conf: 0.95, occlusion_exponent: 2.0, misclass_rate: 0.05, min_confidence: 0.1, max_erosion: 2, rng_seed: 0 }
    }
}

impl MockDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.base_conf) || !unit(self.misclass_rate) || !unit(self.min_confidence) {
            return Err(Error::InvalidInput("detector rates must lie in [0, 1]".into()));
        }
        if !(self.occlusion_exponent >= 0.0) {
            return Err(Error::InvalidInput("occlusion_exponent must be non-negative".into()));
        }
        Ok(())
    }
}

/// A detection plus the instance it came from (hidden from the pipeline).
#[derive(Clone, Debug, PartialEq)]
pub struct MockDetection {
    pub detection: Detection,
    pub instance_id: u32,
    pub true_class: u32,
    pub visible_fraction: f64,
}

pub fn detection_confidence(config: &MockDetectorConfig, visible_fraction: f64) -> f64 {
    config.base_conf * visible_fraction.clamp(0.0, 1.0).powf(config.occlusion_exponent)
}

/// Detects every visible detectable instance of a rendered frame.
///
/// The visible fraction is the visible pixel count over the pixel count of
/// the instance rendered alone without image borders. Output is ordered by
/// instance id.
pub fn mock_detect(world: &SynthWorld, rendered: &Rendered, config: &MockDetectorConfig, rng: &mut impl Rng) -> Vec<MockDetection> {
    let mut counts = std::collections::BTreeMap::<u32, usize>::new();
    for &i in rendered.instances.pixels() {
        if i > 0 {
            *counts.entry(i).or_default() += 1;
        }
    }
    let classes = world.detectable_classes();
    let intr = &rendered.frame.intrinsics;
    let mut out = Vec::new();
    for (&inst, &visible) in &counts {
        let k = inst as usize - 1;
        if !world.is_detectable(k) {
            continue;
        }
        let alone = unoccluded_pixels(world, k, &rendered.true_pose, intr, 1).max(visible);
        let fraction = visible as f64 / alone as f64;
        let confidence = detection_confidence(config, fraction);
        // Draw every random number up front so the stream does not depend on
        // which detections survive.
        let flip = rng.random::<f64>() < config.misclass_rate;
        let pick = rng.random_range(0..classes.len().max(2) - 1);
        let radius = rng.random_range(0..=config.max_erosion);
        if confidence < config.min_confidence {
            continue;
        }
        let true_class = world.primitives[k].class_id;
        let mut class_id = true_class;
        if flip {
            let others: Vec<u32> = classes.iter().copied().filter(|&c| c != true_class).collect();
            if !others.is_empty() {
                class_id = others[pick % others.len()];
            }
        }
        let mask = erode(&rendered.instance_mask(inst), radius);
        if mask.is_empty_mask() {
            continue;
        }
        let detection = Detection::from_mask(rendered.frame.view_index, class_id, confidence, mask, DetectionSource::Detector)
            .expect("non-empty mask with confidence in range");
        out.push(MockDetection { detection, instance_id: inst, true_class, visible_fraction: fraction });
    }
    out
}
