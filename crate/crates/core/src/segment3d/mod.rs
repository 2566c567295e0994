//! 3D object segmentation: a linear unary classifier trained on the seed
//! partition, refined by a dense CRF over the cropped, voxelized cloud.

mod crf;
mod unary;
mod votes;

pub use crf::{crf_refine, Clamp, CrfParams, Segmentation3D};
pub use unary::{softplus, train_unary, train_unary_points, unary_log_probs, UnaryModel};
pub use votes::{aggregate_votes, target_component, voxel_components};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CloudPoint;
use crate::ingest::{build_partitioned_cloud, CloudConfig, Detection, DetectionSource, Episode, Label, LabeledCloud};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub cloud: CloudConfig,
    /// L2 weight of the unary classifier.
    pub unary_reg: f64,
    pub crf: CrfParams<f64>,
    /// Detector seeds below this confidence are refused.
    pub min_seed_confidence: f64,
    /// Initialise foreground from the detections of all views.
    pub aggregate_votes: bool,
    /// Confidence floor for detections entering the vote.
    pub vote_confidence: f64,
    /// Drop object voxels not connected to the foreground seed.
    pub seed_component_only: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            cloud: CloudConfig::default(),
            unary_reg: 1e-2,
            crf: CrfParams::default(),
            min_seed_confidence: 0.9,
            aggregate_votes: false,
            vote_confidence: 0.9,
            seed_component_only: true,
        }
    }
}

/// Segmentation of one episode's target object.
#[derive(Clone, Debug)]
pub struct ObjectSegmentation {
    pub cloud: LabeledCloud,
    pub unary: UnaryModel,
    /// Per-voxel result.
    pub result: Segmentation3D<f64>,
    pub class_id: u32,
    pub seed_source: DetectionSource,
}

impl ObjectSegmentation {
    /// Object flag of every full-resolution point, inherited from its voxel.
    pub fn full_labels(&self) -> Vec<bool> {
        self.cloud.full_voxel.iter().map(|&v| self.result.labels[v as usize]).collect()
    }

    /// Foreground marginal of every full-resolution point.
    pub fn full_marginals(&self) -> Vec<f64> {
        self.cloud.full_voxel.iter().map(|&v| self.result.marginals[v as usize]).collect()
    }

    /// Full-resolution object points in the reference frame.
    pub fn object_points(&self) -> Vec<CloudPoint<f64>> {
        self.cloud
            .full_points
            .iter()
            .zip(&self.cloud.full_voxel)
            .filter(|(_, &v)| self.result.labels[v as usize])
            .map(|(p, _)| *p)
            .collect()
    }
}

/// Clamps for the seeded voxels of a cloud.
pub fn clamps(cloud: &LabeledCloud) -> Vec<Clamp> {
    cloud
        .labels
        .iter()
        .map(|l| match l {
            Label::Foreground => Clamp::Foreground,
            Label::Background => Clamp::Background,
            Label::Unknown => Clamp::Free,
        })
        .collect()
}

/// Clears object voxels whose 26-connected component contains no
/// foreground-seed voxel.
pub fn keep_seed_components(cloud: &LabeledCloud, labels: &mut [bool]) {
    let object: BTreeSet<[i64; 3]> = cloud.voxel_keys.iter().zip(labels.iter()).filter(|(_, &l)| l).map(|(k, _)| *k).collect();
    let comp = voxel_components(&object);
    let seeded: BTreeSet<usize> = cloud
        .voxel_keys
        .iter()
        .zip(&cloud.labels)
        .filter(|(_, &l)| l == Label::Foreground)
        .filter_map(|(k, _)| comp.get(k).copied())
        .collect();
    for (l, k) in labels.iter_mut().zip(&cloud.voxel_keys) {
        if *l && !comp.get(k).is_some_and(|c| seeded.contains(c)) {
            *l = false;
        }
    }
}

/// Runs the full segmentation for `seed` over all frames of `episode`.
pub fn segment_object(episode: &Episode, seed: &Detection, config: &SegmentConfig) -> Result<ObjectSegmentation> {
    if seed.source == DetectionSource::Detector && seed.confidence < config.min_seed_confidence {
        return Err(Error::InvalidInput(format!(
            "seed confidence {} below {}",
            seed.confidence, config.min_seed_confidence
        )));
    }
    let cloud = if config.aggregate_votes {
        let voters: Vec<&Detection> = episode
            .detections
            .iter()
            .filter(|d| d.class_id == seed.class_id && d.confidence >= config.vote_confidence)
            .collect();
        aggregate_votes(episode, seed, &voters, &config.cloud)?
    } else {
        build_partitioned_cloud(episode, seed, &config.cloud)?
    };
    let unary = train_unary(&cloud, config.unary_reg)?;
    let logp = unary_log_probs(&unary, &cloud);
    let points: Vec<_> = cloud.points.iter().map(|p| p.point).collect();
    let mut result = crf_refine(&points, &logp, &clamps(&cloud), &config.crf)?;
    if config.seed_component_only {
        keep_seed_components(&cloud, &mut result.labels);
    }
    log::debug!(
        "segmented {} of {} voxels as object ({} mean-field iterations)",
        result.object_count(),
        cloud.len(),
        result.iterations_run
    );
    Ok(ObjectSegmentation { cloud, unary, result, class_id: seed.class_id, seed_source: seed.source })
}
