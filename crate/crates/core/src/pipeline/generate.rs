//! Pseudo-label generation over episodes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simulate::{derive_seed, discover_episodes, WORLD_FILE};
use crate::egomotion::{filter_views_cycle_consistency, register_frames, relative_motions, CycleConfig, CycleFilterResult, IcpParams, Registration};
use crate::error::{Error, Result};
use crate::explore::{read_gt_mask, read_sidecar, EpisodeRecord, SynthWorld};
use crate::imageio::write_atomic;
use crate::ingest::{load_episode, Detection, Episode};
use crate::labelgen::{consensus_class, export_labels, generate_pseudolabels, PseudoLabelSet, ReprojectConfig};
use crate::segment3d::{segment_object, SegmentConfig};
use crate::geometry::{Mat3, Vec3};
use crate::Pose;

pub const GENERATE_SUMMARY: &str = "summary.json";

/// Conditioning at which a registration is worth no more than odometry.
const ODOMETRY_CONDITIONING: f64 = 1e-6;
/// Mask overlap for a detection to vote on the label class.
const CONSENSUS_IOU: f64 = 0.5;
/// Chaining cost at which a pose is half trusted.
const POSE_COST_SCALE: f64 = 1e4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Highest-confidence target detection in the reference view.
    #[default]
    Detector,
    /// Ground-truth mask of the reference view (weak supervision).
    Weak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseRefineConfig {
    pub cycle: CycleConfig,
    pub icp_iterations: usize,
    /// Associations farther apart than this are ignored (m).
    pub icp_max_distance: f64,
    /// Pull of the registration towards odometry; keeps directions the
    /// geometry leaves unconstrained at the odometry estimate.
    pub icp_prior_weight: f64,
    /// A registration is trusted when its point-to-plane RMS is below this (m).
    pub icp_max_rms: f64,
    pub icp_min_correspondences: usize,
    /// Rejects registrations along an unconstrained direction.
    pub icp_min_conditioning: f64,
    /// Largest accepted disagreement with odometry (m, rad).
    pub icp_max_deviation: [f64; 2],
    /// Frames are also registered onto this many predecessors back.
    pub icp_max_gap: usize,
    /// Yaw offsets (degrees) of the extra starts tried when the odometry
    /// start gives no trusted registration.
    pub icp_yaw_starts_deg: Vec<f64>,
}

impl PoseRefineConfig {
    /// Whether `reg` (frame t+1 → t) can replace the odometry motion `odometry` (t → t+1).
    pub fn trusts(&self, reg: &Registration, odometry: &Pose) -> bool {
        let delta = reg.pose.compose(odometry);
        reg.rms <= self.icp_max_rms
            && reg.correspondences >= self.icp_min_correspondences
            && reg.conditioning >= self.icp_min_conditioning
            && delta.translation.norm() <= self.icp_max_deviation[0]
            && delta.rotation.rotation_angle() <= self.icp_max_deviation[1]
    }
}

impl Default for PoseRefineConfig {
    fn default() -> Self {
        Self {
            cycle: CycleConfig::default(),
            icp_iterations: 30,
            icp_max_distance: 0.25,
            icp_prior_weight: 1e-5,
            icp_max_rms: 0.003,
            icp_min_correspondences: 300,
            icp_min_conditioning: 0.0,
            icp_max_deviation: [0.5, 0.35],
            icp_max_gap: 2,
            icp_yaw_starts_deg: vec![-5.0, 5.0, -10.0, 10.0, -15.0, 15.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub segment: SegmentConfig,
    pub reproject: ReprojectConfig,
    pub seed_mode: SeedMode,
    /// Segment from the reference view plus `views - 1` random others.
    pub views: Option<usize>,
    /// Register consecutive views, filter them by cycle consistency and
    /// re-chain the poses before segmenting.
    pub filter_poses: bool,
    pub refine: PoseRefineConfig,
    /// When set, the label class is the confidence-weighted vote of the
    /// detections at or above this confidence that overlap the labels.
    pub class_consensus: Option<f64>,
    pub rng_seed: u64,
}

impl Default for GenerateConfig {
    /// Segmentation defaults sized for the 160×120 simulator renders.
    fn default() -> Self {
        let mut segment = SegmentConfig::default();
        segment.cloud.erode_radius = 2;
        segment.cloud.dilate_radius = 3;
        segment.cloud.voxel_size = 0.03;
        segment.cloud.crop_radius = Some(1.2);
        Self {
            segment,
            reproject: ReprojectConfig { splat_radius: 0, ..ReprojectConfig::default() },
            seed_mode: SeedMode::Detector,
            views: None,
            filter_poses: false,
            refine: PoseRefineConfig::default(),
            class_consensus: Some(0.9),
            rng_seed: 0,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        self.segment.cloud.validate()?;
        self.segment.crf.validate()?;
        self.refine.cycle.validate()?;
        if self.views == Some(0) {
            return Err(Error::InvalidInput("views must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RefinedEpisode {
    /// The input episode with re-chained poses.
    pub episode: Episode,
    pub filter: CycleFilterResult,
    /// Whether each consecutive pair has a trusted registration.
    pub registered: Vec<bool>,
    /// Per frame, `1 / (1 + c / POSE_COST_SCALE)` for the chaining cost `c`
    /// of its pose; 1 at the reference view.
    pub pose_confidence: Vec<f64>,
}

/// Registers frame `j` onto frame `i`, starting from the odometry and, when
/// that is not trusted, from odometry rotated about the vertical axis.
fn register_pair(episode: &Episode, i: usize, j: usize, config: &PoseRefineConfig) -> Option<Registration> {
    let (a, b) = (&episode.frames[i], &episode.frames[j]);
    let odometry = b.pose.compose(&a.pose.inverse());
    let params = config.cycle.match_params();
    let up = a.pose.rotation.mul_vec(Vec3::new(0.0, 0.0, 1.0));
    let icp = IcpParams { max_distance: config.icp_max_distance, iterations: config.icp_iterations, prior_weight: config.icp_prior_weight };
    let mut best: Option<Registration> = None;
    for offset in std::iter::once(0.0).chain(config.icp_yaw_starts_deg.iter().copied()) {
        let turn = Pose::new(Mat3::from_axis_angle(up, offset.to_radians()), Vec3::zero());
        let init = turn.compose(&odometry.inverse());
        match register_frames(b, a, &init, Some(&odometry.inverse()), &params, &icp) {
            Ok(r) if config.trusts(&r, &odometry) => {
                if best.as_ref().is_none_or(|x| r.rms < x.rms) {
                    best = Some(r);
                }
                if offset == 0.0 {
                    break;
                }
            }
            Ok(r) => log::debug!("{}: registration {}→{} untrusted from {offset}° (rms {:.4}, {} matches, conditioning {:.1e})", episode.episode_id, b.view_index, a.view_index, r.rms, r.correspondences, r.conditioning),
            Err(e) => log::debug!("{}: registration {}→{} failed from {offset}°: {e}", episode.episode_id, b.view_index, a.view_index),
        }
    }
    best
}

/// A motion `from → to` between frame positions with its chaining cost.
struct Edge {
    from: usize,
    to: usize,
    motion: Pose,
    cost: f64,
}

/// Poses from the cheapest edge path out of `anchor` (Dijkstra over at most a
/// few dozen frames).
fn chain_cheapest(episode: &Episode, edges: &[Edge], anchor: usize) -> (Vec<Pose>, Vec<f64>) {
    let n = episode.frames.len();
    let mut cost = vec![f64::INFINITY; n];
    let mut poses = vec![Pose::identity(); n];
    let mut done = vec![false; n];
    cost[anchor] = 0.0;
    poses[anchor] = episode.frames[anchor].pose;
    while let Some(k) = (0..n).filter(|&k| !done[k] && cost[k].is_finite()).min_by(|&a, &b| cost[a].total_cmp(&cost[b])) {
        done[k] = true;
        for e in edges {
            let (next, motion) = if e.from == k {
                (e.to, e.motion)
            } else if e.to == k {
                (e.from, e.motion.inverse())
            } else {
                continue;
            };
            if !done[next] && cost[k] + e.cost < cost[next] {
                cost[next] = cost[k] + e.cost;
                poses[next] = motion.compose(&poses[k]);
            }
        }
    }
    (poses, cost)
}

/// Registers each frame onto the frames up to `icp_max_gap` before it,
/// scores consecutive pairs against the reported motion, and re-chains poses
/// outward from the reference view along the best-conditioned registrations.
/// Odometry bridges pairs without a trusted registration; the reference view
/// is always retained.
pub fn refine_poses(episode: &Episode, config: &PoseRefineConfig) -> Result<RefinedEpisode> {
    let fw = relative_motions(episode);
    let n = episode.frames.len();
    let pairs: Vec<(usize, usize)> = (1..=config.icp_max_gap.max(1)).flat_map(|g| (0..n.saturating_sub(g)).map(move |i| (i, i + g))).collect();
    let regs: Vec<Option<Registration>> = pairs.par_iter().map(|&(i, j)| register_pair(episode, i, j, config)).collect();
    let consecutive = &regs[..fw.len()];
    let bw: Vec<Pose> = consecutive.iter().zip(&fw).map(|(r, m)| r.map_or_else(|| m.inverse(), |r| r.pose)).collect();
    let mut filter = filter_views_cycle_consistency(episode, &fw, &bw, &config.cycle)?;
    if !filter.retained.contains(&episode.reference_view) {
        filter.retained.push(episode.reference_view);
        filter.retained.sort_unstable();
    }
    let odometry_cost = 1.0 / ODOMETRY_CONDITIONING;
    let mut edges: Vec<Edge> = fw.iter().enumerate().map(|(i, m)| Edge { from: i, to: i + 1, motion: *m, cost: odometry_cost }).collect();
    edges.extend(pairs.iter().zip(&regs).filter_map(|(&(from, to), r)| {
        r.map(|r| Edge { from, to, motion: r.pose.inverse(), cost: 1.0 / r.conditioning.max(ODOMETRY_CONDITIONING) })
    }));
    let anchor = episode
        .frames
        .iter()
        .position(|f| f.view_index == episode.reference_view)
        .ok_or_else(|| Error::InvalidInput(format!("reference view {} not in episode", episode.reference_view)))?;
    let (poses, cost) = chain_cheapest(episode, &edges, anchor);
    let mut refined = episode.clone();
    for (f, p) in refined.frames.iter_mut().zip(poses) {
        f.pose = p;
    }
    Ok(RefinedEpisode { episode: refined, filter, registered: consecutive.iter().map(Option::is_some).collect(),
        pose_confidence: cost.iter().map(|c| 1.0 / (1.0 + c / POSE_COST_SCALE)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub seed_class: Option<u32>,
    pub label_class: Option<u32>,
    pub views_used: Vec<u32>,
    pub bad_pairs: usize,
    pub labeled_views: usize,
}

impl EpisodeReport {
    fn failed(episode_id: &str, reason: String) -> Self {
        Self { episode_id: episode_id.into(), ok: false, reason: Some(reason), seed_class: None, label_class: None, views_used: vec![], bad_pairs: 0, labeled_views: 0 }
    }
}

fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Segments the object seeded by `seed` and labels every frame of `episode`.
pub fn label_episode(episode: &Episode, seed: &Detection, config: &GenerateConfig) -> Result<(PseudoLabelSet, EpisodeReport)> {
    let (all, mut views, bad_pairs, pose_confidence) = if config.filter_poses {
        let r = refine_poses(episode, &config.refine)?;
        let bad = r.filter.pairs.iter().filter(|p| p.bad).count();
        (r.episode, r.filter.retained, bad, Some(r.pose_confidence))
    } else {
        (episode.clone(), episode.frames.iter().map(|f| f.view_index).collect(), 0, None)
    };
    if let Some(k) = config.views {
        let others: Vec<u32> = views.iter().copied().filter(|&v| v != seed.view_index).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, id_hash(&episode.episode_id)));
        let take = k.saturating_sub(1).min(others.len());
        let mut pick: Vec<u32> = rand::seq::index::sample(&mut rng, others.len(), take).into_iter().map(|i| others[i]).collect();
        pick.push(seed.view_index);
        pick.sort_unstable();
        views = pick;
    }
    let subset = all.with_views(&views)?;
    let seg = segment_object(&subset, seed, &config.segment)?;
    let mut set = generate_pseudolabels(&all, &seg, &config.reproject)?;
    if let Some(floor) = config.class_consensus {
        let class = consensus_class(episode, &set, floor, CONSENSUS_IOU)?;
        if class != seed.class_id {
            log::info!("{}: multi-view consensus relabels class {} as {class}", episode.episode_id, seed.class_id);
            set.relabel(class);
        }
    }
    if let Some(conf) = pose_confidence {
        for (label, c) in set.views.iter_mut().zip(conf) {
            label.score *= c;
        }
    }
    let report = EpisodeReport {
        episode_id: episode.episode_id.clone(),
        ok: true,
        reason: None,
        seed_class: Some(seed.class_id),
        label_class: Some(set.box3d.class_id),
        views_used: views,
        bad_pairs,
        labeled_views: set.views.iter().filter(|v| !v.is_empty()).count(),
    };
    Ok((set, report))
}

/// Detector seed of an episode.
pub fn detector_seed(episode: &Episode) -> Result<Detection> {
    episode
        .seed_detection()
        .cloned()
        .ok_or_else(|| Error::InvalidInput(format!("episode {} has no detection in its reference view", episode.episode_id)))
}

/// Seed of a simulated episode held in memory.
pub fn record_seed(record: &EpisodeRecord, mode: SeedMode) -> Result<Detection> {
    match mode {
        SeedMode::Detector => detector_seed(&record.episode),
        SeedMode::Weak => {
            let rv = record.episode.reference_view;
            let k = record.gt.views.iter().position(|v| v.view_index == rv).ok_or_else(|| Error::NoGroundTruth(format!("view {rv}")))?;
            Detection::ground_truth_seed(rv, record.gt.target_class, record.target_masks[k].clone())
        }
    }
}

fn run_one(episode: &Episode, seed: Result<Detection>, config: &GenerateConfig) -> (Option<PseudoLabelSet>, EpisodeReport) {
    match seed.and_then(|s| label_episode(episode, &s, config)) {
        Ok((set, report)) => (Some(set), report),
        Err(e) => {
            log::warn!("{}: no labels: {e}", episode.episode_id);
            (None, EpisodeReport::failed(&episode.episode_id, e.to_string()))
        }
    }
}

/// Labels simulated episodes held in memory.
pub fn generate_from_records(records: &[EpisodeRecord], config: &GenerateConfig) -> Result<(Vec<PseudoLabelSet>, Vec<EpisodeReport>)> {
    config.validate()?;
    let out: Vec<_> = records.par_iter().map(|r| run_one(&r.episode, record_seed(r, config.seed_mode), config)).collect();
    Ok(split(out))
}

fn split(out: Vec<(Option<PseudoLabelSet>, EpisodeReport)>) -> (Vec<PseudoLabelSet>, Vec<EpisodeReport>) {
    let mut sets = Vec::new();
    let mut reports = Vec::new();
    for (s, r) in out {
        sets.extend(s);
        reports.push(r);
    }
    (sets, reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub episodes: Vec<EpisodeReport>,
    pub labeled_episodes: usize,
    pub failed_episodes: usize,
}

/// Labels every episode under `input` and writes `labels_2d.json`,
/// `labels_3d.json` and `summary.json` into `out_dir`. Category names come
/// from a `world.json` next to the episodes when present.
pub fn generate_corpus(input: &Path, out_dir: &Path, config: &GenerateConfig) -> Result<GenerateSummary> {
    config.validate()?;
    let dirs = discover_episodes(input)?;
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!("no episode manifests under {}", input.display())));
    }
    let out: Vec<_> = dirs
        .par_iter()
        .map(|dir| -> Result<_> {
            let episode = load_episode(&dir.join("manifest.json"))?;
            let seed = match config.seed_mode {
                SeedMode::Detector => detector_seed(&episode),
                SeedMode::Weak => read_sidecar(dir).and_then(|gt| {
                    let rv = episode.reference_view;
                    let mask = read_gt_mask(dir, &gt, rv)?.ok_or_else(|| Error::NoGroundTruth(format!("target not visible in view {rv}")))?;
                    Detection::ground_truth_seed(rv, gt.target_class, mask)
                }),
            };
            Ok(run_one(&episode, seed, config))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sets, episodes) = split(out);
    let names: BTreeMap<u32, String> = match SynthWorld::load(&input.join(WORLD_FILE)) {
        Ok(w) => super::simulate::category_names(&w),
        Err(_) => BTreeMap::new(),
    };
    export_labels(&sets, out_dir, &names)?;
    let failed = episodes.iter().filter(|e| !e.ok).count();
    let summary = GenerateSummary { labeled_episodes: episodes.len() - failed, failed_episodes: failed, episodes };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&out_dir.join(GENERATE_SUMMARY), text.as_bytes())?;
    Ok(summary)
}
