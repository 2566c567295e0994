//! Forward/backward egomotion cycle consistency between consecutive views.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flow::{correspondences, source_points, MatchParams};
use crate::error::{Error, Result};
use crate::geometry::estimate_rigid_transform;
use crate::ingest::{Episode, PosedFrame};
use crate::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    /// Mean cycle displacement above which a pair is bad (m).
    pub threshold: f64,
    pub min_views: usize,
    pub max_views: usize,
    /// Correspondences whose depth disagrees by more than this are dropped (m).
    pub depth_jump: f64,
    /// Relative tolerance of the local-plane test used for sub-pixel depth.
    pub planarity_tolerance: f64,
    /// Pixel stride of the source clouds.
    pub stride: u32,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self { threshold: 0.1, min_views: 10, max_views: 25, depth_jump: 0.5, planarity_tolerance: 1e-5, stride: 1 }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidInput("cycle threshold must be positive".into()));
        }
        if self.min_views > self.max_views || self.max_views == 0 {
            return Err(Error::InvalidInput(format!("need 0 < min_views ≤ max_views, got {} and {}", self.min_views, self.max_views)));
        }
        if !(self.depth_jump > 0.0) || !(self.planarity_tolerance > 0.0) {
            return Err(Error::InvalidInput("depth_jump and planarity_tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn match_params(&self) -> MatchParams {
        MatchParams { planarity_tolerance: self.planarity_tolerance, depth_jump: self.depth_jump, stride: self.stride }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairReport {
    pub from: u32,
    pub to: u32,
    /// Mean cycle displacement; `None` when it could not be computed.
    pub error: Option<f64>,
    pub bad: bool,
    pub reason: Option<String>,
    /// Re-estimated forward and backward motions.
    pub fw: Option<Pose>,
    pub bw: Option<Pose>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleFilterResult {
    /// Retained view indices, ascending.
    pub retained: Vec<u32>,
    pub pairs: Vec<PairReport>,
}

impl CycleFilterResult {
    pub fn pair_error(&self, from: u32) -> Option<f64> {
        self.pairs.iter().find(|p| p.from == from).and_then(|p| p.error)
    }
}

/// Residuals above `TRIM_SCALE` times the median (and above `TRIM_FLOOR`
/// metres) are dropped before refitting.
const TRIM_SCALE: f64 = 3.0;
const TRIM_FLOOR: f64 = 1e-6;
const TRIM_ROUNDS: usize = 50;

/// Re-estimates one direction from warped correspondences. Matches that the
/// depth-jump gate lets through at occlusions are trimmed by residual.
fn reestimate(src: &PosedFrame, dst: &PosedFrame, ego: &Pose, params: &MatchParams) -> Result<Pose> {
    let pts = source_points(src, params.stride);
    let corr = correspondences(&pts, dst, ego, params);
    if corr.len() < 3 {
        return Err(Error::Degenerate(format!("{} correspondences", corr.len())));
    }
    let mut a: Vec<_> = corr.iter().map(|c| c.src).collect();
    let mut b: Vec<_> = corr.iter().map(|c| c.dst).collect();
    let mut pose = estimate_rigid_transform(&a, &b)?.pose;
    for _ in 0..TRIM_ROUNDS {
        let residual: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (pose.apply(*x) - *y).norm()).collect();
        let mut sorted = residual.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = (TRIM_SCALE * sorted[sorted.len() / 2]).max(TRIM_FLOOR);
        let keep: Vec<bool> = residual.iter().map(|&r| r <= cut).collect();
        let kept = keep.iter().filter(|&&k| k).count();
        if kept == a.len() || kept < 3 {
            break;
        }
        let mut flags = keep.iter();
        a.retain(|_| *flags.next().unwrap());
        let mut flags = keep.iter();
        b.retain(|_| *flags.next().unwrap());
        pose = estimate_rigid_transform(&a, &b)?.pose;
    }
    Ok(pose)
}

/// Mean `‖bw∘fw(X) − X‖` over the source cloud, with both motions
/// re-estimated from correspondences. Returns the error and the estimates.
pub fn cycle_error(src: &PosedFrame, dst: &PosedFrame, fw: &Pose, bw: &Pose, config: &CycleConfig) -> Result<(f64, Pose, Pose)> {
    let params = config.match_params();
    let fw_hat = reestimate(src, dst, fw, &params)?;
    let bw_hat = reestimate(dst, src, bw, &params)?;
    let cycle = bw_hat.compose(&fw_hat);
    let cloud = source_points(src, params.stride);
    if cloud.is_empty() {
        return Err(Error::Degenerate("source view has no valid depth".into()));
    }
    let err = cloud.iter().map(|x| (cycle.apply(*x) - *x).norm()).sum::<f64>() / cloud.len() as f64;
    Ok((err, fw_hat, bw_hat))
}

/// Scores consecutive pairs `(frames[i], frames[i+1])` with `ego_fw[i]` and
/// `ego_bw[i]`, drops views touching only bad pairs, and clips the
/// retained count to `[min_views, max_views]` by each view's best pair error.
pub fn filter_views_cycle_consistency(
    episode: &Episode,
    ego_fw: &[Pose],
    ego_bw: &[Pose],
    config: &CycleConfig,
) -> Result<CycleFilterResult> {
    config.validate()?;
    let n = episode.frames.len();
    let pairs_needed = n.saturating_sub(1);
    if ego_fw.len() != pairs_needed || ego_bw.len() != pairs_needed {
        return Err(Error::Dimension(format!(
            "{n} views need {pairs_needed} motions, got {} forward and {} backward",
            ego_fw.len(),
            ego_bw.len()
        )));
    }
    let pairs: Vec<PairReport> = (0..pairs_needed)
        .into_par_iter()
        .map(|i| {
            let (a, b) = (&episode.frames[i], &episode.frames[i + 1]);
            let base = PairReport { from: a.view_index, to: b.view_index, error: None, bad: true, reason: None, fw: None, bw: None };
            match cycle_error(a, b, &ego_fw[i], &ego_bw[i], config) {
                Ok((err, fw, bw)) => {
                    let bad = !(err <= config.threshold);
                    PairReport {
                        error: Some(err),
                        bad,
                        reason: bad.then(|| format!("cycle error {err:.4} m above {}", config.threshold)),
                        fw: Some(fw),
                        bw: Some(bw),
                        ..base
                    }
                }
                Err(e) => PairReport { reason: Some(e.to_string()), ..base },
            }
        })
        .collect();

    let mut best = vec![f64::INFINITY; n];
    let mut good = vec![false; n];
    for (i, p) in pairs.iter().enumerate() {
        let e = p.error.unwrap_or(f64::INFINITY);
        for k in [i, i + 1] {
            best[k] = best[k].min(e);
            good[k] |= !p.bad;
        }
    }
    let mut keep: Vec<usize> = if n == 1 { vec![0] } else { (0..n).filter(|&k| good[k]).collect() };
    let lo = config.min_views.min(n);
    if keep.len() < lo || keep.len() > config.max_views {
        let target = keep.len().clamp(lo, config.max_views);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)));
        if keep.len() > config.max_views {
            order.retain(|k| keep.contains(k));
        }
        keep = order.into_iter().take(target).collect();
    }
    keep.sort_unstable();
    let retained = keep.into_iter().map(|k| episode.frames[k].view_index).collect();
    Ok(CycleFilterResult { retained, pairs })
}
