//! Actuation noise and egomotion cycle-consistency filtering.

mod cycle;
mod flow;
mod noise;

pub use cycle::{cycle_error, filter_views_cycle_consistency, CycleConfig, CycleFilterResult, PairReport};
pub use flow::{flow_from_depth, register_frames, sample_surface, FlowField, IcpParams, MatchParams, Registration};
pub use noise::{sample_actuation_noise, ActionNoiseModel, ActuationNoise, NoiseComponent, MOVE_FORWARD, TURN_LEFT, TURN_RIGHT};

use crate::error::{Error, Result};
use crate::ingest::Episode;
use crate::Pose;

/// Relative motions `G_{t+1}·G_t⁻¹` between consecutive frames.
pub fn relative_motions(episode: &Episode) -> Vec<Pose> {
    episode.frames.windows(2).map(|w| w[1].pose.compose(&w[0].pose.inverse())).collect()
}

/// Frame poses obtained by chaining `motions` outward from the frame at
/// `anchor`, which keeps its pose.
pub fn chain_poses(episode: &Episode, motions: &[Pose], anchor: u32) -> Result<Vec<Pose>> {
    let n = episode.frames.len();
    if motions.len() + 1 != n {
        return Err(Error::Dimension(format!("{n} frames but {} motions", motions.len())));
    }
    let a = episode
        .frames
        .iter()
        .position(|f| f.view_index == anchor)
        .ok_or_else(|| Error::InvalidInput(format!("anchor view {anchor} not in episode")))?;
    let mut poses = vec![Pose::identity(); n];
    poses[a] = episode.frames[a].pose;
    for k in (a + 1)..n {
        poses[k] = motions[k - 1].compose(&poses[k - 1]);
    }
    for k in (0..a).rev() {
        poses[k] = motions[k].inverse().compose(&poses[k + 1]);
    }
    Ok(poses)
}
