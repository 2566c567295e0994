//! Synthetic embodied environment and the data-collection policy.

mod detector;
mod episode;
mod fmm;
mod grid;
mod render;
mod world;

pub use detector::{detection_confidence, mock_detect, MockDetection, MockDetectorConfig};
pub use episode::{
    read_gt_mask, read_sidecar, respawn, run_episode, AgentState, CameraConfig, EpisodeRecord, GroundTruthSidecar, GtBox, GtView,
    PolicyConfig, GT_SIDECAR,
};
pub use fmm::{fast_marching, plan_path, DistanceField, PlannedPath};
pub use grid::{build_occupancy_grid, sample_goal, sample_goal_where, Cell, CellIndex, GridConfig, OccupancyGrid, GOAL_TRIALS};
pub use render::{render_frame, unoccluded_pixels, InstanceImage, Rendered};
pub use world::{Bounds, Category, Hit, Primitive, Shape, SynthWorld, WorldGenConfig};
