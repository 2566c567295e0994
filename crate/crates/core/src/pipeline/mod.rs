//! End-to-end drivers: corpus simulation, label generation and evaluation.

mod generate;
mod simulate;

pub use generate::{
    detector_seed, generate_corpus, generate_from_records, label_episode, record_seed, refine_poses, EpisodeReport, GenerateConfig,
    GenerateSummary, PoseRefineConfig, RefinedEpisode, SeedMode, GENERATE_SUMMARY,
};
pub use simulate::{
    category_names, corpus_ground_truth, derive_seed, discover_episodes, episode_name, simulate_corpus, simulate_episode, simulate_records,
    EpisodeStatus, SimulateConfig, SimulationSummary, DETECTOR_DIR, GT_2D, GT_3D, SIMULATION_SUMMARY, WORLD_FILE,
};
