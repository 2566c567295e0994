//! Corpus simulation: episodes plus evaluation-only ground truth and the
//! detector baseline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explore::{respawn, run_episode, EpisodeRecord, PolicyConfig, SynthWorld};
use crate::imageio::write_atomic;
use crate::ingest::WriteOptions;
use crate::labelgen::coco::{bbox_to_coco, mask_to_polygons, write_boxes};
use crate::labelgen::{categories, Box3DRecord, CocoAnnotation, CocoFile, CocoImage, Provenance, LABELS_2D};

pub const WORLD_FILE: &str = "world.json";
pub const GT_2D: &str = "gt_2d.json";
pub const GT_3D: &str = "gt_3d.json";
pub const DETECTOR_DIR: &str = "detector";
pub const SIMULATION_SUMMARY: &str = "simulation.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub episodes: usize,
    /// Respawn attempts per episode before it is recorded as abandoned.
    pub attempts: usize,
    pub policy: PolicyConfig,
    /// Smallest visible target area (pixels) that receives a ground-truth box.
    pub min_gt_pixels: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { episodes: 30, attempts: 5, policy: PolicyConfig::default(), min_gt_pixels: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStatus {
    pub episode_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub world_id: String,
    pub episodes: Vec<EpisodeStatus>,
}

/// Seed of stream `k` derived from `seed` (splitmix64 finaliser).
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn episode_name(k: usize) -> String {
    format!("ep_{k:03}")
}

/// Runs episode `k`, respawning on abandonment.
pub fn simulate_episode(world: &SynthWorld, config: &SimulateConfig, seed: u64, k: usize) -> (EpisodeStatus, Option<EpisodeRecord>) {
    let id = episode_name(k);
    let mut reason = None;
    for a in 0..config.attempts.max(1) {
        let s = derive_seed(derive_seed(seed, k as u64), a as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut policy = config.policy.clone();
        policy.rng_seed = derive_seed(s, 1);
        policy.detector.rng_seed = derive_seed(s, 2);
        let run = respawn(world, &policy, &mut rng).and_then(|agent| run_episode(world, agent, &policy, &id));
        match run {
            Ok(rec) => return (EpisodeStatus { episode_id: id, ok: true, reason: None, attempts: a + 1 }, Some(rec)),
            Err(e) => {
                log::info!("{id}: attempt {} abandoned: {e}", a + 1);
                reason = Some(e.to_string());
            }
        }
    }
    (EpisodeStatus { episode_id: id, ok: false, reason, attempts: config.attempts.max(1) }, None)
}

/// Simulates a corpus in memory.
pub fn simulate_records(world: &SynthWorld, config: &SimulateConfig, seed: u64) -> Result<(Vec<EpisodeStatus>, Vec<EpisodeRecord>)> {
    world.validate()?;
    config.policy.validate()?;
    let runs: Vec<_> = (0..config.episodes).into_par_iter().map(|k| simulate_episode(world, config, seed, k)).collect();
    let mut status = Vec::new();
    let mut records = Vec::new();
    for (s, r) in runs {
        status.push(s);
        records.extend(r);
    }
    Ok((status, records))
}

fn image_entry(id: u64, episode_id: &str, view: u32, w: u32, h: u32) -> CocoImage {
    CocoImage {
        id,
        file_name: format!("{episode_id}/rgb_{view:03}.png"),
        width: w,
        height: h,
        episode_id: episode_id.to_string(),
        view_index: view,
        empty_label: false,
        provenance: None,
    }
}

fn annotation(id: u64, image_id: u64, class: u32, mask: &crate::image::Mask, score: f64, instance: u32) -> Option<CocoAnnotation> {
    let b = mask.bbox()?;
    Some(CocoAnnotation {
        id,
        image_id,
        category_id: class,
        bbox: bbox_to_coco(&b),
        area: mask.count() as f64,
        segmentation: mask_to_polygons(mask),
        iscrowd: 0,
        score,
        instance_id: Some(instance),
    })
}

/// Ground-truth 2D/3D files and the detector baseline for `records`.
pub fn corpus_ground_truth(world: &SynthWorld, records: &[EpisodeRecord], min_gt_pixels: usize) -> (CocoFile, Vec<Box3DRecord>, CocoFile) {
    let mut gt = CocoFile::default();
    let mut det = CocoFile::default();
    let mut boxes = Vec::new();
    for rec in records {
        let ep = &rec.episode;
        for (frame, (view, mask)) in ep.frames.iter().zip(rec.gt.views.iter().zip(&rec.target_masks)) {
            let image_id = gt.images.len() as u64 + 1;
            let (w, h) = frame.depth.dims();
            gt.images.push(image_entry(image_id, &ep.episode_id, view.view_index, w, h));
            det.images.push(image_entry(image_id, &ep.episode_id, view.view_index, w, h));
            if view.target_pixels >= min_gt_pixels.max(1) {
                let id = gt.annotations.len() as u64 + 1;
                gt.annotations.extend(annotation(id, image_id, rec.gt.target_class, mask, 1.0, rec.gt.target_instance));
            }
            for (d, &inst) in ep.detections.iter().zip(&rec.gt.detection_instances) {
                if d.view_index == view.view_index && inst == rec.gt.target_instance {
                    let id = det.annotations.len() as u64 + 1;
                    det.annotations.extend(annotation(id, image_id, d.class_id, &d.mask, d.confidence, inst));
                }
            }
        }
        for img in det.images.iter_mut().filter(|i| i.episode_id == ep.episode_id) {
            img.provenance = Some(Provenance::DetectorSeed);
        }
        let b = &rec.gt.target_box;
        boxes.push(Box3DRecord {
            episode_id: ep.episode_id.clone(),
            class_id: rec.gt.target_class,
            center: b.center,
            dims: b.dims,
            yaw: b.yaw,
            score: 1.0,
            instance_id: Some(rec.gt.target_instance),
        });
    }
    for img in &mut det.images {
        img.empty_label = !det.annotations.iter().any(|a| a.image_id == img.id);
    }
    for img in &mut gt.images {
        img.empty_label = !gt.annotations.iter().any(|a| a.image_id == img.id);
    }
    let names = category_names(world);
    gt.categories = categories(world.detectable_classes(), &names);
    det.categories = gt.categories.clone();
    (gt, boxes, det)
}

pub fn category_names(world: &SynthWorld) -> BTreeMap<u32, String> {
    world.categories.iter().map(|c| (c.id, c.name.clone())).collect()
}

/// Simulates and writes a corpus: one directory per episode plus
/// `world.json`, `gt_2d.json`, `gt_3d.json` and `detector/labels_2d.json`.
pub fn simulate_corpus(world: &SynthWorld, config: &SimulateConfig, seed: u64, out_dir: &Path, opts: &WriteOptions) -> Result<SimulationSummary> {
    let (status, records) = simulate_records(world, config, seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    world.save(&out_dir.join(WORLD_FILE))?;
    records
        .par_iter()
        .map(|r| r.write(&out_dir.join(&r.episode.episode_id), opts).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    let (gt, boxes, det) = corpus_ground_truth(world, &records, config.min_gt_pixels);
    gt.write(&out_dir.join(GT_2D))?;
    write_boxes(&out_dir.join(GT_3D), &boxes)?;
    let det_dir = out_dir.join(DETECTOR_DIR);
    std::fs::create_dir_all(&det_dir).map_err(|e| Error::io(&det_dir, e))?;
    det.write(&det_dir.join(LABELS_2D))?;
    let summary = SimulationSummary { seed, world_id: world.world_id.clone(), episodes: status };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&out_dir.join(SIMULATION_SUMMARY), text.as_bytes())?;
    Ok(summary)
}

/// Episode directories (those holding a `manifest.json`) under `dir`, sorted.
pub fn discover_episodes(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("manifest.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.join("manifest.json").is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
