//! The data-collection loop: explore, trigger on a confident detection,
//! then capture views around the detected object.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::detector::{mock_detect, MockDetection, MockDetectorConfig};
use super::fmm::plan_path;
use super::grid::{sample_goal_where, Cell, GridConfig, OccupancyGrid};
use super::render::{render_with_pose, Rendered};
use super::world::SynthWorld;
use crate::egomotion::{sample_actuation_noise, ActionNoiseModel, MOVE_FORWARD, TURN_LEFT, TURN_RIGHT};
use crate::error::{Error, Result};
use crate::geometry::look_at;
use crate::image::Mask;
use crate::imageio::{read_mask_png, write_atomic, write_mask_png};
use crate::ingest::{estimate_centroid, write_episode, Episode, PosedFrame, WriteOptions};
use crate::{Intrinsics, Pose, Vec3};

pub const GT_SIDECAR: &str = "gt.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: [f64; 2],
    pub heading: f64,
    pub camera_height: f64,
}

impl AgentState {
    /// World → camera pose for a camera panned by `pan` from the heading and
    /// pitched by `tilt` (negative looks down).
    pub fn camera_pose(&self, pan: f64, tilt: f64) -> Pose {
        let eye = Vec3::new(self.position[0], self.position[1], self.camera_height);
        let yaw = self.heading + pan;
        let dir = Vec3::new(yaw.cos() * tilt.cos(), yaw.sin() * tilt.cos(), tilt.sin());
        look_at(eye, eye + dir)
    }

    fn advance(&self, dx: f64, dy: f64, dtheta: f64) -> Self {
        let (s, c) = self.heading.sin_cos();
        Self {
            position: [self.position[0] + c * dx - s * dy, self.position[1] + s * dx + c * dy],
            heading: wrap_pi(self.heading + dtheta),
            camera_height: self.camera_height,
        }
    }
}

fn wrap_pi(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(t) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI { r + t } else { r }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 160, height: 120, focal: 120.0 }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub theta_conf: f64,
    pub n_views: usize,
    /// Actuation noise; `None` moves exactly as commanded.
    pub noise: Option<ActionNoiseModel>,
    pub rng_seed: u64,
    pub r_min: f64,
    pub r_max: f64,
    /// Goals are also kept within this distance of the agent.
    pub max_hop: f64,
    /// Goals preferably keep this distance from earlier viewpoints.
    pub min_view_spacing: f64,
    pub explore_budget: usize,
    pub goal_attempts: usize,
    pub forward_step: f64,
    pub turn_step_deg: f64,
    pub agent_radius: f64,
    pub camera_height: f64,
    /// Downward pitch while exploring (degrees).
    pub explore_tilt_deg: f64,
    /// Re-estimate the object centroid from each captured view.
    pub recenter: bool,
    pub recenter_confidence: f64,
    pub recenter_radius: f64,
    pub camera: CameraConfig,
    pub grid: GridConfig,
    pub detector: MockDetectorConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            theta_conf: 0.9,
            n_views: 25,
            noise: None,
            rng_seed: 0,
            r_min: 0.5,
            r_max: 3.0,
            max_hop: 0.75,
            min_view_spacing: 0.4,
            explore_budget: 400,
            goal_attempts: 30,
            forward_step: 0.25,
            turn_step_deg: 10.0,
            agent_radius: 0.15,
            camera_height: 0.6,
            explore_tilt_deg: 15.0,
            recenter: true,
            recenter_confidence: 0.5,
            recenter_radius: 0.5,
            camera: CameraConfig::default(),
            grid: GridConfig::default(),
            detector: MockDetectorConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::InvalidInput("n_views must be at least 1".into()));
        }
        if !(self.r_min >= 0.0 && self.r_min < self.r_max) {
            return Err(Error::InvalidInput(format!("annulus [{}, {}] is empty", self.r_min, self.r_max)));
        }
        if !(self.forward_step > 0.0 && self.turn_step_deg > 0.0 && self.agent_radius >= 0.0 && self.camera_height > 0.0) {
            return Err(Error::InvalidInput("motion parameters must be positive".into()));
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        self.detector.validate()?;
        self.camera.intrinsics()?;
        Ok(())
    }
}

/// Hidden ground truth for one captured view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtView {
    pub view_index: u32,
    pub true_pose: Vec<f64>,
    pub target_pixels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

/// Evaluation-only sidecar written next to an episode manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSidecar {
    pub episode_id: String,
    pub environment_id: String,
    pub target_instance: u32,
    pub target_class: u32,
    pub detected_class: u32,
    pub target_box: GtBox,
    pub views: Vec<GtView>,
    /// Source instance of each manifest detection, in manifest order.
    pub detection_instances: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub episode: Episode,
    pub gt: GroundTruthSidecar,
    /// Modal target mask per view, aligned with `gt.views`.
    pub target_masks: Vec<Mask>,
    pub final_state: AgentState,
}

impl EpisodeRecord {
    /// Writes the manifest, frames, ground-truth masks and sidecar.
    pub fn write(&self, dir: &Path, opts: &WriteOptions) -> Result<PathBuf> {
        let manifest = write_episode(&self.episode, dir, opts)?;
        let mut gt = self.gt.clone();
        for (view, mask) in gt.views.iter_mut().zip(&self.target_masks) {
            if mask.is_empty_mask() {
                view.mask = None;
            } else {
                let name = format!("gt_mask_{:03}.png", view.view_index);
                write_mask_png(&dir.join(&name), mask)?;
                view.mask = Some(name);
            }
        }
        let text = serde_json::to_string_pretty(&gt).expect("sidecar serializes");
        write_atomic(&dir.join(GT_SIDECAR), text.as_bytes())?;
        Ok(manifest)
    }
}

pub fn read_sidecar(dir: &Path) -> Result<GroundTruthSidecar> {
    let path = dir.join(GT_SIDECAR);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::manifest(&path, format!("line {}", e.line()), e.to_string()))
}

/// Ground-truth target mask of `view`, or `None` if the target is not visible.
pub fn read_gt_mask(dir: &Path, sidecar: &GroundTruthSidecar, view: u32) -> Result<Option<Mask>> {
    match sidecar.views.iter().find(|v| v.view_index == view).and_then(|v| v.mask.as_ref()) {
        Some(name) => read_mask_png(&dir.join(name)).map(Some),
        None => Ok(None),
    }
}

/// A random collision-free spawn state.
pub fn respawn(world: &SynthWorld, config: &PolicyConfig, rng: &mut impl Rng) -> Result<AgentState> {
    let b = &world.bounds;
    for _ in 0..10_000 {
        let x = rng.random_range(b.min[0]..b.max[0]);
        let y = rng.random_range(b.min[1]..b.max[1]);
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if world.is_free(x, y, config.agent_radius) {
            return Ok(AgentState { position: [x, y], heading, camera_height: config.camera_height });
        }
    }
    Err(Error::Abandoned("no free spawn location".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Action {
    Forward,
    Left,
    Right,
}

/// True and believed agent states; the belief is dead-reckoned from the
/// commanded actions.
struct Body<'a> {
    world: &'a SynthWorld,
    config: &'a PolicyConfig,
    truth: AgentState,
    belief: AgentState,
    clock: f64,
}

impl Body<'_> {
    /// Executes one action of `scale` times the nominal size; returns false
    /// when blocked.
    fn act(&mut self, action: Action, scale: f64, rng: &mut impl Rng) -> Result<bool> {
        let turn = self.config.turn_step_deg.to_radians() * scale;
        let (name, nominal) = match action {
            Action::Forward => (MOVE_FORWARD, (self.config.forward_step * scale, 0.0, 0.0)),
            Action::Left => (TURN_LEFT, (0.0, 0.0, turn)),
            Action::Right => (TURN_RIGHT, (0.0, 0.0, -turn)),
        };
        let mut actual = nominal;
        if let Some(model) = &self.config.noise {
            let n = sample_actuation_noise(model, name, rng)?;
            actual = (actual.0 + n.dx, actual.1 + n.dy, actual.2 + n.dtheta_deg.to_radians());
        }
        self.clock += 1.0;
        let next = self.truth.advance(actual.0, actual.1, actual.2);
        if !self.world.is_free(next.position[0], next.position[1], self.config.agent_radius) {
            return Ok(false);
        }
        self.truth = next;
        self.belief = self.belief.advance(nominal.0, nominal.1, nominal.2);
        Ok(true)
    }

    fn capture(&mut self, pan: f64, tilt: f64, view: u32, intr: &Intrinsics) -> Rendered {
        self.clock += 1.0;
        render_with_pose(
            self.world,
            &self.truth.camera_pose(pan, tilt),
            &self.belief.camera_pose(pan, tilt),
            intr,
            view,
            self.clock,
        )
    }
}

/// Runs one episode from `agent` (whose pose is known exactly at the start).
pub fn run_episode(world: &SynthWorld, agent: AgentState, config: &PolicyConfig, episode_id: &str) -> Result<EpisodeRecord> {
    config.validate()?;
    let intr = config.camera.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut det_rng = ChaCha8Rng::seed_from_u64(config.detector.rng_seed ^ config.rng_seed.rotate_left(17));
    let mut body = Body { world, config, truth: agent, belief: agent, clock: 0.0 };
    let tilt = -config.explore_tilt_deg.to_radians();

    // Random exploration until a confident detection.
    let (trigger, trigger_det) = 'explore: {
        for _ in 0..=config.explore_budget {
            let r = body.capture(0.0, tilt, 0, &intr);
            let dets = mock_detect(world, &r, &config.detector, &mut det_rng);
            let best = dets
                .into_iter()
                .filter(|d| d.detection.confidence >= config.theta_conf)
                .fold(None::<MockDetection>, |b, d| match b {
                    Some(b) if b.detection.confidence >= d.detection.confidence => Some(b),
                    _ => Some(d),
                });
            if let Some(d) = best {
                break 'explore (r, d);
            }
            let action = [Action::Forward, Action::Left, Action::Right][rng.random_range(0..3)];
            body.act(action, 1.0, &mut rng)?;
        }
        return Err(Error::Abandoned(format!("no confident detection within {} steps", config.explore_budget)));
    };
    // The odometry frame is anchored at the trigger view.
    body.belief = body.truth;
    let mut trigger = trigger;
    trigger.frame.pose = trigger.true_pose;
    let target_instance = trigger_det.instance_id;
    let target_class = trigger_det.detection.class_id;
    let mut centroid = estimate_centroid(&trigger_det.detection, &trigger.frame)?;

    let b = &world.bounds;
    let mut grid = OccupancyGrid::covering([b.min[0] - 1.0, b.min[1] - 1.0], [b.max[0] + 1.0, b.max[1] + 1.0], config.grid.resolution)?;
    let mut frames: Vec<PosedFrame> = Vec::new();
    let mut mock: Vec<MockDetection> = Vec::new();
    let mut gt_views = Vec::new();
    let mut masks = Vec::new();

    let mut record = |r: Rendered, dets: Vec<MockDetection>, grid: &mut OccupancyGrid, body: &Body| {
        grid.integrate(&r.frame, &config.grid);
        grid.mark_free_disk(body.belief.position[0], body.belief.position[1], config.agent_radius + grid.resolution);
        let mask = r.instance_mask(target_instance);
        gt_views.push(GtView {
            view_index: r.frame.view_index,
            true_pose: r.true_pose.to_matrix().to_vec(),
            target_pixels: mask.count(),
            mask: None,
        });
        masks.push(mask);
        frames.push(r.frame);
        mock.extend(dets);
    };

    let trigger_dets = {
        // Re-run the detector so the trigger view's detections are complete.
        let mut d = mock_detect(world, &trigger, &config.detector, &mut det_rng);
        for x in &mut d {
            if x.instance_id == target_instance {
                *x = trigger_det.clone();
            }
        }
        d
    };
    record(trigger, trigger_dets, &mut grid, &body);

    let mut visited = vec![body.belief.position];
    for view in 1..config.n_views as u32 {
        let mut reached = false;
        for attempt in 0..config.goal_attempts {
            // The first half of the attempts also avoids earlier viewpoints.
            let spacing = if attempt < config.goal_attempts / 2 { config.min_view_spacing } else { 0.0 };
            let mut plan = grid.inflate(config.agent_radius);
            let here = body.belief.position;
            let Some(start) = plan.cell_of(here[0], here[1]) else { break };
            plan.set(start, Cell::Free);
            let goal = match sample_goal_where(&plan, [centroid.x, centroid.y], config.r_min, config.r_max, &mut rng, |c| {
                let p = plan.center(c);
                (p[0] - here[0]).hypot(p[1] - here[1]) <= config.max_hop && visited.iter().all(|v| (p[0] - v[0]).hypot(p[1] - v[1]) >= spacing)
            }) {
                Ok(g) => g,
                Err(_) => continue,
            };
            let Ok(path) = plan_path(&plan, start, goal) else { continue };
            follow(&mut body, &plan, &path.cells, &mut rng)?;
            reached = true;
            break;
        }
        if !reached {
            return Err(Error::Abandoned(format!("goal sampling or planning failed before view {view}")));
        }
        let p = body.belief.position;
        visited.push(p);
        let (dx, dy) = (centroid.x - p[0], centroid.y - p[1]);
        let pan = wrap_pi(dy.atan2(dx) - body.belief.heading);
        let pitch = (centroid.z - config.camera_height).atan2(dx.hypot(dy));
        let r = body.capture(pan, pitch, view, &intr);
        let dets = mock_detect(world, &r, &config.detector, &mut det_rng);
        if config.recenter {
            let mut best: Option<(f64, Vec3)> = None;
            for d in dets.iter().filter(|d| d.detection.class_id == target_class && d.detection.confidence >= config.recenter_confidence) {
                if let Ok(c) = estimate_centroid(&d.detection, &r.frame) {
                    let dist = (c - centroid).norm();
                    if dist <= config.recenter_radius && best.is_none_or(|b| dist < b.0) {
                        best = Some((dist, c));
                    }
                }
            }
            if let Some((_, c)) = best {
                centroid = c;
            }
        }
        record(r, dets, &mut grid, &body);
    }

    let detections = mock.iter().map(|d| d.detection.clone()).collect();
    let episode = Episode::new(episode_id, world.world_id.clone(), target_class, Some(0), frames, detections)?;
    let tb = world.primitives[target_instance as usize - 1].box3d();
    let gt = GroundTruthSidecar {
        episode_id: episode_id.to_string(),
        environment_id: world.world_id.clone(),
        target_instance,
        target_class: world.primitives[target_instance as usize - 1].class_id,
        detected_class: target_class,
        target_box: GtBox { center: tb.center.to_array(), dims: tb.dims, yaw: tb.yaw },
        views: gt_views,
        detection_instances: mock.iter().map(|d| d.instance_id).collect(),
    };
    Ok(EpisodeRecord { episode, gt, target_masks: masks, final_state: body.truth })
}

/// Walks a planned cell path with discrete turn and forward actions.
fn follow(body: &mut Body, grid: &OccupancyGrid, cells: &[(usize, usize)], rng: &mut impl Rng) -> Result<()> {
    let step_cells = (body.config.forward_step / grid.resolution).round().max(1.0) as usize;
    let mut waypoints: Vec<[f64; 2]> = cells.iter().skip(step_cells).step_by(step_cells).map(|&c| grid.center(c)).collect();
    if let Some(&last) = cells.last() {
        if cells.len() > 1 {
            waypoints.push(grid.center(last));
        }
    }
    let half_turn = 0.5 * body.config.turn_step_deg.to_radians();
    for w in waypoints {
        for _ in 0..64 {
            let p = body.belief.position;
            let (dx, dy) = (w[0] - p[0], w[1] - p[1]);
            let dist = dx.hypot(dy);
            if dist < 0.5 * grid.resolution {
                break;
            }
            let err = wrap_pi(dy.atan2(dx) - body.belief.heading);
            if err > half_turn {
                body.act(Action::Left, 1.0, rng)?;
            } else if err < -half_turn {
                body.act(Action::Right, 1.0, rng)?;
            } else {
                let scale = (dist / body.config.forward_step).min(1.0);
                if !body.act(Action::Forward, scale, rng)? {
                    return Ok(());
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explore::world::{Bounds, Category, Primitive, Shape};
    use crate::geometry::project_point;

    fn one_cube_world() -> SynthWorld {
        let mut prims = Vec::new();
        for (cx, cy, sx, sy) in [(0.0, 3.95, 8.0, 0.1), (0.0, -3.95, 8.0, 0.1), (3.95, 0.0, 0.1, 8.0), (-3.95, 0.0, 0.1, 8.0)] {
            prims.push(Primitive { shape: Shape::Box, center: [cx, cy, 1.0], dims: [sx, sy, 2.0], yaw: 0.0, color: [200, 190, 170], class_id: 0 });
        }
        prims.push(Primitive { shape: Shape::Box, center: [0.5, 0.0, 0.2], dims: [0.4; 3], yaw: 0.3, color: [200, 40, 40], class_id: 1 });
        SynthWorld {
            world_id: "cube".into(),
            bounds: Bounds { min: [-4.0, -4.0], max: [4.0, 4.0] },
            primitives: prims,
            categories: vec![
                Category { id: 0, name: "wall".into(), detectable: false },
                Category { id: 1, name: "cube".into(), detectable: true },
            ],
            ground_color: [128; 3],
            sky_color: [150, 190, 230],
            rng_seed: 0,
        }
    }

    fn start() -> AgentState {
        AgentState { position: [-1.5, 0.0], heading: 0.0, camera_height: 0.6 }
    }

    #[test]
    fn single_cube_episode() {
        let world = one_cube_world();
        let cfg = PolicyConfig { rng_seed: 4, detector: MockDetectorConfig { misclass_rate: 0.0, ..Default::default() }, ..Default::default() };
        let rec = run_episode(&world, start(), &cfg, "ep").unwrap();
        assert_eq!(rec.episode.frames.len(), 25);
        assert_eq!(rec.gt.target_instance, 5);
        // Azimuth of the cameras around the cube.
        let mut az: Vec<f64> = rec
            .episode
            .frames
            .iter()
            .map(|f| {
                let c = f.pose.inverse().translation;
                (c.y - 0.0).atan2(c.x - 0.5)
            })
            .collect();
        az.sort_by(f64::total_cmp);
        let mut gap: f64 = az[0] + std::f64::consts::TAU - az[az.len() - 1];
        for w in az.windows(2) {
            gap = gap.max(w[1] - w[0]);
        }
        assert!(std::f64::consts::TAU - gap >= std::f64::consts::FRAC_PI_2, "span {}", std::f64::consts::TAU - gap);
        let inside = rec
            .episode
            .frames
            .iter()
            .filter(|f| {
                let p = project_point(Vec3::new(0.5, 0.0, 0.2), &f.intrinsics, &f.pose);
                p.in_frame
            })
            .count();
        assert!(inside as f64 >= 0.95 * 25.0);
        // Noiseless: reported poses are the true poses.
        for (f, g) in rec.episode.frames.iter().zip(&rec.gt.views) {
            assert!(f.pose.max_abs_diff(&Pose::from_matrix(&g.true_pose).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let world = one_cube_world();
        let cfg = PolicyConfig { rng_seed: 9, n_views: 6, noise: Some(ActionNoiseModel::default()), ..Default::default() };
        let a = run_episode(&world, start(), &cfg, "ep").unwrap();
        let b = run_episode(&world, start(), &cfg, "ep").unwrap();
        assert_eq!(a.episode, b.episode);
        assert_eq!(a.gt, b.gt);
    }

    #[test]
    fn impossible_threshold_abandons() {
        let cfg = PolicyConfig { theta_conf: 1.01, explore_budget: 20, ..Default::default() };
        match run_episode(&one_cube_world(), start(), &cfg, "ep") {
            Err(Error::Abandoned(msg)) => assert!(msg.contains("no confident detection")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn noise_separates_reported_and_true_poses() {
        let cfg = PolicyConfig { rng_seed: 2, n_views: 8, noise: Some(ActionNoiseModel::default()), ..Default::default() };
        let rec = run_episode(&one_cube_world(), start(), &cfg, "ep").unwrap();
        let drift = rec
            .episode
            .frames
            .iter()
            .zip(&rec.gt.views)
            .map(|(f, g)| f.pose.max_abs_diff(&Pose::from_matrix(&g.true_pose).unwrap()))
            .fold(0.0, f64::max);
        assert!(drift > 1e-3);
        assert!(rec.episode.frames[0].pose.max_abs_diff(&Pose::from_matrix(&rec.gt.views[0].true_pose).unwrap()) < 1e-12);
    }
}
