//! Aggregated, voxelized pointcloud with the foreground / background /
//! unknown partition derived from a seed detection.

use serde::{Deserialize, Serialize};

use super::{estimate_centroid, morphology, Detection, Episode, PosedFrame};
use crate::error::{Error, Result};
use crate::geometry::{unproject_frame, CloudPoint, Vec3};
use crate::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Foreground,
    Background,
    Unknown,
}

/// Coordinate frame the cloud is aggregated in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFrame {
    /// Camera frame of the seed detection's view.
    #[default]
    SeedView,
    /// Camera frame of the given view.
    View(u32),
    /// The frame the episode poses are expressed in.
    Manifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudConfig {
    /// Erosion radius (pixels) applied to the seed mask to form foreground.
    pub erode_radius: u32,
    /// Guard band (pixels) around the seed mask excluded from background.
    pub dilate_radius: u32,
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// Keep only points within this distance (meters) of the seed centroid.
    pub crop_radius: Option<f64>,
    pub reference: ReferenceFrame,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self { erode_radius: 5, dilate_radius: 5, voxel_size: 0.02, crop_radius: Some(1.5), reference: ReferenceFrame::SeedView }
    }
}

impl CloudConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidInput(format!("voxel size must be positive, got {}", self.voxel_size)));
        }
        if let Some(r) = self.crop_radius {
            if !(r > 0.0) {
                return Err(Error::InvalidInput(format!("crop radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

/// Voxelized cloud plus the full-resolution points it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud {
    pub voxel_size: f64,
    /// Maps reference-frame coordinates into the episode's pose frame.
    pub reference_to_manifest: Pose,
    /// One representative point per voxel (mean position and color,
    /// provenance of the first contributing pixel).
    pub points: Vec<CloudPoint<f64>>,
    pub labels: Vec<Label>,
    pub voxel_keys: Vec<[i64; 3]>,
    /// Full-resolution points (after cropping).
    pub full_points: Vec<CloudPoint<f64>>,
    /// Voxel index of each full-resolution point.
    pub full_voxel: Vec<u32>,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Pose mapping reference coordinates into the camera of `frame`.
    pub fn reference_to_camera(&self, frame: &PosedFrame) -> Pose {
        frame.pose.compose(&self.reference_to_manifest)
    }

    /// Voxel key containing a reference-frame position.
    pub fn key_of(&self, p: Vec3<f64>) -> [i64; 3] {
        voxel_key(p, self.voxel_size)
    }
}

pub(crate) fn voxel_key(p: Vec3<f64>, size: f64) -> [i64; 3] {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

/// Reference→manifest pose for the chosen reference frame.
pub(crate) fn resolve_reference(episode: &Episode, seed: &Detection, reference: ReferenceFrame) -> Result<Pose> {
    let view = match reference {
        ReferenceFrame::Manifest => return Ok(Pose::identity()),
        ReferenceFrame::SeedView => seed.view_index,
        ReferenceFrame::View(v) => v,
    };
    let frame = episode
        .frame(view)
        .ok_or_else(|| Error::InvalidInput(format!("reference view {view} not in episode")))?;
    Ok(frame.pose.inverse())
}

/// Per-pixel labels of the seed view: eroded mask → foreground, pixels
/// outside the dilated mask → background, the guard band in between →
/// unknown.
pub fn seed_masks(seed: &Detection, erode_radius: u32, dilate_radius: u32) -> (crate::image::Mask, crate::image::Mask) {
    let fg = morphology::erode(&seed.mask, erode_radius);
    let bg = morphology::dilate(&seed.mask, dilate_radius).invert();
    (fg, bg)
}

/// Unprojects every frame into the reference frame, labels seed-view pixels
/// from the seed detection, crops, and voxelizes.
pub fn build_partitioned_cloud(episode: &Episode, seed: &Detection, config: &CloudConfig) -> Result<LabeledCloud> {
    config.validate()?;
    let seed_frame = episode
        .frame(seed.view_index)
        .ok_or_else(|| Error::InvalidInput(format!("seed view {} not in episode", seed.view_index)))?;
    if !seed.mask.same_dims(&seed_frame.depth) {
        return Err(Error::Dimension("seed mask does not match its frame".into()));
    }
    let (fg, bg) = seed_masks(seed, config.erode_radius, config.dilate_radius);
    let label_of = |p: &CloudPoint<f64>| -> Label {
        if p.source.view != seed.view_index {
            Label::Unknown
        } else if *fg.get(p.source.u, p.source.v) {
            Label::Foreground
        } else if *bg.get(p.source.u, p.source.v) {
            Label::Background
        } else {
            Label::Unknown
        }
    };
    let (points, labels) = gather_points(episode, seed, config, |p| label_of(p))?;
    let cloud = voxelize(points, &labels, config.voxel_size, resolve_reference(episode, seed, config.reference)?);
    if cloud.count(Label::Foreground) == 0 {
        return Err(Error::EmptyForeground);
    }
    if cloud.count(Label::Background) == 0 {
        return Err(Error::EmptyBackground);
    }
    Ok(cloud)
}

/// Unprojects all frames into the configured reference frame and crops
/// around the seed centroid, labelling each point with `label_of`.
pub(crate) fn gather_points(
    episode: &Episode,
    seed: &Detection,
    config: &CloudConfig,
    label_of: impl Fn(&CloudPoint<f64>) -> Label,
) -> Result<(Vec<CloudPoint<f64>>, Vec<Label>)> {
    let ref_to_manifest = resolve_reference(episode, seed, config.reference)?;
    let seed_frame = episode.frame(seed.view_index).expect("seed view checked by caller");
    let centroid = ref_to_manifest.inverse().apply(estimate_centroid(seed, seed_frame)?);

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for frame in &episode.frames {
        let rel = frame.pose.compose(&ref_to_manifest);
        for p in unproject_frame(&frame.rgb, &frame.depth, &frame.intrinsics, &rel, None, frame.view_index)? {
            if let Some(r) = config.crop_radius {
                if (p.point.position() - centroid).norm() > r {
                    continue;
                }
            }
            labels.push(label_of(&p));
            points.push(p);
        }
    }
    Ok((points, labels))
}

/// Groups points by voxel. Each voxel takes the majority of its
/// foreground/background votes (foreground wins ties) and is unknown only
/// when no contributing point carries either label.
pub(crate) fn voxelize(
    points: Vec<CloudPoint<f64>>,
    labels: &[Label],
    voxel_size: f64,
    reference_to_manifest: Pose,
) -> LabeledCloud {
    let mut order: Vec<([i64; 3], u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (voxel_key(p.point.position(), voxel_size), i as u32))
        .collect();
    order.sort_unstable();

    let mut vox_points = Vec::new();
    let mut vox_labels = Vec::new();
    let mut vox_keys = Vec::new();
    let mut full_voxel = vec![0u32; points.len()];
    let mut start = 0;
    while start < order.len() {
        let key = order[start].0;
        let mut end = start;
        while end < order.len() && order[end].0 == key {
            end += 1;
        }
        let members = &order[start..end];
        let vid = vox_points.len() as u32;
        let mut sum = [0.0f64; 6];
        let (mut n_fg, mut n_bg) = (0usize, 0usize);
        for &(_, i) in members {
            let p = &points[i as usize].point;
            for (s, f) in sum.iter_mut().zip(p.features()) {
                *s += f;
            }
            match labels[i as usize] {
                Label::Foreground => n_fg += 1,
                Label::Background => n_bg += 1,
                Label::Unknown => {}
            }
            full_voxel[i as usize] = vid;
        }
        let n = members.len() as f64;
        let first = &points[members[0].1 as usize];
        vox_points.push(CloudPoint {
            point: crate::geometry::Point6 {
                x: sum[0] / n,
                y: sum[1] / n,
                z: sum[2] / n,
                r: sum[3] / n,
                g: sum[4] / n,
                b: sum[5] / n,
            },
            source: first.source,
        });
        vox_labels.push(if n_fg > 0 && n_fg >= n_bg {
            Label::Foreground
        } else if n_bg > 0 {
            Label::Background
        } else {
            Label::Unknown
        });
        vox_keys.push(key);
        start = end;
    }

    LabeledCloud {
        voxel_size,
        reference_to_manifest,
        points: vox_points,
        labels: vox_labels,
        voxel_keys: vox_keys,
        full_points: points,
        full_voxel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{ColorImage, DepthImage, Mask};
    use crate::ingest::{DetectionSource, PosedFrame};
    use crate::Intrinsics;

    fn frame(view: u32, pose: Pose) -> PosedFrame {
        PosedFrame {
            view_index: view,
            timestamp: 0.0,
            intrinsics: Intrinsics::new(10.0, 10.0, 1.5, 1.5, 4, 4).unwrap(),
            pose,
            rgb: ColorImage::filled(4, 4, [10, 20, 30]),
            depth: DepthImage::filled(4, 4, 1.0),
        }
    }

    fn config() -> CloudConfig {
        CloudConfig { erode_radius: 0, dilate_radius: 0, voxel_size: 0.001, crop_radius: None, ..Default::default() }
    }

    fn seed() -> Detection {
        let mask = Mask::from_fn(4, 4, |u, v| (1..=2).contains(&u) && (1..=2).contains(&v));
        Detection::from_mask(0, 1, 0.95, mask, DetectionSource::Detector).unwrap()
    }

    #[test]
    fn single_view_partition_counts() {
        let ep = Episode::new("e", "w", 1, None, vec![frame(0, Pose::identity())], vec![seed()]).unwrap();
        let cloud = build_partitioned_cloud(&ep, &ep.detections[0], &config()).unwrap();
        assert_eq!(cloud.count(Label::Foreground), 4);
        assert_eq!(cloud.count(Label::Background), 12);
        assert_eq!(cloud.count(Label::Unknown), 0);
        assert_eq!(cloud.full_points.len(), 16);
    }

    #[test]
    fn non_seed_views_are_unknown() {
        let second = Pose::from_translation(Vec3::new(0.0, 0.0, 5.0));
        let ep = Episode::new("e", "w", 1, None, vec![frame(0, Pose::identity()), frame(1, second)], vec![seed()])
            .unwrap();
        let cloud = build_partitioned_cloud(&ep, &ep.detections[0], &config()).unwrap();
        assert_eq!(cloud.count(Label::Unknown), 16);
        for (p, l) in cloud.points.iter().zip(&cloud.labels) {
            assert_eq!(p.source.view == 1, *l == Label::Unknown);
        }
    }

    #[test]
    fn guard_band_and_erosion() {
        let mut f = frame(0, Pose::identity());
        f.intrinsics = Intrinsics::new(10.0, 10.0, 4.5, 4.5, 9, 9).unwrap();
        f.rgb = ColorImage::filled(9, 9, [0; 3]);
        f.depth = DepthImage::filled(9, 9, 1.0);
        let mask = Mask::from_fn(9, 9, |u, v| (2..=6).contains(&u) && (2..=6).contains(&v));
        let det = Detection::from_mask(0, 1, 0.95, mask, DetectionSource::Detector).unwrap();
        let ep = Episode::new("e", "w", 1, None, vec![f], vec![det]).unwrap();
        let cfg = CloudConfig { erode_radius: 1, dilate_radius: 1, ..config() };
        let cloud = build_partitioned_cloud(&ep, &ep.detections[0], &cfg).unwrap();
        assert_eq!(cloud.count(Label::Foreground), 9);
        assert_eq!(cloud.count(Label::Background), 81 - 25 - 20);
        assert_eq!(cloud.count(Label::Unknown), 16 + 20);
    }

    #[test]
    fn voxel_majority_prefers_foreground_on_ties() {
        let p = |x: f64| CloudPoint {
            point: crate::geometry::Point6 { x, y: 0.0, z: 0.0, r: 0.0, g: 0.0, b: 0.0 },
            source: crate::geometry::PixelRef { view: 0, u: 0, v: 0 },
        };
        let pts = vec![p(0.01), p(0.02), p(0.03), p(0.5), p(0.51), p(0.9)];
        let labels = [
            Label::Foreground,
            Label::Background,
            Label::Unknown,
            Label::Background,
            Label::Unknown,
            Label::Unknown,
        ];
        let cloud = voxelize(pts, &labels, 0.1, Pose::identity());
        assert_eq!(cloud.labels, vec![Label::Foreground, Label::Background, Label::Unknown]);
        assert_eq!(cloud.full_voxel, vec![0, 0, 0, 1, 1, 2]);
        assert!((cloud.points[0].point.x - 0.02).abs() < 1e-15);
    }

    #[test]
    fn empty_foreground_after_erosion_is_an_error() {
        let ep = Episode::new("e", "w", 1, None, vec![frame(0, Pose::identity())], vec![seed()]).unwrap();
        let cfg = CloudConfig { erode_radius: 2, ..config() };
        assert!(matches!(build_partitioned_cloud(&ep, &ep.detections[0], &cfg), Err(Error::EmptyForeground)));
        let full = Detection::from_mask(0, 1, 0.9, Mask::filled(4, 4, true), DetectionSource::Detector).unwrap();
        let ep = Episode::new("e", "w", 1, None, vec![frame(0, Pose::identity())], vec![full]).unwrap();
        assert!(matches!(build_partitioned_cloud(&ep, &ep.detections[0], &config()), Err(Error::EmptyBackground)));
    }

    #[test]
    fn building_is_deterministic() {
        let second = Pose::from_translation(Vec3::new(0.1, 0.0, 0.2));
        let ep = Episode::new("e", "w", 1, None, vec![frame(0, Pose::identity()), frame(1, second)], vec![seed()])
            .unwrap();
        let cfg = CloudConfig { voxel_size: 0.05, ..config() };
        let a = build_partitioned_cloud(&ep, &ep.detections[0], &cfg).unwrap();
        let b = build_partitioned_cloud(&ep, &ep.detections[0], &cfg).unwrap();
        assert_eq!(a, b);
    }
}
