//! Rasterizing segmented 3D points into per-view instance masks.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{depth_is_valid, project_point, Vec3};
use crate::image::{BBox, Mask};
use crate::ingest::{morphology, PosedFrame};
use crate::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprojectConfig {
    /// Radius of the disk drawn for every projected point (px).
    pub splat_radius: u32,
    /// Radius of the closing that joins the splats (px).
    pub close_radius: u32,
    /// Points farther than the observed depth by more than this are hidden.
    /// `None` disables the visibility test.
    pub occlusion_tolerance: Option<f64>,
}

impl Default for ReprojectConfig {
    fn default() -> Self {
        Self { splat_radius: 1, close_radius: 3, occlusion_tolerance: Some(0.05) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMask {
    pub mask: Mask,
    pub bbox: Option<BBox>,
    /// Points that landed on a pixel and passed the visibility test.
    pub visible_points: usize,
    /// Indices into the input of the visible points.
    pub visible: Vec<usize>,
}

impl ViewMask {
    pub fn is_empty(&self) -> bool {
        self.bbox.is_none()
    }
}

/// Projects reference-frame `points` into `frame` through `reference_to_camera`
/// and turns the hits into one connected mask.
pub fn reproject_to_mask(points: &[Vec3<f64>], reference_to_camera: &Pose, frame: &PosedFrame, config: &ReprojectConfig) -> Result<ViewMask> {
    let (w, h) = frame.depth.dims();
    let mut raster = Mask::filled(w, h, false);
    let mut visible = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let pr = project_point(*p, &frame.intrinsics, reference_to_camera);
        if !(pr.depth > 0.0) || !pr.u.is_finite() || !pr.v.is_finite() {
            continue;
        }
        let (px, py) = ((pr.u + 0.5).floor(), (pr.v + 0.5).floor());
        if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
            continue;
        }
        let (px, py) = (px as u32, py as u32);
        if let Some(tol) = config.occlusion_tolerance {
            let d = *frame.depth.get(px, py);
            if depth_is_valid(d) && pr.depth > d as f64 + tol {
                continue;
            }
        }
        raster.set(px, py, true);
        visible.push(i);
    }
    let splat = morphology::dilate(&raster, config.splat_radius);
    let mask = morphology::largest_component(&morphology::close(&splat, config.close_radius));
    let bbox = mask.bbox();
    Ok(ViewMask { mask, bbox, visible_points: visible.len(), visible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::image::Image;

    fn frame(w: u32, h: u32) -> PosedFrame {
        PosedFrame {
            view_index: 0,
            timestamp: 0.0,
            intrinsics: Intrinsics::new(100.0, 100.0, 50.0, 40.0, w, h).unwrap(),
            pose: Pose::identity(),
            rgb: Image::filled(w, h, [0, 0, 0]),
            depth: Image::filled(w, h, 0.0),
        }
    }

    #[test]
    fn single_point_gives_unit_disk() {
        let f = frame(100, 80);
        let cfg = ReprojectConfig { close_radius: 1, ..Default::default() };
        // (50, 50) at depth 2: x = (50 - 50)·2/100, y = (50 - 40)·2/100.
        let p = Vec3::new(0.0, 0.2, 2.0);
        let m = reproject_to_mask(&[p], &Pose::identity(), &f, &cfg).unwrap();
        let expected = Mask::from_fn(100, 80, |u, v| {
            let (du, dv) = (u as i64 - 50, v as i64 - 50);
            du * du + dv * dv <= 1
        });
        assert_eq!(m.mask, expected);
        assert_eq!(m.bbox, Some(BBox { x: 49, y: 49, w: 3, h: 3 }));
    }

    #[test]
    fn points_behind_camera_are_empty() {
        let f = frame(100, 80);
        let pts = [Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.1, 0.0, -2.0)];
        let m = reproject_to_mask(&pts, &Pose::identity(), &f, &ReprojectConfig::default()).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.mask.count(), 0);
    }

    #[test]
    fn occluded_points_are_dropped() {
        let mut f = frame(100, 80);
        f.depth = Image::filled(100, 80, 1.0);
        let m = reproject_to_mask(&[Vec3::new(0.0, 0.0, 2.0)], &Pose::identity(), &f, &ReprojectConfig::default()).unwrap();
        assert!(m.is_empty());
        let cfg = ReprojectConfig { occlusion_tolerance: None, ..Default::default() };
        let m = reproject_to_mask(&[Vec3::new(0.0, 0.0, 2.0)], &Pose::identity(), &f, &cfg).unwrap();
        assert!(!m.is_empty());
    }

    #[test]
    fn result_is_one_component() {
        let f = frame(100, 80);
        let pts = [Vec3::new(-0.5, 0.0, 2.0), Vec3::new(0.5, 0.0, 2.0), Vec3::new(0.52, 0.0, 2.0)];
        let m = reproject_to_mask(&pts, &Pose::identity(), &f, &ReprojectConfig::default()).unwrap();
        assert_eq!(morphology::component_count(&m.mask), 1);
        assert_eq!(m.mask.bbox(), m.bbox);
        assert!(*m.mask.get(76, 40));
        assert!(!*m.mask.get(25, 40));
    }
}
