use super::{Detection, PosedFrame};
use crate::error::{Error, Result};
use crate::geometry::{depth_is_valid, Vec3};

/// 3D centroid of a detection: the unprojection of the masked pixel holding
/// the median depth, expressed in the frame's reference coordinates.
///
/// For an even number of samples the lower median is used; equal depths are
/// ordered by `(v, u)`.
pub fn estimate_centroid(detection: &Detection, frame: &PosedFrame) -> Result<Vec3<f64>> {
    if !detection.mask.same_dims(&frame.depth) {
        return Err(Error::Dimension("detection mask and depth differ in size".into()));
    }
    let mut samples: Vec<(f32, u32, u32)> = Vec::new();
    for v in 0..frame.depth.height() {
        for u in 0..frame.depth.width() {
            let z = *frame.depth.get(u, v);
            if *detection.mask.get(u, v) && depth_is_valid(z) {
                samples.push((z, v, u));
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no valid depth under detection mask in view {}",
            detection.view_index
        )));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (z, v, u) = samples[(samples.len() - 1) / 2];
    let cam = frame.intrinsics.unproject(u as f64, v as f64, z as f64);
    Ok(frame.pose.inverse().apply(cam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{ColorImage, DepthImage, Mask};
    use crate::ingest::DetectionSource;
    use crate::{Intrinsics, Pose};

    fn frame(depth: DepthImage) -> PosedFrame {
        let (w, h) = depth.dims();
        PosedFrame {
            view_index: 0,
            timestamp: 0.0,
            intrinsics: Intrinsics::new(50.0, 50.0, 5.0, 5.0, w, h).unwrap(),
            pose: Pose::identity(),
            rgb: ColorImage::filled(w, h, [0; 3]),
            depth,
        }
    }

    #[test]
    fn fronto_parallel_plane_gives_exact_depth() {
        let f = frame(DepthImage::filled(11, 11, 2.0));
        let mask = Mask::from_fn(11, 11, |u, v| (4..=6).contains(&u) && (4..=6).contains(&v));
        let det = Detection::from_mask(0, 1, 0.9, mask, DetectionSource::Detector).unwrap();
        let c = estimate_centroid(&det, &f).unwrap();
        assert_eq!(c.z, 2.0);
    }

    #[test]
    fn median_ignores_outlier() {
        let mut depth = DepthImage::filled(11, 11, 0.0);
        depth.set(5, 5, 1.0);
        depth.set(6, 5, 2.0);
        depth.set(7, 5, 9.0);
        let mask = Mask::from_fn(11, 11, |u, v| v == 5 && (5..=7).contains(&u));
        let det = Detection::from_mask(0, 1, 0.9, mask, DetectionSource::Detector).unwrap();
        let c = estimate_centroid(&det, &frame(depth)).unwrap();
        assert_eq!(c, Vec3::new(2.0 * (6.0 - 5.0) / 50.0, 0.0, 2.0));
    }

    #[test]
    fn mask_without_depth_is_an_error() {
        let f = frame(DepthImage::filled(11, 11, 0.0));
        let det = Detection::from_mask(0, 1, 0.9, Mask::filled(11, 11, true), DetectionSource::Detector).unwrap();
        assert!(estimate_centroid(&det, &f).is_err());
    }
}
