use proptest::prelude::*;

use mvlabel::evalkit::{box_iou, compute_map, iou_3d, GroundTruth, Iou3dMode, Scored};
use mvlabel::geometry::{project_point, Mat3, Vec3};
use mvlabel::labelgen::{convex_hull, min_area_rect, Box3D};
use mvlabel::{Intrinsics, Pose, PoseF32};

fn pose() -> impl Strategy<Value = Pose> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -3.1f64..3.1, prop::array::uniform3(-5.0f64..5.0)).prop_filter_map(
        "axis",
        |(x, y, z, angle, t)| {
            let axis = Vec3::new(x, y, z);
            (axis.norm() > 1e-2).then(|| Pose::new(Mat3::from_axis_angle(axis.normalized(), angle), Vec3::from_array(t)))
        },
    )
}

fn intrinsics() -> impl Strategy<Value = Intrinsics> {
    (64u32..1024, 64u32..1024, 40.0f64..1500.0, 40.0f64..1500.0, 0.0f64..1.0, 0.0f64..1.0)
        .prop_map(|(w, h, fx, fy, a, b)| Intrinsics::new(fx, fy, a * w as f64, b * h as f64, w, h).unwrap())
}

fn box3d() -> impl Strategy<Value = Box3D<f64>> {
    (prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(0.1f64..2.0), -3.2f64..3.2)
        .prop_map(|(c, dims, yaw)| Box3D { center: Vec3::from_array(c), dims, yaw, class_id: 1 })
}

proptest! {
    #[test]
    fn unproject_then_project_returns_the_pixel(intr in intrinsics(), pose in pose(), a in 0.0f64..1.0, b in 0.0f64..1.0, z in 0.05f64..80.0) {
        let (u, v) = (a * intr.width as f64, b * intr.height as f64);
        let world = pose.inverse().apply(intr.unproject(u, v, z));
        let p = project_point(world, &intr, &pose);
        prop_assert!((p.u - u).abs() < 1e-6 && (p.v - v).abs() < 1e-6);
        prop_assert!((p.depth - z).abs() < 1e-9 * (1.0 + z));
        prop_assert!(p.in_frame);
    }

    #[test]
    fn pose_inverse_and_composition(a in pose(), b in pose(), p in prop::array::uniform3(-10.0f64..10.0)) {
        let p = Vec3::from_array(p);
        prop_assert!((a.inverse().apply(a.apply(p)) - p).norm() < 1e-9);
        prop_assert!((a.compose(&b).apply(p) - a.apply(b.apply(p))).norm() < 1e-9);
        prop_assert!(a.compose(&a.inverse()).max_abs_diff(&Pose::identity()) < 1e-12);
        let back = Pose::from_matrix(&a.to_matrix()).unwrap();
        prop_assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn single_precision_tracks_double(pose in pose(), p in prop::array::uniform3(-5.0f64..5.0)) {
        let p = Vec3::from_array(p);
        let single: PoseF32 = pose.cast();
        let q = single.apply(p.cast()).cast::<f64>();
        prop_assert!((q - pose.apply(p)).norm() < 1e-4 * (1.0 + p.norm()));
    }

    #[test]
    fn min_area_rect_encloses_and_beats_axis_aligned(pts in prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 3..60)) {
        prop_assume!(convex_hull(&pts).len() >= 3);
        let r = min_area_rect(&pts).unwrap();
        let (s, c) = r.yaw.sin_cos();
        for p in &pts {
            let (dx, dy) = (p[0] - r.center[0], p[1] - r.center[1]);
            prop_assert!((dx * c + dy * s).abs() <= r.extent[0] / 2.0 + 1e-9);
            prop_assert!((-dx * s + dy * c).abs() <= r.extent[1] / 2.0 + 1e-9);
        }
        let span = |k: usize| pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) - pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        prop_assert!(r.area() <= span(0) * span(1) + 1e-9);
    }

    #[test]
    fn iou_3d_is_symmetric_and_bounded(a in box3d(), b in box3d()) {
        for mode in [Iou3dMode::Volumetric, Iou3dMode::Bev] {
            let ab = iou_3d(&a, &b, mode);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert!((ab - iou_3d(&b, &a, mode)).abs() < 1e-9);
            prop_assert!((iou_3d(&a, &a, mode) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn map_ignores_monotone_rescaling(
        items in prop::collection::vec((0u64..5, 1u32..3, prop::array::uniform4(0.0f64..50.0), 0.0f64..1.0, -5.0f64..5.0, any::<bool>()), 1..40),
        gain in 0.01f64..10.0,
    ) {
        let gts: Vec<_> = items.iter().map(|&(image, class_id, b, _, _, _)| GroundTruth { image, class_id, item: [b[0], b[1], b[2] + 1.0, b[3] + 1.0] }).collect();
        let preds: Vec<_> = items
            .iter()
            .filter(|t| t.5)
            .map(|&(image, class_id, b, score, j, _)| Scored { image, class_id, score, item: [b[0] + j, b[1], b[2] + 1.0, b[3] + 1.0] })
            .collect();
        let scaled: Vec<_> = preds.iter().map(|p| Scored { score: gain * p.score.exp(), ..p.clone() }).collect();
        let iou = |a: &[f64; 4], b: &[f64; 4]| box_iou(*a, *b);
        let x = compute_map(&preds, &gts, iou, 0.5);
        let y = compute_map(&scaled, &gts, iou, 0.5);
        prop_assert_eq!(x.map, y.map);
        prop_assert_eq!((x.tp, x.fp), (y.tp, y.fp));
        if let Some(m) = x.map {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
