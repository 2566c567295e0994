//! Detection metrics: IoU in 2D and 3D, VOC-style mAP, confidence sweeps.

mod iou;
mod map;
mod report;

pub use iou::{box_iou, clip_polygon, iou_2d, iou_3d, mask_iou, Iou3dMode, Region};
pub use map::{average_precision, compute_map, pr_sweep, ClassRecord, EvalRecord, GroundTruth, Scored, SweepRow};
pub use report::{default_sweep, evaluate_2d, evaluate_3d, render_table, EvalConfig, EvalReport};
