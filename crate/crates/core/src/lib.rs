pub mod egomotion;
pub mod error;
pub mod evalkit;
pub mod explore;
pub mod geometry;
pub mod image;
pub mod imageio;
pub mod ingest;
pub mod labelgen;
pub mod pipeline;
pub mod scalar;
pub mod segment3d;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases used by the pipeline stages.
pub type Pose = geometry::Pose<f64>;
pub type Intrinsics = geometry::Intrinsics<f64>;
pub type Point6 = geometry::Point6<f64>;
pub type Vec3 = geometry::Vec3<f64>;

/// Single-precision aliases of the geometric core.
pub type PoseF32 = geometry::Pose<f32>;
pub type IntrinsicsF32 = geometry::Intrinsics<f32>;
pub type Point6F32 = geometry::Point6<f32>;
