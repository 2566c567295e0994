//! Pinhole camera model, rigid poses, and the projection/unprojection pair
//! shared by every stage of the pipeline.
//!
//! Pose convention: a [`Pose`] maps reference-frame coordinates into the
//! camera frame (`x_cam = R · x_ref + t`). Unprojection applies the inverse.
//! Camera axes follow the usual pinhole layout: x right, y down, z forward.
//! Integer pixel coordinates address pixel centers.

mod linalg;
mod rigid;

pub use linalg::{svd3, Mat3, Vec3};
pub use rigid::{estimate_rigid_transform, RigidFit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorImage, DepthImage, Mask};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let w = T::from_u32(self.width).unwrap_or_else(T::zero);
        let h = T::from_u32(self.height).unwrap_or_else(T::zero);
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidInput(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy)));
        }
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Camera-frame point of pixel `(u, v)` at depth `z`.
    #[inline]
    pub fn unproject(&self, u: T, v: T, z: T) -> Vec3<T> {
        Vec3::new(z * (u - self.cx) / self.fx, z * (v - self.cy) / self.fy, z)
    }

    /// Continuous pixel coordinates of a camera-frame point. No frame check.
    #[inline]
    pub fn project(&self, p: Vec3<T>) -> (T, T) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn contains(&self, u: T, v: T) -> bool {
        u >= T::zero()
            && v >= T::zero()
            && u < T::from_u32(self.width).unwrap_or_else(T::zero)
            && v < T::from_u32(self.height).unwrap_or_else(T::zero)
    }

    pub fn cast<U: Real>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::lit(self.fx.to_f64_lossy()),
            fy: U::lit(self.fy.to_f64_lossy()),
            cx: U::lit(self.cx.to_f64_lossy()),
            cy: U::lit(self.cy.to_f64_lossy()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zero() }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -rt.mul_vec(self.translation) }
    }

    /// Checks `RᵀR = I` and `det R = +1` within `tol`, and finiteness.
    pub fn validate(&self, tol: T) -> Result<()> {
        if !self.rotation.is_finite() || !self.translation.is_finite() {
            return Err(Error::InvalidInput("pose has non-finite entries".into()));
        }
        let rtr = self.rotation.transpose().mul_mat(&self.rotation);
        let ortho = rtr.max_abs_diff(&Mat3::identity());
        let det = self.rotation.det();
        if ortho > tol || (det - T::one()).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "rotation not orthonormal (|RᵀR - I| = {ortho}, det = {det})"
            )));
        }
        Ok(())
    }

    /// Row-major homogeneous 4×4 matrix.
    pub fn to_matrix(&self) -> [T; 16] {
        let r = &self.rotation.m;
        let t = self.translation;
        let (z, o) = (T::zero(), T::one());
        [
            r[0][0], r[0][1], r[0][2], t.x, //
            r[1][0], r[1][1], r[1][2], t.y, //
            r[2][0], r[2][1], r[2][2], t.z, //
            z, z, z, o,
        ]
    }

    /// Parses a row-major homogeneous matrix; the bottom row must be `0 0 0 1`.
    pub fn from_matrix(m: &[T]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::InvalidInput(format!("pose needs 16 numbers, got {}", m.len())));
        }
        let tol = T::lit(1e-9);
        let bottom = [m[12], m[13], m[14], m[15] - T::one()];
        if bottom.iter().any(|v| v.abs() > tol) {
            return Err(Error::InvalidInput("pose bottom row must be 0 0 0 1".into()));
        }
        let pose = Self {
            rotation: Mat3::from_rows([[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]),
            translation: Vec3::new(m[3], m[7], m[11]),
        };
        pose.validate(tol)?;
        Ok(pose)
    }

    /// Largest entry-wise difference between two poses.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let dt = self.translation - other.translation;
        self.rotation
            .max_abs_diff(&other.rotation)
            .max(dt.x.abs())
            .max(dt.y.abs())
            .max(dt.z.abs())
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        let r = self.rotation.m;
        let c = |v: T| U::lit(v.to_f64_lossy());
        Pose {
            rotation: Mat3::from_rows([
                [c(r[0][0]), c(r[0][1]), c(r[0][2])],
                [c(r[1][0]), c(r[1][1]), c(r[1][2])],
                [c(r[2][0]), c(r[2][1]), c(r[2][2])],
            ]),
            translation: self.translation.cast(),
        }
    }
}

/// Colored point: position in meters, color channels in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point6<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub r: T,
    pub g: T,
    pub b: T,
}

impl<T: Real> Point6<T> {
    pub fn position(&self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn color(&self) -> Vec3<T> {
        Vec3::new(self.r, self.g, self.b)
    }

    pub fn features(&self) -> [T; 6] {
        [self.x, self.y, self.z, self.r, self.g, self.b]
    }
}

/// Source pixel of an unprojected point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelRef {
    pub view: u32,
    pub u: u32,
    pub v: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint<T> {
    pub point: Point6<T>,
    pub source: PixelRef,
}

/// Whether a depth sample carries a usable measurement.
#[inline]
pub fn depth_is_valid(z: f32) -> bool {
    z.is_finite() && z > 0.0
}

/// Lifts every valid-depth pixel of a frame into the reference frame.
///
/// `pose` maps reference coordinates to this camera; points are produced in
/// row-major pixel order and tagged with `(view, u, v)`.
pub fn unproject_frame<T: Real>(
    rgb: &ColorImage,
    depth: &DepthImage,
    intr: &Intrinsics<T>,
    pose: &Pose<T>,
    valid_mask: Option<&Mask>,
    view: u32,
) -> Result<Vec<CloudPoint<T>>> {
    if !rgb.same_dims(depth) || depth.dims() != (intr.width, intr.height) {
        return Err(Error::Dimension(format!(
            "rgb {:?}, depth {:?}, intrinsics {}x{}",
            rgb.dims(),
            depth.dims(),
            intr.width,
            intr.height
        )));
    }
    if let Some(m) = valid_mask {
        if !m.same_dims(depth) {
            return Err(Error::Dimension(format!("valid mask {:?} vs depth {:?}", m.dims(), depth.dims())));
        }
    }
    let to_ref = pose.inverse();
    let inv255 = T::one() / T::lit(255.0);
    let mut out = Vec::new();
    for v in 0..intr.height {
        for u in 0..intr.width {
            let z = *depth.get(u, v);
            if !depth_is_valid(z) || valid_mask.is_some_and(|m| !*m.get(u, v)) {
                continue;
            }
            let cam = intr.unproject(T::from_u32(u).unwrap(), T::from_u32(v).unwrap(), T::lit(z as f64));
            let p = to_ref.apply(cam);
            let c = rgb.get(u, v);
            out.push(CloudPoint {
                point: Point6 {
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    r: T::from_u8(c[0]).unwrap() * inv255,
                    g: T::from_u8(c[1]).unwrap() * inv255,
                    b: T::from_u8(c[2]).unwrap() * inv255,
                },
                source: PixelRef { view, u, v },
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    pub u: T,
    pub v: T,
    /// Camera-frame depth.
    pub depth: T,
    /// False when behind the camera or outside `[0, width) × [0, height)`.
    pub in_frame: bool,
}

/// Projects a reference-frame point through `pose` and the pinhole model.
#[inline]
pub fn project_point<T: Real>(p: Vec3<T>, intr: &Intrinsics<T>, pose: &Pose<T>) -> Projection<T> {
    let cam = pose.apply(p);
    if !(cam.z > T::zero()) || !cam.is_finite() {
        return Projection { u: T::nan(), v: T::nan(), depth: cam.z, in_frame: false };
    }
    let (u, v) = intr.project(cam);
    Projection { u, v, depth: cam.z, in_frame: intr.contains(u, v) }
}

/// Projects every point; degenerate points are flagged, never dropped.
pub fn project_points<T: Real>(points: &[Point6<T>], intr: &Intrinsics<T>, pose: &Pose<T>) -> Vec<Projection<T>> {
    points.iter().map(|p| project_point(p.position(), intr, pose)).collect()
}

/// Camera pose (world → camera) for a camera at `eye` looking at `target`,
/// with world +z up.
pub fn look_at<T: Real>(eye: Vec3<T>, target: Vec3<T>) -> Pose<T> {
    let forward = (target - eye).normalized();
    let up = Vec3::new(T::zero(), T::zero(), T::one());
    let mut right = forward.cross(up);
    if right.norm() < T::lit(1e-9) {
        right = Vec3::new(T::one(), T::zero(), T::zero());
    }
    let right = right.normalized();
    let down = forward.cross(right);
    // Rows are the camera axes expressed in world coordinates.
    let rotation = Mat3::from_rows([right.to_array(), down.to_array(), forward.to_array()]);
    Pose { rotation, translation: -rotation.mul_vec(eye) }
}
