//! Intersection over union for boxes, masks, and vertical-axis 3D boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::labelgen::Box3D;
use crate::scalar::Real;

/// `[x, y, w, h]` boxes in continuous pixel coordinates.
pub fn box_iou<T: Real>(a: [T; 4], b: [T; 4]) -> T {
    let ix = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(T::zero());
    let iy = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(T::zero());
    let inter = ix * iy;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union > T::zero() {
        (inter / union).min(T::one())
    } else {
        T::zero()
    }
}

pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Dimension(format!("masks {:?} and {:?}", a.dims(), b.dims())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.pixels().iter().zip(b.pixels()) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// A 2D region compared by [`iou_2d`].
#[derive(Clone, Copy, Debug)]
pub enum Region<'a> {
    Box([f64; 4]),
    Mask(&'a Mask),
}

/// IoU of two regions; a box against a mask compares the mask's tight box.
pub fn iou_2d(a: Region<'_>, b: Region<'_>) -> Result<f64> {
    let as_box = |r: Region<'_>| match r {
        Region::Box(b) => b,
        Region::Mask(m) => m.bbox().map_or([0.0; 4], |b| [b.x as f64, b.y as f64, b.w as f64, b.h as f64]),
    };
    match (a, b) {
        (Region::Mask(x), Region::Mask(y)) => mask_iou(x, y),
        _ => Ok(box_iou(as_box(a), as_box(b))),
    }
}

fn polygon_area<T: Real>(p: &[[T; 2]]) -> T {
    let n = p.len();
    let mut s = T::zero();
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        s = s + a[0] * b[1] - a[1] * b[0];
    }
    (s * T::lit(0.5)).abs()
}

/// Clips `subject` by the convex counter-clockwise polygon `clip`.
pub fn clip_polygon<T: Real>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let side = |a: [T; 2], b: [T; 2], p: [T; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(a, b, cur), side(a, b, prev));
            if sc >= T::zero() {
                if sp < T::zero() {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= T::zero() {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect<T: Real>(p: [T; 2], q: [T; 2], sp: T, sq: T) -> [T; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Iou3dMode {
    /// Footprint overlap times vertical overlap over the volume union.
    #[default]
    Volumetric,
    /// Footprint overlap only.
    Bev,
}

pub fn iou_3d<T: Real>(a: &Box3D<T>, b: &Box3D<T>, mode: Iou3dMode) -> T {
    let fa = a.footprint();
    let fb = b.footprint();
    let inter_area = polygon_area(&clip_polygon(&fa, &fb));
    let (aa, ab) = (a.dims[0] * a.dims[1], b.dims[0] * b.dims[1]);
    let (inter, union) = match mode {
        Iou3dMode::Bev => (inter_area, aa + ab - inter_area),
        Iou3dMode::Volumetric => {
            let (alo, ahi) = a.z_range();
            let (blo, bhi) = b.z_range();
            let dz = (ahi.min(bhi) - alo.max(blo)).max(T::zero());
            let inter = inter_area * dz;
            (inter, a.volume() + b.volume() - inter)
        }
    };
    if union > T::zero() {
        (inter / union).max(T::zero()).min(T::one())
    } else {
        T::zero()
    }
}
