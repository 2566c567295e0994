//! Ray-cast rendering of a [`SynthWorld`].

use super::world::SynthWorld;
use crate::image::{ColorImage, DepthImage, Image, Mask};
use crate::ingest::PosedFrame;
use crate::{Intrinsics, Pose, Vec3};

/// Per-pixel instance ids: 0 for ground or sky, `k + 1` for primitive `k`.
pub type InstanceImage = Image<u32>;

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub frame: PosedFrame,
    pub instances: InstanceImage,
    /// Pose actually used for rendering; differs from `frame.pose` under
    /// actuation noise.
    pub true_pose: Pose,
}

impl Rendered {
    pub fn instance_mask(&self, instance: u32) -> Mask {
        self.instances.map(|&i| i == instance)
    }
}

/// World-space ray through pixel `(u, v)`, scaled so that the distance
/// parameter equals camera depth.
fn pixel_ray(camera_to_world: &Pose, intr: &Intrinsics, u: f64, v: f64) -> Vec3 {
    let d = Vec3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    camera_to_world.rotation.mul_vec(d)
}

/// Renders colour, exact depth and instance ids. Rays missing everything
/// (sky) get depth 0.
pub fn render_frame(world: &SynthWorld, pose: &Pose, intr: &Intrinsics, view_index: u32, timestamp: f64) -> Rendered {
    render_with_pose(world, pose, pose, intr, view_index, timestamp)
}

/// Renders from `true_pose` but records `reported_pose` in the frame.
pub(crate) fn render_with_pose(
    world: &SynthWorld,
    true_pose: &Pose,
    reported_pose: &Pose,
    intr: &Intrinsics,
    view_index: u32,
    timestamp: f64,
) -> Rendered {
    let (w, h) = (intr.width, intr.height);
    let c2w = true_pose.inverse();
    let origin = c2w.translation;
    let mut rgb = ColorImage::filled(w, h, world.sky_color);
    let mut depth = DepthImage::filled(w, h, 0.0);
    let mut instances = InstanceImage::filled(w, h, 0);
    for v in 0..h {
        for u in 0..w {
            let dir = pixel_ray(&c2w, intr, u as f64, v as f64);
            if let Some(hit) = world.cast(origin, dir) {
                depth.set(u, v, hit.t as f32);
                match hit.primitive {
                    Some(k) => {
                        rgb.set(u, v, world.primitives[k].color);
                        instances.set(u, v, k as u32 + 1);
                    }
                    None => rgb.set(u, v, world.ground_color),
                }
            }
        }
    }
    let frame = PosedFrame { view_index, timestamp, intrinsics: *intr, pose: *reported_pose, rgb, depth };
    Rendered { frame, instances, true_pose: *true_pose }
}

/// Pixel count of primitive `k` rendered alone on a canvas enlarged by
/// `pad` image sizes on every side, so truncated parts are counted too.
pub fn unoccluded_pixels(world: &SynthWorld, k: usize, pose: &Pose, intr: &Intrinsics, pad: u32) -> usize {
    let prim = &world.primitives[k];
    let (w, h) = (intr.width as i64, intr.height as i64);
    let (u0, v0, u1, v1) = (-(pad as i64) * w, -(pad as i64) * h, (pad as i64 + 1) * w, (pad as i64 + 1) * h);
    let c = pose.apply(prim.center());
    let r = prim.bounding_radius();
    // Restrict rays to the projected bounding sphere when it lies in front.
    let (mut lo_u, mut lo_v, mut hi_u, mut hi_v) = (u0, v0, u1, v1);
    if c.z - r > 1e-3 {
        let (mut a, mut b, mut e, mut f) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for k in 0..8 {
            let q = c + Vec3::new(
                if k & 1 == 0 { -r } else { r },
                if k & 2 == 0 { -r } else { r },
                if k & 4 == 0 { -r } else { r },
            );
            let (pu, pv) = intr.project(q);
            (a, b, e, f) = (a.min(pu), b.min(pv), e.max(pu), f.max(pv));
        }
        lo_u = lo_u.max(a.floor() as i64 - 1);
        hi_u = hi_u.min(e.ceil() as i64 + 2);
        lo_v = lo_v.max(b.floor() as i64 - 1);
        hi_v = hi_v.min(f.ceil() as i64 + 2);
    } else if c.z + r <= 0.0 {
        return 0;
    }
    let c2w = pose.inverse();
    let origin = c2w.translation;
    let mut count = 0;
    for v in lo_v..hi_v {
        for u in lo_u..hi_u {
            let dir = pixel_ray(&c2w, intr, u as f64, v as f64);
            if prim.intersect(origin, dir).is_some() {
                count += 1;
            }
        }
    }
    count
}
