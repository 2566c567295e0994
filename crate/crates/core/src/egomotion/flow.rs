//! Depth-induced flow, sub-pixel surface lookup, and projective
//! point-to-plane registration.

use crate::error::{Error, Result};
use crate::geometry::{depth_is_valid, Mat3, Vec3};
use crate::ingest::PosedFrame;
use crate::{Intrinsics, Pose};

/// Per-pixel displacement of a source frame; `None` where invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    pub flow: Vec<Option<[f64; 2]>>,
}

impl FlowField {
    pub fn get(&self, u: u32, v: u32) -> Option<[f64; 2]> {
        self.flow[(v * self.width + u) as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.flow.iter().filter(|f| f.is_some()).count()
    }
}

/// Warps every valid pixel of `src` through `ego` (src camera → dst
/// camera) into `dst`.
pub fn flow_from_depth(src: &PosedFrame, dst: &PosedFrame, ego: &Pose) -> FlowField {
    let (w, h) = src.depth.dims();
    let mut flow = vec![None; (w * h) as usize];
    for v in 0..h {
        for u in 0..w {
            let z = *src.depth.get(u, v);
            if !depth_is_valid(z) {
                continue;
            }
            let p = ego.apply(src.intrinsics.unproject(u as f64, v as f64, z as f64));
            if !(p.z > 0.0) {
                continue;
            }
            let (pu, pv) = dst.intrinsics.project(p);
            if dst.intrinsics.contains(pu, pv) {
                flow[(v * w + u) as usize] = Some([pu - u as f64, pv - v as f64]);
            }
        }
    }
    FlowField { width: w, height: h, flow }
}

/// Surface point and unit normal seen at a sub-pixel location, or `None`
/// when the 3×3 neighbourhood of the nearest pixel is not one plane.
///
/// On a plane the inverse depth is affine in pixel coordinates, so the
/// neighbourhood's affine fit gives exact sub-pixel depth.
pub fn sample_surface(frame: &PosedFrame, u: f64, v: f64, tolerance: f64) -> Option<(Vec3<f64>, Vec3<f64>)> {
    let (w, h) = frame.depth.dims();
    let (ru, rv) = ((u + 0.5).floor() as i64, (v + 0.5).floor() as i64);
    if ru < 1 || rv < 1 || ru + 1 >= w as i64 || rv + 1 >= h as i64 {
        return None;
    }
    let mut inv = [[0.0f64; 3]; 3];
    for (j, row) in inv.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            let z = *frame.depth.get((ru + i as i64 - 1) as u32, (rv + j as i64 - 1) as u32);
            if !depth_is_valid(z) {
                return None;
            }
            *cell = 1.0 / z as f64;
        }
    }
    let a = inv[1][1];
    let b = 0.5 * (inv[1][2] - inv[1][0]);
    let c = 0.5 * (inv[2][1] - inv[0][1]);
    let tol = tolerance * a;
    for (j, row) in inv.iter().enumerate() {
        for (i, &cell) in row.iter().enumerate() {
            let fit = a + b * (i as f64 - 1.0) + c * (j as f64 - 1.0);
            if (cell - fit).abs() > tol {
                return None;
            }
        }
    }
    let wz = a + b * (u - ru as f64) + c * (v - rv as f64);
    if !(wz > 0.0) {
        return None;
    }
    let intr = &frame.intrinsics;
    let point = intr.unproject(u, v, 1.0 / wz);
    // 1/z = A + B·x/z + C·y/z  ⇒  plane B·x + C·y + A·z = 1.
    let bb = b * intr.fx;
    let cc = c * intr.fy;
    let aa = a + b * (intr.cx - ru as f64) + c * (intr.cy - rv as f64);
    let normal = Vec3::new(bb, cc, aa).normalized();
    Some((point, normal))
}

/// Parameters of the correspondence search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    pub planarity_tolerance: f64,
    pub depth_jump: f64,
    pub stride: u32,
}

/// Source point, warped point, and the surface point and normal it lands on.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Correspondence {
    pub src: Vec3<f64>,
    pub warped: Vec3<f64>,
    pub dst: Vec3<f64>,
    pub normal: Vec3<f64>,
}

pub(crate) fn source_points(frame: &PosedFrame, stride: u32) -> Vec<Vec3<f64>> {
    let (w, h) = frame.depth.dims();
    let stride = stride.max(1);
    let mut out = Vec::new();
    for v in (0..h).step_by(stride as usize) {
        for u in (0..w).step_by(stride as usize) {
            let z = *frame.depth.get(u, v);
            if depth_is_valid(z) {
                out.push(frame.intrinsics.unproject(u as f64, v as f64, z as f64));
            }
        }
    }
    out
}

pub(crate) fn correspondences(points: &[Vec3<f64>], dst: &PosedFrame, ego: &Pose, params: &MatchParams) -> Vec<Correspondence> {
    let intr: &Intrinsics = &dst.intrinsics;
    let mut out = Vec::new();
    for &x in points {
        let p = ego.apply(x);
        if !(p.z > 0.0) {
            continue;
        }
        let (u, v) = intr.project(p);
        if !intr.contains(u, v) {
            continue;
        }
        let Some((y, n)) = sample_surface(dst, u, v, params.planarity_tolerance) else {
            continue;
        };
        if (y.z - p.z).abs() > params.depth_jump {
            continue;
        }
        out.push(Correspondence { src: x, warped: p, dst: y, normal: n });
    }
    out
}

fn solve6(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> Option<[f64; 6]> {
    for col in 0..6 {
        let piv = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..6 {
            let f = a[r][col] / a[col][col];
            for k in col..6 {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 6];
    for r in (0..6).rev() {
        x[r] = (b[r] - ((r + 1)..6).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    Some(x)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Registration {
    /// Source camera → destination camera.
    pub pose: Pose,
    pub iterations: usize,
    pub correspondences: usize,
    /// Weighted RMS point-to-plane residual at the final pose (m).
    pub rms: f64,
    /// Smallest eigenvalue of the normal matrix per unit weight, with
    /// rotations measured as displacement at the RMS point range. Near zero
    /// when the geometry leaves a motion direction unconstrained.
    pub conditioning: f64,
}

/// Smallest eigenvalue of a symmetric 6×6 matrix (cyclic Jacobi).
fn min_eigenvalue(mut a: [[f64; 6]; 6]) -> f64 {
    for _ in 0..50 {
        let off: f64 = (0..6).flat_map(|i| (0..6).filter(move |&k| k != i).map(move |k| (i, k))).map(|(i, k)| a[i][k] * a[i][k]).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..5 {
            for q in (p + 1)..6 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..6 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..6 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..6).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
}

fn conditioning(ata: &[[f64; 6]; 6], weight: f64, range: f64) -> f64 {
    let d = [range, range, range, 1.0, 1.0, 1.0];
    let mut c = [[0.0; 6]; 6];
    for i in 0..6 {
        for k in 0..6 {
            c[i][k] = ata[i][k] / (d[i] * d[k] * weight);
        }
    }
    min_eigenvalue(c).max(0.0)
}

/// Cauchy scale of the residual weights as a fraction of `max_distance`:
/// starts at the first value and shrinks by 0.7 per iteration to the second.
const CAUCHY_FRACTION: [f64; 2] = [0.5, 0.01];
/// Largest rotation (rad) and translation (m) applied in one iteration.
const MAX_STEP: [f64; 2] = [0.05, 0.1];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpParams {
    /// Associations farther apart than this are ignored (m).
    pub max_distance: f64,
    pub iterations: usize,
    /// Strength of the pull towards the prior motion, relative to the total
    /// correspondence weight.
    pub prior_weight: f64,
}

fn log_rotation(r: &Mat3<f64>) -> Vec3<f64> {
    let angle = r.rotation_angle();
    let v = Vec3::new(r.m[2][1] - r.m[1][2], r.m[0][2] - r.m[2][0], r.m[1][0] - r.m[0][1]) * 0.5;
    if angle < 1e-9 {
        v
    } else {
        v * (angle / angle.sin())
    }
}

/// Projective point-to-plane ICP of `src` onto `dst`, starting at `init`.
/// Associations farther than `max_distance` are ignored and residuals are
/// Cauchy-weighted, so occlusion mismatches barely pull the estimate. With a
/// `prior`, directions the geometry does not constrain stay close to it.
pub fn register_frames(
    src: &PosedFrame,
    dst: &PosedFrame,
    init: &Pose,
    prior: Option<&Pose>,
    params: &MatchParams,
    icp: &IcpParams,
) -> Result<Registration> {
    let IcpParams { max_distance, iterations, prior_weight } = *icp;
    let points = source_points(src, params.stride);
    let mut pose = *init;
    let mut done = 0;
    let mut last = (0usize, 0.0f64, 0.0f64);
    for it in 0..iterations {
        let c2 = (max_distance * (CAUCHY_FRACTION[0] * 0.7f64.powi(it as i32)).max(CAUCHY_FRACTION[1])).powi(2);
        let corr: Vec<_> = correspondences(&points, dst, &pose, params)
            .into_iter()
            .filter(|c| (c.warped - c.dst).norm() <= max_distance)
            .collect();
        if corr.len() < 6 {
            return Err(Error::Degenerate(format!("only {} registration correspondences", corr.len())));
        }
        let mut ata = [[0.0; 6]; 6];
        let mut atb = [0.0; 6];
        let (mut wsse, mut wsum, mut wr2) = (0.0, 0.0, 0.0);
        for c in &corr {
            let r = c.normal.dot(c.warped - c.dst);
            let w = 1.0 / (1.0 + r * r / c2);
            let j = c.warped.cross(c.normal);
            let row = [j.x, j.y, j.z, c.normal.x, c.normal.y, c.normal.z];
            for i in 0..6 {
                for k in 0..6 {
                    ata[i][k] += w * row[i] * row[k];
                }
                atb[i] -= w * row[i] * r;
            }
            wsse += w * r * r;
            wsum += w;
            wr2 += w * c.warped.norm_squared();
        }
        let range = (wr2 / wsum).sqrt();
        last = (corr.len(), (wsse / wsum).sqrt(), conditioning(&ata, wsum, range));
        if let Some(prior) = prior {
            let delta = pose.compose(&prior.inverse());
            let omega = log_rotation(&delta.rotation);
            let lambda = prior_weight * wsum;
            for i in 0..3 {
                let (rot, trans) = (lambda * range * range, lambda);
                ata[i][i] += rot;
                atb[i] -= rot * omega[i];
                ata[i + 3][i + 3] += trans;
                atb[i + 3] -= trans * delta.translation[i];
            }
        }
        let scale = (0..6).map(|i| ata[i][i]).fold(0.0, f64::max);
        for (i, row) in ata.iter_mut().enumerate() {
            row[i] += 1e-9 * scale;
        }
        let Some(x) = solve6(ata, atb) else {
            return Err(Error::Degenerate("registration normal equations are singular".into()));
        };
        done += 1;
        let mut omega = Vec3::new(x[0], x[1], x[2]);
        let mut t = Vec3::new(x[3], x[4], x[5]);
        let shrink = (omega.norm() / MAX_STEP[0]).max(t.norm() / MAX_STEP[1]).max(1.0);
        omega = omega / shrink;
        t = t / shrink;
        let angle = omega.norm();
        let rot = if angle > 0.0 { Mat3::from_axis_angle(omega / angle, angle) } else { Mat3::identity() };
        pose = Pose::new(rot, t).compose(&pose);
        if angle < 1e-10 && t.norm() < 1e-10 {
            break;
        }
    }
    Ok(Registration { pose, iterations: done, correspondences: last.0, rms: last.1, conditioning: last.2 })
}
