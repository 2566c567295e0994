//! Oriented 3D boxes about the vertical axis and minimum-area rectangles.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;

/// Box with a vertical `z` axis. `dims` are (width, depth, height) with the
/// width axis at angle `yaw` from `+x`; `width ≥ depth` and
/// `yaw ∈ (−π/2, π/2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D<T> {
    pub center: Vec3<T>,
    pub dims: [T; 3],
    pub yaw: T,
    pub class_id: u32,
}

impl<T: Real> Box3D<T> {
    pub fn volume(&self) -> T {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Footprint corners, counter-clockwise.
    pub fn footprint(&self) -> [[T; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hw = self.dims[0] * T::lit(0.5);
        let hd = self.dims[1] * T::lit(0.5);
        let corner = |a: T, b: T| [self.center.x + a * c - b * s, self.center.y + a * s + b * c];
        [corner(hw, hd), corner(-hw, hd), corner(-hw, -hd), corner(hw, -hd)]
    }

    pub fn z_range(&self) -> (T, T) {
        let hh = self.dims[2] * T::lit(0.5);
        (self.center.z - hh, self.center.z + hh)
    }

    /// Whether `p` lies inside the box grown by `margin` on every side.
    pub fn contains(&self, p: Vec3<T>, margin: T) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        let a = d.x * c + d.y * s;
        let b = -d.x * s + d.y * c;
        let half = T::lit(0.5);
        a.abs() <= self.dims[0] * half + margin
            && b.abs() <= self.dims[1] * half + margin
            && d.z.abs() <= self.dims[2] * half + margin
    }

    pub fn cast<U: Real>(&self) -> Box3D<U> {
        Box3D {
            center: self.center.cast(),
            dims: self.dims.map(|v| U::lit(v.to_f64_lossy())),
            yaw: U::lit(self.yaw.to_f64_lossy()),
            class_id: self.class_id,
        }
    }
}

/// Rectangle in the plane; `extent` along `(cos yaw, sin yaw)` and its normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect<T> {
    pub center: [T; 2],
    pub extent: [T; 2],
    pub yaw: T,
}

impl<T: Real> Rect<T> {
    pub fn area(&self) -> T {
        self.extent[0] * self.extent[1]
    }
}

fn cross<T: Real>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull, counter-clockwise, without collinear vertices (monotone chain).
pub fn convex_hull<T: Real>(points: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut pts: Vec<[T; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap_or(Ordering::Equal).then(a[1].partial_cmp(&b[1]).unwrap_or(Ordering::Equal)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[T; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[T; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero() {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Wraps an angle into `(−π/2, π/2]`.
pub fn wrap_half_pi<T: Real>(a: T) -> T {
    let pi = T::lit(std::f64::consts::PI);
    let half = pi * T::lit(0.5);
    let mut a = a % pi;
    if a <= -half {
        a = a + pi;
    } else if a > half {
        a = a - pi;
    }
    a
}

/// Minimum-area enclosing rectangle by rotating calipers over the hull.
/// The result has `extent[0] ≥ extent[1]` and `yaw ∈ (−π/2, π/2]`.
pub fn min_area_rect<T: Real>(points: &[[T; 2]]) -> Result<Rect<T>> {
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidInput("non-finite point in footprint".into()));
    }
    let hull = convex_hull(points);
    let h = hull.len();
    if h < 3 {
        return Err(Error::Degenerate("footprint has zero area".into()));
    }
    let dot = |p: [T; 2], d: [T; 2]| p[0] * d[0] + p[1] * d[1];
    let at = |k: usize| hull[k % h];

    let mut best: Option<(T, [T; 2], T, T, T, T)> = None;
    let (mut right, mut top, mut left) = (0usize, 0usize, 0usize);
    for i in 0..h {
        let a = at(i);
        let b = at(i + 1);
        let len = ((b[0] - a[0]) * (b[0] - a[0]) + (b[1] - a[1]) * (b[1] - a[1])).sqrt();
        let e = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let n = [-e[1], e[0]];
        if i == 0 {
            right = 1;
            while dot(at(right + 1), e) > dot(at(right), e) {
                right += 1;
            }
            top = right;
            while dot(at(top + 1), n) > dot(at(top), n) {
                top += 1;
            }
            left = top;
            while dot(at(left + 1), e) < dot(at(left), e) {
                left += 1;
            }
        } else {
            right = right.max(i + 1);
            let limit = i + 2 * h;
            while right < limit && dot(at(right + 1), e) > dot(at(right), e) {
                right += 1;
            }
            top = top.max(right);
            while top < limit && dot(at(top + 1), n) > dot(at(top), n) {
                top += 1;
            }
            left = left.max(top);
            while left < limit && dot(at(left + 1), e) < dot(at(left), e) {
                left += 1;
            }
        }
        let (e_lo, e_hi) = (dot(at(left), e), dot(at(right), e));
        let (n_lo, n_hi) = (dot(a, n), dot(at(top), n));
        let area = (e_hi - e_lo) * (n_hi - n_lo);
        if best.map_or(true, |b| area < b.0) {
            best = Some((area, e, e_lo, e_hi, n_lo, n_hi));
        }
    }
    let (_, e, e_lo, e_hi, n_lo, n_hi) = best.expect("hull has edges");
    let n = [-e[1], e[0]];
    let half = T::lit(0.5);
    let (ce, cn) = ((e_lo + e_hi) * half, (n_lo + n_hi) * half);
    let center = [e[0] * ce + n[0] * cn, e[1] * ce + n[1] * cn];
    let (le, ln) = (e_hi - e_lo, n_hi - n_lo);
    let ang_e = e[1].atan2(e[0]);
    let ang_n = n[1].atan2(n[0]);
    let tie = (le - ln).abs() <= T::tolerance() * T::lit(100.0) * le.max(ln);
    let (extent, yaw) = if tie {
        // Square: pick the axis closest to +x.
        let (ye, yn) = (wrap_half_pi(ang_e), wrap_half_pi(ang_n));
        let quarter = T::lit(std::f64::consts::FRAC_PI_4);
        let yaw = if ye > -quarter && ye <= quarter { ye } else { yn };
        ([le.max(ln), le.min(ln)], yaw)
    } else if le >= ln {
        ([le, ln], wrap_half_pi(ang_e))
    } else {
        ([ln, le], wrap_half_pi(ang_n))
    };
    Ok(Rect { center, extent, yaw })
}

/// Box with exact vertical extent and the minimum-area footprint.
pub fn fit_box3d<T: Real>(points: &[Vec3<T>], class_id: u32) -> Result<Box3D<T>> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite object point".into()));
    }
    let flat: Vec<[T; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
    let rect = min_area_rect(&flat)?;
    let zmin = points.iter().map(|p| p.z).fold(T::infinity(), T::min);
    let zmax = points.iter().map(|p| p.z).fold(T::neg_infinity(), T::max);
    let height = zmax - zmin;
    if !(height > T::zero()) {
        return Err(Error::Degenerate("object has zero height".into()));
    }
    Ok(Box3D {
        center: Vec3::new(rect.center[0], rect.center[1], (zmin + zmax) * T::lit(0.5)),
        dims: [rect.extent[0], rect.extent[1], height],
        yaw: rect.yaw,
        class_id,
    })
}
