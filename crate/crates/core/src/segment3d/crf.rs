//! Fully connected binary CRF with Potts compatibility, solved by parallel
//! mean-field updates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point6;
use crate::scalar::Real;

const CONVERGENCE: f64 = 1e-5;

/// Kernel terms with a larger exponent are below `exp(-36) ≈ 2e-16` of their
/// weight and are skipped.
const NEGLIGIBLE_EXPONENT: f64 = 36.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfParams<T> {
    pub w_app: T,
    pub w_smooth: T,
    /// Spatial bandwidth of the appearance kernel (m).
    pub theta_alpha: T,
    /// Color bandwidth of the appearance kernel.
    pub theta_beta: T,
    /// Spatial bandwidth of the smoothness kernel (m).
    pub theta_gamma: T,
    pub iterations: usize,
}

impl<T: Real> Default for CrfParams<T> {
    fn default() -> Self {
        Self {
            w_app: T::lit(10.0),
            w_smooth: T::lit(3.0),
            theta_alpha: T::lit(0.2),
            theta_beta: T::lit(0.1),
            theta_gamma: T::lit(0.05),
            iterations: 5,
        }
    }
}

impl<T: Real> CrfParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_app", self.w_app), ("w_smooth", self.w_smooth)] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::InvalidInput(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [("theta_alpha", self.theta_alpha), ("theta_beta", self.theta_beta), ("theta_gamma", self.theta_gamma)] {
            if !v.is_finite() || v <= T::zero() {
                return Err(Error::InvalidInput(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Pairwise kernel between two points.
    #[inline]
    pub fn kernel(&self, a: &Point6<T>, b: &Point6<T>) -> T {
        let half = T::lit(0.5);
        let dx = (a.position() - b.position()).norm_squared();
        let dc = (a.color() - b.color()).norm_squared();
        let app = self.w_app
            * (-(dx * half / (self.theta_alpha * self.theta_alpha)) - dc * half / (self.theta_beta * self.theta_beta)).exp();
        let smooth = self.w_smooth * (-(dx * half / (self.theta_gamma * self.theta_gamma))).exp();
        app + smooth
    }
}

#[inline]
fn scaled_kernel<T: Real>(a: &[T; 6], b: &[T; 6], sa: &[T; 3], sb: &[T; 3], w_app: T, w_smooth: T, cutoff: T) -> T {
    let mut e_app = T::zero();
    for k in 0..6 {
        let d = a[k] - b[k];
        e_app = e_app + d * d;
    }
    let mut e_smooth = T::zero();
    for k in 0..3 {
        let d = sa[k] - sb[k];
        e_smooth = e_smooth + d * d;
    }
    let mut k = T::zero();
    if e_app < cutoff {
        k = k + w_app * (-e_app).exp();
    }
    if e_smooth < cutoff {
        k = k + w_smooth * (-e_smooth).exp();
    }
    k
}

/// Hard assignment that overrides the unary of a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clamp {
    Free,
    Background,
    Foreground,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation3D<T> {
    /// `true` for object points.
    pub labels: Vec<bool>,
    /// Final foreground marginal of every point.
    pub marginals: Vec<T>,
    pub iterations_run: usize,
}

impl<T: Real> Segmentation3D<T> {
    pub fn object_count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }
}

fn softmax2<T: Real>(logits: [T; 2]) -> [T; 2] {
    let m = logits[0].max(logits[1]);
    let a = (logits[0] - m).exp();
    let b = (logits[1] - m).exp();
    let s = a + b;
    [a / s, b / s]
}

/// Mean-field inference. `unary[i]` is `[ln P(bg), ln P(fg)]`. Clamped points
/// keep a one-hot distribution but still send messages to every other point.
pub fn crf_refine<T: Real>(
    points: &[Point6<T>],
    unary: &[[T; 2]],
    clamp: &[Clamp],
    params: &CrfParams<T>,
) -> Result<Segmentation3D<T>> {
    params.validate()?;
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidInput("CRF over an empty cloud".into()));
    }
    if unary.len() != n || clamp.len() != n {
        return Err(Error::Dimension(format!(
            "{} points, {} unaries, {} clamps",
            n,
            unary.len(),
            clamp.len()
        )));
    }
    if let Some(i) = points.iter().position(|p| !p.features().iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput(format!("point {i} has non-finite coordinates")));
    }
    if let Some(i) = unary.iter().position(|u| u.iter().any(|v| v.is_nan() || *v == T::infinity())) {
        return Err(Error::InvalidInput(format!("unary {i} is not a log-probability")));
    }

    let one_hot = |c: Clamp| match c {
        Clamp::Background => Some([T::one(), T::zero()]),
        Clamp::Foreground => Some([T::zero(), T::one()]),
        Clamp::Free => None,
    };
    let mut logits: Vec<[T; 2]> = unary.to_vec();
    let mut q: Vec<[T; 2]> = unary
        .iter()
        .zip(clamp)
        .map(|(u, &c)| one_hot(c).unwrap_or_else(|| softmax2(*u)))
        .collect();

    let pairwise = params.w_app > T::zero() || params.w_smooth > T::zero();
    // Features pre-divided by their bandwidths so each exponent is a plain
    // squared distance.
    let ra = T::one() / (T::lit(2.0).sqrt() * params.theta_alpha);
    let rb = T::one() / (T::lit(2.0).sqrt() * params.theta_beta);
    let rg = T::one() / (T::lit(2.0).sqrt() * params.theta_gamma);
    let app: Vec<[T; 6]> = points.iter().map(|p| [p.x * ra, p.y * ra, p.z * ra, p.r * rb, p.g * rb, p.b * rb]).collect();
    let smooth: Vec<[T; 3]> = points.iter().map(|p| [p.x * rg, p.y * rg, p.z * rg]).collect();
    let cutoff = T::lit(NEGLIGIBLE_EXPONENT);
    let mut iterations_run = 0;
    if pairwise {
        let tol = T::lit(CONVERGENCE);
        for _ in 0..params.iterations {
            iterations_run += 1;
            let prev = &q;
            let step: Vec<([T; 2], [T; 2])> = (0..n)
                .into_par_iter()
                .map(|i| {
                    if let Some(h) = one_hot(clamp[i]) {
                        return (unary[i], h);
                    }
                    // Potts: a label is penalised by the mass of the other label.
                    let (mut to_bg, mut to_fg) = (T::zero(), T::zero());
                    let (ai, si) = (&app[i], &smooth[i]);
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let k = scaled_kernel(ai, &app[j], si, &smooth[j], params.w_app, params.w_smooth, cutoff);
                        to_bg = to_bg + k * prev[j][1];
                        to_fg = to_fg + k * prev[j][0];
                    }
                    let l = [unary[i][0] - to_bg, unary[i][1] - to_fg];
                    (l, softmax2(l))
                })
                .collect();
            let mut change = T::zero();
            for (i, (l, nq)) in step.into_iter().enumerate() {
                change = change.max((nq[0] - q[i][0]).abs()).max((nq[1] - q[i][1]).abs());
                logits[i] = l;
                q[i] = nq;
            }
            if change < tol {
                break;
            }
        }
    }

    let labels = logits
        .iter()
        .zip(clamp)
        .map(|(l, &c)| match c {
            Clamp::Foreground => true,
            Clamp::Background => false,
            Clamp::Free => l[1] > l[0],
        })
        .collect();
    Ok(Segmentation3D { labels, marginals: q.iter().map(|d| d[1]).collect(), iterations_run })
}
