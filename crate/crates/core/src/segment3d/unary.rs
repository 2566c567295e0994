//! Linear unary classifier: L2-regularised logistic regression over
//! standardised `(x, y, z, r, g, b)` features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point6;
use crate::ingest::{Label, LabeledCloud};

pub const FEATURES: usize = 6;
const STD_FLOOR: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnaryModel {
    pub weights: [f64; FEATURES],
    pub bias: f64,
    pub feature_mean: [f64; FEATURES],
    pub feature_std: [f64; FEATURES],
    /// Newton iterations used and final gradient norm.
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl UnaryModel {
    pub fn standardize(&self, p: &Point6<f64>) -> [f64; FEATURES] {
        let f = p.features();
        std::array::from_fn(|k| (f[k] - self.feature_mean[k]) / self.feature_std[k])
    }

    /// Signed score; positive means foreground.
    pub fn score(&self, p: &Point6<f64>) -> f64 {
        let x = self.standardize(p);
        self.bias + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `[ln P(background), ln P(foreground)]`.
    pub fn log_probs(&self, p: &Point6<f64>) -> [f64; 2] {
        let s = self.score(p);
        [-softplus(s), -softplus(-s)]
    }

    pub fn prob_foreground(&self, p: &Point6<f64>) -> f64 {
        self.log_probs(p)[1].exp()
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standardised, class-balanced training set: each class carries half of
/// the total sample weight.
pub(crate) struct TrainingSet {
    pub x: Vec<[f64; FEATURES]>,
    pub y: Vec<f64>,
    pub weight: Vec<f64>,
    pub mean: [f64; FEATURES],
    pub std: [f64; FEATURES],
}

pub(crate) fn training_set(points: &[Point6<f64>], is_fg: &[bool]) -> Result<TrainingSet> {
    let n_fg = is_fg.iter().filter(|&&b| b).count();
    let n_bg = is_fg.len() - n_fg;
    if n_fg == 0 || n_bg == 0 {
        return Err(Error::SingleClass);
    }
    let n = points.len() as f64;
    let mut mean = [0.0; FEATURES];
    for p in points {
        for (m, f) in mean.iter_mut().zip(p.features()) {
            *m += f / n;
        }
    }
    let mut std = [0.0; FEATURES];
    for p in points {
        for ((s, f), m) in std.iter_mut().zip(p.features()).zip(&mean) {
            *s += (f - m) * (f - m) / n;
        }
    }
    for (k, s) in std.iter_mut().enumerate() {
        *s = s.sqrt();
        if *s < STD_FLOOR {
            log::warn!("unary feature {k} has zero variance; flooring its scale at {STD_FLOOR}");
            *s = STD_FLOOR;
        }
    }
    let x = points
        .iter()
        .map(|p| {
            let f = p.features();
            std::array::from_fn(|k| (f[k] - mean[k]) / std[k])
        })
        .collect();
    let y = is_fg.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let (w_fg, w_bg) = (0.5 / n_fg as f64, 0.5 / n_bg as f64);
    let weight = is_fg.iter().map(|&b| if b { w_fg } else { w_bg }).collect();
    Ok(TrainingSet { x, y, weight, mean, std })
}

/// Objective `Σ wᵢ·softplus(−yᵢ·(θ·xᵢ + b)) + reg/2·‖θ‖²` and its gradient
/// over `[θ, b]`. The bias is not regularised.
pub(crate) fn objective(set: &TrainingSet, params: &[f64; FEATURES + 1], reg: f64) -> (f64, [f64; FEATURES + 1]) {
    let mut loss = 0.0;
    let mut grad = [0.0; FEATURES + 1];
    for ((x, &y), &w) in set.x.iter().zip(&set.y).zip(&set.weight) {
        let s = params[FEATURES] + (0..FEATURES).map(|k| params[k] * x[k]).sum::<f64>();
        loss += w * softplus(-y * s);
        let g = -w * y * sigmoid(-y * s);
        for k in 0..FEATURES {
            grad[k] += g * x[k];
        }
        grad[FEATURES] += g;
    }
    for k in 0..FEATURES {
        loss += 0.5 * reg * params[k] * params[k];
        grad[k] += reg * params[k];
    }
    (loss, grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `a · x = b` for a symmetric positive-definite `a` (Cholesky).
fn solve_spd<const N: usize>(a: &[[f64; N]; N], b: &[f64; N]) -> Option<[f64; N]> {
    let mut l = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = [0.0; N];
    for i in 0..N {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; N];
    for i in (0..N).rev() {
        x[i] = (y[i] - ((i + 1)..N).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

/// Trains on explicit points and foreground flags.
pub fn train_unary_points(points: &[Point6<f64>], is_fg: &[bool], reg: f64) -> Result<UnaryModel> {
    if !(reg > 0.0) {
        return Err(Error::InvalidInput(format!("regularisation must be positive, got {reg}")));
    }
    if points.len() != is_fg.len() {
        return Err(Error::Dimension("points and labels differ in length".into()));
    }
    let set = training_set(points, is_fg)?;
    const P: usize = FEATURES + 1;
    let mut params = [0.0; P];
    let (mut loss, mut grad) = objective(&set, &params, reg);
    let mut iterations = 0;
    while norm(&grad) >= GRAD_TOL && iterations < MAX_ITERS {
        iterations += 1;
        let mut hess = [[0.0; P]; P];
        for (x, &w) in set.x.iter().zip(&set.weight) {
            let s = params[FEATURES] + (0..FEATURES).map(|k| params[k] * x[k]).sum::<f64>();
            let p = sigmoid(s);
            let c = w * p * (1.0 - p);
            let xa: [f64; P] = std::array::from_fn(|k| if k < FEATURES { x[k] } else { 1.0 });
            for i in 0..P {
                for j in 0..=i {
                    hess[i][j] += c * xa[i] * xa[j];
                }
            }
        }
        for i in 0..P {
            for j in 0..i {
                hess[j][i] = hess[i][j];
            }
            if i < FEATURES {
                hess[i][i] += reg;
            }
            hess[i][i] += 1e-12;
        }
        let neg_grad: [f64; P] = std::array::from_fn(|k| -grad[k]);
        let step = solve_spd(&hess, &neg_grad).unwrap_or(neg_grad);
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        let mut t = 1.0;
        loop {
            let trial: [f64; P] = std::array::from_fn(|k| params[k] + t * step[k]);
            let (l, g) = objective(&set, &trial, reg);
            if l <= loss + 1e-4 * t * slope || t < 1e-12 {
                params = trial;
                loss = l;
                grad = g;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(UnaryModel {
        weights: std::array::from_fn(|k| params[k]),
        bias: params[FEATURES],
        feature_mean: set.mean,
        feature_std: set.std,
        iterations,
        gradient_norm: norm(&grad),
    })
}

/// Trains on the cloud's foreground and background voxels.
pub fn train_unary(cloud: &LabeledCloud, reg: f64) -> Result<UnaryModel> {
    let mut pts = Vec::new();
    let mut fg = Vec::new();
    for (p, l) in cloud.points.iter().zip(&cloud.labels) {
        match l {
            Label::Foreground => fg.push(true),
            Label::Background => fg.push(false),
            Label::Unknown => continue,
        }
        pts.push(p.point);
    }
    train_unary_points(&pts, &fg, reg)
}

/// Per-point `[ln P(bg), ln P(fg)]` for every voxel of the cloud.
pub fn unary_log_probs(model: &UnaryModel, cloud: &LabeledCloud) -> Vec<[f64; 2]> {
    cloud.points.iter().map(|p| model.log_probs(&p.point)).collect()
}
