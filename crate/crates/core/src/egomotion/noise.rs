//! Per-action Gaussian-mixture actuation noise.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MOVE_FORWARD: &str = "move_forward";
pub const TURN_LEFT: &str = "turn_left";
pub const TURN_RIGHT: &str = "turn_right";

/// One mixture component over `(Δx m, Δy m, Δθ degrees)`; `std` is the
/// per-axis standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionNoiseModel {
    pub actions: BTreeMap<String, Vec<NoiseComponent>>,
}

/// Body-frame perturbation: `dx` forward, `dy` to the left, `dtheta_deg`
/// counter-clockwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActuationNoise {
    pub dx: f64,
    pub dy: f64,
    pub dtheta_deg: f64,
}

fn single(mean: [f64; 3], std: [f64; 3]) -> Vec<NoiseComponent> {
    vec![NoiseComponent { weight: 1.0, mean, std }]
}

impl Default for ActionNoiseModel {
    /// Synthetic placeholder values, not a fit to any robot.
    fn default() -> Self {
        Self {
            actions: BTreeMap::from([
                (MOVE_FORWARD.to_string(), single([0.025, 0.001, 0.3], [0.005, 0.005, 0.2])),
                (TURN_LEFT.to_string(), single([0.001, 0.001, 0.5], [0.002, 0.002, 0.3])),
                (TURN_RIGHT.to_string(), single([0.001, 0.001, -0.5], [0.002, 0.002, 0.3])),
            ]),
        }
    }
}

impl ActionNoiseModel {
    /// Model without any perturbation for the three standard actions.
    pub fn noiseless() -> Self {
        let z = || single([0.0; 3], [0.0; 3]);
        Self {
            actions: BTreeMap::from([
                (MOVE_FORWARD.to_string(), z()),
                (TURN_LEFT.to_string(), z()),
                (TURN_RIGHT.to_string(), z()),
            ]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (action, comps) in &self.actions {
            if comps.is_empty() {
                return Err(Error::InvalidInput(format!("noise model for {action} has no components")));
            }
            let mut total = 0.0;
            for (k, c) in comps.iter().enumerate() {
                if !(c.weight >= 0.0 && c.weight.is_finite()) {
                    return Err(Error::InvalidInput(format!("{action}[{k}].weight must be non-negative")));
                }
                if c.mean.iter().any(|v| !v.is_finite()) || c.std.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidInput(format!("{action}[{k}] has an invalid mean or std")));
                }
                total += c.weight;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("{action} weights sum to {total}, not 1")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| Error::manifest(path, format!("line {}", e.line()), e.to_string()))?;
        model.validate().map_err(|e| Error::manifest(path, "actions", e.to_string()))?;
        Ok(model)
    }
}

/// Draws a component by weight, then a diagonal Gaussian sample from it.
pub fn sample_actuation_noise<R: Rng + ?Sized>(model: &ActionNoiseModel, action: &str, rng: &mut R) -> Result<ActuationNoise> {
    let comps = model.actions.get(action).ok_or_else(|| Error::UnknownAction(action.to_string()))?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = &comps[comps.len() - 1];
    for c in comps {
        acc += c.weight;
        if u < acc {
            chosen = c;
            break;
        }
    }
    let mut draw = |k: usize| -> Result<f64> {
        let n = Normal::new(chosen.mean[k], chosen.std[k]).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(n.sample(rng))
    };
    Ok(ActuationNoise { dx: draw(0)?, dy: draw(1)?, dtheta_deg: draw(2)? })
}
