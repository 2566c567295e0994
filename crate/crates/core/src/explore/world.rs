//! Primitive scenes: boxes and spheres standing on the ground plane `z = 0`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::write_atomic;
use crate::labelgen::{wrap_half_pi, Box3D};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Sphere,
}

/// A box (full extents `dims`, rotated by `yaw` about `+z`) or a sphere
/// (diameter `dims[0]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    pub color: [u8; 3],
    pub class_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: u32,
    pub name: String,
    /// Structure such as walls is never detected.
    #[serde(default = "yes")]
    pub detectable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

fn default_ground() -> [u8; 3] {
    [128, 128, 128]
}

fn default_sky() -> [u8; 3] {
    [150, 190, 230]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthWorld {
    #[serde(default)]
    pub world_id: String,
    pub bounds: Bounds,
    pub primitives: Vec<Primitive>,
    pub categories: Vec<Category>,
    #[serde(default = "default_ground")]
    pub ground_color: [u8; 3],
    #[serde(default = "default_sky")]
    pub sky_color: [u8; 3],
    #[serde(default)]
    pub rng_seed: u64,
}

/// Ray hit: distance parameter and primitive index (`None` for the ground).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub primitive: Option<usize>,
}

impl Primitive {
    pub fn radius(&self) -> f64 {
        0.5 * self.dims[0]
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from_array(self.center)
    }

    /// Radius of a sphere enclosing the primitive.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere => self.radius(),
            Shape::Box => 0.5 * (self.dims[0].powi(2) + self.dims[1].powi(2) + self.dims[2].powi(2)).sqrt(),
        }
    }

    /// Radius of a circle enclosing the footprint.
    pub fn footprint_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere => self.radius(),
            Shape::Box => 0.5 * self.dims[0].hypot(self.dims[1]),
        }
    }

    /// Smallest `t > 0` with `origin + t·dir` on the surface.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        match self.shape {
            Shape::Sphere => {
                let oc = origin - self.center();
                let a = dir.dot(dir);
                let b = 2.0 * dir.dot(oc);
                let c = oc.dot(oc) - self.radius().powi(2);
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                (t > 0.0).then_some(t)
            }
            Shape::Box => {
                let (s, c) = self.yaw.sin_cos();
                let rel = origin - self.center();
                let o = [rel.x * c + rel.y * s, -rel.x * s + rel.y * c, rel.z];
                let d = [dir.x * c + dir.y * s, -dir.x * s + dir.y * c, dir.z];
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    let h = 0.5 * self.dims[k];
                    if d[k].abs() < 1e-300 {
                        if o[k].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-h - o[k]) / d[k];
                    let t2 = (h - o[k]) / d[k];
                    lo = lo.max(t1.min(t2));
                    hi = hi.min(t1.max(t2));
                }
                (hi >= lo && lo > 0.0).then_some(lo)
            }
        }
    }

    /// Whether a disk of `radius` at `(x, y)` on the ground touches the footprint.
    pub fn blocks_disk(&self, x: f64, y: f64, radius: f64) -> bool {
        match self.shape {
            Shape::Sphere => (x - self.center[0]).hypot(y - self.center[1]) < self.radius() + radius,
            Shape::Box => {
                let (s, c) = self.yaw.sin_cos();
                let (dx, dy) = (x - self.center[0], y - self.center[1]);
                let a = dx * c + dy * s;
                let b = -dx * s + dy * c;
                let qa = (a.abs() - 0.5 * self.dims[0]).max(0.0);
                let qb = (b.abs() - 0.5 * self.dims[1]).max(0.0);
                qa.hypot(qb) < radius
            }
        }
    }

    /// Ground-truth oriented box in canonical form.
    pub fn box3d(&self) -> Box3D<f64> {
        let (mut w, mut d, mut yaw) = (self.dims[0], self.dims[1], self.yaw);
        if self.shape == Shape::Sphere {
            yaw = 0.0;
        } else if d > w {
            std::mem::swap(&mut w, &mut d);
            yaw += std::f64::consts::FRAC_PI_2;
        }
        Box3D { center: self.center(), dims: [w, d, self.dims[2]], yaw: wrap_half_pi(yaw), class_id: self.class_id }
    }
}

impl SynthWorld {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
            return Err(Error::InvalidInput("world bounds are empty".into()));
        }
        for (k, p) in self.primitives.iter().enumerate() {
            if p.dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) || p.center.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("primitives[{k}] has invalid geometry")));
            }
            if p.shape == Shape::Sphere && (p.dims[0] != p.dims[1] || p.dims[0] != p.dims[2]) {
                return Err(Error::InvalidInput(format!("primitives[{k}]: sphere dims must be equal")));
            }
            if !b.contains(p.center[0], p.center[1]) {
                return Err(Error::InvalidInput(format!("primitives[{k}] lies outside the bounds")));
            }
            if !self.categories.iter().any(|c| c.id == p.class_id) {
                return Err(Error::InvalidInput(format!("primitives[{k}] uses undeclared class {}", p.class_id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let w: Self = serde_json::from_str(&text)
            .map_err(|e| Error::manifest(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        w.validate().map_err(|e| Error::manifest(path, "primitives", e.to_string()))?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("world serializes");
        write_atomic(path, text.as_bytes())
    }

    pub fn category(&self, id: u32) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn is_detectable(&self, primitive: usize) -> bool {
        self.primitives
            .get(primitive)
            .and_then(|p| self.category(p.class_id))
            .is_some_and(|c| c.detectable)
    }

    pub fn detectable_classes(&self) -> Vec<u32> {
        self.categories.iter().filter(|c| c.detectable).map(|c| c.id).collect()
    }

    /// Nearest hit of a ray against the ground and every primitive.
    pub fn cast(&self, origin: Vec3, dir: Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if dir.z < 0.0 && origin.z > 0.0 {
            best = Some(Hit { t: -origin.z / dir.z, primitive: None });
        }
        for (k, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.intersect(origin, dir) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, primitive: Some(k) });
                }
            }
        }
        best
    }

    /// Whether an agent disk of `radius` fits at `(x, y)`.
    pub fn is_free(&self, x: f64, y: f64, radius: f64) -> bool {
        let b = &self.bounds;
        x - radius >= b.min[0]
            && x + radius <= b.max[0]
            && y - radius >= b.min[1]
            && y + radius <= b.max[1]
            && !self.primitives.iter().any(|p| p.blocks_disk(x, y, radius))
    }

    /// A walled room with randomly placed household-scale objects.
    pub fn generate(seed: u64, config: &WorldGenConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 * config.room_size;
        let bounds = Bounds { min: [-half, -half], max: [half, half] };
        let mut categories = vec![Category { id: 0, name: "wall".into(), detectable: false }];
        categories.extend(default_catalog().iter().map(|c| Category { id: c.id, name: c.name.into(), detectable: true }));
        let mut primitives = Vec::new();
        let t = 0.1;
        let h = config.wall_height;
        for (cx, cy, sx, sy) in [
            (0.0, half - t / 2.0, config.room_size, t),
            (0.0, -half + t / 2.0, config.room_size, t),
            (half - t / 2.0, 0.0, t, config.room_size),
            (-half + t / 2.0, 0.0, t, config.room_size),
        ] {
            primitives.push(Primitive { shape: Shape::Box, center: [cx, cy, h / 2.0], dims: [sx, sy, h], yaw: 0.0, color: [205, 195, 170], class_id: 0 });
        }
        let catalog = default_catalog();
        let margin = 0.3 + t;
        let mut placed = 0;
        let mut attempts = 0;
        while placed < config.objects {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidInput(format!("could only place {placed} of {} objects", config.objects)));
            }
            let spec = &catalog[rng.random_range(0..catalog.len())];
            let size = |r: &mut ChaCha8Rng, k: usize| r.random_range(spec.min[k]..=spec.max[k]);
            let dims = match spec.shape {
                Shape::Sphere => {
                    let d = size(&mut rng, 0);
                    [d, d, d]
                }
                Shape::Box => [size(&mut rng, 0), size(&mut rng, 1), size(&mut rng, 2)],
            };
            let yaw = if spec.shape == Shape::Box { rng.random_range(-std::f64::consts::PI..std::f64::consts::PI) } else { 0.0 };
            let jitter = |r: &mut ChaCha8Rng, c: u8| (c as i32 + r.random_range(-20..=20)).clamp(0, 255) as u8;
            let color = [jitter(&mut rng, spec.color[0]), jitter(&mut rng, spec.color[1]), jitter(&mut rng, spec.color[2])];
            let x = rng.random_range(-half + margin..half - margin);
            let y = rng.random_range(-half + margin..half - margin);
            let cand = Primitive { shape: spec.shape, center: [x, y, dims[2] / 2.0], dims, yaw, color, class_id: spec.id };
            let fr = cand.footprint_radius();
            if x.abs() + fr > half - margin || y.abs() + fr > half - margin {
                continue;
            }
            let clear = primitives[4..].iter().all(|p: &Primitive| {
                (p.center[0] - x).hypot(p.center[1] - y) > p.footprint_radius() + fr + config.clearance
            });
            if clear {
                primitives.push(cand);
                placed += 1;
            }
        }
        let world = SynthWorld {
            world_id: format!("world_{seed}"),
            bounds,
            primitives,
            categories,
            ground_color: default_ground(),
            sky_color: default_sky(),
            rng_seed: seed,
        };
        world.validate()?;
        Ok(world)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldGenConfig {
    pub room_size: f64,
    pub wall_height: f64,
    pub objects: usize,
    /// Minimum free gap between object footprints (m).
    pub clearance: f64,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        Self { room_size: 8.0, wall_height: 2.5, objects: 14, clearance: 0.35 }
    }
}

struct CatalogEntry {
    id: u32,
    name: &'static str,
    shape: Shape,
    min: [f64; 3],
    max: [f64; 3],
    color: [u8; 3],
}

fn default_catalog() -> [CatalogEntry; 5] {
    [
        CatalogEntry { id: 1, name: "crate", shape: Shape::Box, min: [0.3, 0.3, 0.25], max: [0.5, 0.5, 0.45], color: [170, 110, 50] },
        CatalogEntry { id: 2, name: "cabinet", shape: Shape::Box, min: [0.4, 0.3, 0.7], max: [0.6, 0.4, 1.0], color: [60, 90, 160] },
        CatalogEntry { id: 3, name: "ball", shape: Shape::Sphere, min: [0.25, 0.25, 0.25], max: [0.45, 0.45, 0.45], color: [200, 50, 50] },
        CatalogEntry { id: 4, name: "table", shape: Shape::Box, min: [0.7, 0.45, 0.4], max: [1.0, 0.6, 0.55], color: [60, 150, 70] },
        CatalogEntry { id: 5, name: "bin", shape: Shape::Box, min: [0.25, 0.25, 0.4], max: [0.35, 0.35, 0.6], color: [220, 200, 40] },
    ]
}
