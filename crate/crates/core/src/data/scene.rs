use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, Ray, Vec3};

/// Analytic volumetric primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    /// Axis-aligned Gaussian: `peak * exp(-|(x - center) / scale|^2 / 2)`.
    Blob {
        center: [f64; 3],
        scale: [f64; 3],
        peak: f64,
        rgb: [f64; 3],
    },
    /// Constant density inside an axis-aligned box.
    Box {
        min: [f64; 3],
        max: [f64; 3],
        sigma: f64,
        rgb: [f64; 3],
    },
    /// Horizontal slab `top - thickness <= z <= top` over the whole plane, with a soft
    /// sinusoidal texture of relative amplitude `texture` and spatial period `period`.
    Ground {
        top: f64,
        thickness: f64,
        sigma: f64,
        rgb: [f64; 3],
        #[serde(default)]
        texture: f64,
        #[serde(default = "default_period")]
        period: f64,
    },
}

fn default_period() -> f64 {
    0.5
}

impl Primitive {
    pub fn sigma(&self, p: Vec3) -> f64 {
        match self {
            Primitive::Blob { center, scale, peak, .. } => {
                let mut q = 0.0;
                for a in 0..3 {
                    let d = (p[a] - center[a]) / scale[a];
                    q += d * d;
                }
                peak * (-0.5 * q).exp()
            }
            Primitive::Box { min, max, sigma, .. } => {
                if (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]) {
                    *sigma
                } else {
                    0.0
                }
            }
            Primitive::Ground { top, thickness, sigma, .. } => {
                if p[2] <= *top && p[2] >= top - thickness {
                    *sigma
                } else {
                    0.0
                }
            }
        }
    }

    pub fn color(&self, p: Vec3) -> [f64; 3] {
        match self {
            Primitive::Blob { rgb, .. } | Primitive::Box { rgb, .. } => *rgb,
            Primitive::Ground { rgb, texture, period, .. } => {
                let k = std::f64::consts::TAU / period;
                let m = 1.0 + texture * (k * p[0]).sin() * (k * p[1]).sin();
                rgb.map(|c| (c * m).clamp(0.0, 1.0))
            }
        }
    }
}

/// Scene description: primitives inside an outer box above a known ground altitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub outer: Aabb,
    pub ground_altitude: f64,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

impl SyntheticScene {
    pub fn empty(outer: Aabb, ground_altitude: f64) -> Self {
        SyntheticScene {
            outer,
            ground_altitude,
            primitives: Vec::new(),
        }
    }

    pub fn sigma(&self, p: Vec3) -> f64 {
        self.primitives.iter().map(|q| q.sigma(p)).sum()
    }

    /// Density-weighted mean of the primitive colors (black where the density vanishes).
    pub fn color(&self, p: Vec3) -> [f64; 3] {
        let (s, c) = self.sigma_color(p);
        if s > 0.0 {
            c
        } else {
            [0.0; 3]
        }
    }

    pub fn sigma_color(&self, p: Vec3) -> (f64, [f64; 3]) {
        let mut total = 0.0;
        let mut acc = [0.0; 3];
        for q in &self.primitives {
            let s = q.sigma(p);
            if s > 0.0 {
                let c = q.color(p);
                for k in 0..3 {
                    acc[k] += s * c[k];
                }
                total += s;
            }
        }
        if total > 0.0 {
            (total, acc.map(|v| v / total))
        } else {
            (0.0, [0.0; 3])
        }
    }
}

/// Entry and exit parameters of the ray in `b`, from `t = 0`. Written independently of the
/// renderer's intersection routine.
fn clip_to_box(ray: &Ray, b: &Aabb) -> Option<(f64, f64)> {
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for a in 0..3 {
        let (o, d) = (ray.origin[a], ray.dir[a]);
        if d.abs() < 1e-300 {
            if o < b.min[a] || o > b.max[a] {
                return None;
            }
        } else {
            let inv = 1.0 / d;
            let mut ta = (b.min[a] - o) * inv;
            let mut tb = (b.max[a] - o) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            lo = lo.max(ta);
            hi = hi.min(tb);
        }
    }
    (hi > lo).then_some((lo, hi))
}

/// Reference rendering: `n` uniform midpoint samples over the ray's span in the scene box,
/// composited front to back over black. Returns (color, transmittance).
pub fn oracle_render(scene: &SyntheticScene, ray: &Ray, n: usize) -> ([f64; 3], f64) {
    oracle_render_with_depth(scene, ray, n).0
}

/// [`oracle_render`] plus the expected termination distance.
pub fn oracle_render_with_depth(scene: &SyntheticScene, ray: &Ray, n: usize) -> (([f64; 3], f64), f64) {
    let Some((t0, t1)) = clip_to_box(ray, &scene.outer) else {
        return (([0.0; 3], 1.0), 0.0);
    };
    let n = n.max(1);
    let h = (t1 - t0) / n as f64;
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    let mut depth = 0.0;
    for i in 0..n {
        let t = t0 + (i as f64 + 0.5) * h;
        let (s, c) = scene.sigma_color(ray.at(t));
        if s <= 0.0 {
            continue;
        }
        let keep = (-s * h).exp();
        let w = trans * (1.0 - keep);
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
        depth += w * t;
        trans *= keep;
    }
    ((rgb, trans), depth)
}
