use serde::{Deserialize, Serialize};

use super::scene::{oracle_render, Primitive, SyntheticScene};
use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::image::RgbImage;
use crate::partition::CameraPose;

/// Oblique ring plus nadir grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub ring_cameras: usize,
    pub ring_radius: f64,
    pub ring_height: f64,
    /// Downward tilt of the ring cameras below the horizon, in degrees.
    pub pitch_deg: f64,
    /// Cameras per side of the nadir grid.
    pub nadir_grid: usize,
    /// Half-width of the square the nadir grid spans.
    pub nadir_extent: f64,
    pub nadir_height: f64,
    pub half_fov_deg: f64,
    pub width: u32,
    pub height: u32,
    /// Every `val_every`-th camera is held out for validation (0 disables).
    pub val_every: usize,
}

impl RigSpec {
    pub fn poses(&self) -> Result<Vec<CameraPose>> {
        let mut poses = Vec::new();
        let mut id = 0u32;
        for i in 0..self.ring_cameras {
            let phi = std::f64::consts::TAU * i as f64 / self.ring_cameras as f64;
            let (s, c) = phi.sin_cos();
            let eye = Vec3::new(self.ring_radius * c, self.ring_radius * s, self.ring_height);
            // Look inward and down by the pitch angle.
            let horiz = Vec3::new(-c, -s, 0.0);
            let down = self.pitch_deg.to_radians();
            let dir = horiz * down.cos() + Vec3::new(0.0, 0.0, -down.sin());
            poses.push(CameraPose::look_at(id, eye, eye + dir, Vec3::new(0.0, 0.0, 1.0), self.width, self.height, self.half_fov_deg)?);
            id += 1;
        }
        let n = self.nadir_grid;
        for j in 0..n {
            for i in 0..n {
                let at = |k: usize| {
                    if n == 1 {
                        0.0
                    } else {
                        -self.nadir_extent + 2.0 * self.nadir_extent * k as f64 / (n - 1) as f64
                    }
                };
                let eye = Vec3::new(at(i), at(j), self.nadir_height);
                let target = Vec3::new(eye[0], eye[1], eye[2] - 1.0);
                poses.push(CameraPose::look_at(id, eye, target, Vec3::new(0.0, 1.0, 0.0), self.width, self.height, self.half_fov_deg)?);
                id += 1;
            }
        }
        Ok(poses)
    }

    pub fn split_of(&self, image_id: u32) -> Split {
        if self.val_every > 0 && image_id as usize % self.val_every == 0 {
            Split::Val
        } else {
            Split::Train
        }
    }
}

/// Renders every camera of the rig with the reference quadrature.
pub fn generate_dataset(scene: &SyntheticScene, rig: &RigSpec, samples: usize) -> Result<Dataset> {
    let poses = rig.poses()?;
    for p in &poses {
        if !scene.outer.contains(p.center()) {
            return Err(Error::config(format!("camera {} at {:?} lies outside the scene box", p.image_id, p.center().0)));
        }
    }
    let mut images = Vec::with_capacity(poses.len());
    let mut transmittance = Vec::with_capacity(poses.len());
    for pose in &poses {
        let mut img = RgbImage::new(pose.width, pose.height);
        let mut tmap = vec![0.0; pose.pixel_count() as usize];
        for px in 0..pose.pixel_count() {
            let (rgb, t) = oracle_render(scene, &pose.pixel_ray(px), samples);
            img.set_pixel(px as usize, rgb);
            tmap[px as usize] = t;
        }
        images.push(img.quantized());
        transmittance.push(tmap.iter().map(|&t| quantize16(t)).collect());
    }
    let split = poses.iter().map(|p| rig.split_of(p.image_id)).collect();
    Ok(Dataset {
        images,
        transmittance,
        poses,
        split,
    })
}

/// Rounds to the 16-bit grid used on disk.
pub fn quantize16(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

pub const PRESETS: [&str; 3] = ["blob4", "textured", "empty"];

/// Named scene and rig. `blob4`: four colored Gaussian blobs over a gently textured ground
/// slab, one blob straddling the central split planes; 16 oblique + 16 nadir cameras at 64x64.
pub fn preset(name: &str) -> Result<(SyntheticScene, RigSpec)> {
    let outer = Aabb::new(Vec3::new(-3.0, -3.0, -0.3), Vec3::new(3.0, 3.0, 1.8));
    let rig = RigSpec {
        ring_cameras: 16,
        ring_radius: 1.0,
        ring_height: 1.3,
        pitch_deg: 65.0,
        nadir_grid: 4,
        nadir_extent: 0.6,
        nadir_height: 1.3,
        half_fov_deg: 30.0,
        width: 64,
        height: 64,
        val_every: 8,
    };
    let ground = |texture: f64, period: f64| Primitive::Ground {
        top: 0.0,
        thickness: 0.15,
        sigma: 200.0,
        rgb: [0.55, 0.5, 0.42],
        texture,
        period,
    };
    let blob = |c: [f64; 3], s: f64, rgb: [f64; 3]| Primitive::Blob {
        center: c,
        scale: [s; 3],
        peak: 60.0,
        rgb,
    };
    let scene = match name {
        "blob4" => SyntheticScene {
            outer,
            ground_altitude: 0.0,
            primitives: vec![
                ground(0.15, 0.8),
                blob([-0.45, -0.4, 0.25], 0.12, [0.85, 0.2, 0.15]),
                blob([0.45, -0.45, 0.3], 0.14, [0.2, 0.75, 0.25]),
                blob([-0.4, 0.45, 0.2], 0.11, [0.2, 0.3, 0.85]),
                blob([0.0, 0.42, 0.28], 0.13, [0.9, 0.8, 0.2]),
            ],
        },
        "textured" => {
            let mut prims = vec![ground(0.45, 0.25)];
            let colors = [[0.85, 0.2, 0.15], [0.2, 0.75, 0.25], [0.2, 0.3, 0.85], [0.9, 0.8, 0.2], [0.8, 0.3, 0.8], [0.2, 0.8, 0.8]];
            for (i, rgb) in colors.into_iter().enumerate() {
                let a = std::f64::consts::TAU * i as f64 / 6.0;
                prims.push(blob([0.5 * a.cos(), 0.5 * a.sin(), 0.15 + 0.05 * i as f64], 0.08, rgb));
            }
            prims.push(Primitive::Box {
                min: [-0.15, -0.15, 0.0],
                max: [0.15, 0.15, 0.2],
                sigma: 40.0,
                rgb: [0.95, 0.95, 0.9],
            });
            SyntheticScene {
                outer,
                ground_altitude: 0.0,
                primitives: prims,
            }
        }
        "empty" => SyntheticScene::empty(outer, 0.0),
        other => return Err(Error::config(format!("unknown preset {other:?} (known: {PRESETS:?})"))),
    };
    Ok((scene, rig))
}
