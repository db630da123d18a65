//! Synthetic scenes with analytic ground truth, the reference renderer, camera rigs and the
//! on-disk dataset layout.

mod io;
mod rig;
mod scene;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::partition::{read_poses, write_poses, CameraPose};

pub use io::{decode_ppm, encode_ppm, read_pgm16, read_ppm, write_pgm16, write_ppm};
pub use rig::{generate_dataset, preset, quantize16, RigSpec, PRESETS};
pub use scene::{oracle_render, oracle_render_with_depth, Primitive, SyntheticScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::config(format!("unknown split {s:?}"))),
        }
    }
}

/// Images, per-pixel ground-truth transmittance, poses and split tags, indexed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<RgbImage>,
    pub transmittance: Vec<Vec<f64>>,
    pub poses: Vec<CameraPose>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn ids(&self, split: Split) -> Vec<u32> {
        (0..self.len() as u32).filter(|&i| self.split[i as usize] == split).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if self.poses.len() != n || self.split.len() != n || self.transmittance.len() != n {
            return Err(Error::Shape("dataset arrays disagree in length".into()));
        }
        for (i, (img, pose)) in self.images.iter().zip(&self.poses).enumerate() {
            if pose.image_id as usize != i {
                return Err(Error::Shape(format!("pose {i} carries image id {}", pose.image_id)));
            }
            if (img.width, img.height) != (pose.width, pose.height) || self.transmittance[i].len() != img.pixel_count() {
                return Err(Error::Shape(format!("image {i} does not match its intrinsics")));
            }
        }
        Ok(())
    }

    /// Writes `images/NNNN.ppm`, `transmittance/NNNN.pgm`, `poses.txt` and `split.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("transmittance"))?;
        for (i, img) in self.images.iter().enumerate() {
            write_ppm(&dir.join("images").join(format!("{i:04}.ppm")), img)?;
            write_pgm16(&dir.join("transmittance").join(format!("{i:04}.pgm")), img.width, img.height, &self.transmittance[i])?;
        }
        write_poses(&dir.join("poses.txt"), &self.poses)?;
        let split: String = self.split.iter().enumerate().map(|(i, s)| format!("{i} {}\n", s.as_str())).collect();
        std::fs::write(dir.join("split.txt"), split)?;
        Ok(())
    }

    /// SHA-256 over the on-disk encodings of every image, transmittance map, pose and split
    /// tag, in id order.
    pub fn content_hash(&self) -> Result<String> {
        self.validate()?;
        let mut bytes = Vec::new();
        for (i, img) in self.images.iter().enumerate() {
            bytes.extend(io::encode_ppm(img));
            for &t in &self.transmittance[i] {
                bytes.extend(((t.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
            }
        }
        bytes.extend(crate::partition::format_poses(&self.poses).into_bytes());
        for s in &self.split {
            bytes.extend(s.as_str().as_bytes());
        }
        Ok(crate::partition::sha256_hex(&bytes))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let poses = read_poses(&dir.join("poses.txt"))?;
        let split_path = dir.join("split.txt");
        let mut split = vec![Split::Train; poses.len()];
        for (ln, line) in std::fs::read_to_string(&split_path)?.lines().enumerate() {
            let err = |reason: String| Error::Parse {
                path: split_path.clone(),
                line: ln + 1,
                reason,
            };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.is_empty() {
                continue;
            }
            if tok.len() != 2 {
                return Err(err("expected `<image id> <train|val>`".into()));
            }
            let id: usize = tok[0].parse().map_err(|e| err(format!("bad image id: {e}")))?;
            if id >= split.len() {
                return Err(err(format!("image id {id} has no pose")));
            }
            split[id] = tok[1].parse().map_err(|e: Error| err(e.to_string()))?;
        }
        let mut images = Vec::with_capacity(poses.len());
        let mut transmittance = Vec::with_capacity(poses.len());
        for i in 0..poses.len() {
            images.push(read_ppm(&dir.join("images").join(format!("{i:04}.ppm")))?);
            let tpath = dir.join("transmittance").join(format!("{i:04}.pgm"));
            transmittance.push(if tpath.exists() {
                read_pgm16(&tpath)?.2
            } else {
                vec![0.0; images[i].pixel_count()]
            });
        }
        let ds = Dataset {
            images,
            transmittance,
            poses,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn default_samples() -> usize {
    2048
}

/// Scene spec file: either a preset name or an explicit scene and rig (explicit parts
/// override the preset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub scene: Option<SyntheticScene>,
    #[serde(default)]
    pub rig: Option<RigSpec>,
    /// Quadrature samples per pixel when rendering ground truth.
    #[serde(default = "default_samples")]
    pub render_samples: usize,
}

impl SceneSpec {
    pub fn from_preset(name: &str) -> Self {
        SceneSpec {
            preset: Some(name.to_string()),
            scene: None,
            rig: None,
            render_samples: default_samples(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("scene spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("scene spec: {e}")))
    }

    pub fn resolve(&self) -> Result<(SyntheticScene, RigSpec)> {
        let base = match &self.preset {
            Some(p) => Some(preset(p)?),
            None => None,
        };
        let scene = self.scene.clone().or_else(|| base.as_ref().map(|b| b.0.clone()));
        let rig = self.rig.clone().or_else(|| base.as_ref().map(|b| b.1.clone()));
        match (scene, rig) {
            (Some(s), Some(r)) => Ok((s, r)),
            _ => Err(Error::config("scene spec needs a preset or both [scene] and [rig]")),
        }
    }
}
