//! Losses, the Adam optimizer with its cosine schedule, and the in-memory ray cache.

mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};

pub use loss::{
    loss_distortion, loss_rgb, loss_transmittance, merge_distortion, total_loss, LossConfig, MomentGrad, RayLoss, SegmentMoments,
};

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr_max: 0.05,
            lr_min: 0.005,
            total_steps: 20_000,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        let frac = if self.total_steps == 0 {
            1.0
        } else {
            (step.min(self.total_steps) as f64) / self.total_steps as f64
        };
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
        }
    }
}

/// First and second moments for a list of parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} arrays, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!("array {i}: parameter/gradient/moment lengths differ")));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// A supervised pixel: the ray is rebuilt from the image's pose when a batch is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEntry {
    pub image: u32,
    pub pixel: u32,
    /// Row of the appearance table for this image.
    pub appearance: u32,
    pub rgb: [f32; 3],
    pub transmittance: f32,
}

/// Reservoir of training rays. Refreshes overwrite the oldest entries; batches are drawn
/// uniformly from the current contents.
#[derive(Debug, Clone)]
pub struct RayCache {
    pub capacity: usize,
    entries: Vec<CacheEntry>,
    cursor: usize,
    rng: ChaCha8Rng,
    /// Training image ids and their cumulative pixel counts.
    images: Vec<u32>,
    cumulative: Vec<u64>,
}

impl RayCache {
    /// Empty cache over the training split of `dataset`.
    pub fn new(capacity: usize, dataset: &Dataset, seed: u64) -> Result<Self> {
        let images = dataset.ids(Split::Train);
        Self::with_images(capacity, dataset, images, seed)
    }

    pub fn with_images(capacity: usize, dataset: &Dataset, images: Vec<u32>, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("ray cache capacity must be positive"));
        }
        if images.is_empty() {
            return Err(Error::config("ray cache needs at least one training image"));
        }
        let mut cumulative = Vec::with_capacity(images.len());
        let mut acc = 0u64;
        for &i in &images {
            acc += dataset.images[i as usize].pixel_count() as u64;
            cumulative.push(acc);
        }
        Ok(RayCache {
            capacity,
            entries: Vec::with_capacity(capacity),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            images,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    /// Replaces the `count` oldest entries with pixels drawn uniformly over all training
    /// (image, pixel) pairs.
    pub fn cache_refresh(&mut self, dataset: &Dataset, count: usize) {
        let total = *self.cumulative.last().unwrap_or(&0);
        for _ in 0..count.min(self.capacity) {
            let g = self.rng.gen_range(0..total);
            let slot = self.cumulative.partition_point(|&c| c <= g);
            let before = if slot == 0 { 0 } else { self.cumulative[slot - 1] };
            let image = self.images[slot];
            let pixel = (g - before) as u32;
            let rgb = dataset.images[image as usize].pixel(pixel as usize);
            let entry = CacheEntry {
                image,
                pixel,
                appearance: slot as u32,
                rgb: rgb.map(|v| v as f32),
                transmittance: dataset.transmittance[image as usize][pixel as usize] as f32,
            };
            if self.entries.len() < self.capacity {
                self.entries.push(entry);
            } else {
                self.entries[self.cursor] = entry;
                self.cursor = (self.cursor + 1) % self.capacity;
            }
        }
    }

    /// Uniform draw with replacement.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<CacheEntry> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| self.entries[rng.gen_range(0..self.entries.len())]).collect()
    }

    /// Training image ids, in appearance-row order.
    pub fn images(&self) -> &[u32] {
        &self.images
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let s = LrSchedule {
            total_steps: 1000,
            ..Default::default()
        };
        assert_eq!(s.lr(0), 0.05);
        assert!((s.lr(1000) - 0.005).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for t in 0..=1000 {
            assert!(s.lr(t) <= prev);
            prev = s.lr(t);
        }
    }

    #[test]
    fn adam_zero_gradients_leave_parameters() {
        let mut st = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, 2.0, 3.0];
        st.adam_step(&mut [p.as_mut_slice()], &[&[0.0; 3]], 0.1).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(st.m[0], vec![0.0; 3]);
        // After a real step, zero gradients decay the first moment by beta1.
        st.adam_step(&mut [p.as_mut_slice()], &[&[1.0; 3]], 0.1).unwrap();
        let m = st.m[0][0];
        st.adam_step(&mut [p.as_mut_slice()], &[&[0.0; 3]], 0.1).unwrap();
        assert!((st.m[0][0] - 0.9 * m).abs() < 1e-15);
    }

    // Two steps of the recurrence expanded by hand.
    #[test]
    fn adam_two_steps_closed_form() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(cfg.clone(), &[1]);
        let mut p = vec![0.5];
        let (g1, g2, lr) = (0.2, -0.4, 0.05);
        st.adam_step(&mut [p.as_mut_slice()], &[&[g1]], lr).unwrap();
        st.adam_step(&mut [p.as_mut_slice()], &[&[g2]], lr).unwrap();
        // Step 1: m_hat = g1, v_hat = g1^2.
        let p1 = 0.5 - lr * g1 / (g1.abs() + cfg.epsilon);
        let m2 = 0.9 * 0.1 * g1 + 0.1 * g2;
        let v2 = 0.99 * 0.01 * g1 * g1 + 0.01 * g2 * g2;
        let p2 = p1 - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.9801)).sqrt() + cfg.epsilon);
        assert!((p[0] - p2).abs() < 1e-15);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0; 3];
        assert!(st.adam_step(&mut [p.as_mut_slice()], &[&[0.0; 3]], 0.1).is_err());
    }
}
