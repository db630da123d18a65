//! End-to-end runs: partitioning a dataset, the training loop with its metrics log, and
//! validation.

use std::io::Write;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{Dataset, Split};
use crate::dist::{Cluster, StepReport};
use crate::error::{Error, Result};
use crate::field::{build_appearance_table, AppearanceTable, MEAN_APPEARANCE};
use crate::image::RgbImage;
use crate::metrics::{psnr, ssim};
use crate::partition::{compute_boxes, split_regions, PartitionManifest};

/// Partition derived from the dataset's cameras.
pub fn build_manifest(dataset: &Dataset, config: &RunConfig, ground: f64) -> Result<PartitionManifest> {
    let ground = config.partition.ground_altitude.unwrap_or(ground);
    let (inner, outer) = compute_boxes(&dataset.poses, ground, config.partition.altitude_margin)?;
    let [kx, ky] = config.partition.grid;
    split_regions(&inner, &outer, (kx, ky), ground)
}

/// Appearance rows for the training images, in training order. A zero width gives an empty
/// table.
pub fn build_appearance(dataset: &Dataset, dim: usize) -> Result<AppearanceTable> {
    let train = dataset.ids(Split::Train);
    if dim == 0 {
        return Ok(AppearanceTable::empty(train.len()));
    }
    let images: Vec<RgbImage> = train.iter().map(|&i| dataset.images[i as usize].clone()).collect();
    build_appearance_table(&images, dim)
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub loss_rgb: f64,
    pub loss_transmittance: f64,
    pub loss_distortion: f64,
    pub lr: f64,
    /// Bytes sent by all workers since the start of the run.
    pub bytes: u64,
}

impl LogRecord {
    pub const HEADER: &'static str = "step\tloss_rgb\tloss_transmittance\tloss_distortion\tlr\tbytes";

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{}",
            self.step, self.loss_rgb, self.loss_transmittance, self.loss_distortion, self.lr, self.bytes
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub image: u32,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub images: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub struct Trainer {
    pub config: RunConfig,
    pub cluster: Cluster,
    pub log: Vec<LogRecord>,
}

impl Trainer {
    pub fn new(config: RunConfig, dataset: &Dataset, ground: f64) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let manifest = build_manifest(dataset, &config, ground)?;
        let appearance = build_appearance(dataset, config.field.appearance_dim)?;
        let mut cluster = Cluster::new(manifest, config.cluster.clone(), &config.field, appearance)?;
        cluster.attach_dataset(dataset)?;
        Ok(Trainer {
            config,
            cluster,
            log: Vec::new(),
        })
    }

    /// Continues from a checkpoint directory.
    pub fn resume(config: RunConfig, dataset: &Dataset, dir: &Path) -> Result<Self> {
        config.validate()?;
        let mut cluster = crate::checkpoint::load(dir, &config)?;
        cluster.attach_dataset(dataset)?;
        Ok(Trainer {
            config,
            cluster,
            log: Vec::new(),
        })
    }

    pub fn step(&mut self, dataset: &Dataset) -> Result<StepReport> {
        let rep = self.cluster.training_step(dataset)?;
        if !rep.loss_rgb.is_finite() {
            return Err(Error::config(format!("loss diverged at step {}", rep.step)));
        }
        Ok(rep)
    }

    fn record(&self, rep: &StepReport) -> LogRecord {
        LogRecord {
            step: rep.step,
            loss_rgb: rep.loss_rgb,
            loss_transmittance: rep.loss_transmittance,
            loss_distortion: rep.loss_distortion,
            lr: rep.lr,
            bytes: self.cluster.byte_counters().iter().map(|c| c.total_sent()).sum(),
        }
    }

    /// Trains until the configured step count, logging every `log_every` steps to `log`
    /// (when given) and checkpointing into `checkpoint_dir` every `checkpoint_every` steps.
    pub fn run(&mut self, dataset: &Dataset, mut log: Option<&mut dyn Write>, checkpoint_dir: Option<&Path>) -> Result<()> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", LogRecord::HEADER)?;
        }
        let every = self.config.log_every.max(1);
        let mut window = (0.0, 0.0, 0.0, 0usize);
        while self.cluster.step < self.config.steps {
            let rep = self.step(dataset)?;
            window.0 += rep.loss_rgb;
            window.1 += rep.loss_transmittance;
            window.2 += rep.loss_distortion;
            window.3 += 1;
            let done = self.cluster.step;
            if done % every == 0 || done == self.config.steps {
                let n = window.3 as f64;
                let mut rec = self.record(&rep);
                rec.loss_rgb = window.0 / n;
                rec.loss_transmittance = window.1 / n;
                rec.loss_distortion = window.2 / n;
                window = (0.0, 0.0, 0.0, 0);
                log::info!(
                    "step {} rgb {:.5} T {:.4} dist {:.5} lr {:.4}",
                    rec.step,
                    rec.loss_rgb,
                    rec.loss_transmittance,
                    rec.loss_distortion,
                    rec.lr
                );
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "{}", rec.to_line())?;
                    w.flush()?;
                }
                self.log.push(rec);
            }
            if let Some(dir) = checkpoint_dir {
                if self.config.checkpoint_every > 0 && done % self.config.checkpoint_every == 0 {
                    crate::checkpoint::save(dir, &self.config, &self.cluster)?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            crate::checkpoint::save(dir, &self.config, &self.cluster)?;
        }
        Ok(())
    }

    /// Renders images of `split` with the mean appearance row and scores them against the
    /// dataset. `limit` of zero means all.
    pub fn evaluate(&mut self, dataset: &Dataset, split: Split, limit: usize) -> Result<EvalSummary> {
        evaluate_cluster(&mut self.cluster, dataset, split, limit)
    }
}

/// Renders every image of `split` (up to `limit`, zero for all) and scores it.
pub fn evaluate_cluster(cluster: &mut Cluster, dataset: &Dataset, split: Split, limit: usize) -> Result<EvalSummary> {
    let mut ids = dataset.ids(split);
    if limit > 0 {
        ids.truncate(limit);
    }
    if ids.is_empty() {
        return Err(Error::config(format!("no {} images to evaluate", split.as_str())));
    }
    let mut images = Vec::with_capacity(ids.len());
    for id in ids {
        let out = cluster.evaluate_image(&dataset.poses[id as usize], MEAN_APPEARANCE)?;
        let gt = &dataset.images[id as usize];
        images.push(ImageScore {
            image: id,
            psnr: psnr(&out.rgb, gt)?,
            ssim: ssim(&out.rgb, gt)?,
        });
    }
    let n = images.len() as f64;
    Ok(EvalSummary {
        mean_psnr: images.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: images.iter().map(|s| s.ssim).sum::<f64>() / n,
        images,
    })
}
