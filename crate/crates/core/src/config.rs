//! Run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{ClusterSettings, FieldSpec, Precision, TransportKind};
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::partition::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    /// Regions along x and y.
    pub grid: [usize; 2],
    /// Vertical padding added to the camera-derived boxes.
    pub altitude_margin: f64,
    /// Ground altitude; taken from the scene when absent.
    pub ground_altitude: Option<f64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            grid: [2, 2],
            altitude_margin: 0.3,
            ground_altitude: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub partition: PartitionConfig,
    pub field: FieldSpec,
    pub cluster: ClusterSettings,
    pub steps: u64,
    pub log_every: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Validation images rendered at the end of a run (all when zero).
    pub eval_images: usize,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            fine_grid: GridConfig::default(),
            coarse_grid: GridConfig {
                levels: 8,
                table_length: 1 << 17,
                features_per_level: 2,
                base_resolution: 16,
                max_resolution: 512,
                aspect: [1.0; 3],
            },
            appearance_dim: 16,
            hidden_width: crate::field::HIDDEN_WIDTH,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            partition: PartitionConfig::default(),
            field: FieldSpec::default(),
            cluster: ClusterSettings {
                batch_size: 4096,
                cache_capacity: 1 << 20,
                cache_refresh: 4096,
                lr: crate::train::LrSchedule {
                    total_steps: 20_000,
                    ..Default::default()
                },
                ..Default::default()
            },
            steps: 20_000,
            log_every: 100,
            checkpoint_every: 0,
            eval_images: 0,
        }
    }
}

/// Named configurations. `desk` is the default; `quick` is sized so a 5k-step run on the
/// synthetic presets finishes in minutes on one CPU core.
pub const RUN_PRESETS: [&str; 2] = ["desk", "quick"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::default()),
            "quick" => Ok(Self::quick()),
            _ => Err(Error::config(format!("unknown run preset {name:?} (known: {RUN_PRESETS:?})"))),
        }
    }

    fn quick() -> Self {
        let steps = 5000;
        RunConfig {
            partition: PartitionConfig::default(),
            field: FieldSpec {
                fine_grid: GridConfig {
                    levels: 8,
                    table_length: 1 << 13,
                    features_per_level: 2,
                    base_resolution: 8,
                    max_resolution: 256,
                    aspect: [1.0; 3],
                },
                coarse_grid: GridConfig {
                    levels: 6,
                    table_length: 1 << 13,
                    features_per_level: 2,
                    base_resolution: 4,
                    max_resolution: 64,
                    aspect: [1.0; 3],
                },
                appearance_dim: 4,
                hidden_width: 32,
            },
            cluster: ClusterSettings {
                batch_size: 128,
                step_size: 6.0 / 256.0,
                occupancy_resolution: 32,
                cache_capacity: 1 << 16,
                cache_refresh: 128,
                lr: crate::train::LrSchedule {
                    total_steps: steps,
                    ..Default::default()
                },
                occupancy: crate::grid::OccupancySchedule {
                    warmup_steps: 256,
                    ..Default::default()
                },
                ..Default::default()
            },
            steps,
            log_every: 100,
            checkpoint_every: 0,
            eval_images: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("run config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.partition.grid[0] == 0 || self.partition.grid[1] == 0 {
            return Err(Error::config("partition grid needs kx, ky >= 1"));
        }
        if self.partition.grid[0] * self.partition.grid[1] > u16::MAX as usize {
            return Err(Error::config("too many regions"));
        }
        self.field.fine_grid.validate()?;
        self.field.coarse_grid.validate()?;
        if self.field.hidden_width == 0 {
            return Err(Error::config("field hidden_width must be positive"));
        }
        self.cluster.validate()
    }

    /// Hash over the canonical serialization; checkpoints record it so a resume with a
    /// different configuration is refused. The transport, its timeout and the run-length
    /// bookkeeping (step count, logging, checkpoint and evaluation cadence) do not enter the
    /// hash, so a run can be extended or moved to another transport.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        let d = RunConfig::default();
        c.cluster.transport = TransportKind::default();
        c.cluster.timeout_ms = d.cluster.timeout_ms;
        c.steps = d.steps;
        c.log_every = d.log_every;
        c.checkpoint_every = d.checkpoint_every;
        c.eval_images = d.eval_images;
        Ok(sha256_hex(c.to_toml()?.as_bytes()))
    }

    /// Applies the command-line overrides shared by every subcommand.
    pub fn apply_overrides(
        &mut self,
        partitions: Option<[usize; 2]>,
        transport: Option<TransportKind>,
        seed: Option<u64>,
        precision: Option<Precision>,
    ) -> Result<()> {
        if let Some(p) = partitions {
            self.partition.grid = p;
        }
        if let Some(t) = transport {
            self.cluster.transport = t;
        }
        if let Some(s) = seed {
            self.cluster.seed = s;
        }
        if let Some(p) = precision {
            self.cluster.precision = p;
        }
        self.validate()
    }

    pub fn world(&self) -> usize {
        self.partition.grid[0] * self.partition.grid[1]
    }
}
