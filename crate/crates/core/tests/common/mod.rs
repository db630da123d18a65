//! Small scenes and configurations shared by the integration tests.

#![allow(dead_code)]

use distgrid::config::RunConfig;
use distgrid::data::{generate_dataset, preset, Dataset};
use distgrid::grid::GridConfig;

pub fn tiny_dataset(name: &str, size: u32, samples: usize) -> Dataset {
    let (scene, mut rig) = preset(name).unwrap();
    rig.width = size;
    rig.height = size;
    generate_dataset(&scene, &rig, samples).unwrap()
}

pub fn grid(levels: usize, table_log2: u32, base: u32, max: u32) -> GridConfig {
    GridConfig {
        levels,
        table_length: 1 << table_log2,
        features_per_level: 2,
        base_resolution: base,
        max_resolution: max,
        aspect: [1.0; 3],
    }
}

/// A configuration small enough for a few steps to take well under a second.
pub fn tiny_config(partitions: [usize; 2]) -> RunConfig {
    let mut cfg = RunConfig::preset("quick").unwrap();
    cfg.partition.grid = partitions;
    cfg.field.fine_grid = grid(4, 10, 4, 32);
    cfg.field.coarse_grid = grid(3, 10, 2, 16);
    cfg.field.hidden_width = 16;
    cfg.cluster.batch_size = 64;
    cfg.cluster.cache_capacity = 2048;
    cfg.cluster.cache_refresh = 64;
    cfg.cluster.step_size = 1.0 / 32.0;
    cfg.steps = 4;
    cfg.cluster.lr.total_steps = 4;
    cfg
}
