//! Checkpoint directory layout.
//!
//! ```text
//! run.toml          the run configuration
//! manifest.toml     the partition manifest
//! appearance.bin    the appearance table
//! worker_NNNN.bin   one per worker: header, fields, occupancy grids, optimizer moments
//! ```
//!
//! Every worker file starts with the configuration hash, and loading refuses files whose
//! hash differs from the configuration being resumed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::dist::{Cluster, WorkerState};
use crate::error::{Error, Result};
use crate::field::{AppearanceTable, FieldParams};
use crate::grid::OccupancyGrid;
use crate::io_util::{read_f32, read_str, read_u32, read_u64, write_f32, write_str, write_u32, write_u64};
use crate::partition::PartitionManifest;
use crate::train::AdamState;

const MAGIC: &[u8; 4] = b"DGWK";
const VERSION: u32 = 1;

fn worker_path(dir: &Path, rank: usize) -> PathBuf {
    dir.join(format!("worker_{rank:04}.bin"))
}

fn write_adam(w: &mut dyn Write, a: &AdamState) -> Result<()> {
    write_u64(w, a.step)?;
    write_u32(w, a.m.len() as u32)?;
    for (m, v) in a.m.iter().zip(&a.v) {
        write_u64(w, m.len() as u64)?;
        for x in m.iter().chain(v) {
            write_f32(w, *x as f32)?;
        }
    }
    Ok(())
}

fn read_adam(r: &mut dyn Read, into: &mut AdamState) -> Result<()> {
    into.step = read_u64(r)?;
    let n = read_u32(r)? as usize;
    if n != into.m.len() {
        return Err(Error::Checkpoint(format!("optimizer has {n} arrays, the fields need {}", into.m.len())));
    }
    for i in 0..n {
        let len = read_u64(r)? as usize;
        if len != into.m[i].len() {
            return Err(Error::Checkpoint(format!("optimizer array {i} has {len} entries, expected {}", into.m[i].len())));
        }
        for k in 0..len {
            into.m[i][k] = read_f32(r)? as f64;
        }
        for k in 0..len {
            into.v[i][k] = read_f32(r)? as f64;
        }
    }
    Ok(())
}

/// Writes the whole cluster state.
pub fn save(dir: &Path, config: &RunConfig, cluster: &Cluster) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run.toml"), config.to_toml()?)?;
    cluster.manifest.save(&dir.join("manifest.toml"))?;
    let mut w = BufWriter::new(File::create(dir.join("appearance.bin"))?);
    cluster.appearance.write_to(&mut w)?;
    w.flush()?;
    let hash = config.hash()?;
    for worker in &cluster.workers {
        let mut w = BufWriter::new(File::create(worker_path(dir, worker.rank))?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_str(&mut w, &hash)?;
        write_u64(&mut w, cluster.step)?;
        write_u32(&mut w, worker.rank as u32)?;
        worker.fine.write_to(&mut w)?;
        worker.coarse.write_to(&mut w)?;
        worker.occ_fine.write_to(&mut w)?;
        worker.occ_coarse.write_to(&mut w)?;
        write_adam(&mut w, &worker.adam_fine)?;
        write_adam(&mut w, &worker.adam_coarse)?;
        w.flush()?;
    }
    Ok(())
}

/// Restores a cluster saved by [`save`]. `config` is the configuration of the run being
/// resumed; its hash must match the one in every worker file.
pub fn load(dir: &Path, config: &RunConfig) -> Result<Cluster> {
    let hash = config.hash()?;
    let manifest = PartitionManifest::load(&dir.join("manifest.toml"))?;
    if manifest.regions.len() != config.world() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} regions, configuration asks for {}",
            manifest.regions.len(),
            config.world()
        )));
    }
    let appearance = AppearanceTable::read_from(&mut BufReader::new(File::open(dir.join("appearance.bin"))?))?;
    let mut workers = Vec::with_capacity(manifest.regions.len());
    let mut step = None;
    for (rank, region) in manifest.regions.iter().enumerate() {
        let path = worker_path(dir, rank);
        let mut r = BufReader::new(File::open(&path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a worker checkpoint", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("{}: unsupported version {version}", path.display())));
        }
        let theirs = read_str(&mut r)?;
        if theirs != hash {
            return Err(Error::Checkpoint(format!(
                "{} was written with configuration {theirs}, refusing to resume with {hash}",
                path.display()
            )));
        }
        let s = read_u64(&mut r)?;
        if *step.get_or_insert(s) != s {
            return Err(Error::Checkpoint("worker checkpoints are from different steps".into()));
        }
        if read_u32(&mut r)? as usize != rank {
            return Err(Error::Checkpoint(format!("{} holds another rank", path.display())));
        }
        let fine = FieldParams::read_from(&mut r)?;
        let coarse = FieldParams::read_from(&mut r)?;
        let occ_fine = OccupancyGrid::read_from(&mut r)?;
        let occ_coarse = OccupancyGrid::read_from(&mut r)?;
        let mut w = WorkerState::new(rank, region.clone(), fine, coarse, occ_fine, occ_coarse, &config.cluster);
        read_adam(&mut r, &mut w.adam_fine)?;
        read_adam(&mut r, &mut w.adam_coarse)?;
        workers.push(w);
    }
    let mut cluster = Cluster::from_workers(manifest, config.cluster.clone(), workers, appearance)?;
    cluster.step = step.unwrap_or(0);
    Ok(cluster)
}

/// Reads only the configuration stored with a checkpoint.
pub fn stored_config(dir: &Path) -> Result<RunConfig> {
    RunConfig::load(&dir.join("run.toml"))
}
