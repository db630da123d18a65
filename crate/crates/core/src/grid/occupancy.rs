//! Occupancy grid for empty-space skipping.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::shape_for_resolution;
use crate::error::{Error, Result};
use crate::geom::{Aabb, Ray, Vec3};
use crate::io_util::{read_f32, read_f64, read_u32, write_f32, write_f64, write_u32};

/// Occupied sub-intervals of a ray parameter range, ascending and disjoint.
pub trait OccupancyQuery {
    fn occupied_intervals(&self, ray: &Ray, t0: f64, t1: f64) -> Vec<(f64, f64)>;
}

/// Treats every point as occupied.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllOccupied;

impl OccupancyQuery for AllOccupied {
    fn occupied_intervals(&self, _ray: &Ray, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        if t1 > t0 {
            vec![(t0, t1)]
        } else {
            Vec::new()
        }
    }
}

/// Update cadence and density threshold schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySchedule {
    pub update_interval: u64,
    pub warmup_steps: u64,
    pub decay: f64,
    pub threshold_early: f64,
    pub threshold_late: f64,
    pub threshold_switch_step: u64,
    /// Multiplies both thresholds.
    pub threshold_scale: f64,
}

impl Default for OccupancySchedule {
    fn default() -> Self {
        OccupancySchedule {
            update_interval: 16,
            warmup_steps: 4096,
            decay: 0.99,
            threshold_early: 0.6,
            threshold_late: 60.0,
            threshold_switch_step: 10_000,
            threshold_scale: 1.0,
        }
    }
}

impl OccupancySchedule {
    pub fn threshold(&self, step: u64) -> f64 {
        let base = if step < self.threshold_switch_step {
            self.threshold_early
        } else {
            self.threshold_late
        };
        base * self.threshold_scale
    }

    pub fn is_update_step(&self, step: u64) -> bool {
        self.update_interval > 0 && step > 0 && step % self.update_interval == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub bbox: Aabb,
    pub shape: [u32; 3],
    pub density: Vec<f64>,
    pub bitfield: Vec<bool>,
    pub decay: f64,
    pub threshold: f64,
    /// Cells some training camera can see. The rest stay empty and are never resampled.
    pub seen: Vec<bool>,
}

impl OccupancyGrid {
    /// Deformable grid over `bbox` with `resolution` cells on its longest axis. Cells start
    /// at the threshold so everything is occupied until the first update.
    pub fn new(bbox: Aabb, resolution: u32, decay: f64, threshold: f64) -> Result<Self> {
        if !bbox.has_positive_extent() {
            return Err(Error::config(format!("occupancy box {bbox:?} is degenerate")));
        }
        if !(decay > 0.0 && decay < 1.0) || threshold < 0.0 {
            return Err(Error::config("occupancy decay must lie in (0,1) and threshold be >= 0"));
        }
        let shape = shape_for_resolution(bbox.aspect(), resolution.max(1));
        let n = shape.iter().map(|&s| s as usize).product();
        Ok(OccupancyGrid {
            bbox,
            shape,
            density: vec![threshold; n],
            bitfield: vec![true; n],
            decay,
            threshold,
            seen: vec![true; n],
        })
    }

    pub fn cell_count(&self) -> usize {
        self.density.len()
    }

    #[inline]
    pub fn cell_index(&self, c: [u32; 3]) -> usize {
        let [nx, ny, _] = self.shape;
        c[0] as usize + nx as usize * (c[1] as usize + ny as usize * c[2] as usize)
    }

    fn cell_coords(&self, i: usize) -> [u32; 3] {
        let nx = self.shape[0] as usize;
        let ny = self.shape[1] as usize;
        [(i % nx) as u32, ((i / nx) % ny) as u32, (i / (nx * ny)) as u32]
    }

    /// Unit-box coordinates of the cell centre.
    pub fn cell_center(&self, i: usize) -> Vec3 {
        let c = self.cell_coords(i);
        Vec3([0, 1, 2].map(|a| (c[a] as f64 + 0.5) / self.shape[a] as f64))
    }

    /// Cell containing a scene-space point; coordinates are clamped into the grid.
    pub fn cell_of(&self, p: Vec3) -> [u32; 3] {
        let u = self.bbox.normalize(p);
        [0, 1, 2].map(|a| {
            let n = self.shape[a];
            let x = (u[a] * n as f64).floor();
            if x < 0.0 {
                0
            } else {
                (x as u32).min(n - 1)
            }
        })
    }

    pub fn is_occupied(&self, p: Vec3) -> bool {
        self.bitfield[self.cell_index(self.cell_of(p))]
    }

    pub fn occupied_count(&self) -> usize {
        self.bitfield.iter().filter(|&&b| b).count()
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.threshold = threshold;
        self.refresh_bitfield();
    }

    pub fn refresh_bitfield(&mut self) {
        let th = self.threshold;
        for (b, &d) in self.bitfield.iter_mut().zip(&self.density) {
            *b = d >= th;
        }
    }

    pub fn fill(&mut self, occupied: bool) {
        let v = if occupied { self.threshold.max(f64::MIN_POSITIVE) } else { 0.0 };
        self.density.fill(v);
        self.refresh_bitfield();
    }

    /// Empties every cell for which `visible` holds at none of its corners or its centre,
    /// and excludes those cells from later updates. `visible` takes scene-space points.
    pub fn mark_unseen(&mut self, visible: &dyn Fn(Vec3) -> bool) {
        let ext = self.bbox.extent();
        let to_scene = |u: [f64; 3]| Vec3([0, 1, 2].map(|a| self.bbox.min[a] + u[a] * ext[a]));
        let seen: Vec<bool> = (0..self.cell_count())
            .map(|i| {
                let c = self.cell_coords(i);
                let corner = |k: usize| to_scene([0, 1, 2].map(|a| (c[a] as f64 + ((k >> a) & 1) as f64) / self.shape[a] as f64));
                visible(to_scene(self.cell_center(i).0)) || (0..8).any(|k| visible(corner(k)))
            })
            .collect();
        for (i, &s) in seen.iter().enumerate() {
            if !s {
                self.density[i] = 0.0;
            }
        }
        self.seen = seen;
        self.refresh_bitfield();
    }

    /// One decay-and-refresh pass. During warm-up every cell is visited; afterwards a quarter
    /// of the cells are drawn uniformly and another quarter from the occupied set. Each visited
    /// cell takes `max(decayed density, sigma at a jittered point in the cell)`, where the
    /// sampler receives unit-box coordinates.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        step: u64,
        schedule: &OccupancySchedule,
        rng: &mut R,
        sampler: &mut dyn FnMut(Vec3) -> f64,
    ) {
        self.threshold = schedule.threshold(step);
        let n = self.cell_count();
        let mut cells: Vec<usize> = if step < schedule.warmup_steps {
            (0..n).collect()
        } else {
            let quarter = (n / 4).max(1);
            let mut picked: Vec<usize> = (0..quarter).map(|_| rng.gen_range(0..n)).collect();
            let occupied: Vec<usize> = (0..n).filter(|&i| self.bitfield[i]).collect();
            if !occupied.is_empty() {
                let k = quarter.min(occupied.len());
                picked.extend(sample(rng, occupied.len(), k).into_iter().map(|j| occupied[j]));
            }
            picked.sort_unstable();
            picked.dedup();
            picked
        };
        cells.retain(|&i| self.seen[i]);
        for i in cells {
            let c = self.cell_coords(i);
            let p = Vec3([0, 1, 2].map(|a| (c[a] as f64 + rng.gen::<f64>()) / self.shape[a] as f64));
            let sigma = sampler(Vec3([p[0].min(1.0), p[1].min(1.0), p[2].min(1.0)])).max(0.0);
            self.density[i] = (self.density[i] * self.decay).max(sigma);
        }
        self.refresh_bitfield();
    }

    /// Walks the cells crossed by the ray over `[t0, t1]` and returns the maximal runs of
    /// occupied cells as parameter intervals.
    pub fn occupancy_skip(&self, ray: &Ray, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        if !(t1 > t0) {
            return out;
        }
        let ext = self.bbox.extent();
        let cell = [0, 1, 2].map(|a| ext[a] / self.shape[a] as f64);
        // Probe just past t0 so a start exactly on a cell face picks the cell being entered.
        let probe = t0 + (0.5 * (t1 - t0)).min(1e-9 * (1.0 + t0.abs()));
        let mut idx = self.cell_of(ray.at(probe)).map(|v| v as i64);
        let step: [i64; 3] = [0, 1, 2].map(|a| {
            if ray.dir[a] > 0.0 {
                1
            } else if ray.dir[a] < 0.0 {
                -1
            } else {
                0
            }
        });
        let next_boundary = |a: usize, i: i64| -> f64 {
            match step[a] {
                0 => f64::INFINITY,
                s => {
                    let face = if s > 0 { i + 1 } else { i };
                    (self.bbox.min[a] + face as f64 * cell[a] - ray.origin[a]) / ray.dir[a]
                }
            }
        };
        let mut t_next = [0, 1, 2].map(|a| next_boundary(a, idx[a]));
        let mut t = t0;
        while t < t1 {
            let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            let t_exit = t_next[axis].min(t1).max(t);
            let ci = self.cell_index([idx[0] as u32, idx[1] as u32, idx[2] as u32]);
            if self.bitfield[ci] && t_exit > t {
                match out.last_mut() {
                    Some(last) if last.1 == t => last.1 = t_exit,
                    _ => out.push((t, t_exit)),
                }
            }
            t = t_exit;
            if t >= t1 {
                break;
            }
            idx[axis] += step[axis];
            if idx[axis] < 0 || idx[axis] >= self.shape[axis] as i64 {
                break;
            }
            t_next[axis] = next_boundary(axis, idx[axis]);
        }
        out
    }

    /// Checkpoint segment: box, shape, threshold, decay, then densities as little-endian f32.
    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        for a in 0..3 {
            write_f64(w, self.bbox.min[a])?;
        }
        for a in 0..3 {
            write_f64(w, self.bbox.max[a])?;
        }
        for n in self.shape {
            write_u32(w, n)?;
        }
        write_f64(w, self.threshold)?;
        write_f64(w, self.decay)?;
        for &d in &self.density {
            write_f32(w, d as f32)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        let min = Vec3([read_f64(r)?, read_f64(r)?, read_f64(r)?]);
        let max = Vec3([read_f64(r)?, read_f64(r)?, read_f64(r)?]);
        let shape = [read_u32(r)?, read_u32(r)?, read_u32(r)?];
        let threshold = read_f64(r)?;
        let decay = read_f64(r)?;
        let n = shape.iter().map(|&s| s as usize).product::<usize>();
        if n == 0 || n > 1 << 28 {
            return Err(Error::Checkpoint(format!("occupancy shape {shape:?} is invalid")));
        }
        let density = (0..n).map(|_| read_f32(r).map(|v| v as f64)).collect::<std::io::Result<Vec<_>>>()?;
        let mut grid = OccupancyGrid {
            bbox: Aabb::new(min, max),
            shape,
            density,
            bitfield: vec![false; n],
            decay,
            threshold,
            seen: vec![true; n],
        };
        grid.refresh_bitfield();
        Ok(grid)
    }
}

impl OccupancyQuery for OccupancyGrid {
    fn occupied_intervals(&self, ray: &Ray, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        self.occupancy_skip(ray, t0, t1)
    }
}
