//! Deformable multi-resolution hash grid.
//!
//! Each level is a vertex lattice spanning the unit box with a per-axis vertex count taken
//! from the box aspect ratio, so a flat box does not waste table rows on empty altitude.
//! Small levels map vertices one-to-one onto table rows; large levels are spatially hashed
//! into a table of fixed length `T`.

mod occupancy;

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::io_util::{read_f32, read_f64, read_u32, read_u8, write_f32, write_f64, write_u32, write_u8};

pub use occupancy::{AllOccupied, OccupancyGrid, OccupancyQuery, OccupancySchedule};

const PRIME_Y: u32 = 2_654_435_761;
const PRIME_Z: u32 = 805_459_861;

/// Initial table entries are drawn from `U(-INIT_SCALE, INIT_SCALE)`.
pub const INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub levels: usize,
    pub table_length: usize,
    pub features_per_level: usize,
    pub base_resolution: u32,
    pub max_resolution: u32,
    #[serde(default = "unit_aspect")]
    pub aspect: [f64; 3],
}

fn unit_aspect() -> [f64; 3] {
    [1.0; 3]
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            levels: 8,
            table_length: 1 << 15,
            features_per_level: 2,
            base_resolution: 16,
            max_resolution: 512,
            aspect: unit_aspect(),
        }
    }
}

impl GridConfig {
    pub fn with_aspect(mut self, aspect: [f64; 3]) -> Self {
        self.aspect = aspect;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("grid needs at least one level"));
        }
        if !self.table_length.is_power_of_two() {
            return Err(Error::config(format!(
                "table length {} is not a power of two",
                self.table_length
            )));
        }
        if self.table_length > 1 << 31 {
            return Err(Error::config("table length exceeds 2^31"));
        }
        if self.features_per_level == 0 {
            return Err(Error::config("features per level must be >= 1"));
        }
        if self.base_resolution == 0 || self.base_resolution > self.max_resolution {
            return Err(Error::config(format!(
                "need 0 < base resolution ({}) <= max resolution ({})",
                self.base_resolution, self.max_resolution
            )));
        }
        if self.aspect.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::config(format!("aspect ratio {:?} must be positive", self.aspect)));
        }
        Ok(())
    }

    /// Geometric growth factor between consecutive level resolutions.
    pub fn growth_factor(&self) -> f64 {
        if self.levels == 1 {
            return 1.0;
        }
        ((self.max_resolution as f64).ln() - (self.base_resolution as f64).ln()) / (self.levels - 1) as f64
    }

    /// Resolution `N_l` of the longest axis at `level`.
    pub fn level_resolution(&self, level: usize) -> Result<u32> {
        if level >= self.levels {
            return Err(Error::OutOfRange {
                index: level,
                len: self.levels,
            });
        }
        let b = self.growth_factor().exp();
        Ok((self.base_resolution as f64 * b.powi(level as i32)).round() as u32)
    }

    pub fn encoded_width(&self) -> usize {
        self.levels * self.features_per_level
    }
}

/// Per-axis extents `ceil((a/s) N)` for aspect `(a,b,c)` with `s = max(a,b,c)`.
pub fn shape_for_resolution(aspect: [f64; 3], resolution: u32) -> [u32; 3] {
    let s = aspect[0].max(aspect[1]).max(aspect[2]);
    let n = resolution as f64;
    aspect.map(|a| {
        if a == s {
            resolution.max(1)
        } else {
            // Guard against a/s * N landing a few ulps above an integer.
            ((a * n / s - 1e-9).ceil() as u32).max(1)
        }
    })
}

/// Vertex-lattice shape of `level`.
pub fn grid_shape(config: &GridConfig, level: usize) -> Result<[u32; 3]> {
    Ok(shape_for_resolution(config.aspect, config.level_resolution(level)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mapping {
    OneToOne,
    Hashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGridLevel {
    pub shape: [u32; 3],
    pub mapping: Mapping,
    pub features: usize,
    /// `rows * features` scalars, row-major.
    pub table: Vec<f64>,
}

impl HashGridLevel {
    fn new(shape: [u32; 3], table_length: usize, features: usize) -> Self {
        let vertices = shape.iter().map(|&n| n as u64).product::<u64>();
        let (mapping, rows) = if vertices <= table_length as u64 {
            (Mapping::OneToOne, vertices as usize)
        } else {
            (Mapping::Hashed, table_length)
        };
        HashGridLevel {
            shape,
            mapping,
            features,
            table: vec![0.0; rows * features],
        }
    }

    pub fn rows(&self) -> usize {
        self.table.len() / self.features
    }

    #[inline]
    fn index_unchecked(&self, ix: u32, iy: u32, iz: u32) -> usize {
        match self.mapping {
            Mapping::OneToOne => {
                let [nx, ny, _] = self.shape;
                ix as usize + iy as usize * nx as usize + iz as usize * nx as usize * ny as usize
            }
            Mapping::Hashed => {
                let h = ix ^ iy.wrapping_mul(PRIME_Y) ^ iz.wrapping_mul(PRIME_Z);
                (h as usize) & (self.rows() - 1)
            }
        }
    }

    /// Table row of a lattice vertex.
    pub fn table_index(&self, voxel: [u32; 3]) -> Result<usize> {
        if (0..3).any(|a| voxel[a] >= self.shape[a]) {
            return Err(Error::VoxelOutOfRange {
                voxel,
                shape: self.shape,
            });
        }
        Ok(self.index_unchecked(voxel[0], voxel[1], voxel[2]))
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.table[row * self.features..(row + 1) * self.features]
    }

    /// The eight (row, weight) pairs blending the point `p` in [0,1]^3.
    #[inline]
    fn corners(&self, p: Vec3) -> [(u32, f64); 8] {
        let mut lo = [0u32; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.shape[a];
            if n <= 1 {
                continue;
            }
            let x = p[a] * (n - 1) as f64;
            let i = (x.floor() as u32).min(n - 2);
            lo[a] = i;
            frac[a] = x - i as f64;
        }
        let mut out = [(0u32, 0.0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut w = 1.0;
            let mut idx = [0u32; 3];
            for a in 0..3 {
                let bit = (c >> a) & 1;
                let hi_ok = self.shape[a] > 1;
                if bit == 1 {
                    w *= frac[a];
                    idx[a] = if hi_ok { lo[a] + 1 } else { 0 };
                } else {
                    w *= 1.0 - frac[a];
                    idx[a] = lo[a];
                }
            }
            *slot = (self.index_unchecked(idx[0], idx[1], idx[2]) as u32, w);
        }
        out
    }
}

/// Corner rows and weights recorded by a forward encode, consumed by the backward pass.
#[derive(Debug, Clone, Default)]
pub struct EncodeTrace {
    pub corners: Vec<[(u32, f64); 8]>,
}

/// One sparse table-gradient contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGrad {
    pub level: usize,
    pub row: usize,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid {
    pub config: GridConfig,
    pub levels: Vec<HashGridLevel>,
}

fn check_unit(p: Vec3) -> Result<()> {
    if (0..3).all(|a| (0.0..=1.0).contains(&p[a])) {
        Ok(())
    } else {
        Err(Error::OutsideUnitBox(p.0))
    }
}

impl HashGrid {
    /// All-zero tables.
    pub fn zeros(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let levels = (0..config.levels)
            .map(|l| {
                let shape = grid_shape(&config, l)?;
                Ok(HashGridLevel::new(shape, config.table_length, config.features_per_level))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HashGrid { config, levels })
    }

    /// Tables initialised from `U(-1e-4, 1e-4)`.
    pub fn new<R: Rng + ?Sized>(config: GridConfig, rng: &mut R) -> Result<Self> {
        let mut grid = Self::zeros(config)?;
        grid.fill_uniform(rng, INIT_SCALE);
        Ok(grid)
    }

    pub fn fill_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for level in &mut self.levels {
            for v in &mut level.table {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }

    pub fn output_width(&self) -> usize {
        self.config.encoded_width()
    }

    pub fn parameter_count(&self) -> usize {
        self.levels.iter().map(|l| l.table.len()).sum()
    }

    pub fn encode(&self, p: Vec3) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_width()];
        self.encode_into(p, &mut out, None)?;
        Ok(out)
    }

    /// Writes the concatenated per-level features of `p` into `out`, optionally recording
    /// the corner weights for [`HashGrid::accumulate_backward`].
    pub fn encode_into(&self, p: Vec3, out: &mut [f64], mut trace: Option<&mut EncodeTrace>) -> Result<()> {
        check_unit(p)?;
        let f = self.config.features_per_level;
        debug_assert_eq!(out.len(), self.output_width());
        if let Some(t) = trace.as_deref_mut() {
            t.corners.clear();
        }
        for (l, level) in self.levels.iter().enumerate() {
            let corners = level.corners(p);
            let dst = &mut out[l * f..(l + 1) * f];
            dst.fill(0.0);
            for &(row, w) in &corners {
                let src = level.row(row as usize);
                for k in 0..f {
                    dst[k] += w * src[k];
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.corners.push(corners);
            }
        }
        Ok(())
    }

    /// Sparse adjoint of [`HashGrid::encode`]: one entry per (level, corner).
    pub fn encode_backward(&self, p: Vec3, upstream: &[f64]) -> Result<Vec<TableGrad>> {
        check_unit(p)?;
        if upstream.len() != self.output_width() {
            return Err(Error::Shape(format!(
                "upstream has {} entries, expected {}",
                upstream.len(),
                self.output_width()
            )));
        }
        let f = self.config.features_per_level;
        let mut out = Vec::new();
        for (l, level) in self.levels.iter().enumerate() {
            let up = &upstream[l * f..(l + 1) * f];
            if up.iter().all(|&g| g == 0.0) {
                continue;
            }
            for (row, w) in level.corners(p) {
                if w == 0.0 {
                    continue;
                }
                out.push(TableGrad {
                    level: l,
                    row: row as usize,
                    grad: up.iter().map(|&g| g * w).collect(),
                });
            }
        }
        Ok(out)
    }

    /// Deposits `upstream` into dense per-level gradient tables using a recorded trace.
    pub fn accumulate_backward(&self, trace: &EncodeTrace, upstream: &[f64], grads: &mut GridGrad) -> Result<()> {
        if trace.corners.len() != self.levels.len() {
            return Err(Error::MissingCache("encode trace"));
        }
        let f = self.config.features_per_level;
        for (l, corners) in trace.corners.iter().enumerate() {
            let up = &upstream[l * f..(l + 1) * f];
            let dst = &mut grads.levels[l];
            for &(row, w) in corners {
                let base = row as usize * f;
                for k in 0..f {
                    dst[base + k] += w * up[k];
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) -> GridGrad {
        GridGrad {
            levels: self.levels.iter().map(|l| vec![0.0; l.table.len()]).collect(),
        }
    }

    /// Checkpoint segment: config header, then per level a header (index, shape, mapping,
    /// features, rows) followed by the table as little-endian f32.
    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        let c = &self.config;
        write_u32(w, c.levels as u32)?;
        write_u32(w, c.table_length as u32)?;
        write_u32(w, c.features_per_level as u32)?;
        write_u32(w, c.base_resolution)?;
        write_u32(w, c.max_resolution)?;
        for a in c.aspect {
            write_f64(w, a)?;
        }
        for (l, level) in self.levels.iter().enumerate() {
            write_u32(w, l as u32)?;
            for n in level.shape {
                write_u32(w, n)?;
            }
            write_u8(w, matches!(level.mapping, Mapping::Hashed) as u8)?;
            write_u32(w, level.features as u32)?;
            write_u32(w, level.rows() as u32)?;
            for &v in &level.table {
                write_f32(w, v as f32)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        let levels = read_u32(r)? as usize;
        let table_length = read_u32(r)? as usize;
        let features_per_level = read_u32(r)? as usize;
        let base_resolution = read_u32(r)?;
        let max_resolution = read_u32(r)?;
        let aspect = [read_f64(r)?, read_f64(r)?, read_f64(r)?];
        let config = GridConfig {
            levels,
            table_length,
            features_per_level,
            base_resolution,
            max_resolution,
            aspect,
        };
        let mut grid = HashGrid::zeros(config)?;
        for (l, level) in grid.levels.iter_mut().enumerate() {
            let idx = read_u32(r)? as usize;
            let shape = [read_u32(r)?, read_u32(r)?, read_u32(r)?];
            let hashed = read_u8(r)? == 1;
            let features = read_u32(r)? as usize;
            let rows = read_u32(r)? as usize;
            if idx != l || shape != level.shape || hashed != (level.mapping == Mapping::Hashed) || features != level.features || rows != level.rows() {
                return Err(Error::Checkpoint(format!("grid level {l} header does not match its config")));
            }
            for v in &mut level.table {
                *v = read_f32(r)? as f64;
            }
        }
        Ok(grid)
    }
}

/// Dense gradient tables mirroring [`HashGrid`] levels.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGrad {
    pub levels: Vec<Vec<f64>>,
}

impl GridGrad {
    pub fn clear(&mut self) {
        for l in &mut self.levels {
            l.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(levels: usize, t: usize, n0: u32, nmax: u32) -> GridConfig {
        GridConfig {
            levels,
            table_length: t,
            features_per_level: 2,
            base_resolution: n0,
            max_resolution: nmax,
            aspect: [1.0; 3],
        }
    }

    #[test]
    fn shape_examples() {
        assert_eq!(shape_for_resolution([2.0, 1.0, 1.0], 8), [8, 4, 4]);
        assert_eq!(shape_for_resolution([1.0, 1.0, 1.0], 16), [16, 16, 16]);
        assert_eq!(shape_for_resolution([3.0, 2.0, 1.0], 10), [10, 7, 4]);
        assert_eq!(shape_for_resolution([100.0, 1.0, 1.0], 4), [4, 1, 1]);
    }

    #[test]
    fn resolution_progression_hits_both_ends() {
        let c = cfg(8, 1 << 15, 16, 512);
        assert_eq!(c.level_resolution(0).unwrap(), 16);
        assert_eq!(c.level_resolution(7).unwrap(), 512);
        let mut prev = 0;
        for l in 0..8 {
            let n = c.level_resolution(l).unwrap();
            assert!(n > prev);
            prev = n;
        }
        assert!(matches!(grid_shape(&c, 8), Err(Error::OutOfRange { .. })));
        assert_eq!(cfg(1, 1 << 10, 16, 16).level_resolution(0).unwrap(), 16);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, 1 << 10, 16, 32).validate().is_err());
        assert!(cfg(2, 1000, 16, 32).validate().is_err());
        assert!(cfg(2, 1 << 10, 64, 32).validate().is_err());
        assert!(cfg(2, 1 << 10, 16, 32).with_aspect([1.0, 0.0, 1.0]).validate().is_err());
    }

    #[test]
    fn table_index_examples() {
        let dense = HashGridLevel::new([4, 4, 4], 1 << 10, 2);
        assert_eq!(dense.mapping, Mapping::OneToOne);
        assert_eq!(dense.table_index([0, 0, 0]).unwrap(), 0);
        assert_eq!(dense.table_index([1, 2, 3]).unwrap(), 57);
        assert!(dense.table_index([4, 0, 0]).is_err());

        let hashed = HashGridLevel::new([128, 128, 128], 1 << 19, 2);
        assert_eq!(hashed.mapping, Mapping::Hashed);
        assert_eq!(hashed.table_index([0, 0, 0]).unwrap(), 0);
        let exact = (1u128 ^ (2u128 * 2_654_435_761) ^ (3u128 * 805_459_861)) % (1u128 << 19);
        assert_eq!(hashed.table_index([1, 2, 3]).unwrap() as u128, exact);
    }

    #[test]
    fn mapping_switches_exactly_above_table_length() {
        assert_eq!(HashGridLevel::new([8, 8, 8], 512, 1).mapping, Mapping::OneToOne);
        assert_eq!(HashGridLevel::new([8, 8, 9], 512, 1).mapping, Mapping::Hashed);
    }

    #[test]
    fn zero_tables_encode_to_zero() {
        let g = HashGrid::zeros(cfg(4, 1 << 12, 4, 32)).unwrap();
        assert_eq!(g.encode(Vec3::new(0.3, 0.7, 0.1)).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn vertex_point_returns_vertex_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = cfg(3, 1 << 8, 4, 16);
        c.aspect = [2.0, 1.0, 1.0];
        let g = HashGrid::new(c, &mut rng).unwrap();
        for p in [Vec3::new(1.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 0.0), Vec3::splat(1.0)] {
            let enc = g.encode(p).unwrap();
            for (l, level) in g.levels.iter().enumerate() {
                let v = [0, 1, 2].map(|a| (p[a] * (level.shape[a] - 1) as f64).round() as u32);
                let row = level.table_index(v).unwrap();
                assert_eq!(&enc[l * 2..l * 2 + 2], level.row(row), "level {l} shape {:?}", level.shape);
            }
        }
    }

    #[test]
    fn outside_unit_box_is_rejected() {
        let g = HashGrid::zeros(cfg(2, 1 << 8, 4, 8)).unwrap();
        assert!(matches!(g.encode(Vec3::new(1.01, 0.5, 0.5)), Err(Error::OutsideUnitBox(_))));
        assert!(g.encode(Vec3::new(-1e-12, 0.5, 0.5)).is_err());
        assert!(g.encode_backward(Vec3::new(0.5, 2.0, 0.5), &[0.0; 4]).is_err());
    }

    #[test]
    fn reproduces_axis_linear_function() {
        // f(v) = 0.5 vx + 0.25 vy in unit coordinates on a one-to-one level.
        let mut c = cfg(1, 1 << 12, 9, 9);
        c.features_per_level = 1;
        let mut g = HashGrid::zeros(c).unwrap();
        let level = &mut g.levels[0];
        assert_eq!(level.mapping, Mapping::OneToOne);
        let [nx, ny, nz] = level.shape;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let row = level.table_index([ix, iy, iz]).unwrap();
                    level.table[row] = 0.5 * ix as f64 / (nx - 1) as f64 + 0.25 * iy as f64 / (ny - 1) as f64;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let want = 0.5 * p[0] + 0.25 * p[1];
            let got = g.encode(p).unwrap()[0];
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn weights_are_a_partition_of_unity() {
        let g = HashGrid::zeros(cfg(5, 1 << 10, 3, 40).with_aspect([3.0, 1.0, 0.5])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            for level in &g.levels {
                let c = level.corners(p);
                let s: f64 = c.iter().map(|&(_, w)| w).sum();
                assert!(c.iter().all(|&(_, w)| w >= 0.0));
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_yields_no_contributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = HashGrid::new(cfg(3, 1 << 8, 4, 16), &mut rng).unwrap();
        assert!(g.encode_backward(Vec3::splat(0.4), &[0.0; 6]).unwrap().is_empty());
    }

    #[test]
    fn vertex_backward_deposits_on_one_row_per_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = HashGrid::new(cfg(3, 1 << 8, 5, 17), &mut rng).unwrap();
        let up = [1.0, -2.0, 0.5, 0.25, 3.0, 4.0];
        let grads = g.encode_backward(Vec3::new(0.0, 0.5, 1.0), &up).unwrap();
        assert_eq!(grads.len(), 3);
        for tg in grads {
            assert_eq!(tg.grad, up[tg.level * 2..tg.level * 2 + 2].to_vec());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_f32_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = HashGrid::new(cfg(3, 1 << 9, 4, 16).with_aspect([2.0, 1.0, 0.5]), &mut rng).unwrap();
        for l in &mut g.levels {
            for v in &mut l.table {
                *v = *v as f32 as f64;
            }
        }
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let back = HashGrid::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }
}
