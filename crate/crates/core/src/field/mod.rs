//! The per-region radiance field: hash-grid encoding, a density network and a
//! direction/appearance-conditioned color network, with a hand-written backward pass.

mod appearance;
mod mlp;
mod sh;

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::grid::{EncodeTrace, GridConfig, GridGrad, HashGrid};
use crate::io_util::{read_u32, read_u8, write_u32, write_u8};

pub use appearance::{build_appearance_table, gram_vector, AppearanceTable, Provenance, GRAM_IMAGE_SIZE, MEAN_APPEARANCE};
pub use mlp::{sigmoid, Activation, Layer, Mlp, MlpGrad, MlpTrace};
pub use sh::{sh_basis, SH_WIDTH};

/// Raw network outputs are clipped to `[-CLIP, CLIP]` before their output activations.
pub const CLIP: f64 = 15.0;
pub const DENSITY_FEATURES: usize = 15;
pub const HIDDEN_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cascade {
    Fine,
    Coarse,
}

impl Cascade {
    /// Hidden activation of the color network.
    pub fn color_activation(self) -> Activation {
        match self {
            Cascade::Fine => Activation::Relu,
            Cascade::Coarse => Activation::Sigmoid,
        }
    }
}

fn clip(x: f64) -> f64 {
    x.clamp(-CLIP, CLIP)
}

/// Gradient factor of the clip: zero where the raw value was cut off.
fn clip_pass(x: f64) -> f64 {
    if x.abs() > CLIP {
        0.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub cascade: Cascade,
    /// Region of space the field covers; queries are normalized against it.
    pub bbox: Aabb,
    pub grid: HashGrid,
    pub density_mlp: Mlp,
    pub color_mlp: Mlp,
    pub appearance_dim: usize,
}

/// Scratch space and activations of one field evaluation.
#[derive(Debug, Clone, Default)]
pub struct FieldTrace {
    pub encode: EncodeTrace,
    pub encoded: Vec<f64>,
    pub density: MlpTrace,
    pub color: MlpTrace,
    color_input: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub grid: GridGrad,
    pub density: MlpGrad,
    pub color: MlpGrad,
}

impl FieldGrad {
    pub fn clear(&mut self) {
        self.grid.clear();
        self.density.clear();
        self.color.clear();
    }

    /// Flat views in the same order as [`FieldParams::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.grid.levels.iter().map(|l| l.as_slice()).collect();
        for (w, b) in self.density.layers.iter().chain(&self.color.layers) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Where to evaluate the field and which appearance row conditions the color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldQuery {
    /// World-space point inside the field's box.
    pub point: Vec3,
    /// Unit view direction.
    pub dir: Vec3,
    pub appearance: u32,
}

impl FieldParams {
    pub fn new<R: Rng + ?Sized>(cascade: Cascade, bbox: Aabb, grid: GridConfig, appearance_dim: usize, rng: &mut R) -> Result<Self> {
        Self::with_width(cascade, bbox, grid, appearance_dim, HIDDEN_WIDTH, rng)
    }

    /// Like [`FieldParams::new`] with a chosen hidden width for both networks.
    pub fn with_width<R: Rng + ?Sized>(
        cascade: Cascade,
        bbox: Aabb,
        grid: GridConfig,
        appearance_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !bbox.has_positive_extent() {
            return Err(Error::config(format!("field box {bbox:?} is degenerate")));
        }
        if hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        let grid = HashGrid::new(grid.with_aspect(bbox.aspect()), rng)?;
        let density_mlp = Mlp::new(&[grid.output_width(), hidden, 1 + DENSITY_FEATURES], Activation::Relu, rng);
        let color_in = DENSITY_FEATURES + SH_WIDTH + appearance_dim;
        let color_mlp = Mlp::new(&[color_in, hidden, hidden, 3], cascade.color_activation(), rng);
        Ok(FieldParams {
            cascade,
            bbox,
            grid,
            density_mlp,
            color_mlp,
            appearance_dim,
        })
    }

    /// Every parameter zero.
    pub fn zeros(cascade: Cascade, bbox: Aabb, grid: GridConfig, appearance_dim: usize) -> Result<Self> {
        let grid = HashGrid::zeros(grid.with_aspect(bbox.aspect()))?;
        let density_mlp = Mlp::zeros(&[grid.output_width(), HIDDEN_WIDTH, 1 + DENSITY_FEATURES], Activation::Relu);
        let color_in = DENSITY_FEATURES + SH_WIDTH + appearance_dim;
        let color_mlp = Mlp::zeros(&[color_in, HIDDEN_WIDTH, HIDDEN_WIDTH, 3], cascade.color_activation());
        Ok(FieldParams {
            cascade,
            bbox,
            grid,
            density_mlp,
            color_mlp,
            appearance_dim,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.grid.parameter_count() + self.density_mlp.parameter_count() + self.color_mlp.parameter_count()
    }

    pub fn zero_grad(&self) -> FieldGrad {
        FieldGrad {
            grid: self.grid.zero_grad(),
            density: self.density_mlp.zero_grad(),
            color: self.color_mlp.zero_grad(),
        }
    }

    /// Flat parameter arrays: grid levels, then density and color layers (weight, bias).
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.grid.levels.iter_mut().map(|l| l.table.as_mut_slice()).collect();
        out.extend(self.density_mlp.params_mut());
        out.extend(self.color_mlp.params_mut());
        out
    }

    /// Maps a world point into the unit box, rejecting points outside the field's box.
    pub fn normalize(&self, p: Vec3) -> Result<Vec3> {
        let tol = 1e-9 * (1.0 + self.bbox.longest_axis());
        let e = self.bbox.extent();
        if (0..3).any(|a| p[a] < self.bbox.min[a] - tol * e[a].max(1.0) || p[a] > self.bbox.max[a] + tol * e[a].max(1.0)) {
            return Err(Error::OutsideUnitBox(self.bbox.normalize(p).0));
        }
        Ok(self.bbox.normalize_clamped(p))
    }

    /// Density and the 15 features handed to the color network, from a normalized point.
    pub fn query_density(&self, unit: Vec3) -> Result<(f64, [f64; DENSITY_FEATURES])> {
        let mut trace = FieldTrace::default();
        self.density_into(unit, &mut trace)
    }

    fn density_into(&self, unit: Vec3, trace: &mut FieldTrace) -> Result<(f64, [f64; DENSITY_FEATURES])> {
        trace.encoded.resize(self.grid.output_width(), 0.0);
        self.grid.encode_into(unit, &mut trace.encoded, Some(&mut trace.encode))?;
        self.density_mlp.forward(&trace.encoded, &mut trace.density)?;
        let raw = self.density_mlp.output(&trace.density);
        let mut feat = [0.0; DENSITY_FEATURES];
        for (f, &r) in feat.iter_mut().zip(&raw[1..]) {
            *f = clip(r);
        }
        Ok((clip(raw[0]).exp(), feat))
    }

    /// Color in `(0,1)^3` from density features, a unit direction and an appearance vector.
    pub fn query_color(&self, features: &[f64; DENSITY_FEATURES], dir: Vec3, appearance: &[f64]) -> Result<[f64; 3]> {
        let mut trace = FieldTrace::default();
        self.color_into(features, dir, appearance, &mut trace)
    }

    fn color_into(&self, features: &[f64], dir: Vec3, appearance: &[f64], trace: &mut FieldTrace) -> Result<[f64; 3]> {
        if appearance.len() != self.appearance_dim {
            return Err(Error::Shape(format!(
                "appearance vector has {} entries, field expects {}",
                appearance.len(),
                self.appearance_dim
            )));
        }
        trace.color_input.clear();
        trace.color_input.extend_from_slice(features);
        trace.color_input.extend_from_slice(&sh_basis(dir));
        trace.color_input.extend_from_slice(appearance);
        self.color_mlp.forward(&trace.color_input, &mut trace.color)?;
        let raw = self.color_mlp.output(&trace.color);
        Ok([sigmoid(clip(raw[0])), sigmoid(clip(raw[1])), sigmoid(clip(raw[2]))])
    }

    /// Full evaluation of a world-space query, recording activations into `trace`.
    pub fn eval(&self, q: &FieldQuery, table: &AppearanceTable, trace: &mut FieldTrace) -> Result<FieldOutput> {
        let unit = self.normalize(q.point)?;
        let (sigma, feat) = self.density_into(unit, trace)?;
        let rgb = self.color_into(&feat, q.dir, table.input(q.appearance)?, trace)?;
        Ok(FieldOutput { sigma, rgb })
    }

    /// Density only, from a world-space point.
    pub fn sigma_at(&self, p: Vec3) -> Result<f64> {
        Ok(self.query_density(self.normalize(p)?)?.0)
    }

    /// Adds the parameter gradient of one sample given upstream gradients on its density
    /// and color. `trace` must come from [`FieldParams::eval`] of the same sample.
    pub fn backward_sample(&self, trace: &FieldTrace, d_sigma: f64, d_rgb: [f64; 3], grad: &mut FieldGrad) -> Result<()> {
        let n_density = self.density_mlp.layers.len();
        let n_color = self.color_mlp.layers.len();
        if trace.density.acts.len() != n_density + 1 || trace.color.acts.len() != n_color + 1 || trace.encode.corners.is_empty() {
            return Err(Error::MissingCache("field activations"));
        }
        let raw_c = self.color_mlp.output(&trace.color);
        let mut d_raw_c = [0.0; 3];
        for k in 0..3 {
            let y = sigmoid(clip(raw_c[k]));
            d_raw_c[k] = d_rgb[k] * y * (1.0 - y) * clip_pass(raw_c[k]);
        }
        let mut d_color_in = Vec::new();
        if d_raw_c.iter().any(|&g| g != 0.0) {
            self.color_mlp.backward(&trace.color, &d_raw_c, &mut grad.color, &mut d_color_in)?;
        } else {
            d_color_in = vec![0.0; self.color_mlp.input_width()];
        }
        let raw_d = self.density_mlp.output(&trace.density);
        let mut d_raw_d = vec![0.0; 1 + DENSITY_FEATURES];
        d_raw_d[0] = d_sigma * clip(raw_d[0]).exp() * clip_pass(raw_d[0]);
        for k in 0..DENSITY_FEATURES {
            d_raw_d[1 + k] = d_color_in[k] * clip_pass(raw_d[1 + k]);
        }
        if d_raw_d.iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let mut d_enc = Vec::new();
        self.density_mlp.backward(&trace.density, &d_raw_d, &mut grad.density, &mut d_enc)?;
        self.grid.accumulate_backward(&trace.encode, &d_enc, &mut grad.grid)
    }

    /// Batched adjoint: re-evaluates every query (activations are not kept between the
    /// forward and backward passes) and accumulates the parameter gradient.
    pub fn field_backward(
        &self,
        queries: &[FieldQuery],
        table: &AppearanceTable,
        d_sigma: &[f64],
        d_rgb: &[[f64; 3]],
        grad: &mut FieldGrad,
    ) -> Result<()> {
        if d_sigma.len() != queries.len() || d_rgb.len() != queries.len() {
            return Err(Error::MissingCache("field queries for the upstream gradients"));
        }
        let mut trace = FieldTrace::default();
        for (i, q) in queries.iter().enumerate() {
            if d_sigma[i] == 0.0 && d_rgb[i] == [0.0; 3] {
                continue;
            }
            self.eval(q, table, &mut trace)?;
            self.backward_sample(&trace, d_sigma[i], d_rgb[i], grad)?;
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        write_u8(w, matches!(self.cascade, Cascade::Coarse) as u8)?;
        for a in 0..3 {
            crate::io_util::write_f64(w, self.bbox.min[a])?;
            crate::io_util::write_f64(w, self.bbox.max[a])?;
        }
        write_u32(w, self.appearance_dim as u32)?;
        self.grid.write_to(w)?;
        self.density_mlp.write_to(w)?;
        self.color_mlp.write_to(w)
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        let cascade = if read_u8(r)? == 1 { Cascade::Coarse } else { Cascade::Fine };
        let mut bbox = Aabb::new(Vec3::ZERO, Vec3::ZERO);
        for a in 0..3 {
            bbox.min[a] = crate::io_util::read_f64(r)?;
            bbox.max[a] = crate::io_util::read_f64(r)?;
        }
        let appearance_dim = read_u32(r)? as usize;
        let grid = HashGrid::read_from(r)?;
        let density_mlp = Mlp::read_from(r)?;
        let color_mlp = Mlp::read_from(r)?;
        if density_mlp.input_width() != grid.output_width() || color_mlp.input_width() != DENSITY_FEATURES + SH_WIDTH + appearance_dim {
            return Err(Error::Checkpoint("field network widths do not match the grid".into()));
        }
        Ok(FieldParams {
            cascade,
            bbox,
            grid,
            density_mlp,
            color_mlp,
            appearance_dim,
        })
    }
}
