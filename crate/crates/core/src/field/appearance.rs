use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::io_util::{read_f32, read_u32, read_u8, write_f32, write_u32, write_u8};

/// Channels used for the gram matrix.
const CHANNELS: usize = 3;
const GRAM_WIDTH: usize = CHANNELS * CHANNELS;
/// Images are resampled to this size before the gram matrix is taken.
pub const GRAM_IMAGE_SIZE: u32 = 64;

/// Appearance id that selects the mean training row.
pub const MEAN_APPEARANCE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Precomputed,
    GramPca,
}

/// Fixed per-image appearance vectors. Rows never receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceTable {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    pub provenance: Provenance,
    /// Factor applied to rows before they enter the color network.
    pub input_scale: f64,
    /// PCA eigenvalues, descending (empty for precomputed tables).
    pub eigenvalues: Vec<f64>,
    /// Principal axes in gram space, one per kept component.
    pub components: Vec<Vec<f64>>,
    /// Mean gram vector subtracted before projection.
    pub center: Vec<f64>,
    scaled: Vec<Vec<f64>>,
    mean_input: Vec<f64>,
}

impl AppearanceTable {
    pub fn precomputed(rows: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape(format!("appearance rows must have {dim} entries")));
        }
        Ok(Self::assemble(dim, rows, Provenance::Precomputed, 1.0, Vec::new(), Vec::new(), Vec::new()))
    }

    /// Zero-dimensional table: the color network sees no appearance input.
    pub fn empty(images: usize) -> Self {
        Self::assemble(0, vec![Vec::new(); images], Provenance::Precomputed, 1.0, Vec::new(), Vec::new(), Vec::new())
    }

    fn assemble(
        dim: usize,
        rows: Vec<Vec<f64>>,
        provenance: Provenance,
        input_scale: f64,
        eigenvalues: Vec<f64>,
        components: Vec<Vec<f64>>,
        center: Vec<f64>,
    ) -> Self {
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * input_scale).collect()).collect();
        let mut mean_input = vec![0.0; dim];
        for r in &scaled {
            for (m, v) in mean_input.iter_mut().zip(r) {
                *m += v / rows.len() as f64;
            }
        }
        AppearanceTable {
            dim,
            rows,
            provenance,
            input_scale,
            eigenvalues,
            components,
            center,
            scaled,
            mean_input,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Color-network input for an image, or the mean row for [`MEAN_APPEARANCE`].
    pub fn input(&self, id: u32) -> Result<&[f64]> {
        if id == MEAN_APPEARANCE {
            return Ok(&self.mean_input);
        }
        self.scaled.get(id as usize).map(|v| v.as_slice()).ok_or(Error::OutOfRange {
            index: id as usize,
            len: self.rows.len(),
        })
    }

    /// Row-major little-endian f32 matrix preceded by (rows, dim, provenance, scale). Row `i`
    /// belongs to the `i`-th training image.
    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        write_u32(w, self.rows.len() as u32)?;
        write_u32(w, self.dim as u32)?;
        write_u8(w, matches!(self.provenance, Provenance::GramPca) as u8)?;
        crate::io_util::write_f64(w, self.input_scale)?;
        for r in &self.rows {
            for &v in r {
                write_f32(w, v as f32)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        let n = read_u32(r)? as usize;
        let dim = read_u32(r)? as usize;
        let provenance = if read_u8(r)? == 1 {
            Provenance::GramPca
        } else {
            Provenance::Precomputed
        };
        let scale = crate::io_util::read_f64(r)?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            rows.push((0..dim).map(|_| read_f32(r).map(|v| v as f64)).collect::<std::io::Result<Vec<_>>>()?);
        }
        Ok(Self::assemble(dim, rows, provenance, scale, Vec::new(), Vec::new(), Vec::new()))
    }
}

/// Flattened `3x3` gram matrix of the raw (0..255) RGB channels, averaged over pixels.
pub fn gram_vector(image: &RgbImage) -> Result<[f64; GRAM_WIDTH]> {
    let small = image.resized(GRAM_IMAGE_SIZE, GRAM_IMAGE_SIZE)?;
    let mut g = [0.0; GRAM_WIDTH];
    let n = small.pixel_count() as f64;
    for i in 0..small.pixel_count() {
        let p = small.pixel(i).map(|v| v * 255.0);
        for a in 0..CHANNELS {
            for b in 0..CHANNELS {
                g[a * CHANNELS + b] += p[a] * p[b] / n;
            }
        }
    }
    Ok(g)
}

/// Gram matrices reduced by PCA to `dim` coordinates (zero padded past 9).
///
/// Network inputs are divided by the square root of the leading eigenvalue so the first
/// coordinate has unit variance over the training set.
pub fn build_appearance_table(images: &[RgbImage], dim: usize) -> Result<AppearanceTable> {
    if images.len() <= GRAM_WIDTH {
        return Err(Error::config(format!(
            "appearance PCA needs more than {GRAM_WIDTH} images, got {}",
            images.len()
        )));
    }
    let n = images.len();
    let grams = images.iter().map(gram_vector).collect::<Result<Vec<_>>>()?;
    let mut center = vec![0.0; GRAM_WIDTH];
    for g in &grams {
        for k in 0..GRAM_WIDTH {
            center[k] += g[k] / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, GRAM_WIDTH, |i, k| grams[i][k] - center[k]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..GRAM_WIDTH).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let kept = dim.min(GRAM_WIDTH);
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let components: Vec<Vec<f64>> = order[..kept]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; dim];
            for (c, axis) in components.iter().enumerate() {
                row[c] = (0..GRAM_WIDTH).map(|k| centered[(i, k)] * axis[k]).sum();
            }
            row
        })
        .collect();
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let scale = if top > 1e-12 { 1.0 / top.sqrt() } else { 1.0 };
    Ok(AppearanceTable::assemble(dim, rows, Provenance::GramPca, scale, eigenvalues, components, center))
}
