//! In-memory RGB images with channels in `[0, 1]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major, 3 values per pixel.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.pixel(self.index(x, y))
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = self.index(x, y);
        self.set_pixel(i, rgb);
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    pub fn set_pixel(&mut self, i: usize, rgb: [f64; 3]) {
        self.data[3 * i..3 * i + 3].copy_from_slice(&rgb);
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Values rounded to 8 bits, as stored on disk.
    pub fn quantized(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
        }
    }

    /// Area-averaged resampling to `w x h`.
    pub fn resized(&self, w: u32, h: u32) -> Result<RgbImage> {
        if self.width == 0 || self.height == 0 || w == 0 || h == 0 {
            return Err(Error::Shape("cannot resize an empty image".into()));
        }
        if (w, h) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let mut out = RgbImage::new(w, h);
        let sx = self.width as f64 / w as f64;
        let sy = self.height as f64 / h as f64;
        for y in 0..h {
            let (y0, y1) = (y as f64 * sy, (y + 1) as f64 * sy);
            for x in 0..w {
                let (x0, x1) = (x as f64 * sx, (x + 1) as f64 * sx);
                let mut acc = [0.0; 3];
                let mut area = 0.0;
                for py in y0.floor() as u32..(y1.ceil() as u32).min(self.height) {
                    let wy = (y1.min(py as f64 + 1.0) - y0.max(py as f64)).max(0.0);
                    for px in x0.floor() as u32..(x1.ceil() as u32).min(self.width) {
                        let wx = (x1.min(px as f64 + 1.0) - x0.max(px as f64)).max(0.0);
                        let c = self.get(px, py);
                        for k in 0..3 {
                            acc[k] += wx * wy * c[k];
                        }
                        area += wx * wy;
                    }
                }
                out.set(x, y, acc.map(|v| v / area));
            }
        }
        Ok(out)
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
