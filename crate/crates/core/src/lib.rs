//! Distributed training and rendering of deformable multi-resolution hash-grid radiance
//! fields.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod field;
pub mod geom;
pub mod grid;
pub mod image;
pub mod io_util;
pub mod metrics;
pub mod partition;
pub mod render;
pub mod train;
pub mod trainer;

pub use error::{Error, Result};
