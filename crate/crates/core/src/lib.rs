//! Gaussian splatting maps, a CPU rasterizer with analytic gradients,
//! submap training and visual relocalization against the map.

pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod image;
pub mod map;
pub mod raster;
pub mod reloc;
pub mod train;

pub use error::{Error, Result};
