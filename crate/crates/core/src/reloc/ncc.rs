//! Zero-mean normalized cross-correlation on luma.

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

/// Standard deviations below this count as a constant image.
const MIN_STD: f64 = 1e-10;

/// Pre-centered image for repeated correlation against many candidates.
#[derive(Debug, Clone)]
pub struct Centered {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
    norm: f64,
}

impl Centered {
    pub fn new(img: &GrayImage) -> Result<Self> {
        let n = img.data.len();
        if n == 0 {
            return Err(Error::DegenerateImage);
        }
        let mean = img.data.iter().sum::<f64>() / n as f64;
        let values: Vec<f64> = img.data.iter().map(|v| v - mean).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm / (n as f64).sqrt() > MIN_STD) {
            return Err(Error::DegenerateImage);
        }
        Ok(Centered {
            width: img.width,
            height: img.height,
            values,
            norm,
        })
    }

    pub fn correlate(&self, other: &Centered) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::InvalidInput(format!(
                "ncc size mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok((dot / (self.norm * other.norm)).clamp(-1.0, 1.0))
    }
}

/// Correlation of two grayscale images, in `[-1, 1]`.
pub fn ncc_gray(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidInput("ncc needs images of equal size".into()));
    }
    Centered::new(a)?.correlate(&Centered::new(b)?)
}

/// Correlation of the luma channels of two color images.
pub fn ncc(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.same_size(b)?;
    ncc_gray(&a.to_gray(), &b.to_gray())
}
