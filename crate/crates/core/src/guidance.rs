//! Single-channel guidance producers.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// BT.601 luma weights for R, G, B.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Interleaved RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Size {
                height,
                width,
                reason: "dimensions must be positive",
            });
        }
        if pixels.len() != height * width {
            return Err(Error::Size {
                height,
                width,
                reason: "pixel count does not match dimensions",
            });
        }
        if pixels.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Invalid("channel value outside [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }
}

/// Per-pixel luminance.
pub fn guidance_from_rgb(img: &RgbImage) -> Result<Grid> {
    let values = img
        .pixels
        .iter()
        .map(|&[r, g, b]| LUMA[0] * r + LUMA[1] * g + LUMA[2] * b)
        .collect();
    Grid::from_vec(img.height, img.width, values)
}

/// Min-max normalized ground truth; a constant grid maps to zeros.
pub fn guidance_from_gt(gt: &Grid) -> Result<Grid> {
    let (lo, hi) = gt
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range <= 0.0 {
        return Grid::zeros(gt.height(), gt.width());
    }
    gt.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}
