//! Grayscale frame grid shared by every stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grid of real intensities.
///
/// Frames read from disk hold values in `[0, 255]`; intermediate results
/// (for example a Laplacian response) may leave that range, so the range is
/// checked separately by [`Frame::check_intensity_range`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "zero-sized frame {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("frame pixel {i}")));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "zero-sized frame");
        Frame {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Builds a frame from `f(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "zero-sized frame");
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Frame {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_intensity_range(&self) -> Result<()> {
        match self.pixels.iter().position(|v| !(0.0..=255.0).contains(v)) {
            Some(i) => Err(Error::InvalidInput(format!(
                "pixel {i} = {} outside [0, 255]",
                self.pixels[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn ensure_min_size(&self, min: usize, what: &str) -> Result<()> {
        if self.width < min || self.height < min {
            return Err(Error::Shape(format!(
                "{what} needs at least {min}x{min}, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Rounds and clamps every pixel into an 8-bit buffer.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}
