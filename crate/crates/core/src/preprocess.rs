//! Cellular-automata impulse filter driven by a Laplacian response.
//!
//! One pass over the interior lattice: each 3×3 cell of the Laplacian
//! response is tested for an outlying center, and flagged pixels take the
//! mean of their eight original-intensity neighbors. Every output pixel is a
//! function of the input frame alone, so rows are independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// 3×3 zero-sum kernel used for noise detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplacianMask([f64; 9]);

impl Default for LaplacianMask {
    fn default() -> Self {
        LaplacianMask([0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0])
    }
}

impl LaplacianMask {
    pub fn new(entries: [f64; 9]) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("laplacian mask has non-finite entries".into()));
        }
        let sum: f64 = entries.iter().sum();
        if sum.abs() > 1e-9 {
            return Err(Error::Config(format!("laplacian mask must sum to 0, sums to {sum}")));
        }
        Ok(LaplacianMask(entries))
    }

    /// Parses nine comma-separated reals.
    pub fn parse(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("laplacian mask: {e}")))?;
        let entries: [f64; 9] = values
            .try_into()
            .map_err(|v: Vec<f64>| Error::Config(format!("laplacian mask needs 9 values, got {}", v.len())))?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[f64; 9] {
        &self.0
    }
}

/// A 3×3 neighborhood in row-major order; index 4 is the center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell3([f64; 9]);

impl Cell3 {
    pub fn new(values: [f64; 9]) -> Self {
        Cell3(values)
    }

    /// Cell centered on an interior pixel.
    pub fn extract(frame: &Frame, row: usize, col: usize) -> Self {
        debug_assert!(row >= 1 && col >= 1 && row + 1 < frame.height() && col + 1 < frame.width());
        let mut v = [0.0; 9];
        for dr in 0..3 {
            for dc in 0..3 {
                v[dr * 3 + dc] = frame.at(row + dr - 1, col + dc - 1);
            }
        }
        Cell3(v)
    }

    #[inline]
    pub fn center(&self) -> f64 {
        self.0[4]
    }

    pub fn boundary(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().enumerate().filter(|&(i, _)| i != 4).map(|(_, &v)| v)
    }
}

/// Mean of the eight ring values.
pub fn boundary_mean(cell: &Cell3) -> f64 {
    cell.boundary().sum::<f64>() / 8.0
}

/// True when `pixel` falls outside the min/max range of the cell's ring.
pub fn is_noisy(pixel: f64, cell: &Cell3) -> bool {
    let (lo, hi) = cell
        .boundary()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    pixel < lo || pixel > hi
}

/// Interior 3×3 correlation with `mask`; border pixels are copied.
pub fn laplacian_transform(frame: &Frame, mask: &LaplacianMask) -> Result<Frame> {
    frame.ensure_min_size(3, "laplacian transform")?;
    let m = mask.entries();
    let (w, h) = (frame.width(), frame.height());
    let mut out = frame.clone();
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let mut acc = 0.0;
            for dr in 0..3 {
                for dc in 0..3 {
                    acc += m[dr * 3 + dc] * frame.at(r + dr - 1, c + dc - 1);
                }
            }
            out.set(r, c, acc);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    #[serde(default)]
    pub laplacian_mask: LaplacianMask,
}

/// Decision for one interior pixel given its Laplacian cell and its
/// original-intensity cell.
fn filter_pixel(lap: &Cell3, orig: &Cell3) -> f64 {
    let ib = boundary_mean(lap);
    let ic = lap.center();
    if is_noisy(ic, lap) && (ib - ic).abs() > ib {
        boundary_mean(orig)
    } else {
        orig.center()
    }
}

pub fn ca_filter(frame: &Frame) -> Result<Frame> {
    ca_filter_with(frame, &LaplacianMask::default())
}

pub fn ca_filter_with(frame: &Frame, mask: &LaplacianMask) -> Result<Frame> {
    let lap = laplacian_transform(frame, mask)?;
    let (w, h) = (frame.width(), frame.height());
    let mut out = frame.clone();
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let v = filter_pixel(&Cell3::extract(&lap, r, c), &Cell3::extract(frame, r, c));
            out.set(r, c, v.clamp(0.0, 255.0));
        }
    }
    for r in [0, h - 1] {
        for c in 0..w {
            out.set(r, c, out.at(r, c).clamp(0.0, 255.0));
        }
    }
    for c in [0, w - 1] {
        for r in 0..h {
            out.set(r, c, out.at(r, c).clamp(0.0, 255.0));
        }
    }
    Ok(out)
}
