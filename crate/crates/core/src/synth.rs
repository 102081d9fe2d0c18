//! Synthetic texture videos for end-to-end checks and demos.
//!
//! Five classes: a checkerboard and sinusoidal stripes at 11.25°, 56.25°,
//! 101.25° and 146.25°. The rotation off the image axes keeps gradients away
//! from orientation-bin edges, and gives every stripe class a different
//! neighbor pair with the smallest intensity difference. Each
//! video draws its own period and phase; frames drift the phase over time and
//! carry uniform noise and sparse impulse noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::frame::Frame;
use crate::frameio::save_pgm;

pub const CLASS_NAMES: [&str; 5] = ["checker", "stripes_011", "stripes_056", "stripes_101", "stripes_146"];

/// Rotation of every pattern away from the image axes, in degrees.
const OFFSET: f64 = 11.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    pub size: usize,
    pub impulse_density: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            videos_per_class: 20,
            frames_per_video: 10,
            size: 64,
            impulse_density: 0.01,
            noise_amplitude: 5.0,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct VideoParams {
    period: f64,
    phase: f64,
    drift: f64,
    contrast: f64,
}

fn clean_pixel(class: usize, p: &VideoParams, t: usize, r: usize, c: usize) -> f64 {
    let phase = p.phase + p.drift * t as f64;
    let v = match class {
        0 => {
            let (s, k) = OFFSET.to_radians().sin_cos();
            let (x, y) = (c as f64 * k - r as f64 * s, c as f64 * s + r as f64 * k);
            let half = p.period / 2.0;
            let shift = phase / (2.0 * PI) * p.period;
            let cell = ((x + shift) / half).floor() as i64 + ((y + shift) / half).floor() as i64;
            if cell.rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            }
        }
        k => {
            let theta = (OFFSET + 45.0 * (k - 1) as f64).to_radians();
            let (x, y) = (c as f64, r as f64);
            (2.0 * PI * (x * theta.cos() + y * theta.sin()) / p.period + phase).sin()
        }
    };
    128.0 + p.contrast * v
}

/// One frame of a video; deterministic in its arguments.
pub fn texture_frame(class: usize, video: usize, t: usize, spec: &SynthSpec) -> Frame {
    let mut vrng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((class as u64) << 40) ^ ((video as u64) << 20));
    let params = VideoParams {
        period: vrng.gen_range(6.0..12.0),
        phase: vrng.gen_range(0.0..2.0 * PI),
        drift: vrng.gen_range(0.2..0.6),
        contrast: vrng.gen_range(50.0..90.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((class as u64) << 40) ^ ((video as u64) << 20) ^ (t as u64 + 1));
    Frame::from_fn(spec.size, spec.size, |r, c| {
        let noise = rng.gen_range(-spec.noise_amplitude..=spec.noise_amplitude);
        let v = if rng.gen::<f64>() < spec.impulse_density {
            if rng.gen::<bool>() {
                255.0
            } else {
                0.0
            }
        } else {
            clean_pixel(class, &params, t, r, c) + noise
        };
        v.round().clamp(0.0, 255.0)
    })
}

/// Writes `root/<class>/video_XX/frame_XXXXX.pgm`.
pub fn write_dataset(root: impl AsRef<Path>, spec: &SynthSpec) -> Result<()> {
    let root = root.as_ref();
    for (class, name) in CLASS_NAMES.iter().enumerate() {
        for video in 0..spec.videos_per_class {
            for t in 0..spec.frames_per_video {
                let path = root.join(name).join(format!("video_{video:02}")).join(format!("frame_{t:05}.pgm"));
                save_pgm(&texture_frame(class, video, t, spec), path)?;
            }
        }
    }
    Ok(())
}
