//! Synthetic reference feature fields for self-contained experiments.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::grids::Grid3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoKind {
    /// A few Gaussian bumps with per-channel signed amplitudes.
    Blobs,
    /// Per-channel checkerboards with a random cell size and phase.
    Checkerboard,
}

impl FromStr for DemoKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "checkerboard" | "checker" => Ok(Self::Checkerboard),
            other => Err(Error::Config(format!("unknown demo kind {other:?}"))),
        }
    }
}

impl fmt::Display for DemoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Blobs => "blobs",
            Self::Checkerboard => "checkerboard",
        })
    }
}

pub fn synthesize(kind: DemoKind, height: usize, width: usize, channels: usize, seed: u64) -> Result<Grid3D> {
    if height == 0 || width == 0 || channels == 0 {
        return shape_err(format!("demo dims must be positive, got {height}x{width}x{channels}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        DemoKind::Blobs => {
            let count = 3 + (height.max(width) / 4).min(5);
            let blobs: Vec<(f64, f64, f64, Vec<f64>)> = (0..count)
                .map(|_| {
                    let cy = rng.random_range(0.0..height as f64);
                    let cx = rng.random_range(0.0..width as f64);
                    let sigma = rng.random_range(0.15..0.4) * height.min(width).max(2) as f64;
                    let amps = (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (cy, cx, sigma, amps)
                })
                .collect();
            Grid3D::from_fn(height, width, channels, |i, j, c| {
                blobs
                    .iter()
                    .map(|(cy, cx, s, a)| {
                        let d2 = (i as f64 + 0.5 - cy).powi(2) + (j as f64 + 0.5 - cx).powi(2);
                        a[c] * (-d2 / (2.0 * s * s)).exp()
                    })
                    .sum()
            })
        }
        DemoKind::Checkerboard => {
            let params: Vec<(usize, usize, f64)> = (0..channels)
                .map(|_| {
                    let cell = rng.random_range(1..=(height.min(width) / 2).max(1));
                    let phase = rng.random_range(0..2);
                    (cell, phase, rng.random_range(0.3..1.0))
                })
                .collect();
            Grid3D::from_fn(height, width, channels, |i, j, c| {
                let (cell, phase, amp) = params[c];
                if (i / cell + j / cell + phase) % 2 == 0 {
                    amp
                } else {
                    -amp
                }
            })
        }
    }
}
