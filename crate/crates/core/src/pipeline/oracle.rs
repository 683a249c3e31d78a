//! Corrupted teacher oracle standing in for the transformer.
//!
//! The oracle scores the teacher token at each location, blends in the
//! upsampled ideal logits of the previous scale (a model that re-predicts
//! coarse content instead of adding detail), and adds seeded Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::sampler::stream_key;
use crate::dse::{interpolate, InterpKind};
use crate::error::{domain_err, shape_err, Result};
use crate::grids::{Grid3D, TokenMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Logit given to the teacher token.
    pub logit_scale: f64,
    /// Standard deviation of the iid logit noise.
    pub noise_sigma: f64,
    /// Weight of the upsampled previous-scale ideal logits.
    pub lowpass_lambda: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { logit_scale: 8.0, noise_sigma: 1.0, lowpass_lambda: 0.5, seed: 0 }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return domain_err(format!("logit_scale must be > 0, got {}", self.logit_scale));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return domain_err(format!("noise sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.lowpass_lambda) {
            return domain_err(format!("lambda must lie in [0, 1], got {}", self.lowpass_lambda));
        }
        Ok(())
    }

    /// The same oracle re-keyed for one run seed.
    pub fn for_run(&self, run_seed: u64) -> Self {
        Self { seed: stream_key(&[self.seed, run_seed]), ..*self }
    }
}

/// `scale · onehot(tokens)` over a vocabulary of `vocab`.
pub fn ideal_logits(tokens: &TokenMap, vocab: usize, scale: f64) -> Result<Grid3D> {
    tokens.validate(vocab)?;
    let (h, w) = tokens.dims();
    let mut values = vec![0.0; h * w * vocab];
    for (p, &t) in tokens.indices().iter().enumerate() {
        values[p * vocab + t] = scale;
    }
    Grid3D::new(h, w, vocab, values)
}

/// Oracle logits for step `k` (1-based).
pub fn oracle_logits(
    teacher: &TokenMap,
    prev_ideal: Option<&Grid3D>,
    vocab: usize,
    cfg: &OracleConfig,
    k: usize,
) -> Result<Grid3D> {
    cfg.validate()?;
    let (h, w) = teacher.dims();
    let ideal = ideal_logits(teacher, vocab, cfg.logit_scale)?;
    let mut logits = match prev_ideal {
        Some(prev) if cfg.lowpass_lambda > 0.0 => {
            if prev.channels() != vocab {
                return shape_err(format!(
                    "previous logits have {} channels, vocabulary is {vocab}",
                    prev.channels()
                ));
            }
            let up = interpolate(prev, h, w, InterpKind::Linear)?;
            ideal.affine(1.0 - cfg.lowpass_lambda, &up, cfg.lowpass_lambda)?
        }
        _ => ideal,
    };
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, k as u64]));
        let noisy: Vec<f64> = logits.values().iter().map(|v| v + normal.sample(&mut rng)).collect();
        logits = Grid3D::new(h, w, vocab, noisy)?;
    }
    Ok(logits)
}
