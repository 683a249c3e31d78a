//! Per-location categorical sampling.
//!
//! Each location draws from its own counter-keyed random stream derived
//! from `(seed, step, i, j)`, so two runs that differ only in their logits
//! consume identical randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain_err, Result};
use crate::exec::Exec;
use crate::grids::{Grid3D, TokenMap};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one stream key.
pub fn stream_key(words: &[u64]) -> u64 {
    words.iter().fold(0x5EED_0F55_A11C_E5u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Lowest index of the maximum.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `softmax(scores / temperature)` with uniform `u ∈ [0, 1)`.
pub fn draw_softmax(scores: &[f64], temperature: f64, u: f64) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    // u·total can round up to the full sum; fall back to the last non-zero weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Samples a token per location from `logits` (channels = vocabulary).
pub fn sample_map(logits: &Grid3D, temperature: f64, seed: u64, step: usize, argmax_only: bool) -> Result<TokenMap> {
    sample_map_with(logits, temperature, seed, step, argmax_only, Exec::default())
}

pub fn sample_map_with(
    logits: &Grid3D,
    temperature: f64,
    seed: u64,
    step: usize,
    argmax_only: bool,
    exec: Exec,
) -> Result<TokenMap> {
    if !logits.is_finite() {
        return domain_err("logits contain non-finite values");
    }
    if !argmax_only && !(temperature.is_finite() && temperature > 0.0) {
        return domain_err(format!("temperature must be > 0, got {temperature}"));
    }
    let (h, w, _) = logits.dims();
    let indices = exec.map(h * w, |p| {
        let (i, j) = (p / w, p % w);
        let scores = logits.pixel(i, j);
        if argmax_only {
            argmax(scores)
        } else {
            let key = stream_key(&[seed, step as u64, i as u64, j as u64]);
            let u: f64 = ChaCha8Rng::seed_from_u64(key).random();
            draw_softmax(scores, temperature, u)
        }
    });
    TokenMap::new(h, w, indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_picks_first_maximum() {
        let l = Grid3D::new(1, 1, 3, vec![10.0, 0.0, 0.0]).unwrap();
        assert_eq!(sample_map(&l, 1.0, 0, 1, true).unwrap().get(0, 0), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn uniform_logits_give_uniform_frequencies() {
        // 100k draws per category; each count is binomial(n, 1/V)
        let v = 4;
        let draws_per_category = 100_000;
        let n = v * draws_per_category;
        let side = (n as f64).sqrt() as usize;
        let logits = Grid3D::zeros(side, n / side, v);
        let tokens = sample_map(&logits, 1.0, 12345, 1, false).unwrap();
        let total = tokens.indices().len() as f64;
        let p = 1.0 / v as f64;
        let se = (p * (1.0 - p) / total).sqrt();
        for cat in 0..v {
            let freq = tokens.indices().iter().filter(|&&t| t == cat).count() as f64 / total;
            assert!((freq - p).abs() < 3.0 * se, "category {cat}: {freq}");
        }
    }

    #[test]
    fn shift_invariance_at_fixed_seed() {
        let mut s = 7u64;
        let logits = Grid3D::from_fn(6, 6, 5, |_, _, _| {
            s = splitmix64(s);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        })
        .unwrap();
        let shifted = Grid3D::new(6, 6, 5, logits.values().iter().map(|v| v + 3.0).collect()).unwrap();
        for (t, am) in [(1.0, false), (0.5, false), (1.0, true)] {
            assert_eq!(
                sample_map(&logits, t, 9, 2, am).unwrap(),
                sample_map(&shifted, t, 9, 2, am).unwrap()
            );
        }
    }

    #[test]
    fn streams_depend_on_every_key_word() {
        let logits = Grid3D::zeros(8, 8, 16);
        let base = sample_map(&logits, 1.0, 1, 1, false).unwrap();
        assert_ne!(base, sample_map(&logits, 1.0, 2, 1, false).unwrap());
        assert_ne!(base, sample_map(&logits, 1.0, 1, 2, false).unwrap());
        assert_eq!(base, sample_map_with(&logits, 1.0, 1, 1, false, Exec::Sequential).unwrap());
    }

    #[test]
    fn invalid_inputs() {
        let l = Grid3D::zeros(1, 1, 2);
        assert!(sample_map(&l, 0.0, 0, 1, false).is_err());
        assert!(sample_map(&l, -1.0, 0, 1, false).is_err());
        assert!(sample_map(&l, 0.0, 0, 1, true).is_ok());
    }

    #[test]
    fn low_temperature_approaches_argmax() {
        let l = Grid3D::new(1, 1, 3, vec![0.0, 1.0, 0.5]).unwrap();
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(draw_softmax(l.pixel(0, 0), 1e-3, u), 1);
        }
    }
}
