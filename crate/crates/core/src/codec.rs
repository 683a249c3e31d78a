//! Multi-scale residual vector quantization of a feature field.
//!
//! A feature field `f` is encoded as one token map per rung of a scale
//! ladder. At rung `k` the current residual `f − f̂_{k−1}` is area-averaged
//! down to `h_k × w_k`, snapped to the nearest codewords, and the
//! de-quantized map is upsampled back to full resolution and added to the
//! accumulator `f̂`. Codeword 0 is the zero vector, and a rung whose update
//! would increase `‖f − f̂‖²` is emitted as all zeros, so the error sequence
//! over rungs never increases.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dse::{interpolate, InterpKind};
use crate::error::{domain_err, shape_err, Error, Result};
use crate::exec::Exec;
use crate::grids::{Grid3D, TokenMap};
use crate::linalg::{separable_apply, Mat};

/// `V` codewords of dimension `C`. Codeword 0 is always the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    vectors: Vec<f64>,
}

/// Largest and smallest codeword norm scale used by [`Codebook::generate`].
const GEN_RADIUS_MAX: f64 = 1.0;
const GEN_RADIUS_MIN: f64 = 0.05;

impl Codebook {
    pub fn new(size: usize, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if size == 0 || dim == 0 {
            return shape_err(format!("codebook dims must be positive, got {size}x{dim}"));
        }
        if vectors.len() != size * dim {
            return shape_err(format!("expected {} codebook values, got {}", size * dim, vectors.len()));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return domain_err("codebook has non-finite entries");
        }
        if vectors[..dim].iter().any(|&v| v != 0.0) {
            return domain_err("codeword 0 must be the zero vector");
        }
        Ok(Self { size, dim, vectors })
    }

    /// Seeded procedural codebook. Codeword `j ≥ 1` is a standard Gaussian
    /// vector scaled by a radius that decays geometrically from 1.0 to 0.05,
    /// so both coarse and fine residuals find usable words.
    pub fn generate(size: usize, dim: usize, seed: u64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return shape_err(format!("codebook dims must be positive, got {size}x{dim}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = vec![0.0; size * dim];
        for j in 1..size {
            let t = if size > 2 { (j - 1) as f64 / (size - 2) as f64 } else { 0.0 };
            let radius = GEN_RADIUS_MAX * (GEN_RADIUS_MIN / GEN_RADIUS_MAX).powf(t);
            for v in &mut vectors[j * dim..(j + 1) * dim] {
                *v = radius * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Self::new(size, dim, vectors)
    }

    /// Reads a `V × 1 × C` tensor.
    pub fn from_grid(grid: &Grid3D) -> Result<Self> {
        if grid.width() != 1 {
            return shape_err(format!("codebook tensor must be Vx1xC, got {:?}", grid.dims()));
        }
        Self::new(grid.height(), grid.channels(), grid.values().to_vec())
    }

    pub fn to_grid(&self) -> Grid3D {
        Grid3D::from_raw(self.size, 1, self.dim, self.vectors.clone())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    /// Index of the closest codeword in squared Euclidean distance; ties go to
    /// the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.dim);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..self.size {
            let d: f64 = self.vector(j).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }
}

/// Token-map resolutions, coarsest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleLadder(Vec<(usize, usize)>);

impl ScaleLadder {
    pub fn new(scales: Vec<(usize, usize)>) -> Result<Self> {
        if scales.is_empty() {
            return shape_err("scale ladder is empty");
        }
        if scales.iter().any(|&(h, w)| h == 0 || w == 0) {
            return shape_err("scale ladder has a zero dimension");
        }
        if scales.windows(2).any(|p| p[1].0 < p[0].0 || p[1].1 < p[0].1) {
            return shape_err("scale ladder must be non-decreasing on both axes");
        }
        Ok(Self(scales))
    }

    pub fn scales(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn finest(&self) -> (usize, usize) {
        *self.0.last().unwrap()
    }

    /// Checks that the finest rung matches a feature field.
    pub fn check_field(&self, field: &Grid3D) -> Result<()> {
        let (h, w, _) = field.dims();
        if self.finest() != (h, w) {
            return shape_err(format!(
                "ladder ends at {:?} but the field is {h}x{w}",
                self.finest()
            ));
        }
        Ok(())
    }
}

impl FromStr for ScaleLadder {
    type Err = Error;
    /// Parses `1x1,2x2,4x4`.
    fn from_str(s: &str) -> Result<Self> {
        let scales = s
            .split(',')
            .map(|part| parse_hw(part.trim()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scales)
    }
}

impl fmt::Display for ScaleLadder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(h, w)| format!("{h}x{w}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses `HxW`.
pub fn parse_hw(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected HxW, got {s:?}"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    Ok((h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?))
}

pub fn quantize_nearest(residual: &Grid3D, cb: &Codebook) -> Result<TokenMap> {
    quantize_nearest_with(residual, cb, Exec::default())
}

pub fn quantize_nearest_with(residual: &Grid3D, cb: &Codebook, exec: Exec) -> Result<TokenMap> {
    let (h, w, c) = residual.dims();
    if c != cb.dim() {
        return shape_err(format!("residual has {c} channels, codebook dim is {}", cb.dim()));
    }
    let indices = exec.map(h * w, |p| cb.nearest(residual.pixel(p / w, p % w)));
    TokenMap::new(h, w, indices)
}

pub fn dequantize(tokens: &TokenMap, cb: &Codebook) -> Result<Grid3D> {
    tokens.validate(cb.size())?;
    let mut values = Vec::with_capacity(tokens.indices().len() * cb.dim());
    for &t in tokens.indices() {
        values.extend_from_slice(cb.vector(t));
    }
    Ok(Grid3D::from_raw(tokens.height(), tokens.width(), cb.dim(), values))
}

/// The upsampling operator `U(·)`; same contract as [`interpolate`].
pub fn upsample_u(z: &Grid3D, target_h: usize, target_w: usize, kind: InterpKind) -> Result<Grid3D> {
    interpolate(z, target_h, target_w, kind)
}

fn area_matrix(source: usize, target: usize) -> Mat {
    let mut m = Mat::zeros(target, source);
    let span = source as f64 / target as f64;
    for i in 0..target {
        let (lo, hi) = (i as f64 * span, (i + 1) as f64 * span);
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(source);
        for s in first..last {
            let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
            if overlap > 0.0 {
                m.set(i, s, overlap / span);
            }
        }
    }
    m
}

/// Area-averaging downsample. Each output cell is the mean of the source
/// region it covers, with fractional overlaps weighted.
pub fn downsample_area(grid: &Grid3D, target_h: usize, target_w: usize) -> Result<Grid3D> {
    let (h, w, c) = grid.dims();
    if target_h == 0 || target_w == 0 || target_h > h || target_w > w {
        return shape_err(format!("cannot area-downsample {h}x{w} to {target_h}x{target_w}"));
    }
    let values = separable_apply(
        grid.values(),
        (h, w, c),
        &area_matrix(h, target_h),
        &area_matrix(w, target_w),
        Exec::Sequential,
    );
    Ok(Grid3D::from_raw(target_h, target_w, c, values))
}

/// Running full-resolution reconstruction `f̂_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    f_hat: Grid3D,
    step: usize,
}

impl Accumulator {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { f_hat: Grid3D::zeros(height, width, channels), step: 0 }
    }

    pub fn f_hat(&self) -> &Grid3D {
        &self.f_hat
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// `f̂ ← f̂ + U(dequantize(tokens))`.
    pub fn add(&mut self, tokens: &TokenMap, cb: &Codebook, kind: InterpKind) -> Result<()> {
        let (h, w, _) = self.f_hat.dims();
        let z = upsample_u(&dequantize(tokens, cb)?, h, w, kind)?;
        self.f_hat = self.f_hat.affine(1.0, &z, 1.0)?;
        self.step += 1;
        Ok(())
    }
}

fn check_codebook(field: &Grid3D, cb: &Codebook) -> Result<()> {
    if field.channels() != cb.dim() {
        return shape_err(format!(
            "field has {} channels, codebook dim is {}",
            field.channels(),
            cb.dim()
        ));
    }
    Ok(())
}

pub fn encode_multiscale(f: &Grid3D, ladder: &ScaleLadder, cb: &Codebook, kind: InterpKind) -> Result<Vec<TokenMap>> {
    encode_multiscale_with(f, ladder, cb, kind, Exec::default())
}

pub fn encode_multiscale_with(
    f: &Grid3D,
    ladder: &ScaleLadder,
    cb: &Codebook,
    kind: InterpKind,
    exec: Exec,
) -> Result<Vec<TokenMap>> {
    Ok(encode_multiscale_traced(f, ladder, cb, kind, exec)?.tokens)
}

/// Encoder output with per-rung bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeTrace {
    pub tokens: Vec<TokenMap>,
    /// `true` where the nearest-codeword map would have raised the
    /// full-resolution error and the rung was emitted as all zeros instead.
    pub rejected: Vec<bool>,
    /// `MSE(f, f̂_k)` after each rung.
    pub mse: Vec<f64>,
}

/// Runs the encoder and reports which rungs fell back to the zero map.
///
/// With bilinear `U` the locally nearest codewords can occasionally increase
/// the full-resolution error (the upsampled update bleeds across cells). A
/// rung whose update would do that is replaced by the all-zero map, so the
/// per-rung error never increases.
pub fn encode_multiscale_traced(
    f: &Grid3D,
    ladder: &ScaleLadder,
    cb: &Codebook,
    kind: InterpKind,
    exec: Exec,
) -> Result<EncodeTrace> {
    ladder.check_field(f)?;
    check_codebook(f, cb)?;
    let (h, w, c) = f.dims();
    let mut acc = Accumulator::new(h, w, c);
    let mut err = f.mse(acc.f_hat())?;
    let mut trace = EncodeTrace { tokens: Vec::new(), rejected: Vec::new(), mse: Vec::new() };
    for &(hk, wk) in ladder.scales() {
        let residual = downsample_area(&f.affine(1.0, acc.f_hat(), -1.0)?, hk, wk)?;
        let tokens = quantize_nearest_with(&residual, cb, exec)?;
        let mut next = acc.clone();
        next.add(&tokens, cb, kind)?;
        let next_err = f.mse(next.f_hat())?;
        if next_err <= err {
            acc = next;
            err = next_err;
            trace.tokens.push(tokens);
            trace.rejected.push(false);
        } else {
            let zeros = TokenMap::filled(hk, wk, 0);
            acc.add(&zeros, cb, kind)?;
            trace.tokens.push(zeros);
            trace.rejected.push(true);
        }
        trace.mse.push(err);
    }
    Ok(trace)
}

fn check_tokens(tokens: &[TokenMap], ladder: &ScaleLadder) -> Result<()> {
    if tokens.len() != ladder.len() {
        return shape_err(format!("{} token maps for a {}-rung ladder", tokens.len(), ladder.len()));
    }
    for (k, (t, &s)) in tokens.iter().zip(ladder.scales()).enumerate() {
        if t.dims() != s {
            return shape_err(format!("token map {k} is {:?}, ladder wants {s:?}", t.dims()));
        }
    }
    Ok(())
}

/// Accumulated reconstructions `f̂_1, …, f̂_K`.
pub fn reconstruct_partials(
    tokens: &[TokenMap],
    ladder: &ScaleLadder,
    cb: &Codebook,
    kind: InterpKind,
) -> Result<Vec<Grid3D>> {
    check_tokens(tokens, ladder)?;
    let (h, w) = ladder.finest();
    let mut acc = Accumulator::new(h, w, cb.dim());
    tokens
        .iter()
        .map(|t| {
            acc.add(t, cb, kind)?;
            Ok(acc.f_hat().clone())
        })
        .collect()
}

pub fn reconstruct(tokens: &[TokenMap], ladder: &ScaleLadder, cb: &Codebook, kind: InterpKind) -> Result<Grid3D> {
    Ok(reconstruct_partials(tokens, ladder, cb, kind)?.pop().unwrap())
}
