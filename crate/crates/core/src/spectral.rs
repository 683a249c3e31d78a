//! Orthonormal 2D DCT-II / DCT-III and low-band surgery on the resulting
//! spectra.
//!
//! Coefficient `(0, 0)` is DC; indices grow with spatial frequency along
//! each axis. The per-axis basis is scaled by `1/√N` on DC and `√(2/N)`
//! elsewhere, so the transform is orthogonal and energy-preserving.

use std::f64::consts::PI;

use crate::error::{domain_err, shape_err, Result};
use crate::exec::Exec;
use crate::grids::Grid2D;
use crate::linalg::{separable_apply, Mat};

/// DCT-II coefficients of one `height × width` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    coefficients: Vec<f64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, coefficients: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!("spectrum dims must be positive, got {height}x{width}"));
        }
        if coefficients.len() != height * width {
            return shape_err(format!(
                "expected {} coefficients for {height}x{width}, got {}",
                height * width,
                coefficients.len()
            ));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return domain_err("non-finite spectral coefficient");
        }
        Ok(Self { height, width, coefficients })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0);
        Self { height, width, coefficients: vec![0.0; height * width] }
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

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coefficients[i * self.width + j]
    }

    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|v| v * v).sum()
    }
}

/// The `n × n` orthonormal DCT-II matrix, row `k` holding basis function `k`.
pub(crate) fn dct_matrix(n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            m.set(k, i, scale * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos());
        }
    }
    m
}

/// Forward orthonormal DCT-II, rows then columns.
pub fn dct2(grid: &Grid2D) -> Result<Spectrum> {
    if grid.values().iter().any(|v| !v.is_finite()) {
        return domain_err("dct2 input has non-finite values");
    }
    let (h, w) = grid.dims();
    let coefficients = separable_apply(
        grid.values(),
        (h, w, 1),
        &dct_matrix(h),
        &dct_matrix(w),
        Exec::Sequential,
    );
    Ok(Spectrum { height: h, width: w, coefficients })
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct2(spec: &Spectrum) -> Result<Grid2D> {
    if spec.coefficients.iter().any(|v| !v.is_finite()) {
        return domain_err("idct2 input has non-finite coefficients");
    }
    let (h, w) = spec.dims();
    let values = separable_apply(
        &spec.coefficients,
        (h, w, 1),
        &dct_matrix(h).transpose(),
        &dct_matrix(w).transpose(),
        Exec::Sequential,
    );
    Grid2D::new(h, w, values)
}

/// Gain applied to embedded source coefficients.
///
/// With amplitude preservation the gain is `√(Ht·Wt / (Hs·Ws))`, which keeps
/// a constant source mapping to the same constant at the target size.
pub fn low_band_gain(target: (usize, usize), source: (usize, usize), amplitude_preserving: bool) -> f64 {
    if amplitude_preserving {
        ((target.0 * target.1) as f64 / (source.0 * source.1) as f64).sqrt()
    } else {
        1.0
    }
}

/// Replaces the `Hs × Ws` low band of `target` with the (scaled) `source`
/// coefficients; the rest of `target` is kept.
pub fn embed_low_band(target: &Spectrum, source: &Spectrum, amplitude_preserving: bool) -> Result<Spectrum> {
    let (ht, wt) = target.dims();
    let (hs, ws) = source.dims();
    if hs > ht || ws > wt {
        return shape_err(format!("source spectrum {hs}x{ws} exceeds target {ht}x{wt}"));
    }
    let gain = low_band_gain((ht, wt), (hs, ws), amplitude_preserving);
    let mut out = target.clone();
    for i in 0..hs {
        for j in 0..ws {
            out.coefficients[i * wt + j] = gain * source.get(i, j);
        }
    }
    Ok(out)
}

/// Splits spectral energy into the `i < h_cut ∧ j < w_cut` block and the rest.
pub fn band_energy(spec: &Spectrum, h_cut: usize, w_cut: usize) -> Result<(f64, f64)> {
    let (h, w) = spec.dims();
    if h_cut > h || w_cut > w {
        return shape_err(format!("band cut {h_cut}x{w_cut} outside spectrum {h}x{w}"));
    }
    let mut low = 0.0;
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let e = spec.get(i, j).powi(2);
            total += e;
            if i < h_cut && j < w_cut {
                low += e;
            }
        }
    }
    Ok((low, total - low))
}
