//! Guided logit update and the surrogate objective it maximizes.
//!
//! For step logits `ℓ_k` and a prior `ℓ_prior`, the semantic residual is
//! `Δ = ℓ_k − ℓ_prior` and the guided logits are `ℓ_k + β·Δ`. That update is
//! the unique maximizer of
//!
//! ```text
//! L(ℓ') = β·⟨ℓ', Δ⟩ − ½‖ℓ' − ℓ_k‖²
//! ```
//!
//! whose Hessian is `−I`. [`verify_closed_form`] checks this numerically.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{domain_err, shape_err, Error, Result};
use crate::grids::Grid3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decay {
    #[default]
    Linear,
    Constant,
}

impl FromStr for Decay {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Config(format!("unknown decay mode {other:?}"))),
        }
    }
}

impl fmt::Display for Decay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Constant => "constant",
        })
    }
}

/// Guidance strength per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceSchedule {
    beta0: f64,
    steps: usize,
    decay: Decay,
}

impl GuidanceSchedule {
    pub fn new(beta0: f64, steps: usize, decay: Decay) -> Result<Self> {
        if !(beta0.is_finite() && beta0 >= 0.0) {
            return domain_err(format!("initial guidance scale must be finite and >= 0, got {beta0}"));
        }
        if steps == 0 {
            return domain_err("schedule needs at least one step");
        }
        Ok(Self { beta0, steps, decay })
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn decay(&self) -> Decay {
        self.decay
    }

    /// `β_k` for 1-based step `k`: `β·(1 − (k−1)/K)` under linear decay.
    pub fn beta_at(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.steps {
            return domain_err(format!("step {k} outside 1..={}", self.steps));
        }
        Ok(match self.decay {
            // β(1 − (k−1)/K) as β·(K−k+1)/K, which makes β_K = β/K exact
            Decay::Linear if k == 1 => self.beta0,
            Decay::Linear => self.beta0 * (self.steps - k + 1) as f64 / self.steps as f64,
            Decay::Constant => self.beta0,
        })
    }
}

/// `ℓ_k − ℓ_prior` for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticResidual(Grid3D);

impl SemanticResidual {
    pub fn delta(&self) -> &Grid3D {
        &self.0
    }

    pub fn into_inner(self) -> Grid3D {
        self.0
    }
}

pub fn semantic_residual(lk: &Grid3D, lprior: &Grid3D) -> Result<SemanticResidual> {
    lk.affine(1.0, lprior, -1.0).map(SemanticResidual)
}

/// `ℓ_k + β·(ℓ_k − ℓ_prior)`. Rejects negative `β`.
///
/// The first scale has no prior; callers skip this step there.
pub fn apply_ssg(lk: &Grid3D, lprior: &Grid3D, beta: f64) -> Result<Grid3D> {
    let mut out = Grid3D::zeros(lk.height(), lk.width(), lk.channels());
    apply_ssg_into(lk, lprior, beta, &mut out)?;
    Ok(out)
}

/// [`apply_ssg`] into a preallocated grid of the same shape.
pub fn apply_ssg_into(lk: &Grid3D, lprior: &Grid3D, beta: f64, out: &mut Grid3D) -> Result<()> {
    if !(beta.is_finite() && beta >= 0.0) {
        return domain_err(format!("guidance scale must be finite and >= 0, got {beta}"));
    }
    if !lk.same_shape(lprior) || !lk.same_shape(out) {
        return shape_err(format!(
            "shape mismatch: {:?}, {:?}, {:?}",
            lk.dims(),
            lprior.dims(),
            out.dims()
        ));
    }
    // same rounding as lk + β·(lk − lprior) built from the residual
    for ((o, x), p) in out.values_mut().iter_mut().zip(lk.values()).zip(lprior.values()) {
        *o = x + beta * (x - p);
    }
    Ok(())
}

fn same_len(a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() != c.len() {
        return shape_err(format!("length mismatch: {}, {}, {}", a.len(), b.len(), c.len()));
    }
    Ok(())
}

/// `β·⟨lp, Δ⟩ − ½‖lp − lk‖²`.
pub fn surrogate_objective(lp: &[f64], lk: &[f64], delta: &[f64], beta: f64) -> Result<f64> {
    same_len(lp, lk, delta)?;
    let align: f64 = lp.iter().zip(delta).map(|(a, d)| a * d).sum();
    let prox: f64 = lp.iter().zip(lk).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(beta * align - 0.5 * prox)
}

/// `β·Δ − (lp − lk)`.
pub fn surrogate_gradient(lp: &[f64], lk: &[f64], delta: &[f64], beta: f64) -> Result<Vec<f64>> {
    same_len(lp, lk, delta)?;
    Ok(lp
        .iter()
        .zip(lk)
        .zip(delta)
        .map(|((a, b), d)| beta * d - (a - b))
        .collect())
}

/// Worst-case numbers from [`verify_closed_form`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationReport {
    pub trials: usize,
    pub dim: usize,
    /// Largest ‖∇L‖₂ at `ℓ_k + βΔ`, gradient taken by central differences.
    pub max_stationarity_residual: f64,
    /// Largest ‖∇L‖∞ at `ℓ_k + βΔ` from the analytic gradient.
    pub max_analytic_gradient: f64,
    /// Largest L∞ distance between the gradient-ascent end point and `ℓ_k + βΔ`.
    pub max_ascent_error: f64,
    /// Most iterations gradient ascent needed to reach 1e-8.
    pub max_ascent_iterations: usize,
    /// Largest relative error of `L(ℓ^SSG) − L(ℓ_k)` against `β²/2·‖Δ‖²`.
    pub max_gap_rel_error: f64,
    /// Smallest `L(ℓ^SSG) − L(ℓ^SSG + εu) − ε²/2` over the probe set.
    pub min_concavity_slack: f64,
}

pub const FD_STEP: f64 = 1e-6;
pub const ASCENT_STEP: f64 = 0.5;
pub const ASCENT_MAX_ITERS: usize = 100;
pub const ASCENT_TOL: f64 = 1e-8;

fn central_difference(lp: &[f64], lk: &[f64], delta: &[f64], beta: f64) -> Vec<f64> {
    let mut probe = lp.to_vec();
    (0..lp.len())
        .map(|i| {
            probe[i] = lp[i] + FD_STEP;
            let up = surrogate_objective(&probe, lk, delta, beta).unwrap();
            probe[i] = lp[i] - FD_STEP;
            let down = surrogate_objective(&probe, lk, delta, beta).unwrap();
            probe[i] = lp[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn norm_inf(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(f64::abs).fold(0.0, f64::max)
}

/// Draws `trials` random `(ℓ_k, Δ, β)` instances of length `dim`, with
/// `β ∈ [0.2, 2.4]`, and checks stationarity, convergence of plain gradient
/// ascent, the objective gap and strict concavity at the closed form.
pub fn verify_closed_form(dim: usize, trials: usize, seed: u64) -> Result<VerificationReport> {
    if dim == 0 || trials == 0 {
        return domain_err("dim and trials must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = VerificationReport {
        trials,
        dim,
        max_stationarity_residual: 0.0,
        max_analytic_gradient: 0.0,
        max_ascent_error: 0.0,
        max_ascent_iterations: 0,
        max_gap_rel_error: 0.0,
        min_concavity_slack: f64::INFINITY,
    };
    for _ in 0..trials {
        let lk: Vec<f64> = (0..dim).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let delta: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let beta = rng.random_range(0.2..=2.4);
        let closed: Vec<f64> = lk.iter().zip(&delta).map(|(l, d)| l + beta * d).collect();

        let fd = central_difference(&closed, &lk, &delta, beta);
        let fd_norm = fd.iter().map(|g| g * g).sum::<f64>().sqrt();
        report.max_stationarity_residual = report.max_stationarity_residual.max(fd_norm);
        let analytic = surrogate_gradient(&closed, &lk, &delta, beta)?;
        report.max_analytic_gradient = report.max_analytic_gradient.max(norm_inf(analytic));

        let mut x = lk.clone();
        let mut iters = 0;
        while iters < ASCENT_MAX_ITERS {
            let g = surrogate_gradient(&x, &lk, &delta, beta)?;
            x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi += ASCENT_STEP * gi);
            iters += 1;
            if norm_inf(x.iter().zip(&closed).map(|(a, b)| a - b)) <= ASCENT_TOL {
                break;
            }
        }
        report.max_ascent_iterations = report.max_ascent_iterations.max(iters);
        report.max_ascent_error =
            report.max_ascent_error.max(norm_inf(x.iter().zip(&closed).map(|(a, b)| a - b)));

        let at_closed = surrogate_objective(&closed, &lk, &delta, beta)?;
        let at_base = surrogate_objective(&lk, &lk, &delta, beta)?;
        let want = 0.5 * beta * beta * delta.iter().map(|d| d * d).sum::<f64>();
        report.max_gap_rel_error = report.max_gap_rel_error.max(((at_closed - at_base) - want).abs() / want);

        let u: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let unorm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        for eps in [1e-3, 1e-1, 1.0] {
            let moved: Vec<f64> = closed.iter().zip(&u).map(|(c, ui)| c + eps * ui / unorm).collect();
            let drop = at_closed - surrogate_objective(&moved, &lk, &delta, beta)?;
            report.min_concavity_slack = report.min_concavity_slack.min(drop - 0.5 * eps * eps);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(values: &[f64]) -> Grid3D {
        Grid3D::new(1, 1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn schedule_values() {
        let s = GuidanceSchedule::new(2.0, 10, Decay::Linear).unwrap();
        assert_eq!(s.beta_at(1).unwrap(), 2.0);
        assert_eq!(s.beta_at(6).unwrap(), 1.0);
        assert!((s.beta_at(10).unwrap() - 0.2).abs() < 1e-15);
        assert!(s.beta_at(0).is_err());
        assert!(s.beta_at(11).is_err());
        let c = GuidanceSchedule::new(2.0, 10, Decay::Constant).unwrap();
        assert!((1..=10).all(|k| c.beta_at(k).unwrap() == 2.0));
        assert!(GuidanceSchedule::new(-0.1, 3, Decay::Linear).is_err());
        assert!(GuidanceSchedule::new(1.0, 0, Decay::Linear).is_err());
    }

    #[test]
    fn linear_decay_strictly_decreases() {
        for k_total in [1, 2, 5, 13] {
            let s = GuidanceSchedule::new(0.7, k_total, Decay::Linear).unwrap();
            let betas: Vec<f64> = (1..=k_total).map(|k| s.beta_at(k).unwrap()).collect();
            assert!(betas.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn residual_arithmetic() {
        assert_eq!(semantic_residual(&g(&[1.0, 2.0]), &g(&[0.0, 1.0])).unwrap().delta(), &g(&[1.0, 1.0]));
        let x = g(&[0.3, -1.0, 4.0]);
        assert!(semantic_residual(&x, &x).unwrap().delta().values().iter().all(|&v| v == 0.0));
        let y = g(&[1.0, 2.0, 3.0]);
        let scaled = semantic_residual(&x.affine(2.5, &x, 0.0).unwrap(), &y.affine(2.5, &y, 0.0).unwrap()).unwrap();
        let base = semantic_residual(&x, &y).unwrap();
        assert!(scaled.delta().values().iter().zip(base.delta().values()).all(|(a, b)| (a - 2.5 * b).abs() < 1e-14));
        assert!(semantic_residual(&g(&[1.0]), &g(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn ssg_update_examples() {
        let lk = g(&[1.0, 2.0]);
        let lp = g(&[0.0, 1.0]);
        assert_eq!(apply_ssg(&lk, &lp, 0.5).unwrap(), g(&[1.5, 2.5]));
        assert_eq!(apply_ssg(&lk, &lp, 0.0).unwrap(), lk);
        assert_eq!(apply_ssg(&lk, &lk, 3.0).unwrap(), lk);
        assert!(matches!(apply_ssg(&lk, &lp, -0.5), Err(Error::Domain(_))));
        assert!(matches!(apply_ssg(&lk, &g(&[1.0]), 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn ssg_moves_along_the_residual() {
        let lk = g(&[0.5, -2.0, 1.0, 7.0]);
        let lp = g(&[1.5, 0.0, 1.0, 2.0]);
        let delta = semantic_residual(&lk, &lp).unwrap().into_inner();
        for beta in [0.0, 0.3, 1.0, 2.4] {
            let out = apply_ssg(&lk, &lp, beta).unwrap();
            let step = out.affine(1.0, &lk, -1.0).unwrap();
            for (s, d) in step.values().iter().zip(delta.values()) {
                assert!((s - beta * d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn objective_examples() {
        let lk = [1.0, -2.0, 0.5];
        let d = [0.3, 0.1, -1.0];
        let v = surrogate_objective(&lk, &lk, &d, 2.0).unwrap();
        assert!((v - 2.0 * (0.3 - 0.2 - 0.5)).abs() < 1e-15);
        assert_eq!(surrogate_objective(&lk, &lk, &d, 0.0).unwrap(), 0.0);
        assert!(surrogate_objective(&[1.0, 2.0, 0.0], &lk, &d, 0.0).unwrap() < 0.0);
        assert!(surrogate_objective(&[1.0], &lk, &d, 1.0).is_err());
        assert!(surrogate_gradient(&lk, &[1.0], &d, 1.0).is_err());
    }

    #[test]
    fn gradient_vanishes_at_closed_form() {
        let lk = g(&[1.0, -2.0, 0.5, 3.0]);
        let delta = [0.3, 0.1, -1.0, 2.0];
        let lprior = lk.affine(1.0, &g(&delta), -1.0).unwrap();
        let closed = apply_ssg(&lk, &lprior, 1.7).unwrap();
        let grad = surrogate_gradient(closed.values(), lk.values(), &delta, 1.7).unwrap();
        assert!(grad.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..20);
            let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.random_range(-3.0..3.0)).collect() };
            let (lp, lk, d) = (draw(), draw(), draw());
            let beta = rng.random_range(0.0..2.5);
            let fd = central_difference(&lp, &lk, &d, beta);
            let an = surrogate_gradient(&lp, &lk, &d, beta).unwrap();
            assert!(fd.iter().zip(&an).all(|(a, b)| (a - b).abs() < 1e-6));
        }
    }

    #[test]
    fn verification_report_is_tight() {
        let r = verify_closed_form(32, 50, 7).unwrap();
        assert!(r.max_stationarity_residual < 1e-5);
        assert!(r.max_analytic_gradient < 1e-12);
        assert!(r.max_ascent_error <= ASCENT_TOL);
        assert!(r.max_ascent_iterations <= ASCENT_MAX_ITERS);
        assert!(r.max_gap_rel_error < 1e-9);
        assert!(r.min_concavity_slack >= -1e-9);
        assert_eq!(verify_closed_form(32, 50, 7).unwrap(), r);
    }
}
