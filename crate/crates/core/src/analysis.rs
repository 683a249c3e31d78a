//! Spectral diagnostics and the guidance latency benchmark.
//!
//! Radial profiles use the unitary 2D DFT with the zero frequency at the
//! origin of a centred plane. Bin `r` collects every frequency `(fy, fx)`
//! (signed, in cycles per grid) with `⌊√(fy² + fx²)⌋ = r`; the profile value
//! is `ln(mean |X| + ε)` over the annulus.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dse::{PriorMode, PriorOptions, PriorPlan};
use crate::error::{domain_err, shape_err, Result};
use crate::exec::Exec;
use crate::grids::{Grid2D, Grid3D};
use crate::guidance::apply_ssg_into;

/// Floor inside the log of every profile value.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    /// Annulus radii, strictly increasing.
    pub bins: Vec<f64>,
    pub values: Vec<f64>,
    /// Sum of `|X|²` per annulus (unitary transform).
    pub energy: Vec<f64>,
    pub counts: Vec<usize>,
    /// Previous-scale Nyquist radius, when known.
    pub nyquist_bin: Option<f64>,
}

impl SpectralProfile {
    pub fn value_at(&self, bin: f64) -> Option<f64> {
        self.bins.iter().position(|&b| b == bin).map(|i| self.values[i])
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "value", "above_nyquist"])?;
        for (b, v) in self.bins.iter().zip(&self.values) {
            let above = match self.nyquist_bin {
                Some(n) => u8::from(*b >= n).to_string(),
                None => String::new(),
            };
            w.write_record([b.to_string(), v.to_string(), above])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn signed_freq(index: usize, n: usize) -> f64 {
    if index > n / 2 {
        index as f64 - n as f64
    } else {
        index as f64
    }
}

/// Unitary 2D DFT of a real plane, row-major.
pub(crate) fn dft2(grid: &Grid2D) -> Vec<Complex<f64>> {
    let (h, w) = grid.dims();
    let mut planner = FftPlanner::<f64>::new();
    let mut data: Vec<Complex<f64>> = grid.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(w);
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = data[i * w + j];
        }
        col_fft.process(&mut column);
        for i in 0..h {
            data[i * w + j] = column[i];
        }
    }
    let norm = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|c| *c *= norm);
    data
}

pub fn radial_spectrum(grid: &Grid2D) -> Result<SpectralProfile> {
    if grid.values().iter().any(|v| !v.is_finite()) {
        return domain_err("radial spectrum input has non-finite values");
    }
    let (h, w) = grid.dims();
    let spectrum = dft2(grid);
    let max_bin = ((h / 2).pow(2) as f64 + (w / 2).pow(2) as f64).sqrt().floor() as usize;
    let mut amp = vec![0.0; max_bin + 1];
    let mut energy = vec![0.0; max_bin + 1];
    let mut counts = vec![0usize; max_bin + 1];
    for u in 0..h {
        let fy = signed_freq(u, h);
        for v in 0..w {
            let fx = signed_freq(v, w);
            let bin = (fy * fy + fx * fx).sqrt().floor() as usize;
            let x = spectrum[u * w + v];
            amp[bin] += x.norm();
            energy[bin] += x.norm_sqr();
            counts[bin] += 1;
        }
    }
    let mut profile = SpectralProfile {
        bins: Vec::new(),
        values: Vec::new(),
        energy: Vec::new(),
        counts: Vec::new(),
        nyquist_bin: None,
    };
    for b in 0..=max_bin {
        if counts[b] == 0 {
            continue;
        }
        profile.bins.push(b as f64);
        profile.values.push((amp[b] / counts[b] as f64 + LOG_FLOOR).ln());
        profile.energy.push(energy[b]);
        profile.counts.push(counts[b]);
    }
    Ok(profile)
}

/// Channel-averaged difference of radial log-amplitude profiles, `a − b`.
pub fn delta_log_magnitude(a: &Grid3D, b: &Grid3D) -> Result<SpectralProfile> {
    if !a.same_shape(b) {
        return shape_err(format!("shape mismatch: {:?} vs {:?}", a.dims(), b.dims()));
    }
    let channels = a.channels();
    let mut out: Option<SpectralProfile> = None;
    for c in 0..channels {
        let pa = radial_spectrum(&a.channel(c))?;
        let pb = radial_spectrum(&b.channel(c))?;
        let diff: Vec<f64> = pa.values.iter().zip(&pb.values).map(|(x, y)| x - y).collect();
        match out.as_mut() {
            None => {
                out = Some(SpectralProfile { values: diff, energy: vec![], ..pa });
            }
            Some(acc) => acc.values.iter_mut().zip(&diff).for_each(|(s, d)| *s += d),
        }
    }
    let mut out = out.expect("grids have at least one channel");
    out.values.iter_mut().for_each(|v| *v /= channels as f64);
    Ok(out)
}

/// Highest radial frequency representable at the previous scale, in the
/// current grid's cycles-per-grid units.
pub fn nyquist_bin(prev_h: usize, prev_w: usize, cur_h: usize, cur_w: usize) -> Result<f64> {
    if prev_h == 0 || prev_w == 0 || prev_h > cur_h || prev_w > cur_w {
        return shape_err(format!(
            "previous scale {prev_h}x{prev_w} must be positive and fit in {cur_h}x{cur_w}"
        ));
    }
    Ok(prev_h.min(prev_w) as f64 / 2.0)
}

pub const MIN_BENCH_REPS: usize = 10;

/// Timing of one operation at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// `HxWxV` of the previous scale; the step runs at `2H × 2W`.
    pub size: String,
    pub op: String,
    pub mean_s: f64,
    pub std_s: f64,
    /// Mean time relative to the predictor step at the same size.
    pub ratio: f64,
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn time_reps(reps: usize, mut f: impl FnMut()) -> (f64, f64) {
    f();
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    mean_std(&samples)
}

/// Dense stand-in for one predictor step: every location's `V` logits pass
/// through a `V × V` matrix, written into `out`.
pub fn dummy_predictor_step(input: &Grid3D, weights: &[f64], out: &mut [f64]) {
    let v = input.channels();
    assert_eq!(weights.len(), v * v);
    assert_eq!(out.len(), input.values().len());
    for (src, dst) in input.values().chunks_exact(v).zip(out.chunks_exact_mut(v)) {
        dst.fill(0.0);
        for (k, &x) in src.iter().enumerate() {
            for (d, wgt) in dst.iter_mut().zip(&weights[k * v..(k + 1) * v]) {
                *d += x * wgt;
            }
        }
    }
}

/// Times a dense predictor step against prior construction plus the guided
/// update for each `(h, w, V)`, single-threaded. Both sides write into
/// preallocated outputs, as a decoder reusing its logit buffers would; the
/// prior plan is rebuilt inside every timed repetition.
pub fn latency_bench(sizes: &[(usize, usize, usize)], reps: usize) -> Result<Vec<BenchRow>> {
    if reps < MIN_BENCH_REPS {
        return domain_err(format!("need at least {MIN_BENCH_REPS} repetitions, got {reps}"));
    }
    let mut rows = Vec::new();
    for &(h, w, v) in sizes {
        if h == 0 || w == 0 || v == 0 {
            return shape_err(format!("bench size {h}x{w}x{v} has a zero dimension"));
        }
        let (th, tw) = (2 * h, 2 * w);
        let mut rng = ChaCha8Rng::seed_from_u64((h * 131 + w * 17 + v) as u64);
        let mut grid = |gh, gw| Grid3D::from_fn(gh, gw, v, |_, _, _| rng.random_range(-1.0..1.0));
        let prev = grid(h, w)?;
        let current = grid(th, tw)?;
        let weights: Vec<f64> = (0..v * v).map(|_| rng.random_range(-0.05..0.05)).collect();

        let mut logits = vec![0.0; th * tw * v];
        let (p_mean, p_std) = time_reps(reps, || {
            dummy_predictor_step(black_box(&current), &weights, &mut logits);
            black_box(&logits);
        });
        let mut prior = Grid3D::zeros(th, tw, v);
        let mut guided = Grid3D::zeros(th, tw, v);
        let mut failure = None;
        let (g_mean, g_std) = time_reps(reps, || {
            let step = PriorPlan::new((h, w), (th, tw), PriorMode::Dse, PriorOptions::default())
                .and_then(|plan| plan.apply_into(black_box(&prev), &mut prior, Exec::Sequential))
                .and_then(|()| apply_ssg_into(black_box(&current), &prior, 1.0, &mut guided));
            if let Err(e) = step {
                failure = Some(e);
            }
            black_box(&guided);
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let size = format!("{h}x{w}x{v}");
        rows.push(BenchRow { size: size.clone(), op: "predictor".into(), mean_s: p_mean, std_s: p_std, ratio: 1.0 });
        rows.push(BenchRow { size, op: "dse_ssg".into(), mean_s: g_mean, std_s: g_std, ratio: g_mean / p_mean });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["size", "op", "mean_s", "std_s", "ratio"])?;
    for r in rows {
        w.write_record([
            r.size.clone(),
            r.op.clone(),
            format!("{:.9}", r.mean_s),
            format!("{:.9}", r.std_s),
            format!("{:.6}", r.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
