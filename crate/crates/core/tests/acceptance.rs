//! Acceptance suite. Runs every check at its stated tolerance and time
//! budget, prints one PASS/FAIL line per check, and exits non-zero if any
//! check fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ssg_core::analysis::{delta_log_magnitude, latency_bench, nyquist_bin, write_bench_csv};
use ssg_core::codec::{encode_multiscale, reconstruct_partials, Codebook, ScaleLadder};
use ssg_core::dse::{build_prior, InterpKind, PriorMode, PriorOptions, PriorPlan};
use ssg_core::guidance::{apply_ssg, verify_closed_form, Decay, GuidanceSchedule};
use ssg_core::pipeline::demo::{synthesize, DemoKind};
use ssg_core::pipeline::{ablation_suite, run_completion, run_generation, OracleConfig, RunConfig, RunReport};
use ssg_core::spectral::{dct2, idct2};
use ssg_core::{Exec, Grid2D, Grid3D};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_plane(h: usize, w: usize, r: &mut ChaCha8Rng) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| r.random_range(-1.0..1.0)).unwrap()
}

fn random_grid(h: usize, w: usize, c: usize, r: &mut ChaCha8Rng) -> Grid3D {
    Grid3D::from_fn(h, w, c, |_, _, _| r.random_range(-2.0..2.0)).unwrap()
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn transform_exactness() -> Outcome {
    let mut r = rng(1);
    let (mut worst_rt, mut worst_parseval) = (0.0f64, 0.0f64);
    for h in 1..=64 {
        for w in 1..=64 {
            let g = random_plane(h, w, &mut r);
            let spec = dct2(&g).map_err(|e| e.to_string())?;
            let back = idct2(&spec).map_err(|e| e.to_string())?;
            let rt = g.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let parseval = (spec.energy() - g.energy()).abs() / g.energy();
            worst_rt = worst_rt.max(rt);
            worst_parseval = worst_parseval.max(parseval);
        }
    }
    ensure(worst_rt < 1e-10, || format!("round trip error {worst_rt:e}"))?;
    ensure(worst_parseval < 1e-9, || format!("Parseval error {worst_parseval:e}"))?;
    Ok(format!("4096 shapes, max round trip {worst_rt:.1e}, max Parseval {worst_parseval:.1e}"))
}

/// Per-channel DCT of a grid, as row-major coefficient planes.
fn channel_spectra(g: &Grid3D) -> Vec<Vec<f64>> {
    (0..g.channels()).map(|c| dct2(&g.channel(c)).unwrap().coefficients().to_vec()).collect()
}

fn low_band_preservation() -> Outcome {
    let mut r = rng(2);
    let mut worst_band = 0.0f64;
    let cases = [((1, 1), (4, 4)), ((2, 2), (4, 4)), ((3, 5), (7, 8)), ((4, 6), (4, 9)), ((8, 8), (16, 16)), ((5, 3), (11, 13))];
    for ((h, w), (th, tw)) in cases {
        let prev = random_grid(h, w, 3, &mut r);
        let alpha = ((th * tw) as f64 / (h * w) as f64).sqrt();
        let coarse = channel_spectra(&prev);
        for mode in [PriorMode::Dse, PriorMode::DseZero] {
            let explicit = build_prior(&prev, th, tw, mode).map_err(|e| e.to_string())?;
            let plan = PriorPlan::new((h, w), (th, tw), mode, PriorOptions::default())
                .and_then(|p| p.apply(&prev, Exec::Sequential))
                .map_err(|e| e.to_string())?;
            for prior in [&explicit, &plan] {
                for (fine, src) in channel_spectra(prior).iter().zip(&coarse) {
                    for i in 0..h {
                        for j in 0..w {
                            worst_band = worst_band.max((fine[i * tw + j] - alpha * src[i * w + j]).abs());
                        }
                    }
                }
            }
        }
    }
    ensure(worst_band < 1e-9, || format!("low band deviates by {worst_band:e}"))?;

    let mut worst_const = 0.0f64;
    for ((h, w), (th, tw)) in [((2, 3), (5, 7)), ((4, 4), (8, 8))] {
        let prev = Grid3D::constant(h, w, 2, 0.75);
        for mode in [PriorMode::Dse, PriorMode::DseZero] {
            let prior = build_prior(&prev, th, tw, mode).map_err(|e| e.to_string())?;
            let first = prior.values()[0];
            worst_const = prior.values().iter().map(|v| (v - first).abs()).fold(worst_const, f64::max);
        }
    }
    ensure(worst_const < 1e-10, || format!("constant input spread {worst_const:e}"))?;

    let mut worst_identity = 0.0f64;
    for (h, w) in [(1, 1), (6, 6), (5, 9)] {
        let prev = random_grid(h, w, 3, &mut r);
        for mode in [PriorMode::Dse, PriorMode::DseZero] {
            let prior = build_prior(&prev, h, w, mode).map_err(|e| e.to_string())?;
            worst_identity = worst_identity.max(prior.max_abs_diff(&prev));
        }
    }
    ensure(worst_identity < 1e-10, || format!("equal-size error {worst_identity:e}"))?;
    Ok(format!(
        "low band {worst_band:.1e}, constant spread {worst_const:.1e}, equal size {worst_identity:.1e}"
    ))
}

fn closed_form_guidance() -> Outcome {
    // independent spot check of the objective gap before the library verifier
    let mut r = rng(3);
    for _ in 0..20 {
        let dim = r.random_range(1..=64);
        let beta: f64 = r.random_range(0.1..3.0);
        let lk: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal) * 3.0).collect();
        let delta: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        let objective = |lp: &[f64]| {
            let mut align = 0.0;
            let mut prox = 0.0;
            for i in 0..dim {
                align += lp[i] * delta[i];
                prox += (lp[i] - lk[i]).powi(2);
            }
            beta * align - 0.5 * prox
        };
        let ssg: Vec<f64> = lk.iter().zip(&delta).map(|(l, d)| l + beta * d).collect();
        let expected = 0.5 * beta * beta * delta.iter().map(|d| d * d).sum::<f64>();
        let gap = objective(&ssg) - objective(&lk);
        ensure((gap - expected).abs() <= 1e-9 * expected, || format!("gap {gap} vs {expected}"))?;
    }

    let mut trials = 0;
    let (mut fd, mut ascent, mut gap) = (0.0f64, 0.0f64, 0.0f64);
    for (dim, seed) in [(64, 11), (17, 12), (1, 13), (40, 14)] {
        let rep = verify_closed_form(dim, 25, seed).map_err(|e| e.to_string())?;
        trials += rep.trials;
        fd = fd.max(rep.max_stationarity_residual);
        ascent = ascent.max(rep.max_ascent_error);
        gap = gap.max(rep.max_gap_rel_error);
        ensure(rep.min_concavity_slack > -1e-9, || format!("concavity slack {}", rep.min_concavity_slack))?;
    }
    ensure(trials == 100, || format!("{trials} trials"))?;
    ensure(fd < 1e-5, || format!("finite-difference gradient norm {fd:e}"))?;
    ensure(ascent < 1e-8, || format!("ascent distance {ascent:e}"))?;
    ensure(gap < 1e-9, || format!("objective gap relative error {gap:e}"))?;
    Ok(format!("{trials} instances, FD gradient {fd:.1e}, ascent {ascent:.1e}, gap {gap:.1e}"))
}

fn linear_schedule() -> Outcome {
    let mut checked = 0;
    for beta in [0.25, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0] {
        for steps in 1..=16 {
            let s = GuidanceSchedule::new(beta, steps, Decay::Linear).map_err(|e| e.to_string())?;
            let betas: Vec<f64> = (1..=steps).map(|k| s.beta_at(k).unwrap()).collect();
            ensure(betas[0] == beta, || format!("β_1 = {} for β={beta}, K={steps}", betas[0]))?;
            ensure(betas[steps - 1] == beta / steps as f64, || {
                format!("β_K = {} for β={beta}, K={steps}", betas[steps - 1])
            })?;
            ensure(betas.windows(2).all(|p| p[1] < p[0]), || format!("not decreasing: {betas:?}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (β, K) pairs"))
}

/// `Σ a·cos(2π(fy·y/H + fx·x/W) + φ)` with one random term per listed frequency.
fn cosine_field(h: usize, w: usize, freqs: &[(i64, i64)], r: &mut ChaCha8Rng) -> Grid2D {
    let terms: Vec<(f64, f64, f64, f64)> = freqs
        .iter()
        .map(|&(fy, fx)| (fy as f64, fx as f64, r.random_range(0.5..1.5), r.random_range(0.0..1.0)))
        .collect();
    Grid2D::from_fn(h, w, |y, x| {
        terms
            .iter()
            .map(|(fy, fx, a, phase)| a * (2.0 * PI * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64) + phase).cos())
            .sum()
    })
    .unwrap()
}

fn spectral_redistribution() -> Outcome {
    let (h, w, c) = (16, 16, 4);
    let cut = nyquist_bin(8, 8, h, w).map_err(|e| e.to_string())?;
    let mut r = rng(5);
    // every annulus gets at least one frequency so no bin sits at the log floor
    let mut by_bin: Vec<Vec<(i64, i64)>> = Vec::new();
    for fy in 0..=(h as i64 / 2) {
        for fx in -(w as i64 / 2) + 1..=(w as i64 / 2) {
            let bin = ((fy * fy + fx * fx) as f64).sqrt().floor() as usize;
            if by_bin.len() <= bin {
                by_bin.resize(bin + 1, Vec::new());
            }
            by_bin[bin].push((fy, fx));
        }
    }
    let mut low_planes = Vec::new();
    let mut full_planes = Vec::new();
    for _ in 0..c {
        let mut low = Vec::new();
        let mut high = Vec::new();
        for (bin, freqs) in by_bin.iter().enumerate() {
            let pick = freqs[r.random_range(0..freqs.len())];
            if (bin as f64) < cut { low.push(pick) } else { high.push(pick) }
        }
        let low_plane = cosine_field(h, w, &low, &mut r);
        let high_plane = cosine_field(h, w, &high, &mut r);
        full_planes.push(Grid2D::from_fn(h, w, |y, x| low_plane.get(y, x) + high_plane.get(y, x)).unwrap());
        low_planes.push(low_plane);
    }
    let prior = Grid3D::from_channels(&low_planes).map_err(|e| e.to_string())?;
    let logits = Grid3D::from_channels(&full_planes).map_err(|e| e.to_string())?;

    let (mut above_err, mut below_err) = (0.0f64, 0.0f64);
    for beta in [0.5, 1.0, 2.0] {
        let guided = apply_ssg(&logits, &prior, beta).map_err(|e| e.to_string())?;
        let profile = delta_log_magnitude(&guided, &logits).map_err(|e| e.to_string())?;
        let expected = (1.0 + beta).ln();
        for (bin, v) in profile.bins.iter().zip(&profile.values) {
            if *bin >= cut {
                above_err = above_err.max((v - expected).abs());
            } else {
                below_err = below_err.max(v.abs());
            }
        }
    }
    ensure(above_err < 0.05, || format!("above-cut error {above_err:e}"))?;
    ensure(below_err < 1e-6, || format!("below-cut error {below_err:e}"))?;
    Ok(format!("cut at bin {cut}, above-cut error {above_err:.1e}, below-cut error {below_err:.1e}"))
}

fn monotone_refinement() -> Outcome {
    let ladder: ScaleLadder = "1x1,2x2,4x4,8x8".parse().map_err(|e: ssg_core::Error| e.to_string())?;
    let mut worst_rise = f64::NEG_INFINITY;
    for trial in 0..100u64 {
        let cb = Codebook::generate(32, 4, trial).map_err(|e| e.to_string())?;
        ensure(cb.vector(0).iter().all(|&v| v == 0.0), || "codeword 0 is not zero".into())?;
        let mut r = rng(1000 + trial);
        let f = Grid3D::from_fn(8, 8, 4, |_, _, _| r.sample::<f64, _>(StandardNormal) * 0.5).unwrap();
        let tokens = encode_multiscale(&f, &ladder, &cb, InterpKind::Linear).map_err(|e| e.to_string())?;
        let partials = reconstruct_partials(&tokens, &ladder, &cb, InterpKind::Linear).map_err(|e| e.to_string())?;
        let mut prev = f.mse(&Grid3D::zeros(8, 8, 4)).map_err(|e| e.to_string())?;
        for (k, p) in partials.iter().enumerate() {
            let mse = p.mse(&f).map_err(|e| e.to_string())?;
            worst_rise = worst_rise.max(mse - prev);
            ensure(mse <= prev, || format!("trial {trial}: scale {} MSE {mse} above {prev}", k + 1))?;
            prev = mse;
        }
    }
    Ok(format!("100 trials, largest per-scale change {worst_rise:.3e}"))
}

fn experiment_setup() -> (Grid3D, RunConfig) {
    let reference = synthesize(DemoKind::Blobs, 8, 8, 4, 3).unwrap();
    let ladder: ScaleLadder = "1x1,2x2,4x4,8x8".parse().unwrap();
    let cb = Codebook::generate(32, 4, 0).unwrap();
    let mut rc = RunConfig::new(ladder, cb, 1.0).unwrap();
    rc.seeds = (0..50).collect();
    (reference, rc)
}

fn experiment_oracle() -> OracleConfig {
    OracleConfig { lowpass_lambda: 0.5, noise_sigma: 1.0, ..OracleConfig::default() }
}

fn write_curves(name: &str, guided: &RunReport, baseline: &RunReport) -> Result<PathBuf, String> {
    let path = out_dir().join(name);
    let mut text = String::from("variant,scale,median_mse,median_accuracy\n");
    for (label, report) in [("ssg", guided), ("baseline", baseline)] {
        let mse = report.per_scale_median(|r| r.mse);
        let acc = report.per_scale_median(|r| r.accuracy);
        for (k, (m, a)) in mse.iter().zip(&acc).enumerate() {
            text.push_str(&format!("{label},{},{m},{a}\n", k + 1));
        }
    }
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    Ok(path)
}

fn guided_completion() -> Outcome {
    let (reference, rc) = experiment_setup();
    let oc = experiment_oracle();
    let schedule = GuidanceSchedule::new(1.0, 4, Decay::Linear).map_err(|e| e.to_string())?;
    ensure(rc.schedule == schedule, || "default schedule is not β0=1 linear over 4 steps".into())?;
    let baseline_rc = RunConfig { with_ssg: false, ..rc.clone() };

    let guided = run_generation(&reference, &rc, &oc).map_err(|e| e.to_string())?;
    let baseline = run_generation(&reference, &baseline_rc, &oc).map_err(|e| e.to_string())?;
    guided.save_csv(out_dir().join("generation_ssg.csv")).map_err(|e| e.to_string())?;
    baseline.save_csv(out_dir().join("generation_baseline.csv")).map_err(|e| e.to_string())?;
    let curves = write_curves("generation_curves.csv", &guided, &baseline)?;

    let completion_rc = RunConfig { prefix_scales: 2, ..rc.clone() };
    let completion_base = RunConfig { with_ssg: false, ..completion_rc.clone() };
    let c_guided = run_completion(&reference, &completion_rc, &oc).map_err(|e| e.to_string())?;
    let c_base = run_completion(&reference, &completion_base, &oc).map_err(|e| e.to_string())?;
    write_curves("completion_curves.csv", &c_guided, &c_base)?;

    let (g, b) = (guided.median_final_mse(), baseline.median_final_mse());
    ensure(g <= b, || format!("median final MSE with guidance {g:.4} > baseline {b:.4}"))?;
    Ok(format!(
        "median final MSE {g:.4} (ssg) vs {b:.4} (baseline); completion m=2: {:.4} vs {:.4}; curves in {}",
        c_guided.median_final_mse(),
        c_base.median_final_mse(),
        curves.parent().unwrap().display()
    ))
}

fn ablation_structure() -> Outcome {
    let (reference, rc) = experiment_setup();
    let oc = experiment_oracle();
    let report = ablation_suite(&reference, &rc, &oc).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(|e| e.to_string())?;
    std::fs::write(out_dir().join("ablation.csv"), &csv).map_err(|e| e.to_string())?;
    ensure(report.rows.len() == 9, || format!("{} cells", report.rows.len()))?;

    let zero = RunConfig { schedule: GuidanceSchedule::new(0.0, 4, Decay::Linear).unwrap(), ..rc.clone() };
    let zero_run = run_generation(&reference, &zero, &oc).map_err(|e| e.to_string())?;
    let plain_run = run_generation(&reference, &RunConfig { with_ssg: false, ..rc }, &oc).map_err(|e| e.to_string())?;
    ensure(zero_run.to_csv_string() == plain_run.to_csv_string(), || "β=0 report differs from baseline".into())?;
    let base = report.row("baseline").ok_or("no baseline row")?;
    ensure(base.median_mse.to_bits() == zero_run.median_final_mse().to_bits(), || {
        format!("baseline cell {} vs β=0 run {}", base.median_mse, zero_run.median_final_mse())
    })?;

    // the two spectral modes differ only above the coarse band
    let mut r = rng(8);
    let mut gap = report.low_band_max_gap;
    for ((h, w), (th, tw)) in [((4, 4), (8, 8)), ((3, 5), (6, 11))] {
        let prev = random_grid(h, w, 3, &mut r);
        let a = channel_spectra(&build_prior(&prev, th, tw, PriorMode::Dse).unwrap());
        let b = channel_spectra(&build_prior(&prev, th, tw, PriorMode::DseZero).unwrap());
        for (sa, sb) in a.iter().zip(&b) {
            for i in 0..h {
                for j in 0..w {
                    gap = gap.max((sa[i * tw + j] - sb[i * tw + j]).abs());
                }
            }
        }
    }
    ensure(gap < 1e-9, || format!("dse and dse_zero low bands differ by {gap:e}"))?;
    Ok(format!("9 cells, baseline bit-exact with β=0, low-band gap {gap:.1e}"))
}

fn guidance_overhead() -> Outcome {
    let rows = latency_bench(&[(16, 16, 512)], 100).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    write_bench_csv(&rows, &mut csv).map_err(|e| e.to_string())?;
    std::fs::write(out_dir().join("latency.csv"), &csv).map_err(|e| e.to_string())?;
    let predictor = rows.iter().find(|r| r.op == "predictor").ok_or("no predictor row")?;
    let guided = rows.iter().find(|r| r.op == "dse_ssg").ok_or("no dse_ssg row")?;
    ensure(guided.ratio <= 0.10, || format!("overhead ratio {:.3} above 0.10", guided.ratio))?;
    Ok(format!(
        "16x16->32x32, V=512: {:.2} ms vs predictor {:.1} ms, ratio {:.3}",
        guided.mean_s * 1e3,
        predictor.mean_s * 1e3,
        guided.ratio
    ))
}

fn determinism() -> Outcome {
    let (reference, mut rc) = experiment_setup();
    rc.seeds = (0..10).collect();
    let oc = experiment_oracle();
    let dir = out_dir();
    let mut checked = 0;
    for exec in [Exec::Parallel, Exec::Sequential] {
        for completion in [false, true] {
            let cfg = RunConfig { exec, prefix_scales: 2, ..rc.clone() };
            let run = |path: &str| -> Result<Vec<u8>, String> {
                let report = if completion {
                    run_completion(&reference, &cfg, &oc)
                } else {
                    run_generation(&reference, &cfg, &oc)
                }
                .map_err(|e| e.to_string())?;
                let path = dir.join(path);
                report.save_csv(&path).map_err(|e| e.to_string())?;
                std::fs::read(&path).map_err(|e| e.to_string())
            };
            let (a, b) = (run("determinism_a.csv")?, run("determinism_b.csv")?);
            ensure(a == b, || format!("reports differ (completion={completion}, {exec:?})"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} run/complete configurations byte-identical"))
}

type Check = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 10] = [
        ("transform exactness", Duration::from_secs(5), transform_exactness),
        ("low-band preservation", Duration::from_secs(5), low_band_preservation),
        ("closed-form guidance", Duration::from_secs(5), closed_form_guidance),
        ("linear schedule", Duration::from_secs(5), linear_schedule),
        ("spectral redistribution", Duration::from_secs(5), spectral_redistribution),
        ("codec monotone refinement", Duration::from_secs(10), monotone_refinement),
        ("guided completion direction", Duration::from_secs(60), guided_completion),
        ("ablation structure", Duration::from_secs(90), ablation_structure),
        ("guidance overhead", Duration::from_secs(30), guidance_overhead),
        ("determinism", Duration::from_secs(60), determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= *budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {:.1} s, budget {} s", elapsed.as_secs_f64(), budget.as_secs()))
            }
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name} ({:.2} s): {detail}", i + 1, elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failures} failed", checks.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
