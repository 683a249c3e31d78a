use std::fs;
use std::path::Path;

use ssg_core::analysis::{delta_log_magnitude, latency_bench, nyquist_bin, write_bench_csv};
use ssg_core::codec::{encode_multiscale, parse_hw, reconstruct, reconstruct_partials, ScaleLadder};
use ssg_core::dse::{InterpKind, PriorMode, PriorOptions, PriorPlan};
use ssg_core::grids::{load_tensor, load_tokens, save_tensor, save_tokens, write_image};
use ssg_core::guidance::{apply_ssg, verify_closed_form};
use ssg_core::pipeline::demo::{synthesize, DemoKind};
use ssg_core::pipeline::{ablation_suite, run_completion, run_generation};
use ssg_core::{Error, Exec, Result};

use crate::config::{parse_hwc, resolve_codebook, Config, RunSettings};
use crate::{
    AnalyzeArgs, BenchArgs, CodecCommand, Command, DecodeArgs, DemoArgs, DseArgs, EncodeArgs, GuideArgs, RunArgs,
};

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Shape(_) | Error::Domain(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
    }
}

fn parse<T>(what: &str, s: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| Error::Config(format!("--{what} {s}: {e}")))
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Dse(a) => dse(a),
        Command::Guide(a) => guide(a),
        Command::Codec(CodecCommand::Encode(a)) => encode(a),
        Command::Codec(CodecCommand::Decode(a)) => decode(a),
        Command::Run(a) => run(a, false),
        Command::Complete(a) => run(a, true),
        Command::Ablation(a) => ablation(a),
        Command::Analyze(a) => analyze(a),
        Command::Bench(a) => bench(a),
        Command::Demo(a) => demo(a),
    }
}

fn dse(a: DseArgs) -> Result<()> {
    let prev = load_tensor(&a.input)?;
    let (th, tw) = parse_hw(&a.target)?;
    let mode: PriorMode = parse("mode", &a.mode)?;
    let opts = PriorOptions { amplitude_preserving: !a.raw_copy, interp: parse("interp", &a.interp)? };
    let prior = PriorPlan::new((prev.height(), prev.width()), (th, tw), mode, opts)?.apply(&prev, Exec::default())?;
    save_tensor(&prior, &a.out)
}

fn guide(a: GuideArgs) -> Result<()> {
    if a.verify {
        let rep = verify_closed_form(a.dim, a.trials, a.seed)?;
        println!("trials: {}  dim: {}", rep.trials, rep.dim);
        println!("max stationarity residual: {:.3e}", rep.max_stationarity_residual);
        println!("max analytic gradient: {:.3e}", rep.max_analytic_gradient);
        println!("max ascent error: {:.3e} ({} iterations at most)", rep.max_ascent_error, rep.max_ascent_iterations);
        println!("max objective gap relative error: {:.3e}", rep.max_gap_rel_error);
        println!("min concavity slack: {:.3e}", rep.min_concavity_slack);
        return Ok(());
    }
    // clap enforces these when --verify is absent
    let (Some(logits), Some(prior), Some(beta), Some(out)) = (a.logits, a.prior, a.beta, a.out) else {
        return Err(Error::Config("--logits, --prior, --beta and --out are required".into()));
    };
    let guided = apply_ssg(&load_tensor(logits)?, &load_tensor(prior)?, beta)?;
    save_tensor(&guided, out)
}

fn token_path(dir: &Path, k: usize) -> std::path::PathBuf {
    dir.join(format!("tokens_{k}.nsgt"))
}

fn encode(a: EncodeArgs) -> Result<()> {
    let f = load_tensor(&a.feature)?;
    let ladder: ScaleLadder = parse("ladder", &a.ladder)?;
    let kind: InterpKind = parse("upsample", &a.upsample)?;
    let cb = resolve_codebook(&a.codebook, f.channels())?;
    let tokens = encode_multiscale(&f, &ladder, &cb, kind)?;
    fs::create_dir_all(&a.out)?;
    for (k, t) in tokens.iter().enumerate() {
        save_tokens(t, token_path(&a.out, k + 1))?;
    }
    save_tensor(&cb.to_grid(), a.out.join("codebook.nsgt"))?;
    for (k, partial) in reconstruct_partials(&tokens, &ladder, &cb, kind)?.iter().enumerate() {
        let (h, w) = ladder.scales()[k];
        println!("scale {} ({h}x{w}): mse {:.6}", k + 1, partial.mse(&f)?);
    }
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let ladder: ScaleLadder = parse("ladder", &a.ladder)?;
    let kind: InterpKind = parse("upsample", &a.upsample)?;
    let tokens = (1..=ladder.len()).map(|k| load_tokens(token_path(&a.tokens, k))).collect::<Result<Vec<_>>>()?;
    let spec = a.codebook.unwrap_or_else(|| a.tokens.join("codebook.nsgt").display().to_string());
    let cb = resolve_codebook(&spec, 0)?;
    save_tensor(&reconstruct(&tokens, &ladder, &cb, kind)?, &a.out)
}

fn settings(a: &RunArgs) -> Result<RunSettings> {
    let base = match &a.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let cfg = base.merged(&[
        ("reference", a.reference.clone()),
        ("ladder", a.ladder.clone()),
        ("codebook", a.codebook.clone()),
        ("upsample", a.upsample.clone()),
        ("beta0", a.beta0.clone()),
        ("decay", a.decay.clone()),
        ("prior", a.prior.clone()),
        ("interp", a.interp.clone()),
        ("raw_copy", a.raw_copy.clone()),
        ("prior_source", a.prior_source.clone()),
        ("ssg", a.ssg.clone()),
        ("temperature", a.temperature.clone()),
        ("argmax", a.argmax.clone()),
        ("lambda", a.lambda.clone()),
        ("sigma", a.sigma.clone()),
        ("logit_scale", a.logit_scale.clone()),
        ("oracle_seed", a.oracle_seed.clone()),
        ("seeds", a.seeds.clone()),
        ("prefix", a.prefix.clone()),
        ("exec", a.exec.clone()),
    ]);
    RunSettings::from_config(&cfg)
}

fn run(a: RunArgs, completion: bool) -> Result<()> {
    let s = settings(&a)?;
    let report = if completion {
        run_completion(&s.reference, &s.run, &s.oracle)?
    } else {
        run_generation(&s.reference, &s.run, &s.oracle)?
    };
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("report.csv");
    report.save_csv(&path)?;
    print!("{}", report.summary());
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn ablation(a: RunArgs) -> Result<()> {
    let s = settings(&a)?;
    let report = ablation_suite(&s.reference, &s.run, &s.oracle)?;
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("ablation.csv");
    report.save_csv(&path)?;
    println!("{:<22} {:>12} {:>10} {:>9}", "cell", "median_mse", "accuracy", "wall_s");
    for r in &report.rows {
        println!("{:<22} {:>12.6} {:>10.4} {:>9.3}", r.label, r.median_mse, r.median_accuracy, r.wall_s);
    }
    println!("low-band gap between dse and dse_zero: {:.2e}", report.low_band_max_gap);
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let ta = load_tensor(&a.a)?;
    let tb = load_tensor(&a.b)?;
    let mut profile = delta_log_magnitude(&ta, &tb)?;
    if let Some(prev) = &a.prev {
        let (ph, pw) = parse_hw(prev)?;
        profile.nyquist_bin = Some(nyquist_bin(ph, pw, ta.height(), ta.width())?);
    }
    profile.write_csv(fs::File::create(&a.out)?)?;
    for (b, v) in profile.bins.iter().zip(&profile.values) {
        println!("bin {b:>3}: {v:+.6}");
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let sizes = a.sizes.split(',').map(|s| parse_hwc(s.trim())).collect::<Result<Vec<_>>>()?;
    let rows = latency_bench(&sizes, a.reps)?;
    write_bench_csv(&rows, fs::File::create(&a.out)?)?;
    for r in &rows {
        println!("{:<12} {:<10} {:>12.6} ms  ±{:.6}  ratio {:.4}", r.size, r.op, r.mean_s * 1e3, r.std_s * 1e3, r.ratio);
    }
    Ok(())
}

fn demo(a: DemoArgs) -> Result<()> {
    let kind: DemoKind = parse("kind", &a.kind)?;
    let (h, w, c) = parse_hwc(&a.size)?;
    let grid = synthesize(kind, h, w, c, a.seed)?;
    save_tensor(&grid, &a.out)?;
    if let Some(p) = &a.preview {
        write_image(&grid, p)?;
    }
    Ok(())
}
