//! Next-scale generation with guidance, driven by a teacher oracle.
//!
//! A reference feature field is encoded into teacher token maps. Each run
//! seed then walks the scale ladder: the oracle produces logits for the
//! step, guidance (from the second step on) pushes them away from a prior
//! built out of the previous step's cached raw logits, a token map is
//! sampled, and the reconstruction is accumulated and scored.

pub mod demo;
pub mod oracle;
pub mod report;
pub mod sampler;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::codec::{encode_multiscale_with, reconstruct_partials, Accumulator, Codebook, ScaleLadder};
use crate::dse::{InterpKind, PriorMode, PriorOptions, PriorPlan};
use crate::error::{domain_err, shape_err, Error, Result};
use crate::exec::Exec;
use crate::grids::{Grid3D, TokenMap};
use crate::guidance::{apply_ssg, Decay, GuidanceSchedule};
use crate::spectral::dct2;

pub use oracle::{ideal_logits, oracle_logits, OracleConfig};
pub use report::{AblationReport, AblationRow, RunReport, ScaleRecord};
pub use sampler::{sample_map, sample_map_with};

/// Which logits of step `k−1` feed the prior at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorSource {
    /// The oracle's raw logits, before guidance.
    #[default]
    Raw,
    /// The guided logits actually sampled from.
    Guided,
}

impl FromStr for PriorSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "guided" => Ok(Self::Guided),
            other => Err(Error::Config(format!("unknown prior source {other:?}"))),
        }
    }
}

impl fmt::Display for PriorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Raw => "raw",
            Self::Guided => "guided",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ladder: ScaleLadder,
    pub codebook: Codebook,
    pub schedule: GuidanceSchedule,
    pub prior_mode: PriorMode,
    pub prior_options: PriorOptions,
    /// The codec's upsampling operator `U`.
    pub upsample: InterpKind,
    pub temperature: f64,
    pub argmax: bool,
    pub with_ssg: bool,
    /// Number of teacher-forced scales for completion runs.
    pub prefix_scales: usize,
    pub prior_source: PriorSource,
    pub seeds: Vec<u64>,
    pub exec: Exec,
}

impl RunConfig {
    /// Guided run with a linear `β` decay over the ladder and DSE priors.
    pub fn new(ladder: ScaleLadder, codebook: Codebook, beta0: f64) -> Result<Self> {
        let schedule = GuidanceSchedule::new(beta0, ladder.len(), Decay::Linear)?;
        Ok(Self {
            ladder,
            codebook,
            schedule,
            prior_mode: PriorMode::Dse,
            prior_options: PriorOptions::default(),
            upsample: InterpKind::Linear,
            temperature: 1.0,
            argmax: false,
            with_ssg: true,
            prefix_scales: 1,
            prior_source: PriorSource::Raw,
            seeds: vec![0],
            exec: Exec::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.steps() != self.ladder.len() {
            return domain_err(format!(
                "schedule has {} steps but the ladder has {} scales",
                self.schedule.steps(),
                self.ladder.len()
            ));
        }
        if !self.argmax && !(self.temperature.is_finite() && self.temperature > 0.0) {
            return domain_err(format!("temperature must be > 0, got {}", self.temperature));
        }
        if self.prefix_scales > self.ladder.len() {
            return domain_err(format!(
                "prefix of {} scales exceeds the {}-scale ladder",
                self.prefix_scales,
                self.ladder.len()
            ));
        }
        if self.seeds.is_empty() {
            return domain_err("no seeds given");
        }
        Ok(())
    }
}

/// What happened at one step of one seed; passed to run observers.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub seed: u64,
    pub k: usize,
    pub raw: &'a Grid3D,
    /// Prior used for guidance (absent at step 1, on forced steps, or without guidance).
    pub prior: Option<&'a Grid3D>,
    pub guided: &'a Grid3D,
    pub tokens: &'a TokenMap,
    pub forced: bool,
}

/// Teacher tokens and per-scale teacher reconstructions for a reference.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub tokens: Vec<TokenMap>,
    pub partials: Vec<Grid3D>,
}

impl Teacher {
    pub fn encode(reference: &Grid3D, rc: &RunConfig) -> Result<Self> {
        let tokens = encode_multiscale_with(reference, &rc.ladder, &rc.codebook, rc.upsample, rc.exec)?;
        let partials = reconstruct_partials(&tokens, &rc.ladder, &rc.codebook, rc.upsample)?;
        Ok(Self { tokens, partials })
    }
}

fn psnr(mse: f64, peak: f64) -> f64 {
    // floor keeps exact reconstructions finite (caps at 120 dB)
    let floor = 1e-12 * peak * peak;
    10.0 * (peak * peak / mse.max(floor)).log10()
}

fn peak_of(reference: &Grid3D) -> f64 {
    let (lo, hi) = reference
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

fn build_plans(rc: &RunConfig) -> Result<Vec<Option<PriorPlan>>> {
    let scales = rc.ladder.scales();
    let mut plans = vec![None];
    for pair in scales.windows(2) {
        plans.push(Some(PriorPlan::new(pair[0], pair[1], rc.prior_mode, rc.prior_options)?));
    }
    Ok(plans)
}

/// One seed of generation. Scales `1..=forced` copy the teacher tokens.
pub fn run_seed(
    reference: &Grid3D,
    teacher: &Teacher,
    rc: &RunConfig,
    oc: &OracleConfig,
    seed: u64,
    forced: usize,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<Vec<ScaleRecord>> {
    let plans = build_plans(rc)?;
    let vocab = rc.codebook.size();
    let oc = oc.for_run(seed);
    let (h, w, c) = reference.dims();
    let peak = peak_of(reference);
    let mut acc = Accumulator::new(h, w, c);
    let mut cache: Option<Grid3D> = None;
    let mut prev_ideal: Option<Grid3D> = None;
    let mut records = Vec::with_capacity(rc.ladder.len());

    for (idx, &(hk, wk)) in rc.ladder.scales().iter().enumerate() {
        let k = idx + 1;
        let teacher_k = &teacher.tokens[idx];
        let raw = oracle_logits(teacher_k, prev_ideal.as_ref(), vocab, &oc, k)?;
        let is_forced = k <= forced;
        let beta = rc.schedule.beta_at(k)?;

        let mut prior = None;
        let guided = match (&cache, &plans[idx]) {
            (Some(prev), Some(plan)) if rc.with_ssg && !is_forced => {
                let p = plan.apply(prev, rc.exec)?;
                let g = apply_ssg(&raw, &p, beta)?;
                prior = Some(p);
                g
            }
            _ => raw.clone(),
        };
        let tokens = if is_forced {
            teacher_k.clone()
        } else {
            sample_map_with(&guided, rc.temperature, seed, k, rc.argmax, rc.exec)?
        };
        let applied_beta = if prior.is_some() { beta } else { 0.0 };
        observer(&StepEvent {
            seed,
            k,
            raw: &raw,
            prior: prior.as_ref(),
            guided: &guided,
            tokens: &tokens,
            forced: is_forced,
        });

        acc.add(&tokens, &rc.codebook, rc.upsample)?;
        let mse = reference.mse(acc.f_hat())?;
        records.push(ScaleRecord {
            seed,
            scale: k,
            height: hk,
            width: wk,
            beta: applied_beta,
            forced: is_forced,
            accuracy: tokens.agreement(teacher_k)?,
            mse,
            teacher_mse: teacher.partials[idx].mse(acc.f_hat())?,
            psnr: psnr(mse, peak),
        });

        prev_ideal = Some(ideal_logits(teacher_k, vocab, oc.logit_scale)?);
        cache = Some(match rc.prior_source {
            PriorSource::Raw => raw,
            PriorSource::Guided => guided,
        });
    }
    Ok(records)
}

fn run_all(reference: &Grid3D, rc: &RunConfig, oc: &OracleConfig, forced: usize) -> Result<RunReport> {
    rc.validate()?;
    oc.validate()?;
    rc.ladder.check_field(reference)?;
    if reference.channels() != rc.codebook.dim() {
        return shape_err(format!(
            "reference has {} channels, codebook dim is {}",
            reference.channels(),
            rc.codebook.dim()
        ));
    }
    let teacher = Teacher::encode(reference, rc)?;
    // seeds fan out; each seed runs its scale loop sequentially
    let inner = RunConfig { exec: Exec::Sequential, ..rc.clone() };
    let per_seed = rc.exec.try_map(rc.seeds.len(), |i| {
        let seed = rc.seeds[i];
        let start = Instant::now();
        let rows = run_seed(reference, &teacher, &inner, oc, seed, forced, &mut |_| {})?;
        Ok::<_, Error>((rows, (seed, start.elapsed().as_secs_f64())))
    })?;
    let mut report = RunReport::default();
    for (rows, timing) in per_seed {
        report.rows.extend(rows);
        report.wall_times.push(timing);
    }
    report.sort();
    Ok(report)
}

/// Generates every scale for every seed.
pub fn run_generation(reference: &Grid3D, rc: &RunConfig, oc: &OracleConfig) -> Result<RunReport> {
    run_all(reference, rc, oc, 0)
}

/// Teacher-forces the first `rc.prefix_scales` scales and generates the rest.
pub fn run_completion(reference: &Grid3D, rc: &RunConfig, oc: &OracleConfig) -> Result<RunReport> {
    let m = rc.prefix_scales;
    if m == 0 || m >= rc.ladder.len() {
        return domain_err(format!(
            "completion needs 1 <= m < K, got m={m} with K={}",
            rc.ladder.len()
        ));
    }
    run_all(reference, rc, oc, m)
}

/// Baseline plus every prior mode under both decay schedules, on shared seeds.
///
/// While running, the spectral priors of the first seed are checked to share
/// their low band between `dse` and `dse_zero`; a mismatch above 1e-9 is an
/// error.
pub fn ablation_suite(reference: &Grid3D, base: &RunConfig, oc: &OracleConfig) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    let mut cell = |label: &str, rc: RunConfig| -> Result<()> {
        let start = Instant::now();
        let run = run_generation(reference, &rc, oc)?;
        report.rows.push(AblationRow {
            label: label.to_string(),
            prior: if rc.with_ssg { rc.prior_mode.to_string() } else { "none".into() },
            decay: if rc.with_ssg { rc.schedule.decay().to_string() } else { "none".into() },
            median_mse: run.median_final_mse(),
            median_accuracy: run.median_final_accuracy(),
            wall_s: start.elapsed().as_secs_f64(),
        });
        Ok(())
    };
    cell("baseline", RunConfig { with_ssg: false, ..base.clone() })?;
    for mode in PriorMode::ALL {
        for decay in [Decay::Linear, Decay::Constant] {
            let schedule = GuidanceSchedule::new(base.schedule.beta0(), base.schedule.steps(), decay)?;
            let rc = RunConfig { with_ssg: true, prior_mode: mode, schedule, ..base.clone() };
            cell(&format!("{mode}/{decay}"), rc)?;
        }
    }
    report.low_band_max_gap = low_band_gap(reference, base, oc)?;
    if report.low_band_max_gap > 1e-9 {
        return domain_err(format!(
            "dse and dse_zero priors disagree on the low band by {}",
            report.low_band_max_gap
        ));
    }
    Ok(report)
}

/// Largest low-band DCT difference between `dse` and `dse_zero` priors built
/// from the same cached logits, over every step of the first seed.
fn low_band_gap(reference: &Grid3D, base: &RunConfig, oc: &OracleConfig) -> Result<f64> {
    let rc = RunConfig { with_ssg: true, prior_mode: PriorMode::Dse, exec: Exec::Sequential, ..base.clone() };
    let teacher = Teacher::encode(reference, &rc)?;
    let mut raws = Vec::new();
    run_seed(reference, &teacher, &rc, oc, base.seeds[0], 0, &mut |e| raws.push(e.raw.clone()))?;
    let scales = rc.ladder.scales();
    let mut gap: f64 = 0.0;
    for (idx, pair) in scales.windows(2).enumerate() {
        let (src, dst) = (pair[0], pair[1]);
        let full = PriorPlan::new(src, dst, PriorMode::Dse, rc.prior_options)?.apply(&raws[idx], Exec::Sequential)?;
        let zero = PriorPlan::new(src, dst, PriorMode::DseZero, rc.prior_options)?.apply(&raws[idx], Exec::Sequential)?;
        for ch in 0..full.channels() {
            let (a, b) = (dct2(&full.channel(ch))?, dct2(&zero.channel(ch))?);
            for i in 0..src.0 {
                for j in 0..src.1 {
                    gap = gap.max((a.get(i, j) - b.get(i, j)).abs());
                }
            }
        }
    }
    Ok(gap)
}
