//! Flat `key=value` configuration: file first, then flag overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ssg_core::codec::{Codebook, ScaleLadder};
use ssg_core::dse::{InterpKind, PriorMode, PriorOptions};
use ssg_core::grids::load_tensor;
use ssg_core::guidance::{Decay, GuidanceSchedule};
use ssg_core::pipeline::{OracleConfig, PriorSource, RunConfig};
use ssg_core::{Error, Exec, Grid3D, Result};

/// Every key a run configuration accepts, with its default (empty = required).
pub const RUN_KEYS: &[(&str, &str)] = &[
    ("reference", ""),
    ("ladder", "1x1,2x2,4x4,8x8"),
    ("codebook", "gen:32,C,0"),
    ("upsample", "linear"),
    ("beta0", "1.0"),
    ("decay", "linear"),
    ("prior", "dse"),
    ("interp", "linear"),
    ("raw_copy", "false"),
    ("prior_source", "raw"),
    ("ssg", "true"),
    ("temperature", "1.0"),
    ("argmax", "false"),
    ("lambda", "0.5"),
    ("sigma", "1.0"),
    ("logit_scale", "8.0"),
    ("oracle_seed", "0"),
    ("seeds", "0..49"),
    ("prefix", "1"),
    ("exec", "parallel"),
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Config {
    /// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("{origin}:{}: expected key=value, got {line:?}", n + 1)))?;
            cfg.set(key.trim(), value.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Applies overrides on top of this config; overrides win.
    pub fn merged(mut self, overrides: &[(&str, Option<String>)]) -> Self {
        for (key, value) in overrides {
            if let Some(v) = value {
                self.set(key, v);
            }
        }
        self
    }

    pub fn reject_unknown(&self, known: &[(&str, &str)]) -> Result<()> {
        for key in self.values.keys() {
            if !known.iter().any(|(k, _)| k == key) {
                return Err(config_err(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    fn raw<'a>(&'a self, key: &str, known: &'a [(&str, &str)]) -> Result<&'a str> {
        if let Some(v) = self.values.get(key) {
            return Ok(v);
        }
        match known.iter().find(|(k, _)| *k == key) {
            Some((_, d)) if !d.is_empty() => Ok(d),
            _ => Err(config_err(format!("missing required key {key:?}"))),
        }
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key, RUN_KEYS)?;
        raw.parse().map_err(|e| config_err(format!("{key}={raw}: {e}")))
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.raw(key, RUN_KEYS)
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.raw(key, RUN_KEYS)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(config_err(format!("{key}={other}: expected true or false"))),
        }
    }
}

/// Parses `0..49` (inclusive), `3`, or comma lists of either, such as `0..3,7`.
pub fn parse_int_list(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || config_err(format!("bad integer or range {part:?}"));
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if b < a {
                    return Err(config_err(format!("empty range {part:?}")));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(config_err(format!("empty integer list {s:?}")));
    }
    Ok(out)
}

/// `HxWxC`.
pub fn parse_hwc(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    let bad = || config_err(format!("expected HxWxC, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n: Vec<usize> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
    if n.contains(&0) {
        return Err(bad());
    }
    Ok((n[0], n[1], n[2]))
}

/// A codebook tensor path, or `gen:V,C,seed`. A literal `C` for the
/// dimension takes `channels`.
pub fn resolve_codebook(spec: &str, channels: usize) -> Result<Codebook> {
    match spec.strip_prefix("gen:") {
        Some(args) => {
            let parts: Vec<&str> = args.split(',').map(str::trim).collect();
            let bad = || config_err(format!("expected gen:V,C,seed, got {spec:?}"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let v: usize = parts[0].parse().map_err(|_| bad())?;
            let c: usize = if parts[1] == "C" { channels } else { parts[1].parse().map_err(|_| bad())? };
            let seed: u64 = parts[2].parse().map_err(|_| bad())?;
            Codebook::generate(v, c, seed)
        }
        None => Codebook::from_grid(&load_tensor(spec)?),
    }
}

pub fn parse_exec(s: &str) -> Result<Exec> {
    match s {
        "parallel" => Ok(Exec::Parallel),
        "sequential" => Ok(Exec::Sequential),
        other => Err(config_err(format!("exec={other}: expected parallel or sequential"))),
    }
}

/// Everything a `run`, `complete` or `ablation` invocation needs.
pub struct RunSettings {
    pub reference: Grid3D,
    pub run: RunConfig,
    pub oracle: OracleConfig,
}

impl RunSettings {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.reject_unknown(RUN_KEYS)?;
        let reference_path = PathBuf::from(cfg.get_str("reference")?);
        let reference = load_tensor(&reference_path)?;
        let ladder: ScaleLadder = cfg.get("ladder")?;
        let codebook = resolve_codebook(cfg.get_str("codebook")?, reference.channels())?;
        let decay: Decay = cfg.get("decay")?;
        let beta0: f64 = cfg.get("beta0")?;
        let mut run = RunConfig::new(ladder.clone(), codebook, beta0)?;
        run.schedule = GuidanceSchedule::new(beta0, ladder.len(), decay)?;
        run.prior_mode = cfg.get::<PriorMode>("prior")?;
        run.prior_options =
            PriorOptions { amplitude_preserving: !cfg.get_bool("raw_copy")?, interp: cfg.get::<InterpKind>("interp")? };
        run.upsample = cfg.get::<InterpKind>("upsample")?;
        run.prior_source = cfg.get::<PriorSource>("prior_source")?;
        run.with_ssg = cfg.get_bool("ssg")?;
        run.temperature = cfg.get("temperature")?;
        run.argmax = cfg.get_bool("argmax")?;
        run.seeds = parse_int_list(cfg.get_str("seeds")?)?;
        run.prefix_scales = cfg.get("prefix")?;
        run.exec = parse_exec(cfg.get_str("exec")?)?;
        let oracle = OracleConfig {
            logit_scale: cfg.get("logit_scale")?,
            noise_sigma: cfg.get("sigma")?,
            lowpass_lambda: cfg.get("lambda")?,
            seed: cfg.get("oracle_seed")?,
        };
        oracle.validate()?;
        Ok(Self { reference, run, oracle })
    }
}
