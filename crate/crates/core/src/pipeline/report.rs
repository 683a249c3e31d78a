//! Run metrics and their CSV forms.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Metrics for one scale of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRecord {
    pub seed: u64,
    pub scale: usize,
    pub height: usize,
    pub width: usize,
    /// Guidance scale applied at this step (0 when guidance was skipped).
    pub beta: f64,
    pub forced: bool,
    /// Fraction of sampled tokens equal to the teacher's.
    pub accuracy: f64,
    /// `MSE(f̂_k, reference)`.
    pub mse: f64,
    /// `MSE(f̂_k, teacher f̂_k)`.
    pub teacher_mse: f64,
    pub psnr: f64,
}

pub const REPORT_HEADER: [&str; 10] =
    ["seed", "scale", "height", "width", "beta", "forced", "accuracy", "mse", "teacher_mse", "psnr"];

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ScaleRecord>,
    /// Wall time per seed, seconds. Kept out of the CSV so reports stay reproducible.
    pub wall_times: Vec<(u64, f64)>,
}

impl RunReport {
    /// Orders rows by `(seed, scale)`.
    pub fn sort(&mut self) {
        self.rows.sort_by_key(|r| (r.seed, r.scale));
        self.wall_times.sort_by(|a, b| a.0.cmp(&b.0));
    }

    pub fn num_scales(&self) -> usize {
        self.rows.iter().map(|r| r.scale).max().unwrap_or(0)
    }

    fn final_rows(&self) -> impl Iterator<Item = &ScaleRecord> {
        let last = self.num_scales();
        self.rows.iter().filter(move |r| r.scale == last)
    }

    pub fn final_mse(&self) -> Vec<f64> {
        self.final_rows().map(|r| r.mse).collect()
    }

    pub fn median_final_mse(&self) -> f64 {
        median(&mut self.final_mse())
    }

    pub fn median_final_accuracy(&self) -> f64 {
        median(&mut self.final_rows().map(|r| r.accuracy).collect::<Vec<_>>())
    }

    /// Median of `metric` at every scale, coarsest first.
    pub fn per_scale_median(&self, metric: impl Fn(&ScaleRecord) -> f64) -> Vec<f64> {
        (1..=self.num_scales())
            .map(|k| median(&mut self.rows.iter().filter(|r| r.scale == k).map(&metric).collect::<Vec<_>>()))
            .collect()
    }

    pub fn total_wall_time(&self) -> f64 {
        self.wall_times.iter().map(|(_, t)| t).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                r.scale.to_string(),
                r.height.to_string(),
                r.width.to_string(),
                r.beta.to_string(),
                u8::from(r.forced).to_string(),
                r.accuracy.to_string(),
                r.mse.to_string(),
                r.teacher_mse.to_string(),
                r.psnr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Multi-line human summary.
    pub fn summary(&self) -> String {
        let mse = self.per_scale_median(|r| r.mse);
        let acc = self.per_scale_median(|r| r.accuracy);
        let mut s = format!("seeds: {}\n", self.wall_times.len());
        for (k, (m, a)) in mse.iter().zip(&acc).enumerate() {
            s.push_str(&format!("scale {}: median mse {m:.6}  median accuracy {a:.4}\n", k + 1));
        }
        s.push_str(&format!("median final mse: {:.6}\n", self.median_final_mse()));
        s.push_str(&format!("wall time: {:.3}s\n", self.total_wall_time()));
        s
    }
}

/// One cell of the ablation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub prior: String,
    pub decay: String,
    pub median_mse: f64,
    pub median_accuracy: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Largest low-band DCT difference seen between `dse` and `dse_zero` priors.
    pub low_band_max_gap: f64,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "prior", "decay", "median_mse", "median_accuracy", "wall_s"])?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.prior.clone(),
                r.decay.clone(),
                r.median_mse.to_string(),
                r.median_accuracy.to_string(),
                format!("{:.6}", r.wall_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}
