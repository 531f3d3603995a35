//! Dataset ingestion, normalization, subsequence sampling, and synthetic
//! series generators.

use std::f64::consts::TAU;
use std::fs::File;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty input file")]
    EmptyFile,
    #[error("no valid data rows")]
    NoValidRows,
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("{0}")]
    Invalid(String),
}

// ── Core series types ───────────────────────────────────────────────────

/// Uniformly sampled series of input features `x` and targets `y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub origin: f64,
    pub spacing: f64,
}

impl TimeSeries {
    pub fn new(name: &str, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let ts = TimeSeries {
            name: name.to_string(),
            x,
            y,
            origin: 0.0,
            spacing: 1.0,
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.x.len() != self.y.len() {
            return Err(DataError::Invalid(format!(
                "x has {} steps but y has {}",
                self.x.len(),
                self.y.len()
            )));
        }
        if self.len() < 2 {
            return Err(DataError::Invalid(format!(
                "series needs at least 2 steps, got {}",
                self.len()
            )));
        }
        let finite = |rows: &[Vec<f64>]| rows.iter().flatten().all(|v| v.is_finite());
        if !finite(&self.x) || !finite(&self.y) {
            return Err(DataError::Invalid("non-finite value in series".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn target_dim(&self) -> usize {
        self.y[0].len()
    }

    fn segment(&self, name: &str, start: usize, len: usize) -> TimeSeries {
        TimeSeries {
            name: name.to_string(),
            x: self.x[start..start + len].to_vec(),
            y: self.y[start..start + len].to_vec(),
            origin: self.origin + start as f64 * self.spacing,
            spacing: self.spacing,
        }
    }
}

/// Contiguous (x, y) slice of a series, remembering where it started.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsequence {
    pub start_index: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

impl Subsequence {
    pub fn from_series(ts: &TimeSeries, start: usize, len: usize) -> Self {
        assert!(len >= 1, "empty subsequence");
        assert!(
            start + len <= ts.len(),
            "window {}..{} exceeds series length {}",
            start,
            start + len,
            ts.len()
        );
        Subsequence {
            start_index: start,
            xs: ts.x[start..start + len].to_vec(),
            ys: ts.y[start..start + len].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }
}

// ── CSV ingestion ───────────────────────────────────────────────────────

/// Column selectors are header names when `has_header`, otherwise 0-based
/// index strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target_column: String,
    pub input_columns: Vec<String>,
    pub has_header: bool,
    pub delimiter: u8,
    /// Ingest only the first N data rows when set.
    pub row_limit: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            target_column: "y".into(),
            input_columns: vec!["x".into()],
            has_header: true,
            delimiter: b',',
            row_limit: None,
        }
    }
}

fn resolve_column(
    schema_col: &str,
    headers: Option<&csv::StringRecord>,
) -> Result<usize, DataError> {
    match headers {
        Some(h) => h
            .iter()
            .position(|name| name == schema_col)
            .ok_or_else(|| DataError::UnknownColumn(schema_col.to_string())),
        None => schema_col
            .parse::<usize>()
            .map_err(|_| DataError::UnknownColumn(schema_col.to_string())),
    }
}

/// Loads a series from CSV, preserving row order as time order. Rows with
/// missing or unparseable values are dropped; the count of dropped rows is
/// returned alongside the series.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(TimeSeries, usize), DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .delimiter(schema.delimiter)
        .flexible(true)
        .from_reader(file);

    let headers = if schema.has_header {
        let h = reader.headers()?.clone();
        if h.is_empty() {
            return Err(DataError::EmptyFile);
        }
        Some(h)
    } else {
        None
    };

    let target_idx = resolve_column(&schema.target_column, headers.as_ref())?;
    let input_idx: Vec<usize> = schema
        .input_columns
        .iter()
        .map(|c| resolve_column(c, headers.as_ref()))
        .collect::<Result<_, _>>()?;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        if let Some(limit) = schema.row_limit {
            if y.len() >= limit {
                break;
            }
        }
        let get = |idx: usize| -> Option<f64> {
            record
                .get(idx)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        let target = get(target_idx);
        let inputs: Option<Vec<f64>> = input_idx.iter().map(|&i| get(i)).collect();
        match (target, inputs) {
            (Some(t), Some(ins)) => {
                x.push(ins);
                y.push(vec![t]);
            }
            _ => dropped += 1,
        }
    }
    if y.is_empty() {
        return Err(if dropped == 0 {
            DataError::EmptyFile
        } else {
            DataError::NoValidRows
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "csv".to_string());
    let series = TimeSeries::new(&name, x, y)?;
    Ok((series, dropped))
}

// ── Normalization ───────────────────────────────────────────────────────

/// Per-feature z-score statistics, fitted on the training portion only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    /// Count of features whose stddev was clamped to 1 because the column
    /// is constant on the training portion.
    pub constant_features: usize,
}

fn column_stats(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in rows {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(row) {
            let d = x - m;
            *v += d * d;
        }
    }
    let mut constant = 0;
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s == 0.0 {
                constant += 1;
                1.0
            } else {
                s
            }
        })
        .collect();
    (mean, std, constant)
}

/// Fits z-score statistics on `ts[..train_len]` and returns the whole
/// series normalized with them. Constant training columns keep their
/// spread (stddev forced to 1) and are counted in the returned stats.
pub fn normalize(ts: &TimeSeries, train_len: usize) -> (TimeSeries, NormStats) {
    let train_len = train_len.min(ts.len()).max(1);
    let (x_mean, x_std, cx) = column_stats(&ts.x[..train_len], ts.input_dim());
    let (y_mean, y_std, cy) = column_stats(&ts.y[..train_len], ts.target_dim());
    let stats = NormStats {
        x_mean,
        x_std,
        y_mean,
        y_std,
        constant_features: cx + cy,
    };
    let apply = |rows: &[Vec<f64>], mean: &[f64], std: &[f64]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|row| {
                row.iter()
                    .zip(mean.iter().zip(std))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect()
    };
    let normalized = TimeSeries {
        name: ts.name.clone(),
        x: apply(&ts.x, &stats.x_mean, &stats.x_std),
        y: apply(&ts.y, &stats.y_mean, &stats.y_std),
        origin: ts.origin,
        spacing: ts.spacing,
    };
    (normalized, stats)
}

/// Maps a normalized target vector back to the original scale.
pub fn denormalize_y(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values
        .iter()
        .zip(stats.y_mean.iter().zip(&stats.y_std))
        .map(|(v, (m, s))| v * s + m)
        .collect()
}

// ── Subsequence sampling ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStrategy {
    /// Independent windows with uniformly random lengths and starts.
    UniformRandom,
    /// Fixed-length windows tiling the series with stride == length.
    Strided,
    /// Uniform windows that must end at or before the given index.
    PrecedingTarget(usize),
}

pub fn sample_subsequences(
    ts: &TimeSeries,
    n: usize,
    len_range: (usize, usize),
    strategy: SampleStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Subsequence>, DataError> {
    let (lo, hi) = len_range;
    if lo < 1 || lo > hi {
        return Err(DataError::Invalid(format!(
            "bad length range {:?}",
            len_range
        )));
    }
    if hi > ts.len() {
        return Err(DataError::Invalid(format!(
            "window length {} exceeds series length {}",
            hi,
            ts.len()
        )));
    }
    match strategy {
        SampleStrategy::UniformRandom => Ok((0..n)
            .map(|_| {
                let len = rng.gen_range(lo..=hi);
                let start = rng.gen_range(0..=ts.len() - len);
                Subsequence::from_series(ts, start, len)
            })
            .collect()),
        SampleStrategy::Strided => {
            let len = lo;
            if n * len > ts.len() {
                return Err(DataError::Invalid(format!(
                    "{} strided windows of length {} exceed series length {}",
                    n,
                    len,
                    ts.len()
                )));
            }
            Ok((0..n)
                .map(|i| Subsequence::from_series(ts, i * len, len))
                .collect())
        }
        SampleStrategy::PrecedingTarget(before) => {
            if before < lo {
                return Err(DataError::Invalid(format!(
                    "no room for a window of length {} before index {}",
                    lo, before
                )));
            }
            Ok((0..n)
                .map(|_| {
                    let max_len = hi.min(before);
                    let len = rng.gen_range(lo..=max_len);
                    let start = rng.gen_range(0..=before - len);
                    Subsequence::from_series(ts, start, len)
                })
                .collect())
        }
    }
}

// ── Synthetic generators ────────────────────────────────────────────────

/// Sine wave with slowly drifting amplitude:
/// y_t = A(t) sin(2 pi f t) + eps, A(t) = 1 + 0.5 sin(2 pi t / P).
/// `amp_drift_period` of 0 keeps the amplitude constant at 1. The input
/// feature is the step index scaled to [0, 1].
pub fn synth_sine_drift(
    n_steps: usize,
    base_freq: f64,
    amp_drift_period: f64,
    noise_std: f64,
    seed: u64,
) -> Result<TimeSeries, DataError> {
    if n_steps < 2 {
        return Err(DataError::Invalid("need at least 2 steps".into()));
    }
    if base_freq <= 0.0 || amp_drift_period < 0.0 {
        return Err(DataError::Invalid("periods must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let denom = (n_steps - 1) as f64;
    let mut x = Vec::with_capacity(n_steps);
    let mut y = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let t = step as f64;
        let amp = if amp_drift_period == 0.0 {
            1.0
        } else {
            1.0 + 0.5 * (TAU * t / amp_drift_period).sin()
        };
        let noise: f64 = rng.sample(StandardNormal);
        x.push(vec![t / denom]);
        y.push(vec![amp * (TAU * base_freq * t).sin() + noise_std * noise]);
    }
    TimeSeries::new("sine_drift", x, y)
}

/// Two superimposed cycles on different time scales:
/// y_t = sin(2 pi t / fast) + slow_amp * sin(2 pi t / slow) + eps.
pub fn synth_two_scale(
    n_steps: usize,
    fast_period: f64,
    slow_period: f64,
    slow_amp: f64,
    noise_std: f64,
    seed: u64,
) -> Result<TimeSeries, DataError> {
    if n_steps < 2 {
        return Err(DataError::Invalid("need at least 2 steps".into()));
    }
    if fast_period <= 0.0 || fast_period >= slow_period {
        return Err(DataError::Invalid(format!(
            "fast period {} must be positive and below slow period {}",
            fast_period, slow_period
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let denom = (n_steps - 1) as f64;
    let mut x = Vec::with_capacity(n_steps);
    let mut y = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let t = step as f64;
        let noise: f64 = rng.sample(StandardNormal);
        x.push(vec![t / denom]);
        y.push(vec![
            (TAU * t / fast_period).sin()
                + slow_amp * (TAU * t / slow_period).sin()
                + noise_std * noise,
        ]);
    }
    TimeSeries::new("two_scale", x, y)
}

/// Synthetic stand-in for the coupled electric drives benchmark: a PRBS
/// voltage input driving resonant second-order belt dynamics, measured
/// through an absolute-value speed sensor (the sensor loses the sign of
/// the belt velocity).
pub fn synth_drives(n_steps: usize, noise_std: f64, seed: u64) -> Result<TimeSeries, DataError> {
    if n_steps < 2 {
        return Err(DataError::Invalid("need at least 2 steps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n_steps);
    let mut y = Vec::with_capacity(n_steps);
    let mut u = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut hold = rng.gen_range(3..=8usize);
    let (mut v1, mut v2) = (0.0f64, 0.0f64); // belt velocity, two lags
    for _ in 0..n_steps {
        if hold == 0 {
            u = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            hold = rng.gen_range(3..=8usize);
        }
        hold -= 1;
        let v = 1.5 * v1 - 0.7 * v2 + 0.4 * u;
        v2 = v1;
        v1 = v;
        let noise: f64 = rng.sample(StandardNormal);
        x.push(vec![u]);
        y.push(vec![v.abs() + noise_std * noise]);
    }
    TimeSeries::new("drives", x, y)
}

// ── Chronological split ─────────────────────────────────────────────────

/// Splits into contiguous train/val/test segments. Fractions must be
/// positive and sum to 1; every segment must keep at least 2 steps.
pub fn chrono_split(
    ts: &TimeSeries,
    fractions: (f64, f64, f64),
) -> Result<(TimeSeries, TimeSeries, TimeSeries), DataError> {
    let (f1, f2, f3) = fractions;
    if f1 <= 0.0 || f2 <= 0.0 || f3 <= 0.0 {
        return Err(DataError::Invalid("fractions must be positive".into()));
    }
    if (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!(
            "fractions sum to {}, expected 1",
            f1 + f2 + f3
        )));
    }
    let n = ts.len();
    let n1 = (f1 * n as f64).round() as usize;
    let n2 = (f2 * n as f64).round() as usize;
    let n3 = n.saturating_sub(n1 + n2);
    if n1 < 2 || n2 < 2 || n3 < 2 {
        return Err(DataError::Invalid(format!(
            "split {}/{}/{} leaves a segment below 2 steps",
            n1, n2, n3
        )));
    }
    Ok((
        ts.segment(&format!("{}_train", ts.name), 0, n1),
        ts.segment(&format!("{}_val", ts.name), n1, n2),
        ts.segment(&format!("{}_test", ts.name), n1 + n2, n3),
    ))
}
