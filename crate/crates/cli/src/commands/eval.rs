use std::io::Write;

use crate::manifest::{config_fingerprint, resolve_out_dir};
use crate::{resolve_seed, CmdError, EvalArgs};
use rnp_core::checkpoint::load_checkpoint;
use rnp_core::data::{chrono_split, normalize, sample_subsequences, SampleStrategy, TimeSeries};
use rnp_core::metrics::{
    lstm_baseline_train_eval, mse, percentile, persistence_mse, picp, sample_step_predictions,
    LstmBaselineConfig, MetricsReport,
};
use rnp_core::model::RnpModel;
use rnp_core::rng::seeded_rng;
use rnp_core::train::evaluate_one_step;

struct EvalData {
    history: TimeSeries,
    segment: TimeSeries,
}

fn select_segment(args: &EvalArgs, normalized: &TimeSeries, splits: (f64, f64, f64)) -> Result<EvalData, CmdError> {
    let (train_n, val_n, test_n) =
        chrono_split(normalized, splits).map_err(|e| CmdError::Usage(e.to_string()))?;
    let concat = |parts: &[&TimeSeries]| -> TimeSeries {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for p in parts {
            x.extend(p.x.iter().cloned());
            y.extend(p.y.iter().cloned());
        }
        TimeSeries {
            name: "history".into(),
            x,
            y,
            origin: parts[0].origin,
            spacing: parts[0].spacing,
        }
    };
    match args.split.as_str() {
        "train" => Ok(EvalData {
            history: train_n.clone(),
            segment: train_n,
        }),
        "val" => Ok(EvalData {
            history: train_n,
            segment: val_n,
        }),
        "test" => Ok(EvalData {
            history: concat(&[&train_n, &val_n]),
            segment: test_n,
        }),
        other => Err(CmdError::Usage(format!(
            "unknown --split {:?}; expected train, val, or test",
            other
        ))),
    }
}

pub fn run(args: &EvalArgs) -> Result<(), CmdError> {
    let seed = resolve_seed(args.seed);
    if args.samples < 20 {
        return Err(CmdError::Usage(
            "--samples must be at least 20 for stable percentiles".into(),
        ));
    }
    if !(0.0..1.0).contains(&args.level) {
        return Err(CmdError::Usage(format!(
            "--level {} outside (0, 1)",
            args.level
        )));
    }

    let (series, _, _) = super::load_series(&args.data)?;
    let splits = super::splits_from_args(&args.data)?;
    let ckpt = load_checkpoint(&args.checkpoint).map_err(|e| CmdError::Runtime(e.to_string()))?;
    if ckpt.config.input_dim != series.input_dim() || ckpt.config.target_dim != series.target_dim()
    {
        return Err(CmdError::Usage(format!(
            "checkpoint expects {}/{} input/target dims, dataset has {}/{}",
            ckpt.config.input_dim,
            ckpt.config.target_dim,
            series.input_dim(),
            series.target_dim()
        )));
    }
    let model: RnpModel = ckpt
        .restore_model()
        .map_err(|e| CmdError::Runtime(e.to_string()))?;

    let (train_raw, _, _) =
        chrono_split(&series, splits).map_err(|e| CmdError::Usage(e.to_string()))?;
    let (normalized, _) = normalize(&series, train_raw.len());
    let data = select_segment(args, &normalized, splits)?;

    // predictive (mean, stddev) per step plus sampled intervals
    let mut rng = seeded_rng(seed);
    let (model_mse, rows, samples_per_step): (f64, Vec<PredRow>, Vec<Vec<f64>>) =
        match args.mode.as_str() {
            "one-step" => {
                let eval = evaluate_one_step(
                    &model,
                    &data.history,
                    &data.segment,
                    args.context_count,
                    args.context_len,
                    seed,
                )
                .map_err(|e| CmdError::Runtime(e.to_string()))?;
                let gaussians: Vec<(Vec<f64>, Vec<f64>)> = eval
                    .steps
                    .iter()
                    .map(|s| (s.mean.clone(), s.stddev.clone()))
                    .collect();
                let samples = sample_step_predictions(&gaussians, args.samples, &mut rng);
                let lo_q = (1.0 - args.level) / 2.0;
                let rows = eval
                    .steps
                    .iter()
                    .zip(&samples)
                    .enumerate()
                    .map(|(i, (s, draw))| PredRow {
                        step: i,
                        mean: s.mean[0],
                        p5: percentile(draw, lo_q),
                        p95: percentile(draw, 1.0 - lo_q),
                        target: s.target.as_ref().map(|t| t[0]),
                    })
                    .collect();
                (eval.mse, rows, samples)
            }
            "autoregressive" => {
                let context_len = args.context_len.min(data.history.len());
                let context = sample_subsequences(
                    &data.history,
                    args.context_count.max(1),
                    (context_len, context_len),
                    SampleStrategy::UniformRandom,
                    &mut rng,
                )
                .map_err(|e| CmdError::Runtime(e.to_string()))?;
                let forecast = model.predict_autoregressive(
                    &context,
                    &data.segment.x,
                    args.samples,
                    data.history.len() as f64,
                    &mut rng,
                );
                let err = mse(&forecast.mean, &data.segment.y);
                let rows = (0..data.segment.len())
                    .map(|i| PredRow {
                        step: i,
                        mean: forecast.mean[i][0],
                        p5: forecast.p5[i][0],
                        p95: forecast.p95[i][0],
                        target: Some(data.segment.y[i][0]),
                    })
                    .collect();
                (err, rows, Vec::new())
            }
            other => {
                return Err(CmdError::Usage(format!(
                    "unknown --mode {:?}; expected one-step or autoregressive",
                    other
                )))
            }
        };

    let targets: Vec<f64> = data.segment.y.iter().map(|y| y[0]).collect();
    let picp_value = if samples_per_step.is_empty() {
        // autoregressive path: coverage straight from the interval bounds
        let covered = rows
            .iter()
            .filter(|r| r.target.map(|t| r.p5 < t && t < r.p95).unwrap_or(false))
            .count();
        covered as f64 / rows.len() as f64
    } else {
        picp(&samples_per_step, &targets, args.level)
    };

    let (baseline_name, normalized_mse_value) = match args.baseline.as_deref() {
        None => (None, None),
        Some("persistence") => {
            let base = persistence_mse(&data.segment);
            (
                Some("persistence".to_string()),
                Some(rnp_core::metrics::normalized_mse(model_mse, base)),
            )
        }
        Some("lstm") => {
            let (train_n, _, _) =
                chrono_split(&normalized, splits).map_err(|e| CmdError::Usage(e.to_string()))?;
            let cfg = LstmBaselineConfig {
                hidden_size: args.baseline_hidden,
                layers: args.baseline_layers,
                learning_rate: args.baseline_lr,
                steps: args.baseline_steps,
                window: args.context_len.max(10),
                batch_size: 8,
                grad_clip_norm: 5.0,
                seed,
            };
            let (_, base) = lstm_baseline_train_eval(&train_n, &data.segment, &cfg);
            (
                Some("lstm".to_string()),
                Some(rnp_core::metrics::normalized_mse(model_mse, base)),
            )
        }
        Some(other) => {
            return Err(CmdError::Usage(format!(
                "unknown --baseline {:?}; expected persistence or lstm",
                other
            )))
        }
    };

    let report = MetricsReport {
        mse: model_mse,
        normalized_mse: normalized_mse_value,
        baseline: baseline_name,
        picp: picp_value,
        picp_level: args.level,
        n_steps: rows.len(),
        config_fingerprint: config_fingerprint(&(&ckpt.config, seed, &args.split)),
    };

    let out_dir = match &args.out_dir {
        Some(d) => resolve_out_dir(d),
        None => args
            .checkpoint
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| ".".into()),
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| CmdError::Runtime(e.to_string()))?;
    write_predictions(&out_dir.join("predictions.csv"), &rows)
        .map_err(|e| CmdError::Runtime(e.to_string()))?;
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out_dir.join("metrics.json"), &report_json)
        .map_err(|e| CmdError::Runtime(e.to_string()))?;
    println!("{}", report_json);
    Ok(())
}

struct PredRow {
    step: usize,
    mean: f64,
    p5: f64,
    p95: f64,
    target: Option<f64>,
}

fn write_predictions(path: &std::path::Path, rows: &[PredRow]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,mean,p5,p95,target")?;
    for r in rows {
        match r.target {
            Some(t) => writeln!(f, "{},{},{},{},{}", r.step, r.mean, r.p5, r.p95, t)?,
            None => writeln!(f, "{},{},{},{},", r.step, r.mean, r.p5, r.p95)?,
        }
    }
    f.flush()
}
