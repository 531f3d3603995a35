use std::io::Write;

use crate::manifest::{fingerprint_file, now_rfc3339, resolve_out_dir, RunManifest};
use crate::{resolve_seed, CmdError, TrainArgs};
use rnp_core::data::{chrono_split, normalize};
use rnp_core::model::{DecoderKind, RnpConfig, RnpModel};
use rnp_core::train::{train, TrainConfig, TrainError};

pub fn model_config_from_args(args: &TrainArgs, input_dim: usize, target_dim: usize) -> Result<RnpConfig, CmdError> {
    let decoder_kind = match args.decoder.as_str() {
        "recurrent" => DecoderKind::Recurrent,
        "feedforward" => DecoderKind::Feedforward,
        other => {
            return Err(CmdError::Usage(format!(
                "unknown --decoder {:?}; expected recurrent or feedforward",
                other
            )))
        }
    };
    let cfg = RnpConfig {
        input_dim,
        target_dim,
        hidden_size: args.hidden,
        latent_dim: args.latent,
        encoder_layers: args.layers,
        bidirectional: args.bidirectional,
        decoder_kind,
        use_deterministic_path: args.det_path,
        condition_on_time: args.condition_on_time,
    };
    cfg.validate().map_err(CmdError::Usage)?;
    Ok(cfg)
}

pub fn run(args: &TrainArgs) -> Result<(), CmdError> {
    let seed = resolve_seed(args.seed);
    let (series, schema, _) = super::load_series(&args.data)?;
    let splits = super::splits_from_args(&args.data)?;

    let model_cfg = model_config_from_args(args, series.input_dim(), series.target_dim())?;
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        steps_per_epoch: args.steps_per_epoch,
        seed,
        context_count_range: (args.context_count_min, args.context_count_max),
        context_len: args.context_len,
        target_len: args.target_len,
        kl_weight: args.kl_weight,
        grad_clip_norm: args.grad_clip,
        checkpoint_every: args.checkpoint_every,
        val_context_count: args.context_count_max.max(1),
    };
    train_cfg.validate().map_err(CmdError::Usage)?;

    let (train_raw, _, _) =
        chrono_split(&series, splits).map_err(|e| CmdError::Usage(e.to_string()))?;
    let (normalized, _stats) = normalize(&series, train_raw.len());
    let (train_n, val_n, _test_n) =
        chrono_split(&normalized, splits).map_err(|e| CmdError::Usage(e.to_string()))?;
    if train_n.len() < train_cfg.context_len + train_cfg.target_len {
        return Err(CmdError::Usage(format!(
            "training split of {} steps cannot fit context {} + target {}",
            train_n.len(),
            train_cfg.context_len,
            train_cfg.target_len
        )));
    }

    let out_dir = resolve_out_dir(&args.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| CmdError::Runtime(e.to_string()))?;

    let dataset = fingerprint_file(&args.data.data, series.len())
        .map_err(|e| CmdError::Runtime(e.to_string()))?;
    let manifest = RunManifest {
        command_line: std::env::args().collect(),
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        schema,
        splits,
        seed,
        dataset,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: now_rfc3339(),
    };
    manifest
        .write(&out_dir.join("manifest.json"))
        .map_err(|e| CmdError::Runtime(e.to_string()))?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let metrics_file = std::fs::File::create(&metrics_path)
        .map_err(|e| CmdError::Runtime(e.to_string()))?;
    let mut metrics_out = std::io::BufWriter::new(metrics_file);

    let mut model = RnpModel::new(model_cfg, seed);
    let mut io_err: Option<std::io::Error> = None;
    let outcome = train(
        &mut model,
        &train_n,
        Some(&val_n),
        &train_cfg,
        Some(&out_dir),
        |m| {
            let line = serde_json::to_string(m).expect("metrics row serializes");
            if let Err(e) = writeln!(metrics_out, "{}", line) {
                io_err.get_or_insert(e);
            }
        },
    );
    metrics_out
        .flush()
        .map_err(|e| CmdError::Runtime(e.to_string()))?;
    if let Some(e) = io_err {
        return Err(CmdError::Runtime(format!("writing metrics: {}", e)));
    }
    match outcome {
        Ok(out) => {
            if out.skipped_steps > 0 {
                eprintln!(
                    "warning: {} optimizer steps skipped on non-finite gradients",
                    out.skipped_steps
                );
            }
            eprintln!(
                "run complete: {} epochs, metrics at {}",
                out.log.len(),
                metrics_path.display()
            );
            Ok(())
        }
        Err(e @ TrainError::NonFiniteLoss { .. }) => Err(CmdError::Runtime(e.to_string())),
        Err(e) => Err(CmdError::Runtime(e.to_string())),
    }
}
