use std::io::Write;

use serde_json::json;

use crate::{resolve_seed, CmdError, SynthArgs};
use rnp_core::data::{synth_drives, synth_sine_drift, synth_two_scale, TimeSeries};

pub fn run(args: &SynthArgs) -> Result<(), CmdError> {
    let seed = resolve_seed(args.seed);
    let (series, params) = match args.kind.as_str() {
        "sine-drift" => {
            let s = synth_sine_drift(
                args.steps,
                args.base_freq,
                args.amp_drift_period,
                args.noise_std,
                seed,
            )
            .map_err(|e| CmdError::Usage(e.to_string()))?;
            let p = json!({
                "base_freq": args.base_freq,
                "amp_drift_period": args.amp_drift_period,
                "noise_std": args.noise_std,
            });
            (s, p)
        }
        "two-scale" => {
            let s = synth_two_scale(
                args.steps,
                args.fast_period,
                args.slow_period,
                args.slow_amp,
                args.noise_std,
                seed,
            )
            .map_err(|e| CmdError::Usage(e.to_string()))?;
            let p = json!({
                "fast_period": args.fast_period,
                "slow_period": args.slow_period,
                "slow_amp": args.slow_amp,
                "noise_std": args.noise_std,
            });
            (s, p)
        }
        "drives" => {
            let s = synth_drives(args.steps, args.noise_std, seed)
                .map_err(|e| CmdError::Usage(e.to_string()))?;
            (s, json!({ "noise_std": args.noise_std }))
        }
        other => {
            return Err(CmdError::Usage(format!(
                "unknown --kind {:?}; expected sine-drift, two-scale, or drives",
                other
            )))
        }
    };

    write_csv(&series, args).map_err(|e| CmdError::Runtime(e.to_string()))?;
    let meta = json!({
        "kind": args.kind,
        "steps": args.steps,
        "seed": seed,
        "params": params,
        "columns": { "t": "step index", "x": "input feature", "y": "target" },
    });
    let meta_path = args.out.with_extension("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| CmdError::Runtime(e.to_string()))?;
    eprintln!(
        "wrote {} rows to {} (metadata: {})",
        series.len(),
        args.out.display(),
        meta_path.display()
    );
    Ok(())
}

fn write_csv(series: &TimeSeries, args: &SynthArgs) -> std::io::Result<()> {
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(f, "t,x,y")?;
    for (t, (x, y)) in series.x.iter().zip(&series.y).enumerate() {
        writeln!(f, "{},{},{}", t, x[0], y[0])?;
    }
    f.flush()
}
