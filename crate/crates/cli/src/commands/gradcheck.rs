use crate::{resolve_seed, CmdError, GradcheckArgs};
use rnp_core::data::Subsequence;
use rnp_core::gradcheck::{grad_check, GradCheckConfig};
use rnp_core::model::{DecoderKind, RnpConfig, RnpModel};
use rnp_core::rng::seeded_rng;
use rnp_core::train::elbo_loss;

use rand::Rng;

/// Builds a toy task (3 context subsequences of length 4, one length-4
/// target) and checks the full ELBO gradient against central differences.
pub fn run(args: &GradcheckArgs) -> Result<(), CmdError> {
    if args.eps <= 0.0 || args.tol <= 0.0 {
        return Err(CmdError::Usage("--eps and --tol must be positive".into()));
    }
    let seed = resolve_seed(args.seed);
    let cfg = RnpConfig {
        input_dim: 1,
        target_dim: 1,
        hidden_size: 8,
        latent_dim: 4,
        encoder_layers: 1,
        bidirectional: false,
        decoder_kind: DecoderKind::Recurrent,
        use_deterministic_path: true,
        condition_on_time: false,
    };
    let mut model = RnpModel::new(cfg, seed);

    let mut data_rng = seeded_rng(seed.wrapping_add(1));
    let mut window = |start: usize| -> Subsequence {
        Subsequence {
            start_index: start,
            xs: (0..4).map(|i| vec![(start + i) as f64 / 16.0]).collect(),
            ys: (0..4).map(|_| vec![data_rng.gen_range(-1.0..1.0)]).collect(),
        }
    };
    let context = vec![window(0), window(4), window(8)];
    let target = window(12);
    let noise: Vec<f64> = (0..4).map(|_| data_rng.gen_range(-1.0..1.0)).collect();

    let check_cfg = GradCheckConfig {
        eps: args.eps,
        rel_tol: args.tol,
        fault_offset: if args.inject_grad_fault { 1.0 } else { 0.0 },
        ..GradCheckConfig::default()
    };
    let report = grad_check(
        &mut model,
        |tape, model: &RnpModel| {
            elbo_loss(model, tape, &context, &target, 1.0, 16.0, &noise).loss
        },
        &check_cfg,
    );

    println!(
        "checked {} parameter blocks at eps {:.1e}, tol {:.1e} (seed {})",
        report.params.len(),
        report.eps,
        report.rel_tol,
        seed
    );
    if let Some(worst) = report.worst() {
        println!(
            "worst block: {} (max rel err {:.3e})",
            worst.name, worst.max_rel_err
        );
    }
    if report.passed {
        println!("PASS rel_err<{:.0e}: max rel err {:.3e}", report.rel_tol, report.max_rel_err);
        Ok(())
    } else {
        println!("FAIL: max rel err {:.3e} exceeds tol {:.0e}", report.max_rel_err, report.rel_tol);
        Err(CmdError::CheckFailed(format!(
            "gradient check failed: max rel err {:.3e}",
            report.max_rel_err
        )))
    }
}
