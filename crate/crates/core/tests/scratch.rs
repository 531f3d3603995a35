// Temporary tuning harness; removed before release.

use rnp_core::data::{chrono_split, normalize, synth_drives, synth_sine_drift};
use rnp_core::metrics::{lstm_baseline_train_eval, persistence_mse, LstmBaselineConfig};
use rnp_core::model::{DecoderKind, RnpConfig, RnpModel};
use rnp_core::train::{evaluate_one_step, train, TrainConfig};

#[test]
#[ignore]
fn tune_synthetic() {
    let start = std::time::Instant::now();
    let series = synth_sine_drift(2000, 0.02, 400.0, 0.05, 11).unwrap();
    let (train_s, val_s, test_s) = chrono_split(&series, (0.8, 0.1, 0.1)).unwrap();
    let (norm_full, _) = normalize(&series, train_s.len());
    let (train_n, val_n, test_n) = chrono_split(&norm_full, (0.8, 0.1, 0.1)).unwrap();
    let _ = (train_s, val_s, test_s);

    let cfg = RnpConfig {
        input_dim: 1,
        target_dim: 1,
        hidden_size: 32,
        latent_dim: 32,
        encoder_layers: 1,
        bidirectional: false,
        decoder_kind: DecoderKind::Recurrent,
        use_deterministic_path: true,
        condition_on_time: false,
    };
    let mut model = RnpModel::new(cfg, 7);
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        epochs: 300,
        steps_per_epoch: 4,
        seed: 7,
        context_count_range: (2, 5),
        context_len: 20,
        target_len: 15,
        kl_weight: 1.0,
        grad_clip_norm: 5.0,
        checkpoint_every: 0,
        val_context_count: 4,
    };
    let initial = evaluate_one_step(&model, &train_n, &val_n, 4, 20, 99).unwrap();
    let out = train(&mut model, &train_n, Some(&val_n), &tcfg, None, |m| {
        if m.epoch % 25 == 0 {
            println!(
                "epoch {} loss {:.3} nll {:.3} kl {:.3} val_nll {:.3} val_mse {:.4} ({} ms)",
                m.epoch, m.train_loss, m.train_nll, m.train_kl, m.val_nll, m.val_mse, m.wall_ms
            );
        }
    })
    .unwrap();
    // held-out eval on test; history = train + val
    let mut history = train_n.clone();
    history.x.extend(val_n.x.iter().cloned());
    history.y.extend(val_n.y.iter().cloned());
    let eval = evaluate_one_step(&model, &history, &test_n, 4, 20, 99).unwrap();
    let pers = persistence_mse(&test_n);
    println!(
        "initial val_nll {:.3}, final val_nll {:.3}",
        initial.nll,
        out.log.last().unwrap().val_nll
    );
    println!(
        "test one-step mse {:.5} vs persistence {:.5} -> ratio {:.3}",
        eval.mse,
        pers,
        eval.mse / pers
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
}

#[test]
#[ignore]
fn tune_drives() {
    let start = std::time::Instant::now();
    let series = synth_drives(500, 0.05, 5).unwrap();
    let (train_s, _, _) = chrono_split(&series, (0.5, 0.1, 0.4)).unwrap();
    let (norm_full, _) = normalize(&series, train_s.len());
    let (train_n, val_n, test_n) = chrono_split(&norm_full, (0.5, 0.1, 0.4)).unwrap();

    let cfg = RnpConfig {
        input_dim: 1,
        target_dim: 1,
        hidden_size: 32,
        latent_dim: 32,
        encoder_layers: 2,
        bidirectional: false,
        decoder_kind: DecoderKind::Recurrent,
        use_deterministic_path: true,
        condition_on_time: false,
    };
    let mut model = RnpModel::new(cfg, 3);
    let tcfg = TrainConfig {
        learning_rate: 1e-4,
        batch_size: 8,
        epochs: 2000,
        steps_per_epoch: 4,
        seed: 3,
        context_count_range: (2, 4),
        context_len: 80,
        target_len: 15,
        kl_weight: 1.0,
        grad_clip_norm: 5.0,
        checkpoint_every: 0,
        val_context_count: 3,
    };
    let out = train(&mut model, &train_n, Some(&val_n), &tcfg, None, |m| {
        if m.epoch % 100 == 0 {
            println!(
                "epoch {} loss {:.3} nll {:.3} kl {:.3} val_nll {:.3} val_mse {:.4} ({} ms)",
                m.epoch, m.train_loss, m.train_nll, m.train_kl, m.val_nll, m.val_mse, m.wall_ms
            );
        }
    })
    .unwrap();
    let _ = out;
    let mut history = train_n.clone();
    history.x.extend(val_n.x.iter().cloned());
    history.y.extend(val_n.y.iter().cloned());
    let eval = evaluate_one_step(&model, &history, &test_n, 3, 80, 99).unwrap();
    println!("rnp test mse {:.5}", eval.mse);
    println!("rnp train time {:.1}s", start.elapsed().as_secs_f64());

    let bl_cfg = LstmBaselineConfig::drives();
    let (_, bl_mse) = lstm_baseline_train_eval(&train_n, &test_n, &bl_cfg);
    println!("lstm baseline test mse {:.5}", bl_mse);
    println!(
        "normalized mse {:.3}, persistence ratio {:.3}",
        eval.mse / bl_mse,
        eval.mse / persistence_mse(&test_n)
    );
    println!("total {:.1}s", start.elapsed().as_secs_f64());
}
