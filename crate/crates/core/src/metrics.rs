//! Evaluation metrics (MSE, baseline-normalized MSE, PICP) and the
//! baseline predictors they are computed against.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::gradcheck::Parameterized;
use crate::nn::{LinearLayer, LstmCell};
use crate::tensor::{Tape, Tensor, Var};
use crate::train::{adam_step, clip_global_norm, collect_grads, AdamState, StepOutcome};

/// Quantile by linear interpolation between order statistics: position
/// q * (n - 1) between the two nearest sorted samples.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    assert!(!samples.is_empty(), "percentile of empty sample set");
    assert!((0.0..=1.0).contains(&q), "quantile {} outside [0,1]", q);
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Mean over steps of the squared Euclidean error.
pub fn mse(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    assert_eq!(preds.len(), targets.len(), "length mismatch");
    assert!(!preds.is_empty(), "mse over zero steps");
    let total: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            assert_eq!(p.len(), t.len(), "dimension mismatch");
            p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum();
    total / preds.len() as f64
}

/// Model MSE divided by a baseline MSE; the baseline maps to 1.0.
pub fn normalized_mse(model_mse: f64, baseline_mse: f64) -> f64 {
    assert!(baseline_mse > 0.0, "baseline mse must be positive");
    model_mse / baseline_mse
}

/// Fraction of steps whose target lies strictly inside the empirical
/// interval spanned by the lower and upper percentiles of the sampled
/// predictions. `level` 0.90 uses the 5th and 95th percentiles.
pub fn picp(samples_per_step: &[Vec<f64>], targets: &[f64], level: f64) -> f64 {
    assert_eq!(samples_per_step.len(), targets.len(), "length mismatch");
    assert!(!targets.is_empty(), "picp over zero steps");
    assert!((0.0..1.0).contains(&level), "level {} outside (0,1)", level);
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = 1.0 - lo_q;
    let mut covered = 0usize;
    for (samples, &y) in samples_per_step.iter().zip(targets) {
        assert!(
            samples.len() >= 20,
            "need at least 20 samples per step, got {}",
            samples.len()
        );
        let lo = percentile(samples, lo_q);
        let hi = percentile(samples, hi_q);
        if lo < y && y < hi {
            covered += 1;
        }
    }
    covered as f64 / targets.len() as f64
}

/// Draws `n` observations from N(mu, sigma) for each predictive step
/// (first target dimension).
pub fn sample_step_predictions(
    steps: &[(Vec<f64>, Vec<f64>)],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    steps
        .iter()
        .map(|(mu, sigma)| {
            (0..n)
                .map(|_| {
                    let eps: f64 = StandardNormal.sample(rng);
                    mu[0] + sigma[0] * eps
                })
                .collect()
        })
        .collect()
}

/// Repeats the previous observation: predictions for steps 1.. of the
/// series, aligned with targets `y[1..]`.
pub fn persistence_predictions(series: &TimeSeries) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    assert!(series.len() >= 2, "series too short for persistence");
    let preds = series.y[..series.len() - 1].to_vec();
    let targets = series.y[1..].to_vec();
    (preds, targets)
}

pub fn persistence_mse(series: &TimeSeries) -> f64 {
    let (preds, targets) = persistence_predictions(series);
    mse(&preds, &targets)
}

// ── Metrics report ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub picp: f64,
    pub picp_level: f64,
    pub n_steps: usize,
    pub config_fingerprint: String,
}

// ── LSTM baseline ───────────────────────────────────────────────────────

/// Plain recurrent one-step predictor trained on squared error, used as
/// the MSE normalizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmBaselineConfig {
    pub hidden_size: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub window: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl LstmBaselineConfig {
    /// Reference configuration for electricity-style runs.
    pub fn electricity() -> Self {
        LstmBaselineConfig {
            hidden_size: 50,
            layers: 1,
            learning_rate: 1e-3,
            steps: 400,
            window: 50,
            batch_size: 8,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }

    /// Reference configuration for drives-style runs.
    pub fn drives() -> Self {
        LstmBaselineConfig {
            hidden_size: 64,
            layers: 2,
            learning_rate: 1e-3,
            steps: 600,
            window: 40,
            batch_size: 8,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }
}

pub struct LstmBaseline {
    cells: Vec<LstmCell>,
    head: LinearLayer,
    input_dim: usize,
    target_dim: usize,
    hidden: usize,
}

impl LstmBaseline {
    pub fn new(input_dim: usize, target_dim: usize, cfg: &LstmBaselineConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let in_size = input_dim + target_dim;
        let cells = (0..cfg.layers)
            .map(|k| {
                let dim = if k == 0 { in_size } else { cfg.hidden_size };
                LstmCell::new(&format!("lstm.l{}", k), dim, cfg.hidden_size, &mut rng)
            })
            .collect();
        let head = LinearLayer::new("lstm.head", cfg.hidden_size, target_dim, &mut rng);
        LstmBaseline {
            cells,
            head,
            input_dim,
            target_dim,
            hidden: cfg.hidden_size,
        }
    }

    /// One-step predictions over `eval`, teacher-forced on ground truth,
    /// with the recurrent state warmed up on the tail of `history`.
    pub fn one_step_predict(
        &self,
        history: &TimeSeries,
        eval: &TimeSeries,
        warmup: usize,
    ) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let mut states: Vec<_> = (0..self.cells.len())
            .map(|_| (tape.zeros(&[self.hidden]), tape.zeros(&[self.hidden])))
            .collect();
        let mut preds = Vec::with_capacity(eval.len());
        let start = history.len().saturating_sub(warmup).max(1);
        let run_step = |tape: &mut Tape,
                            states: &mut Vec<(Var, Var)>,
                            x: &[f64],
                            y_prev: &[f64]|
         -> Vec<f64> {
            let mut features = Vec::with_capacity(self.input_dim + self.target_dim);
            features.extend_from_slice(x);
            features.extend_from_slice(y_prev);
            let mut input = tape.constant_vec(&features);
            for (cell, state) in self.cells.iter().zip(states.iter_mut()) {
                let (h, c) = cell.step(tape, input, state.0, state.1);
                *state = (h, c);
                input = h;
            }
            let out = self.head.forward(tape, input);
            tape.data(out).to_vec()
        };
        for t in start..history.len() {
            run_step(&mut tape, &mut states, &history.x[t], &history.y[t - 1]);
        }
        for t in 0..eval.len() {
            let y_prev = if t == 0 {
                &history.y[history.len() - 1]
            } else {
                &eval.y[t - 1]
            };
            preds.push(run_step(&mut tape, &mut states, &eval.x[t], y_prev));
        }
        preds
    }
}

impl Parameterized for LstmBaseline {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for cell in &self.cells {
            cell.visit_params(f);
        }
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for cell in &mut self.cells {
            cell.visit_params_mut(f);
        }
        self.head.visit_params_mut(f);
    }
}

/// Trains the baseline on squared one-step error over random windows of
/// the training series.
pub fn train_lstm_baseline(train: &TimeSeries, cfg: &LstmBaselineConfig) -> LstmBaseline {
    use rand::Rng;
    let mut model = LstmBaseline::new(train.input_dim(), train.target_dim(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new();
    let window = cfg.window.min(train.len() - 1).max(1);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let mut losses = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let s = rng.gen_range(1..=train.len() - window);
            let mut states: Vec<_> = (0..model.cells.len())
                .map(|_| (tape.zeros(&[model.hidden]), tape.zeros(&[model.hidden])))
                .collect();
            let mut errs = Vec::with_capacity(window);
            for t in s..s + window {
                let mut features = Vec::with_capacity(model.input_dim + model.target_dim);
                features.extend_from_slice(&train.x[t]);
                features.extend_from_slice(&train.y[t - 1]);
                let mut input = tape.constant_vec(&features);
                for (cell, state) in model.cells.iter().zip(states.iter_mut()) {
                    let (h, c) = cell.step(&mut tape, input, state.0, state.1);
                    *state = (h, c);
                    input = h;
                }
                let pred = model.head.forward(&mut tape, input);
                let target = tape.constant_vec(&train.y[t]);
                let diff = tape.sub(pred, target);
                let sq = tape.square(diff);
                errs.push(tape.sum(sq, None));
            }
            let window_err = errs
                .into_iter()
                .reduce(|a, b| tape.add(a, b))
                .expect("window has at least one step");
            losses.push(tape.scale(window_err, 1.0 / window as f64));
        }
        let total = losses
            .into_iter()
            .reduce(|a, b| tape.add(a, b))
            .expect("batch has at least one window");
        let loss = tape.scale(total, 1.0 / cfg.batch_size as f64);
        tape.backward(loss);
        let mut grads = collect_grads(&tape, &model);
        clip_global_norm(&mut grads, cfg.grad_clip_norm);
        let outcome = adam_step(&mut model, &grads, &mut adam, cfg.learning_rate);
        if outcome == StepOutcome::SkippedNonFinite {
            eprintln!("warning: skipped baseline step {} (non-finite gradient)", step);
        }
    }
    model
}

/// Trains on `train`, evaluates one-step MSE on `eval` (teacher-forced,
/// state warmed up on the training tail).
pub fn lstm_baseline_train_eval(
    train: &TimeSeries,
    eval: &TimeSeries,
    cfg: &LstmBaselineConfig,
) -> (LstmBaseline, f64) {
    let model = train_lstm_baseline(train, cfg);
    let preds = model.one_step_predict(train, eval, 50);
    let err = mse(&preds, &eval.y);
    (model, err)
}
