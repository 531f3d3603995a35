//! The recurrent neural process: subsequence encoders, latent inference
//! over a temporal stochastic process, an optional deterministic path, and
//! a conditional decoder that is either recurrent or feed-forward.
//!
//! A single latent draw v conditions the whole decoded sequence; context
//! subsequences only enter through the aggregated representation, which
//! makes the posterior exchangeable over the context set.

use std::cmp::Ordering;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Subsequence;
use crate::gaussian::{gaussian_from_packed, sample_reparam, DiagGaussian};
use crate::gradcheck::Parameterized;
use crate::metrics::percentile;
use crate::nn::{Activation, LinearLayer, LstmCell, Mlp, SequenceEncoder};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Recurrent,
    Feedforward,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnpConfig {
    pub input_dim: usize,
    pub target_dim: usize,
    pub hidden_size: usize,
    pub latent_dim: usize,
    pub encoder_layers: usize,
    pub bidirectional: bool,
    pub decoder_kind: DecoderKind,
    pub use_deterministic_path: bool,
    pub condition_on_time: bool,
}

impl Default for RnpConfig {
    fn default() -> Self {
        RnpConfig {
            input_dim: 1,
            target_dim: 1,
            hidden_size: 32,
            latent_dim: 32,
            encoder_layers: 1,
            bidirectional: false,
            decoder_kind: DecoderKind::Recurrent,
            use_deterministic_path: true,
            condition_on_time: false,
        }
    }
}

impl RnpConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("target_dim", self.target_dim),
            ("hidden_size", self.hidden_size),
            ("latent_dim", self.latent_dim),
            ("encoder_layers", self.encoder_layers),
        ] {
            if v == 0 {
                return Err(format!("{} must be positive", name));
            }
        }
        Ok(())
    }

    /// Per-step feature width consumed by the subsequence encoders.
    fn encoder_input_dim(&self) -> usize {
        self.input_dim + self.target_dim + usize::from(self.condition_on_time)
    }

    /// Width of the conditioning vector [v, r_det?].
    fn cond_dim(&self) -> usize {
        self.latent_dim * if self.use_deterministic_path { 2 } else { 1 }
    }
}

/// One predictive Gaussian, off the tape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictiveStep {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    pub target: Option<Vec<f64>>,
}

/// Per-step summary of an autoregressive rollout over latent samples.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub mean: Vec<Vec<f64>>,
    pub p5: Vec<Vec<f64>>,
    pub p95: Vec<Vec<f64>>,
}

enum Decoder {
    Recurrent(Vec<LstmCell>),
    Feedforward(Mlp),
}

pub struct RnpModel {
    pub config: RnpConfig,
    enc_stoch: SequenceEncoder,
    repr_stoch: Mlp,
    latent_head: Mlp,
    enc_det: Option<SequenceEncoder>,
    repr_det: Option<Mlp>,
    decoder: Decoder,
    dec_init: Option<Mlp>,
    out_head: LinearLayer,
}

impl RnpModel {
    pub fn new(config: RnpConfig, seed: u64) -> Self {
        config.validate().expect("invalid model config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_in = config.encoder_input_dim();
        let (h, z) = (config.hidden_size, config.latent_dim);

        let enc_stoch = SequenceEncoder::new(
            "enc_s",
            enc_in,
            h,
            config.encoder_layers,
            config.bidirectional,
            &mut rng,
        );
        let repr_stoch = Mlp::new(
            "repr_s",
            &[enc_stoch.output_dim(), h, z],
            Activation::Tanh,
            &mut rng,
        );
        let latent_head = Mlp::new("head_v", &[z, h, 2 * z], Activation::Tanh, &mut rng);

        let (enc_det, repr_det) = if config.use_deterministic_path {
            let enc = SequenceEncoder::new(
                "enc_d",
                enc_in,
                h,
                config.encoder_layers,
                config.bidirectional,
                &mut rng,
            );
            let mlp = Mlp::new(
                "repr_d",
                &[enc.output_dim(), h, z],
                Activation::Tanh,
                &mut rng,
            );
            (Some(enc), Some(mlp))
        } else {
            (None, None)
        };

        let cond = config.cond_dim();
        let (decoder, dec_init) = match config.decoder_kind {
            DecoderKind::Recurrent => {
                let dec_in = cond + config.input_dim + config.target_dim;
                let cells = (0..config.encoder_layers)
                    .map(|k| {
                        let in_size = if k == 0 { dec_in } else { h };
                        LstmCell::new(&format!("dec.l{}", k), in_size, h, &mut rng)
                    })
                    .collect();
                let init = Mlp::new(
                    "dec_init",
                    &[cond, h, config.encoder_layers * h],
                    Activation::Tanh,
                    &mut rng,
                );
                (Decoder::Recurrent(cells), Some(init))
            }
            DecoderKind::Feedforward => {
                let dec_in = cond + config.input_dim;
                let mlp = Mlp::new("dec.ff", &[dec_in, h, h], Activation::Tanh, &mut rng);
                (Decoder::Feedforward(mlp), None)
            }
        };
        let out_head = LinearLayer::new("out", h, 2 * config.target_dim, &mut rng);

        RnpModel {
            config,
            enc_stoch,
            repr_stoch,
            latent_head,
            enc_det,
            repr_det,
            decoder,
            dec_init,
            out_head,
        }
    }

    // ── Encoding ────────────────────────────────────────────────────────

    fn step_inputs(&self, tape: &mut Tape, s: &Subsequence, time_denom: f64) -> Vec<Var> {
        s.xs.iter()
            .zip(&s.ys)
            .map(|(x, y)| {
                let mut features = Vec::with_capacity(self.config.encoder_input_dim());
                features.extend_from_slice(x);
                features.extend_from_slice(y);
                if self.config.condition_on_time {
                    features.push(s.start_index as f64 / time_denom.max(1.0));
                }
                tape.constant_vec(&features)
            })
            .collect()
    }

    fn encode_with(
        &self,
        tape: &mut Tape,
        enc: &SequenceEncoder,
        repr: &Mlp,
        s: &Subsequence,
        time_denom: f64,
    ) -> Var {
        assert!(!s.is_empty(), "cannot encode an empty subsequence");
        assert_eq!(s.xs[0].len(), self.config.input_dim, "input feature mismatch");
        assert_eq!(s.ys[0].len(), self.config.target_dim, "target feature mismatch");
        let steps = self.step_inputs(tape, s, time_denom);
        let summary = enc.encode_final(tape, &steps);
        repr.forward(tape, summary)
    }

    /// Stochastic-path representation of one subsequence.
    pub fn encode_subsequence(&self, tape: &mut Tape, s: &Subsequence, time_denom: f64) -> Var {
        self.encode_with(tape, &self.enc_stoch, &self.repr_stoch, s, time_denom)
    }

    /// Elementwise arithmetic mean of representations, in the order given.
    /// Callers needing bitwise order invariance canonicalize first, as
    /// [`RnpModel::infer_latent`] does.
    pub fn aggregate(tape: &mut Tape, reps: &[Var]) -> Var {
        assert!(!reps.is_empty(), "aggregate of empty list");
        let dim = tape.shape(reps[0]).to_vec();
        let mut acc = reps[0];
        for &r in &reps[1..] {
            assert_eq!(tape.shape(r), dim.as_slice(), "mixed representation sizes");
            acc = tape.add(acc, r);
        }
        tape.scale(acc, 1.0 / reps.len() as f64)
    }

    fn aggregate_weighted(tape: &mut Tape, reps: &[(Var, f64)]) -> Var {
        assert!(!reps.is_empty(), "aggregate of empty list");
        let total: f64 = reps.iter().map(|(_, w)| w).sum();
        let mut acc: Option<Var> = None;
        for &(r, w) in reps {
            let scaled = tape.scale(r, w);
            acc = Some(match acc {
                None => scaled,
                Some(a) => tape.add(a, scaled),
            });
        }
        let sum = acc.unwrap();
        tape.scale(sum, 1.0 / total)
    }

    /// Posterior over the temporal latent v given context subsequences.
    ///
    /// The context is first put in a canonical order (sorted, duplicates
    /// merged into weights), so the result is bitwise invariant to both
    /// permutation and duplication of the context list.
    pub fn infer_latent(
        &self,
        tape: &mut Tape,
        subs: &[Subsequence],
        time_denom: f64,
    ) -> DiagGaussian {
        assert!(!subs.is_empty(), "empty context");
        let canon = canonical_context(subs);
        let reps: Vec<(Var, f64)> = canon
            .iter()
            .map(|(s, count)| {
                (
                    self.encode_subsequence(tape, s, time_denom),
                    *count as f64,
                )
            })
            .collect();
        let z = Self::aggregate_weighted(tape, &reps);
        let packed = self.latent_head.forward(tape, z);
        gaussian_from_packed(tape, packed)
    }

    /// Posteriors q(v | context + target) and q(v | context) computed
    /// together, encoding each distinct subsequence once. Bitwise
    /// equivalent to two separate [`RnpModel::infer_latent`] calls; the
    /// context posterior is `None` when the context is empty.
    pub fn infer_latent_split(
        &self,
        tape: &mut Tape,
        context: &[Subsequence],
        target: &Subsequence,
        time_denom: f64,
    ) -> (DiagGaussian, Option<DiagGaussian>) {
        let mut all: Vec<Subsequence> = context.to_vec();
        all.push(target.clone());
        let canon_all = canonical_context(&all);
        let reps: Vec<Var> = canon_all
            .iter()
            .map(|(s, _)| self.encode_subsequence(tape, s, time_denom))
            .collect();

        let all_weighted: Vec<(Var, f64)> = reps
            .iter()
            .zip(&canon_all)
            .map(|(&r, (_, count))| (r, *count as f64))
            .collect();
        let z_all = Self::aggregate_weighted(tape, &all_weighted);
        let packed_all = self.latent_head.forward(tape, z_all);
        let q_all = gaussian_from_packed(tape, packed_all);

        if context.is_empty() {
            return (q_all, None);
        }
        // context counts: subtract the single target occurrence; the
        // sorted unique order of the subset matches canonical_context
        // on the context alone, so the summation order is identical
        let mut target_seen = false;
        let ctx_weighted: Vec<(Var, f64)> = reps
            .iter()
            .zip(&canon_all)
            .filter_map(|(&r, (s, count))| {
                let mut c = *count;
                if !target_seen && cmp_subseq(s, target) == Ordering::Equal {
                    target_seen = true;
                    c -= 1;
                }
                if c > 0 {
                    Some((r, c as f64))
                } else {
                    None
                }
            })
            .collect();
        debug_assert!(target_seen, "target missing from combined context");
        let z_ctx = Self::aggregate_weighted(tape, &ctx_weighted);
        let packed_ctx = self.latent_head.forward(tape, z_ctx);
        (q_all, Some(gaussian_from_packed(tape, packed_ctx)))
    }

    /// Deterministic-path code over the context; `None` when the path is
    /// disabled, a zero vector when the context is empty.
    pub fn deterministic_code(
        &self,
        tape: &mut Tape,
        subs: &[Subsequence],
        time_denom: f64,
    ) -> Option<Var> {
        let (enc, repr) = match (&self.enc_det, &self.repr_det) {
            (Some(e), Some(r)) => (e, r),
            _ => return None,
        };
        if subs.is_empty() {
            return Some(tape.zeros(&[self.config.latent_dim]));
        }
        let canon = canonical_context(subs);
        let reps: Vec<(Var, f64)> = canon
            .iter()
            .map(|(s, count)| (self.encode_with(tape, enc, repr, s, time_denom), *count as f64))
            .collect();
        Some(Self::aggregate_weighted(tape, &reps))
    }

    // ── Decoding ────────────────────────────────────────────────────────

    fn cond_vector(&self, tape: &mut Tape, v: Var, r_det: Option<Var>) -> Var {
        assert_eq!(
            tape.shape(v),
            &[self.config.latent_dim],
            "latent dimension mismatch"
        );
        match r_det {
            Some(r) => tape.concat(&[v, r], 0),
            None => {
                assert!(
                    !self.config.use_deterministic_path,
                    "model has a deterministic path but no code was supplied"
                );
                v
            }
        }
    }

    fn emit(&self, tape: &mut Tape, hidden: Var) -> DiagGaussian {
        let packed = self.out_head.forward(tape, hidden);
        gaussian_from_packed(tape, packed)
    }

    fn init_decoder_states(&self, tape: &mut Tape, cond: Var, layers: usize) -> Vec<(Var, Var)> {
        let init = self.dec_init.as_ref().unwrap();
        let h0_all = init.forward(tape, cond);
        let h = self.config.hidden_size;
        (0..layers)
            .map(|k| {
                let hk = tape.slice(h0_all, 0, k * h..(k + 1) * h);
                let ck = tape.zeros(&[h]);
                (hk, ck)
            })
            .collect()
    }

    fn decoder_step(
        &self,
        tape: &mut Tape,
        cond: Var,
        x: &[f64],
        y_prev: &[f64],
        states: &mut Vec<(Var, Var)>,
    ) -> DiagGaussian {
        match &self.decoder {
            Decoder::Recurrent(cells) => {
                let xv = tape.constant_vec(x);
                let yv = tape.constant_vec(y_prev);
                let mut input = tape.concat(&[cond, xv, yv], 0);
                for (cell, state) in cells.iter().zip(states.iter_mut()) {
                    let (h, c) = cell.step(tape, input, state.0, state.1);
                    *state = (h, c);
                    input = h;
                }
                self.emit(tape, input)
            }
            Decoder::Feedforward(mlp) => {
                let xv = tape.constant_vec(x);
                let input = tape.concat(&[cond, xv], 0);
                let hidden = mlp.forward(tape, input);
                let act = tape.tanh(hidden);
                self.emit(tape, act)
            }
        }
    }

    /// Decodes a target window feeding ground-truth previous targets. The
    /// first step sees `y_prev` (zeros when absent); the decoder state is
    /// initialized from the conditioning vector.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape,
        v: Var,
        r_det: Option<Var>,
        target: &Subsequence,
        y_prev: Option<&[f64]>,
    ) -> Vec<DiagGaussian> {
        assert!(!target.is_empty(), "empty target");
        let cond = self.cond_vector(tape, v, r_det);
        let mut states = match &self.decoder {
            Decoder::Recurrent(cells) => self.init_decoder_states(tape, cond, cells.len()),
            Decoder::Feedforward(_) => Vec::new(),
        };
        let zeros = vec![0.0; self.config.target_dim];
        let mut prev: Vec<f64> = y_prev.map(|y| y.to_vec()).unwrap_or(zeros);
        let mut out = Vec::with_capacity(target.len());
        for (x, y) in target.xs.iter().zip(&target.ys) {
            let g = self.decoder_step(tape, cond, x, &prev, &mut states);
            out.push(g);
            prev = y.clone();
        }
        out
    }

    /// Rolls the decoder over future inputs, feeding back its own
    /// predicted means.
    pub fn decode_rollout(
        &self,
        tape: &mut Tape,
        v: Var,
        r_det: Option<Var>,
        xs: &[Vec<f64>],
        y_prev: Option<&[f64]>,
    ) -> Vec<DiagGaussian> {
        assert!(!xs.is_empty(), "empty input window");
        let cond = self.cond_vector(tape, v, r_det);
        let mut states = match &self.decoder {
            Decoder::Recurrent(cells) => self.init_decoder_states(tape, cond, cells.len()),
            Decoder::Feedforward(_) => Vec::new(),
        };
        let zeros = vec![0.0; self.config.target_dim];
        let mut prev: Vec<f64> = y_prev.map(|y| y.to_vec()).unwrap_or(zeros);
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let g = self.decoder_step(tape, cond, x, &prev, &mut states);
            prev = tape.data(g.mu).to_vec();
            out.push(g);
        }
        out
    }

    /// Samples `n_samples` latent draws, rolls the decoder for each, and
    /// summarizes per step: empirical mean and 5th/95th percentiles over
    /// one observation draw per latent sample.
    pub fn predict_autoregressive(
        &self,
        context: &[Subsequence],
        xs: &[Vec<f64>],
        n_samples: usize,
        time_denom: f64,
        rng: &mut ChaCha8Rng,
    ) -> Forecast {
        assert!(n_samples >= 2, "need at least 2 samples");
        assert!(!xs.is_empty(), "empty input window");

        // concrete posterior and deterministic code, computed once
        let mut tape = Tape::new();
        let q = self.infer_latent(&mut tape, context, time_denom);
        let (mu_v, sigma_v) = q.concrete(&tape);
        let r_det_vals = self
            .deterministic_code(&mut tape, context, time_denom)
            .map(|r| tape.data(r).to_vec());
        drop(tape);

        let dim = self.config.target_dim;
        let mut pool = vec![vec![Vec::with_capacity(n_samples); dim]; xs.len()];
        for _ in 0..n_samples {
            let mut tape = Tape::new();
            let noise: Vec<f64> = (0..mu_v.len())
                .map(|_| StandardNormal.sample(rng))
                .collect();
            let q = DiagGaussian::constant(&mut tape, &mu_v, &sigma_v);
            let v = sample_reparam(&mut tape, &q, &noise);
            let r_det = r_det_vals.as_ref().map(|r| tape.constant_vec(r));
            let steps = self.decode_rollout(&mut tape, v, r_det, xs, None);
            for (t, g) in steps.iter().enumerate() {
                let (mu, sigma) = g.concrete(&tape);
                for d in 0..dim {
                    let eps: f64 = StandardNormal.sample(rng);
                    pool[t][d].push(mu[d] + sigma[d] * eps);
                }
            }
        }

        let mut forecast = Forecast {
            mean: Vec::with_capacity(xs.len()),
            p5: Vec::with_capacity(xs.len()),
            p95: Vec::with_capacity(xs.len()),
        };
        for step_pool in &pool {
            let mut mean = Vec::with_capacity(dim);
            let mut p5 = Vec::with_capacity(dim);
            let mut p95 = Vec::with_capacity(dim);
            for draws in step_pool {
                mean.push(draws.iter().sum::<f64>() / draws.len() as f64);
                p5.push(percentile(draws, 0.05));
                p95.push(percentile(draws, 0.95));
            }
            forecast.mean.push(mean);
            forecast.p5.push(p5);
            forecast.p95.push(p95);
        }
        forecast
    }

    /// Plain-NP regression: each context point becomes a length-1
    /// subsequence, the posterior mean of v conditions a feed-forward
    /// decoder at every target input.
    pub fn np_static_predict(
        &self,
        context_points: &[(Vec<f64>, Vec<f64>)],
        x_targets: &[Vec<f64>],
    ) -> Vec<PredictiveStep> {
        assert!(
            matches!(self.decoder, Decoder::Feedforward(_)),
            "static prediction needs a feed-forward decoder"
        );
        assert!(!context_points.is_empty(), "empty context");
        let subs: Vec<Subsequence> = context_points
            .iter()
            .map(|(x, y)| Subsequence {
                start_index: 0,
                xs: vec![x.clone()],
                ys: vec![y.clone()],
            })
            .collect();
        let mut tape = Tape::new();
        let q = self.infer_latent(&mut tape, &subs, 1.0);
        let r_det = self.deterministic_code(&mut tape, &subs, 1.0);
        let cond = self.cond_vector(&mut tape, q.mu, r_det);
        x_targets
            .iter()
            .map(|x| {
                let g = self.decoder_step(&mut tape, cond, x, &[], &mut Vec::new());
                let (mean, stddev) = g.concrete(&tape);
                PredictiveStep {
                    mean,
                    stddev,
                    target: None,
                }
            })
            .collect()
    }
}

impl Parameterized for RnpModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.enc_stoch.visit_params(f);
        self.repr_stoch.visit_params(f);
        self.latent_head.visit_params(f);
        if let Some(enc) = &self.enc_det {
            enc.visit_params(f);
        }
        if let Some(repr) = &self.repr_det {
            repr.visit_params(f);
        }
        match &self.decoder {
            Decoder::Recurrent(cells) => {
                for cell in cells {
                    cell.visit_params(f);
                }
            }
            Decoder::Feedforward(mlp) => mlp.visit_params(f),
        }
        if let Some(init) = &self.dec_init {
            init.visit_params(f);
        }
        self.out_head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.enc_stoch.visit_params_mut(f);
        self.repr_stoch.visit_params_mut(f);
        self.latent_head.visit_params_mut(f);
        if let Some(enc) = &mut self.enc_det {
            enc.visit_params_mut(f);
        }
        if let Some(repr) = &mut self.repr_det {
            repr.visit_params_mut(f);
        }
        match &mut self.decoder {
            Decoder::Recurrent(cells) => {
                for cell in cells {
                    cell.visit_params_mut(f);
                }
            }
            Decoder::Feedforward(mlp) => mlp.visit_params_mut(f),
        }
        if let Some(init) = &mut self.dec_init {
            init.visit_params_mut(f);
        }
        self.out_head.visit_params_mut(f);
    }
}

fn cmp_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Ordering {
    for (ra, rb) in a.iter().zip(b) {
        for (va, vb) in ra.iter().zip(rb) {
            let ord = va.total_cmp(vb);
            if ord != Ordering::Equal {
                return ord;
            }
        }
    }
    Ordering::Equal
}

fn cmp_subseq(a: &Subsequence, b: &Subsequence) -> Ordering {
    a.start_index
        .cmp(&b.start_index)
        .then(a.len().cmp(&b.len()))
        .then_with(|| cmp_rows(&a.xs, &b.xs))
        .then_with(|| cmp_rows(&a.ys, &b.ys))
}

/// Sorted, deduplicated view of a context list with multiplicities.
/// Weighted-mean aggregation over this view is bitwise invariant to input
/// permutation and to duplicating every element (integer weights double,
/// which scales sums by an exact power of two).
fn canonical_context(subs: &[Subsequence]) -> Vec<(&Subsequence, usize)> {
    let mut refs: Vec<&Subsequence> = subs.iter().collect();
    refs.sort_by(|a, b| cmp_subseq(a, b));
    let mut out: Vec<(&Subsequence, usize)> = Vec::new();
    for s in refs {
        match out.last_mut() {
            Some(last) if cmp_subseq(last.0, s) == Ordering::Equal => last.1 += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}
