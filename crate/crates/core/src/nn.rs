//! Feed-forward and recurrent building blocks on top of the tape.
//!
//! Layers own their parameters as plain [`Tensor`]s and bind them onto a
//! tape by name inside `forward`, so the same layer can be driven through
//! any number of forward passes while the optimizer updates the stored
//! values between steps.

use rand::Rng;

use crate::gradcheck::Parameterized;
use crate::tensor::{Tape, Tensor, Var};

/// Glorot uniform bound: sqrt(6 / (fan_in + fan_out)).
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Weight matrix [out, in] with entries ~ uniform(-a, a).
pub fn init_weight(rng: &mut impl Rng, out_size: usize, in_size: usize) -> Tensor {
    assert!(out_size > 0 && in_size > 0, "zero-size layer");
    let a = glorot_bound(in_size, out_size);
    let data = (0..out_size * in_size)
        .map(|_| rng.gen_range(-a..a))
        .collect();
    Tensor::new(data, &[out_size, in_size]).with_grad()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
    Identity,
}

impl Activation {
    fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
            Activation::Identity => x,
        }
    }
}

// ── Linear ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LinearLayer {
    name: String,
    w_name: String,
    b_name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new(name: &str, in_size: usize, out_size: usize, rng: &mut impl Rng) -> Self {
        assert!(in_size > 0 && out_size > 0, "zero-size layer");
        LinearLayer {
            name: name.to_string(),
            w_name: format!("{}.w", name),
            b_name: format!("{}.b", name),
            weight: init_weight(rng, out_size, in_size),
            bias: Tensor::zeros(&[out_size]).with_grad(),
        }
    }

    pub fn in_size(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_size(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        assert_eq!(
            tape.shape(x),
            &[self.in_size()],
            "linear layer {} expects input size {}",
            self.name,
            self.in_size()
        );
        let w = tape.bind(&self.w_name, &self.weight);
        let b = tape.bind(&self.b_name, &self.bias);
        let wx = tape.matvec(w, x);
        tape.add(wx, b)
    }
}

impl Parameterized for LinearLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&self.w_name, &self.weight);
        f(&self.b_name, &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&self.w_name, &mut self.weight);
        f(&self.b_name, &mut self.bias);
    }
}

// ── MLP ─────────────────────────────────────────────────────────────────

/// Affine chain with an activation between layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes` lists the full dimension chain, e.g. `[in, hidden, out]`.
    pub fn new(name: &str, sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least input and output size");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| LinearLayer::new(&format!("{}.l{}", name, i), w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn in_size(&self) -> usize {
        self.layers[0].in_size()
    }

    pub fn out_size(&self) -> usize {
        self.layers.last().unwrap().out_size()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if i + 1 < self.layers.len() {
                h = self.activation.apply(tape, h);
            }
        }
        h
    }
}

impl Parameterized for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for layer in &self.layers {
            layer.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for layer in &mut self.layers {
            layer.visit_params_mut(f);
        }
    }
}

// ── LSTM ────────────────────────────────────────────────────────────────

/// Standard (non-peephole) LSTM cell. Gate blocks are packed in the order
/// input, forget, output, candidate; the forget-gate bias starts at 1.
#[derive(Debug, Clone)]
pub struct LstmCell {
    w_ih_name: String,
    w_hh_name: String,
    b_name: String,
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    hidden_size: usize,
    input_size: usize,
}

impl LstmCell {
    pub fn new(name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        assert!(input_size > 0 && hidden_size > 0, "zero-size layer");
        let mut bias = Tensor::zeros(&[4 * hidden_size]).with_grad();
        bias.data[hidden_size..2 * hidden_size].fill(1.0);
        LstmCell {
            w_ih_name: format!("{}.w_ih", name),
            w_hh_name: format!("{}.w_hh", name),
            b_name: format!("{}.b", name),
            w_ih: init_weight(rng, 4 * hidden_size, input_size),
            w_hh: init_weight(rng, 4 * hidden_size, hidden_size),
            bias,
            hidden_size,
            input_size,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    /// One recurrence step: returns (h', c').
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        assert_eq!(tape.shape(x), &[self.input_size], "lstm input size mismatch");
        assert_eq!(tape.shape(h), &[self.hidden_size], "lstm state size mismatch");
        let w_ih = tape.bind(&self.w_ih_name, &self.w_ih);
        let w_hh = tape.bind(&self.w_hh_name, &self.w_hh);
        let b = tape.bind(&self.b_name, &self.bias);

        let ix = tape.matvec(w_ih, x);
        let hh = tape.matvec(w_hh, h);
        let pre0 = tape.add(ix, hh);
        let pre = tape.add(pre0, b);

        let hs = self.hidden_size;
        let i_pre = tape.slice(pre, 0, 0..hs);
        let f_pre = tape.slice(pre, 0, hs..2 * hs);
        let o_pre = tape.slice(pre, 0, 2 * hs..3 * hs);
        let g_pre = tape.slice(pre, 0, 3 * hs..4 * hs);

        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);

        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_new = tape.add(fc, ig);
        let c_tanh = tape.tanh(c_new);
        let h_new = tape.mul(o, c_tanh);
        (h_new, c_new)
    }
}

impl Parameterized for LstmCell {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&self.w_ih_name, &self.w_ih);
        f(&self.w_hh_name, &self.w_hh);
        f(&self.b_name, &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&self.w_ih_name, &mut self.w_ih);
        f(&self.w_hh_name, &mut self.w_hh);
        f(&self.b_name, &mut self.bias);
    }
}

// ── Sequence encoder ────────────────────────────────────────────────────

/// Stacked, optionally bidirectional LSTM over a step sequence. Layer k's
/// hidden states are layer k+1's inputs; the backward stack, when present,
/// is independently parameterized and consumes the sequence reversed.
#[derive(Debug, Clone)]
pub struct SequenceEncoder {
    pub forward_layers: Vec<LstmCell>,
    pub backward_layers: Vec<LstmCell>,
    hidden_size: usize,
}

impl SequenceEncoder {
    pub fn new(
        name: &str,
        input_size: usize,
        hidden_size: usize,
        layers: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(layers >= 1, "encoder needs at least one layer");
        let mut stack = |prefix: &str| -> Vec<LstmCell> {
            (0..layers)
                .map(|k| {
                    let in_size = if k == 0 { input_size } else { hidden_size };
                    LstmCell::new(&format!("{}.{}{}", name, prefix, k), in_size, hidden_size, rng)
                })
                .collect()
        };
        let forward_layers = stack("fwd");
        let backward_layers = if bidirectional {
            stack("bwd")
        } else {
            Vec::new()
        };
        SequenceEncoder {
            forward_layers,
            backward_layers,
            hidden_size,
        }
    }

    pub fn bidirectional(&self) -> bool {
        !self.backward_layers.is_empty()
    }

    /// Width of each emitted state vector.
    pub fn output_dim(&self) -> usize {
        self.hidden_size * if self.bidirectional() { 2 } else { 1 }
    }

    fn run_stack(&self, tape: &mut Tape, layers: &[LstmCell], steps: &[Var]) -> Vec<Var> {
        let mut inputs: Vec<Var> = steps.to_vec();
        for cell in layers {
            let mut h = tape.zeros(&[self.hidden_size]);
            let mut c = tape.zeros(&[self.hidden_size]);
            let mut outputs = Vec::with_capacity(inputs.len());
            for &x in &inputs {
                let (nh, nc) = cell.step(tape, x, h, c);
                h = nh;
                c = nc;
                outputs.push(h);
            }
            inputs = outputs;
        }
        inputs
    }

    /// Top-layer hidden state per step, from zero initial state. For a
    /// bidirectional encoder, position j carries the forward state after
    /// consuming steps 1..=j concatenated with the backward state after
    /// consuming steps J..=j.
    pub fn encode(&self, tape: &mut Tape, steps: &[Var]) -> Vec<Var> {
        assert!(!steps.is_empty(), "cannot encode an empty sequence");
        let fwd = self.run_stack(tape, &self.forward_layers, steps);
        if !self.bidirectional() {
            return fwd;
        }
        let reversed: Vec<Var> = steps.iter().rev().copied().collect();
        let mut bwd = self.run_stack(tape, &self.backward_layers, &reversed);
        bwd.reverse();
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat(&[f, b], 0))
            .collect()
    }

    /// Sequence summary: the last forward state, concatenated with the last
    /// backward state (each having consumed the whole sequence).
    pub fn encode_final(&self, tape: &mut Tape, steps: &[Var]) -> Var {
        let states = self.encode(tape, steps);
        if !self.bidirectional() {
            return *states.last().unwrap();
        }
        let hs = self.hidden_size;
        let f_last = tape.slice(*states.last().unwrap(), 0, 0..hs);
        let b_last = tape.slice(states[0], 0, hs..2 * hs);
        tape.concat(&[f_last, b_last], 0)
    }
}

impl Parameterized for SequenceEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for cell in self.forward_layers.iter().chain(&self.backward_layers) {
            cell.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for cell in self
            .forward_layers
            .iter_mut()
            .chain(&mut self.backward_layers)
        {
            cell.visit_params_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn zero_params(p: &mut impl Parameterized) {
        p.visit_params_mut(&mut |_, t| t.data.fill(0.0));
    }

    #[test]
    fn init_is_reproducible_from_seed() {
        let a = LstmCell::new("c", 3, 4, &mut rng(7));
        let b = LstmCell::new("c", 3, 4, &mut rng(7));
        assert_eq!(a.w_ih.data, b.w_ih.data);
        assert_eq!(a.w_hh.data, b.w_hh.data);
        assert_eq!(a.bias.data, b.bias.data);
    }

    #[test]
    fn glorot_bound_value_and_range() {
        let a = glorot_bound(8, 8);
        assert_relative_eq!(a, 0.6123724356957945, max_relative = 1e-15);
        let w = init_weight(&mut rng(3), 8, 8);
        assert!(w.data.iter().all(|x| x.abs() < a));
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let cell = LstmCell::new("c", 2, 5, &mut rng(0));
        assert!(cell.bias.data[5..10].iter().all(|&b| b == 1.0));
        assert!(cell.bias.data[..5].iter().all(|&b| b == 0.0));
        assert!(cell.bias.data[10..].iter().all(|&b| b == 0.0));
    }

    #[test]
    #[should_panic(expected = "zero-size layer")]
    fn zero_size_layer_rejected() {
        LinearLayer::new("l", 0, 3, &mut rng(0));
    }

    #[test]
    fn mlp_zero_params_give_zeros() {
        let mut mlp = Mlp::new("m", &[3, 4, 2], Activation::Tanh, &mut rng(1));
        zero_params(&mut mlp);
        let mut tape = Tape::new();
        let x = tape.constant(&[1.0, -2.0, 0.5], &[3]);
        let y = mlp.forward(&mut tape, x);
        assert_eq!(tape.data(y), &[0.0, 0.0]);
    }

    #[test]
    fn single_identity_layer_passes_input_through() {
        let mut mlp = Mlp::new("m", &[3, 3], Activation::Identity, &mut rng(1));
        mlp.layers[0].weight.data = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        mlp.layers[0].bias.data.fill(0.0);
        let mut tape = Tape::new();
        let x = tape.constant(&[0.3, -1.1, 2.0], &[3]);
        let y = mlp.forward(&mut tape, x);
        assert_eq!(tape.data(y), &[0.3, -1.1, 2.0]);
    }

    #[test]
    fn mlp_grad_check() {
        let mut mlp = Mlp::new("m", &[3, 4, 2], Activation::Tanh, &mut rng(5));
        let report = grad_check(
            &mut mlp,
            |tape, mlp: &Mlp| {
                let x = tape.constant(&[0.5, -0.2, 1.3], &[3]);
                let y = mlp.forward(tape, x);
                let sq = tape.square(y);
                tape.sum(sq, None)
            },
            &GradCheckConfig::with_tolerance(1e-5, 1e-4),
        );
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn lstm_step_zero_params() {
        let mut cell = LstmCell::new("c", 1, 1, &mut rng(2));
        zero_params(&mut cell);
        let mut tape = Tape::new();
        let x = tape.constant(&[0.7], &[1]);
        let h0 = tape.zeros(&[1]);
        let c0 = tape.zeros(&[1]);
        let (h, c) = cell.step(&mut tape, x, h0, c0);
        assert_eq!(tape.data(h), &[0.0]);
        assert_eq!(tape.data(c), &[0.0]);

        // gates at 0.5, candidate 0: c' = 0.5*c, h' = 0.5*tanh(c')
        let c1 = tape.constant(&[1.0], &[1]);
        let (h, c) = cell.step(&mut tape, x, h0, c1);
        assert_relative_eq!(tape.data(c)[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(tape.data(h)[0], 0.5 * 0.5f64.tanh(), max_relative = 1e-12);
        assert_relative_eq!(tape.data(h)[0], 0.23105857863000487, max_relative = 1e-12);
    }

    #[test]
    fn lstm_matches_hand_rolled_scalar_cell() {
        // hidden 1, input 1: compare against a transcription of the gate
        // equations in plain arithmetic
        let cell = LstmCell::new("c", 1, 1, &mut rng(9));
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut rr = rng(10);
        for _ in 0..50 {
            let x: f64 = rr.gen_range(-2.0..2.0);
            let h: f64 = rr.gen_range(-1.0..1.0);
            let c: f64 = rr.gen_range(-1.0..1.0);

            let pre = |k: usize| cell.w_ih.data[k] * x + cell.w_hh.data[k] * h + cell.bias.data[k];
            let i = sig(pre(0));
            let f = sig(pre(1));
            let o = sig(pre(2));
            let g = pre(3).tanh();
            let c_want = f * c + i * g;
            let h_want = o * c_want.tanh();

            let mut tape = Tape::new();
            let xv = tape.constant(&[x], &[1]);
            let hv = tape.constant(&[h], &[1]);
            let cv = tape.constant(&[c], &[1]);
            let (hn, cn) = cell.step(&mut tape, xv, hv, cv);
            assert!((tape.data(cn)[0] - c_want).abs() < 1e-12);
            assert!((tape.data(hn)[0] - h_want).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_three_step_grad_check() {
        let mut cell = LstmCell::new("c", 2, 3, &mut rng(4));
        let report = grad_check(
            &mut cell,
            |tape, cell: &LstmCell| {
                let xs = [[0.5, -1.0], [0.2, 0.8], [-0.6, 0.1]];
                let mut h = tape.zeros(&[3]);
                let mut c = tape.zeros(&[3]);
                for x in &xs {
                    let xv = tape.constant(x, &[2]);
                    let (nh, nc) = cell.step(tape, xv, h, c);
                    h = nh;
                    c = nc;
                }
                let sq = tape.square(h);
                tape.sum(sq, None)
            },
            &GradCheckConfig::with_tolerance(1e-5, 1e-3),
        );
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn encode_length_one_equals_single_step() {
        let enc = SequenceEncoder::new("e", 2, 3, 1, false, &mut rng(6));
        let mut tape = Tape::new();
        let x = tape.constant(&[0.4, -0.9], &[2]);
        let states = enc.encode(&mut tape, &[x]);
        assert_eq!(states.len(), 1);

        let h0 = tape.zeros(&[3]);
        let c0 = tape.zeros(&[3]);
        let (h, _) = enc.forward_layers[0].step(&mut tape, x, h0, c0);
        assert_eq!(tape.data(states[0]), tape.data(h));
    }

    #[test]
    fn bidirectional_palindrome_symmetry() {
        // with identical forward/backward parameters, the backward state at
        // position J+1-t of a palindromic input equals the forward state at t
        let mut enc = SequenceEncoder::new("e", 1, 3, 1, true, &mut rng(8));
        let fwd = enc.forward_layers[0].clone();
        enc.backward_layers[0].w_ih.data = fwd.w_ih.data.clone();
        enc.backward_layers[0].w_hh.data = fwd.w_hh.data.clone();
        enc.backward_layers[0].bias.data = fwd.bias.data.clone();

        let mut tape = Tape::new();
        let vals = [0.3, -0.7, 1.1, -0.7, 0.3];
        let steps: Vec<Var> = vals.iter().map(|&v| tape.constant(&[v], &[1])).collect();
        let states = enc.encode(&mut tape, &steps);
        let j = vals.len();
        for t in 0..j {
            let fwd_t = tape.data(states[t])[..3].to_vec();
            let bwd_mirror = tape.data(states[j - 1 - t])[3..].to_vec();
            for (a, b) in fwd_t.iter().zip(&bwd_mirror) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn unidirectional_encoder_is_causal() {
        let enc = SequenceEncoder::new("e", 1, 4, 2, false, &mut rng(12));
        let base = [0.1, 0.5, -0.3, 0.9, 0.2];
        let run = |vals: &[f64]| {
            let mut tape = Tape::new();
            let steps: Vec<Var> = vals.iter().map(|&v| tape.constant(&[v], &[1])).collect();
            let states = enc.encode(&mut tape, &steps);
            states
                .iter()
                .map(|&s| tape.data(s).to_vec())
                .collect::<Vec<_>>()
        };
        let full = run(&base);
        // truncate the tail
        let truncated = run(&base[..3]);
        for t in 0..3 {
            assert_eq!(full[t], truncated[t]);
        }
        // perturb a later step
        let mut perturbed = base;
        perturbed[3] += 1.0;
        let states_p = run(&perturbed);
        for t in 0..3 {
            assert_eq!(full[t], states_p[t]);
        }
        assert_ne!(full[3], states_p[3]);
    }

    #[test]
    fn encode_final_summarizes_both_directions() {
        let enc = SequenceEncoder::new("e", 1, 2, 1, true, &mut rng(13));
        let mut tape = Tape::new();
        let steps: Vec<Var> = [0.2, -0.4, 0.6]
            .iter()
            .map(|&v| tape.constant(&[v], &[1]))
            .collect();
        let fin = enc.encode_final(&mut tape, &steps);
        assert_eq!(tape.shape(fin), &[4]);
        let states = enc.encode(&mut tape, &steps);
        // forward half of the last step, backward half of the first
        assert_eq!(tape.data(fin)[..2], tape.data(states[2])[..2]);
        assert_eq!(tape.data(fin)[2..], tape.data(states[0])[2..]);
    }
}
