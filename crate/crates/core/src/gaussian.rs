//! Diagonal Gaussians on the tape: head parameterization, reparameterized
//! sampling, closed-form KL, and log-likelihood.

use crate::nn::Mlp;
use crate::tensor::{Tape, Var};

/// Lower bound kept on every emitted stddev. Prevents the likelihood from
/// blowing up on near-deterministic targets.
pub const SIGMA_FLOOR: f64 = 0.01;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Mean and strictly positive stddev of equal lengths, as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct DiagGaussian {
    pub mu: Var,
    pub sigma: Var,
}

impl DiagGaussian {
    pub fn new(tape: &Tape, mu: Var, sigma: Var) -> Self {
        assert_eq!(
            tape.shape(mu),
            tape.shape(sigma),
            "mu/sigma dimension mismatch"
        );
        DiagGaussian { mu, sigma }
    }

    /// Gradient-free Gaussian from plain vectors.
    pub fn constant(tape: &mut Tape, mu: &[f64], sigma: &[f64]) -> Self {
        assert_eq!(mu.len(), sigma.len(), "mu/sigma dimension mismatch");
        assert!(sigma.iter().all(|&s| s > 0.0), "sigma must be positive");
        let m = tape.constant_vec(mu);
        let s = tape.constant_vec(sigma);
        DiagGaussian { mu: m, sigma: s }
    }

    /// N(0, I) of the given dimension.
    pub fn standard(tape: &mut Tape, dim: usize) -> Self {
        Self::constant(tape, &vec![0.0; dim], &vec![1.0; dim])
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.shape(self.mu)[0]
    }

    /// Current (mu, sigma) values off the tape.
    pub fn concrete(&self, tape: &Tape) -> (Vec<f64>, Vec<f64>) {
        (tape.data(self.mu).to_vec(), tape.data(self.sigma).to_vec())
    }
}

/// Splits a head output [mu..., raw...] into a Gaussian with
/// sigma = floor + (1 - floor) * softplus(raw), keeping sigma in
/// (SIGMA_FLOOR, inf).
pub fn gaussian_head(tape: &mut Tape, head: &Mlp, h: Var) -> DiagGaussian {
    let out = head.forward(tape, h);
    gaussian_from_packed(tape, out)
}

/// Same split applied to an already computed packed vector.
pub fn gaussian_from_packed(tape: &mut Tape, packed: Var) -> DiagGaussian {
    let n = tape.shape(packed)[0];
    assert!(n % 2 == 0, "packed gaussian head has odd size {}", n);
    let dim = n / 2;
    let mu = tape.slice(packed, 0, 0..dim);
    let raw = tape.slice(packed, 0, dim..n);
    let sp = tape.softplus(raw);
    let scaled = tape.scale(sp, 1.0 - SIGMA_FLOOR);
    let sigma = tape.add_const(scaled, SIGMA_FLOOR);
    DiagGaussian { mu, sigma }
}

/// mu + sigma * noise, differentiable in mu and sigma.
pub fn sample_reparam(tape: &mut Tape, g: &DiagGaussian, noise: &[f64]) -> Var {
    assert_eq!(noise.len(), g.dim(tape), "noise length mismatch");
    let eps = tape.constant_vec(noise);
    let scaled = tape.mul(g.sigma, eps);
    tape.add(g.mu, scaled)
}

/// KL(q || p) for diagonal Gaussians, in closed form:
/// sum_d [ log(sigma_p / sigma_q) + (sigma_q^2 + (mu_q - mu_p)^2) / (2 sigma_p^2) - 1/2 ].
pub fn kl_diag(tape: &mut Tape, q: &DiagGaussian, p: &DiagGaussian) -> Var {
    assert_eq!(q.dim(tape), p.dim(tape), "KL dimension mismatch");
    let log_p = tape.log(p.sigma);
    let log_q = tape.log(q.sigma);
    let log_ratio = tape.sub(log_p, log_q);

    let var_q = tape.square(q.sigma);
    let diff = tape.sub(q.mu, p.mu);
    let diff_sq = tape.square(diff);
    let num = tape.add(var_q, diff_sq);
    let var_p = tape.square(p.sigma);
    let two_var_p = tape.scale(var_p, 2.0);
    let frac = tape.div(num, two_var_p);

    let partial = tape.add(log_ratio, frac);
    let full = tape.add_const(partial, -0.5);
    tape.sum(full, None)
}

/// Log-density of `y` under the Gaussian:
/// sum_d [ -1/2 log(2 pi) - log sigma_d - (y_d - mu_d)^2 / (2 sigma_d^2) ].
pub fn gauss_loglik(tape: &mut Tape, y: &[f64], g: &DiagGaussian) -> Var {
    assert_eq!(y.len(), g.dim(tape), "target dimension mismatch");
    let yv = tape.constant_vec(y);
    let diff = tape.sub(yv, g.mu);
    let diff_sq = tape.square(diff);
    let var = tape.square(g.sigma);
    let two_var = tape.scale(var, 2.0);
    let quad = tape.div(diff_sq, two_var);
    let log_sigma = tape.log(g.sigma);
    let partial = tape.add(log_sigma, quad);
    let full = tape.add_const(partial, 0.5 * LN_2PI);
    let total = tape.sum(full, None);
    tape.neg(total)
}
