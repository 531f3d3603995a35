//! Finite-difference verification of reverse-mode gradients.
//!
//! The checker never trusts the tape: numeric gradients come from central
//! differences of the loss value alone, so the two routes stay independent.

use crate::tensor::{Tape, Tensor, Var};

/// Anything owning named, trainable tensors in a stable visiting order.
///
/// The order fixed by `visit_params` is the canonical parameter order used
/// by the optimizer, the checkpoint format, and the gradient checker.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }
}

impl Parameterized for Vec<(String, Tensor)> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, t) in self {
            f(name, t);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (name, t) in self {
            f(name, t);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Relative tolerance on each gradient component.
    pub rel_tol: f64,
    /// Floor on the relative-error denominator; below this magnitude the
    /// comparison is effectively absolute (finite differences cannot resolve
    /// gradients smaller than the roundoff in the loss).
    pub denom_floor: f64,
    /// Offset added to every analytic gradient before comparison. Zero in
    /// normal use; nonzero values let callers confirm the checker actually
    /// rejects wrong gradients.
    pub fault_offset: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            rel_tol: 1e-4,
            denom_floor: 1e-4,
            fault_offset: 0.0,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(eps: f64, rel_tol: f64) -> Self {
        GradCheckConfig {
            eps,
            rel_tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub rel_tol: f64,
    pub eps: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Worst parameter block, for diagnostics.
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares analytic gradients of `loss_fn` against central differences
/// over every component of every parameter in `store`.
///
/// `loss_fn` must be a deterministic function of the parameter values: any
/// sampling inside it has to draw from a freshly seeded generator on each
/// call, otherwise the finite differences measure noise.
pub fn grad_check<S, F>(store: &mut S, mut loss_fn: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    S: Parameterized,
    F: FnMut(&mut Tape, &S) -> Var,
{
    assert!(cfg.eps > 0.0, "eps must be positive");

    // Analytic pass.
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    let base = tape.scalar_value(loss);
    assert!(base.is_finite(), "loss is not finite at the base point");
    tape.backward(loss);

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    store.visit_params(&mut |name, t| {
        let g = tape
            .grad_by_name(name)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        analytic.push((name.to_string(), g));
    });

    let mut report = GradCheckReport {
        params: Vec::new(),
        max_rel_err: 0.0,
        rel_tol: cfg.rel_tol,
        eps: cfg.eps,
        passed: true,
    };

    for (name, grads) in &analytic {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for comp in 0..grads.len() {
            let eval_at = |store: &mut S, loss_fn: &mut F, delta: f64| -> f64 {
                perturb(store, name, comp, delta);
                let mut tape = Tape::new();
                let loss = loss_fn(&mut tape, store);
                let v = tape.scalar_value(loss);
                perturb(store, name, comp, -delta);
                v
            };
            let plus = eval_at(store, &mut loss_fn, cfg.eps);
            let minus = eval_at(store, &mut loss_fn, -cfg.eps);
            assert!(
                plus.is_finite() && minus.is_finite(),
                "non-finite loss while perturbing {}[{}]",
                name,
                comp
            );
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = grads[comp] + cfg.fault_offset;
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.denom_floor);
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
        }
        if max_rel > cfg.rel_tol {
            report.passed = false;
        }
        report.max_rel_err = report.max_rel_err.max(max_rel);
        report.params.push(ParamCheck {
            name: name.clone(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    report
}

fn perturb<S: Parameterized>(store: &mut S, target: &str, comp: usize, delta: f64) {
    let mut hit = false;
    store.visit_params_mut(&mut |name, t| {
        if name == target {
            t.data[comp] += delta;
            hit = true;
        }
    });
    assert!(hit, "parameter {:?} not found while perturbing", target);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store() -> Vec<(String, Tensor)> {
        vec![(
            "x".to_string(),
            Tensor::new(vec![1.0, -2.0, 0.5], &[3]).with_grad(),
        )]
    }

    fn quadratic_loss(tape: &mut Tape, store: &Vec<(String, Tensor)>) -> Var {
        let x = tape.bind("x", &store[0].1);
        let sq = tape.square(x);
        tape.sum(sq, None)
    }

    #[test]
    fn passes_on_correct_gradient() {
        let mut store = quadratic_store();
        let report = grad_check(
            &mut store,
            quadratic_loss,
            &GradCheckConfig::with_tolerance(1e-5, 1e-4),
        );
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn fails_on_injected_fault() {
        let mut store = quadratic_store();
        let cfg = GradCheckConfig {
            fault_offset: 1.0,
            ..GradCheckConfig::with_tolerance(1e-5, 1e-4)
        };
        let report = grad_check(&mut store, quadratic_loss, &cfg);
        assert!(!report.passed);
    }

    #[test]
    fn report_names_worst_parameter() {
        let mut store = vec![
            ("a".to_string(), Tensor::new(vec![0.7], &[1]).with_grad()),
            ("b".to_string(), Tensor::new(vec![-1.3], &[1]).with_grad()),
        ];
        let report = grad_check(
            &mut store,
            |tape, store: &Vec<(String, Tensor)>| {
                let a = tape.bind("a", &store[0].1);
                let b = tape.bind("b", &store[1].1);
                let p = tape.mul(a, b);
                tape.sum(p, None)
            },
            &GradCheckConfig::default(),
        );
        assert!(report.passed);
        assert_eq!(report.params.len(), 2);
        assert!(report.worst().is_some());
    }
}
