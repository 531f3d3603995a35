//! Dense f64 tensors and a tape for reverse-mode differentiation.
//!
//! The tape is rebuilt for every forward pass: sequence lengths vary between
//! tasks, so there is no static graph to reuse. Values are recorded in an
//! arena and addressed through [`Var`] handles; [`Tape::backward`] replays
//! the recorded operations in reverse and accumulates gradients into the
//! arena nodes. Everything is f64 — the networks here are small and the
//! gradient checks need the precision.

use std::collections::HashMap;
use std::ops::Range;

/// A shape-tagged dense array in row-major order.
///
/// `grad` is populated on tape nodes after [`Tape::backward`]; tensors held
/// outside a tape (model parameters between steps) keep it empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad_enabled: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from row-major values. Panics if the element count
    /// does not match the shape.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            expected,
            "shape {:?} expects {} elements, got {}",
            shape,
            expected,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
            grad_enabled: false,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(vec![0.0; n], shape)
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::new(vec![x], &[1])
    }

    pub fn with_grad(mut self) -> Self {
        self.grad_enabled = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor, or 1 for rank-1.
    fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            r => panic!("rank-{} tensor where rank <= 2 expected", r),
        }
    }

    fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            r => panic!("rank-{} tensor where rank <= 2 expected", r),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var, #[allow(dead_code)] f64),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, Range<usize>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive operations. Each node's inputs precede it,
/// so a single reverse sweep visits every node exactly once.
///
/// A tape and its tensors are confined to one thread; independent tapes on
/// different threads do not interact.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: HashMap<String, Var>,
}

/// Numerically safe softplus: max(x,0) + log1p(exp(-|x|)).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        #[cfg(debug_assertions)]
        {
            assert!(
                value.data.iter().all(|x| x.is_finite()),
                "non-finite value produced by {:?}",
                op
            );
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a tensor as a leaf. Gradient participation follows the
    /// tensor's `grad_enabled` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.grad_enabled;
        self.push(t, Op::Leaf, needs)
    }

    /// Records a gradient-free constant.
    pub fn constant(&mut self, data: &[f64], shape: &[usize]) -> Var {
        self.leaf(Tensor::new(data.to_vec(), shape))
    }

    pub fn constant_vec(&mut self, data: &[f64]) -> Var {
        self.constant(data, &[data.len()])
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.leaf(Tensor::zeros(shape))
    }

    /// Binds a named parameter onto the tape, once. Repeated binds of the
    /// same name return the original node so gradients accumulate across
    /// every use of the parameter.
    pub fn bind(&mut self, name: &str, param: &Tensor) -> Var {
        if let Some(&v) = self.bindings.get(name) {
            debug_assert_eq!(
                self.nodes[v.0].value.numel(),
                param.numel(),
                "parameter {:?} rebound with a different size",
                name
            );
            return v;
        }
        let v = self.leaf(param.clone().with_grad());
        self.bindings.insert(name.to_string(), v);
        v
    }

    /// Node for a previously bound parameter name, if any.
    pub fn binding(&self, name: &str) -> Option<Var> {
        self.bindings.get(name).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.numel(), 1, "scalar expected, got shape {:?}", t.shape);
        t.data[0]
    }

    /// Gradient buffer of a node, populated by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Gradient of a bound parameter by name.
    pub fn grad_by_name(&self, name: &str) -> Option<&[f64]> {
        self.binding(name).and_then(|v| self.grad(v))
    }

    // ── Elementwise and scalar ops ──────────────────────────────────────

    fn binary_shape(&self, a: Var, b: Var, op: &str) -> Vec<usize> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert_eq!(sa, sb, "{} shape mismatch: {:?} vs {:?}", op, sa, sb);
        sa.to_vec()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let shape = self.binary_shape(a, b, "add");
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(data, &shape), Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let shape = self.binary_shape(a, b, "sub");
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(data, &shape), Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let shape = self.binary_shape(a, b, "mul");
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(data, &shape), Op::Mul(a, b), needs)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let shape = self.binary_shape(a, b, "div");
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x / y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(data, &shape), Op::Div(a, b), needs)
    }

    /// Multiplication by a plain constant — the only broadcasting form.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|x| x * c).collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Scale(a, c), needs)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|x| x + c).collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::AddConst(a, c), needs)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|x| -x).collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Neg(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|x| x.tanh()).collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Tanh(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|x| x.exp()).collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Exp(a), needs)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self
            .data(a)
            .iter()
            .map(|&x| {
                assert!(x > 0.0, "log of non-positive value {}", x);
                x.ln()
            })
            .collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Log(a), needs)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|&x| softplus(x)).collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Softplus(a), needs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.data(a).iter().map(|x| x * x).collect();
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Square(a), needs)
    }

    // ── Matrix product ──────────────────────────────────────────────────

    /// Standard matrix product of rank-2 operands: [m,k] x [k,n] -> [m,n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.len(), 2, "matmul lhs must be rank 2, got {:?}", sa);
        assert_eq!(sb.len(), 2, "matmul rhs must be rank 2, got {:?}", sb);
        let (m, k) = (sa[0], sa[1]);
        let (k2, n) = (sb[0], sb[1]);
        assert_eq!(k, k2, "matmul inner dims disagree: {:?} x {:?}", sa, sb);
        let mut out = vec![0.0; m * n];
        {
            let da = self.data(a);
            let db = self.data(b);
            for i in 0..m {
                for p in 0..k {
                    let aip = da[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += aip * db[p * n + j];
                    }
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(out, &[m, n]), Op::MatMul(a, b), needs)
    }

    /// Matrix-vector product: [m,k] x [k] -> [m].
    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let (sm, sx) = (self.shape(m), self.shape(x));
        assert_eq!(sm.len(), 2, "matvec lhs must be rank 2, got {:?}", sm);
        assert_eq!(sx.len(), 1, "matvec rhs must be rank 1, got {:?}", sx);
        let (rows, cols) = (sm[0], sm[1]);
        assert_eq!(cols, sx[0], "matvec inner dims disagree: {:?} x {:?}", sm, sx);
        let mut out = vec![0.0; rows];
        {
            let w = self.data(m);
            let v = self.data(x);
            for (i, o) in out.iter_mut().enumerate() {
                let row = &w[i * cols..(i + 1) * cols];
                *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
            }
        }
        let needs = self.needs(m) || self.needs(x);
        self.push(Tensor::new(out, &[rows]), Op::MatVec(m, x), needs)
    }

    /// Same data, new shape. Gradient passes through untouched.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a);
        let expected: usize = shape.iter().product();
        assert_eq!(
            t.numel(),
            expected,
            "reshape {:?} -> {:?} changes element count",
            t.shape,
            shape
        );
        let data = t.data.clone();
        let needs = self.needs(a);
        self.push(Tensor::new(data, shape), Op::Reshape(a), needs)
    }

    // ── Reductions ──────────────────────────────────────────────────────

    fn reduce(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Var {
        let t = self.value(a);
        let (out, shape) = match axis {
            None => {
                let s: f64 = t.data.iter().sum();
                let v = if mean { s / t.numel() as f64 } else { s };
                (vec![v], vec![1])
            }
            Some(ax) => {
                assert!(
                    ax < t.rank(),
                    "reduce axis {} out of range for rank {}",
                    ax,
                    t.rank()
                );
                assert_eq!(t.rank(), 2, "axis reduction expects rank 2");
                let (r, c) = (t.shape[0], t.shape[1]);
                match ax {
                    0 => {
                        let mut out = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                out[j] += t.data[i * c + j];
                            }
                        }
                        if mean {
                            out.iter_mut().for_each(|x| *x /= r as f64);
                        }
                        (out, vec![c])
                    }
                    _ => {
                        let mut out = vec![0.0; r];
                        for i in 0..r {
                            for j in 0..c {
                                out[i] += t.data[i * c + j];
                            }
                        }
                        if mean {
                            out.iter_mut().for_each(|x| *x /= c as f64);
                        }
                        (out, vec![r])
                    }
                }
            }
        };
        let needs = self.needs(a);
        let op = if mean { Op::Mean(a, axis) } else { Op::Sum(a, axis) };
        self.push(Tensor::new(out, &shape), op, needs)
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Var {
        self.reduce(a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Var {
        self.reduce(a, axis, true)
    }

    // ── Concat / slice ──────────────────────────────────────────────────

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = self.value(parts[0]).rank();
        assert!(axis < rank, "concat axis {} out of range", axis);
        for &p in parts {
            assert_eq!(self.value(p).rank(), rank, "concat rank mismatch");
        }
        match (rank, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(self.data(p));
                }
                let n = data.len();
                let needs = parts.iter().any(|&p| self.needs(p));
                self.push(
                    Tensor::new(data, &[n]),
                    Op::Concat(parts.to_vec(), axis),
                    needs,
                )
            }
            (2, 0) => {
                let cols = self.value(parts[0]).cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    assert_eq!(t.cols(), cols, "concat column mismatch");
                    rows += t.rows();
                    data.extend_from_slice(&t.data);
                }
                let needs = parts.iter().any(|&p| self.needs(p));
                self.push(
                    Tensor::new(data, &[rows, cols]),
                    Op::Concat(parts.to_vec(), axis),
                    needs,
                )
            }
            (2, 1) => {
                let rows = self.value(parts[0]).rows();
                let total: usize = parts
                    .iter()
                    .map(|&p| {
                        let t = self.value(p);
                        assert_eq!(t.rows(), rows, "concat row mismatch");
                        t.cols()
                    })
                    .sum();
                let mut data = vec![0.0; rows * total];
                let mut off = 0;
                for &p in parts {
                    let t = self.value(p);
                    let c = t.cols();
                    for i in 0..rows {
                        data[i * total + off..i * total + off + c]
                            .copy_from_slice(&t.data[i * c..(i + 1) * c]);
                    }
                    off += c;
                }
                let needs = parts.iter().any(|&p| self.needs(p));
                self.push(
                    Tensor::new(data, &[rows, total]),
                    Op::Concat(parts.to_vec(), axis),
                    needs,
                )
            }
            _ => panic!("concat supports rank <= 2, got rank {}", rank),
        }
    }

    /// Contiguous range along `axis`, gradients routed back to the source.
    pub fn slice(&mut self, a: Var, axis: usize, range: Range<usize>) -> Var {
        let t = self.value(a);
        let rank = t.rank();
        assert!(axis < rank, "slice axis {} out of range", axis);
        assert!(range.start <= range.end, "inverted slice range");
        let (data, shape) = match (rank, axis) {
            (1, 0) => {
                assert!(range.end <= t.shape[0], "slice {:?} out of bounds", range);
                (
                    t.data[range.clone()].to_vec(),
                    vec![range.end - range.start],
                )
            }
            (2, 0) => {
                let (r, c) = (t.shape[0], t.shape[1]);
                assert!(range.end <= r, "slice {:?} out of bounds", range);
                (
                    t.data[range.start * c..range.end * c].to_vec(),
                    vec![range.end - range.start, c],
                )
            }
            (2, 1) => {
                let (r, c) = (t.shape[0], t.shape[1]);
                assert!(range.end <= c, "slice {:?} out of bounds", range);
                let w = range.end - range.start;
                let mut data = Vec::with_capacity(r * w);
                for i in 0..r {
                    data.extend_from_slice(&t.data[i * c + range.start..i * c + range.end]);
                }
                (data, vec![r, w])
            }
            _ => panic!("slice supports rank <= 2, got rank {}", rank),
        };
        let needs = self.needs(a);
        self.push(Tensor::new(data, &shape), Op::Slice(a, axis, range), needs)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Every node with `needs_grad`
    /// reachable from the loss ends up with its gradient buffer filled;
    /// gradients accumulate additively across uses.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward expects a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        for node in &mut self.nodes {
            node.value.grad = if node.needs_grad {
                Some(vec![0.0; node.value.data.len()])
            } else {
                None
            };
        }
        if !self.nodes[loss.0].needs_grad {
            return; // constant loss: nothing depends on parameters
        }
        self.nodes[loss.0].value.grad.as_mut().unwrap()[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            // inputs always precede the node, so the tape splits cleanly
            // into the node being processed and everything it reads
            let (lower, upper) = self.nodes.split_at_mut(idx);
            let node = &upper[0];
            let g = node.value.grad.as_deref().expect("grad initialized above");
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accum_map(lower, *a, g, |g, _| g);
                    accum_map(lower, *b, g, |g, _| g);
                }
                Op::Sub(a, b) => {
                    accum_map(lower, *a, g, |g, _| g);
                    accum_map(lower, *b, g, |g, _| -g);
                }
                Op::Mul(a, b) => {
                    accum_scaled_by(lower, *a, *b, g);
                    accum_scaled_by(lower, *b, *a, g);
                }
                Op::Div(a, b) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&lower[b.0].value.data)
                        .map(|(g, y)| g / y)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(lower[a.0].value.data.iter().zip(&lower[b.0].value.data))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    accum(lower, *a, &da);
                    accum(lower, *b, &db);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accum_map(lower, *a, g, move |g, _| g * c);
                }
                Op::AddConst(a, _) => accum_map(lower, *a, g, |g, _| g),
                Op::Neg(a) => accum_map(lower, *a, g, |g, _| -g),
                Op::Sigmoid(a) => {
                    let out = &node.value.data;
                    accum_zip(lower, *a, g, out, |g, s| g * s * (1.0 - s));
                }
                Op::Tanh(a) => {
                    let out = &node.value.data;
                    accum_zip(lower, *a, g, out, |g, t| g * (1.0 - t * t));
                }
                Op::Exp(a) => {
                    let out = &node.value.data;
                    accum_zip(lower, *a, g, out, |g, e| g * e);
                }
                Op::Log(a) => accum_map(lower, *a, g, |g, x| g / x),
                Op::Softplus(a) => accum_map(lower, *a, g, |g, x| g * sigmoid(x)),
                Op::Square(a) => accum_map(lower, *a, g, |g, x| g * 2.0 * x),
                Op::MatMul(a, b) => {
                    let (m, k) = (lower[a.0].value.shape[0], lower[a.0].value.shape[1]);
                    let n = lower[b.0].value.shape[1];
                    // dL/da = g . b^T, dL/db = a^T . g
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    {
                        let ad = &lower[a.0].value.data;
                        let bd = &lower[b.0].value.data;
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    da[i * k + p] += gij * bd[p * n + j];
                                    db[p * n + j] += ad[i * k + p] * gij;
                                }
                            }
                        }
                    }
                    accum(lower, *a, &da);
                    accum(lower, *b, &db);
                }
                Op::MatVec(a, b) => {
                    let (m, k) = (lower[a.0].value.shape[0], lower[a.0].value.shape[1]);
                    // dL/dw[i,p] = g[i] x[p]; dL/dx[p] = sum_i g[i] w[i,p]
                    if lower[a.0].needs_grad {
                        let x = lower[b.0].value.data.clone();
                        let grad_w = grad_buf(&mut lower[a.0]);
                        for i in 0..m {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &mut grad_w[i * k..(i + 1) * k];
                            for (gw, xv) in row.iter_mut().zip(&x) {
                                *gw += gi * xv;
                            }
                        }
                    }
                    if lower[b.0].needs_grad {
                        let mut dx = vec![0.0; k];
                        {
                            let w = &lower[a.0].value.data;
                            for i in 0..m {
                                let gi = g[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                let row = &w[i * k..(i + 1) * k];
                                for (dxp, wip) in dx.iter_mut().zip(row) {
                                    *dxp += gi * wip;
                                }
                            }
                        }
                        accum(lower, *b, &dx);
                    }
                }
                Op::Sum(a, axis) => spread_reduce(lower, *a, *axis, g, false),
                Op::Mean(a, axis) => spread_reduce(lower, *a, *axis, g, true),
                Op::Concat(parts, axis) => {
                    let rank = lower[parts[0].0].value.rank();
                    match (rank, axis) {
                        (1, 0) | (2, 0) => {
                            let mut off = 0;
                            for &p in parts {
                                let n = lower[p.0].value.numel();
                                accum(lower, p, &g[off..off + n]);
                                off += n;
                            }
                        }
                        (2, 1) => {
                            let rows = lower[parts[0].0].value.rows();
                            let total: usize =
                                parts.iter().map(|&p| lower[p.0].value.cols()).sum();
                            let mut off = 0;
                            for &p in parts {
                                let c = lower[p.0].value.cols();
                                let mut dp = vec![0.0; rows * c];
                                for i in 0..rows {
                                    dp[i * c..(i + 1) * c].copy_from_slice(
                                        &g[i * total + off..i * total + off + c],
                                    );
                                }
                                accum(lower, p, &dp);
                                off += c;
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                Op::Slice(a, axis, range) => {
                    if !lower[a.0].needs_grad {
                        continue;
                    }
                    let (rank, shape) =
                        (lower[a.0].value.rank(), lower[a.0].value.shape.clone());
                    let da = grad_buf(&mut lower[a.0]);
                    match (rank, axis) {
                        (1, 0) => {
                            for (d, gv) in da[range.clone()].iter_mut().zip(g) {
                                *d += gv;
                            }
                        }
                        (2, 0) => {
                            let c = shape[1];
                            for (d, gv) in da[range.start * c..range.end * c].iter_mut().zip(g) {
                                *d += gv;
                            }
                        }
                        (2, 1) => {
                            let (r, c) = (shape[0], shape[1]);
                            let w = range.end - range.start;
                            for i in 0..r {
                                for (d, gv) in da[i * c + range.start..i * c + range.end]
                                    .iter_mut()
                                    .zip(&g[i * w..(i + 1) * w])
                                {
                                    *d += gv;
                                }
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                Op::Reshape(a) => accum_map(lower, *a, g, |g, _| g),
            }
        }
    }
}

/// Gradient buffer of a node, allocated on demand.
fn grad_buf(node: &mut Node) -> &mut [f64] {
    let n = node.value.data.len();
    node.value.grad.get_or_insert_with(|| vec![0.0; n])
}

fn accum(nodes: &mut [Node], v: Var, delta: &[f64]) {
    if !nodes[v.0].needs_grad {
        return;
    }
    for (g, d) in grad_buf(&mut nodes[v.0]).iter_mut().zip(delta) {
        *g += d;
    }
}

/// Accumulates f(g, input_value) into the input's gradient.
fn accum_map(nodes: &mut [Node], v: Var, g: &[f64], f: impl Fn(f64, f64) -> f64) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let node = &mut nodes[v.0];
    let n = node.value.data.len();
    let (data, grad) = (
        &node.value.data,
        node.value.grad.get_or_insert_with(|| vec![0.0; n]),
    );
    for ((gr, gv), x) in grad.iter_mut().zip(g).zip(data) {
        *gr += f(*gv, *x);
    }
}

/// Accumulates f(g, aux) into the input's gradient, where `aux` is an
/// auxiliary buffer (usually the op's own output).
fn accum_zip(nodes: &mut [Node], v: Var, g: &[f64], aux: &[f64], f: impl Fn(f64, f64) -> f64) {
    if !nodes[v.0].needs_grad {
        return;
    }
    for ((gr, gv), a) in grad_buf(&mut nodes[v.0]).iter_mut().zip(g).zip(aux) {
        *gr += f(*gv, *a);
    }
}

/// Accumulates g * value(other) into the target's gradient.
fn accum_scaled_by(nodes: &mut [Node], target: Var, other: Var, g: &[f64]) {
    if !nodes[target.0].needs_grad {
        return;
    }
    if target.0 == other.0 {
        let node = &mut nodes[target.0];
        let n = node.value.data.len();
        let (data, grad) = (
            &node.value.data,
            node.value.grad.get_or_insert_with(|| vec![0.0; n]),
        );
        for ((gr, gv), x) in grad.iter_mut().zip(g).zip(data) {
            *gr += gv * x;
        }
        return;
    }
    let (lo, hi) = (target.0.min(other.0), target.0.max(other.0));
    let (head, tail) = nodes.split_at_mut(hi);
    let (t_node, o_node) = if target.0 < other.0 {
        (&mut head[lo], &tail[0])
    } else {
        (&mut tail[0], &head[lo])
    };
    let n = t_node.value.data.len();
    let grad = t_node.value.grad.get_or_insert_with(|| vec![0.0; n]);
    for ((gr, gv), x) in grad.iter_mut().zip(g).zip(&o_node.value.data) {
        *gr += gv * x;
    }
}

fn spread_reduce(nodes: &mut [Node], a: Var, axis: Option<usize>, g: &[f64], mean: bool) {
    if !nodes[a.0].needs_grad {
        return;
    }
    let shape = nodes[a.0].value.shape.clone();
    let numel = nodes[a.0].value.numel();
    let da = grad_buf(&mut nodes[a.0]);
    match axis {
        None => {
            let w = if mean { 1.0 / numel as f64 } else { 1.0 };
            let add = g[0] * w;
            da.iter_mut().for_each(|x| *x += add);
        }
        Some(0) => {
            let (r, c) = (shape[0], shape[1]);
            let w = if mean { 1.0 / r as f64 } else { 1.0 };
            for i in 0..r {
                for j in 0..c {
                    da[i * c + j] += g[j] * w;
                }
            }
        }
        Some(_) => {
            let (r, c) = (shape[0], shape[1]);
            let w = if mean { 1.0 / c as f64 } else { 1.0 };
            for i in 0..r {
                for j in 0..c {
                    da[i * c + j] += g[i] * w;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_from_values() {
        let t = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        assert_eq!(t.shape, vec![2, 2]);
        assert_eq!(t.data, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(!t.grad_enabled);

        let s = Tensor::new(vec![0.0], &[1]);
        assert_eq!(s.numel(), 1);
    }

    #[test]
    #[should_panic(expected = "expects 9 elements")]
    fn tensor_shape_mismatch() {
        Tensor::new(vec![1.0, 2.0], &[3, 3]);
    }

    #[test]
    fn matmul_identity_and_hand_sum() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let eye = tape.constant(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let c = tape.matmul(a, eye);
        assert_eq!(tape.data(c), &[1.0, 2.0, 3.0, 4.0]);

        let ones = tape.constant(&[1.0, 1.0], &[2, 1]);
        let d = tape.matmul(a, ones);
        assert_eq!(tape.data(d), &[3.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "inner dims disagree")]
    fn matmul_dim_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0], &[1, 2]);
        let b = tape.constant(&[1.0, 2.0, 3.0], &[3, 1]);
        tape.matmul(a, b);
    }

    #[test]
    fn matmul_grad_matches_hand_result() {
        // d/da sum(a.b) with b = ones(2,1) is a matrix of ones
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).with_grad());
        let b = tape.constant(&[1.0, 1.0], &[2, 1]);
        let c = tape.matmul(a, b);
        let loss = tape.sum(c, None);
        tape.backward(loss);
        let g = tape.grad(a).unwrap();
        for (gi, want) in g.iter().zip([1.0, 1.0, 1.0, 1.0]) {
            assert_relative_eq!(*gi, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let z = tape.constant(&[0.0], &[1]);
        let s = tape.sigmoid(z);
        assert_eq!(tape.data(s), &[0.5]);
        let t = tape.tanh(z);
        assert_eq!(tape.data(t), &[0.0]);
        let sp = tape.softplus(z);
        assert_relative_eq!(tape.data(sp)[0], 2.0f64.ln(), max_relative = 1e-15);
    }

    #[test]
    #[should_panic(expected = "log of non-positive")]
    fn log_domain_error() {
        let mut tape = Tape::new();
        let z = tape.constant(&[0.0], &[1]);
        tape.log(z);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn elementwise_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0], &[2]);
        let b = tape.constant(&[1.0, 2.0, 3.0], &[3]);
        tape.add(a, b);
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::new();
        let v = tape.constant(&[2.0, 4.0], &[2]);
        let m = tape.mean(v, None);
        assert_eq!(tape.data(m), &[3.0]);

        let a = tape.constant(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let s0 = tape.sum(a, Some(0));
        assert_eq!(tape.data(s0), &[4.0, 6.0]);
        let s1 = tape.sum(a, Some(1));
        assert_eq!(tape.data(s1), &[3.0, 7.0]);
    }

    #[test]
    fn mean_grad_distributes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[4]).with_grad());
        let m = tape.mean(x, None);
        tape.backward(m);
        assert_eq!(tape.grad(x).unwrap(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    #[should_panic(expected = "axis 2 out of range")]
    fn reduce_bad_axis() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        tape.sum(a, Some(2));
    }

    #[test]
    fn concat_and_slice() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0], &[2, 1]);
        let b = tape.constant(&[3.0, 4.0], &[2, 1]);
        let c = tape.concat(&[a, b], 1);
        assert_eq!(tape.shape(c), &[2, 2]);
        assert_eq!(tape.data(c), &[1.0, 3.0, 2.0, 4.0]);

        let v = tape.constant(&[1.0, 2.0, 3.0, 4.0], &[4]);
        let s = tape.slice(v, 0, 1..3);
        assert_eq!(tape.data(s), &[2.0, 3.0]);
    }

    #[test]
    fn concat_slice_inverse_pair() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0, 2.0, 3.0], &[3]);
        let b = tape.constant(&[4.0, 5.0], &[2]);
        let c = tape.concat(&[a, b], 0);
        let back = tape.slice(c, 0, 0..3);
        assert_eq!(tape.data(back), tape.data(a));
        let back2 = tape.slice(c, 0, 3..5);
        assert_eq!(tape.data(back2), tape.data(b));
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn slice_out_of_range() {
        let mut tape = Tape::new();
        let v = tape.constant(&[1.0, 2.0], &[2]);
        tape.slice(v, 0, 1..4);
    }

    #[test]
    fn backward_square_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1.0, 2.0], &[2]).with_grad());
        let sq = tape.square(x);
        let loss = tape.sum(sq, None);
        tape.backward(loss);
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_constant_loss_leaves_grads_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1.0, 2.0], &[2]).with_grad());
        let c = tape.constant(&[5.0], &[1]);
        tape.backward(c);
        // x is never touched by the loss; its grad stays all-zero
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1.0, 2.0], &[2]).with_grad());
        tape.backward(x);
    }

    #[test]
    fn gradient_accumulation_is_additive() {
        // y = x*x uses x twice; grad must equal the sum of both path grads
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3.0], &[1]).with_grad());
        let y = tape.mul(x, x);
        tape.backward(y);
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);

        // same result as two independent single-use paths added together
        let mut tape2 = Tape::new();
        let a = tape2.leaf(Tensor::new(vec![3.0], &[1]).with_grad());
        let c = tape2.constant(&[3.0], &[1]);
        let p1 = tape2.mul(a, c);
        let p2 = tape2.mul(c, a);
        let y2 = tape2.add(p1, p2);
        let half = tape2.scale(y2, 0.5);
        tape2.backward(half);
        assert_eq!(tape2.grad(a).unwrap(), &[3.0]);
    }

    #[test]
    fn backward_deterministic_bitwise() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(
                Tensor::new(vec![0.3, -1.2, 0.7, 2.1, -0.4, 0.9], &[2, 3]).with_grad(),
            );
            let s = tape.sigmoid(x);
            let t = tape.tanh(s);
            let sq = tape.square(t);
            let loss = tape.sum(sq, None);
            tape.backward(loss);
            tape.grad(x).unwrap().to_vec()
        };
        let g1 = run();
        let g2 = run();
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    /// Central finite difference of a scalar-valued tape program.
    fn numeric_grad(
        f: &dyn Fn(&mut Tape, Var) -> Var,
        x0: &[f64],
        shape: &[usize],
        eps: f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; x0.len()];
        for i in 0..x0.len() {
            let run = |delta: f64| {
                let mut pert = x0.to_vec();
                pert[i] += delta;
                let mut tape = Tape::new();
                let x = tape.leaf(Tensor::new(pert, shape));
                let loss = f(&mut tape, x);
                tape.scalar_value(loss)
            };
            out[i] = (run(eps) - run(-eps)) / (2.0 * eps);
        }
        out
    }

    fn check_primitive(name: &str, f: &dyn Fn(&mut Tape, Var) -> Var, positive_only: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..6usize);
            let x0: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = rng.gen_range(-2.0..2.0);
                    if positive_only {
                        v.abs() + 0.1
                    } else {
                        v
                    }
                })
                .collect();
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(x0.clone(), &[n]).with_grad());
            let loss = f(&mut tape, x);
            tape.backward(loss);
            let analytic = tape.grad(x).unwrap().to_vec();
            let numeric = numeric_grad(f, &x0, &[n], 1e-5);
            for (a, m) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(m.abs()).max(1e-2);
                assert!(
                    (a - m).abs() / denom < 1e-4,
                    "{}: analytic {} vs numeric {}",
                    name,
                    a,
                    m
                );
            }
        }
    }

    #[test]
    fn primitive_grads_match_finite_differences() {
        check_primitive("sigmoid", &|t, x| {
            let y = t.sigmoid(x);
            t.sum(y, None)
        }, false);
        check_primitive("tanh", &|t, x| {
            let y = t.tanh(x);
            t.sum(y, None)
        }, false);
        check_primitive("exp", &|t, x| {
            let y = t.exp(x);
            t.sum(y, None)
        }, false);
        check_primitive("log", &|t, x| {
            let y = t.log(x);
            t.sum(y, None)
        }, true);
        check_primitive("softplus", &|t, x| {
            let y = t.softplus(x);
            t.sum(y, None)
        }, false);
        check_primitive("square", &|t, x| {
            let y = t.square(x);
            t.sum(y, None)
        }, false);
        check_primitive("mul_self", &|t, x| {
            let y = t.mul(x, x);
            t.sum(y, None)
        }, false);
        check_primitive("div", &|t, x| {
            let c = t.add_const(x, 3.0);
            let y = t.div(x, c);
            t.sum(y, None)
        }, false);
        check_primitive("mean", &|t, x| t.mean(x, None), false);
        check_primitive("slice_concat", &|t, x| {
            let n = t.value(x).numel();
            if n < 2 {
                return t.sum(x, None);
            }
            let a = t.slice(x, 0, 0..1);
            let b = t.slice(x, 0, 1..n);
            let c = t.concat(&[b, a], 0);
            let sq = t.square(c);
            t.sum(sq, None)
        }, false);
    }

    #[test]
    fn composite_grad_matches_finite_differences() {
        // loss = sum(sigmoid(W x)) with respect to W
        let x0 = [0.4, -0.7, 1.1];
        let f = |tape: &mut Tape, w: Var| {
            let x = tape.constant(&x0, &[3]);
            let wx = tape.matvec(w, x);
            let s = tape.sigmoid(wx);
            tape.sum(s, None)
        };
        let w0: Vec<f64> = vec![0.2, -0.3, 0.5, 0.1, 0.8, -0.6];
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::new(w0.clone(), &[2, 3]).with_grad());
        let loss = f(&mut tape, w);
        tape.backward(loss);
        let analytic = tape.grad(w).unwrap().to_vec();
        let numeric = numeric_grad(&f, &w0, &[2, 3], 1e-5);
        for (a, m) in analytic.iter().zip(&numeric) {
            assert!(
                (a - m).abs() / a.abs().max(m.abs()).max(1e-2) < 1e-4,
                "analytic {} vs numeric {}",
                a,
                m
            );
        }
    }
}
