use std::borrow::Cow;

use rand::Rng;

use super::tensor::{numel, Tensor};
use super::{AutodiffError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale(Var, f64),
    MulConst {
        x: Var,
        factor: Vec<f64>,
    },
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
        outer: usize,
    },
    Narrow {
        x: Var,
        outer: usize,
        src_width: usize,
        offset: usize,
        width: usize,
    },
    Reshape(Var),
    Transpose01 {
        x: Var,
        rows: usize,
        cols: usize,
        inner: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MaxOverTime {
        steps: Vec<Var>,
        argmax: Vec<usize>,
    },
    MeanOverTime {
        steps: Vec<Var>,
        lengths: Vec<usize>,
    },
    LastOverTime {
        steps: Vec<Var>,
        lengths: Vec<usize>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
    },
    Pick {
        x: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, for the caller to
/// fold into its running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance.
    pub var: Vec<f64>,
}

/// Define-by-run reverse-mode computation graph.
///
/// Leaves may borrow parameter storage for the lifetime `'a`, so building a
/// graph over a model never copies its weights. Nodes are appended in
/// creation order, which is also a valid topological order.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf, or `None` when the leaf is
    /// not trainable or not reachable from the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Adds the gradient of each `vars[i]` into `params[i]`.
    pub fn accumulate_into(&self, params: Vec<&mut Tensor>, vars: &[Var]) -> Result<()> {
        if params.len() != vars.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "accumulate_into",
                left: vec![params.len()],
                right: vec![vars.len()],
            });
        }
        for (p, &v) in params.into_iter().zip(vars) {
            if let Some(g) = self.get(v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

/// `c = beta * c + op(a) * op(b)` with `c` of shape `m x n`. `a` holds `m x k`
/// (or `k x m` when `a_t`); `b` holds `k x n` (or `n x k` when `b_t`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &[f64], cols: usize, out: &mut [f64]) {
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            total += *oi;
        }
        o.iter_mut().for_each(|v| *v /= total);
    }
}

fn log_softmax_rows(x: &[f64], cols: usize, out: &mut [f64]) {
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = xi - lse;
        }
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Result<Var> {
        debug_assert_eq!(value.len(), numel(&shape));
        if value.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            shape,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf borrowing `t`; trainable exactly when `t.requires_grad()`.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.borrowed(t, t.requires_grad())
    }

    /// Leaf borrowing `t` that never receives a gradient.
    pub fn frozen(&mut self, t: &'a Tensor) -> Var {
        self.borrowed(t, false)
    }

    fn borrowed(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf. Use `requires_grad` for variables that are not model
    /// parameters (gradient checks, relaxed-sample tests).
    pub fn input(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            value: Cow::Owned(t.into_data()),
            shape,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        Ok(self.input(Tensor::new(shape, data)?))
    }

    /// Copy of `x` as a gradient-free leaf.
    pub fn detach(&mut self, x: Var) -> Var {
        let node = self.node(x);
        let (value, shape) = (node.value.to_vec(), node.shape.clone());
        self.nodes.push(Node {
            value: Cow::Owned(value),
            shape,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let node = self.node(v);
        Tensor::new(node.shape.clone(), node.value.to_vec()).expect("graph nodes have consistent shapes")
    }

    fn last_dim(&self, v: Var) -> usize {
        self.node(v).shape.last().copied().unwrap_or(1)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// `a @ b` where `a` is `[.., k]` and `b` is `[k, n]`; leading dimensions of
    /// `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T` where `a` is `[.., k]` and `b` is `[n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 {
            return Err(self.mismatch(op, a, b));
        }
        let k = sa[sa.len() - 1];
        let (bk, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != bk {
            return Err(self.mismatch(op, a, b));
        }
        let m = numel(sa) / k;
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), trans_b, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        self.push(op, out, shape, Op::MatMul { a, b, trans_b, m, k, n }, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op, a, b));
        }
        Ok(())
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(op_name, out, shape, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `[n]` bias to every row of `x: [.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.last_dim(x);
        if self.shape(bias) != [n] {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(r, b)| r + b))
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        self.push("add_bias", out, shape, Op::AddBias { x, bias }, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let (rg, shape) = (self.rg(x), self.shape(x).to_vec());
        self.push("scale", out, shape, Op::Scale(x, c), rg)
    }

    /// Elementwise product with a constant of the same size. Dropout masks are
    /// applied through this op.
    pub fn mul_const(&mut self, x: Var, factor: Vec<f64>) -> Result<Var> {
        if factor.len() != self.value(x).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_const",
                left: self.shape(x).to_vec(),
                right: vec![factor.len()],
            });
        }
        let out = self.value(x).iter().zip(&factor).map(|(v, f)| v * f).collect();
        let (rg, shape) = (self.rg(x), self.shape(x).to_vec());
        self.push("mul_const", out, shape, Op::MulConst { x, factor }, rg)
    }

    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_const",
                left: self.shape(x).to_vec(),
                right: vec![c.len()],
            });
        }
        let out = self.value(x).iter().zip(c).map(|(v, f)| v + f).collect();
        let (rg, shape) = (self.rg(x), self.shape(x).to_vec());
        self.push("add_const", out, shape, Op::AddConst(x), rg)
    }

    /// Inverted dropout with a fresh mask.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        let mask = dropout_mask(self.value(x).len(), p, rng);
        self.mul_const(x, mask)
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let (rg, shape) = (self.rg(x), self.shape(x).to_vec());
        self.push(name, out, shape, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, Op::Relu(x), |v| v.max(0.0))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::Invalid {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::Invalid {
                op: "concat",
                reason: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let inner: usize = base[axis + 1..].iter().product();
        let outer: usize = base[..axis].iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(self.mismatch("concat", first, p));
            }
            widths.push(s[axis] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total / inner;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            "concat",
            out,
            shape,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
                outer,
            },
            rg,
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(AutodiffError::Invalid {
                op: "narrow",
                reason: format!("range {start}..{} on axis {axis} of shape {s:?}", start + len),
            });
        }
        let inner: usize = s[axis + 1..].iter().product();
        let outer: usize = s[..axis].iter().product();
        let src_width = s[axis] * inner;
        let (offset, width) = (start * inner, len * inner);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            out.extend_from_slice(&v[o * src_width + offset..o * src_width + offset + width]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(x);
        self.push(
            "narrow",
            out,
            shape,
            Op::Narrow {
                x,
                outer,
                src_width,
                offset,
                width,
            },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).len() || shape.contains(&0) {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape,
            });
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        self.push("reshape", out, shape, Op::Reshape(x), rg)
    }

    /// Swaps the first two axes: `[a, b, ..] -> [b, a, ..]`.
    pub fn transpose01(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(AutodiffError::Invalid {
                op: "transpose01",
                reason: format!("needs at least 2 axes, got {s:?}"),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            for c in 0..cols {
                let src = (r * cols + c) * inner;
                let dst = (c * rows + r) * inner;
                out[dst..dst + inner].copy_from_slice(&v[src..src + inner]);
            }
        }
        let mut shape = s;
        shape.swap(0, 1);
        let rg = self.rg(x);
        self.push("transpose01", out, shape, Op::Transpose01 { x, rows, cols, inner }, rg)
    }

    /// Row lookup: `table: [V, d]`, output `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(AutodiffError::Invalid {
                op: "embedding",
                reason: format!("table must be 2-d, got {s:?}"),
            });
        }
        let (vocab, d) = (s[0], s[1]);
        if ids.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "embedding",
                reason: "no ids".into(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                size: vocab,
            });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        self.push(
            "embedding",
            out,
            vec![ids.len(), d],
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    fn check_steps(&self, op: &'static str, steps: &[Var], lengths: Option<&[usize]>) -> Result<(usize, usize, Vec<usize>)> {
        let first = *steps.first().ok_or(AutodiffError::Invalid {
            op,
            reason: "empty time axis".into(),
        })?;
        let s = self.shape(first);
        if s.len() != 2 {
            return Err(AutodiffError::Invalid {
                op,
                reason: format!("time steps must be [batch, features], got {s:?}"),
            });
        }
        let (b, h) = (s[0], s[1]);
        for &st in steps {
            if self.shape(st) != [b, h] {
                return Err(self.mismatch(op, first, st));
            }
        }
        let lengths = match lengths {
            Some(l) => {
                if l.len() != b || l.iter().any(|&n| n == 0 || n > steps.len()) {
                    return Err(AutodiffError::Invalid {
                        op,
                        reason: format!("lengths {l:?} invalid for batch {b} over {} steps", steps.len()),
                    });
                }
                l.to_vec()
            }
            None => vec![steps.len(); b],
        };
        Ok((b, h, lengths))
    }

    /// Per-feature maximum over the first `lengths[b]` time steps.
    pub fn max_over_time(&mut self, steps: &[Var], lengths: Option<&[usize]>) -> Result<Var> {
        let (b, h, lengths) = self.check_steps("max_over_time", steps, lengths)?;
        let mut out = vec![f64::NEG_INFINITY; b * h];
        let mut argmax = vec![0; b * h];
        for (t, &st) in steps.iter().enumerate() {
            let v = self.value(st);
            for (row, &len) in lengths.iter().enumerate() {
                if t >= len {
                    continue;
                }
                for j in row * h..(row + 1) * h {
                    if v[j] > out[j] {
                        out[j] = v[j];
                        argmax[j] = t;
                    }
                }
            }
        }
        let rg = steps.iter().any(|&s| self.rg(s));
        self.push(
            "max_over_time",
            out,
            vec![b, h],
            Op::MaxOverTime {
                steps: steps.to_vec(),
                argmax,
            },
            rg,
        )
    }

    pub fn mean_over_time(&mut self, steps: &[Var], lengths: Option<&[usize]>) -> Result<Var> {
        let (b, h, lengths) = self.check_steps("mean_over_time", steps, lengths)?;
        let mut out = vec![0.0; b * h];
        for (t, &st) in steps.iter().enumerate() {
            let v = self.value(st);
            for (row, &len) in lengths.iter().enumerate() {
                if t < len {
                    for j in row * h..(row + 1) * h {
                        out[j] += v[j];
                    }
                }
            }
        }
        for row in 0..b {
            let n = lengths[row] as f64;
            out[row * h..(row + 1) * h].iter_mut().for_each(|x| *x /= n);
        }
        let rg = steps.iter().any(|&s| self.rg(s));
        self.push(
            "mean_over_time",
            out,
            vec![b, h],
            Op::MeanOverTime {
                steps: steps.to_vec(),
                lengths,
            },
            rg,
        )
    }

    /// State at time `lengths[b] - 1` for each row.
    pub fn last_over_time(&mut self, steps: &[Var], lengths: Option<&[usize]>) -> Result<Var> {
        let (b, h, lengths) = self.check_steps("last_over_time", steps, lengths)?;
        let mut out = vec![0.0; b * h];
        for row in 0..b {
            let v = self.value(steps[lengths[row] - 1]);
            out[row * h..(row + 1) * h].copy_from_slice(&v[row * h..(row + 1) * h]);
        }
        let rg = steps.iter().any(|&s| self.rg(s));
        self.push(
            "last_over_time",
            out,
            vec![b, h],
            Op::LastOverTime {
                steps: steps.to_vec(),
                lengths,
            },
            rg,
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.last_dim(x);
        let mut out = vec![0.0; self.value(x).len()];
        softmax_rows(self.value(x), cols, &mut out);
        let (rg, shape) = (self.rg(x), self.shape(x).to_vec());
        self.push("softmax", out, shape, Op::Softmax(x), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.last_dim(x);
        let mut out = vec![0.0; self.value(x).len()];
        log_softmax_rows(self.value(x), cols, &mut out);
        let (rg, shape) = (self.rg(x), self.shape(x).to_vec());
        self.push("log_softmax", out, shape, Op::LogSoftmax(x), rg)
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(AutodiffError::Invalid {
                op: "batch_norm",
                reason: format!("input must be [batch, features], got {s:?}"),
            });
        }
        let f = s[1];
        if self.shape(gamma) != [f] {
            return Err(self.mismatch("batch_norm", x, gamma));
        }
        if self.shape(beta) != [f] {
            return Err(self.mismatch("batch_norm", x, beta));
        }
        Ok((s[0], f))
    }

    fn bn_finish(&mut self, x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool) -> Result<Var> {
        let f = inv_std.len();
        let (g, b) = (self.value(gamma), self.value(beta));
        let out = xhat.iter().enumerate().map(|(i, &xh)| g[i % f] * xh + b[i % f]).collect();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        self.push(
            "batch_norm",
            out,
            shape,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        )
    }

    /// Training-mode batch normalization over the rows of `x: [batch, features]`
    /// using the biased batch variance. Returns the batch statistics for
    /// running-average bookkeeping.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, f) = self.check_bn(x, gamma, beta)?;
        if n < 2 {
            return Err(AutodiffError::BatchTooSmall(n));
        }
        let v = self.value(x);
        let mut mean = vec![0.0; f];
        for row in v.chunks_exact(f) {
            mean.iter_mut().zip(row).for_each(|(m, r)| *m += r);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut sq = vec![0.0; f];
        for row in v.chunks_exact(f) {
            for j in 0..f {
                let d = row[j] - mean[j];
                sq[j] += d * d;
            }
        }
        let inv_std: Vec<f64> = sq.iter().map(|s| 1.0 / (s / n as f64 + eps).sqrt()).collect();
        let xhat = v.iter().enumerate().map(|(i, &xi)| (xi - mean[i % f]) * inv_std[i % f]).collect();
        let stats = BatchStats {
            mean,
            var: sq.iter().map(|s| s / (n - 1) as f64).collect(),
        };
        Ok((self.bn_finish(x, gamma, beta, xhat, inv_std, true)?, stats))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (_, f) = self.check_bn(x, gamma, beta)?;
        if mean.len() != f || var.len() != f {
            return Err(AutodiffError::ShapeMismatch {
                op: "batch_norm",
                left: self.shape(x).to_vec(),
                right: vec![mean.len()],
            });
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let xhat = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &xi)| (xi - mean[i % f]) * inv_std[i % f])
            .collect();
        self.bn_finish(x, gamma, beta, xhat, inv_std, false)
    }

    /// Mean cross-entropy of `logits: [.., V]` against one target per row.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.last_dim(logits);
        let rows = self.value(logits).len() / v;
        if targets.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                size: v,
            });
        }
        let mut logp = vec![0.0; rows * v];
        log_softmax_rows(self.value(logits), v, &mut logp);
        let loss = -targets.iter().enumerate().map(|(r, &t)| logp[r * v + t]).sum::<f64>() / rows as f64;
        let probs = logp.iter().map(|l| l.exp()).collect();
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            vec![loss],
            Vec::new(),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != labels.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "bce_with_logits",
                left: self.shape(logits).to_vec(),
                right: vec![labels.len()],
            });
        }
        let n = z.len() as f64;
        let loss = z
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let rg = self.rg(logits);
        self.push(
            "bce_with_logits",
            vec![loss],
            Vec::new(),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// Picks `x[r, idx[r]]` for every row `r` of `x: [.., C]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let c = self.last_dim(x);
        let rows = self.value(x).len() / c;
        if idx.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "pick",
                left: self.shape(x).to_vec(),
                right: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pick",
                index: bad,
                size: c,
            });
        }
        let v = self.value(x);
        let out = idx.iter().enumerate().map(|(r, &i)| v[r * c + i]).collect();
        let rg = self.rg(x);
        self.push("pick", out, vec![rows], Op::Pick { x, idx: idx.to_vec() }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push("sum", vec![s], Vec::new(), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push("mean", vec![m], Vec::new(), Op::Mean(x), rg)
    }

    /// Reverse sweep from a single-element `loss`. Gradients accumulate
    /// additively when a node feeds several consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(ln.shape.clone()));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if !ln.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, &gout, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<'a>, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| -> &[f64] { &nodes[v.0].value };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b, m, k, n } => {
                if let Some(ga) = acc(grads, nodes, a) {
                    // dA = dC · B'^T
                    gemm(m, n, k, gout, false, val(b), !trans_b, ga, 1.0);
                }
                if let Some(gb) = acc(grads, nodes, b) {
                    if trans_b {
                        // dB = dC^T · A
                        gemm(n, m, k, gout, true, val(a), false, gb, 1.0);
                    } else {
                        // dB = A^T · dC
                        gemm(k, m, n, val(a), true, gout, false, gb, 1.0);
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = acc(grads, nodes, a) {
                    ga.iter_mut().zip(gout).for_each(|(g, d)| *g += d);
                }
                if let Some(gb) = acc(grads, nodes, b) {
                    gb.iter_mut().zip(gout).for_each(|(g, d)| *g += d);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = acc(grads, nodes, a) {
                    ga.iter_mut().zip(gout).for_each(|(g, d)| *g += d);
                }
                if let Some(gb) = acc(grads, nodes, b) {
                    gb.iter_mut().zip(gout).for_each(|(g, d)| *g -= d);
                }
            }
            &Op::Mul(a, b) => {
                if let Some(ga) = acc(grads, nodes, a) {
                    for ((g, d), y) in ga.iter_mut().zip(gout).zip(val(b)) {
                        *g += d * y;
                    }
                }
                if let Some(gb) = acc(grads, nodes, b) {
                    for ((g, d), x) in gb.iter_mut().zip(gout).zip(val(a)) {
                        *g += d * x;
                    }
                }
            }
            &Op::AddBias { x, bias } => {
                if let Some(gx) = acc(grads, nodes, x) {
                    gx.iter_mut().zip(gout).for_each(|(g, d)| *g += d);
                }
                if let Some(gb) = acc(grads, nodes, bias) {
                    let n = gb.len();
                    for row in gout.chunks_exact(n) {
                        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                }
            }
            &Op::Scale(x, c) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    gx.iter_mut().zip(gout).for_each(|(g, d)| *g += d * c);
                }
            }
            Op::MulConst { x, factor } => {
                if let Some(gx) = acc(grads, nodes, *x) {
                    for ((g, d), f) in gx.iter_mut().zip(gout).zip(factor) {
                        *g += d * f;
                    }
                }
            }
            &Op::AddConst(x) | &Op::Reshape(x) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    gx.iter_mut().zip(gout).for_each(|(g, d)| *g += d);
                }
            }
            &Op::Sigmoid(x) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    for ((g, d), y) in gx.iter_mut().zip(gout).zip(node.value.iter()) {
                        *g += d * y * (1.0 - y);
                    }
                }
            }
            &Op::Tanh(x) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    for ((g, d), y) in gx.iter_mut().zip(gout).zip(node.value.iter()) {
                        *g += d * (1.0 - y * y);
                    }
                }
            }
            &Op::Relu(x) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    for ((g, d), xi) in gx.iter_mut().zip(gout).zip(val(x)) {
                        if *xi > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Concat { parts, widths, outer } => {
                let total: usize = widths.iter().sum();
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if let Some(gp) = acc(grads, nodes, p) {
                        for o in 0..*outer {
                            let src = &gout[o * total + off..o * total + off + w];
                            gp[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(g, d)| *g += d);
                        }
                    }
                    off += w;
                }
            }
            &Op::Narrow {
                x,
                outer,
                src_width,
                offset,
                width,
            } => {
                if let Some(gx) = acc(grads, nodes, x) {
                    for o in 0..outer {
                        let dst = &mut gx[o * src_width + offset..o * src_width + offset + width];
                        dst.iter_mut().zip(&gout[o * width..(o + 1) * width]).for_each(|(g, d)| *g += d);
                    }
                }
            }
            &Op::Transpose01 { x, rows, cols, inner } => {
                if let Some(gx) = acc(grads, nodes, x) {
                    for r in 0..rows {
                        for c in 0..cols {
                            let src = (c * rows + r) * inner;
                            let dst = (r * cols + c) * inner;
                            gx[dst..dst + inner]
                                .iter_mut()
                                .zip(&gout[src..src + inner])
                                .for_each(|(g, d)| *g += d);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(gt) = acc(grads, nodes, *table) {
                    let d = gout.len() / ids.len();
                    for (r, &i) in ids.iter().enumerate() {
                        gt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&gout[r * d..(r + 1) * d])
                            .for_each(|(g, x)| *g += x);
                    }
                }
            }
            Op::MaxOverTime { steps, argmax } => {
                for (t, &st) in steps.iter().enumerate() {
                    if let Some(gs) = acc(grads, nodes, st) {
                        for (j, &am) in argmax.iter().enumerate() {
                            if am == t {
                                gs[j] += gout[j];
                            }
                        }
                    }
                }
            }
            Op::MeanOverTime { steps, lengths } => {
                let h = gout.len() / lengths.len();
                for (t, &st) in steps.iter().enumerate() {
                    if let Some(gs) = acc(grads, nodes, st) {
                        for (row, &len) in lengths.iter().enumerate() {
                            if t < len {
                                for j in row * h..(row + 1) * h {
                                    gs[j] += gout[j] / len as f64;
                                }
                            }
                        }
                    }
                }
            }
            Op::LastOverTime { steps, lengths } => {
                let h = gout.len() / lengths.len();
                for (row, &len) in lengths.iter().enumerate() {
                    if let Some(gs) = acc(grads, nodes, steps[len - 1]) {
                        for j in row * h..(row + 1) * h {
                            gs[j] += gout[j];
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    let c = *node.shape.last().unwrap_or(&1);
                    for ((gr, dr), yr) in gx.chunks_exact_mut(c).zip(gout.chunks_exact(c)).zip(node.value.chunks_exact(c)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += y * (d - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    let c = *node.shape.last().unwrap_or(&1);
                    for ((gr, dr), lr) in gx.chunks_exact_mut(c).zip(gout.chunks_exact(c)).zip(node.value.chunks_exact(c)) {
                        let total: f64 = dr.iter().sum();
                        for ((g, d), l) in gr.iter_mut().zip(dr).zip(lr) {
                            *g += d - l.exp() * total;
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let f = inv_std.len();
                let n = gout.len() / f;
                let gam = val(*gamma);
                if let Some(gg) = acc(grads, nodes, *gamma) {
                    for (i, (d, xh)) in gout.iter().zip(xhat).enumerate() {
                        gg[i % f] += d * xh;
                    }
                }
                if let Some(gb) = acc(grads, nodes, *beta) {
                    for (i, d) in gout.iter().enumerate() {
                        gb[i % f] += d;
                    }
                }
                if let Some(gx) = acc(grads, nodes, *x) {
                    if *train {
                        let mut sum_d = vec![0.0; f];
                        let mut sum_dx = vec![0.0; f];
                        for (i, (d, xh)) in gout.iter().zip(xhat).enumerate() {
                            let dxh = d * gam[i % f];
                            sum_d[i % f] += dxh;
                            sum_dx[i % f] += dxh * xh;
                        }
                        let nf = n as f64;
                        for (i, (d, xh)) in gout.iter().zip(xhat).enumerate() {
                            let j = i % f;
                            let dxh = d * gam[j];
                            gx[i] += inv_std[j] / nf * (nf * dxh - sum_d[j] - xh * sum_dx[j]);
                        }
                    } else {
                        for (i, d) in gout.iter().enumerate() {
                            gx[i] += d * gam[i % f] * inv_std[i % f];
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if let Some(gl) = acc(grads, nodes, *logits) {
                    let rows = targets.len();
                    let v = probs.len() / rows;
                    let s = gout[0] / rows as f64;
                    for (i, (g, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if targets[i / v] == i % v { 1.0 } else { 0.0 };
                        *g += s * (p - onehot);
                    }
                }
            }
            Op::BceWithLogits { logits, labels } => {
                if let Some(gl) = acc(grads, nodes, *logits) {
                    let s = gout[0] / labels.len() as f64;
                    for ((g, z), y) in gl.iter_mut().zip(val(*logits)).zip(labels) {
                        *g += s * (sigmoid(*z) - y);
                    }
                }
            }
            Op::Pick { x, idx } => {
                if let Some(gx) = acc(grads, nodes, *x) {
                    let c = gx.len() / idx.len();
                    for (r, &i) in idx.iter().enumerate() {
                        gx[r * c + i] += gout[r];
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    gx.iter_mut().for_each(|g| *g += gout[0]);
                }
            }
            &Op::Mean(x) => {
                if let Some(gx) = acc(grads, nodes, x) {
                    let s = gout[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|g| *g += s);
                }
            }
        }
    }
}
