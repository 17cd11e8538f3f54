use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Affine { a: Var, scale: f64 },
    Concat { parts: Vec<Var>, axis: usize },
    Reduce { op: ReduceOp, a: Var, axis: Option<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// True when some leaf is reachable through this node.
    tracked: bool,
    /// Accumulated gradient; only kept for leaves.
    grad: Option<Vec<f64>>,
}

/// Append-only tape of tensor operations.
///
/// Node ids increase in creation order, so reverse id order is a valid
/// reverse topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Graph {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, shaped like the leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---------------------------------------------------------------------
    // forward operations

    /// Matrix product of `[r × k]` and `[k × c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (r, k, c) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; r * c];
        gemm(
            r,
            k,
            c,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (c, 1),
            &mut out,
            0.0,
        );
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::MatMul(a, b),
            tracked,
        ))
    }

    /// Affine layer `x · wᵀ + b` for `x: [r × k]`, `w: [o × k]`, `b: [o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape("linear", sx, sw));
        }
        let (r, k, o) = (sx[0], sx[1], sw[0]);
        let mut out = vec![0.0; r * o];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.numel() != o {
                return Err(Error::shape("linear bias", &[o], bias.shape()));
            }
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm(
            r,
            k,
            o,
            self.value(x).data(),
            (k, 1),
            self.value(w).data(),
            (1, k),
            &mut out,
            if b.is_some() { 1.0 } else { 0.0 },
        );
        let tracked =
            self.tracked(x) || self.tracked(w) || b.map(|b| self.tracked(b)).unwrap_or(false);
        Ok(self.push(
            Tensor::from_parts(vec![r, o], out),
            Op::Linear { x, w, b },
            tracked,
        ))
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let input = self.value(a);
        if op == UnaryOp::Log {
            if let Some(bad) = input.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain {
                    op: "log",
                    msg: format!("input must be strictly positive, found {bad}"),
                });
            }
        }
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Neg => |v| -v,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Softplus => softplus,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Log => f64::ln,
            UnaryOp::Square => |v| v * v,
        };
        let data = input.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_parts(input.shape().to_vec(), data);
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Unary(op, a), tracked))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let plan = Broadcast::plan(va.shape(), vb.shape())
            .ok_or_else(|| Error::shape(binary_name(op), va.shape(), vb.shape()))?;
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            BinaryOp::Div => |x, y| x / y,
        };
        let (da, db) = (va.data(), vb.data());
        let mut out = vec![0.0; plan.numel()];
        if plan.is_trivial() {
            for ((o, &x), &y) in out.iter_mut().zip(da).zip(db) {
                *o = f(x, y);
            }
        } else {
            plan.for_each(|oi, ai, bi| out[oi] = f(da[ai], db[bi]));
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::from_parts(plan.out.clone(), out),
            Op::Binary(op, a, b),
            tracked,
        ))
    }

    /// `a · scale + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let input = self.value(a);
        let data = input.data().iter().map(|&v| v * scale + shift).collect();
        let value = Tensor::from_parts(input.shape().to_vec(), data);
        let tracked = self.tracked(a);
        self.push(value, Op::Affine { a, scale }, tracked)
    }

    /// Joins `parts` along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "empty list of parts"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for rank {}", base.len()),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    /// Sum or mean over one axis (kept with length 1) or over everything
    /// (result has shape `[1]`).
    pub fn reduce(&mut self, op: ReduceOp, a: Var, axis: Option<usize>) -> Result<Var> {
        let input = self.value(a);
        let shape = input.shape();
        let (out_shape, data) = match axis {
            None => {
                let s: f64 = input.data().iter().sum();
                let v = match op {
                    ReduceOp::Sum => s,
                    ReduceOp::Mean => s / input.numel() as f64,
                };
                (vec![1], vec![v])
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::invalid(
                        "reduce",
                        format!("axis {ax} out of range for rank {}", shape.len()),
                    ));
                }
                let (outer, len, inner) = split_axis(shape, ax);
                let mut out = vec![0.0; outer * inner];
                let d = input.data();
                for o in 0..outer {
                    for j in 0..len {
                        let src = &d[(o * len + j) * inner..(o * len + j + 1) * inner];
                        for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    out.iter_mut().for_each(|v| *v /= len as f64);
                }
                let mut s = shape.to_vec();
                s[ax] = 1;
                (s, out)
            }
        };
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Reduce { op, a, axis },
            tracked,
        ))
    }

    // convenience wrappers

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Softplus, a).expect("softplus is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a).expect("square is total")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a).expect("neg is total")
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a, axis)
    }

    // ---------------------------------------------------------------------
    // backward

    /// Backpropagates from a one-element `loss`, adding into leaf gradients.
    ///
    /// Calling this twice without [`Graph::zero_grad`] doubles every leaf
    /// gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            } else {
                self.propagate(id, &g, &mut grads);
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (r, k, c) = (sa[0], sa[1], sb[1]);
                if self.tracked(*a) {
                    // dA = G · Bᵀ
                    let ga = slot(grads, *a, r * k);
                    gemm(r, c, k, g, (c, 1), self.value(*b).data(), (1, c), ga, 1.0);
                }
                if self.tracked(*b) {
                    // dB = Aᵀ · G
                    let gb = slot(grads, *b, k * c);
                    gemm(k, r, c, self.value(*a).data(), (1, k), g, (c, 1), gb, 1.0);
                }
            }
            Op::Linear { x, w, b } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (r, k, o) = (sx[0], sx[1], sw[0]);
                if self.tracked(*x) {
                    // dX = G · W
                    let gx = slot(grads, *x, r * k);
                    gemm(r, o, k, g, (o, 1), self.value(*w).data(), (k, 1), gx, 1.0);
                }
                if self.tracked(*w) {
                    // dW = Gᵀ · X
                    let gw = slot(grads, *w, o * k);
                    gemm(o, r, k, g, (1, o), self.value(*x).data(), (k, 1), gw, 1.0);
                }
                if let Some(b) = b.filter(|b| self.tracked(*b)) {
                    let gb = slot(grads, b, o);
                    for row in g.chunks_exact(o) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                }
            }
            Op::Unary(op, a) => {
                if !self.tracked(*a) {
                    return;
                }
                let x = self.value(*a).data();
                let y = node.value.data();
                let ga = slot(grads, *a, x.len());
                for i in 0..x.len() {
                    let d = match op {
                        UnaryOp::Neg => -1.0,
                        UnaryOp::Tanh => 1.0 - y[i] * y[i],
                        UnaryOp::Sigmoid => y[i] * (1.0 - y[i]),
                        UnaryOp::Softplus => sigmoid(x[i]),
                        UnaryOp::Exp => y[i],
                        UnaryOp::Log => 1.0 / x[i],
                        UnaryOp::Square => 2.0 * x[i],
                    };
                    ga[i] += g[i] * d;
                }
            }
            Op::Binary(op, a, b) => self.propagate_binary(*op, *a, *b, g, grads),
            Op::Affine { a, scale } => {
                if self.tracked(*a) {
                    let ga = slot(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(acc, v)| *acc += v * scale);
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, _, inner) = split_axis(shape, *axis);
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    if self.tracked(p) {
                        let gp = slot(grads, p, outer * chunk);
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + chunk];
                            gp[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(acc, v)| *acc += v);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Reduce { op, a, axis } => {
                if !self.tracked(*a) {
                    return;
                }
                let shape = self.shape(*a);
                let numel = self.value(*a).numel();
                let ga = slot(grads, *a, numel);
                match axis {
                    None => {
                        let scale = match op {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => 1.0 / numel as f64,
                        };
                        ga.iter_mut().for_each(|v| *v += g[0] * scale);
                    }
                    Some(ax) => {
                        let (outer, len, inner) = split_axis(shape, *ax);
                        let scale = match op {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => 1.0 / len as f64,
                        };
                        for o in 0..outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for j in 0..len {
                                let dst = &mut ga[(o * len + j) * inner..(o * len + j + 1) * inner];
                                dst.iter_mut()
                                    .zip(src)
                                    .for_each(|(acc, v)| *acc += v * scale);
                            }
                        }
                    }
                }
            }
        }
    }

    fn propagate_binary(
        &self,
        op: BinaryOp,
        a: Var,
        b: Var,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (va, vb) = (self.value(a), self.value(b));
        let plan = Broadcast::plan(va.shape(), vb.shape()).expect("validated in forward");
        let (xa, xb) = (va.data(), vb.data());
        // Local derivatives ∂out/∂a and ∂out/∂b at one output element.
        let da = |_ai: usize, bi: usize| match op {
            BinaryOp::Add | BinaryOp::Sub => 1.0,
            BinaryOp::Mul => xb[bi],
            BinaryOp::Div => 1.0 / xb[bi],
        };
        let db = |ai: usize, bi: usize| match op {
            BinaryOp::Add => 1.0,
            BinaryOp::Sub => -1.0,
            BinaryOp::Mul => xa[ai],
            BinaryOp::Div => -xa[ai] / (xb[bi] * xb[bi]),
        };
        if self.tracked(a) {
            let ga = slot(grads, a, xa.len());
            plan.for_each(|oi, ai, bi| ga[ai] += g[oi] * da(ai, bi));
        }
        if self.tracked(b) {
            let gb = slot(grads, b, xb.len());
            plan.for_each(|oi, ai, bi| gb[bi] += g[oi] * db(ai, bi));
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `c = a·b + beta·c` for row-major-with-strides operands; `(row, col)`
/// strides are given per operand, `c` is dense row-major `m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices cover every index reachable from the given
    // dimensions and strides (checked above), and `c` does not alias `a`/`b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Index mapping for a binary op over equal-rank shapes where each axis
/// either matches or has length 1 on one side.
struct Broadcast {
    out: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    trivial: bool,
}

impl Broadcast {
    fn plan(a: &[usize], b: &[usize]) -> Option<Broadcast> {
        if a.len() != b.len() {
            return None;
        }
        let mut out = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            match (x, y) {
                _ if x == y => out.push(x),
                (1, _) => out.push(y),
                (_, 1) => out.push(x),
                _ => return None,
            }
        }
        let strides = |s: &[usize]| {
            let mut st = vec![0; s.len()];
            let mut acc = 1;
            for i in (0..s.len()).rev() {
                st[i] = if s[i] == 1 { 0 } else { acc };
                acc *= s[i];
            }
            st
        };
        Some(Broadcast {
            trivial: a == b,
            a_strides: strides(a),
            b_strides: strides(b),
            out,
        })
    }

    fn numel(&self) -> usize {
        self.out.iter().product()
    }

    fn is_trivial(&self) -> bool {
        self.trivial
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        if self.trivial {
            for i in 0..self.numel() {
                f(i, i, i);
            }
            return;
        }
        let rank = self.out.len();
        let mut idx = vec![0usize; rank];
        let (mut ai, mut bi) = (0usize, 0usize);
        for oi in 0..self.numel() {
            f(oi, ai, bi);
            // odometer increment, last axis fastest
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                ai += self.a_strides[ax];
                bi += self.b_strides[ax];
                if idx[ax] < self.out[ax] {
                    break;
                }
                ai -= self.a_strides[ax] * idx[ax];
                bi -= self.b_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
}
