//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use hyvae_core::gaussian::{self, DiagonalGaussian};
use hyvae_core::model::{HyVaeConfig, HyVaeModel};
use hyvae_core::nn::{ParamStore, Pass};
use hyvae_core::tensor::{BinaryOp, Graph, Noise, ReduceOp, Rng, Tensor, UnaryOp, Var};

pub const FD_STEP: f64 = 1e-5;

/// `|a − fd| / max(1, |a|)`.
pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(1.0)
}

/// Central difference of `f` with respect to coordinate `i` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &mut [f64], i: usize) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

// ---------------------------------------------------------------------------
// random op compositions

#[derive(Clone, Debug)]
enum Instr {
    Leaf,
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    /// Right operand broadcast as a `[1 × c]` row leaf.
    RowBroadcast(BinaryOp, usize, usize),
    Matmul(usize, usize),
    Linear(usize, usize, usize),
    Concat(usize, usize, usize),
    Reduce(ReduceOp, usize, Option<usize>),
    Affine(usize, f64, f64),
}

/// A random computation over a handful of leaves, replayable on any leaf
/// values. `out` weights the final node into a scalar.
pub struct Composition {
    leaf_shapes: Vec<Vec<usize>>,
    program: Vec<Instr>,
    weights: Vec<f64>,
    pub leaf_values: Vec<f64>,
}

struct Builder<'a> {
    rng: &'a mut Rng,
    leaf_shapes: Vec<Vec<usize>>,
    // node shapes; leaves come first
    shapes: Vec<Vec<usize>>,
    depth: Vec<usize>,
    program: Vec<Instr>,
}

impl Builder<'_> {
    fn dim(&mut self) -> usize {
        1 + (self.rng.next_u64() % 8) as usize
    }

    fn pick(&mut self, n: usize) -> usize {
        (self.rng.next_u64() % n as u64) as usize
    }

    fn leaf(&mut self, shape: Vec<usize>) -> usize {
        self.leaf_shapes.push(shape.clone());
        self.push(Instr::Leaf, shape, 0)
    }

    fn push(&mut self, ins: Instr, shape: Vec<usize>, depth: usize) -> usize {
        self.program.push(ins);
        self.shapes.push(shape);
        self.depth.push(depth);
        self.shapes.len() - 1
    }

    fn positive(&mut self, a: usize) -> usize {
        let d = self.depth[a] + 1;
        let s = self.shapes[a].clone();
        let sp = self.push(Instr::Unary(UnaryOp::Softplus, a), s.clone(), d);
        self.push(Instr::Affine(sp, 1.0, 0.5), s, d)
    }

    fn step(&mut self, a: usize) -> usize {
        let sa = self.shapes[a].clone();
        let d = self.depth[a] + 1;
        match self.pick(10) {
            0 => {
                let op = [UnaryOp::Tanh, UnaryOp::Sigmoid, UnaryOp::Softplus, UnaryOp::Square, UnaryOp::Neg][self.pick(5)];
                self.push(Instr::Unary(op, a), sa, d)
            }
            1 => {
                let t = self.push(Instr::Unary(UnaryOp::Tanh, a), sa.clone(), d);
                self.push(Instr::Unary(UnaryOp::Exp, t), sa, d)
            }
            2 => {
                let p = self.positive(a);
                self.push(Instr::Unary(UnaryOp::Log, p), sa, d)
            }
            3 | 4 => {
                let b = self.leaf(sa.clone());
                let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div][self.pick(4)];
                let b = if op == BinaryOp::Div { self.positive(b) } else { b };
                self.push(Instr::Binary(op, a, b), sa, d)
            }
            5 => {
                let row = vec![1, sa[1]];
                let b = self.leaf(row);
                let op = [BinaryOp::Add, BinaryOp::Mul][self.pick(2)];
                self.push(Instr::RowBroadcast(op, a, b), sa, d)
            }
            6 => {
                let c = self.dim();
                let b = self.leaf(vec![sa[1], c]);
                self.push(Instr::Matmul(a, b), vec![sa[0], c], d)
            }
            7 => {
                let o = self.dim();
                let w = self.leaf(vec![o, sa[1]]);
                let b = self.leaf(vec![o]);
                self.push(Instr::Linear(a, w, b), vec![sa[0], o], d)
            }
            8 => {
                let axis = self.pick(2);
                let mut other = sa.clone();
                other[axis] = self.dim();
                let b = self.leaf(other.clone());
                let mut out = sa.clone();
                out[axis] += other[axis];
                self.push(Instr::Concat(a, b, axis), out, d)
            }
            _ => {
                let op = [ReduceOp::Sum, ReduceOp::Mean][self.pick(2)];
                let axis = self.pick(2);
                let mut out = sa.clone();
                out[axis] = 1;
                self.push(Instr::Reduce(op, a, Some(axis)), out, d)
            }
        }
    }
}

impl Composition {
    pub fn random(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut b = Builder {
            rng: &mut rng,
            leaf_shapes: vec![],
            shapes: vec![],
            depth: vec![],
            program: vec![],
        };
        let shape = vec![b.dim(), b.dim()];
        let mut cur = b.leaf(shape);
        let steps = 1 + b.pick(6);
        for _ in 0..steps {
            cur = b.step(cur);
            if b.depth[cur] >= 6 {
                break;
            }
        }
        let (shapes, program, leaf_shapes) = (b.shapes, b.program, b.leaf_shapes);
        let out_len: usize = shapes[cur].iter().product();
        let n_leaf: usize = leaf_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let weights = (0..out_len).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let leaf_values = (0..n_leaf).map(|_| rng.uniform(-1.5, 1.5)).collect();
        Composition {
            leaf_shapes,
            program,
            weights,
            leaf_values,
        }
    }

    fn build(&self, values: &[f64]) -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let mut leaves = Vec::new();
        let mut nodes: Vec<Var> = Vec::new();
        let mut offset = 0;
        let mut leaf_iter = self.leaf_shapes.iter();
        for ins in &self.program {
            let v = match *ins {
                Instr::Leaf => {
                    let shape = leaf_iter.next().unwrap();
                    let len: usize = shape.iter().product();
                    let t = Tensor::new(shape, values[offset..offset + len].to_vec()).unwrap();
                    offset += len;
                    let v = g.leaf(t);
                    leaves.push(v);
                    v
                }
                Instr::Affine(a, s, t) => g.affine(nodes[a], s, t),
                Instr::Unary(op, a) => g.unary(op, nodes[a]).unwrap(),
                Instr::Binary(op, a, b) | Instr::RowBroadcast(op, a, b) => g.binary(op, nodes[a], nodes[b]).unwrap(),
                Instr::Matmul(a, b) => g.matmul(nodes[a], nodes[b]).unwrap(),
                Instr::Linear(x, w, b) => g.linear(nodes[x], nodes[w], Some(nodes[b])).unwrap(),
                Instr::Concat(a, b, axis) => g.concat(&[nodes[a], nodes[b]], axis).unwrap(),
                Instr::Reduce(op, a, axis) => g.reduce(op, nodes[a], axis).unwrap(),
            };
            nodes.push(v);
        }
        let out = *nodes.last().unwrap();
        let shape = g.shape(out).to_vec();
        let w = g.constant(Tensor::new(&shape, self.weights.clone()).unwrap());
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod, None).unwrap();
        (g, leaves, loss)
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        let (g, _, loss) = self.build(values);
        g.value(loss).item().unwrap()
    }

    pub fn analytic(&self) -> Vec<f64> {
        let (mut g, leaves, loss) = self.build(&self.leaf_values);
        g.backward(loss).unwrap();
        leaves
            .iter()
            .flat_map(|&v| g.grad(v).map(Tensor::into_data).unwrap_or_else(|| vec![0.0; g.value(v).numel()]))
            .collect()
    }

    pub fn ops(&self) -> usize {
        self.program.len() - self.leaf_shapes.len()
    }

    /// Worst relative error between the tape gradient and central differences.
    pub fn max_rel_err(&self) -> f64 {
        let analytic = self.analytic();
        let mut x = self.leaf_values.clone();
        let mut f = |v: &[f64]| self.eval(v);
        (0..x.len())
            .map(|i| rel_err(analytic[i], central_diff(&mut f, &mut x, i)))
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// model gradient check

pub fn tiny_config() -> HyVaeConfig {
    HyVaeConfig {
        m: 8,
        l: 4,
        ladder: 2,
        d_z: 3,
        d_h: 3,
        n: 1,
        warmup_epochs: 1,
        seed: 3,
    }
}

pub fn tiny_batch(rows: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let w: Vec<f64> = (0..rows * 8).map(|_| rng.uniform(0.0, 1.0)).collect();
    let y: Vec<f64> = (0..rows).map(|_| rng.uniform(0.0, 1.0)).collect();
    (Tensor::new(&[rows, 8], w).unwrap(), Tensor::new(&[rows, 1], y).unwrap())
}

fn store_with(base: &ParamStore, flat: &[f64]) -> ParamStore {
    let mut s = base.clone();
    let mut off = 0;
    for t in s.values_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    s
}

pub struct GradCheck {
    pub params: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compares the tape gradient of the total loss with central differences
/// for every scalar parameter. The noise stream is replayed identically
/// for each evaluation.
pub fn model_gradcheck(model: &HyVaeModel, windows: &Tensor, targets: &Tensor, beta: f64, noise_seed: u64) -> GradCheck {
    let base = model.params().clone();
    let mut flat: Vec<f64> = base.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let names: Vec<String> = base
        .iter()
        .flat_map(|(n, t)| (0..t.numel()).map(move |i| format!("{n}[{i}]")))
        .collect();

    let mut pass = Pass::new(model.params());
    let loss = model
        .loss(&mut pass, windows, targets, &mut Rng::new(noise_seed), beta)
        .unwrap();
    pass.graph.backward(loss.total).unwrap();
    let analytic: Vec<f64> = pass
        .param_grads()
        .into_iter()
        .zip(base.iter())
        .flat_map(|(g, (name, _))| g.unwrap_or_else(|| panic!("no gradient for {name}")).into_data())
        .collect();

    let mut probe = model.clone();
    let mut f = |x: &[f64]| {
        *probe.params_mut() = store_with(&base, x);
        let mut p = Pass::frozen(probe.params());
        let l = probe
            .loss(&mut p, windows, targets, &mut Rng::new(noise_seed), beta)
            .unwrap();
        p.graph.value(l.total).item().unwrap()
    };
    let mut worst = (0.0, 0);
    for i in 0..flat.len() {
        let e = rel_err(analytic[i], central_diff(&mut f, &mut flat, i));
        if e > worst.0 {
            worst = (e, i);
        }
    }
    GradCheck {
        params: flat.len(),
        max_rel_err: worst.0,
        worst: names[worst.1].clone(),
    }
}

// ---------------------------------------------------------------------------
// vanilla VAE reduction

fn dense(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    (0..rows)
        .map(|r| b.data()[r] + (0..cols).map(|c| w.data()[r * cols + c] * x[c]).sum::<f64>())
        .collect()
}

fn mlp(store: &ParamStore, prefix: &str, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = |s: &str| store.by_name(&format!("{prefix}.{s}")).unwrap();
    let h: Vec<f64> = dense(p("W1"), p("b1"), x).iter().map(|v| v.tanh()).collect();
    let mu = dense(p("W_mu"), p("b_mu"), &h);
    let sd = dense(p("W_sig"), p("b_sig"), &h)
        .iter()
        .map(|&v| v.exp().ln_1p() + gaussian::STD_MIN)
        .collect();
    (mu, sd)
}

/// Pins `prior_top` to N(0, I): zero weights and the bias whose softplus
/// plus the std floor is one.
pub fn pin_standard_prior(model: &mut HyVaeModel) {
    let b = (1.0f64 - gaussian::STD_MIN).exp_m1().ln();
    for (name, t) in [("W1", 0.0), ("b1", 0.0), ("W_mu", 0.0), ("b_mu", 0.0), ("W_sig", 0.0), ("b_sig", b)] {
        let p = model.params_mut().by_name_mut(&format!("prior_top.{name}")).unwrap();
        p.data_mut().fill(t);
    }
}

/// `E_q[log p(x|z)] − KL(q(z|x) ‖ N(0, I))` for one window with T = 1 and
/// L = 1, written directly from the textbook formulas with the same ε.
pub fn direct_vae_elbo(model: &HyVaeModel, x: &[f64], eps: &[f64]) -> f64 {
    let cfg = model.config();
    let store = model.params();
    let mut enc_in = vec![0.0; cfg.d_h];
    enc_in.extend_from_slice(x);
    enc_in.extend(std::iter::repeat(0.0).take(cfg.d_z));
    let (mq, sq) = mlp(store, "enc_top", &enc_in);
    let z: Vec<f64> = mq.iter().zip(&sq).zip(eps).map(|((m, s), e)| m + s * e).collect();
    let mut dec_in = z;
    dec_in.extend(std::iter::repeat(0.0).take(cfg.d_h));
    let (mx, sx) = mlp(store, "decoder", &dec_in);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let log_lik: f64 = x
        .iter()
        .zip(mx.iter().zip(&sx))
        .map(|(xi, (m, s))| -0.5 * (ln2pi + (s * s).ln() + (xi - m).powi(2) / (s * s)))
        .sum();
    let kl: f64 = mq
        .iter()
        .zip(&sq)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum();
    log_lik - kl
}

/// Worst absolute gap between the model's ℓ_enc and the direct ELBO over
/// `cases` random windows.
pub fn vae_reduction_gap(cases: usize, seed: u64) -> f64 {
    let cfg = HyVaeConfig { m: 6, l: 6, ladder: 1, d_z: 3, d_h: 4, n: 1, warmup_epochs: 1, seed };
    let mut model = HyVaeModel::new(cfg.clone()).unwrap();
    pin_standard_prior(&mut model);
    let mut rng = Rng::new(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let x: Vec<f64> = (0..cfg.m).map(|_| rng.uniform(-0.5, 1.5)).collect();
        let noise_seed = 1000 + c as u64;
        let mut eps = vec![0.0; cfg.d_z];
        Rng::new(noise_seed).fill_standard_normal(&mut eps);
        let mut pass = Pass::frozen(model.params());
        let ep = model
            .elbo(&mut pass, &Tensor::row(&x), &mut Rng::new(noise_seed), 1.0)
            .unwrap();
        let ours = pass.graph.value(ep.elbo).item().unwrap();
        worst = worst.max((ours - direct_vae_elbo(&model, &x, &eps)).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// KL Monte Carlo oracle

/// Monte Carlo estimate of `E_q[ln q − ln p]` and its standard error.
pub fn kl_monte_carlo(q: (&[f64], &[f64]), p: (&[f64], &[f64]), draws: usize, rng: &mut Rng) -> (f64, f64) {
    let ln_n = |x: f64, m: f64, s: f64| -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln() - (x - m).powi(2) / (2.0 * s * s);
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..draws {
        let mut d = 0.0;
        for i in 0..q.0.len() {
            let x = q.0[i] + q.1[i] * rng.standard_normal();
            d += ln_n(x, q.0[i], q.1[i]) - ln_n(x, p.0[i], p.1[i]);
        }
        sum += d;
        sum2 += d * d;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn closed_form_kl(q: (&[f64], &[f64]), p: (&[f64], &[f64])) -> f64 {
    let mut g = Graph::new();
    let qd = DiagonalGaussian::constant(&mut g, Tensor::vector(q.0), Tensor::vector(q.1)).unwrap();
    let pd = DiagonalGaussian::constant(&mut g, Tensor::vector(p.0), Tensor::vector(p.1)).unwrap();
    let k = gaussian::kl(&mut g, &qd, &pd).unwrap();
    g.value(k).item().unwrap()
}

pub fn random_gaussian(rng: &mut Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let s = (0..d).map(|_| rng.uniform(0.5, 1.5)).collect();
    (m, s)
}
