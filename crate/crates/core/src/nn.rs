//! Learnable building blocks: the Gaussian parameter MLP, the GRU cell and
//! the linear forecast head.
//!
//! Blocks do not own their weights. Every weight lives in a [`ParamStore`]
//! under a stable dotted name; a block keeps [`ParamId`]s and reads the
//! bound tape variables from a [`Pass`] during the forward computation.

use crate::error::{Error, Result};
use crate::gaussian::DiagonalGaussian;
use crate::tensor::{Graph, Rng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// `[fan_out × fan_in]` weight, uniform in ±√(6 / (fan_in + fan_out)).
    pub fn glorot(
        &mut self,
        name: impl Into<String>,
        fan_out: usize,
        fan_in: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let bound = glorot_bound(fan_in, fan_out);
        let data = (0..fan_out * fan_in)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        self.add(name, Tensor::from_parts(vec![fan_out, fan_in], data))
    }

    pub fn zeros(&mut self, name: impl Into<String>, len: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[len]))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.find(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.find(name).map(|id| self.get_mut(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut()
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// One forward computation: a fresh tape with every parameter bound.
pub struct Pass {
    pub graph: Graph,
    params: Vec<Var>,
}

impl Pass {
    /// Parameters become differentiable leaves.
    pub fn new(store: &ParamStore) -> Self {
        Self::bind(store, true)
    }

    /// Parameters become constants; nothing is tracked for backprop.
    pub fn frozen(store: &ParamStore) -> Self {
        Self::bind(store, false)
    }

    fn bind(store: &ParamStore, trainable: bool) -> Self {
        let mut graph = Graph::with_capacity(4096);
        let params = store
            .values
            .iter()
            .map(|t| {
                if trainable {
                    graph.leaf(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Pass { graph, params }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    /// Gradient of every parameter in store order (`None` if unreached).
    pub fn param_grads(&self) -> Vec<Option<Tensor>> {
        self.params.iter().map(|&v| self.graph.grad(v)).collect()
    }

    fn check_width(&self, op: &'static str, x: Var, want: usize) -> Result<()> {
        let s = self.graph.shape(x);
        if s.len() != 2 || s[1] != want {
            return Err(Error::shape(op, &[s.first().copied().unwrap_or(1), want], s));
        }
        Ok(())
    }
}

/// φ: maps its input to the mean and standard deviation of a diagonal
/// Gaussian through one tanh hidden layer.
#[derive(Clone, Debug)]
pub struct GaussianMlp {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    w1: ParamId,
    b1: ParamId,
    w_mu: ParamId,
    b_mu: ParamId,
    w_sig: ParamId,
    b_sig: ParamId,
}

impl GaussianMlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        GaussianMlp {
            in_dim,
            hidden_dim,
            out_dim,
            w1: store.glorot(format!("{prefix}.W1"), hidden_dim, in_dim, rng),
            b1: store.zeros(format!("{prefix}.b1"), hidden_dim),
            w_mu: store.glorot(format!("{prefix}.W_mu"), out_dim, hidden_dim, rng),
            b_mu: store.zeros(format!("{prefix}.b_mu"), out_dim),
            w_sig: store.glorot(format!("{prefix}.W_sig"), out_dim, hidden_dim, rng),
            b_sig: store.zeros(format!("{prefix}.b_sig"), out_dim),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.w1, self.b1, self.w_mu, self.b_mu, self.w_sig, self.b_sig]
    }

    /// `x: [B × in_dim]` → Gaussian over `[B × out_dim]`.
    pub fn forward(&self, pass: &mut Pass, x: Var) -> Result<DiagonalGaussian> {
        pass.check_width("mlp_forward", x, self.in_dim)?;
        let (w1, b1) = (pass.param(self.w1), pass.param(self.b1));
        let (w_mu, b_mu) = (pass.param(self.w_mu), pass.param(self.b_mu));
        let (w_sig, b_sig) = (pass.param(self.w_sig), pass.param(self.b_sig));
        let g = &mut pass.graph;
        let pre = g.linear(x, w1, Some(b1))?;
        let h = g.tanh(pre);
        let mean = g.linear(h, w_mu, Some(b_mu))?;
        let sig = g.linear(h, w_sig, Some(b_sig))?;
        DiagonalGaussian::from_pre_activation(g, mean, sig)
    }
}

/// Gated recurrent unit with reset gate `r`, update gate `ζ` and candidate
/// `h̃`. Weights act on `[h; x]`; biases are added to each pre-activation.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub hidden_dim: usize,
    pub in_dim: usize,
    w_r: ParamId,
    b_r: ParamId,
    w_z: ParamId,
    b_z: ParamId,
    w_h: ParamId,
    b_h: ParamId,
}

/// Fixed gate values that replace the computed ones.
#[cfg(test)]
#[derive(Clone, Copy, Debug)]
pub(crate) struct GateOverride {
    pub update: f64,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let width = hidden_dim + in_dim;
        GruCell {
            hidden_dim,
            in_dim,
            w_r: store.glorot(format!("{prefix}.W_r"), hidden_dim, width, rng),
            b_r: store.zeros(format!("{prefix}.b_r"), hidden_dim),
            w_z: store.glorot(format!("{prefix}.W_z"), hidden_dim, width, rng),
            b_z: store.zeros(format!("{prefix}.b_z"), hidden_dim),
            w_h: store.glorot(format!("{prefix}.W_h"), hidden_dim, width, rng),
            b_h: store.zeros(format!("{prefix}.b_h"), hidden_dim),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.w_r, self.b_r, self.w_z, self.b_z, self.w_h, self.b_h]
    }

    /// One recurrence `h = GRU(h_prev, x)` for `[B × d_h]`, `[B × d_in]`.
    pub fn step(&self, pass: &mut Pass, h_prev: Var, x: Var) -> Result<Var> {
        self.step_inner(pass, h_prev, x, None)
    }

    #[cfg(test)]
    pub(crate) fn step_with_override(
        &self,
        pass: &mut Pass,
        h_prev: Var,
        x: Var,
        gate: GateOverride,
    ) -> Result<Var> {
        self.step_inner(pass, h_prev, x, Some(gate.update))
    }

    fn step_inner(
        &self,
        pass: &mut Pass,
        h_prev: Var,
        x: Var,
        forced_update: Option<f64>,
    ) -> Result<Var> {
        pass.check_width("gru_step", h_prev, self.hidden_dim)?;
        pass.check_width("gru_step", x, self.in_dim)?;
        let (w_r, b_r) = (pass.param(self.w_r), pass.param(self.b_r));
        let (w_z, b_z) = (pass.param(self.w_z), pass.param(self.b_z));
        let (w_h, b_h) = (pass.param(self.w_h), pass.param(self.b_h));
        let g = &mut pass.graph;

        let hx = g.concat(&[h_prev, x], 1)?;
        let r = g.linear(hx, w_r, Some(b_r))?;
        let r = g.sigmoid(r);
        let zeta = match forced_update {
            Some(v) => g.constant(Tensor::full(g.shape(h_prev), v)),
            None => {
                let z = g.linear(hx, w_z, Some(b_z))?;
                g.sigmoid(z)
            }
        };
        let rh = g.mul(r, h_prev)?;
        let rhx = g.concat(&[rh, x], 1)?;
        let cand = g.linear(rhx, w_h, Some(b_h))?;
        let cand = g.tanh(cand);

        // h = (1 − ζ) ∘ h_prev + ζ ∘ h̃
        let keep = g.affine(zeta, -1.0, 1.0);
        let kept = g.mul(keep, h_prev)?;
        let fresh = g.mul(zeta, cand)?;
        g.add(kept, fresh)
    }
}

/// ψ: a single fully-connected layer, no activation.
#[derive(Clone, Debug)]
pub struct ForecastHead {
    pub in_dim: usize,
    pub horizon: usize,
    w_y: ParamId,
    b_y: ParamId,
}

impl ForecastHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        horizon: usize,
        rng: &mut Rng,
    ) -> Self {
        ForecastHead {
            in_dim,
            horizon,
            w_y: store.glorot(format!("{prefix}.W_y"), horizon, in_dim, rng),
            b_y: store.zeros(format!("{prefix}.b_y"), horizon),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.w_y, self.b_y]
    }

    pub fn forward(&self, pass: &mut Pass, features: Var) -> Result<Var> {
        pass.check_width("head_forward", features, self.in_dim)?;
        let (w, b) = (pass.param(self.w_y), pass.param(self.b_y));
        pass.graph.linear(features, w, Some(b))
    }
}
