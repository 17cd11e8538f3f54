//! Diagonal Gaussians on the gradient tape.
//!
//! Parameters are standard deviations, not variances. Every density is
//! row-wise: a `[B × d]` mean describes `B` independent `d`-dimensional
//! Gaussians, and `kl`/`log_prob` return one summed value per row
//! (`[B × 1]`; `[1]` for a 1-D input).

use crate::error::{Error, Result};
use crate::tensor::{Graph, Noise, Tensor, Var};

/// Lower bound on every standard deviation.
pub const STD_MIN: f64 = 1e-4;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiagonalGaussian {
    pub mean: Var,
    pub std: Var,
}

impl DiagonalGaussian {
    pub fn new(g: &Graph, mean: Var, std: Var) -> Result<Self> {
        if g.shape(mean) != g.shape(std) {
            return Err(Error::shape("gaussian", g.shape(mean), g.shape(std)));
        }
        if let Some(bad) = g.value(std).data().iter().find(|&&s| !(s >= STD_MIN)) {
            return Err(Error::Domain {
                op: "gaussian",
                msg: format!("standard deviation {bad} is below the floor {STD_MIN}"),
            });
        }
        Ok(DiagonalGaussian { mean, std })
    }

    /// Maps an unconstrained pre-activation to `softplus(pre) + STD_MIN`.
    pub fn from_pre_activation(g: &mut Graph, mean: Var, pre: Var) -> Result<Self> {
        let sp = g.softplus(pre);
        let std = g.affine(sp, 1.0, STD_MIN);
        DiagonalGaussian::new(g, mean, std)
    }

    /// A constant Gaussian with the given parameters.
    pub fn constant(g: &mut Graph, mean: Tensor, std: Tensor) -> Result<Self> {
        let mean = g.constant(mean);
        let std = g.constant(std);
        DiagonalGaussian::new(g, mean, std)
    }

    pub fn shape<'g>(&self, g: &'g Graph) -> &'g [usize] {
        g.shape(self.mean)
    }
}

fn sum_last(g: &mut Graph, v: Var) -> Result<Var> {
    let ax = g.shape(v).len() - 1;
    g.sum(v, Some(ax))
}

/// Closed-form `KL(q ‖ p)`, summed over the last axis.
pub fn kl(g: &mut Graph, q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<Var> {
    if q.shape(g) != p.shape(g) {
        return Err(Error::shape("kl", q.shape(g), p.shape(g)));
    }
    // ln(σp/σq) + (σq² + (μq − μp)²) / (2σp²) − ½
    let ln_p = g.log(p.std)?;
    let ln_q = g.log(q.std)?;
    let log_ratio = g.sub(ln_p, ln_q)?;
    let diff = g.sub(q.mean, p.mean)?;
    let diff2 = g.square(diff);
    let var_q = g.square(q.std);
    let num = g.add(var_q, diff2)?;
    let var_p = g.square(p.std);
    let den = g.affine(var_p, 2.0, 0.0);
    let ratio = g.div(num, den)?;
    let terms = g.add(log_ratio, ratio)?;
    let terms = g.affine(terms, 1.0, -0.5);
    sum_last(g, terms)
}

/// Log density of `x`, summed over the last axis.
pub fn log_prob(g: &mut Graph, d: &DiagonalGaussian, x: Var) -> Result<Var> {
    if d.shape(g) != g.shape(x) {
        return Err(Error::shape("log_prob", d.shape(g), g.shape(x)));
    }
    let diff = g.sub(x, d.mean)?;
    let diff2 = g.square(diff);
    let var = g.square(d.std);
    let den = g.affine(var, 2.0, 0.0);
    let quad = g.div(diff2, den)?;
    let ln_s = g.log(d.std)?;
    let terms = g.add(quad, ln_s)?;
    let terms = g.affine(terms, -1.0, -HALF_LN_2PI);
    sum_last(g, terms)
}

/// Reparameterized draw `mean + std ∘ ε`, `ε ~ N(0, I)` from `noise`.
pub fn rsample(g: &mut Graph, d: &DiagonalGaussian, noise: &mut dyn Noise) -> Result<Var> {
    let shape = d.shape(g).to_vec();
    let mut eps = Tensor::zeros(&shape);
    noise.fill_standard_normal(eps.data_mut());
    let eps = g.constant(eps);
    let scaled = g.mul(d.std, eps)?;
    g.add(d.mean, scaled)
}
