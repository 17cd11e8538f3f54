use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; every parameter must have a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::invalid(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), store.len()),
            ));
        }
        for id in store.ids() {
            let g = grads[id.index()]
                .as_ref()
                .ok_or_else(|| Error::MissingGradient(store.name(id).to_string()))?;
            if g.shape() != store.get(id).shape() {
                return Err(Error::shape("adam", store.get(id).shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.values_mut().enumerate() {
            let g = grads[i].as_ref().unwrap().data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Option<Tensor>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::vector(&[1.0, -2.0]));
        s.add("b", Tensor::vector(&[0.5]));
        s
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut s = store();
        let mut adam = Adam::new(&s, 0.01);
        let grads = vec![Some(Tensor::vector(&[3.0, -0.2])), Some(Tensor::vector(&[1e-3]))];
        adam.step(&mut s, &grads).unwrap();
        let a = s.by_name("a").unwrap().data();
        assert!((a[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((a[1] - (-2.0 + 0.01)).abs() < 1e-9);
        assert!((s.by_name("b").unwrap().data()[0] - (0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store();
        let before = s.clone();
        let mut adam = Adam::new(&s, 0.1);
        let grads = vec![Some(Tensor::zeros(&[2])), Some(Tensor::zeros(&[1]))];
        for _ in 0..3 {
            adam.step(&mut s, &grads).unwrap();
        }
        assert_eq!(s, before);
        assert_eq!(adam.steps(), 3);
    }

    #[test]
    fn missing_gradient_is_named() {
        let mut s = store();
        let mut adam = Adam::new(&s, 0.1);
        let grads = vec![Some(Tensor::zeros(&[2])), None];
        match adam.step(&mut s, &grads) {
            Err(Error::MissingGradient(name)) => assert_eq!(name, "b"),
            other => panic!("{other:?}"),
        }
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Some(Tensor::vector(&[3.0, 4.0])), None];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].as_ref().unwrap().data(), &[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
    }
}
