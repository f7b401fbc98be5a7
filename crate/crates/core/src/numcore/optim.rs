use super::tape::{Gradients, ParamSet};
use super::tensor::Tensor;

/// Stochastic gradient descent with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    velocity: ParamSet,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            momentum,
            clip_norm,
            velocity: ParamSet::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        let norm = grads
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let factor = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + factor * gv;
                *pv -= self.lr * *vv;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: ParamSet,
    v: ParamSet,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, mv), vv), gv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_accumulates() {
        let mut params = ParamSet::new();
        params.insert("w".into(), Tensor::scalar(1.0));
        let mut grads = Gradients::new();
        grads.insert("w".into(), Tensor::scalar(1.0));
        let mut opt = Sgd::new(0.1, 0.9, None);
        opt.step(&mut params, &grads);
        assert!((params["w"].data()[0] - 0.9).abs() < 1e-12);
        opt.step(&mut params, &grads);
        // velocity 1.9
        assert!((params["w"].data()[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut params = ParamSet::new();
        params.insert("w".into(), Tensor::scalar(0.0));
        let mut grads = Gradients::new();
        grads.insert("w".into(), Tensor::scalar(100.0));
        let mut opt = Sgd::new(1.0, 0.0, Some(2.0));
        opt.step(&mut params, &grads);
        assert!((params["w"].data()[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut params = ParamSet::new();
        params.insert("w".into(), Tensor::scalar(0.0));
        let mut grads = Gradients::new();
        grads.insert("w".into(), Tensor::scalar(-50.0));
        let mut opt = Adam::new(0.01);
        opt.step(&mut params, &grads);
        assert!((params["w"].data()[0] - 0.01).abs() < 1e-9);
    }
}
