//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ParamSet, weight_decay: f64) -> Self {
        AdamW {
            m: params
                .tensors()
                .map(|t| Tensor::zeros(t.shape.clone()))
                .collect(),
            v: params
                .tensors()
                .map(|t| Tensor::zeros(t.shape.clone()))
                .collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads` is indexed like the parameter set; `None` entries
    /// (parameters untouched by the loss) are treated as zero gradient but
    /// still receive weight decay.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, param) in params.tensors_mut().enumerate() {
            let zero;
            let g = match &grads[i] {
                Some(g) => {
                    debug_assert_eq!(g.shape, param.shape);
                    &g.data
                }
                None => {
                    zero = vec![0.0; param.len()];
                    &zero
                }
            };
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            for j in 0..param.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                param.data[j] -=
                    lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * param.data[j]);
            }
        }
    }
}

/// Cosine decay from `base_lr` to zero over `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    assert!(step <= total_steps, "step {step} past total {total_steps}");
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-3), 1e-3);
        assert!(cosine_lr(100, 100, 1e-3).abs() < 1e-19);
        assert!((cosine_lr(50, 100, 1e-3) - 5e-4).abs() < 1e-19);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut rng = Rng::new(1);
        let mut params = ParamSet::new();
        params.add("w", Tensor::xavier(3, 3, &mut rng));
        let before = params.get_by_name("w").unwrap().clone();
        let mut opt = AdamW::new(&params, 0.0);
        let grads = vec![Some(Tensor::zeros(vec![3, 3]))];
        opt.step(&mut params, &grads, 0.1);
        assert_eq!(params.get_by_name("w").unwrap().data, before.data);
    }

    #[test]
    fn descends_a_quadratic() {
        // f(w) = w^2, grad = 2w, from w = 1.
        let mut params = ParamSet::new();
        params.add("w", Tensor::scalar(1.0));
        let mut opt = AdamW::new(&params, 0.0);
        let w0 = params.get_by_name("w").unwrap().item();
        let g = 2.0 * w0;
        opt.step(&mut params, &[Some(Tensor::scalar(g))], 0.1);
        assert!(params.get_by_name("w").unwrap().item() < w0);
    }

    #[test]
    fn matches_hand_iterated_recurrence() {
        // Three steps on f(w) = w^2 with weight decay, against a literal
        // transcription of the update equations.
        let lr = 0.05;
        let wd = 0.01;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);

        let mut params = ParamSet::new();
        params.add("w", Tensor::scalar(1.5));
        let mut opt = AdamW::new(&params, wd);

        let mut w = 1.5f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            w -= lr * (mhat / (vhat.sqrt() + eps) + wd * w);

            let g_impl = 2.0 * params.get_by_name("w").unwrap().item();
            opt.step(&mut params, &[Some(Tensor::scalar(g_impl))], lr);
        }
        assert!((params.get_by_name("w").unwrap().item() - w).abs() < 1e-12);
    }
}
