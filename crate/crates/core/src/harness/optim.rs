use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Linear warm-up to `base` at `warmup`, then inverse square root decay.
pub fn lr_schedule(step: u64, base: f64, warmup: u64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup.max(1) as f64;
    base * (step / warmup).min((warmup / step).sqrt())
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = |_| params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            m: zeros(()),
            v: zeros(()),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `grads[i]` is the gradient of parameter `i` (or `None`
    /// when it received none this step).
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Tensor<f32>>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step = (lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let decay = (lr * self.weight_decay) as f32;
        let eps = self.eps as f32;
        for (i, p) in params.tensors_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].as_ref().map(Tensor::data);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                *w -= decay * *w + step * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
    }
}
