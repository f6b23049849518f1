use crate::params::ParamStore;

/// RMSprop without momentum or centering:
/// `v ← αv + (1−α)g²`, `θ ← θ − lr·g/(√v + ε)`.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    square_avg: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(store: &ParamStore, lr: f64, alpha: f64, eps: f64) -> Self {
        RmsProp {
            lr,
            alpha,
            eps,
            square_avg: store.entries().iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        for ((param, grad), avg) in store.entries_mut().zip(grads).zip(&mut self.square_avg) {
            for ((p, &g), v) in param.values.iter_mut().zip(grad).zip(avg.iter_mut()) {
                *v = self.alpha * *v + (1.0 - self.alpha) * g * g;
                *p -= self.lr * g / (v.sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm of a gradient list.
pub fn grad_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales gradients in place so their global norm is at most `max_norm`;
/// returns the norm before clipping. `max_norm = 0` disables clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
    }
    norm
}
