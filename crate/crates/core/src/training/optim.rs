//! AdamW with linear warmup / linear decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use super::TrainHyper;
use crate::encoder::{ParamKind, ParamStore};

/// Learning rate at 0-based `step`: linear warmup to the peak over
/// `warmup_steps`, then linear decay to zero at `total_steps`.
pub fn learning_rate(h: &TrainHyper, step: usize) -> f64 {
    if step < h.warmup_steps {
        h.learning_rate * (step + 1) as f64 / h.warmup_steps as f64
    } else if h.total_steps == h.warmup_steps {
        h.learning_rate
    } else {
        let left = h.total_steps.saturating_sub(step) as f64;
        h.learning_rate * left / (h.total_steps - h.warmup_steps) as f64
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut ParamStore<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| &t.data)
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale((max_norm / norm) as f32);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
        }
    }
}

/// Decoupled-weight-decay Adam. Moments mirror the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamConfig,
    pub m: ParamStore<f32>,
    pub v: ParamStore<f32>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore<f32>) -> Self {
        AdamW {
            config: AdamConfig::default(),
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One update. Tensors for which `trainable` is false are left alone
    /// (their moments too). Weight decay skips biases and layer-norm gains.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &ParamStore<f32>,
        lr: f64,
        weight_decay: f64,
        trainable: impl Fn(usize) -> bool,
    ) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if !trainable(i) {
                continue;
            }
            let decay = if ParamKind::of(params.name(i)) == ParamKind::Weight {
                weight_decay
            } else {
                0.0
            };
            let g = grads.tensor(i).data.as_slice();
            let m = &mut self.m.tensor_mut(i).data;
            let v = &mut self.v.tensor_mut(i).data;
            let p = &mut params.tensor_mut(i).data;
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let mj = beta1 * m[j] as f64 + (1.0 - beta1) * gj;
                let vj = beta2 * v[j] as f64 + (1.0 - beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = (mj / c1) / ((vj / c2).sqrt() + eps) + decay * p[j] as f64;
                p[j] = (p[j] as f64 - lr * update) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Tensor;

    fn hyper(lr: f64, warm: usize, total: usize) -> TrainHyper {
        TrainHyper {
            learning_rate: lr,
            warmup_steps: warm,
            total_steps: total,
            ..TrainHyper::default()
        }
    }

    #[test]
    fn schedule_shape() {
        let h = hyper(1.0, 4, 12);
        let lrs: Vec<f64> = (0..12).map(|s| learning_rate(&h, s)).collect();
        assert_eq!(&lrs[..5], &[0.25, 0.5, 0.75, 1.0, 1.0]);
        assert!((lrs[8] - 0.5).abs() < 1e-12);
        assert!(lrs.windows(2).skip(4).all(|w| w[1] <= w[0]));
        assert_eq!(learning_rate(&h, 12), 0.0);
        assert_eq!(learning_rate(&hyper(1.0, 0, 10), 0), 1.0);
    }

    #[test]
    fn clipping() {
        let mut g = ParamStore::default();
        g.push("a.weight", Tensor { shape: vec![2], data: vec![3.0f32, 4.0] });
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.tensor(0).data[0] - 0.6).abs() < 1e-6);
        let before = g.clone();
        assert!((clip_global_norm(&mut g, 10.0) - 1.0).abs() < 1e-6);
        assert_eq!(g, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Bias-corrected Adam: the first update is lr·sign(g) (up to eps).
        let mut p = ParamStore::default();
        p.push("x.weight", Tensor { shape: vec![2], data: vec![1.0f32, -1.0] });
        p.push("x.bias", Tensor { shape: vec![1], data: vec![0.5f32] });
        let mut g = p.zeros_like();
        g.tensor_mut(0).data = vec![0.3, -2.0];
        g.tensor_mut(1).data = vec![1.0];
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &g, 0.1, 0.0, |_| true);
        assert!((p.tensor(0).data[0] - 0.9).abs() < 1e-5);
        assert!((p.tensor(0).data[1] + 0.9).abs() < 1e-5);
        assert!((p.tensor(1).data[0] - 0.4).abs() < 1e-5);
    }

    #[test]
    fn decay_skips_biases_and_frozen() {
        let mut p = ParamStore::default();
        p.push("x.weight", Tensor { shape: vec![1], data: vec![1.0f32] });
        p.push("x.bias", Tensor { shape: vec![1], data: vec![1.0f32] });
        p.push("y.weight", Tensor { shape: vec![1], data: vec![1.0f32] });
        let g = p.zeros_like();
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &g, 0.1, 0.5, |i| i < 2);
        assert!((p.tensor(0).data[0] - 0.95).abs() < 1e-6);
        assert_eq!(p.tensor(1).data[0], 1.0);
        assert_eq!(p.tensor(2).data[0], 1.0);
    }
}
