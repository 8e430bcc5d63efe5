//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeSet;

use rand::Rng as _;

use super::{forward_backward, Batch, ExampleGrad, Mode, ModelConfig, ParamStore};
use crate::{rng, Execution, Result};

/// Relative errors below this absolute scale are measured against it.
const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: (String, usize),
}

/// Compares the analytic gradient returned by `loss` against central
/// differences at `samples` distinct coordinates (every tensor is hit at
/// least once, the rest are uniform over all scalars).
pub fn gradient_check<L>(
    params: &ParamStore<f64>,
    samples: usize,
    epsilon: f64,
    seed: u64,
    loss: L,
) -> Result<GradCheckReport>
where
    L: Fn(&ParamStore<f64>) -> Result<(f64, ParamStore<f64>)>,
{
    let (_, grads) = loss(params)?;
    let mut picks = BTreeSet::new();
    let mut r = rng::derive(seed, &[0x9c]);
    for i in 0..params.len() {
        if !params.tensor(i).is_empty() {
            picks.insert((i, r.random_range(0..params.tensor(i).len())));
        }
    }
    let total = params.num_scalars();
    let offsets: Vec<usize> = (0..params.len())
        .scan(0, |acc, i| {
            let o = *acc;
            *acc += params.tensor(i).len();
            Some(o)
        })
        .collect();
    while picks.len() < samples.min(total) {
        let flat = r.random_range(0..total);
        let i = offsets.partition_point(|&o| o <= flat) - 1;
        picks.insert((i, flat - offsets[i]));
    }

    let mut p = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: (String::new(), 0),
    };
    for (i, j) in picks {
        let orig = p.data(i)[j];
        p.data_mut(i)[j] = orig + epsilon;
        let up = loss(&p)?.0;
        p.data_mut(i)[j] = orig - epsilon;
        let down = loss(&p)?.0;
        p.data_mut(i)[j] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = grads.data(i)[j];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.0.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = (params.name(i).to_string(), j);
        }
    }
    Ok(report)
}

/// Loss = sum of every pooled output coordinate over the batch.
pub fn pooled_sum_loss<'a>(
    cfg: &'a ModelConfig,
    batch: &'a Batch,
) -> impl Fn(&ParamStore<f64>) -> Result<(f64, ParamStore<f64>)> + 'a {
    move |p| {
        forward_backward(cfg, p, batch, Mode::Eval, Execution::Serial, |_, _, pooled, _| {
            Ok(ExampleGrad {
                loss: pooled.iter().sum(),
                d_seq: None,
                d_pooled: Some(vec![1.0; pooled.len()]),
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn batch() -> Batch {
        Batch::new(&[
            (vec![2, 10, 11, 12, 3, 20, 21, 3], vec![0, 0, 0, 0, 0, 1, 1, 1]),
            (vec![2, 30, 31, 3], vec![0, 0, 0, 0]),
        ])
    }

    #[test]
    fn pooled_sum_gradients() {
        for cfg in [
            ModelConfig::tiny(50),
            ModelConfig { share_layers: true, embed_dim: 8, ..ModelConfig::tiny(50) },
        ] {
            let p: ParamStore<f64> = init_params(&cfg, 21).unwrap();
            let b = batch();
            let rep = gradient_check(&p, 250, 1e-4, 1, pooled_sum_loss(&cfg, &b)).unwrap();
            assert!(rep.checked >= 200);
            assert!(rep.max_rel_error < 1e-3, "{rep:?}");
        }
    }

    #[test]
    fn seq_loss_gradients() {
        // Weighted sum of sequence states exercises every attention path.
        let cfg = ModelConfig::tiny(50);
        let p: ParamStore<f64> = init_params(&cfg, 22).unwrap();
        let b = batch();
        let w: Vec<f64> = (0..b.len * cfg.hidden).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let loss = |p: &ParamStore<f64>| {
            forward_backward(&cfg, p, &b, Mode::Eval, Execution::Serial, |_, seq, _, _| {
                Ok(ExampleGrad {
                    loss: seq.iter().zip(&w).map(|(a, b)| a * b).sum(),
                    d_seq: Some(w.clone()),
                    d_pooled: None,
                })
            })
        };
        let rep = gradient_check(&p, 300, 1e-4, 2, loss).unwrap();
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }

    #[test]
    fn zero_perturbation_and_unused_rows() {
        let cfg = ModelConfig::tiny(50);
        let p: ParamStore<f64> = init_params(&cfg, 23).unwrap();
        let b = batch();
        let f = pooled_sum_loss(&cfg, &b);
        let (l0, g) = f(&p).unwrap();
        let mut q = p.clone();
        q.data_mut(0)[0] += 0.0;
        assert!((f(&q).unwrap().0 - l0).abs() <= 1e-12);
        let tok = g.get("embeddings.token.weight").unwrap();
        let e = cfg.embed_dim;
        for id in [1usize, 5, 49] {
            assert!(tok.data[id * e..(id + 1) * e].iter().all(|&x| x == 0.0));
        }
        assert!(tok.data[10 * e..11 * e].iter().any(|&x| x != 0.0));
    }
}
