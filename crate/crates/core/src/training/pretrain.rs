//! The MLM + pair-objective pre-training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::heads::{mlm_example, pair_example, validate_masks, PretrainHeads};
use super::optim::{clip_global_norm, learning_rate, AdamW};
use super::TrainHyper;
use crate::encoder::{
    check_layout, forward_backward, init_params, read_checkpoint, write_checkpoint, Batch, ExampleGrad, Mode,
    ModelConfig, ParamStore,
};
use crate::pretrain_data::PretrainInstance;
use crate::{rng, Error, Execution, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub mlm_loss: f64,
    pub pair_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<LossRow>,
    /// Steps whose batch had no masked position (MLM loss taken as 0).
    pub empty_mlm_steps: Vec<usize>,
}

impl LossTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,mlm_loss,pair_loss,total")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.step, r.mlm_loss, r.pair_loss, r.total)?;
        }
        Ok(())
    }

    /// Trailing moving averages of the total loss over `window` steps.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let xs: Vec<f64> = self.rows.iter().map(|r| r.total).collect();
        xs.windows(window.max(1))
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect()
    }

    pub fn extend(&mut self, other: LossTrace) {
        self.rows.extend(other.rows);
        self.empty_mlm_steps.extend(other.empty_mlm_steps);
    }
}

/// Training state: parameters (encoder + heads), optimizer, step counter.
/// Everything random at step `s` derives from `(hyper.seed, s)`, so a run
/// restored from a checkpoint continues exactly like an unbroken one.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    pub config: ModelConfig,
    pub hyper: TrainHyper,
    pub params: ParamStore<f32>,
    pub heads: PretrainHeads,
    pub optimizer: AdamW,
    pub step: usize,
    pub exec: Execution,
}

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

/// Indices of the `b` instances used at `step`: consecutive slices of a
/// per-epoch permutation, sorted within the batch.
pub(super) fn batch_indices(n: usize, b: usize, seed: u64, step: usize) -> Vec<usize> {
    let mut perm_epoch = usize::MAX;
    let mut perm: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(b);
    for k in step * b..(step + 1) * b {
        let epoch = k / n;
        if epoch != perm_epoch {
            perm = (0..n).collect();
            perm.shuffle(&mut rng::derive(seed, &[0xba7c, epoch as u64]));
            perm_epoch = epoch;
        }
        out.push(perm[k % n]);
    }
    out.sort_unstable();
    out
}

impl Pretrainer {
    pub fn new(config: ModelConfig, hyper: TrainHyper, exec: Execution) -> Result<Self> {
        hyper.validate()?;
        let mut params = init_params(&config, hyper.seed)?;
        let heads = PretrainHeads::append(&mut params, &config, hyper.seed);
        let optimizer = AdamW::new(&params);
        Ok(Pretrainer {
            config,
            hyper,
            params,
            heads,
            optimizer,
            step: 0,
            exec,
        })
    }

    /// Encoder tensors only (heads dropped).
    pub fn encoder_params(&self) -> ParamStore<f32> {
        let mut out = ParamStore::default();
        let n = crate::encoder::layout(&self.config).len;
        for (name, t) in self.params.iter().take(n) {
            out.push(name, t.clone());
        }
        out
    }

    /// Trains until `stop` steps have been taken in total (capped at
    /// `total_steps`). Returns the rows for the steps run by this call.
    pub fn run_until(&mut self, data: &[PretrainInstance], stop: usize) -> Result<LossTrace> {
        if data.is_empty() {
            return Err(Error::Data("no pre-training instances".into()));
        }
        let mut trace = LossTrace::default();
        while self.step < stop.min(self.hyper.total_steps) {
            let (row, empty) = self.train_step(data)?;
            if empty {
                trace.empty_mlm_steps.push(row.step);
            }
            trace.rows.push(row);
        }
        Ok(trace)
    }

    fn train_step(&mut self, data: &[PretrainInstance]) -> Result<(LossRow, bool)> {
        let (cfg, h) = (&self.config, &self.hyper);
        let step = self.step;
        let picked: Vec<&PretrainInstance> = batch_indices(data.len(), h.batch_size, h.seed, step)
            .into_iter()
            .map(|i| &data[i])
            .collect();
        let rows: Vec<_> = picked
            .iter()
            .map(|i| (i.token_ids.clone(), i.segment_ids.clone()))
            .collect();
        let batch = Batch::new(&rows);
        let positions: Vec<Vec<u32>> = picked.iter().map(|i| i.masked_positions.clone()).collect();
        let labels: Vec<Vec<u32>> = picked.iter().map(|i| i.masked_labels.clone()).collect();
        validate_masks(cfg, batch.batch, batch.len, &positions, &labels)?;
        let masked: usize = positions.iter().map(Vec::len).sum();
        let mlm_norm = masked.max(1) as f32;
        let pair_norm = picked.len() as f32;
        let dropout_seed = rng::derive(h.seed, &[0xd0, step as u64]).random::<u64>();
        let parts: Vec<Mutex<(f32, f32)>> = (0..picked.len()).map(|_| Mutex::new((0.0, 0.0))).collect();
        let (params, heads) = (&self.params, self.heads);
        let (_, mut grads) = forward_backward(
            cfg,
            params,
            &batch,
            Mode::Train {
                dropout: h.dropout,
                seed: dropout_seed,
            },
            self.exec,
            |b, seq, pooled, g| {
                let (lm, ds) = mlm_example(cfg, params, &heads, seq, &positions[b], &labels[b], mlm_norm, Some(&mut *g));
                let (lp, dp) = pair_example(params, &heads, pooled, picked[b].pair_label, pair_norm, Some(g));
                *parts[b].lock().expect("slot") = (lm, lp);
                Ok(ExampleGrad {
                    loss: lm + lp,
                    d_seq: ds,
                    d_pooled: dp,
                })
            },
        )?;
        let (mut mlm, mut pair) = (0f64, 0f64);
        for p in &parts {
            let (a, b) = *p.lock().expect("slot");
            mlm += a as f64;
            pair += b as f64;
        }
        let total = mlm + pair;
        if !total.is_finite() || !grads.all_finite() {
            return Err(Error::Diverged { step });
        }
        clip_global_norm(&mut grads, h.clip_norm);
        let lr = learning_rate(h, step);
        self.optimizer.step(&mut self.params, &grads, lr, h.weight_decay, |_| true);
        self.step += 1;
        Ok((
            LossRow {
                step,
                mlm_loss: mlm,
                pair_loss: pair,
                total,
            },
            masked == 0,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header: BTreeMap<String, String> = self.config.to_kv();
        for (k, v) in self.hyper.to_settings() {
            header.insert(format!("train.{k}"), v);
        }
        header.insert("kind".into(), "pretrain".into());
        header.insert("step".into(), self.step.to_string());
        header.insert("adam.t".into(), self.optimizer.t.to_string());
        let mut all = self.params.clone();
        for (prefix, store) in [(M_PREFIX, &self.optimizer.m), (V_PREFIX, &self.optimizer.v)] {
            for (name, t) in store.iter() {
                all.push(format!("{prefix}{name}"), t.clone());
            }
        }
        write_checkpoint(path, &header, &all)
    }

    pub fn load(path: &Path, exec: Execution) -> Result<Self> {
        let ck = read_checkpoint(path)?;
        let config = ModelConfig::from_kv(&ck.header)?;
        let train: crate::settings::Settings = ck
            .header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("train.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let hyper = TrainHyper::from_settings(&train, &TrainHyper::default())?;
        let num = |k: &str| -> Result<u64> {
            crate::settings::get(&ck.header, k)?.ok_or_else(|| Error::format("checkpoint", format!("missing {k}")))
        };
        let (step, t) = (num("step")? as usize, num("adam.t")?);
        let (mut params, mut m, mut v) = (ParamStore::default(), ParamStore::default(), ParamStore::default());
        for (name, tensor) in ck.params.iter() {
            if let Some(n) = name.strip_prefix(M_PREFIX) {
                m.push(n, tensor.clone());
            } else if let Some(n) = name.strip_prefix(V_PREFIX) {
                v.push(n, tensor.clone());
            } else {
                params.push(name, tensor.clone());
            }
        }
        check_layout(&config, &params)?;
        let heads = PretrainHeads::locate(&params)?;
        if m.names() != params.names() || v.names() != params.names() {
            return Err(Error::format("checkpoint", "optimizer state does not match parameters"));
        }
        let mut optimizer = AdamW::new(&params);
        optimizer.m = m;
        optimizer.v = v;
        optimizer.t = t;
        Ok(Pretrainer {
            config,
            hyper,
            params,
            heads,
            optimizer,
            step,
            exec,
        })
    }
}

/// Runs `hyper.total_steps` steps from a fresh initialization.
pub fn pretrain(
    config: &ModelConfig,
    data: &[PretrainInstance],
    hyper: &TrainHyper,
    exec: Execution,
) -> Result<(Pretrainer, LossTrace)> {
    let mut t = Pretrainer::new(config.clone(), hyper.clone(), exec)?;
    let trace = t.run_until(data, hyper.total_steps)?;
    Ok((t, trace))
}
