//! Pre-training heads (MLM with tied decoder, 2-way pair classifier) and
//! their losses.

use crate::encoder::math::{self, affine, affine_back, gelu, gelu_grad, layer_norm, layer_norm_back};
use crate::encoder::{layout, ModelConfig, Output, ParamStore, Scalar};
use crate::pretrain_data::PairLabel;
use crate::{Error, Result};

/// Indices of the pre-training head tensors within a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PretrainHeads {
    pub dense_w: usize,
    pub dense_b: usize,
    pub ln_g: usize,
    pub ln_b: usize,
    pub decoder_b: usize,
    pub pair_w: usize,
    pub pair_b: usize,
}

const HEAD_NAMES: [&str; 7] = [
    "mlm.dense.weight",
    "mlm.dense.bias",
    "mlm.norm.gamma",
    "mlm.norm.beta",
    "mlm.decoder.bias",
    "pair.weight",
    "pair.bias",
];

impl PretrainHeads {
    /// Appends freshly initialized heads to an encoder store.
    pub fn append<F: Scalar>(store: &mut ParamStore<F>, cfg: &ModelConfig, seed: u64) -> Self {
        let (h, e) = (cfg.hidden, cfg.embed_dim);
        let shapes = [vec![h, e], vec![e], vec![e], vec![e], vec![cfg.vocab_size], vec![h, 2], vec![2]];
        for (name, shape) in HEAD_NAMES.iter().zip(shapes) {
            store.push_init(name, &shape, seed);
        }
        Self::locate(store).expect("heads just appended")
    }

    pub fn locate<F: Scalar>(store: &ParamStore<F>) -> Result<Self> {
        let f = |n: &str| {
            store
                .index(n)
                .ok_or_else(|| Error::Config(format!("parameter store lacks {n}")))
        };
        Ok(PretrainHeads {
            dense_w: f(HEAD_NAMES[0])?,
            dense_b: f(HEAD_NAMES[1])?,
            ln_g: f(HEAD_NAMES[2])?,
            ln_b: f(HEAD_NAMES[3])?,
            decoder_b: f(HEAD_NAMES[4])?,
            pair_w: f(HEAD_NAMES[5])?,
            pair_b: f(HEAD_NAMES[6])?,
        })
    }

    pub fn count(cfg: &ModelConfig) -> u64 {
        let (h, e, v) = (cfg.hidden as u64, cfg.embed_dim as u64, cfg.vocab_size as u64);
        h * e + e + 2 * e + v + 2 * h + 2
    }
}

/// Cross-entropy of a softmax over `logits` against `label`; returns the loss
/// and `softmax(logits) - onehot(label)`.
pub fn softmax_xent<F: Scalar>(logits: &[F], label: usize) -> (F, Vec<F>) {
    let lp = math::log_softmax(logits);
    let mut d: Vec<F> = lp.iter().map(|&v| v.exp()).collect();
    d[label] = d[label] - F::one();
    (-lp[label], d)
}

/// MLM loss of one example, scaled by `1/norm`. With `grads`, accumulates
/// head and tied-embedding gradients and returns the sequence-state gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mlm_example<F: Scalar>(
    cfg: &ModelConfig,
    p: &ParamStore<F>,
    h: &PretrainHeads,
    seq: &[F],
    positions: &[u32],
    labels: &[u32],
    norm: F,
    mut grads: Option<&mut ParamStore<F>>,
) -> (F, Option<Vec<F>>) {
    let (hd, e, v) = (cfg.hidden, cfg.embed_dim, cfg.vocab_size);
    let tok = layout(cfg).tok;
    let mut d_seq = grads.as_ref().map(|_| vec![F::zero(); seq.len()]);
    let mut total = F::zero();
    for (&pos, &label) in positions.iter().zip(labels) {
        let s = &seq[pos as usize * hd..(pos as usize + 1) * hd];
        let z = affine(s, p.data(h.dense_w), p.data(h.dense_b), 1, hd, e);
        let u: Vec<F> = z.iter().map(|&x| gelu(x)).collect();
        let (n, xhat, rstd) = layer_norm(&u, p.data(h.ln_g), p.data(h.ln_b));
        let mut logits = math::mm_nt(&n, p.data(tok), 1, e, v);
        math::add_bias(&mut logits, p.data(h.decoder_b));
        let (l, mut dl) = softmax_xent(&logits, label as usize);
        total = total + l / norm;
        let Some(g) = grads.as_deref_mut() else { continue };
        dl.iter_mut().for_each(|x| *x = *x / norm);
        math::bias_grad(&dl, g.data_mut(h.decoder_b));
        // logits = n · Eᵀ: dE += dlᵀ n, dn = dl · E
        math::mm_tn_acc(&dl, &n, 1, v, e, g.data_mut(tok));
        let dn = math::mm(&dl, p.data(tok), 1, v, e);
        let (gg, gb) = g.split_pair(h.ln_g, h.ln_b);
        let mut du = layer_norm_back(&dn, &xhat, &rstd, p.data(h.ln_g), gg, gb);
        du.iter_mut().zip(&z).for_each(|(d, &x)| *d = *d * gelu_grad(x));
        let (gw, gb) = g.split_pair(h.dense_w, h.dense_b);
        let ds = affine_back(s, p.data(h.dense_w), &du, 1, hd, e, gw, gb);
        let row = &mut d_seq.as_mut().expect("grads imply d_seq")[pos as usize * hd..(pos as usize + 1) * hd];
        row.iter_mut().zip(&ds).for_each(|(a, &b)| *a = *a + b);
    }
    (total, d_seq)
}

/// Pair-head logits for one pooled vector.
pub fn pair_logits<F: Scalar>(p: &ParamStore<F>, h: &PretrainHeads, pooled: &[F]) -> Vec<F> {
    affine(pooled, p.data(h.pair_w), p.data(h.pair_b), 1, pooled.len(), 2)
}

pub(crate) fn pair_example<F: Scalar>(
    p: &ParamStore<F>,
    h: &PretrainHeads,
    pooled: &[F],
    label: PairLabel,
    norm: F,
    grads: Option<&mut ParamStore<F>>,
) -> (F, Option<Vec<F>>) {
    let logits = pair_logits(p, h, pooled);
    let (l, mut dl) = softmax_xent(&logits, label.index());
    let Some(g) = grads else { return (l / norm, None) };
    dl.iter_mut().for_each(|x| *x = *x / norm);
    let (gw, gb) = g.split_pair(h.pair_w, h.pair_b);
    let dp = affine_back(pooled, p.data(h.pair_w), &dl, 1, pooled.len(), 2, gw, gb);
    (l / norm, Some(dp))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmLoss<F> {
    /// Mean cross-entropy over all masked positions; 0 when there are none.
    pub value: F,
    pub masked: usize,
    /// True when the batch had no masked positions at all.
    pub empty: bool,
}

/// Mean masked-LM cross-entropy over a batch.
pub fn mlm_loss<F: Scalar>(
    cfg: &ModelConfig,
    params: &ParamStore<F>,
    out: &Output<F>,
    positions: &[Vec<u32>],
    labels: &[Vec<u32>],
) -> Result<MlmLoss<F>> {
    let heads = PretrainHeads::locate(params)?;
    validate_masks(cfg, out.batch, out.len, positions, labels)?;
    let masked: usize = positions.iter().map(Vec::len).sum();
    if masked == 0 {
        return Ok(MlmLoss {
            value: F::zero(),
            masked,
            empty: true,
        });
    }
    let norm = F::c(masked as f64);
    let value = (0..out.batch)
        .map(|b| mlm_example(cfg, params, &heads, out.seq_row(b), &positions[b], &labels[b], norm, None).0)
        .fold(F::zero(), |s, x| s + x);
    Ok(MlmLoss {
        value,
        masked,
        empty: false,
    })
}

pub(crate) fn validate_masks(
    cfg: &ModelConfig,
    batch: usize,
    len: usize,
    positions: &[Vec<u32>],
    labels: &[Vec<u32>],
) -> Result<()> {
    if positions.len() != batch || labels.len() != batch {
        return Err(Error::Input("masked positions/labels do not match the batch".into()));
    }
    for (ps, ls) in positions.iter().zip(labels) {
        if ps.len() != ls.len() {
            return Err(Error::Input("masked positions and labels differ in length".into()));
        }
        if let Some(&p) = ps.iter().find(|&&p| p as usize >= len) {
            return Err(Error::Input(format!("masked position {p} outside sequence of length {len}")));
        }
        if let Some(&id) = ls.iter().find(|&&l| l as usize >= cfg.vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
    }
    Ok(())
}

/// Mean 2-way cross-entropy of the pair head over a batch of pooled vectors.
pub fn pair_loss<F: Scalar>(params: &ParamStore<F>, pooled: &[F], labels: &[PairLabel]) -> Result<F> {
    let heads = PretrainHeads::locate(params)?;
    let hd = params.tensor(heads.pair_w).shape[0];
    if pooled.len() != labels.len() * hd {
        return Err(Error::Input("pooled outputs do not match the labels".into()));
    }
    let norm = F::c(labels.len().max(1) as f64);
    Ok(labels
        .iter()
        .enumerate()
        .map(|(b, &l)| pair_example(params, &heads, &pooled[b * hd..(b + 1) * hd], l, norm, None).0)
        .fold(F::zero(), |s, x| s + x))
}
