//! Forward pass and hand-written backpropagation, one example at a time.
//!
//! Examples in a batch are independent, so both passes map over them with
//! [`Execution`] and reduce gradients afterwards in example order.

use rand::Rng as _;

use super::math::{self, affine, affine_back, gelu, gelu_grad, layer_norm, layer_norm_back, softmax};
use super::{layout, Layout, ModelConfig, ParamStore, Scalar};
use crate::pretrain_data::PretrainInstance;
use crate::tokenizer::SpecialIds;
use crate::{rng, Error, Execution, Result};

/// Padded batch. `mask[b·len + t]` is true for real (attendable) tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl Batch {
    /// Pads rows of (ids, segment ids) to the longest row.
    pub fn new(rows: &[(Vec<u32>, Vec<u8>)]) -> Self {
        let len = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut b = Batch {
            ids: Vec::with_capacity(rows.len() * len),
            segments: Vec::with_capacity(rows.len() * len),
            mask: Vec::with_capacity(rows.len() * len),
            batch: rows.len(),
            len,
        };
        for (ids, segs) in rows {
            for t in 0..len {
                let real = t < ids.len();
                b.ids.push(if real { ids[t] } else { SpecialIds::FIXED.pad });
                b.segments.push(if real { segs.get(t).copied().unwrap_or(0) } else { 0 });
                b.mask.push(real);
            }
        }
        b
    }

    pub fn from_instances(instances: &[PretrainInstance]) -> Self {
        let rows: Vec<_> = instances
            .iter()
            .map(|i| (i.token_ids.clone(), i.segment_ids.clone()))
            .collect();
        Self::new(&rows)
    }

    pub fn row(&self, b: usize) -> (&[u32], &[u8], &[bool]) {
        let r = b * self.len..(b + 1) * self.len;
        (&self.ids[r.clone()], &self.segments[r.clone()], &self.mask[r])
    }

    fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.len > cfg.max_positions {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_positions {}",
                self.len, cfg.max_positions
            )));
        }
        if let Some(&id) = self.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        if let Some(&s) = self.segments.iter().find(|&&s| s as usize >= cfg.type_vocab) {
            return Err(Error::Input(format!("segment id {s} outside type vocabulary")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Inverted dropout with rate `dropout`; example `b` draws its masks
    /// from a stream derived from `(seed, b)`.
    Train { dropout: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output<F> {
    /// `batch × len × hidden`.
    pub seq: Vec<F>,
    /// `batch × hidden`.
    pub pooled: Vec<F>,
    pub batch: usize,
    pub len: usize,
    pub hidden: usize,
}

impl<F: Scalar> Output<F> {
    pub fn seq_row(&self, b: usize) -> &[F] {
        let n = self.len * self.hidden;
        &self.seq[b * n..(b + 1) * n]
    }

    pub fn pooled_row(&self, b: usize) -> &[F] {
        &self.pooled[b * self.hidden..(b + 1) * self.hidden]
    }
}

/// Per-example loss and its gradient with respect to the encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleGrad<F> {
    pub loss: F,
    /// `len × hidden`, or `None` when the loss ignores sequence states.
    pub d_seq: Option<Vec<F>>,
    /// `hidden`, or `None` when the loss ignores the pooled output.
    pub d_pooled: Option<Vec<F>>,
}

pub(crate) struct Dropout {
    rate: f64,
    rng: rng::Rng,
}

impl Dropout {
    /// Scale factors (0 or 1/(1-p)) applied in place; `None` in eval mode.
    fn apply<F: Scalar>(drop: &mut Option<Dropout>, x: &mut [F]) -> Option<Vec<F>> {
        let d = drop.as_mut()?;
        if d.rate <= 0.0 {
            return None;
        }
        let keep = F::c(1.0 / (1.0 - d.rate));
        let m: Vec<F> = (0..x.len())
            .map(|_| if d.rng.random::<f64>() < d.rate { F::zero() } else { keep })
            .collect();
        x.iter_mut().zip(&m).for_each(|(v, &s)| *v = *v * s);
        Some(m)
    }
}

fn apply_mask<F: Scalar>(dy: &mut [F], m: &Option<Vec<F>>) {
    if let Some(m) = m {
        dy.iter_mut().zip(m).for_each(|(g, &s)| *g = *g * s);
    }
}

struct LayerCache<F> {
    x: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    /// `heads × len × len`, before dropout.
    probs: Vec<F>,
    probs_drop: Option<Vec<F>>,
    ctx: Vec<F>,
    attn_drop: Option<Vec<F>>,
    ln1: (Vec<F>, Vec<F>),
    y1: Vec<F>,
    f: Vec<F>,
    g: Vec<F>,
    ffn_drop: Option<Vec<F>>,
    ln2: (Vec<F>, Vec<F>),
}

pub(crate) struct Cache<F> {
    ids: Vec<u32>,
    segs: Vec<u8>,
    e_tok: Vec<F>,
    emb_ln: (Vec<F>, Vec<F>),
    emb_drop: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    pub out: Vec<F>,
    pub pooled: Vec<F>,
}

impl<F: Scalar> Cache<F> {
    /// Attention probabilities of logical layer `l` (`heads × len × len`).
    #[cfg(test)]
    pub fn probs(&self, l: usize) -> &[F] {
        &self.layers[l].probs
    }
}

fn check_finite<F: Scalar>(x: &[F], layer: impl FnOnce() -> String) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer: layer() })
    }
}

pub(crate) fn example_forward<F: Scalar>(
    cfg: &ModelConfig,
    lay: &Layout,
    p: &ParamStore<F>,
    ids: &[u32],
    segs: &[u8],
    mask: &[bool],
    mut drop: Option<Dropout>,
) -> Result<Cache<F>> {
    let (t_len, h, e) = (ids.len(), cfg.hidden, cfg.embed_dim);
    let tok = p.data(lay.tok);
    let mut e_tok = Vec::with_capacity(t_len * e);
    for &id in ids {
        e_tok.extend_from_slice(&tok[id as usize * e..(id as usize + 1) * e]);
    }
    let mut s = match lay.proj {
        Some((w, b)) => affine(&e_tok, p.data(w), p.data(b), t_len, e, h),
        None => e_tok.clone(),
    };
    let (pos, seg) = (p.data(lay.pos), p.data(lay.seg));
    for t in 0..t_len {
        let sg = segs[t] as usize;
        for j in 0..h {
            s[t * h + j] = s[t * h + j] + pos[t * h + j] + seg[sg * h + j];
        }
    }
    let (mut x, xhat, rstd) = layer_norm(&s, p.data(lay.emb_ln_g), p.data(lay.emb_ln_b));
    let emb_drop = Dropout::apply(&mut drop, &mut x);
    check_finite(&x, || "embeddings".into())?;

    let (a_n, dh, f_n) = (cfg.heads, cfg.head_dim(), cfg.ffn_inner);
    let scale = F::c(1.0 / (dh as f64).sqrt());
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let li = lay.layer(cfg, l);
        let q = affine(&x, p.data(li.q_w), p.data(li.q_b), t_len, h, h);
        let k = affine(&x, p.data(li.k_w), p.data(li.k_b), t_len, h, h);
        let v = affine(&x, p.data(li.v_w), p.data(li.v_b), t_len, h, h);
        let mut probs = vec![F::zero(); a_n * t_len * t_len];
        for a in 0..a_n {
            for i in 0..t_len {
                let row = &mut probs[(a * t_len + i) * t_len..(a * t_len + i + 1) * t_len];
                let qi = &q[i * h + a * dh..i * h + (a + 1) * dh];
                for j in 0..t_len {
                    row[j] = if mask[j] {
                        math::dot(qi, &k[j * h + a * dh..j * h + (a + 1) * dh]) * scale
                    } else {
                        F::neg_infinity()
                    };
                }
                softmax(row);
            }
        }
        let mut pd = probs.clone();
        let probs_drop = Dropout::apply(&mut drop, &mut pd);
        let mut ctx = vec![F::zero(); t_len * h];
        for a in 0..a_n {
            for i in 0..t_len {
                let row = &pd[(a * t_len + i) * t_len..(a * t_len + i + 1) * t_len];
                let out = &mut ctx[i * h + a * dh..i * h + (a + 1) * dh];
                for (j, &pij) in row.iter().enumerate() {
                    if pij == F::zero() {
                        continue;
                    }
                    for (o, &vv) in out.iter_mut().zip(&v[j * h + a * dh..j * h + (a + 1) * dh]) {
                        *o = *o + pij * vv;
                    }
                }
            }
        }
        let mut attn = affine(&ctx, p.data(li.o_w), p.data(li.o_b), t_len, h, h);
        let attn_drop = Dropout::apply(&mut drop, &mut attn);
        let r1: Vec<F> = x.iter().zip(&attn).map(|(&a, &b)| a + b).collect();
        let (y1, xh1, rs1) = layer_norm(&r1, p.data(li.ln1_g), p.data(li.ln1_b));
        let f = affine(&y1, p.data(li.f1_w), p.data(li.f1_b), t_len, h, f_n);
        let g: Vec<F> = f.iter().map(|&v| gelu(v)).collect();
        let mut o = affine(&g, p.data(li.f2_w), p.data(li.f2_b), t_len, f_n, h);
        let ffn_drop = Dropout::apply(&mut drop, &mut o);
        let r2: Vec<F> = y1.iter().zip(&o).map(|(&a, &b)| a + b).collect();
        let (y2, xh2, rs2) = layer_norm(&r2, p.data(li.ln2_g), p.data(li.ln2_b));
        check_finite(&y2, || format!("layer {l}"))?;
        layers.push(LayerCache {
            x: std::mem::replace(&mut x, y2),
            q,
            k,
            v,
            probs,
            probs_drop,
            ctx,
            attn_drop,
            ln1: (xh1, rs1),
            y1,
            f,
            g,
            ffn_drop,
            ln2: (xh2, rs2),
        });
    }
    let pooled: Vec<F> = if t_len == 0 {
        vec![F::zero(); h]
    } else {
        affine(&x[..h], p.data(lay.pool_w), p.data(lay.pool_b), 1, h, h)
            .into_iter()
            .map(|v| v.tanh())
            .collect()
    };
    check_finite(&pooled, || "pooler".into())?;
    Ok(Cache {
        ids: ids.to_vec(),
        segs: segs.to_vec(),
        e_tok,
        emb_ln: (xhat, rstd),
        emb_drop,
        layers,
        out: x,
        pooled,
    })
}

/// Accumulates parameter gradients for one example into `g`.
fn example_backward<F: Scalar>(
    cfg: &ModelConfig,
    lay: &Layout,
    p: &ParamStore<F>,
    c: &Cache<F>,
    d_seq: Option<Vec<F>>,
    d_pooled: Option<&[F]>,
    g: &mut ParamStore<F>,
) {
    let (t_len, h, e) = (c.ids.len(), cfg.hidden, cfg.embed_dim);
    let mut dy = d_seq.unwrap_or_else(|| vec![F::zero(); t_len * h]);
    if let (Some(dp), true) = (d_pooled, t_len > 0) {
        let dz: Vec<F> = dp
            .iter()
            .zip(&c.pooled)
            .map(|(&d, &y)| d * (F::one() - y * y))
            .collect();
        let (gw, gb) = g.split_pair(lay.pool_w, lay.pool_b);
        let dx = affine_back(&c.out[..h], p.data(lay.pool_w), &dz, 1, h, h, gw, gb);
        dy[..h].iter_mut().zip(&dx).for_each(|(a, &b)| *a = *a + b);
    }

    let (a_n, dh, f_n) = (cfg.heads, cfg.head_dim(), cfg.ffn_inner);
    let scale = F::c(1.0 / (dh as f64).sqrt());
    for l in (0..cfg.num_layers).rev() {
        let li = *lay.layer(cfg, l);
        let lc = &c.layers[l];
        let (gg, gb) = g.split_pair(li.ln2_g, li.ln2_b);
        let dr2 = layer_norm_back(&dy, &lc.ln2.0, &lc.ln2.1, p.data(li.ln2_g), gg, gb);
        let mut dy1 = dr2.clone();
        let mut d_o = dr2;
        apply_mask(&mut d_o, &lc.ffn_drop);
        let (gw, gb) = g.split_pair(li.f2_w, li.f2_b);
        let mut df = affine_back(&lc.g, p.data(li.f2_w), &d_o, t_len, f_n, h, gw, gb);
        df.iter_mut().zip(&lc.f).for_each(|(d, &f)| *d = *d * gelu_grad(f));
        let (gw, gb) = g.split_pair(li.f1_w, li.f1_b);
        let dx = affine_back(&lc.y1, p.data(li.f1_w), &df, t_len, h, f_n, gw, gb);
        dy1.iter_mut().zip(&dx).for_each(|(a, &b)| *a = *a + b);

        let (gg, gb) = g.split_pair(li.ln1_g, li.ln1_b);
        let dr1 = layer_norm_back(&dy1, &lc.ln1.0, &lc.ln1.1, p.data(li.ln1_g), gg, gb);
        let mut dx = dr1.clone();
        let mut dattn = dr1;
        apply_mask(&mut dattn, &lc.attn_drop);
        let (gw, gb) = g.split_pair(li.o_w, li.o_b);
        let dctx = affine_back(&lc.ctx, p.data(li.o_w), &dattn, t_len, h, h, gw, gb);

        let (mut dq, mut dk, mut dv) = (
            vec![F::zero(); t_len * h],
            vec![F::zero(); t_len * h],
            vec![F::zero(); t_len * h],
        );
        let mut dp_row = vec![F::zero(); t_len];
        for a in 0..a_n {
            let hs = a * dh..(a + 1) * dh;
            for i in 0..t_len {
                let r = (a * t_len + i) * t_len..(a * t_len + i + 1) * t_len;
                let probs = &lc.probs[r.clone()];
                let dci = &dctx[i * h + hs.start..i * h + hs.end];
                for j in 0..t_len {
                    let pj = match &lc.probs_drop {
                        Some(m) => probs[j] * m[r.start + j],
                        None => probs[j],
                    };
                    let vj = j * h + hs.start..j * h + hs.end;
                    dp_row[j] = math::dot(dci, &lc.v[vj.clone()]);
                    if pj != F::zero() {
                        for (dvv, &d) in dv[vj].iter_mut().zip(dci) {
                            *dvv = *dvv + pj * d;
                        }
                    }
                }
                if let Some(m) = &lc.probs_drop {
                    dp_row.iter_mut().zip(&m[r.clone()]).for_each(|(d, &s)| *d = *d * s);
                }
                let inner = probs.iter().zip(&dp_row).fold(F::zero(), |s, (&pp, &d)| s + pp * d);
                for j in 0..t_len {
                    let ds = probs[j] * (dp_row[j] - inner) * scale;
                    if ds == F::zero() {
                        continue;
                    }
                    for d in 0..dh {
                        let (qi, kj) = (i * h + hs.start + d, j * h + hs.start + d);
                        dq[qi] = dq[qi] + ds * lc.k[kj];
                        dk[kj] = dk[kj] + ds * lc.q[qi];
                    }
                }
            }
        }
        for (dz, w, b) in [(&dq, li.q_w, li.q_b), (&dk, li.k_w, li.k_b), (&dv, li.v_w, li.v_b)] {
            let (gw, gb) = g.split_pair(w, b);
            let d = affine_back(&lc.x, p.data(w), dz, t_len, h, h, gw, gb);
            dx.iter_mut().zip(&d).for_each(|(a, &b)| *a = *a + b);
        }
        dy = dx;
    }

    apply_mask(&mut dy, &c.emb_drop);
    let (gg, gb) = g.split_pair(lay.emb_ln_g, lay.emb_ln_b);
    let ds = layer_norm_back(&dy, &c.emb_ln.0, &c.emb_ln.1, p.data(lay.emb_ln_g), gg, gb);
    let gpos = g.data_mut(lay.pos);
    for (t, row) in ds.chunks(h).enumerate() {
        for j in 0..h {
            gpos[t * h + j] = gpos[t * h + j] + row[j];
        }
    }
    let gseg = g.data_mut(lay.seg);
    for (t, row) in ds.chunks(h).enumerate() {
        let sg = c.segs[t] as usize;
        for j in 0..h {
            gseg[sg * h + j] = gseg[sg * h + j] + row[j];
        }
    }
    let de = match lay.proj {
        Some((w, b)) => {
            let (gw, gb) = g.split_pair(w, b);
            affine_back(&c.e_tok, p.data(w), &ds, t_len, e, h, gw, gb)
        }
        None => ds,
    };
    let gtok = g.data_mut(lay.tok);
    for (t, &id) in c.ids.iter().enumerate() {
        let o = id as usize * e;
        for j in 0..e {
            gtok[o + j] = gtok[o + j] + de[t * e + j];
        }
    }
}

fn dropout_for(mode: Mode, b: usize) -> Option<Dropout> {
    match mode {
        Mode::Eval => None,
        Mode::Train { dropout, seed } => Some(Dropout {
            rate: dropout,
            rng: rng::derive(seed, &[0xd7, b as u64]),
        }),
    }
}

/// Inference forward pass.
pub fn forward<F: Scalar>(
    cfg: &ModelConfig,
    params: &ParamStore<F>,
    batch: &Batch,
    exec: Execution,
) -> Result<Output<F>> {
    super::check_layout(cfg, params)?;
    batch.validate(cfg)?;
    let lay = layout(cfg);
    let outs = exec.map_range(batch.batch, |b| {
        let (ids, segs, mask) = batch.row(b);
        example_forward(cfg, &lay, params, ids, segs, mask, None)
    });
    let mut out = Output {
        seq: Vec::with_capacity(batch.batch * batch.len * cfg.hidden),
        pooled: Vec::with_capacity(batch.batch * cfg.hidden),
        batch: batch.batch,
        len: batch.len,
        hidden: cfg.hidden,
    };
    for c in outs {
        let c = c?;
        out.seq.extend_from_slice(&c.out);
        out.pooled.extend_from_slice(&c.pooled);
    }
    Ok(out)
}

/// Forward + backward over a batch.
///
/// `loss(b, seq, pooled, head_grads)` returns example `b`'s loss and the
/// gradient with respect to its outputs; it may also accumulate gradients of
/// any non-encoder tensors (heads) into `head_grads`, which has the full
/// store layout. Returns the summed loss and summed gradients.
pub fn forward_backward<F, L>(
    cfg: &ModelConfig,
    params: &ParamStore<F>,
    batch: &Batch,
    mode: Mode,
    exec: Execution,
    loss: L,
) -> Result<(F, ParamStore<F>)>
where
    F: Scalar,
    L: Fn(usize, &[F], &[F], &mut ParamStore<F>) -> Result<ExampleGrad<F>> + Sync + Send,
{
    super::check_layout(cfg, params)?;
    batch.validate(cfg)?;
    let lay = layout(cfg);
    let per = exec.map_range(batch.batch, |b| -> Result<(F, ParamStore<F>)> {
        let (ids, segs, mask) = batch.row(b);
        let c = example_forward(cfg, &lay, params, ids, segs, mask, dropout_for(mode, b))?;
        let mut g = params.zeros_like();
        let eg = loss(b, &c.out, &c.pooled, &mut g)?;
        example_backward(cfg, &lay, params, &c, eg.d_seq, eg.d_pooled.as_deref(), &mut g);
        Ok((eg.loss, g))
    });
    let mut total = F::zero();
    let mut grads = params.zeros_like();
    for r in per {
        let (l, g) = r?;
        total = total + l;
        grads.add_assign(&g);
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn tiny() -> (ModelConfig, ParamStore<f64>) {
        let cfg = ModelConfig::tiny(50);
        let p = init_params(&cfg, 3).unwrap();
        (cfg, p)
    }

    fn sample_batch() -> Batch {
        Batch::new(&[
            (vec![2, 10, 11, 12, 3, 20, 21, 3], vec![0, 0, 0, 0, 0, 1, 1, 1]),
            (vec![2, 30, 31, 3], vec![0, 0, 0, 0]),
            (vec![2, 40, 3, 41, 42, 3], vec![0, 0, 0, 1, 1, 1]),
        ])
    }

    #[test]
    fn padding_and_rows() {
        let b = sample_batch();
        assert_eq!((b.batch, b.len), (3, 8));
        let (ids, _, mask) = b.row(1);
        assert_eq!(ids, &[2, 30, 31, 3, 0, 0, 0, 0]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 4);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let (cfg, p) = tiny();
        let b = sample_batch();
        let lay = layout(&cfg);
        for r in 0..b.batch {
            let (ids, segs, mask) = b.row(r);
            let c = example_forward(&cfg, &lay, &p, ids, segs, mask, None).unwrap();
            for l in 0..cfg.num_layers {
                for row in c.probs(l).chunks(b.len) {
                    let s: f64 = row.iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                    for (j, &v) in row.iter().enumerate() {
                        if !mask[j] {
                            assert_eq!(v, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn padded_content_is_invisible() {
        let cfg = ModelConfig::tiny(50);
        let p: ParamStore<f32> = init_params(&cfg, 4).unwrap();
        let mut b = sample_batch();
        let base = forward(&cfg, &p, &b, Execution::Serial).unwrap();
        for (i, m) in b.mask.clone().iter().enumerate() {
            if !m {
                b.ids[i] = 7 + (i as u32 % 30);
                b.segments[i] = 1;
            }
        }
        let other = forward(&cfg, &p, &b, Execution::Serial).unwrap();
        for r in 0..b.batch {
            for t in 0..b.len {
                if b.mask[r * b.len + t] {
                    let s = (r * b.len + t) * cfg.hidden..(r * b.len + t + 1) * cfg.hidden;
                    assert_eq!(base.seq[s.clone()], other.seq[s]);
                }
            }
        }
        assert_eq!(base.pooled, other.pooled);
    }

    #[test]
    fn batch_permutation() {
        let cfg = ModelConfig::tiny(50);
        let p: ParamStore<f32> = init_params(&cfg, 5).unwrap();
        let rows = vec![
            (vec![2, 10, 11, 3], vec![0, 0, 0, 0]),
            (vec![2, 12, 3, 14, 3], vec![0, 0, 0, 1, 1]),
            (vec![2, 30, 31, 32, 33, 3], vec![0; 6]),
        ];
        let perm = [2, 0, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| rows[i].clone()).collect();
        let a = forward(&cfg, &p, &Batch::new(&rows), Execution::Serial).unwrap();
        let b = forward(&cfg, &p, &Batch::new(&permuted), Execution::Parallel).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(a.pooled_row(i), b.pooled_row(k));
            assert_eq!(a.seq_row(i), b.seq_row(k));
        }
    }

    #[test]
    fn identical_rows_identical_pooled() {
        let cfg = ModelConfig::tiny(50);
        let p: ParamStore<f32> = init_params(&cfg, 6).unwrap();
        let row = (vec![2, 0, 0, 0, 0], vec![0; 5]);
        let out = forward(&cfg, &p, &Batch::new(&vec![row; 4]), Execution::Parallel).unwrap();
        assert!(out.pooled.iter().all(|v| v.is_finite()));
        for r in 1..4 {
            assert_eq!(out.pooled_row(0), out.pooled_row(r));
        }
    }

    #[test]
    fn identity_projection_matches_unfactorized() {
        let plain = ModelConfig::tiny(50);
        let proj = ModelConfig { project_embeddings: true, ..plain.clone() };
        let p0: ParamStore<f32> = init_params(&plain, 8).unwrap();
        let mut p1: ParamStore<f32> = init_params(&proj, 8).unwrap();
        for (name, t) in p0.iter() {
            let i = p1.index(name).unwrap();
            p1.tensor_mut(i).data.clone_from(&t.data);
        }
        let w = p1.index("embeddings.projection.weight").unwrap();
        let h = plain.hidden;
        let d = p1.data_mut(w);
        d.iter_mut().for_each(|x| *x = 0.0);
        (0..h).for_each(|i| d[i * h + i] = 1.0);
        let b = sample_batch();
        let a = forward(&plain, &p0, &b, Execution::Serial).unwrap();
        let c = forward(&proj, &p1, &b, Execution::Serial).unwrap();
        for (x, y) in a.seq.iter().zip(&c.seq).chain(a.pooled.iter().zip(&c.pooled)) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn shared_layers_alias_one_parameter_set() {
        let cfg = ModelConfig { share_layers: true, num_layers: 3, ..ModelConfig::tiny(50) };
        let mut p: ParamStore<f32> = init_params(&cfg, 1).unwrap();
        let b = sample_batch();
        let before = forward(&cfg, &p, &b, Execution::Serial).unwrap();
        // Perturbing the one physical layer changes what every layer computes;
        // the 1-layer model with the same tensors diverges from the 3-layer one.
        let one = ModelConfig { num_layers: 1, ..cfg.clone() };
        let single = forward(&one, &p, &b, Execution::Serial).unwrap();
        assert_ne!(before.seq, single.seq);
        let i = p.index("layer.0.ffn.inner.bias").unwrap();
        p.data_mut(i).iter_mut().for_each(|x| *x += 0.5);
        let after = forward(&cfg, &p, &b, Execution::Serial).unwrap();
        assert_ne!(before.seq, after.seq);
    }

    #[test]
    fn input_errors() {
        let (cfg, p) = tiny();
        let bad = Batch::new(&[(vec![2, 50, 3], vec![0; 3])]);
        assert!(matches!(forward(&cfg, &p, &bad, Execution::Serial), Err(Error::IdOutOfRange { id: 50, .. })));
        let long = Batch::new(&[(vec![5; 65], vec![0; 65])]);
        assert!(matches!(forward(&cfg, &p, &long, Execution::Serial), Err(Error::Input(_))));
    }

    #[test]
    fn non_finite_names_the_layer() {
        let (cfg, mut p) = tiny();
        let i = p.index("layer.1.ffn.output.bias").unwrap();
        p.data_mut(i)[0] = f64::INFINITY;
        match forward(&cfg, &p, &sample_batch(), Execution::Serial) {
            Err(Error::Numeric { layer }) => assert_eq!(layer, "layer 1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serial_and_parallel_gradients_agree() {
        let cfg = ModelConfig::tiny(50);
        let p: ParamStore<f32> = init_params(&cfg, 2).unwrap();
        let b = sample_batch();
        let mode = Mode::Train { dropout: 0.1, seed: 4 };
        let loss = |_: usize, seq: &[f32], pooled: &[f32], _: &mut ParamStore<f32>| {
            Ok(ExampleGrad {
                loss: seq.iter().sum::<f32>() + pooled.iter().sum::<f32>(),
                d_seq: Some(vec![1.0; seq.len()]),
                d_pooled: Some(vec![1.0; pooled.len()]),
            })
        };
        let a = forward_backward(&cfg, &p, &b, mode, Execution::Serial, loss).unwrap();
        let c = forward_backward(&cfg, &p, &b, mode, Execution::Parallel, loss).unwrap();
        assert_eq!(a, c);
    }
}
