//! Transformer encoder in BERT (independent layers) and ALBERT (factorized
//! embeddings, one shared layer) parameterizations.
//!
//! Math is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks.

mod checkpoint;
mod forward;
mod gradcheck;
pub(crate) mod math;

use std::collections::BTreeMap;
use std::fmt::Debug;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use forward::{forward, forward_backward, Batch, ExampleGrad, Mode, Output};
pub use gradcheck::{gradient_check, pooled_sum_loss, GradCheckReport};

use crate::settings::get;
use crate::{rng, Error, Result};

pub trait Scalar:
    num_traits::Float + Send + Sync + Debug + Default + std::iter::Sum + 'static
{
    fn c(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite constant")
    }
    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_inner: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub embed_dim: usize,
    pub share_layers: bool,
    /// Keep the embed→hidden projection even when `embed_dim == hidden`.
    pub project_embeddings: bool,
    pub type_vocab: usize,
}

impl ModelConfig {
    pub fn bert_base(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 12,
            hidden: 768,
            heads: 12,
            ffn_inner: 3072,
            vocab_size,
            max_positions: 512,
            embed_dim: 768,
            share_layers: false,
            project_embeddings: false,
            type_vocab: 2,
        }
    }

    pub fn albert_base(vocab_size: usize) -> Self {
        ModelConfig {
            embed_dim: 128,
            share_layers: true,
            ..Self::bert_base(vocab_size)
        }
    }

    /// Two layers, hidden 16, two heads.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            hidden: 16,
            heads: 2,
            ffn_inner: 64,
            vocab_size,
            max_positions: 64,
            embed_dim: 16,
            share_layers: false,
            project_embeddings: false,
            type_vocab: 2,
        }
    }

    pub fn has_projection(&self) -> bool {
        self.embed_dim != self.hidden || self.project_embeddings
    }

    /// Number of physically distinct layer parameter sets.
    pub fn physical_layers(&self) -> usize {
        if self.share_layers {
            self.num_layers.min(1)
        } else {
            self.num_layers
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn_inner", self.ffn_inner),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("embed_dim", self.embed_dim),
            ("type_vocab", self.type_vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("num_layers".into(), self.num_layers.to_string());
        m.insert("hidden".into(), self.hidden.to_string());
        m.insert("heads".into(), self.heads.to_string());
        m.insert("ffn_inner".into(), self.ffn_inner.to_string());
        m.insert("vocab_size".into(), self.vocab_size.to_string());
        m.insert("max_positions".into(), self.max_positions.to_string());
        m.insert("embed_dim".into(), self.embed_dim.to_string());
        m.insert("share_layers".into(), self.share_layers.to_string());
        m.insert("project_embeddings".into(), self.project_embeddings.to_string());
        m.insert("type_vocab".into(), self.type_vocab.to_string());
        m
    }

    /// Reads a config from key/value pairs. `hidden` and `vocab_size` are
    /// required; everything else defaults relative to them.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let hidden: usize = get(kv, "hidden")?.ok_or_else(|| Error::Config("missing key hidden".into()))?;
        let vocab_size = get(kv, "vocab_size")?.ok_or_else(|| Error::Config("missing key vocab_size".into()))?;
        let cfg = ModelConfig {
            num_layers: get(kv, "num_layers")?.unwrap_or(12),
            hidden,
            heads: get(kv, "heads")?.unwrap_or(1),
            ffn_inner: get(kv, "ffn_inner")?.unwrap_or(4 * hidden),
            vocab_size,
            max_positions: get(kv, "max_positions")?.unwrap_or(512),
            embed_dim: get(kv, "embed_dim")?.unwrap_or(hidden),
            share_layers: get(kv, "share_layers")?.unwrap_or(false),
            project_embeddings: get(kv, "project_embeddings")?.unwrap_or(false),
            type_vocab: get(kv, "type_vocab")?.unwrap_or(2),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// How a tensor is initialized and whether weight decay applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gain,
}

impl ParamKind {
    /// Derived from the name suffix: `.weight`, `.bias`/`.beta`, `.gamma`.
    pub fn of(name: &str) -> Self {
        if name.ends_with(".gamma") {
            ParamKind::Gain
        } else if name.ends_with(".bias") || name.ends_with(".beta") {
            ParamKind::Bias
        } else {
            ParamKind::Weight
        }
    }
}

/// Named tensors in a fixed order. The encoder occupies a prefix; task and
/// pre-training heads may be appended after it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<F>) -> usize {
        let name = name.into();
        debug_assert!(self.index(&name).is_none(), "duplicate tensor {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor<F> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<F> {
        &mut self.tensors[i]
    }

    pub(crate) fn data(&self, i: usize) -> &[F] {
        &self.tensors[i].data
    }

    pub(crate) fn data_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.tensors[i].data
    }

    /// Mutable views of two distinct tensors.
    pub(crate) fn split_pair(&mut self, a: usize, b: usize) -> (&mut [F], &mut [F]) {
        assert_ne!(a, b);
        let (lo, hi) = (a.min(b), a.max(b));
        let (left, right) = self.tensors.split_at_mut(hi);
        let (x, y) = (&mut left[lo].data[..], &mut right[0].data[..]);
        if a < b {
            (x, y)
        } else {
            (y, x)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.names, other.names);
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub fn sq_norm(&self) -> F {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .fold(F::zero(), |s, &x| s + x * x)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|x| x.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&x| G::c(x.f64())).collect(),
                })
                .collect(),
        }
    }

    /// Adds a freshly initialized tensor (see [`init_params`] for the scheme).
    pub fn push_init(&mut self, name: &str, shape: &[usize], seed: u64) -> usize {
        let mut t = Tensor::zeros(shape);
        fill(&mut t, ParamKind::of(name), seed, self.len() as u64);
        self.push(name, t)
    }
}

/// Indices of one layer's tensors within a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIds {
    pub q_w: usize,
    pub q_b: usize,
    pub k_w: usize,
    pub k_b: usize,
    pub v_w: usize,
    pub v_b: usize,
    pub o_w: usize,
    pub o_b: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub f1_w: usize,
    pub f1_b: usize,
    pub f2_w: usize,
    pub f2_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

/// Tensor indices for the encoder prefix of a store.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok: usize,
    pub proj: Option<(usize, usize)>,
    pub pos: usize,
    pub seg: usize,
    pub emb_ln_g: usize,
    pub emb_ln_b: usize,
    pub layers: Vec<LayerIds>,
    pub pool_w: usize,
    pub pool_b: usize,
    pub len: usize,
}

impl Layout {
    /// Physical layer used by logical layer `l`.
    pub fn layer(&self, cfg: &ModelConfig, l: usize) -> &LayerIds {
        &self.layers[if cfg.share_layers { 0 } else { l }]
    }
}

/// Names and shapes of every encoder tensor, in store order.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (h, e, f) = (cfg.hidden, cfg.embed_dim, cfg.ffn_inner);
    let mut v = vec![("embeddings.token.weight".to_string(), vec![cfg.vocab_size, e])];
    if cfg.has_projection() {
        v.push(("embeddings.projection.weight".into(), vec![e, h]));
        v.push(("embeddings.projection.bias".into(), vec![h]));
    }
    v.push(("embeddings.position.weight".into(), vec![cfg.max_positions, h]));
    v.push(("embeddings.segment.weight".into(), vec![cfg.type_vocab, h]));
    v.push(("embeddings.norm.gamma".into(), vec![h]));
    v.push(("embeddings.norm.beta".into(), vec![h]));
    for l in 0..cfg.physical_layers() {
        let p = format!("layer.{l}");
        for (n, shape) in [
            ("attention.query.weight", vec![h, h]),
            ("attention.query.bias", vec![h]),
            ("attention.key.weight", vec![h, h]),
            ("attention.key.bias", vec![h]),
            ("attention.value.weight", vec![h, h]),
            ("attention.value.bias", vec![h]),
            ("attention.output.weight", vec![h, h]),
            ("attention.output.bias", vec![h]),
            ("attention.norm.gamma", vec![h]),
            ("attention.norm.beta", vec![h]),
            ("ffn.inner.weight", vec![h, f]),
            ("ffn.inner.bias", vec![f]),
            ("ffn.output.weight", vec![f, h]),
            ("ffn.output.bias", vec![h]),
            ("ffn.norm.gamma", vec![h]),
            ("ffn.norm.beta", vec![h]),
        ] {
            v.push((format!("{p}.{n}"), shape));
        }
    }
    v.push(("pooler.weight".into(), vec![h, h]));
    v.push(("pooler.bias".into(), vec![h]));
    v
}

pub(crate) fn layout(cfg: &ModelConfig) -> Layout {
    let mut i = 0;
    let mut next = || {
        i += 1;
        i - 1
    };
    let tok = next();
    let proj = cfg.has_projection().then(|| (next(), next()));
    let (pos, seg, emb_ln_g, emb_ln_b) = (next(), next(), next(), next());
    let layers = (0..cfg.physical_layers())
        .map(|_| LayerIds {
            q_w: next(),
            q_b: next(),
            k_w: next(),
            k_b: next(),
            v_w: next(),
            v_b: next(),
            o_w: next(),
            o_b: next(),
            ln1_g: next(),
            ln1_b: next(),
            f1_w: next(),
            f1_b: next(),
            f2_w: next(),
            f2_b: next(),
            ln2_g: next(),
            ln2_b: next(),
        })
        .collect();
    let (pool_w, pool_b) = (next(), next());
    Layout {
        tok,
        proj,
        pos,
        seg,
        emb_ln_g,
        emb_ln_b,
        layers,
        pool_w,
        pool_b,
        len: next(),
    }
}

/// Std of a unit normal truncated to ±2σ.
const TRUNC_STD: f64 = 0.879_625_661_034_239_8;
pub const INIT_STD: f64 = 0.02;

/// One draw from a normal truncated at two standard deviations, scaled so
/// the truncated distribution itself has std `std`.
pub(crate) fn truncated_normal(rng: &mut rng::Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std / TRUNC_STD;
        }
    }
}

fn fill<F: Scalar>(t: &mut Tensor<F>, kind: ParamKind, seed: u64, index: u64) {
    match kind {
        ParamKind::Bias => t.data.iter_mut().for_each(|x| *x = F::zero()),
        ParamKind::Gain => t.data.iter_mut().for_each(|x| *x = F::one()),
        ParamKind::Weight => {
            let mut r = rng::derive(seed, &[0x1417, index]);
            t.data
                .iter_mut()
                .for_each(|x| *x = F::c(truncated_normal(&mut r, INIT_STD)));
        }
    }
}

/// Fresh encoder parameters. Each tensor draws from its own stream, so the
/// result depends only on `(config, seed)`.
pub fn init_params<F: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<F>> {
    cfg.validate()?;
    let mut store = ParamStore::default();
    for (name, shape) in tensor_specs(cfg) {
        store.push_init(&name, &shape, seed);
    }
    Ok(store)
}

/// Checks that the first tensors of `store` match the encoder layout.
pub fn check_layout<F: Scalar>(cfg: &ModelConfig, store: &ParamStore<F>) -> Result<()> {
    let specs = tensor_specs(cfg);
    if store.len() < specs.len() {
        return Err(Error::Config(format!(
            "parameter store has {} tensors, config needs {}",
            store.len(),
            specs.len()
        )));
    }
    for (i, (name, shape)) in specs.iter().enumerate() {
        let t = store.tensor(i);
        if store.name(i) != name || &t.shape != shape {
            return Err(Error::Config(format!(
                "tensor {i} is {} {:?}, expected {name} {shape:?}",
                store.name(i),
                t.shape
            )));
        }
    }
    Ok(())
}

/// Closed-form encoder parameter count (heads excluded).
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let (v, h, e, f) = (
        cfg.vocab_size as u64,
        cfg.hidden as u64,
        cfg.embed_dim as u64,
        cfg.ffn_inner as u64,
    );
    let projection = if cfg.has_projection() { e * h + h } else { 0 };
    let embeddings = v * e + projection + (cfg.max_positions as u64 + cfg.type_vocab as u64) * h + 2 * h;
    let attention = 4 * (h * h + h) + 2 * h;
    let ffn = h * f + f + f * h + h + 2 * h;
    let pooler = h * h + h;
    embeddings + cfg.physical_layers() as u64 * (attention + ffn) + pooler
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_budgets() {
        let bert = count_params(&ModelConfig::bert_base(30_000));
        let albert = count_params(&ModelConfig::albert_base(30_000));
        assert_eq!(bert, 109_081_344);
        assert_eq!(albert, 12_013_824);
        assert!((105_000_000..=115_000_000).contains(&bert));
        assert!((10_000_000..=14_000_000).contains(&albert));
    }

    #[test]
    fn closed_form_matches_allocation() {
        let mut cfgs = vec![ModelConfig::tiny(50)];
        cfgs.push(ModelConfig { embed_dim: 8, share_layers: true, num_layers: 3, ..ModelConfig::tiny(50) });
        cfgs.push(ModelConfig { project_embeddings: true, ..ModelConfig::tiny(37) });
        cfgs.push(ModelConfig { num_layers: 0, ..ModelConfig::tiny(50) });
        for cfg in cfgs {
            let p: ParamStore<f32> = init_params(&cfg, 1).unwrap();
            assert_eq!(p.num_scalars() as u64, count_params(&cfg), "{cfg:?}");
            assert_eq!(layout(&cfg).len, p.len());
        }
    }

    #[test]
    fn zero_layers_is_embeddings_plus_pooler() {
        let cfg = ModelConfig { num_layers: 0, ..ModelConfig::tiny(50) };
        // 50·16 token + 64·16 position + 2·16 segment + 2·16 norm + 16·16+16 pooler
        assert_eq!(count_params(&cfg), 800 + 1024 + 32 + 32 + 272);
    }

    #[test]
    fn sharing_is_depth_independent() {
        for l in 1..8 {
            let a = ModelConfig { num_layers: l, ..ModelConfig::albert_base(30_000) };
            let b = ModelConfig { num_layers: 2 * l, ..a.clone() };
            assert_eq!(count_params(&a), count_params(&b));
            let p: ParamStore<f32> = init_params(&ModelConfig { num_layers: l, ..ModelConfig { share_layers: true, ..ModelConfig::tiny(20) } }, 3).unwrap();
            assert_eq!(p.names().iter().filter(|n| n.starts_with("layer.")).count(), 16);
            assert!(p.names().iter().all(|n| !n.starts_with("layer.1")));
        }
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let cfg = ModelConfig::tiny(50);
        let a: ParamStore<f32> = init_params(&cfg, 9).unwrap();
        assert_eq!(a, init_params(&cfg, 9).unwrap());
        assert_ne!(a, init_params(&cfg, 10).unwrap());
        for (name, t) in a.iter() {
            match ParamKind::of(name) {
                ParamKind::Bias => assert!(t.data.iter().all(|&x| x == 0.0), "{name}"),
                ParamKind::Gain => assert!(t.data.iter().all(|&x| x == 1.0), "{name}"),
                ParamKind::Weight => assert!(t.data.iter().all(|&x| x.abs() <= 0.04 / TRUNC_STD as f32 + 1e-6)),
            }
        }
    }

    #[test]
    fn truncated_normal_std() {
        let mut r = rng::derive(123, &[]);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| truncated_normal(&mut r, INIT_STD)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((std - 0.02).abs() < 0.001, "std {std}");
        assert!(mean.abs() < 1e-4);
    }

    #[test]
    fn invalid_head_split() {
        let cfg = ModelConfig { heads: 3, ..ModelConfig::tiny(50) };
        assert!(matches!(init_params::<f32>(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig::albert_base(1234);
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }
}
