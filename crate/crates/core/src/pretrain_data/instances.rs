use std::ops::Range;

use super::{max_predictions, pair_segments, MaskPolicy, Masking, Objective, PretrainInstance};
use crate::corpus::Document;
use crate::tokenizer::{SpecialIds, TokenizerModel};
use crate::{rng, Error, Execution, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub max_len: usize,
    pub objective: Objective,
    pub mask_policy: MaskPolicy,
    pub mask_rate: f64,
    pub seed: u64,
}

impl InstanceConfig {
    pub fn new(max_len: usize, objective: Objective, seed: u64) -> Self {
        InstanceConfig {
            max_len,
            objective,
            mask_policy: MaskPolicy::Literal,
            mask_rate: 0.15,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceReport {
    pub instances: Vec<PretrainInstance>,
    /// Token spans of every word, per instance (CLS/SEP excluded).
    pub word_spans: Vec<Vec<Range<usize>>>,
    /// Pairs dropped because a segment was empty.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
struct TokSentence {
    ids: Vec<u32>,
    word_ids: Vec<usize>,
}

/// A segment under construction: ids with a word index per id.
#[derive(Debug, Clone, Default, PartialEq)]
struct Segment {
    ids: Vec<u32>,
    words: Vec<usize>,
}

fn flatten(sentences: &[TokSentence], next_word: &mut usize) -> Segment {
    let mut seg = Segment::default();
    for s in sentences {
        let base = *next_word;
        let mut max = None;
        for (&id, &w) in s.ids.iter().zip(&s.word_ids) {
            seg.ids.push(id);
            seg.words.push(base + w);
            max = Some(max.map_or(w, |m: usize| m.max(w)));
        }
        *next_word = base + max.map_or(0, |m| m + 1);
    }
    seg
}

/// Longest-first truncation, one token at a time from the end of the longer
/// segment (B on ties), until `a + b <= budget`. Returns tokens removed from
/// each side.
pub fn truncate_pair<T>(a: &mut Vec<T>, b: &mut Vec<T>, budget: usize) -> (usize, usize) {
    let (mut ra, mut rb) = (0, 0);
    while a.len() + b.len() > budget {
        if a.len() > b.len() {
            a.pop();
            ra += 1;
        } else {
            b.pop();
            rb += 1;
        }
    }
    (ra, rb)
}

fn spans(words: &[usize], offset: usize) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = Vec::new();
    for (i, &w) in words.iter().enumerate() {
        match out.last_mut() {
            Some(last) if i > 0 && words[i - 1] == w => last.end = offset + i + 1,
            _ => out.push(offset + i..offset + i + 1),
        }
    }
    out
}

/// Builds MLM + pair-objective instances from documents.
///
/// Instances come out in document order, and within a document in chunk
/// order, regardless of `exec`.
pub fn build_instances(
    docs: &[Document],
    tokenizer: &TokenizerModel,
    cfg: &InstanceConfig,
    exec: Execution,
) -> Result<InstanceReport> {
    if cfg.max_len < 16 {
        return Err(Error::Config(format!("max_len {} is below 16", cfg.max_len)));
    }
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate < 1.0) {
        return Err(Error::Config(format!("mask rate {} is outside (0, 1)", cfg.mask_rate)));
    }
    let tokenized: Vec<Vec<TokSentence>> = exec.map(docs, |_, d| {
        d.sentences
            .iter()
            .map(|s| {
                let e = tokenizer.encode_with_words(s);
                TokSentence {
                    ids: e.ids,
                    word_ids: e.word_ids,
                }
            })
            .collect()
    });
    let budget = cfg.max_len - 3;
    let pairs = pair_segments(&tokenized, cfg.objective, budget, |s| s.ids.len(), cfg.seed, exec)?;
    let masking = Masking {
        rate: cfg.mask_rate,
        policy: cfg.mask_policy,
        max_predictions: max_predictions(cfg.max_len),
        vocab_size: tokenizer.len(),
    };
    let sp = SpecialIds::FIXED;
    let built = exec.map(&pairs, |i, pair| {
        let mut next_word = 0;
        let mut a = flatten(&pair.a, &mut next_word);
        let mut b = flatten(&pair.b, &mut next_word);
        truncate_pair(&mut a.ids, &mut b.ids, budget);
        a.words.truncate(a.ids.len());
        b.words.truncate(b.ids.len());
        if a.ids.is_empty() || b.ids.is_empty() {
            return None;
        }
        let mut ids = Vec::with_capacity(a.ids.len() + b.ids.len() + 3);
        ids.push(sp.cls);
        ids.extend(&a.ids);
        ids.push(sp.sep);
        ids.extend(&b.ids);
        ids.push(sp.sep);
        let mut segment_ids = vec![0u8; a.ids.len() + 2];
        segment_ids.resize(ids.len(), 1);
        let mut words = spans(&a.words, 1);
        words.extend(spans(&b.words, a.ids.len() + 2));
        let mut rng = rng::derive(cfg.seed, &[u64::MAX, i as u64]);
        let m = super::mask_tokens_with(&ids, &words, &masking, &mut rng);
        Some((
            PretrainInstance {
                token_ids: m.ids,
                segment_ids,
                masked_positions: m.positions,
                masked_labels: m.labels,
                pair_label: pair.label,
                max_len: cfg.max_len,
            },
            words,
        ))
    });
    let mut report = InstanceReport::default();
    for b in built {
        match b {
            Some((inst, words)) => {
                report.instances.push(inst);
                report.word_spans.push(words);
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}

/// Checks the structural invariants of an instance; returns a description
/// of the first violation.
pub fn check_instance(inst: &PretrainInstance, words: &[Range<usize>]) -> Result<(), String> {
    let sp = SpecialIds::FIXED;
    let n = inst.token_ids.len();
    if n > inst.max_len {
        return Err(format!("length {n} exceeds {}", inst.max_len));
    }
    if inst.segment_ids.len() != n {
        return Err("segment ids misaligned".into());
    }
    if inst.token_ids.first() != Some(&sp.cls) {
        return Err("first token is not CLS".into());
    }
    let seps: Vec<usize> = (0..n)
        .filter(|&i| inst.token_ids[i] == sp.sep && !inst.masked_positions.contains(&(i as u32)))
        .collect();
    if seps.len() != 2 || seps[1] != n - 1 {
        return Err(format!("expected two SEP tokens, one at the end, got {seps:?}"));
    }
    for (i, &s) in inst.segment_ids.iter().enumerate() {
        let want = u8::from(i > seps[0]);
        if s != want {
            return Err(format!("segment id {s} at {i}"));
        }
    }
    if inst.masked_positions.len() != inst.masked_labels.len() {
        return Err("masked labels misaligned".into());
    }
    if !inst.masked_positions.windows(2).all(|w| w[0] < w[1]) {
        return Err("masked positions not sorted".into());
    }
    for &p in &inst.masked_positions {
        if p == 0 || p as usize == seps[0] || p as usize == seps[1] {
            return Err(format!("masked special position {p}"));
        }
    }
    let maskable: usize = words.iter().map(|w| w.len()).sum();
    if maskable != inst.maskable() {
        return Err("word spans do not cover the maskable region".into());
    }
    for w in words {
        let hit = w
            .clone()
            .filter(|&p| inst.masked_positions.binary_search(&(p as u32)).is_ok())
            .count();
        if hit != 0 && hit != w.len() {
            return Err(format!("partially masked word {w:?}"));
        }
    }
    Ok(())
}
