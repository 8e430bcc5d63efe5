//! Unigram language-model vocabulary training.
//!
//! Start from a large seed set of frequent substrings, then alternate
//! expectation-maximization over all segmentations of each word with pruning
//! of the pieces whose removal costs the least likelihood, dropping a fixed
//! fraction per round until the target size is reached.

use std::collections::{BTreeSet, HashMap};

use super::{units, TokenizerModel, SPECIAL_TOKENS, WORD_START};
use crate::corpus::Document;
use crate::{Error, Execution, Result};

#[derive(Debug, Clone)]
pub struct UnigramOptions {
    pub max_piece_chars: usize,
    /// Seed vocabulary size as a multiple of the target.
    pub seed_factor: usize,
    /// Fraction of pieces kept per pruning round.
    pub shrink: f64,
    pub em_iters_per_round: usize,
    pub final_em_iters: usize,
    pub exec: Execution,
}

impl Default for UnigramOptions {
    fn default() -> Self {
        UnigramOptions {
            max_piece_chars: 16,
            seed_factor: 10,
            shrink: 0.8,
            em_iters_per_round: 2,
            final_em_iters: 4,
            exec: Execution::default(),
        }
    }
}

/// Corpus log-likelihood at every EM iteration, grouped by round. The piece
/// set is fixed within a round, so each inner list is non-decreasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnigramTrace {
    pub rounds: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
}

struct Corpus {
    words: Vec<Vec<char>>,
    counts: Vec<f64>,
}

fn collect(docs: &[Document]) -> Corpus {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut words = Vec::new();
    let mut counts = Vec::new();
    for doc in docs {
        for sentence in &doc.sentences {
            for unit in units(sentence) {
                let mut s = String::with_capacity(unit.text.len() + 3);
                if !unit.attached {
                    s.push(WORD_START);
                }
                s.push_str(unit.text);
                match index.get(&s) {
                    Some(&i) => counts[i] += 1.0,
                    None => {
                        index.insert(s.clone(), words.len());
                        words.push(s.chars().collect());
                        counts.push(1.0);
                    }
                }
            }
        }
    }
    Corpus { words, counts }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Lattice edges `(start, end, piece)` per word.
type Lattice = Vec<(u32, u32, u32)>;

fn lattices(corpus: &Corpus, pieces: &[String], max_len: usize, exec: Execution) -> Vec<Lattice> {
    let index: HashMap<&str, u32> = pieces.iter().enumerate().map(|(i, p)| (p.as_str(), i as u32)).collect();
    exec.map(&corpus.words, |_, w| {
        let mut edges = Vec::new();
        let mut s = String::new();
        for i in 0..w.len() {
            s.clear();
            for (j, &c) in w.iter().enumerate().skip(i).take(max_len) {
                s.push(c);
                if let Some(&p) = index.get(s.as_str()) {
                    edges.push((i as u32, j as u32 + 1, p));
                }
            }
        }
        edges
    })
}

const CHUNK: usize = 256;

/// E-step: expected piece counts and the corpus log-likelihood.
fn expectation(corpus: &Corpus, lattices: &[Lattice], logp: &[f64], exec: Execution) -> (Vec<f64>, f64) {
    let n_chunks = corpus.words.len().div_ceil(CHUNK);
    let partial = exec.map_range(n_chunks, |c| {
        let mut expected = vec![0.0; logp.len()];
        let mut loglik = 0.0;
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(corpus.words.len());
        for w in lo..hi {
            let n = corpus.words[w].len();
            let edges = &lattices[w];
            let mut alpha = vec![f64::NEG_INFINITY; n + 1];
            alpha[0] = 0.0;
            // Edges are sorted by start, so a forward pass in start order works.
            for &(s, e, p) in edges {
                alpha[e as usize] = log_add(alpha[e as usize], alpha[s as usize] + logp[p as usize]);
            }
            let mut beta = vec![f64::NEG_INFINITY; n + 1];
            beta[n] = 0.0;
            for &(s, e, p) in edges.iter().rev() {
                beta[s as usize] = log_add(beta[s as usize], beta[e as usize] + logp[p as usize]);
            }
            let z = alpha[n];
            if z == f64::NEG_INFINITY {
                continue;
            }
            let count = corpus.counts[w];
            loglik += count * z;
            for &(s, e, p) in edges {
                let post = (alpha[s as usize] + logp[p as usize] + beta[e as usize] - z).exp();
                expected[p as usize] += count * post;
            }
        }
        (expected, loglik)
    });
    let mut expected = vec![0.0; logp.len()];
    let mut loglik = 0.0;
    for (e, l) in partial {
        for (a, b) in expected.iter_mut().zip(e) {
            *a += b;
        }
        loglik += l;
    }
    (expected, loglik)
}

fn maximization(expected: &[f64]) -> Vec<f64> {
    let total: f64 = expected.iter().sum();
    expected
        .iter()
        .map(|&e| if e > 0.0 { (e / total).ln() } else { f64::NEG_INFINITY })
        .collect()
}

/// Best segmentation score of `piece` without using the piece itself.
fn alternative_score(piece: &[char], index: &HashMap<String, usize>, logp: &[f64], max_len: usize) -> f64 {
    let n = piece.len();
    let mut best = vec![f64::NEG_INFINITY; n + 1];
    best[0] = 0.0;
    let mut s = String::new();
    for i in 0..n {
        if best[i] == f64::NEG_INFINITY {
            continue;
        }
        s.clear();
        for j in i..n.min(i + max_len) {
            s.push(piece[j]);
            if i == 0 && j + 1 == n {
                continue;
            }
            if let Some(&p) = index.get(&s) {
                let v = best[i] + logp[p];
                if v > best[j + 1] {
                    best[j + 1] = v;
                }
            }
        }
    }
    best[n]
}

/// Gives pieces that lost all mass a small finite probability, then
/// renormalizes in log space.
fn repair(logp: &mut [f64]) {
    let floor = logp.iter().copied().filter(|l| l.is_finite()).fold(0.0f64, f64::min) - 10.0;
    for l in logp.iter_mut() {
        if !l.is_finite() {
            *l = floor;
        }
    }
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm = max + logp.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for l in logp.iter_mut() {
        *l -= norm;
    }
}

/// Trains a unigram vocabulary with `vocab_size` entries including the
/// special tokens.
pub fn train_unigram(
    docs: &[Document],
    vocab_size: usize,
    opts: &UnigramOptions,
) -> Result<(TokenizerModel, UnigramTrace)> {
    let corpus = collect(docs);
    if corpus.words.is_empty() {
        return Err(Error::Data("cannot train a tokenizer on an empty corpus".into()));
    }
    let alphabet: BTreeSet<char> = corpus.words.iter().flatten().copied().collect();
    let target = vocab_size.saturating_sub(SPECIAL_TOKENS.len());
    if target < alphabet.len() {
        return Err(Error::Config(format!(
            "vocab size {vocab_size} is below specials + alphabet ({})",
            SPECIAL_TOKENS.len() + alphabet.len()
        )));
    }
    let max_len = opts.max_piece_chars.max(1);

    // Seed pieces: every substring up to max_len, scored by frequency x length.
    let mut freq: HashMap<String, f64> = HashMap::new();
    for (w, &count) in corpus.words.iter().zip(&corpus.counts) {
        for i in 0..w.len() {
            let mut s = String::new();
            for &c in w.iter().skip(i).take(max_len) {
                s.push(c);
                *freq.entry(s.clone()).or_insert(0.0) += count;
            }
        }
    }
    let mut pieces: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut candidates: Vec<(&String, f64)> = freq
        .iter()
        .filter(|(s, _)| s.chars().nth(1).is_some())
        .map(|(s, &f)| (s, f * s.chars().count() as f64))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let seed_size = (target * opts.seed_factor.max(1)).max(target);
    pieces.extend(
        candidates
            .iter()
            .take(seed_size.saturating_sub(pieces.len()))
            .map(|(s, _)| (*s).clone()),
    );
    let undersized = pieces.len() < target;
    let mut required: Vec<bool> = pieces.iter().map(|p| p.chars().count() == 1).collect();
    let total: f64 = pieces.iter().map(|p| freq[p]).sum();
    let mut logp: Vec<f64> = pieces.iter().map(|p| (freq[p] / total).ln()).collect();

    let mut trace = UnigramTrace::default();
    loop {
        let lat = lattices(&corpus, &pieces, max_len, opts.exec);
        let done = pieces.len() <= target;
        let iters = if done { opts.final_em_iters } else { opts.em_iters_per_round };
        let mut round = Vec::with_capacity(iters + 1);
        let mut expected = Vec::new();
        for it in 0..=iters {
            let (e, ll) = expectation(&corpus, &lat, &logp, opts.exec);
            round.push(ll);
            if it < iters {
                logp = maximization(&e);
            }
            expected = e;
        }
        trace.rounds.push(round);
        trace.sizes.push(pieces.len());
        if done {
            break;
        }

        // Prune: rank by likelihood lost when a piece is replaced by its best
        // alternative segmentation.
        let index: HashMap<String, usize> = pieces.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        let loss: Vec<f64> = opts.exec.map(&pieces, |i, p| {
            if required[i] {
                return f64::INFINITY;
            }
            if expected[i] <= 0.0 || logp[i] == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let chars: Vec<char> = p.chars().collect();
            let alt = alternative_score(&chars, &index, &logp, max_len);
            expected[i] * (logp[i] - alt)
        });
        let keep = ((pieces.len() as f64 * opts.shrink).floor() as usize).max(target);
        let mut order: Vec<usize> = (0..pieces.len()).collect();
        order.sort_by(|&a, &b| loss[b].total_cmp(&loss[a]).then_with(|| pieces[a].cmp(&pieces[b])));
        let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
        kept.sort_unstable();
        pieces = kept.iter().map(|&i| pieces[i].clone()).collect();
        required = kept.iter().map(|&i| required[i]).collect();
        logp = kept.iter().map(|&i| logp[i]).collect();
        repair(&mut logp);
    }

    repair(&mut logp);
    let mut ranked: Vec<(String, f64)> = pieces.into_iter().zip(logp).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut model = TokenizerModel::unigram(ranked)?;
    model.undersized = undersized;
    Ok((model, trace))
}
