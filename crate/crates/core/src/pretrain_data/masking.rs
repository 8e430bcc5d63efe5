use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::MaskPolicy;
use crate::rng::{self, Rng};
use crate::tokenizer::{SpecialIds, SPECIAL_TOKENS};

/// Masking parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Masking {
    pub rate: f64,
    pub policy: MaskPolicy,
    pub max_predictions: usize,
    /// Vocabulary size, for the random-token branch of 80/10/10.
    pub vocab_size: usize,
}

impl Masking {
    pub fn literal(rate: f64, vocab_size: usize) -> Self {
        Masking {
            rate,
            policy: MaskPolicy::Literal,
            max_predictions: usize::MAX,
            vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskOutput {
    pub ids: Vec<u32>,
    /// Sorted.
    pub positions: Vec<u32>,
    /// Original ids at `positions`.
    pub labels: Vec<u32>,
}

/// Whole-word masking with an explicit rng.
///
/// `words` are the token spans of each word in the maskable region. Words are
/// visited in random order and taken whole while they fit, until
/// `round(rate * maskable)` positions (capped at `max_predictions`) are
/// covered; a word that would overshoot is skipped.
pub fn mask_tokens_with(ids: &[u32], words: &[Range<usize>], cfg: &Masking, rng: &mut Rng) -> MaskOutput {
    let maskable: usize = words.iter().map(|w| w.len()).sum();
    let target = ((cfg.rate * maskable as f64).round() as usize).min(cfg.max_predictions);
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.shuffle(rng);
    let mut positions = Vec::with_capacity(target);
    for w in order {
        if positions.len() >= target {
            break;
        }
        let span = &words[w];
        if span.is_empty() || positions.len() + span.len() > target {
            continue;
        }
        positions.extend(span.clone());
    }
    positions.sort_unstable();

    let mut out = ids.to_vec();
    let labels: Vec<u32> = positions.iter().map(|&p| ids[p]).collect();
    let first_regular = SPECIAL_TOKENS.len() as u32;
    for &p in &positions {
        out[p] = match cfg.policy {
            MaskPolicy::Literal => SpecialIds::FIXED.mask,
            MaskPolicy::Bert801010 => {
                let u: f64 = rng.random();
                if u < 0.8 {
                    SpecialIds::FIXED.mask
                } else if u < 0.9 && cfg.vocab_size as u32 > first_regular {
                    rng.random_range(first_regular..cfg.vocab_size as u32)
                } else {
                    ids[p]
                }
            }
        };
    }
    MaskOutput {
        ids: out,
        positions: positions.into_iter().map(|p| p as u32).collect(),
        labels,
    }
}

/// Whole-word masking seeded from `seed`.
pub fn mask_tokens(ids: &[u32], words: &[Range<usize>], cfg: &Masking, seed: u64) -> MaskOutput {
    let mut rng = rng::derive(seed, &[]);
    mask_tokens_with(ids, words, cfg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_piece_words(n: usize, offset: usize) -> Vec<Range<usize>> {
        (0..n).map(|i| offset + i..offset + i + 1).collect()
    }

    #[test]
    fn twenty_words_three_masks() {
        let ids: Vec<u32> = (0..22).map(|i| 100 + i).collect();
        let words = single_piece_words(20, 1);
        let out = mask_tokens(&ids, &words, &Masking::literal(0.15, 200), 5);
        assert_eq!(out.positions.len(), 3);
        for (&p, &l) in out.positions.iter().zip(&out.labels) {
            assert_eq!(out.ids[p as usize], SpecialIds::FIXED.mask);
            assert_eq!(l, ids[p as usize]);
        }
        assert!(out.positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn nothing_maskable() {
        let ids = [2, 3, 3];
        let out = mask_tokens(&ids, &[], &Masking::literal(0.15, 10), 1);
        assert!(out.positions.is_empty());
        assert_eq!(out.ids, ids);
    }

    #[test]
    fn whole_words_only() {
        let ids: Vec<u32> = (0..40).map(|i| 10 + i).collect();
        let words: Vec<Range<usize>> = (0..10).map(|w| 1 + w * 3..1 + w * 3 + 3).collect();
        for seed in 0..200 {
            let out = mask_tokens(&ids, &words, &Masking::literal(0.2, 100), seed);
            // round(0.2 * 30) = 6 = two whole words.
            assert_eq!(out.positions.len(), 6);
            for w in &words {
                let hit = w.clone().filter(|p| out.positions.contains(&(*p as u32))).count();
                assert!(hit == 0 || hit == w.len());
            }
        }
    }

    #[test]
    fn mean_count_over_ten_thousand_sequences() {
        // Length-100 maskable region of single-piece words: round(15.0) = 15
        // every time, so the mean is exactly 15.
        let ids: Vec<u32> = (0..102).map(|i| 10 + i).collect();
        let words = single_piece_words(100, 1);
        let total: usize = (0..10_000u64)
            .map(|s| mask_tokens(&ids, &words, &Masking::literal(0.15, 200), s).positions.len())
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 15.0).abs() <= 0.5, "{mean}");
    }

    #[test]
    fn bert_policy_split() {
        let ids: Vec<u32> = (0..1002).map(|i| 10 + (i % 50)).collect();
        let words = single_piece_words(1000, 1);
        let cfg = Masking {
            rate: 0.15,
            policy: MaskPolicy::Bert801010,
            max_predictions: usize::MAX,
            vocab_size: 60,
        };
        let (mut masked, mut kept, mut total) = (0, 0, 0);
        for seed in 0..200 {
            let out = mask_tokens(&ids, &words, &cfg, seed);
            for (&p, &l) in out.positions.iter().zip(&out.labels) {
                total += 1;
                let now = out.ids[p as usize];
                if now == SpecialIds::FIXED.mask {
                    masked += 1;
                } else if now == l {
                    kept += 1;
                }
                assert!(now < 60);
            }
        }
        let m = masked as f64 / total as f64;
        // Random replacement can coincide with the original, so "kept" is
        // slightly above 10%.
        let k = kept as f64 / total as f64;
        assert!((m - 0.8).abs() < 0.01, "{m}");
        assert!((0.095..0.115).contains(&k), "{k}");
    }
}
