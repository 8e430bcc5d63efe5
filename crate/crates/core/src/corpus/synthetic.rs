//! Seeded generator of pseudo-Portuguese documents.
//!
//! Sentences follow a handful of templates with gender agreement between
//! articles, nouns and adjectives, so a small encoder has real structure to
//! learn, and words are drawn from a Zipf-like lexicon so vocabulary
//! statistics look natural. Used for the demo corpus, for statistical tests
//! of the data pipeline and for large-vocabulary tokenizer runs.

use rand::Rng as _;

use super::Document;
use crate::rng;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub documents: usize,
    /// Inclusive range of sentences per document.
    pub sentences: (usize, usize),
    /// Number of distinct stems per open word class.
    pub lexicon: usize,
    /// Zipf exponent for stem sampling.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            documents: 200,
            sentences: (2, 8),
            lexicon: 60,
            zipf: 1.1,
            seed: 7,
        }
    }
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "j", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "lh", "nh",
    "br", "cr", "pr", "tr", "gr", "pl", "bl", "fr", "qu",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "á", "é", "ê", "ó", "ã", "í", "õ", "ô"];
const CODAS: &[&str] = &["", "", "", "", "r", "s", "l", "n", "m"];

fn syllable(rng: &mut rng::Rng) -> String {
    let mut s = String::new();
    s.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
    // Plain vowels dominate.
    let v = if rng.random_bool(0.8) {
        VOWELS[rng.random_range(0..5)]
    } else {
        VOWELS[rng.random_range(5..VOWELS.len())]
    };
    s.push_str(v);
    s.push_str(CODAS[rng.random_range(0..CODAS.len())]);
    s
}

fn stems(n: usize, rng: &mut rng::Rng) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(1..=3);
        let stem: String = (0..syllables).map(|_| syllable(rng)).collect();
        if seen.insert(stem.clone()) {
            out.push(stem);
        }
    }
    out
}

struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|k| {
                acc += 1.0 / (k as f64).powf(s);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        Zipf { cdf }
    }

    fn sample(&self, rng: &mut rng::Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

struct Lexicon {
    nouns: Vec<(String, bool)>,
    verbs: Vec<String>,
    adjectives: Vec<String>,
    names: Vec<String>,
    zipf: Zipf,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl Lexicon {
    fn new(spec: &SyntheticSpec, rng: &mut rng::Rng) -> Self {
        let n = spec.lexicon.max(1);
        let nouns = stems(n, rng)
            .into_iter()
            .map(|s| {
                let fem = rng.random_bool(0.5);
                (s, fem)
            })
            .collect();
        let verbs = stems(n, rng);
        let adjectives = stems(n, rng);
        let names = stems(n.div_ceil(4), rng).iter().map(|s| capitalize(s)).collect();
        Lexicon {
            nouns,
            verbs,
            adjectives,
            names,
            zipf: Zipf::new(n, spec.zipf),
        }
    }

    fn noun_phrase(&self, rng: &mut rng::Rng, with_adj: bool) -> String {
        let (stem, fem) = &self.nouns[self.zipf.sample(rng)];
        let plural = rng.random_bool(0.25);
        let (art, end) = match (fem, plural) {
            (false, false) => ("o", "o"),
            (true, false) => ("a", "a"),
            (false, true) => ("os", "os"),
            (true, true) => ("as", "as"),
        };
        let mut np = format!("{art} {stem}{end}");
        if with_adj {
            let adj = &self.adjectives[self.zipf.sample(rng)];
            np.push_str(&format!(" {adj}{end}"));
        }
        np
    }

    fn verb(&self, rng: &mut rng::Rng) -> String {
        let stem = &self.verbs[self.zipf.sample(rng)];
        let tense = ["a", "ou", "ava", "ará"][rng.random_range(0..4)];
        format!("{stem}{tense}")
    }

    fn sentence(&self, rng: &mut rng::Rng) -> String {
        let body = match rng.random_range(0..5) {
            0 => {
                let (adj_s, adj_o) = (rng.random_bool(0.5), rng.random_bool(0.5));
                let s = self.noun_phrase(rng, adj_s);
                let v = self.verb(rng);
                let o = self.noun_phrase(rng, adj_o);
                format!("{} {v} {o}", capitalize(&s))
            }
            1 => {
                let name = &self.names[rng.random_range(0..self.names.len())];
                let v = self.verb(rng);
                let o = self.noun_phrase(rng, true);
                format!("{name} {v} {o}")
            }
            2 => {
                let s = self.noun_phrase(rng, false);
                let v = self.verb(rng);
                let o = self.noun_phrase(rng, false);
                let p = self.noun_phrase(rng, true);
                let prep = if p.starts_with("a") { "na" } else { "no" };
                let p = p.split_once(' ').map(|(_, rest)| rest.to_string()).unwrap_or(p);
                format!("{} {v} {o} {prep} {p}", capitalize(&s))
            }
            3 => {
                let s = self.noun_phrase(rng, true);
                let v = self.verb(rng);
                format!("Ontem {s} {v}")
            }
            _ => {
                let s = self.noun_phrase(rng, false);
                let v = self.verb(rng);
                let v2 = self.verb(rng);
                let o = self.noun_phrase(rng, false);
                format!("{} {v} e {v2} {o}", capitalize(&s))
            }
        };
        let end = [".", ".", ".", "!", "?"][rng.random_range(0..5)];
        format!("{body}{end}")
    }
}

/// Generates a deterministic corpus for `spec`.
pub fn generate(spec: &SyntheticSpec) -> Vec<Document> {
    let mut rng = rng::derive(spec.seed, &[0]);
    let lexicon = Lexicon::new(spec, &mut rng);
    (0..spec.documents)
        .map(|d| {
            let mut rng = rng::derive(spec.seed, &[1, d as u64]);
            let (lo, hi) = spec.sentences;
            let n = rng.random_range(lo..=hi.max(lo));
            let sentences: Vec<String> = (0..n).map(|_| lexicon.sentence(&mut rng)).collect();
            Document::new(format!("synthetic#{d}"), sentences)
        })
        .collect()
}
