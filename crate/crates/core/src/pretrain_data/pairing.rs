use rand::Rng as _;

use super::{Objective, PairLabel};
use crate::corpus::Document;
use crate::{rng, Error, Execution, Result};

/// Two segments (each a run of consecutive sentences) and the pair label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPair<S> {
    pub a: Vec<S>,
    pub b: Vec<S>,
    pub label: PairLabel,
    /// Index of the document segment A came from.
    pub doc: usize,
}

/// Sentence-order pair: consecutive segments in order, or swapped.
pub fn so_pair<S: Clone>(chunk: &[S], a_end: usize, swap: bool) -> SegmentPair<S> {
    let (a, b) = (chunk[..a_end].to_vec(), chunk[a_end..].to_vec());
    if swap {
        SegmentPair {
            a: b,
            b: a,
            label: PairLabel::Negative,
            doc: 0,
        }
    } else {
        SegmentPair {
            a,
            b,
            label: PairLabel::Positive,
            doc: 0,
        }
    }
}

/// Next-sentence pair: the true continuation, or `random_b` from elsewhere.
pub fn nsp_pair<S: Clone>(chunk: &[S], a_end: usize, random_b: Option<Vec<S>>) -> SegmentPair<S> {
    let a = chunk[..a_end].to_vec();
    match random_b {
        Some(b) => SegmentPair {
            a,
            b,
            label: PairLabel::Negative,
            doc: 0,
        },
        None => SegmentPair {
            a,
            b: chunk[a_end..].to_vec(),
            label: PairLabel::Positive,
            doc: 0,
        },
    }
}

/// Packs consecutive sentences into chunks of at least `target_len` (as
/// measured by `len_of`) and at least two sentences. A trailing single
/// sentence joins the previous chunk.
fn chunks<S>(sentences: &[S], target_len: usize, len_of: &impl Fn(&S) -> usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    let mut len = 0;
    for (i, s) in sentences.iter().enumerate() {
        len += len_of(s);
        if i + 1 - start >= 2 && len >= target_len {
            out.push(start..i + 1);
            start = i + 1;
            len = 0;
        }
    }
    if start < sentences.len() {
        match out.last_mut() {
            Some(last) if sentences.len() - start < 2 => last.end = sentences.len(),
            _ if sentences.len() - start >= 2 => out.push(start..sentences.len()),
            _ => {}
        }
    }
    out
}

/// Builds segment pairs from documents of sentences.
///
/// Each chunk is split at a random sentence boundary. With probability 0.5
/// the pair is positive. NSP negatives replace B with sentences drawn from a
/// uniformly chosen different document; SO negatives swap A and B.
/// Single-sentence documents yield no pairs but can serve as NSP partners.
pub fn pair_segments<S, F>(
    docs: &[Vec<S>],
    objective: Objective,
    target_len: usize,
    len_of: F,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SegmentPair<S>>>
where
    S: Clone + Send + Sync,
    F: Fn(&S) -> usize + Sync + Send,
{
    if objective == Objective::Nsp && docs.len() < 2 {
        return Err(Error::Data(
            "next-sentence pairs need at least two documents for random partners".into(),
        ));
    }
    let per_doc = exec.map(docs, |d, sentences| {
        let mut rng = rng::derive(seed, &[d as u64]);
        let mut pairs = Vec::new();
        for range in chunks(sentences, target_len, &len_of) {
            let chunk = &sentences[range];
            let a_end = if chunk.len() == 2 { 1 } else { rng.random_range(1..chunk.len()) };
            let positive = rng.random_bool(0.5);
            let mut pair = match objective {
                Objective::So => so_pair(chunk, a_end, !positive),
                Objective::Nsp => {
                    let random_b = (!positive).then(|| {
                        let a_len: usize = chunk[..a_end].iter().map(&len_of).sum();
                        let want = target_len.saturating_sub(a_len).max(1);
                        let mut other = rng.random_range(0..docs.len() - 1);
                        if other >= d {
                            other += 1;
                        }
                        let partner = &docs[other];
                        let mut b = Vec::new();
                        if !partner.is_empty() {
                            let start = rng.random_range(0..partner.len());
                            let mut got = 0;
                            for s in &partner[start..] {
                                got += len_of(s);
                                b.push(s.clone());
                                if got >= want {
                                    break;
                                }
                            }
                        }
                        b
                    });
                    nsp_pair(chunk, a_end, random_b)
                }
            };
            pair.doc = d;
            pairs.push(pair);
        }
        pairs
    });
    Ok(per_doc.into_iter().flatten().collect())
}

/// Sentence-level pairing: every two consecutive sentences form a chunk.
pub fn pair_sentences(docs: &[Document], objective: Objective, seed: u64) -> Result<Vec<SegmentPair<String>>> {
    let sentences: Vec<Vec<String>> = docs.iter().map(|d| d.sentences.clone()).collect();
    pair_segments(&sentences, objective, 0, |_| 1, seed, Execution::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_branches() {
        let doc = ["A", "B"];
        let p = so_pair(&doc, 1, true);
        assert_eq!((p.a, p.b, p.label), (vec!["B"], vec!["A"], PairLabel::Negative));
        let p = nsp_pair(&doc, 1, None);
        assert_eq!((p.a, p.b, p.label), (vec!["A"], vec!["B"], PairLabel::Positive));
        let p = nsp_pair(&doc, 1, Some(vec!["Z"]));
        assert_eq!((p.a, p.b, p.label), (vec!["A"], vec!["Z"], PairLabel::Negative));
    }

    #[test]
    fn chunking() {
        let s = [3usize, 3, 3, 3, 3];
        assert_eq!(chunks(&s, 5, &|x| *x), vec![0..2, 2..5]);
        assert_eq!(chunks(&s, 0, &|x| *x), vec![0..2, 2..5]);
        assert_eq!(chunks(&[1usize], 0, &|x| *x), Vec::<std::ops::Range<usize>>::new());
        assert_eq!(chunks(&s, 100, &|x| *x), vec![0..5]);
    }

    #[test]
    fn nsp_needs_two_documents() {
        let docs = vec![Document::new("a", ["A.", "B."])];
        assert!(matches!(pair_sentences(&docs, Objective::Nsp, 1), Err(Error::Data(_))));
        assert_eq!(pair_sentences(&docs, Objective::So, 1).unwrap().len(), 1);
    }

    #[test]
    fn nsp_partner_from_other_document() {
        let docs: Vec<Document> = (0..20)
            .map(|d| Document::new(format!("{d}"), (0..4).map(|s| format!("d{d}s{s}"))))
            .collect();
        let pairs = pair_sentences(&docs, Objective::Nsp, 3).unwrap();
        for p in &pairs {
            let own = format!("d{}s", p.doc);
            assert!(p.a.iter().all(|s| s.starts_with(&own)));
            match p.label {
                PairLabel::Positive => assert!(p.b.iter().all(|s| s.starts_with(&own))),
                PairLabel::Negative => assert!(p.b.iter().all(|s| !s.starts_with(&own))),
            }
        }
    }

    #[test]
    fn so_negatives_are_transpositions() {
        let docs: Vec<Document> = (0..30)
            .map(|d| Document::new(format!("{d}"), (0..5).map(|s| format!("d{d}s{s}"))))
            .collect();
        for p in pair_sentences(&docs, Objective::So, 9).unwrap() {
            let (first, second) = match p.label {
                PairLabel::Positive => (&p.a, &p.b),
                PairLabel::Negative => (&p.b, &p.a),
            };
            let joined: Vec<&String> = first.iter().chain(second.iter()).collect();
            let idx: Vec<usize> = joined.iter().map(|s| s[s.find('s').unwrap() + 1..].parse().unwrap()).collect();
            assert!(idx.windows(2).all(|w| w[1] == w[0] + 1), "{idx:?}");
        }
    }

    #[test]
    fn balance_over_ten_thousand_pairs() {
        let docs: Vec<Document> = (0..5000)
            .map(|d| Document::new(format!("{d}"), (0..4).map(|s| format!("d{d}s{s}"))))
            .collect();
        for objective in [Objective::Nsp, Objective::So] {
            let pairs = pair_sentences(&docs, objective, 42).unwrap();
            assert!(pairs.len() >= 10_000);
            let pos = pairs.iter().filter(|p| p.label == PairLabel::Positive).count();
            let frac = pos as f64 / pairs.len() as f64;
            assert!((0.48..=0.52).contains(&frac), "{objective:?} {frac}");
        }
    }
}
