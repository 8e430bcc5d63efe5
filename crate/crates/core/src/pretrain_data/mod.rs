//! Pre-training instances for MLM + NSP (BERT) and MLM + SO (ALBERT).
//!
//! Documents are tokenized, consecutive sentences are packed into segment
//! pairs, pairs are truncated to the sequence budget and whole words are
//! masked. Every random choice comes from a stream derived from the run seed
//! and the document/pair index, so serial and parallel runs agree exactly.

mod instances;
mod masking;
mod pairing;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use instances::{build_instances, check_instance, truncate_pair, InstanceConfig, InstanceReport};
pub use masking::{mask_tokens, mask_tokens_with, MaskOutput, Masking};
pub use pairing::{nsp_pair, pair_segments, pair_sentences, so_pair, SegmentPair};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Next sentence prediction: is B the true continuation of A?
    Nsp,
    /// Sentence ordering: are A and B in their original order?
    So,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nsp" => Ok(Objective::Nsp),
            "so" => Ok(Objective::So),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Positive,
    Negative,
}

impl PairLabel {
    pub fn index(self) -> usize {
        match self {
            PairLabel::Positive => 0,
            PairLabel::Negative => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            PairLabel::Positive => PairLabel::Negative,
            PairLabel::Negative => PairLabel::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MaskPolicy {
    /// Every selected position becomes `[MASK]`.
    #[default]
    #[serde(rename = "literal")]
    Literal,
    /// 80% `[MASK]`, 10% random token, 10% unchanged.
    #[serde(rename = "80-10-10")]
    Bert801010,
}

impl std::str::FromStr for MaskPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(MaskPolicy::Literal),
            "80-10-10" | "bert_80_10_10" => Ok(MaskPolicy::Bert801010),
            other => Err(Error::Config(format!("unknown mask policy {other:?}"))),
        }
    }
}

/// One training example. Serialized as a JSON object per line with the
/// fields below (see the README for the schema).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainInstance {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub masked_positions: Vec<u32>,
    pub masked_labels: Vec<u32>,
    pub pair_label: PairLabel,
    pub max_len: usize,
}

impl PretrainInstance {
    /// Number of positions that could be masked (everything but CLS/SEP).
    pub fn maskable(&self) -> usize {
        self.token_ids.len().saturating_sub(3)
    }
}

/// Label-buffer cap per instance: 20 at length 128, 77 at 512, otherwise
/// `ceil(0.15 * (max_len - 3))`.
pub fn max_predictions(max_len: usize) -> usize {
    match max_len {
        128 => 20,
        512 => 77,
        n => (0.15 * n.saturating_sub(3) as f64).ceil() as usize,
    }
}

pub fn write_jsonl<W: Write>(instances: &[PretrainInstance], mut out: W) -> Result<()> {
    for inst in instances {
        let line = serde_json::to_string(inst).map_err(|e| Error::format("instance", e.to_string()))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::format("instance file", e.to_string()))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<PretrainInstance>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::format("instance file", e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format("instance file", format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}
