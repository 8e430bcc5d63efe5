//! Desk-scale laboratory for BERT/ALBERT-style language model pipelines.
//!
//! The crate covers the whole path from raw text to evaluated models:
//!
//! * [`corpus`]: normalization, sentence splitting and document ingestion.
//! * [`tokenizer`]: WordPiece and unigram-LM subword vocabularies.
//! * [`pretrain_data`]: MLM + NSP/SO instance generation with whole-word masking.
//! * [`encoder`]: the transformer encoder in both parameterizations, with
//!   hand-written backpropagation and finite-difference verification.
//! * [`training`]: pre-training objectives, the optimizer loop, fine-tuning heads.
//! * [`evaluation`]: metrics, cross-validation protocols and the comparison ledger.
//! * [`pipeline`]: the end-to-end demo wiring every stage together.
//!
//! Data-parallel inner loops go through [`exec::Execution`]; with the
//! `parallel` feature disabled every path runs sequentially and produces
//! bit-identical results.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod pipeline;
pub mod pretrain_data;
pub mod settings;
pub mod tokenizer;
pub mod training;

mod rng;

pub use error::{Error, Result};
pub use exec::Execution;
