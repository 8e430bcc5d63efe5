//! End-to-end demo: ingest → vocab → pretrain-data → pretrain → finetune → eval
//! on the bundled toy corpus, with an acceptance threshold per stage.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::{self, Document, NormalizationPolicy};
use crate::encoder::ModelConfig;
use crate::evaluation::{cross_validate, stratified_kfold, FoldPredictions, Gold, MetricReport, Metrics};
use crate::pretrain_data::{self, build_instances, check_instance, InstanceConfig, Objective, PairLabel};
use crate::tokenizer::{self, Algorithm, TokenizerModel};
use crate::training::{self, FinetuneOptions, Label, LossTrace, Prediction, TaskExample, TaskKind, TaskSpec, TrainHyper};
use crate::{Error, Execution};

/// Raw text files of the toy corpus, as `(file name, contents)`.
pub const TOY_CORPUS: [(&str, &str); 4] = [
    ("part1.txt", include_str!("../../../fixtures/toy_corpus/part1.txt")),
    ("part2.txt", include_str!("../../../fixtures/toy_corpus/part2.txt")),
    ("part3.txt", include_str!("../../../fixtures/toy_corpus/part3.txt")),
    ("part4.txt", include_str!("../../../fixtures/toy_corpus/part4.txt")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Vocab,
    PretrainData,
    Pretrain,
    Finetune,
    Eval,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Vocab => "vocab",
            Stage::PretrainData => "pretrain-data",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Eval => "eval",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {detail}")]
pub struct StageError {
    pub stage: Stage,
    pub detail: String,
    /// Set when the stage failed on a configuration problem.
    pub config: bool,
}

impl StageError {
    fn threshold(stage: Stage, detail: String) -> Self {
        StageError {
            stage,
            detail,
            config: false,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| {
            let mut detail = e.to_string();
            let mut cause = std::error::Error::source(&e);
            while let Some(c) = cause {
                detail.push_str(&format!(": {c}"));
                cause = c.source();
            }
            StageError {
                stage,
                config: e.is_config(),
                detail,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub objective: Objective,
    /// Passes over the corpus with different masking/pairing seeds.
    pub dupe_factor: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub pretrain: TrainHyper,
    pub finetune: TrainHyper,
    pub folds: usize,
    /// Minimum mean cross-validated accuracy on the demo task.
    pub min_accuracy: f64,
    /// Final MLM loss must fall below this fraction of `ln V`.
    pub max_loss_ratio: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 17,
            vocab_size: 500,
            max_len: 32,
            objective: Objective::So,
            dupe_factor: 2,
            hidden: 64,
            layers: 2,
            heads: 4,
            pretrain: TrainHyper {
                learning_rate: 2e-3,
                warmup_steps: 50,
                total_steps: 500,
                batch_size: 16,
                ..TrainHyper::default()
            },
            finetune: TrainHyper {
                learning_rate: 2e-3,
                warmup_steps: 10,
                total_steps: 150,
                batch_size: 16,
                ..TrainHyper::default()
            },
            folds: 5,
            min_accuracy: 0.9,
            max_loss_ratio: 0.8,
        }
    }
}

impl DemoConfig {
    pub fn with_seed(seed: u64) -> Self {
        DemoConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn model(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn_inner: 4 * self.hidden,
            vocab_size,
            max_positions: self.max_len.max(64),
            embed_dim: self.hidden,
            share_layers: false,
            project_embeddings: false,
            type_vocab: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub seed: u64,
    pub documents: usize,
    pub sentences: usize,
    pub vocab_size: usize,
    pub instances: usize,
    pub masked_fraction: f64,
    pub positive_fraction: f64,
    pub initial_mlm: f64,
    pub final_mlm: f64,
    pub ln_vocab: f64,
    pub task_examples: usize,
    pub metrics: MetricReport,
    pub artifacts: Vec<PathBuf>,
}

impl DemoReport {
    /// Deterministic text rendering: same seed, same bytes.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "[ingest] documents={} sentences={}", self.documents, self.sentences);
        let _ = writeln!(s, "[vocab] wordpiece size={}", self.vocab_size);
        let _ = writeln!(
            s,
            "[pretrain-data] instances={} masked_fraction={:.6} positive_fraction={:.6}",
            self.instances, self.masked_fraction, self.positive_fraction
        );
        let _ = writeln!(
            s,
            "[pretrain] mlm_first={:.6} mlm_final={:.6} ln_v={:.6} ratio={:.6}",
            self.initial_mlm,
            self.final_mlm,
            self.ln_vocab,
            self.final_mlm / self.ln_vocab
        );
        let _ = writeln!(s, "[finetune] task={} examples={}", self.metrics.task, self.task_examples);
        if let Some(per) = &self.metrics.per_fold {
            for (i, m) in per.iter().enumerate() {
                let _ = writeln!(s, "[eval] fold {i}: {}", metrics_line(m));
            }
        }
        let _ = writeln!(s, "[eval] mean: {}", metrics_line(&self.metrics.metrics));
        s
    }
}

fn metrics_line(m: &Metrics) -> String {
    m.named()
        .iter()
        .map(|(k, v)| match v {
            Some(v) => format!("{k}={v:.6}"),
            None => format!("{k}=undefined"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Moving-average window used to judge the final pre-training loss.
const LOSS_WINDOW: usize = 50;

/// Runs the demo. With `out_dir` set, every intermediate artifact and the
/// final report are written there.
pub fn run_demo(cfg: &DemoConfig, out_dir: Option<&Path>, exec: Execution) -> Result<DemoReport, StageError> {
    let mut artifacts = Vec::new();

    // ingest
    let docs: Vec<Document> = {
        let policy = NormalizationPolicy::default();
        let mut docs = Vec::new();
        for (name, text) in TOY_CORPUS {
            docs.extend(corpus::ingest_str(name, text, &policy).documents);
        }
        docs
    };
    let sentences: usize = docs.iter().map(|d| d.sentences.len()).sum();
    if docs.len() < 100 {
        return Err(StageError::threshold(Stage::Ingest, format!("only {} documents", docs.len())));
    }
    let mut buf = Vec::new();
    corpus::write_corpus(&docs, &mut buf).map_err(|e| Error::io("corpus.txt", e)).at(Stage::Ingest)?;
    emit(out_dir, &mut artifacts, "corpus.txt", &buf, Stage::Ingest)?;

    // vocab
    let tok = tokenizer::train(Algorithm::WordPiece, &docs, cfg.vocab_size).at(Stage::Vocab)?;
    check_round_trip(&tok, &docs)?;
    let mut buf = Vec::new();
    tok.write_vocab(&mut buf).map_err(|e| Error::io("vocab.txt", e)).at(Stage::Vocab)?;
    emit(out_dir, &mut artifacts, "vocab.txt", &buf, Stage::Vocab)?;

    // pretrain-data
    let mut instances = Vec::new();
    let (mut masked, mut maskable) = (0usize, 0usize);
    for pass in 0..cfg.dupe_factor.max(1) {
        let seed = rand::RngCore::next_u64(&mut crate::rng::derive(cfg.seed, &[0xda7a, pass as u64]));
        let ic = InstanceConfig::new(cfg.max_len, cfg.objective, seed);
        let report = build_instances(&docs, &tok, &ic, exec).at(Stage::PretrainData)?;
        for (inst, words) in report.instances.iter().zip(&report.word_spans) {
            check_instance(inst, words)
                .map_err(|e| StageError::threshold(Stage::PretrainData, e))?;
            masked += inst.masked_positions.len();
            maskable += inst.maskable();
        }
        instances.extend(report.instances);
    }
    if instances.is_empty() {
        return Err(StageError::threshold(Stage::PretrainData, "no instances".into()));
    }
    let masked_fraction = masked as f64 / maskable as f64;
    let positive_fraction =
        instances.iter().filter(|i| i.pair_label == PairLabel::Positive).count() as f64 / instances.len() as f64;
    if (masked_fraction - 0.15).abs() > 0.03 {
        return Err(StageError::threshold(
            Stage::PretrainData,
            format!("masked fraction {masked_fraction:.4} outside 0.15 ± 0.03"),
        ));
    }
    if (positive_fraction - 0.5).abs() > 0.1 {
        return Err(StageError::threshold(
            Stage::PretrainData,
            format!("positive pair fraction {positive_fraction:.4} outside 0.5 ± 0.1"),
        ));
    }
    let mut buf = Vec::new();
    pretrain_data::write_jsonl(&instances, &mut buf).at(Stage::PretrainData)?;
    emit(out_dir, &mut artifacts, "instances.jsonl", &buf, Stage::PretrainData)?;

    // pretrain
    let model = cfg.model(tok.len());
    let hyper = TrainHyper {
        seed: cfg.seed,
        ..cfg.pretrain.clone()
    };
    let (trainer, trace) = training::pretrain(&model, &instances, &hyper, exec).at(Stage::Pretrain)?;
    let (initial_mlm, final_mlm) = loss_summary(&trace);
    let ln_vocab = (tok.len() as f64).ln();
    if final_mlm.is_nan() || final_mlm >= cfg.max_loss_ratio * ln_vocab {
        return Err(StageError::threshold(
            Stage::Pretrain,
            format!(
                "final MLM loss {final_mlm:.4} not below {} × ln V = {:.4}",
                cfg.max_loss_ratio,
                cfg.max_loss_ratio * ln_vocab
            ),
        ));
    }
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).map_err(|e| Error::io("loss.csv", e)).at(Stage::Pretrain)?;
    emit(out_dir, &mut artifacts, "loss.csv", &buf, Stage::Pretrain)?;
    if let Some(dir) = out_dir {
        let path = dir.join("pretrain.ckpt");
        trainer.save(&path).at(Stage::Pretrain)?;
        artifacts.push(path);
    }

    // finetune, one model per fold
    let encoder = trainer.encoder_params();
    let (task, examples) = question_task(&tok, &docs, model.max_positions);
    let labels: Vec<usize> = examples
        .iter()
        .map(|e| match e.label {
            Label::Class(c) => c,
            Label::Score(_) => unreachable!("classification task"),
        })
        .collect();
    let folds = stratified_kfold(&labels, cfg.folds, cfg.seed).at(Stage::Finetune)?;
    let opts = FinetuneOptions {
        hyper: TrainHyper {
            seed: cfg.seed,
            ..cfg.finetune.clone()
        },
        head_only: false,
    };
    let metrics = cross_validate(&task.name, &Gold::Classes(labels), &folds, exec, |_, train, test| {
        let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
        let fitted = training::finetune(&model, &encoder, &task, &pick(train), &opts, exec)?;
        let preds = training::predict(&fitted, &pick(test), exec)?;
        Ok(FoldPredictions::Classes(
            preds
                .iter()
                .map(|p| match p {
                    Prediction::Class { label, .. } => *label,
                    Prediction::Score(_) => unreachable!("classification task"),
                })
                .collect(),
        ))
    })
    .at(Stage::Finetune)?;

    // eval
    let accuracy = match metrics.metrics {
        Metrics::Classification { accuracy, .. } => accuracy,
        Metrics::Regression { .. } => unreachable!("classification task"),
    };
    if accuracy < cfg.min_accuracy {
        return Err(StageError::threshold(
            Stage::Eval,
            format!("mean accuracy {accuracy:.4} below {}", cfg.min_accuracy),
        ));
    }
    emit(out_dir, &mut artifacts, "metrics.csv", metrics.to_csv().as_bytes(), Stage::Eval)?;

    let mut report = DemoReport {
        seed: cfg.seed,
        documents: docs.len(),
        sentences,
        vocab_size: tok.len(),
        instances: instances.len(),
        masked_fraction,
        positive_fraction,
        initial_mlm,
        final_mlm,
        ln_vocab,
        task_examples: examples.len(),
        metrics,
        artifacts: Vec::new(),
    };
    emit(out_dir, &mut artifacts, "report.txt", report.render().as_bytes(), Stage::Eval)?;
    report.artifacts = artifacts;
    Ok(report)
}

fn emit(
    out_dir: Option<&Path>,
    artifacts: &mut Vec<PathBuf>,
    name: &str,
    bytes: &[u8],
    stage: Stage,
) -> Result<(), StageError> {
    if let Some(dir) = out_dir {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e)).at(stage)?;
        artifacts.push(path);
    }
    Ok(())
}

fn check_round_trip(tok: &TokenizerModel, docs: &[Document]) -> Result<(), StageError> {
    for s in docs.iter().flat_map(|d| &d.sentences) {
        let back = tok.decode(&tok.encode(s)).at(Stage::Vocab)?;
        if &back != s {
            return Err(StageError::threshold(
                Stage::Vocab,
                format!("round trip changed {s:?} into {back:?}"),
            ));
        }
    }
    Ok(())
}

/// Mean MLM loss over the first and last `LOSS_WINDOW` steps.
fn loss_summary(trace: &LossTrace) -> (f64, f64) {
    let mlm: Vec<f64> = trace.rows.iter().map(|r| r.mlm_loss).collect();
    let w = LOSS_WINDOW.min(mlm.len()).max(1);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    (mean(&mlm[..w.min(mlm.len())]), mean(&mlm[mlm.len().saturating_sub(w)..]))
}

/// Single-sentence task: is the sentence a question? Balanced by taking the
/// same number of questions and statements in corpus order.
fn question_task(tok: &TokenizerModel, docs: &[Document], max_len: usize) -> (TaskSpec, Vec<TaskExample>) {
    let task = TaskSpec {
        name: "question".into(),
        kind: TaskKind::SingleClassification,
        num_classes: 2,
        max_len,
    };
    let sentences: Vec<&String> = docs.iter().flat_map(|d| &d.sentences).collect();
    let (q, s): (Vec<&String>, Vec<&String>) = sentences.into_iter().partition(|s| s.ends_with('?'));
    let n = q.len().min(s.len()).min(120);
    let mut examples = Vec::with_capacity(2 * n);
    for i in 0..n {
        for (text, class) in [(q[i], 1), (s[i], 0)] {
            examples.push(TaskExample {
                a: tok.encode(text),
                b: None,
                label: Label::Class(class),
            });
        }
    }
    (task, examples)
}
