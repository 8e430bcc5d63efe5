//! Task heads on the pooled output: fine-tuning and prediction.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::heads::softmax_xent;
use super::optim::{clip_global_norm, learning_rate, AdamW};
use super::pretrain::batch_indices;
use super::TrainHyper;
use crate::encoder::math::affine;
use crate::encoder::{
    check_layout, forward, forward_backward, read_checkpoint, write_checkpoint, Batch, ExampleGrad, Mode,
    ModelConfig, ParamStore,
};
use crate::tokenizer::SpecialIds;
use crate::{rng, Error, Execution, Result};

use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PairClassification,
    PairRegression,
    SingleClassification,
}

impl TaskKind {
    pub fn is_pair(self) -> bool {
        matches!(self, TaskKind::PairClassification | TaskKind::PairRegression)
    }

    pub fn is_regression(self) -> bool {
        self == TaskKind::PairRegression
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::PairClassification => "pair_classification",
            TaskKind::PairRegression => "pair_regression",
            TaskKind::SingleClassification => "single_classification",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair_classification" => Ok(TaskKind::PairClassification),
            "pair_regression" => Ok(TaskKind::PairRegression),
            "single_classification" => Ok(TaskKind::SingleClassification),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Regression targets and predictions live in this closed range.
pub const LABEL_RANGE: (f64, f64) = (1.0, 5.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    /// Ignored for regression.
    pub num_classes: usize,
    /// Inputs are cut to their first `max_len` tokens.
    pub max_len: usize,
}

impl TaskSpec {
    pub fn outputs(&self) -> usize {
        if self.kind.is_regression() {
            1
        } else {
            self.num_classes
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kind.is_regression() && self.num_classes < 2 {
            return Err(Error::Config(format!("task {} needs at least 2 classes", self.name)));
        }
        if self.max_len < 3 {
            return Err(Error::Config("task max_len must be at least 3".into()));
        }
        Ok(())
    }

    fn check_label(&self, label: &Label) -> Result<()> {
        match (*label, self.kind.is_regression()) {
            (Label::Class(c), false) if c < self.num_classes => Ok(()),
            (Label::Score(s), true) if (LABEL_RANGE.0..=LABEL_RANGE.1).contains(&s) => Ok(()),
            (l, _) => Err(Error::Data(format!("label {l:?} does not fit task {}", self.name))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Score(f64),
}

/// Token ids without special tokens; `b` is present for pair tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample {
    pub a: Vec<u32>,
    pub b: Option<Vec<u32>>,
    pub label: Label,
}

/// `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`, cut to the first `max_len`
/// tokens (the last kept position becomes `[SEP]` when cut).
pub fn encode_example(task: &TaskSpec, a: &[u32], b: Option<&[u32]>) -> Result<(Vec<u32>, Vec<u8>)> {
    if task.kind.is_pair() != b.is_some() {
        return Err(Error::Data(format!(
            "task {} expects {} input",
            task.name,
            if task.kind.is_pair() { "paired" } else { "single" }
        )));
    }
    let sp = SpecialIds::FIXED;
    let mut ids = vec![sp.cls];
    ids.extend_from_slice(a);
    ids.push(sp.sep);
    let first = ids.len();
    if let Some(b) = b {
        ids.extend_from_slice(b);
        ids.push(sp.sep);
    }
    let mut segs: Vec<u8> = (0..ids.len()).map(|t| u8::from(t >= first)).collect();
    if ids.len() > task.max_len {
        ids.truncate(task.max_len);
        segs.truncate(task.max_len);
        *ids.last_mut().expect("max_len >= 3") = sp.sep;
    }
    Ok((ids, segs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOptions {
    pub hyper: TrainHyper,
    /// Train only the task head (frozen-feature mode).
    pub head_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub config: ModelConfig,
    pub task: TaskSpec,
    /// Encoder tensors followed by `task.weight` and `task.bias`.
    pub params: ParamStore<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class { label: usize, probs: Vec<f64> },
    Score(f64),
}

impl Prediction {
    pub fn value(&self) -> f64 {
        match self {
            Prediction::Class { label, .. } => *label as f64,
            Prediction::Score(s) => *s,
        }
    }
}

fn head_ids(params: &ParamStore<f32>) -> Result<(usize, usize)> {
    let f = |n| params.index(n).ok_or_else(|| Error::Config(format!("task model lacks {n}")));
    Ok((f("task.weight")?, f("task.bias")?))
}

impl TaskModel {
    /// Size of the task head: `hidden × outputs + outputs`.
    pub fn head_param_count(&self) -> usize {
        self.config.hidden * self.task.outputs() + self.task.outputs()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header: BTreeMap<String, String> = self.config.to_kv();
        header.insert("kind".into(), "task".into());
        header.insert("task.name".into(), self.task.name.clone());
        header.insert("task.kind".into(), self.task.kind.as_str().into());
        header.insert("task.num_classes".into(), self.task.num_classes.to_string());
        header.insert("task.max_len".into(), self.task.max_len.to_string());
        write_checkpoint(path, &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = read_checkpoint(path)?;
        let h = &ck.header;
        let config = ModelConfig::from_kv(h)?;
        let need = |k: &str| {
            h.get(k)
                .cloned()
                .ok_or_else(|| Error::format("checkpoint", format!("missing {k}")))
        };
        let task = TaskSpec {
            name: need("task.name")?,
            kind: need("task.kind")?.parse()?,
            num_classes: need("task.num_classes")?
                .parse()
                .map_err(|_| Error::format("checkpoint", "task.num_classes"))?,
            max_len: need("task.max_len")?
                .parse()
                .map_err(|_| Error::format("checkpoint", "task.max_len"))?,
        };
        check_layout(&config, &ck.params)?;
        head_ids(&ck.params)?;
        Ok(TaskModel {
            config,
            task,
            params: ck.params,
        })
    }
}

fn validate_inputs(task: &TaskSpec, examples: &[TaskExample]) -> Result<()> {
    for e in examples {
        task.check_label(&e.label)?;
    }
    Ok(())
}

fn make_batch(task: &TaskSpec, examples: &[&TaskExample]) -> Result<Batch> {
    let rows = examples
        .iter()
        .map(|e| encode_example(task, &e.a, e.b.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch::new(&rows))
}

/// Adds a task head to `pretrained` (any heads already there are dropped)
/// and trains the whole network, or only the head with `head_only`.
pub fn finetune(
    config: &ModelConfig,
    pretrained: &ParamStore<f32>,
    task: &TaskSpec,
    examples: &[TaskExample],
    opts: &FinetuneOptions,
    exec: Execution,
) -> Result<TaskModel> {
    task.validate()?;
    opts.hyper.validate()?;
    check_layout(config, pretrained)?;
    if examples.is_empty() {
        return Err(Error::Data(format!("no training examples for task {}", task.name)));
    }
    validate_inputs(task, examples)?;
    let h = &opts.hyper;
    let n_enc = crate::encoder::layout(config).len;
    let mut params = ParamStore::default();
    for (name, t) in pretrained.iter().take(n_enc) {
        params.push(name, t.clone());
    }
    let k = task.outputs();
    let w = params.push_init("task.weight", &[config.hidden, k], h.seed);
    let b = params.push_init("task.bias", &[k], h.seed);
    if task.kind.is_regression() {
        // Start at the middle of the label range.
        let mid = ((LABEL_RANGE.0 + LABEL_RANGE.1) / 2.0) as f32;
        params.tensor_mut(b).data.iter_mut().for_each(|x| *x = mid);
    }
    let mut opt = AdamW::new(&params);
    for step in 0..h.total_steps {
        let picked: Vec<&TaskExample> = batch_indices(examples.len(), h.batch_size, h.seed, step)
            .into_iter()
            .map(|i| &examples[i])
            .collect();
        let batch = make_batch(task, &picked)?;
        let norm = picked.len() as f32;
        let mode = Mode::Train {
            dropout: h.dropout,
            seed: rng::derive(h.seed, &[0xf1, step as u64]).random(),
        };
        let p = &params;
        let (loss, mut grads) = forward_backward(config, p, &batch, mode, exec, |i, _, pooled, g| {
            let out = affine(pooled, p.data(w), p.data(b), 1, config.hidden, k);
            let (loss, mut dl) = match picked[i].label {
                Label::Class(c) => softmax_xent(&out, c),
                Label::Score(t) => {
                    let d = out[0] - t as f32;
                    (d * d, vec![2.0 * d])
                }
            };
            dl.iter_mut().for_each(|x| *x /= norm);
            let (gw, gb) = g.split_pair(w, b);
            let dp = crate::encoder::math::affine_back(pooled, p.data(w), &dl, 1, config.hidden, k, gw, gb);
            Ok(ExampleGrad {
                loss: loss / norm,
                d_seq: None,
                d_pooled: Some(dp),
            })
        })?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Diverged { step });
        }
        clip_global_norm(&mut grads, h.clip_norm);
        let head_only = opts.head_only;
        opt.step(&mut params, &grads, learning_rate(h, step), h.weight_decay, |i| {
            !head_only || i >= n_enc
        });
    }
    Ok(TaskModel {
        config: config.clone(),
        task: task.clone(),
        params,
    })
}

const PREDICT_CHUNK: usize = 32;

/// Deterministic eval-mode predictions; labels of `examples` are ignored.
pub fn predict(model: &TaskModel, examples: &[TaskExample], exec: Execution) -> Result<Vec<Prediction>> {
    let (w, b) = head_ids(&model.params)?;
    let (hd, k) = (model.config.hidden, model.task.outputs());
    let refs: Vec<&TaskExample> = examples.iter().collect();
    let chunks: Vec<&[&TaskExample]> = refs.chunks(PREDICT_CHUNK).collect();
    let outs = exec.map(&chunks, |_, chunk| -> Result<Vec<Prediction>> {
        let batch = make_batch(&model.task, chunk)?;
        let out = forward(&model.config, &model.params, &batch, Execution::Serial)?;
        Ok((0..chunk.len())
            .map(|r| {
                let z = affine(out.pooled_row(r), model.params.data(w), model.params.data(b), 1, hd, k);
                if model.task.kind.is_regression() {
                    Prediction::Score((z[0] as f64).clamp(LABEL_RANGE.0, LABEL_RANGE.1))
                } else {
                    classify(&z)
                }
            })
            .collect())
    });
    let mut all = Vec::with_capacity(examples.len());
    for o in outs {
        all.extend(o?);
    }
    Ok(all)
}

/// Argmax (first maximum on ties) and softmax probabilities.
fn classify(logits: &[f32]) -> Prediction {
    let z: Vec<f64> = logits.iter().map(|&x| x as f64).collect();
    let label = z
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > z[best] { i } else { best });
    let lp = crate::encoder::math::log_softmax(&z);
    Prediction::Class {
        label,
        probs: lp.iter().map(|v| v.exp()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn spec(kind: TaskKind, classes: usize) -> TaskSpec {
        TaskSpec {
            name: "t".into(),
            kind,
            num_classes: classes,
            max_len: 16,
        }
    }

    fn hyper(steps: usize) -> FinetuneOptions {
        FinetuneOptions {
            hyper: TrainHyper {
                learning_rate: 2e-3,
                warmup_steps: steps.min(10),
                total_steps: steps,
                batch_size: 8,
                seed: 1,
                ..TrainHyper::desk()
            },
            head_only: false,
        }
    }

    /// Class 0 sentences use ids 5..20, class 1 uses 20..35.
    fn separable(n: usize) -> Vec<TaskExample> {
        (0..n)
            .map(|i| {
                let c = i % 2;
                let base = 5 + 15 * c as u32;
                let a = (0..4).map(|k| base + ((i as u32) * 7 + k * 3) % 15).collect();
                TaskExample { a, b: None, label: Label::Class(c) }
            })
            .collect()
    }

    #[test]
    fn encoding_and_truncation() {
        let t = spec(TaskKind::PairClassification, 3);
        let (ids, segs) = encode_example(&t, &[10, 11], Some(&[12])).unwrap();
        assert_eq!(ids, vec![2, 10, 11, 3, 12, 3]);
        assert_eq!(segs, vec![0, 0, 0, 0, 1, 1]);
        let long: Vec<u32> = (5..40).collect();
        let (ids, _) = encode_example(&t, &long, Some(&[7])).unwrap();
        assert_eq!(ids.len(), 16);
        assert_eq!(&ids[..15], &[2, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18]);
        assert_eq!(ids[15], 3);
        assert!(encode_example(&t, &[1], None).is_err());
    }

    #[test]
    fn separable_classification() {
        let cfg = ModelConfig::tiny(40);
        let pre = init_params(&cfg, 2).unwrap();
        let data = separable(40);
        let task = spec(TaskKind::SingleClassification, 2);
        let m = finetune(&cfg, &pre, &task, &data, &hyper(200), Execution::default()).unwrap();
        assert_eq!(m.head_param_count(), 16 * 2 + 2);
        let preds = predict(&m, &data, Execution::default()).unwrap();
        let acc = preds
            .iter()
            .zip(&data)
            .filter(|(p, e)| matches!((p, e.label), (Prediction::Class { label, .. }, Label::Class(c)) if *label == c))
            .count() as f64
            / data.len() as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
        // every tensor moved
        for (i, (name, t)) in m.params.iter().enumerate().take(pre.len()) {
            assert_ne!(t.data, pre.tensor(i).data, "{name} unchanged");
        }
    }

    #[test]
    fn head_only_changes_only_head() {
        let cfg = ModelConfig::tiny(40);
        let pre = init_params(&cfg, 2).unwrap();
        let opts = FinetuneOptions { head_only: true, ..hyper(20) };
        let task = spec(TaskKind::SingleClassification, 2);
        let m = finetune(&cfg, &pre, &task, &separable(16), &opts, Execution::default()).unwrap();
        for i in 0..pre.len() {
            assert_eq!(m.params.tensor(i), pre.tensor(i));
        }
        let w = m.params.get("task.weight").unwrap();
        assert_ne!(w, &init_params::<f32>(&cfg, 2).map(|mut p| {
            let i = p.push_init("task.weight", &[16, 2], 1);
            p.tensor(i).clone()
        }).unwrap());
    }

    #[test]
    fn constant_regression_target() {
        let cfg = ModelConfig::tiny(40);
        let pre = init_params(&cfg, 4).unwrap();
        let data: Vec<TaskExample> = (0..24)
            .map(|i| TaskExample {
                a: vec![5 + i % 30, 6 + i % 20],
                b: Some(vec![7 + i % 25]),
                label: Label::Score(3.0),
            })
            .collect();
        let task = spec(TaskKind::PairRegression, 0);
        let m = finetune(&cfg, &pre, &task, &data, &hyper(150), Execution::default()).unwrap();
        for p in predict(&m, &data, Execution::default()).unwrap() {
            let v = p.value();
            assert!((v - 3.0).abs() < 0.1, "{v}");
        }
    }

    #[test]
    fn regression_output_is_clamped() {
        let cfg = ModelConfig::tiny(40);
        let task = spec(TaskKind::PairRegression, 0);
        let mut params = init_params(&cfg, 4).unwrap();
        params.push_init("task.weight", &[16, 1], 0);
        let b = params.push_init("task.bias", &[1], 0);
        let mut m = TaskModel { config: cfg, task, params };
        let ex = vec![TaskExample { a: vec![5], b: Some(vec![6]), label: Label::Score(1.0) }];
        for (bias, want) in [(5.7f32, 5.0), (-3.0, 1.0)] {
            m.params.tensor_mut(b).data[0] = bias;
            let i = m.params.index("task.weight").unwrap();
            m.params.tensor_mut(i).data.iter_mut().for_each(|x| *x = 0.0);
            assert_eq!(predict(&m, &ex, Execution::Serial).unwrap()[0], Prediction::Score(want));
        }
    }

    #[test]
    fn argmax_and_batch_equivalence() {
        match classify(&[2.0, 1.0, 0.5]) {
            Prediction::Class { label, probs } => {
                assert_eq!(label, 0);
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            p => panic!("{p:?}"),
        }
        let cfg = ModelConfig::tiny(40);
        let mut params = init_params(&cfg, 4).unwrap();
        params.push_init("task.weight", &[16, 3], 0);
        params.push_init("task.bias", &[3], 0);
        let m = TaskModel { config: cfg, task: spec(TaskKind::SingleClassification, 3), params };
        let data: Vec<TaskExample> = (0..70)
            .map(|i| TaskExample { a: (0..(1 + i % 9)).map(|k| 5 + (i + k) as u32 % 30).collect(), b: None, label: Label::Class(0) })
            .collect();
        let all = predict(&m, &data, Execution::Parallel).unwrap();
        for (e, p) in data.iter().zip(&all) {
            assert_eq!(&predict(&m, std::slice::from_ref(e), Execution::Serial).unwrap()[0], p);
        }
    }

    #[test]
    fn bad_labels_are_data_errors() {
        let cfg = ModelConfig::tiny(40);
        let pre = init_params(&cfg, 4).unwrap();
        let ex = |label| vec![TaskExample { a: vec![5], b: None, label }];
        let task = spec(TaskKind::SingleClassification, 2);
        let e = finetune(&cfg, &pre, &task, &ex(Label::Class(2)), &hyper(1), Execution::Serial).unwrap_err();
        assert!(matches!(e, Error::Data(_)));
        let reg = spec(TaskKind::PairRegression, 0);
        let bad = vec![TaskExample { a: vec![5], b: Some(vec![6]), label: Label::Score(5.5) }];
        assert!(matches!(finetune(&cfg, &pre, &reg, &bad, &hyper(1), Execution::Serial), Err(Error::Data(_))));
    }

    #[test]
    fn task_model_round_trip() {
        let cfg = ModelConfig::tiny(40);
        let pre = init_params(&cfg, 2).unwrap();
        let task = spec(TaskKind::SingleClassification, 2);
        let m = finetune(&cfg, &pre, &task, &separable(8), &hyper(3), Execution::Serial).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        m.save(&path).unwrap();
        assert_eq!(TaskModel::load(&path).unwrap(), m);
    }
}
