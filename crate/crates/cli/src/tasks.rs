//! Task files: one example per line, `label<TAB>text` or
//! `label<TAB>text_a<TAB>text_b`. Blank lines and `#` lines are skipped.

use std::path::Path;

use anyhow::{bail, Context, Result};
use encoderlab::tokenizer::TokenizerModel;
use encoderlab::training::{Label, TaskExample, TaskKind};

pub fn read_task_file(path: &Path, tok: &TokenizerModel, kind: TaskKind) -> Result<Vec<TaskExample>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let want = if kind.is_pair() { 3 } else { 2 };
        if fields.len() != want {
            bail!(encoderlab::Error::Data(format!(
                "{}:{}: expected {want} tab-separated fields, found {}",
                path.display(),
                n + 1,
                fields.len()
            )));
        }
        let bad = || encoderlab::Error::Data(format!("{}:{}: bad label {:?}", path.display(), n + 1, fields[0]));
        let label = if kind.is_regression() {
            Label::Score(fields[0].trim().parse().map_err(|_| bad())?)
        } else {
            Label::Class(fields[0].trim().parse().map_err(|_| bad())?)
        };
        out.push(TaskExample {
            a: tok.encode(fields[1]),
            b: kind.is_pair().then(|| tok.encode(fields[2])),
            label,
        });
    }
    if out.is_empty() {
        bail!(encoderlab::Error::Data(format!("{} has no examples", path.display())));
    }
    Ok(out)
}

/// Largest class label + 1.
pub fn infer_classes(examples: &[TaskExample]) -> usize {
    examples
        .iter()
        .filter_map(|e| match e.label {
            Label::Class(c) => Some(c + 1),
            Label::Score(_) => None,
        })
        .max()
        .unwrap_or(0)
        .max(2)
}
