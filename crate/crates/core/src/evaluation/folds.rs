//! Fold construction and cross-validation drivers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricReport, Metrics, Outcomes};
use crate::{rng, Error, Execution, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    /// Test indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
    /// Only the first `evaluated` folds are used as test sets (1 for a
    /// hold-out split, all of them for cross-validation).
    pub evaluated: usize,
    pub warnings: Vec<String>,
}

impl Folds {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Every index not in fold `i`, ascending.
    pub fn train(&self, i: usize) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        t.sort_unstable();
        t
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the {n} examples")));
    }
    Ok(())
}

/// Stratified k-fold: each class is shuffled and dealt round-robin, the
/// dealing position carrying over from one class to the next so fold sizes
/// stay balanced too. Per-class counts across folds differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Folds> {
    check_k(labels.len(), k)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut warnings = Vec::new();
    let mut next = 0;
    for (c, mut members) in by_class {
        if members.len() < k {
            warnings.push(format!("class {c} has {} members, fewer than k = {k}", members.len()));
        }
        members.shuffle(&mut rng::derive(seed, &[0x57, c as u64]));
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(Folds {
        evaluated: k,
        folds,
        warnings,
    })
}

/// Plain k-fold over a seeded permutation.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Folds> {
    check_k(n, k)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::derive(seed, &[0x4b]));
    let mut folds = vec![Vec::new(); k];
    for (j, i) in idx.into_iter().enumerate() {
        folds[j % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(Folds {
        evaluated: k,
        folds,
        warnings: Vec::new(),
    })
}

/// Single random hold-out split: `fraction` of the data (rounded) is test.
pub fn holdout(n: usize, fraction: f64, seed: u64) -> Result<Folds> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("hold-out fraction {fraction} is outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Config("hold-out needs at least two examples".into()));
    }
    let test = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::derive(seed, &[0x40]));
    let mut f = idx[..test].to_vec();
    f.sort_unstable();
    let mut rest = idx[test..].to_vec();
    rest.sort_unstable();
    Ok(Folds {
        folds: vec![f, rest],
        evaluated: 1,
        warnings: Vec::new(),
    })
}

/// Evaluation protocols used by the benchmark tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Protocol {
    StratifiedKFold { k: usize },
    KFold { k: usize },
    /// One random hold-out split with this test fraction.
    Holdout { test_fraction: f64 },
    /// Train on the given train set, score on the given test set.
    FixedSplit,
}

/// `stratified:K`, `kfold:K`, `holdout:FRACTION` or `fixed`.
impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown protocol {s:?}"));
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let k = || arg.parse::<usize>().map_err(|_| bad());
        match name {
            "stratified" => Ok(Protocol::StratifiedKFold { k: k()? }),
            "kfold" => Ok(Protocol::KFold { k: k()? }),
            "holdout" => {
                let f: f64 = arg.parse().map_err(|_| bad())?;
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::Config(format!("hold-out fraction {f} outside (0, 1)")));
                }
                Ok(Protocol::Holdout { test_fraction: f })
            }
            "fixed" if arg.is_empty() => Ok(Protocol::FixedSplit),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::StratifiedKFold { k } => write!(f, "stratified:{k}"),
            Protocol::KFold { k } => write!(f, "kfold:{k}"),
            Protocol::Holdout { test_fraction } => write!(f, "holdout:{test_fraction}"),
            Protocol::FixedSplit => f.write_str("fixed"),
        }
    }
}

/// Task name → protocol for the seven benchmark tasks.
pub fn benchmark_protocols() -> Vec<(&'static str, Protocol)> {
    vec![
        ("rte_cv", Protocol::StratifiedKFold { k: 10 }),
        ("assin_test", Protocol::FixedSplit),
        ("offcombr", Protocol::StratifiedKFold { k: 10 }),
        ("fakebr", Protocol::KFold { k: 5 }),
        ("sentiment", Protocol::KFold { k: 5 }),
        ("folhauol/split-15", Protocol::Holdout { test_fraction: 0.15 }),
        ("folhauol/5-fold", Protocol::StratifiedKFold { k: 5 }),
        ("publico", Protocol::KFold { k: 5 }),
        ("brnews", Protocol::StratifiedKFold { k: 10 }),
    ]
}

/// Gold labels of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Classes(Vec<usize>),
    Scores(Vec<f64>),
}

impl Gold {
    pub fn len(&self) -> usize {
        match self {
            Gold::Classes(c) => c.len(),
            Gold::Scores(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Predictions for one fold's test indices.
#[derive(Debug, Clone, PartialEq)]
pub enum FoldPredictions {
    Classes(Vec<usize>),
    Scores(Vec<f64>),
}

/// Builds the folds a protocol prescribes. `FixedSplit` is not fold-based
/// and is rejected here.
pub fn make_folds(protocol: Protocol, gold: &Gold, seed: u64) -> Result<Folds> {
    match (protocol, gold) {
        (Protocol::StratifiedKFold { k }, Gold::Classes(c)) => stratified_kfold(c, k, seed),
        (Protocol::StratifiedKFold { k }, Gold::Scores(s)) => kfold(s.len(), k, seed),
        (Protocol::KFold { k }, g) => kfold(g.len(), k, seed),
        (Protocol::Holdout { test_fraction }, g) => holdout(g.len(), test_fraction, seed),
        (Protocol::FixedSplit, _) => Err(Error::Config("a fixed split has no folds".into())),
    }
}

/// For each fold `i`: `fit_predict(i, train, test)` trains a fresh model on
/// `train` and predicts `test`; metrics are computed per fold and averaged.
/// Only `folds.evaluated` folds are scored. Folds run
/// concurrently under `Execution::Parallel`.
pub fn cross_validate<P>(task: &str, gold: &Gold, folds: &Folds, exec: Execution, fit_predict: P) -> Result<MetricReport>
where
    P: Fn(usize, &[usize], &[usize]) -> Result<FoldPredictions> + Sync + Send,
{
    if folds.folds.iter().map(Vec::len).sum::<usize>() != gold.len() {
        return Err(Error::Input("folds do not partition the dataset".into()));
    }
    let per = exec.map_range(folds.evaluated, |i| -> Result<Metrics> {
        let train = folds.train(i);
        let test = &folds.folds[i];
        let wrap = |e: Error| Error::Fold {
            fold: i,
            source: Box::new(e),
        };
        let preds = fit_predict(i, &train, test).map_err(wrap)?;
        let report = match (&preds, gold) {
            (FoldPredictions::Classes(p), Gold::Classes(g)) => {
                let g: Vec<usize> = test.iter().map(|&j| g[j]).collect();
                compute_metrics(task, Outcomes::Classes { pred: p, gold: &g })
            }
            (FoldPredictions::Scores(p), Gold::Scores(g)) => {
                let g: Vec<f64> = test.iter().map(|&j| g[j]).collect();
                compute_metrics(task, Outcomes::Scores { pred: p, gold: &g })
            }
            _ => Err(Error::Input("prediction kind does not match gold kind".into())),
        }
        .map_err(wrap)?;
        Ok(report.metrics)
    });
    let per_fold = per.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        task: task.to_string(),
        metrics: Metrics::mean(&per_fold)?,
        per_fold: Some(per_fold),
    })
}

/// Builds the folds for `protocol` and cross-validates.
pub fn run_protocol<P>(
    task: &str,
    protocol: Protocol,
    gold: &Gold,
    seed: u64,
    exec: Execution,
    fit_predict: P,
) -> Result<MetricReport>
where
    P: Fn(usize, &[usize], &[usize]) -> Result<FoldPredictions> + Sync + Send,
{
    let folds = make_folds(protocol, gold, seed)?;
    cross_validate(task, gold, &folds, exec, fit_predict)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_counts(f: &Folds, labels: &[usize], c: usize) -> Vec<usize> {
        f.folds.iter().map(|fold| fold.iter().filter(|&&i| labels[i] == c).count()).collect()
    }

    fn assert_partition(f: &Folds, n: usize) {
        let mut all: Vec<usize> = f.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn balanced_ten_fold() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let f = stratified_kfold(&labels, 10, 3).unwrap();
        assert_partition(&f, 100);
        for c in 0..2 {
            assert_eq!(class_counts(&f, &labels, c), vec![5; 10]);
        }
        assert_eq!(f, stratified_kfold(&labels, 10, 3).unwrap());
        assert_ne!(f, stratified_kfold(&labels, 10, 4).unwrap());
    }

    #[test]
    fn remainder_distribution() {
        let labels = vec![0; 7];
        let f = stratified_kfold(&labels, 5, 1).unwrap();
        assert_eq!(class_counts(&f, &labels, 0), vec![2, 2, 1, 1, 1]);
    }

    #[test]
    fn imbalanced_classes_within_one() {
        // roughly the 9:3:1 RTE shape
        let labels: Vec<usize> = (0..260).map(|i| if i < 180 { 0 } else if i < 240 { 1 } else { 2 }).collect();
        let f = stratified_kfold(&labels, 10, 7).unwrap();
        assert_partition(&f, 260);
        for c in 0..3 {
            let counts = class_counts(&f, &labels, c);
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        let sizes: Vec<usize> = f.folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(f.warnings.is_empty());
    }

    #[test]
    fn small_class_warns() {
        let f = stratified_kfold(&[0, 0, 0, 0, 0, 1, 1], 5, 0).unwrap();
        assert_eq!(f.warnings.len(), 1);
        assert!(stratified_kfold(&[0, 1], 3, 0).is_err());
        assert!(kfold(5, 1, 0).is_err());
    }

    #[test]
    fn holdout_split() {
        let f = holdout(100, 0.15, 2).unwrap();
        assert_eq!((f.folds[0].len(), f.evaluated), (15, 1));
        assert_partition(&f, 100);
        assert_eq!(f.train(0), f.folds[1]);
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let gold = Gold::Classes((0..100).map(|i| i % 2).collect());
        for protocol in [Protocol::StratifiedKFold { k: 10 }, Protocol::StratifiedKFold { k: 5 }] {
            let r = run_protocol("t", protocol, &gold, 1, Execution::default(), |_, _, test| {
                Ok(FoldPredictions::Classes(vec![0; test.len()]))
            })
            .unwrap();
            let k = match protocol {
                Protocol::StratifiedKFold { k } => k,
                _ => unreachable!(),
            };
            assert_eq!(r.per_fold.as_ref().unwrap().len(), k);
            match r.metrics {
                Metrics::Classification { accuracy, .. } => assert!((accuracy - 0.5).abs() < 1e-12),
                m => panic!("{m:?}"),
            }
        }
    }

    #[test]
    fn leak_detector() {
        // A factory that (wrongly) reads the test labels scores perfectly;
        // one that only sees train labels cannot on label-noise data.
        let labels: Vec<usize> = (0..60).map(|i| (i * 7 + i / 3) % 3).collect();
        let gold = Gold::Classes(labels.clone());
        let folds = stratified_kfold(&labels, 5, 9).unwrap();
        let leaky = cross_validate("t", &gold, &folds, Execution::Serial, |_, _, test| {
            Ok(FoldPredictions::Classes(test.iter().map(|&i| labels[i]).collect()))
        })
        .unwrap();
        assert!(matches!(leaky.metrics, Metrics::Classification { accuracy, .. } if accuracy == 1.0));
        let honest = cross_validate("t", &gold, &folds, Execution::Serial, |_, train, test| {
            assert!(test.iter().all(|i| train.binary_search(i).is_err()));
            Ok(FoldPredictions::Classes(vec![labels[train[0]]; test.len()]))
        })
        .unwrap();
        assert!(matches!(honest.metrics, Metrics::Classification { accuracy, .. } if accuracy < 0.5));
    }

    #[test]
    fn mean_of_folds() {
        let gold = Gold::Scores((0..20).map(|i| 1.0 + (i % 5) as f64).collect());
        let r = run_protocol("sts", Protocol::KFold { k: 4 }, &gold, 0, Execution::Serial, |_, _, test| {
            Ok(FoldPredictions::Scores(test.iter().map(|&i| 1.0 + ((i + 1) % 5) as f64).collect()))
        })
        .unwrap();
        let folds = r.per_fold.unwrap();
        let mean_mse = folds.iter().map(|m| match m { Metrics::Regression { mse, .. } => *mse, _ => unreachable!() }).sum::<f64>() / 4.0;
        match r.metrics {
            Metrics::Regression { mse, .. } => assert!((mse - mean_mse).abs() < 1e-9),
            m => panic!("{m:?}"),
        }
    }

    #[test]
    fn fold_failure_is_named() {
        let gold = Gold::Classes(vec![0, 1, 0, 1, 0, 1]);
        let e = run_protocol("t", Protocol::KFold { k: 3 }, &gold, 0, Execution::Parallel, |i, _, test| {
            if i == 2 {
                Err(Error::Diverged { step: 5 })
            } else {
                Ok(FoldPredictions::Classes(vec![0; test.len()]))
            }
        })
        .unwrap_err();
        assert!(matches!(e, Error::Fold { fold: 2, .. }));
    }

    #[test]
    fn protocol_strings() {
        for (_, p) in benchmark_protocols() {
            assert_eq!(p.to_string().parse::<Protocol>().unwrap(), p);
        }
        assert!("holdout:1.5".parse::<Protocol>().is_err());
        assert!("stratified".parse::<Protocol>().is_err());
    }
}
