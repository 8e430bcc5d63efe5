//! Classification and regression metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pearson correlation, or an explicit marker when either side has zero
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Correlation {
    Defined(f64),
    Undefined,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Defined(v) => Some(v),
            Correlation::Undefined => None,
        }
    }
}

impl std::fmt::Display for Correlation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Correlation::Defined(v) => write!(f, "{v:.4}"),
            Correlation::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metrics {
    Classification {
        accuracy: f64,
        macro_f1: f64,
        weighted_f1: f64,
    },
    Regression {
        pearson: Correlation,
        mse: f64,
    },
}

impl Metrics {
    /// `(name, value)` pairs; an undefined correlation has no value.
    pub fn named(&self) -> Vec<(&'static str, Option<f64>)> {
        match *self {
            Metrics::Classification {
                accuracy,
                macro_f1,
                weighted_f1,
            } => vec![
                ("accuracy", Some(accuracy)),
                ("macro_f1", Some(macro_f1)),
                ("weighted_f1", Some(weighted_f1)),
            ],
            Metrics::Regression { pearson, mse } => vec![("pearson", pearson.value()), ("mse", Some(mse))],
        }
    }

    /// Arithmetic mean over folds. Mixed kinds are an error; an undefined
    /// correlation in any fold makes the mean undefined.
    pub fn mean(folds: &[Metrics]) -> Result<Metrics> {
        let n = folds.len() as f64;
        match folds.first() {
            None => Err(Error::Input("no folds to aggregate".into())),
            Some(Metrics::Classification { .. }) => {
                let (mut a, mut m, mut w) = (0.0, 0.0, 0.0);
                for f in folds {
                    let Metrics::Classification {
                        accuracy,
                        macro_f1,
                        weighted_f1,
                    } = f
                    else {
                        return Err(Error::Input("folds mix metric kinds".into()));
                    };
                    a += accuracy;
                    m += macro_f1;
                    w += weighted_f1;
                }
                Ok(Metrics::Classification {
                    accuracy: a / n,
                    macro_f1: m / n,
                    weighted_f1: w / n,
                })
            }
            Some(Metrics::Regression { .. }) => {
                let (mut p, mut e, mut defined) = (0.0, 0.0, true);
                for f in folds {
                    let Metrics::Regression { pearson, mse } = f else {
                        return Err(Error::Input("folds mix metric kinds".into()));
                    };
                    match pearson {
                        Correlation::Defined(v) => p += v,
                        Correlation::Undefined => defined = false,
                    }
                    e += mse;
                }
                Ok(Metrics::Regression {
                    pearson: if defined {
                        Correlation::Defined(p / n)
                    } else {
                        Correlation::Undefined
                    },
                    mse: e / n,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    /// Mean over `per_fold` when folds are present.
    pub metrics: Metrics,
    pub per_fold: Option<Vec<Metrics>>,
}

impl MetricReport {
    /// CSV rows `task,fold,metric,value`; the aggregate uses fold `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,fold,metric,value\n");
        let mut row = |fold: &str, m: &Metrics| {
            for (name, v) in m.named() {
                let v = v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
                out.push_str(&format!("{},{fold},{name},{v}\n", self.task));
            }
        };
        for (i, m) in self.per_fold.iter().flatten().enumerate() {
            row(&i.to_string(), m);
        }
        row("mean", &self.metrics);
        out
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{}:", self.task);
        for (name, v) in self.metrics.named() {
            match v {
                Some(v) => s.push_str(&format!(" {name}={v:.4}")),
                None => s.push_str(&format!(" {name}=undefined")),
            }
        }
        if let Some(f) = &self.per_fold {
            s.push_str(&format!(" ({} folds)", f.len()));
        }
        s
    }
}

/// Predictions paired with gold values.
#[derive(Debug, Clone, Copy)]
pub enum Outcomes<'a> {
    Classes { pred: &'a [usize], gold: &'a [usize] },
    Scores { pred: &'a [f64], gold: &'a [f64] },
}

pub fn compute_metrics(task: &str, outcomes: Outcomes<'_>) -> Result<MetricReport> {
    let metrics = match outcomes {
        Outcomes::Classes { pred, gold } => {
            check_lengths(pred.len(), gold.len())?;
            classification(pred, gold)
        }
        Outcomes::Scores { pred, gold } => {
            check_lengths(pred.len(), gold.len())?;
            if pred.iter().chain(gold).any(|v| !v.is_finite()) {
                return Err(Error::Input("non-finite regression value".into()));
            }
            Metrics::Regression {
                pearson: pearson(pred, gold),
                mse: pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64,
            }
        }
    };
    Ok(MetricReport {
        task: task.to_string(),
        metrics,
        per_fold: None,
    })
}

fn check_lengths(p: usize, g: usize) -> Result<()> {
    if p != g {
        return Err(Error::Input(format!("{p} predictions for {g} gold labels")));
    }
    if p == 0 {
        return Err(Error::Input("no predictions to score".into()));
    }
    Ok(())
}

fn classification(pred: &[usize], gold: &[usize]) -> Metrics {
    let n = gold.len() as f64;
    let accuracy = pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / n;
    let classes: BTreeSet<usize> = gold.iter().copied().collect();
    let (mut macro_sum, mut weighted_sum) = (0.0, 0.0);
    for &c in &classes {
        let tp = pred.iter().zip(gold).filter(|&(&p, &g)| p == c && g == c).count() as f64;
        let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
        let support = gold.iter().filter(|&&g| g == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / support;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        macro_sum += f1;
        weighted_sum += f1 * support;
    }
    Metrics::Classification {
        accuracy,
        macro_f1: macro_sum / classes.len() as f64,
        weighted_f1: weighted_sum / n,
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::Undefined;
    }
    Correlation::Defined((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
