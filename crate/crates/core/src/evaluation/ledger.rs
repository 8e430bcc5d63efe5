//! Pairwise model comparison under the proportional-equivalence rule.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.05;

/// Margin under which a proportional difference counts as sitting exactly
/// on the threshold (so decimal ties like 0.80 vs 0.84 are not equivalent).
const TIE_EPS: f64 = 1e-9;

const PUBLISHED_SCORES: &str = include_str!("../../../../fixtures/published_scores.csv");
const PUBLISHED_COMPARISON: &str = include_str!("../../../../fixtures/published_pairs.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub task: String,
    pub setting: String,
    pub model: String,
    pub metric: String,
    pub value: f64,
}

impl ScoreRecord {
    /// Comparison cell: one (task, setting, metric) combination.
    pub fn cell(&self) -> String {
        format!("{}/{}/{}", self.task, self.setting, self.metric)
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r)
}

pub fn read_scores<R: Read>(r: R) -> Result<Vec<ScoreRecord>> {
    csv_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::format("score table", e.to_string())))
        .collect()
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(f)
}

/// The bundled transcription of the published score tables.
pub fn published_scores() -> Vec<ScoreRecord> {
    read_scores(PUBLISHED_SCORES.as_bytes()).expect("bundled score fixture parses")
}

/// Scores per cell per model, with models in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub models: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ScoreTable {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ScoreRecord>) -> Result<Self> {
        let mut t = ScoreTable::default();
        for r in records {
            if !t.models.contains(&r.model) {
                t.models.push(r.model.clone());
            }
            if t.cells.entry(r.cell()).or_default().insert(r.model.clone(), r.value).is_some() {
                return Err(Error::Data(format!("duplicate score for {} in {}", r.model, r.cell())));
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    FirstWins,
    Equivalent,
    SecondWins,
}

/// Equivalent when `|a - b| / min(a, b)` is strictly below `threshold`;
/// otherwise the larger score wins.
pub fn verdict(a: f64, b: f64, threshold: f64) -> Result<Verdict> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Data(format!("scores must be positive, got {a} and {b}")));
    }
    let (lo, diff) = (a.min(b), (a - b).abs());
    Ok(if diff < (threshold - TIE_EPS) * lo {
        Verdict::Equivalent
    } else if a > b {
        Verdict::FirstWins
    } else {
        Verdict::SecondWins
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub wins: usize,
    pub equivalents: usize,
    pub losses: usize,
}

impl PairCounts {
    pub fn total(&self) -> usize {
        self.wins + self.equivalents + self.losses
    }

    pub fn mirrored(&self) -> Self {
        PairCounts {
            wins: self.losses,
            equivalents: self.equivalents,
            losses: self.wins,
        }
    }
}

impl std::fmt::Display for PairCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.wins, self.equivalents, self.losses)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonLedger {
    pub threshold: f64,
    pub models: Vec<String>,
    /// Ordered pairs `(a, b)`: wins are cells where `a` beat `b`.
    pub counts: BTreeMap<(String, String), PairCounts>,
}

impl ComparisonLedger {
    pub fn get(&self, a: &str, b: &str) -> PairCounts {
        self.counts
            .get(&(a.to_string(), b.to_string()))
            .copied()
            .unwrap_or_default()
    }

    /// `row,column,wins,equivalents,losses,total` for every pair in model order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,column,wins,equivalents,losses,total\n");
        for (i, a) in self.models.iter().enumerate() {
            for b in &self.models[i + 1..] {
                let c = self.get(a, b);
                let _ = writeln!(s, "{a},{b},{},{},{},{}", c.wins, c.equivalents, c.losses, c.total());
            }
        }
        s
    }

    /// Upper-triangular text table: one row per model but the last, one
    /// column group (`>`, `=`, `<`) per model but the first.
    pub fn table_text(&self) -> String {
        let m = &self.models;
        if m.len() < 2 {
            return String::new();
        }
        let w = m.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut s = format!("{:w$}", "Model");
        for b in &m[1..] {
            let _ = write!(s, " | {b:^14}");
        }
        s.push('\n');
        let _ = write!(s, "{:w$}", "");
        for _ in &m[1..] {
            let _ = write!(s, " | {:>4}{:>5}{:>5}", ">", "=", "<");
        }
        s.push('\n');
        for (i, a) in m[..m.len() - 1].iter().enumerate() {
            let _ = write!(s, "{a:w$}");
            for (j, b) in m[1..].iter().enumerate() {
                if j < i {
                    let _ = write!(s, " | {:14}", "");
                } else {
                    let c = self.get(a, b);
                    let _ = write!(s, " | {:>4}{:>5}{:>5}", c.wins, c.equivalents, c.losses);
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Ledger with every metric treated as higher-is-better.
pub fn compare(table: &ScoreTable, threshold: f64) -> Result<ComparisonLedger> {
    compare_with(table, threshold, |_| false)
}

/// Ledger where cells for which `lower_is_better(cell)` holds reward the
/// smaller score.
pub fn compare_with(
    table: &ScoreTable,
    threshold: f64,
    lower_is_better: impl Fn(&str) -> bool,
) -> Result<ComparisonLedger> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Config(format!("threshold {threshold} must be positive")));
    }
    let mut counts: BTreeMap<(String, String), PairCounts> = BTreeMap::new();
    for (cell, scores) in &table.cells {
        let flip = lower_is_better(cell);
        for (i, a) in table.models.iter().enumerate() {
            for b in &table.models[i + 1..] {
                let (Some(&x), Some(&y)) = (scores.get(a), scores.get(b)) else {
                    continue;
                };
                let mut v = verdict(x, y, threshold)
                    .map_err(|e| Error::Data(format!("{cell}: {e}")))?;
                if flip {
                    v = match v {
                        Verdict::FirstWins => Verdict::SecondWins,
                        Verdict::SecondWins => Verdict::FirstWins,
                        Verdict::Equivalent => Verdict::Equivalent,
                    };
                }
                let c = counts.entry((a.clone(), b.clone())).or_default();
                match v {
                    Verdict::FirstWins => c.wins += 1,
                    Verdict::Equivalent => c.equivalents += 1,
                    Verdict::SecondWins => c.losses += 1,
                }
            }
        }
    }
    let mirrored: Vec<_> = counts
        .iter()
        .map(|((a, b), c)| ((b.clone(), a.clone()), c.mirrored()))
        .collect();
    counts.extend(mirrored);
    Ok(ComparisonLedger {
        threshold,
        models: table.models.clone(),
        counts,
    })
}

/// Reads `row,column,wins,equivalents,losses` records.
pub fn read_comparison<R: Read>(r: R) -> Result<BTreeMap<(String, String), PairCounts>> {
    #[derive(Deserialize)]
    struct Row {
        row: String,
        column: String,
        wins: usize,
        equivalents: usize,
        losses: usize,
    }
    csv_reader(r)
        .deserialize::<Row>()
        .map(|r| {
            let r = r.map_err(|e| Error::format("comparison table", e.to_string()))?;
            Ok((
                (r.row, r.column),
                PairCounts {
                    wins: r.wins,
                    equivalents: r.equivalents,
                    losses: r.losses,
                },
            ))
        })
        .collect()
}

/// Published pairwise counts, `(row, column) → counts`.
pub fn published_comparison() -> BTreeMap<(String, String), PairCounts> {
    read_comparison(PUBLISHED_COMPARISON.as_bytes()).expect("bundled comparison fixture parses")
}

/// How a reading of the comparison rule selects and orients cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reading {
    /// Every metric cell, larger score wins.
    AllCells,
    /// Every metric cell, lower MSE wins.
    AllCellsMseLower,
    /// F1 cells only (macro or weighted, as published).
    F1Only,
    /// Accuracy cells only.
    AccuracyOnly,
}

impl Reading {
    pub const ALL: [Reading; 4] = [
        Reading::AllCells,
        Reading::AllCellsMseLower,
        Reading::F1Only,
        Reading::AccuracyOnly,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Reading::AllCells => "all metric cells, larger score wins",
            Reading::AllCellsMseLower => "all metric cells, lower MSE wins",
            Reading::F1Only => "F1 cells only",
            Reading::AccuracyOnly => "accuracy cells only",
        }
    }

    pub fn ledger(self, records: &[ScoreRecord], threshold: f64) -> Result<ComparisonLedger> {
        let keep = |r: &&ScoreRecord| match self {
            Reading::AllCells | Reading::AllCellsMseLower => true,
            Reading::F1Only => r.metric.starts_with("f1"),
            Reading::AccuracyOnly => r.metric == "acc",
        };
        let table = ScoreTable::from_records(records.iter().filter(keep))?;
        let mse_lower = self == Reading::AllCellsMseLower;
        compare_with(&table, threshold, |cell| mse_lower && cell.ends_with("/mse"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadingResult {
    pub reading: Reading,
    pub ledger: ComparisonLedger,
    /// `(row, column, computed, published)` where they differ.
    pub mismatches: Vec<(String, String, PairCounts, PairCounts)>,
}

/// Every reading's ledger checked against the published counts.
pub fn discrepancy_report(
    records: &[ScoreRecord],
    threshold: f64,
    published: &BTreeMap<(String, String), PairCounts>,
) -> Result<Vec<ReadingResult>> {
    Reading::ALL
        .iter()
        .map(|&reading| {
            let ledger = reading.ledger(records, threshold)?;
            let mismatches = published
                .iter()
                .filter_map(|((a, b), &want)| {
                    let got = ledger.get(a, b);
                    (got != want).then(|| (a.clone(), b.clone(), got, want))
                })
                .collect();
            Ok(ReadingResult {
                reading,
                ledger,
                mismatches,
            })
        })
        .collect()
}

pub fn discrepancy_text(results: &[ReadingResult]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(s, "reading: {}", r.reading.describe());
        if r.mismatches.is_empty() {
            let _ = writeln!(s, "  matches every published pair");
        }
        for (a, b, got, want) in &r.mismatches {
            let _ = writeln!(
                s,
                "  {a} vs {b}: computed {got} ({} comparisons), published {want} ({})",
                got.total(),
                want.total()
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundary_is_not_equivalent() {
        assert_eq!(verdict(0.80, 0.84, 0.05).unwrap(), Verdict::SecondWins);
        assert_eq!(verdict(0.84, 0.80, 0.05).unwrap(), Verdict::FirstWins);
        assert_eq!(verdict(0.80, 0.839, 0.05).unwrap(), Verdict::Equivalent);
        assert_eq!(verdict(0.5, 0.5, 0.05).unwrap(), Verdict::Equivalent);
        assert!(verdict(0.0, 0.5, 0.05).is_err());
        assert!(verdict(-1.0, 0.5, 0.05).is_err());
    }

    #[test]
    fn identical_scores_all_equivalent() {
        let recs: Vec<ScoreRecord> = (0..5)
            .flat_map(|t| {
                ["A", "B", "C"].map(|m| ScoreRecord {
                    task: format!("t{t}"),
                    setting: "s".into(),
                    model: m.into(),
                    metric: "acc".into(),
                    value: 0.7,
                })
            })
            .collect();
        let l = compare(&ScoreTable::from_records(&recs).unwrap(), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(l.get("A", "C"), PairCounts { wins: 0, equivalents: 5, losses: 0 });
    }

    #[test]
    fn published_fixture_reproduces_bert_albert_row() {
        let recs = published_scores();
        let l = Reading::AllCells.ledger(&recs, DEFAULT_THRESHOLD).unwrap();
        let c = l.get("BertPT", "AlbertPT");
        assert_eq!(c.total(), 38);
        assert_eq!(c, PairCounts { wins: 4, equivalents: 28, losses: 6 });
        assert_eq!(l.get("AlbertPT", "BertPT"), PairCounts { wins: 6, equivalents: 28, losses: 4 });
        assert_eq!(l.get("BertPT", "Multilingual").total(), 38);
        assert_eq!(l.get("Baseline", "BertPT").total(), 23);
    }

    #[test]
    fn readings_are_reported() {
        let recs = published_scores();
        let published = published_comparison();
        assert_eq!(published.len(), 6);
        let results = discrepancy_report(&recs, DEFAULT_THRESHOLD, &published).unwrap();
        let get = |r: Reading| results.iter().find(|x| x.reading == r).unwrap();
        let key = ("BertPT".to_string(), "AlbertPT".to_string());
        assert!(get(Reading::AllCells).mismatches.iter().all(|m| (m.0.clone(), m.1.clone()) != key));
        assert_eq!(
            get(Reading::AllCellsMseLower).ledger.get("BertPT", "AlbertPT"),
            PairCounts { wins: 2, equivalents: 28, losses: 8 }
        );
        assert_eq!(get(Reading::F1Only).ledger.get("BertPT", "AlbertPT").total(), 16);
        let text = discrepancy_text(&results);
        assert!(text.contains("F1 cells only"));
    }

    #[test]
    fn table_layout() {
        let l = Reading::AllCells.ledger(&published_scores(), DEFAULT_THRESHOLD).unwrap();
        let t = l.table_text();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("BertPT") && lines[3].contains("   4   28    6"));
        assert!(l.to_csv().contains("BertPT,AlbertPT,4,28,6,38"));
    }

    #[test]
    fn duplicates_rejected() {
        let r = ScoreRecord { task: "t".into(), setting: "s".into(), model: "A".into(), metric: "acc".into(), value: 0.5 };
        assert!(ScoreTable::from_records(&[r.clone(), r]).is_err());
    }

    proptest! {
        #[test]
        fn antisymmetry_and_conservation(scores in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 3), 1..20)) {
            let mut recs = Vec::new();
            for (t, row) in scores.iter().enumerate() {
                for (m, &v) in row.iter().enumerate() {
                    recs.push(ScoreRecord { task: format!("t{t}"), setting: "s".into(), model: format!("M{m}"), metric: "acc".into(), value: v });
                }
            }
            let l = compare(&ScoreTable::from_records(&recs).unwrap(), DEFAULT_THRESHOLD).unwrap();
            for a in &l.models {
                for b in &l.models {
                    if a != b {
                        prop_assert_eq!(l.get(a, b).wins, l.get(b, a).losses);
                        prop_assert_eq!(l.get(a, b).total(), scores.len());
                    }
                }
            }
        }

        #[test]
        fn verdict_is_scale_free(a in 0.01f64..10.0, b in 0.01f64..10.0, c in 0.001f64..1000.0) {
            let equiv = |x, y| verdict(x, y, DEFAULT_THRESHOLD).unwrap() == Verdict::Equivalent;
            let r = (a - b).abs() / a.min(b);
            prop_assume!((r - DEFAULT_THRESHOLD).abs() > 1e-6);
            prop_assert_eq!(equiv(a, b), equiv(a * c, b * c));
        }
    }
}
