//! Accuracy, Spearman rank correlation and per-task breakdowns.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Sample, TaskKind};
use crate::detector::{Decision, Mode, Verdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("{0} vector is constant")]
    Constant(&'static str),
    #[error("{0} vector contains a non-finite value")]
    NonFinite(&'static str),
    #[error("prediction {0} has no matching gold sample")]
    UnmatchedId(String),
    #[error("gold annotation missing for sample {0}")]
    GoldMissing(String),
    #[error("duplicate prediction for sample {0}")]
    DuplicateId(String),
}

pub fn accuracy(pred: &[Label], gold: &[Label]) -> Result<f64, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: xs.len(),
        });
    }
    for (name, v) in [("first", xs), ("second", ys)] {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MetricsError::NonFinite(name));
        }
        if v.iter().all(|x| *x == v[0]) {
            return Err(MetricsError::Constant(name));
        }
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Confusion counts with Hallucination as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, pred: Label, gold: Label) {
        match (pred.is_hallucination(), gold.is_hallucination()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Accuracy, correlation and confusion for one slice of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub n: usize,
    pub accuracy: f64,
    pub spearman_rho: Option<f64>,
    /// Why `spearman_rho` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman_unavailable: Option<String>,
    pub confusion: Confusion,
}

impl Breakdown {
    fn compute(rows: &[(Label, f64, Label, f64)]) -> Result<Self, MetricsError> {
        let pred: Vec<Label> = rows.iter().map(|r| r.0).collect();
        let gold: Vec<Label> = rows.iter().map(|r| r.2).collect();
        let accuracy = accuracy(&pred, &gold)?;
        let mut confusion = Confusion::default();
        for r in rows {
            confusion.add(r.0, r.2);
        }
        let scores: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let golds: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let (spearman_rho, spearman_unavailable) = match spearman(&scores, &golds) {
            Ok(rho) => (Some(rho), None),
            Err(MetricsError::Constant(which)) => (
                None,
                Some(if which == "first" {
                    "predicted scores are constant".to_string()
                } else {
                    "gold p(Hallucination) values are constant".to_string()
                }),
            ),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Self {
            n: rows.len(),
            accuracy,
            spearman_rho,
            spearman_unavailable,
            confusion,
        })
    }
}

/// Settings echoed from the verdicts that were evaluated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub modes: Vec<Mode>,
    pub decisions: Vec<Decision>,
    pub thresholds: Vec<f64>,
    pub backends: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: Breakdown,
    pub per_task: BTreeMap<TaskKind, Breakdown>,
    pub run: RunEcho,
    /// Gold records whose label disagrees with a strict majority of annotators.
    pub gold_label_inconsistencies: usize,
}

impl EvalReport {
    pub fn n(&self) -> usize {
        self.overall.n
    }

    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy
    }
}

/// Scores verdicts against gold-annotated samples, matched by id.
pub fn evaluate(verdicts: &[Verdict], golds: &[Sample]) -> Result<EvalReport, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::TooShort { needed: 1, got: 0 });
    }
    let by_id: HashMap<&str, &Sample> = golds.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut seen = BTreeSet::new();
    let mut rows: Vec<(TaskKind, (Label, f64, Label, f64))> = Vec::with_capacity(verdicts.len());
    let mut inconsistencies = 0;
    for v in verdicts {
        if !seen.insert(v.id.as_str()) {
            return Err(MetricsError::DuplicateId(v.id.clone()));
        }
        let sample = by_id
            .get(v.id.as_str())
            .ok_or_else(|| MetricsError::UnmatchedId(v.id.clone()))?;
        let gold = sample
            .gold
            .ok_or_else(|| MetricsError::GoldMissing(v.id.clone()))?;
        if !gold.is_majority_consistent() {
            inconsistencies += 1;
        }
        rows.push((sample.task, (v.label, v.score, gold.label, gold.p_hallucination)));
    }

    let all: Vec<_> = rows.iter().map(|r| r.1).collect();
    let overall = Breakdown::compute(&all)?;
    let mut per_task = BTreeMap::new();
    for task in TaskKind::ALL {
        let slice: Vec<_> = rows.iter().filter(|r| r.0 == task).map(|r| r.1).collect();
        if !slice.is_empty() {
            per_task.insert(task, Breakdown::compute(&slice)?);
        }
    }

    let mut run = RunEcho::default();
    for v in verdicts {
        if !run.modes.contains(&v.mode) {
            run.modes.push(v.mode);
        }
        if !run.decisions.contains(&v.provenance.decision) {
            run.decisions.push(v.provenance.decision);
        }
        if !run.thresholds.contains(&v.provenance.threshold) {
            run.thresholds.push(v.provenance.threshold);
        }
        if !run.backends.contains(&v.provenance.backend) {
            run.backends.push(v.provenance.backend.clone());
        }
    }
    run.backends.sort();

    Ok(EvalReport {
        overall,
        per_task,
        run,
        gold_label_inconsistencies: inconsistencies,
    })
}
