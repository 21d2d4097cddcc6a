//! Task-routed decision rules.
//!
//! * DM: the output must entail the reference definition; one query
//!   `(hyp, tgt)`, score `1 - p_entail`.
//! * MT/PG, bidirectional: the output and the source must entail each other;
//!   queries `(src, hyp)` and `(hyp, src)`, score `1 - min(p_entail)`.
//! * MT/PG, unidirectional: a single configured direction.
//!
//! The score is the predicted p(Hallucination); the label comes from a
//! threshold on it or from the argmax class of each judgment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Sample, TaskKind};
use crate::nli::{BackendDescriptor, EntailmentJudgment, NliBackend, NliError, TextPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unidirectional,
    Bidirectional,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Unidirectional => "Unidirectional",
            Mode::Bidirectional => "Bidirectional",
        })
    }
}

/// Which text is the premise and which the hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HypToTgt,
    SrcToHyp,
    HypToSrc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    #[default]
    Threshold,
    Argmax,
}

/// Which rule produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    HypEntailsTgt,
    BidirectionalEquivalence,
    Unidirectional,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sample {sample_id}: direction {direction:?} {problem}")]
    Judgments {
        sample_id: String,
        direction: Direction,
        problem: &'static str,
    },
    #[error("sample {sample_id}: no backend configured for task {task}")]
    NoBackend { sample_id: String, task: TaskKind },
    #[error("sample {sample_id}: {source}")]
    Backend {
        sample_id: String,
        #[source]
        source: NliError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub mode: Mode,
    pub threshold: f64,
    pub unidirectional_direction: Direction,
    pub decision: Decision,
    pub backend_by_task: BTreeMap<TaskKind, BackendDescriptor>,
}

impl DetectionConfig {
    /// Defaults (threshold 0.5, hyp-to-src, threshold decision) with one
    /// backend for every task.
    pub fn new(mode: Mode, backend: BackendDescriptor) -> Self {
        Self {
            mode,
            threshold: 0.5,
            unidirectional_direction: Direction::HypToSrc,
            decision: Decision::Threshold,
            backend_by_task: TaskKind::ALL.iter().map(|t| (*t, backend.clone())).collect(),
        }
    }

    /// Checks hard invariants and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>, DetectError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(DetectError::Config(format!(
                "threshold {} must lie strictly between 0 and 1",
                self.threshold
            )));
        }
        if self.unidirectional_direction == Direction::HypToTgt {
            return Err(DetectError::Config(
                "unidirectional direction must be src_to_hyp or hyp_to_src".into(),
            ));
        }
        for task in TaskKind::ALL {
            if !self.backend_by_task.contains_key(&task) {
                return Err(DetectError::Config(format!("no backend for task {task}")));
            }
        }
        let mut warnings = Vec::new();
        let mt = &self.backend_by_task[&TaskKind::MT];
        if !mt.multilingual {
            warnings.push(format!(
                "MT samples are routed to {}, which is not marked multilingual",
                mt.identity
            ));
        }
        Ok(warnings)
    }
}

/// One entailment query for a sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub premise: String,
    pub hypothesis: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectedJudgment {
    pub direction: Direction,
    pub judgment: EntailmentJudgment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rule: Rule,
    pub decision: Decision,
    pub threshold: f64,
    pub backend: String,
}

/// Detection result for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub label: Label,
    #[serde(rename = "p_hallucination")]
    pub score: f64,
    pub mode: Mode,
    pub judgments: Vec<DirectedJudgment>,
    pub provenance: Provenance,
}

/// A sample that could not be judged (lenient runs only).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFailure {
    pub sample_id: String,
    pub error: NliError,
}

pub fn required_queries(sample: &Sample, config: &DetectionConfig) -> Vec<Query> {
    let q = |premise: &str, hypothesis: &str, direction| Query {
        premise: premise.to_string(),
        hypothesis: hypothesis.to_string(),
        direction,
    };
    match (sample.task, config.mode) {
        (TaskKind::DM, _) => vec![q(&sample.hyp, &sample.tgt, Direction::HypToTgt)],
        (_, Mode::Bidirectional) => vec![
            q(&sample.src, &sample.hyp, Direction::SrcToHyp),
            q(&sample.hyp, &sample.src, Direction::HypToSrc),
        ],
        (_, Mode::Unidirectional) => match config.unidirectional_direction {
            Direction::SrcToHyp => vec![q(&sample.src, &sample.hyp, Direction::SrcToHyp)],
            _ => vec![q(&sample.hyp, &sample.src, Direction::HypToSrc)],
        },
    }
}

fn rule_for(sample: &Sample, config: &DetectionConfig) -> Rule {
    match (sample.task, config.mode) {
        (TaskKind::DM, _) => Rule::HypEntailsTgt,
        (_, Mode::Bidirectional) => Rule::BidirectionalEquivalence,
        (_, Mode::Unidirectional) => Rule::Unidirectional,
    }
}

/// Hallucination score: one minus the weakest required entailment.
pub fn score_sample(
    sample: &Sample,
    judgments: &[DirectedJudgment],
    config: &DetectionConfig,
) -> Result<f64, DetectError> {
    let required = required_queries(sample, config);
    let problem = |direction, problem| DetectError::Judgments {
        sample_id: sample.id.clone(),
        direction,
        problem,
    };
    for j in judgments {
        if !required.iter().any(|q| q.direction == j.direction) {
            return Err(problem(j.direction, "is not required by the rule"));
        }
    }
    let mut weakest = f64::INFINITY;
    for q in &required {
        let mut matching = judgments.iter().filter(|j| j.direction == q.direction);
        let j = matching.next().ok_or_else(|| problem(q.direction, "is missing"))?;
        if matching.next().is_some() {
            return Err(problem(q.direction, "is duplicated"));
        }
        weakest = weakest.min(j.judgment.entailment());
    }
    Ok((1.0 - weakest).clamp(0.0, 1.0))
}

pub fn classify(score: f64, judgments: &[DirectedJudgment], config: &DetectionConfig) -> Label {
    let hallucinated = match config.decision {
        Decision::Threshold => score > config.threshold,
        Decision::Argmax => judgments.iter().any(|j| !j.judgment.entailment_is_argmax()),
    };
    if hallucinated {
        Label::Hallucination
    } else {
        Label::NotHallucination
    }
}

/// Builds a verdict from already-obtained judgments.
pub fn verdict_for(
    sample: &Sample,
    judgments: Vec<DirectedJudgment>,
    config: &DetectionConfig,
    backend: &str,
) -> Result<Verdict, DetectError> {
    let score = score_sample(sample, &judgments, config)?;
    let label = classify(score, &judgments, config);
    Ok(Verdict {
        id: sample.id.clone(),
        label,
        score,
        mode: config.mode,
        judgments,
        provenance: Provenance {
            rule: rule_for(sample, config),
            decision: config.decision,
            threshold: config.threshold,
            backend: backend.to_string(),
        },
    })
}

/// Live backends for each task.
#[derive(Clone)]
pub struct BackendSet {
    by_task: BTreeMap<TaskKind, Arc<dyn NliBackend>>,
}

impl BackendSet {
    pub fn uniform(backend: Arc<dyn NliBackend>) -> Self {
        Self {
            by_task: TaskKind::ALL.iter().map(|t| (*t, backend.clone())).collect(),
        }
    }

    pub fn with_task(mut self, task: TaskKind, backend: Arc<dyn NliBackend>) -> Self {
        self.by_task.insert(task, backend);
        self
    }

    pub fn get(&self, task: TaskKind) -> Option<&Arc<dyn NliBackend>> {
        self.by_task.get(&task)
    }

    pub fn descriptors(&self) -> BTreeMap<TaskKind, BackendDescriptor> {
        self.by_task
            .iter()
            .map(|(t, b)| (*t, b.descriptor().clone()))
            .collect()
    }
}

type CacheKey = (String, String, String);

/// Judgments keyed by (backend, premise, hypothesis). Shareable across runs
/// and threads.
#[derive(Debug, Default)]
pub struct QueryCache {
    entries: Mutex<HashMap<CacheKey, EntailmentJudgment>>,
    queries: AtomicU64,
    backend_calls: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    /// Queries requested by the decision rules.
    pub queries: u64,
    /// Pairs actually sent to a backend.
    pub backend_calls: u64,
    /// Distinct (backend, premise, hypothesis) keys stored.
    pub unique_pairs: u64,
}

impl QueryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            queries: self.queries.load(Ordering::Relaxed),
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            unique_pairs: self.entries.lock().expect("cache lock").len() as u64,
        }
    }

    fn get(&self, key: &CacheKey) -> Option<EntailmentJudgment> {
        self.entries.lock().expect("cache lock").get(key).copied()
    }

    fn insert(&self, key: CacheKey, judgment: EntailmentJudgment) {
        self.entries.lock().expect("cache lock").insert(key, judgment);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectOptions {
    /// Abort on the first backend failure instead of recording it.
    pub strict: bool,
    /// Worker threads issuing backend batches.
    pub jobs: usize,
    /// Pairs per backend call.
    pub batch_size: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            strict: true,
            jobs: 1,
            batch_size: 32,
        }
    }
}

pub type SampleOutcome = Result<Verdict, SampleFailure>;

struct WorkItem {
    backend: Arc<dyn NliBackend>,
    keys: Vec<CacheKey>,
}

/// Runs the decision rules over every sample. Output order equals input order.
pub fn detect_all(
    samples: &[Sample],
    backends: &BackendSet,
    config: &DetectionConfig,
    cache: &QueryCache,
    options: DetectOptions,
) -> Result<Vec<SampleOutcome>, DetectError> {
    for warning in config.validate()? {
        log::warn!("{warning}");
    }

    // Resolve queries and collect cache misses, grouped per backend.
    let mut planned = Vec::with_capacity(samples.len());
    let mut pending: BTreeMap<String, (Arc<dyn NliBackend>, Vec<CacheKey>)> = BTreeMap::new();
    let mut seen: std::collections::HashSet<CacheKey> = std::collections::HashSet::new();
    for sample in samples {
        let backend = backends.get(sample.task).ok_or_else(|| DetectError::NoBackend {
            sample_id: sample.id.clone(),
            task: sample.task,
        })?;
        let descriptor = backend.descriptor();
        if config.backend_by_task.get(&sample.task) != Some(descriptor) {
            return Err(DetectError::Config(format!(
                "backend for {} does not match the configured descriptor",
                sample.task
            )));
        }
        let ns = descriptor.cache_key();
        let queries = required_queries(sample, config);
        cache.queries.fetch_add(queries.len() as u64, Ordering::Relaxed);
        let keys: Vec<(Direction, CacheKey)> = queries
            .into_iter()
            .map(|q| (q.direction, (ns.clone(), q.premise, q.hypothesis)))
            .collect();
        for (_, key) in &keys {
            if cache.get(key).is_none() && seen.insert(key.clone()) {
                pending
                    .entry(ns.clone())
                    .or_insert_with(|| (backend.clone(), Vec::new()))
                    .1
                    .push(key.clone());
            }
        }
        planned.push((sample, descriptor.identity.clone(), keys));
    }

    let batch_size = options.batch_size.max(1);
    let work: Vec<WorkItem> = pending
        .into_values()
        .flat_map(|(backend, keys)| {
            keys.chunks(batch_size)
                .map(|c| WorkItem {
                    backend: backend.clone(),
                    keys: c.to_vec(),
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let failures: Mutex<HashMap<CacheKey, NliError>> = Mutex::new(HashMap::new());
    let next = AtomicUsize::new(0);
    let workers = options.jobs.max(1).min(work.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = work.get(i) else { break };
                let pairs: Vec<TextPair> = item
                    .keys
                    .iter()
                    .map(|(_, p, h)| TextPair::new(p.clone(), h.clone()))
                    .collect();
                cache
                    .backend_calls
                    .fetch_add(pairs.len() as u64, Ordering::Relaxed);
                let results = item.backend.judge_batch(&pairs);
                for (key, result) in item.keys.iter().zip(results) {
                    match result {
                        Ok(j) => cache.insert(key.clone(), j),
                        Err(e) => {
                            failures.lock().expect("failure lock").insert(key.clone(), e);
                        }
                    }
                }
            });
        }
    });
    let failures = failures.into_inner().expect("failure lock");

    let mut outcomes = Vec::with_capacity(planned.len());
    for (sample, backend_id, keys) in planned {
        let mut judgments = Vec::with_capacity(keys.len());
        let mut failure = None;
        for (direction, key) in &keys {
            match cache.get(key) {
                Some(judgment) => judgments.push(DirectedJudgment {
                    direction: *direction,
                    judgment,
                }),
                None => {
                    let error = failures.get(key).cloned().unwrap_or_else(|| {
                        NliError::Unavailable("query was not answered".into())
                    });
                    failure = Some(error);
                    break;
                }
            }
        }
        match failure {
            Some(error) if options.strict => {
                return Err(DetectError::Backend {
                    sample_id: sample.id.clone(),
                    source: error,
                })
            }
            Some(error) => outcomes.push(Err(SampleFailure {
                sample_id: sample.id.clone(),
                error,
            })),
            None => outcomes.push(Ok(verdict_for(sample, judgments, config, &backend_id)?)),
        }
    }
    Ok(outcomes)
}
