//! Generation records and prediction files.
//!
//! Input files are JSON arrays of objects with the keys `task`, `src`, `tgt`,
//! `hyp`, `model`, and (for annotated splits) `label` and `p(Hallucination)`.
//! Keys the detector does not consume are kept verbatim in [`Sample::extras`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::detector::Verdict;

/// Generation task a record was produced for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    /// Definition modelling.
    DM,
    /// Machine translation.
    MT,
    /// Paraphrase generation.
    PG,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::DM, TaskKind::MT, TaskKind::PG];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::DM => "DM",
            TaskKind::MT => "MT",
            TaskKind::PG => "PG",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DM" => Ok(TaskKind::DM),
            "MT" => Ok(TaskKind::MT),
            "PG" => Ok(TaskKind::PG),
            _ => Err(RecordError::UnknownTask(s.to_string())),
        }
    }
}

/// Binary hallucination label. Hallucination is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "Hallucination")]
    Hallucination,
    #[serde(rename = "Not Hallucination")]
    NotHallucination,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hallucination => "Hallucination",
            Label::NotHallucination => "Not Hallucination",
        }
    }

    pub fn is_hallucination(self) -> bool {
        self == Label::Hallucination
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        match norm.as_str() {
            "hallucination" => Ok(Label::Hallucination),
            "not hallucination" => Ok(Label::NotHallucination),
            _ => Err(RecordError::InvalidLabel(s.to_string())),
        }
    }
}

/// Aggregated human annotation. Stored values are authoritative even when the
/// label disagrees with the majority implied by `p_hallucination`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldAnnotation {
    pub label: Label,
    pub p_hallucination: f64,
}

impl GoldAnnotation {
    pub fn new(label: Label, p_hallucination: f64) -> Result<Self, RecordError> {
        if !(0.0..=1.0).contains(&p_hallucination) {
            return Err(RecordError::ProbabilityOutOfRange(p_hallucination));
        }
        Ok(Self {
            label,
            p_hallucination,
        })
    }

    /// Whether the label agrees with a strict annotator majority.
    pub fn is_majority_consistent(&self) -> bool {
        self.label.is_hallucination() == (self.p_hallucination > 0.5)
    }
}

/// One generation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub task: TaskKind,
    pub src: String,
    pub tgt: String,
    pub hyp: String,
    /// `None` for model-agnostic records (absent or empty `model`).
    pub model: Option<String>,
    pub gold: Option<GoldAnnotation>,
    /// Unrecognised keys, carried through untouched.
    pub extras: Map<String, Value>,
}

impl Sample {
    /// Builds a sample and checks the fields the decision rule consumes.
    pub fn new(
        id: impl Into<String>,
        task: TaskKind,
        src: impl Into<String>,
        tgt: impl Into<String>,
        hyp: impl Into<String>,
    ) -> Result<Self, RecordError> {
        let sample = Self {
            id: id.into(),
            task,
            src: src.into(),
            tgt: tgt.into(),
            hyp: hyp.into(),
            model: None,
            gold: None,
            extras: Map::new(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn with_gold(mut self, gold: GoldAnnotation) -> Self {
        self.gold = Some(gold);
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        let model = model.into();
        self.model = if model.is_empty() { None } else { Some(model) };
        self
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.hyp.trim().is_empty() {
            return Err(RecordError::EmptyField("hyp"));
        }
        match self.task {
            TaskKind::DM if self.tgt.trim().is_empty() => Err(RecordError::EmptyField("tgt")),
            TaskKind::MT | TaskKind::PG if self.src.trim().is_empty() => {
                Err(RecordError::EmptyField("src"))
            }
            _ => Ok(()),
        }
    }
}

/// Why a single record was rejected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("record is not a JSON object")]
    NotObject,
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("required field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("key `{0}` has the wrong JSON type")]
    WrongType(String),
    #[error("unknown task string {0:?}")]
    UnknownTask(String),
    #[error("p(Hallucination) {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("invalid gold label {0:?}")]
    InvalidLabel(String),
    #[error("gold annotation needs both `label` and `p(Hallucination)`")]
    IncompleteGold,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("expected a top-level JSON array")]
    NotArray,
    #[error("record {index}: {error}")]
    InvalidRecord { index: usize, error: RecordError },
    #[error("prediction {index}: {message}")]
    InvalidPrediction { index: usize, message: String },
}

/// A record skipped by a lenient parse.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRecord {
    pub index: usize,
    pub error: RecordError,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedDataset {
    pub samples: Vec<Sample>,
    pub dropped: Vec<DroppedRecord>,
}

impl ParsedDataset {
    pub fn record_count(&self) -> usize {
        self.samples.len() + self.dropped.len()
    }
}

const KNOWN_KEYS: [&str; 9] = [
    "id",
    "task",
    "src",
    "tgt",
    "hyp",
    "model",
    "label",
    "p(Hallucination)",
    "p_hallucination",
];

/// Parses a JSON array of generation records.
///
/// In strict mode the first invalid record aborts the parse. In lenient mode
/// invalid records are dropped and reported in [`ParsedDataset::dropped`].
pub fn parse_dataset(raw: &str, strict: bool) -> Result<ParsedDataset, DatasetError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Json(e.to_string()))?;
    let Value::Array(records) = value else {
        return Err(DatasetError::NotArray);
    };

    let mut parsed = ParsedDataset::default();
    for (index, record) in records.into_iter().enumerate() {
        match parse_record(index, record) {
            Ok(sample) => parsed.samples.push(sample),
            Err(error) if strict => return Err(DatasetError::InvalidRecord { index, error }),
            Err(error) => parsed.dropped.push(DroppedRecord { index, error }),
        }
    }
    Ok(parsed)
}

fn parse_record(index: usize, record: Value) -> Result<Sample, RecordError> {
    let Value::Object(mut obj) = record else {
        return Err(RecordError::NotObject);
    };

    let id = match obj.get("id") {
        None | Some(Value::Null) => index.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err(RecordError::WrongType("id".into())),
    };

    let task: TaskKind = opt_str(&obj, "task")?
        .ok_or(RecordError::MissingKey("task"))?
        .parse()?;
    let hyp = opt_str(&obj, "hyp")?.ok_or(RecordError::MissingKey("hyp"))?;
    let src = opt_str(&obj, "src")?;
    let tgt = opt_str(&obj, "tgt")?;
    match task {
        TaskKind::DM if tgt.is_none() => return Err(RecordError::MissingKey("tgt")),
        TaskKind::MT | TaskKind::PG if src.is_none() => return Err(RecordError::MissingKey("src")),
        _ => {}
    }
    let model = opt_str(&obj, "model")?.filter(|m| !m.is_empty());

    let label = opt_str(&obj, "label")?.map(|l| l.parse::<Label>()).transpose()?;
    let p = match (obj.get("p(Hallucination)"), obj.get("p_hallucination")) {
        (Some(v), _) if !v.is_null() => Some(as_f64(v, "p(Hallucination)")?),
        (_, Some(v)) if !v.is_null() => Some(as_f64(v, "p_hallucination")?),
        _ => None,
    };
    let gold = match (label, p) {
        (Some(label), Some(p)) => Some(GoldAnnotation::new(label, p)?),
        (None, None) => None,
        (None, Some(p)) if !(0.0..=1.0).contains(&p) => {
            return Err(RecordError::ProbabilityOutOfRange(p))
        }
        _ => return Err(RecordError::IncompleteGold),
    };

    for key in KNOWN_KEYS {
        obj.remove(key);
    }

    let sample = Sample {
        id,
        task,
        src: src.unwrap_or_default(),
        tgt: tgt.unwrap_or_default(),
        hyp,
        model,
        gold,
        extras: obj,
    };
    sample.validate()?;
    Ok(sample)
}

fn opt_str(obj: &Map<String, Value>, key: &'static str) -> Result<Option<String>, RecordError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(RecordError::WrongType(key.into())),
    }
}

fn as_f64(v: &Value, key: &str) -> Result<f64, RecordError> {
    v.as_f64().ok_or_else(|| RecordError::WrongType(key.into()))
}

/// Serializes samples back into the input format. Parsing the output yields
/// the same samples.
pub fn serialize_dataset(samples: &[Sample]) -> String {
    let records: Vec<Value> = samples
        .iter()
        .map(|s| {
            let mut obj = Map::new();
            obj.insert("id".into(), Value::String(s.id.clone()));
            obj.insert("task".into(), Value::String(s.task.to_string()));
            obj.insert("src".into(), Value::String(s.src.clone()));
            obj.insert("tgt".into(), Value::String(s.tgt.clone()));
            obj.insert("hyp".into(), Value::String(s.hyp.clone()));
            obj.insert(
                "model".into(),
                Value::String(s.model.clone().unwrap_or_default()),
            );
            if let Some(gold) = &s.gold {
                obj.insert("label".into(), Value::String(gold.label.to_string()));
                obj.insert("p(Hallucination)".into(), Value::from(gold.p_hallucination));
            }
            for (k, v) in &s.extras {
                obj.insert(k.clone(), v.clone());
            }
            Value::Object(obj)
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("JSON values always serialize")
}

/// Partitions samples by task, preserving relative order. Every task has an
/// entry, possibly empty.
pub fn split_by_task(samples: &[Sample]) -> BTreeMap<TaskKind, Vec<Sample>> {
    let mut out: BTreeMap<TaskKind, Vec<Sample>> =
        TaskKind::ALL.iter().map(|t| (*t, Vec::new())).collect();
    for s in samples {
        out.get_mut(&s.task).expect("all tasks present").push(s.clone());
    }
    out
}

/// Writes verdicts as a JSON array with a fixed key order.
pub fn serialize_predictions(verdicts: &[Verdict]) -> String {
    if verdicts.is_empty() {
        return "[]".to_string();
    }
    serde_json::to_string_pretty(verdicts).expect("verdicts always serialize")
}

/// Reads a prediction file written by [`serialize_predictions`].
pub fn parse_predictions(raw: &str) -> Result<Vec<Verdict>, DatasetError> {
    let values: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Json(e.to_string()))?;
    let Value::Array(items) = values else {
        return Err(DatasetError::NotArray);
    };
    items
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            let verdict: Verdict =
                serde_json::from_value(v).map_err(|e| DatasetError::InvalidPrediction {
                    index,
                    message: e.to_string(),
                })?;
            if !(0.0..=1.0).contains(&verdict.score) {
                return Err(DatasetError::InvalidPrediction {
                    index,
                    message: format!("p_hallucination {} outside [0, 1]", verdict.score),
                });
            }
            Ok(verdict)
        })
        .collect()
}
