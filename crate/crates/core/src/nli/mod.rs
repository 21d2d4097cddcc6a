//! Entailment judgments over ordered (premise, hypothesis) pairs.
//!
//! Three backends implement [`NliBackend`]: a table-driven [`MockBackend`],
//! a [`LocalBackend`] running an ONNX cross-encoder, and a [`RemoteBackend`]
//! speaking the `POST /v1/entail` JSON protocol.

use std::fmt;

use serde::{Deserialize, Serialize};

mod local;
mod mock;
mod remote;

pub use local::{LabelManifest, LocalBackend, LocalOptions, TruncationPolicy};
pub use mock::{MockBackend, MockTableEntry, MockTableFile, DEFAULT_MISS_TRIPLE};
pub use remote::{remote_judge, EntailRequest, EntailResponse, RemoteBackend, WirePair};

/// Tolerance on the sum of a probability triple.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NliError {
    #[error("{0} text is empty")]
    EmptyInput(&'static str),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("input of {tokens} tokens exceeds the limit of {limit}")]
    InputTooLong { tokens: usize, limit: usize },
    #[error("invalid judgment: {0}")]
    InvalidJudgment(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("pair {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<NliError>,
    },
}

/// The three NLI classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliClass {
    Entailment,
    Neutral,
    Contradiction,
}

/// Probability triple over {entailment, neutral, contradiction}.
///
/// Construction checks that each component lies in `[0, 1]` and that the
/// three sum to one within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTriple")]
pub struct EntailmentJudgment {
    entailment: f64,
    neutral: f64,
    contradiction: f64,
}

#[derive(Deserialize)]
struct RawTriple {
    entailment: f64,
    neutral: f64,
    contradiction: f64,
}

impl TryFrom<RawTriple> for EntailmentJudgment {
    type Error = NliError;

    fn try_from(raw: RawTriple) -> Result<Self, Self::Error> {
        EntailmentJudgment::new(raw.entailment, raw.neutral, raw.contradiction)
    }
}

impl EntailmentJudgment {
    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Result<Self, NliError> {
        for (name, p) in [
            ("entailment", entailment),
            ("neutral", neutral),
            ("contradiction", contradiction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(NliError::InvalidJudgment(format!(
                    "{name} probability {p} outside [0, 1]"
                )));
            }
        }
        let sum = entailment + neutral + contradiction;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(NliError::InvalidJudgment(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            entailment,
            neutral,
            contradiction,
        })
    }

    /// Softmax over logits given in the order `order`.
    pub fn from_logits(logits: &[f64], order: &LabelOrder) -> Result<Self, NliError> {
        if logits.len() != 3 {
            return Err(NliError::Model(format!(
                "expected 3 logits, got {}",
                logits.len()
            )));
        }
        let probs = softmax(logits);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(NliError::Model(format!("non-finite logits {logits:?}")));
        }
        let at = |class| probs[order.index_of(class)];
        Self::new(
            at(NliClass::Entailment),
            at(NliClass::Neutral),
            at(NliClass::Contradiction),
        )
    }

    pub fn entailment(&self) -> f64 {
        self.entailment
    }

    pub fn neutral(&self) -> f64 {
        self.neutral
    }

    pub fn contradiction(&self) -> f64 {
        self.contradiction
    }

    pub fn probability(&self, class: NliClass) -> f64 {
        match class {
            NliClass::Entailment => self.entailment,
            NliClass::Neutral => self.neutral,
            NliClass::Contradiction => self.contradiction,
        }
    }

    /// Entailment counts as the argmax only when it is strictly greater than
    /// both other classes.
    pub fn entailment_is_argmax(&self) -> bool {
        self.entailment > self.neutral && self.entailment > self.contradiction
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Position of each class in a model's output vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NliClass>", into = "Vec<NliClass>")]
pub struct LabelOrder([NliClass; 3]);

impl LabelOrder {
    pub const STANDARD: LabelOrder = LabelOrder([
        NliClass::Entailment,
        NliClass::Neutral,
        NliClass::Contradiction,
    ]);

    pub fn new(order: [NliClass; 3]) -> Result<Self, NliError> {
        for class in [NliClass::Entailment, NliClass::Neutral, NliClass::Contradiction] {
            if !order.contains(&class) {
                return Err(NliError::Model(format!(
                    "label order {order:?} lacks {class:?}"
                )));
            }
        }
        Ok(Self(order))
    }

    pub fn index_of(&self, class: NliClass) -> usize {
        self.0.iter().position(|c| *c == class).expect("validated")
    }
}

impl TryFrom<Vec<NliClass>> for LabelOrder {
    type Error = NliError;

    fn try_from(v: Vec<NliClass>) -> Result<Self, Self::Error> {
        let arr: [NliClass; 3] = v
            .try_into()
            .map_err(|v: Vec<_>| NliError::Model(format!("label order has {} entries", v.len())))?;
        LabelOrder::new(arr)
    }
}

impl From<LabelOrder> for Vec<NliClass> {
    fn from(o: LabelOrder) -> Self {
        o.0.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Local,
    Remote,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Mock => "mock",
            BackendKind::Local => "local",
            BackendKind::Remote => "remote",
        })
    }
}

/// Which model answered a query. Used for report rows and cache keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub identity: String,
    pub multilingual: bool,
}

impl BackendDescriptor {
    pub fn new(
        kind: BackendKind,
        identity: impl Into<String>,
        multilingual: bool,
    ) -> Result<Self, NliError> {
        let identity = identity.into();
        if kind != BackendKind::Mock && identity.trim().is_empty() {
            return Err(NliError::Model(format!("{kind} backend needs an identity")));
        }
        Ok(Self {
            kind,
            identity,
            multilingual,
        })
    }

    /// Cache namespace for this backend.
    pub fn cache_key(&self) -> String {
        format!("{}:{}", self.kind, self.identity)
    }
}

/// An ordered text pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TextPair {
    pub premise: String,
    pub hypothesis: String,
}

impl TextPair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

/// Uniform judging contract. Implementations must tolerate concurrent callers.
pub trait NliBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentJudgment, NliError>;

    /// One result per pair, in order. A failing pair does not affect the others.
    fn judge_batch(&self, pairs: &[TextPair]) -> Vec<Result<EntailmentJudgment, NliError>> {
        pairs
            .iter()
            .map(|p| self.judge(&p.premise, &p.hypothesis))
            .collect()
    }
}

/// Batch judging that fails on the first bad pair, naming its index.
pub fn judge_batch_strict(
    backend: &dyn NliBackend,
    pairs: &[TextPair],
) -> Result<Vec<EntailmentJudgment>, NliError> {
    backend
        .judge_batch(pairs)
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| NliError::AtIndex {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

pub(crate) fn check_pair(premise: &str, hypothesis: &str) -> Result<(), NliError> {
    if premise.trim().is_empty() {
        return Err(NliError::EmptyInput("premise"));
    }
    if hypothesis.trim().is_empty() {
        return Err(NliError::EmptyInput("hypothesis"));
    }
    Ok(())
}
