use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_pair, BackendDescriptor, BackendKind, EntailmentJudgment, NliBackend, NliError};

/// Triple returned on a table miss for non-identical texts.
pub const DEFAULT_MISS_TRIPLE: (f64, f64, f64) = (0.1, 0.8, 0.1);

/// Deterministic table-driven backend.
///
/// On a miss, identical premise and hypothesis give `(1, 0, 0)`; anything
/// else gives the configured fallback triple.
#[derive(Debug, Clone)]
pub struct MockBackend {
    descriptor: BackendDescriptor,
    table: HashMap<(String, String), EntailmentJudgment>,
    fallback: EntailmentJudgment,
}

impl MockBackend {
    pub fn from_table<I, P, H>(entries: I, fallback: (f64, f64, f64)) -> Result<Self, NliError>
    where
        I: IntoIterator<Item = ((P, H), (f64, f64, f64))>,
        P: Into<String>,
        H: Into<String>,
    {
        let table = entries
            .into_iter()
            .map(|((p, h), (e, n, c))| Ok(((p.into(), h.into()), EntailmentJudgment::new(e, n, c)?)))
            .collect::<Result<_, NliError>>()?;
        Ok(Self {
            descriptor: BackendDescriptor::new(BackendKind::Mock, "mock", true)?,
            table,
            fallback: EntailmentJudgment::new(fallback.0, fallback.1, fallback.2)?,
        })
    }

    /// Empty table with the default fallback.
    pub fn fallback_only() -> Self {
        Self::from_table(Vec::<((String, String), _)>::new(), DEFAULT_MISS_TRIPLE)
            .expect("default triple is valid")
    }

    pub fn with_identity(mut self, identity: impl Into<String>, multilingual: bool) -> Self {
        self.descriptor.identity = identity.into();
        self.descriptor.multilingual = multilingual;
        self
    }

    pub fn from_file(file: MockTableFile) -> Result<Self, NliError> {
        let fallback = file
            .default
            .map(|d| (d.entailment, d.neutral, d.contradiction))
            .unwrap_or(DEFAULT_MISS_TRIPLE);
        let entries = file.entries.into_iter().map(|e| {
            (
                (e.premise, e.hypothesis),
                (e.entailment, e.neutral, e.contradiction),
            )
        });
        let backend = Self::from_table(entries, fallback)?;
        Ok(backend.with_identity(
            file.identity.unwrap_or_else(|| "mock".to_string()),
            file.multilingual.unwrap_or(true),
        ))
    }

    pub fn load(path: &Path) -> Result<Self, NliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| NliError::Unavailable(format!("{}: {e}", path.display())))?;
        let file: MockTableFile = serde_json::from_str(&raw)
            .map_err(|e| NliError::Model(format!("{}: {e}", path.display())))?;
        Self::from_file(file)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl NliBackend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentJudgment, NliError> {
        check_pair(premise, hypothesis)?;
        if let Some(j) = self.table.get(&(premise.to_string(), hypothesis.to_string())) {
            return Ok(*j);
        }
        if premise == hypothesis {
            return EntailmentJudgment::new(1.0, 0.0, 0.0);
        }
        Ok(self.fallback)
    }
}

/// On-disk mock table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTableFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multilingual: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<TripleFields>,
    #[serde(default)]
    pub entries: Vec<MockTableEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleFields {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockTableEntry {
    pub premise: String,
    pub hypothesis: String,
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}
