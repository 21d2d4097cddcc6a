//! Client for the `POST /v1/entail` protocol.
//!
//! Request: `{"pairs":[{"premise":"...","hypothesis":"..."}]}`.
//! Response: `{"judgments":[{"entailment":x,"neutral":y,"contradiction":z}]}`,
//! one element per request element, in request order.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_pair, BackendDescriptor, BackendKind, EntailmentJudgment, NliBackend, NliError, TextPair};

const ENTAIL_PATH: &str = "/v1/entail";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirePair {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailRequest {
    pub pairs: Vec<WirePair>,
}

/// Response body. Triples are kept raw so that invariant failures surface as
/// protocol errors with the offending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailResponse {
    pub judgments: Vec<WireTriple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireTriple {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    url: String,
    client: reqwest::blocking::Client,
    max_batch: usize,
}

impl RemoteBackend {
    pub fn new(endpoint: &str, multilingual: bool, timeout: Duration) -> Result<Self, NliError> {
        let url = entail_url(endpoint);
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| NliError::Unavailable(e.to_string()))?;
        Ok(Self {
            descriptor: BackendDescriptor::new(BackendKind::Remote, endpoint, multilingual)?,
            url,
            client,
            max_batch: 64,
        })
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    fn post(&self, pairs: &[&TextPair]) -> Result<Vec<EntailmentJudgment>, NliError> {
        let body = EntailRequest {
            pairs: pairs
                .iter()
                .map(|p| WirePair {
                    premise: p.premise.clone(),
                    hypothesis: p.hypothesis.clone(),
                })
                .collect(),
        };
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| NliError::Unavailable(format!("{}: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(NliError::Protocol(format!("{}: HTTP {status} {text}", self.url)));
        }
        let parsed: EntailResponse = resp
            .json()
            .map_err(|e| NliError::Protocol(format!("undecodable response: {e}")))?;
        validate_response(parsed, pairs.len())
    }
}

fn entail_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with(ENTAIL_PATH) {
        base.to_string()
    } else {
        format!("{base}{ENTAIL_PATH}")
    }
}

/// Checks element count and every triple's invariants.
pub(crate) fn validate_response(
    resp: EntailResponse,
    expected: usize,
) -> Result<Vec<EntailmentJudgment>, NliError> {
    if resp.judgments.len() != expected {
        return Err(NliError::Protocol(format!(
            "sent {expected} pairs, received {} judgments",
            resp.judgments.len()
        )));
    }
    resp.judgments
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            EntailmentJudgment::new(t.entailment, t.neutral, t.contradiction)
                .map_err(|e| NliError::Protocol(format!("judgment {i}: {e}")))
        })
        .collect()
}

impl NliBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentJudgment, NliError> {
        self.judge_batch(&[TextPair::new(premise, hypothesis)])
            .pop()
            .expect("one result per pair")
    }

    fn judge_batch(&self, pairs: &[TextPair]) -> Vec<Result<EntailmentJudgment, NliError>> {
        let mut out: Vec<Option<Result<EntailmentJudgment, NliError>>> = vec![None; pairs.len()];
        let mut valid = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            match check_pair(&p.premise, &p.hypothesis) {
                Ok(()) => valid.push(i),
                Err(e) => out[i] = Some(Err(e)),
            }
        }
        for chunk in valid.chunks(self.max_batch) {
            let refs: Vec<&TextPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            match self.post(&refs) {
                Ok(judgments) => {
                    for (&i, j) in chunk.iter().zip(judgments) {
                        out[i] = Some(Ok(j));
                    }
                }
                Err(e) => {
                    for &i in chunk {
                        out[i] = Some(Err(e.clone()));
                    }
                }
            }
        }
        out.into_iter().map(|r| r.expect("every slot filled")).collect()
    }
}

/// One-shot call against `endpoint`. Fails on the first error.
pub fn remote_judge(endpoint: &str, pairs: &[TextPair]) -> Result<Vec<EntailmentJudgment>, NliError> {
    let backend = RemoteBackend::new(endpoint, false, Duration::from_secs(30))?;
    super::judge_batch_strict(&backend, pairs)
}
