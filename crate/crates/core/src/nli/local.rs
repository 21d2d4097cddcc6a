//! Cross-encoder NLI model run in-process.
//!
//! A model directory holds `model.onnx`, `tokenizer.json` and `labels.json`.
//! The pair is encoded with the tokenizer's own pair template, so segment
//! markers and type ids come from the tokenizer definition.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tokenizers::{Tokenizer, TruncationDirection, TruncationParams, TruncationStrategy};
use tract_onnx::prelude::*;

use super::{
    check_pair, BackendDescriptor, BackendKind, EntailmentJudgment, LabelOrder, NliBackend,
    NliError, TextPair,
};

pub const MODEL_FILE: &str = "model.onnx";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const MANIFEST_FILE: &str = "labels.json";

const DEFAULT_MAX_LENGTH: usize = 512;

/// `labels.json`. Only `order` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelManifest {
    pub order: LabelOrder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub multilingual: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
}

/// What to do when an encoded pair exceeds the positional limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationPolicy {
    /// Cut the premise from the right, keeping the whole hypothesis.
    #[default]
    Premise,
    /// Refuse over-length pairs.
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalOptions {
    /// Overrides the manifest's `max_length`.
    pub max_length: Option<usize>,
    pub truncation: TruncationPolicy,
    pub batch_size: usize,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            max_length: None,
            truncation: TruncationPolicy::Premise,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InputRole {
    InputIds,
    AttentionMask,
    TokenTypeIds,
}

impl InputRole {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "input_ids" => Some(InputRole::InputIds),
            "attention_mask" => Some(InputRole::AttentionMask),
            "token_type_ids" => Some(InputRole::TokenTypeIds),
            _ => None,
        }
    }
}

struct Encoded {
    ids: Vec<i64>,
    type_ids: Vec<i64>,
}

pub struct LocalBackend {
    descriptor: BackendDescriptor,
    plan: Arc<TypedRunnableModel>,
    inputs: Vec<InputRole>,
    tokenizer: Tokenizer,
    /// Untruncated copy, used to measure and report over-length pairs.
    measuring: Tokenizer,
    order: LabelOrder,
    max_length: usize,
    truncation: TruncationPolicy,
    pad_id: i64,
    batch_size: usize,
    model_dir: PathBuf,
}

impl std::fmt::Debug for LocalBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalBackend")
            .field("descriptor", &self.descriptor)
            .field("model_dir", &self.model_dir)
            .field("max_length", &self.max_length)
            .field("truncation", &self.truncation)
            .finish_non_exhaustive()
    }
}

fn load_err(path: &Path, e: impl std::fmt::Display) -> NliError {
    NliError::Model(format!("{}: {e}", path.display()))
}

impl LocalBackend {
    pub fn load(model_dir: &Path) -> Result<Self, NliError> {
        Self::load_with(model_dir, LocalOptions::default())
    }

    pub fn load_with(model_dir: &Path, options: LocalOptions) -> Result<Self, NliError> {
        let manifest_path = model_dir.join(MANIFEST_FILE);
        let raw = std::fs::read_to_string(&manifest_path).map_err(|e| load_err(&manifest_path, e))?;
        let manifest: LabelManifest =
            serde_json::from_str(&raw).map_err(|e| load_err(&manifest_path, e))?;

        let max_length = options
            .max_length
            .or(manifest.max_length)
            .unwrap_or(DEFAULT_MAX_LENGTH);

        let tok_path = model_dir.join(TOKENIZER_FILE);
        let mut measuring = Tokenizer::from_file(&tok_path).map_err(|e| load_err(&tok_path, e))?;
        measuring
            .with_truncation(None)
            .map_err(|e| load_err(&tok_path, e))?;
        measuring.with_padding(None);
        let pad_id = measuring
            .get_padding()
            .map(|p| p.pad_id as i64)
            .or_else(|| {
                ["[PAD]", "<pad>"]
                    .iter()
                    .find_map(|t| measuring.token_to_id(t))
                    .map(i64::from)
            })
            .unwrap_or(0);
        let mut tokenizer = measuring.clone();
        if options.truncation == TruncationPolicy::Premise {
            tokenizer
                .with_truncation(Some(TruncationParams {
                    max_length,
                    strategy: TruncationStrategy::OnlyFirst,
                    stride: 0,
                    direction: TruncationDirection::Right,
                }))
                .map_err(|e| load_err(&tok_path, e))?;
        }

        let model_path = model_dir.join(MODEL_FILE);
        if !model_path.is_file() {
            return Err(load_err(&model_path, "model file not found"));
        }
        let model = tract_onnx::onnx()
            .model_for_path(&model_path)
            .and_then(|m| m.into_optimized())
            .map_err(|e| load_err(&model_path, e))?;
        let mut inputs = Vec::new();
        for outlet in model.input_outlets().map_err(|e| load_err(&model_path, e))? {
            let name = &model.node(outlet.node).name;
            let role = InputRole::from_name(name)
                .ok_or_else(|| load_err(&model_path, format!("unsupported model input `{name}`")))?;
            inputs.push(role);
        }
        if !inputs.contains(&InputRole::InputIds) {
            return Err(load_err(&model_path, "model has no `input_ids` input"));
        }
        let plan = model
            .into_runnable()
            .map_err(|e| load_err(&model_path, e))?;

        let identity = manifest.name.clone().unwrap_or_else(|| {
            model_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| model_dir.display().to_string())
        });

        let backend = Self {
            descriptor: BackendDescriptor::new(BackendKind::Local, identity, manifest.multilingual)?,
            plan,
            inputs,
            tokenizer,
            measuring,
            order: manifest.order,
            max_length,
            truncation: options.truncation,
            pad_id,
            batch_size: options.batch_size.max(1),
            model_dir: model_dir.to_path_buf(),
        };
        // Surfaces logit-count problems at load time rather than on first use.
        backend.run(&[backend.encode("a", "a")?])?;
        Ok(backend)
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    fn encode(&self, premise: &str, hypothesis: &str) -> Result<Encoded, NliError> {
        check_pair(premise, hypothesis)?;
        let measured = || -> Result<usize, NliError> {
            self.measuring
                .encode((premise, hypothesis), true)
                .map(|e| e.len())
                .map_err(|e| NliError::Model(e.to_string()))
        };
        let encoding = match self.truncation {
            TruncationPolicy::Error => {
                let enc = self
                    .measuring
                    .encode((premise, hypothesis), true)
                    .map_err(|e| NliError::Model(e.to_string()))?;
                if enc.len() > self.max_length {
                    return Err(NliError::InputTooLong {
                        tokens: enc.len(),
                        limit: self.max_length,
                    });
                }
                enc
            }
            // Fails when the hypothesis alone does not fit.
            TruncationPolicy::Premise => self
                .tokenizer
                .encode((premise, hypothesis), true)
                .map_err(|_| match measured() {
                    Ok(tokens) => NliError::InputTooLong {
                        tokens,
                        limit: self.max_length,
                    },
                    Err(e) => e,
                })?,
        };
        if encoding.len() > self.max_length {
            return Err(NliError::InputTooLong {
                tokens: encoding.len(),
                limit: self.max_length,
            });
        }
        Ok(Encoded {
            ids: encoding.get_ids().iter().map(|&i| i64::from(i)).collect(),
            type_ids: encoding.get_type_ids().iter().map(|&i| i64::from(i)).collect(),
        })
    }

    /// Runs one padded batch through the graph.
    fn run(&self, batch: &[Encoded]) -> Result<Vec<EntailmentJudgment>, NliError> {
        let rows = batch.len();
        let width = batch.iter().map(|e| e.ids.len()).max().unwrap_or(0);
        let mut ids = vec![self.pad_id; rows * width];
        let mut mask = vec![0i64; rows * width];
        let mut types = vec![0i64; rows * width];
        for (r, enc) in batch.iter().enumerate() {
            let base = r * width;
            ids[base..base + enc.ids.len()].copy_from_slice(&enc.ids);
            types[base..base + enc.type_ids.len()].copy_from_slice(&enc.type_ids);
            mask[base..base + enc.ids.len()].fill(1);
        }
        let tensor = |data: &[i64]| -> Result<TValue, NliError> {
            tract_ndarray::Array2::from_shape_vec((rows, width), data.to_vec())
                .map(|a| a.into_tensor().into())
                .map_err(|e| NliError::Model(e.to_string()))
        };
        let mut inputs = TVec::new();
        for role in &self.inputs {
            inputs.push(match role {
                InputRole::InputIds => tensor(&ids)?,
                InputRole::AttentionMask => tensor(&mask)?,
                InputRole::TokenTypeIds => tensor(&types)?,
            });
        }
        let outputs = self
            .plan
            .run(inputs)
            .map_err(|e| NliError::Model(format!("inference failed: {e}")))?;
        let logits = outputs
            .first()
            .ok_or_else(|| NliError::Model("model produced no outputs".into()))?
            .cast_to::<f32>()
            .map_err(|e| NliError::Model(e.to_string()))?
            .into_owned();
        let view = logits
            .to_plain_array_view::<f32>()
            .map_err(|e| NliError::Model(e.to_string()))?;
        let shape = view.shape().to_vec();
        if shape.len() != 2 || shape[0] != rows {
            return Err(NliError::Model(format!(
                "expected logits of shape [{rows}, 3], got {shape:?}"
            )));
        }
        if shape[1] != 3 {
            return Err(NliError::Model(format!("expected 3 logits, got {}", shape[1])));
        }
        view.outer_iter()
            .map(|row| {
                let z: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
                EntailmentJudgment::from_logits(&z, &self.order)
            })
            .collect()
    }
}

impl NliBackend for LocalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentJudgment, NliError> {
        let enc = self.encode(premise, hypothesis)?;
        Ok(self.run(&[enc])?.remove(0))
    }

    fn judge_batch(&self, pairs: &[TextPair]) -> Vec<Result<EntailmentJudgment, NliError>> {
        let mut out: Vec<Option<Result<EntailmentJudgment, NliError>>> = vec![None; pairs.len()];
        let mut ready = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            match self.encode(&p.premise, &p.hypothesis) {
                Ok(enc) => ready.push((i, enc)),
                Err(e) => out[i] = Some(Err(e)),
            }
        }
        while !ready.is_empty() {
            let take = ready.len().min(self.batch_size);
            let chunk: Vec<_> = ready.drain(..take).collect();
            let (idx, encs): (Vec<usize>, Vec<Encoded>) = chunk.into_iter().unzip();
            match self.run(&encs) {
                Ok(js) => {
                    for (i, j) in idx.into_iter().zip(js) {
                        out[i] = Some(Ok(j));
                    }
                }
                Err(e) => {
                    for i in idx {
                        out[i] = Some(Err(e.clone()));
                    }
                }
            }
        }
        out.into_iter().map(|r| r.expect("every slot filled")).collect()
    }
}
