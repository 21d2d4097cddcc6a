//! Zero-shot hallucination detection for natural language generation outputs.
//!
//! Detection is reduced to natural language inference. Each sample is routed by
//! task: definition modelling checks that the output entails the reference
//! definition, while translation and paraphrase check that the output and the
//! source entail each other. The entailment probabilities become a
//! hallucination score that can be thresholded and scored against gold
//! annotations.

pub mod cli;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod nli;
pub mod report;

pub use dataset::{GoldAnnotation, Label, Sample, TaskKind};
pub use detector::{DetectionConfig, Verdict};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use nli::{EntailmentJudgment, NliBackend};
