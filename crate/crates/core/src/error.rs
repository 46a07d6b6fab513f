// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus handling, the model, tracing, editing and evaluation.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("empty corpus requested")]
    EmptyCorpus,

    #[error("{pool} pool exhausted: requested {requested}, capacity {capacity}")]
    PoolExhausted {
        pool: String,
        requested: usize,
        capacity: usize,
    },

    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },

    #[error("already negated: {0}")]
    AlreadyNegated(String),

    #[error("not a question: {0}")]
    NotAQuestion(String),

    #[error("no declarative rewrite rule matches wh-pattern `{pattern}` in: {question}")]
    NoRewriteRule { pattern: String, question: String },

    #[error("unknown token `{piece}` in: {text}")]
    UnknownToken { piece: String, text: String },

    #[error("sequence of length {len} exceeds context length {context}")]
    ContextOverflow { len: usize, context: usize },

    #[error("site out of range: {0}")]
    SiteOutOfRange(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty continuation")]
    EmptyContinuation,

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("non-finite gradient during target-state search at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("subject `{subject}` not found in prompt: {prompt}")]
    SubjectNotFound { subject: String, prompt: String },

    #[error("Gram matrix numerically singular after jitter; increase lambda_reg (pivot {pivot:e} at index {index})")]
    SingularGram { index: usize, pivot: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("degenerate comparison: target_new equals target_true ({0})")]
    DegenerateComparison(String),

    #[error("record {0} has no target_true and no fallback was selected")]
    MissingTargetTrue(u64),

    #[error("base checkpoint changed during the run: {before} became {after}")]
    BaseChanged { before: String, after: String },

    #[error("checkpoints do not share a tokenizer")]
    TokenizerMismatch,

    #[error("no evaluable samples")]
    NoEvaluableSamples,

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
