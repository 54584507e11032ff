//! The translation model behind a single contract.
//!
//! A [`ModelAdapter`] translates the serialized case, reports a predictive
//! distribution per generated token, and exposes source-side token embeddings
//! for the document-level guardrail. [`MockAdapter`] is a deterministic
//! stand-in with armable corruptions; [`HttpAdapter`] talks to an external
//! inference server.

mod corpus;
mod corrupt;
mod http;
mod mock;
mod tokenize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::guardrail::tluq::TokenRecord;

pub use corpus::{
    fixture_vocabulary, synthesize_corpus, synthesize_pairs, CorpusItem, CorpusLabel, ExtraneousCategory,
    FixturePair,
};
pub use corrupt::{apply_corruption, CorruptionContext, CorruptionError, CorruptionKind, CorruptionRecord, CorruptionSpec};
pub use http::{parse_protocol_response, protocol_response, HealthResponse, HttpAdapter, HttpAdapterConfig, TranslateRequest};
pub use mock::{MockAdapter, MockProfile, DEFAULT_DIM};
pub use tokenize::{source_tokens, target_tokens};

/// Opaque generation settings, echoed back in every result.
pub type GenerationConfig = BTreeMap<String, serde_json::Value>;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("empty input")]
    EmptyInput,
}

/// Whether an adapter tolerates concurrent requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    Concurrent,
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub target_text: String,
    pub tokens: Vec<TokenRecord>,
    pub source_token_embeddings: Vec<Vec<f64>>,
    #[serde(default)]
    pub generation_config_echo: GenerationConfig,
    /// Ground truth for an armed corruption, when one was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionRecord>,
}

impl GenerationResult {
    /// Checks that token spans tile the target text and embeddings share one
    /// dimension.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut pos = 0;
        for t in &self.tokens {
            let (s, e) = t.byte_span;
            if s != pos || e < s || e > self.target_text.len() {
                return Err(format!("token span {s}..{e} does not continue at {pos}"));
            }
            if !self.target_text.is_char_boundary(s) || !self.target_text.is_char_boundary(e) {
                return Err(format!("token span {s}..{e} splits a character"));
            }
            pos = e;
        }
        if pos != self.target_text.len() {
            return Err(format!("tokens cover {pos} of {} bytes", self.target_text.len()));
        }
        if let Some(first) = self.source_token_embeddings.first() {
            if self.source_token_embeddings.iter().any(|v| v.len() != first.len()) {
                return Err("source embeddings differ in dimension".into());
            }
        }
        Ok(())
    }
}

pub trait ModelAdapter: Send + Sync {
    fn translate(&self, input: &str, config: &GenerationConfig) -> Result<GenerationResult, AdapterError>;

    /// One vector per source token.
    fn embed_source(&self, input: &str) -> Result<Vec<Vec<f64>>, AdapterError>;

    fn embedding_dim(&self) -> usize;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

impl<T: ModelAdapter + ?Sized> ModelAdapter for std::sync::Arc<T> {
    fn translate(&self, input: &str, config: &GenerationConfig) -> Result<GenerationResult, AdapterError> {
        (**self).translate(input, config)
    }

    fn embed_source(&self, input: &str) -> Result<Vec<Vec<f64>>, AdapterError> {
        (**self).embed_source(input)
    }

    fn embedding_dim(&self) -> usize {
        (**self).embedding_dim()
    }

    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}
