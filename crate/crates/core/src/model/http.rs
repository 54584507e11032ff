//! JSON-over-HTTP client for an external inference server.
//!
//! `GET /v1/health` answers `{version, embedding_dim}`. `POST /v1/translate`
//! takes `{input, config}` and answers `{target_text, tokens: [{text, span,
//! topk}], source_embeddings}`. A config of `{"mode": "embed_only"}` asks only
//! for the source embeddings.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AdapterError, Concurrency, GenerationConfig, GenerationResult, ModelAdapter};
use crate::guardrail::tluq::{Distribution, TokenRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpAdapterConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: Concurrency,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

fn default_concurrency() -> Concurrency {
    Concurrency::Concurrent
}

impl HttpAdapterConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            concurrency: default_concurrency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub version: String,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub input: String,
    #[serde(default)]
    pub config: GenerationConfig,
}

/// Server-side rendering of a result in the wire format.
pub fn protocol_response(result: &GenerationResult) -> Value {
    let tokens: Vec<Value> = result
        .tokens
        .iter()
        .map(|t| {
            let topk: Vec<Value> = match &t.distribution {
                Distribution::Topk { topk } => topk.iter().map(|(s, p)| json!([s, p])).collect(),
                Distribution::Full { probabilities } => {
                    probabilities.iter().enumerate().map(|(i, p)| json!([format!("<{i}>"), p])).collect()
                }
            };
            json!({"text": t.token_text, "span": [t.byte_span.0, t.byte_span.1], "topk": topk})
        })
        .collect();
    json!({
        "target_text": result.target_text,
        "tokens": tokens,
        "source_embeddings": result.source_token_embeddings,
        "config_echo": result.generation_config_echo,
    })
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value, AdapterError> {
    v.get(name).ok_or_else(|| AdapterError::ProtocolError(format!("missing field `{name}`")))
}

fn bad(name: &str, what: &str) -> AdapterError {
    AdapterError::ProtocolError(format!("field `{name}` {what}"))
}

fn parse_embeddings(v: &Value) -> Result<Vec<Vec<f64>>, AdapterError> {
    let rows = field(v, "source_embeddings")?.as_array().ok_or_else(|| bad("source_embeddings", "is not an array"))?;
    let out = rows
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(|| bad("source_embeddings", "holds a non-array row"))?
                .iter()
                .map(|x| x.as_f64().filter(|x| x.is_finite()).ok_or_else(|| bad("source_embeddings", "holds a non-finite value")))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(first) = out.first() {
        if out.iter().any(|r| r.len() != first.len()) {
            return Err(bad("source_embeddings", "rows differ in dimension"));
        }
    }
    Ok(out)
}

/// Client-side parsing of the wire format; errors name the offending field.
pub fn parse_protocol_response(v: &Value, config: &GenerationConfig) -> Result<GenerationResult, AdapterError> {
    let target_text = field(v, "target_text")?.as_str().ok_or_else(|| bad("target_text", "is not a string"))?.to_string();
    let tokens = field(v, "tokens")?
        .as_array()
        .ok_or_else(|| bad("tokens", "is not an array"))?
        .iter()
        .map(|t| {
            let text = field(t, "text")?.as_str().ok_or_else(|| bad("text", "is not a string"))?.to_string();
            let span = field(t, "span")?.as_array().filter(|s| s.len() == 2).ok_or_else(|| bad("span", "is not a pair"))?;
            let idx = |x: &Value| x.as_u64().map(|n| n as usize).ok_or_else(|| bad("span", "holds a non-integer"));
            let byte_span = (idx(&span[0])?, idx(&span[1])?);
            let topk = field(t, "topk")?
                .as_array()
                .ok_or_else(|| bad("topk", "is not an array"))?
                .iter()
                .map(|pair| {
                    let pair = pair.as_array().filter(|p| p.len() == 2).ok_or_else(|| bad("topk", "holds a non-pair"))?;
                    let tok = pair[0].as_str().ok_or_else(|| bad("topk", "holds a non-string token"))?;
                    let p = pair[1].as_f64().filter(|p| p.is_finite()).ok_or_else(|| bad("topk", "holds a non-finite probability"))?;
                    Ok((tok.to_string(), p))
                })
                .collect::<Result<Vec<_>, AdapterError>>()?;
            let distribution =
                Distribution::topk_renormalized(topk).map_err(|e| AdapterError::ProtocolError(format!("field `topk`: {e}")))?;
            Ok(TokenRecord {
                token_text: text,
                byte_span,
                distribution,
            })
        })
        .collect::<Result<Vec<_>, AdapterError>>()?;
    let generation_config_echo = match v.get("config_echo") {
        Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        _ => config.clone(),
    };
    let result = GenerationResult {
        target_text,
        tokens,
        source_token_embeddings: parse_embeddings(v)?,
        generation_config_echo,
        corruption: None,
    };
    result.check_invariants().map_err(AdapterError::ProtocolError)?;
    Ok(result)
}

pub struct HttpAdapter {
    config: HttpAdapterConfig,
    client: reqwest::blocking::Client,
    health: HealthResponse,
}

impl HttpAdapter {
    /// Builds the client and checks the health endpoint.
    pub fn connect(config: HttpAdapterConfig) -> Result<Self, AdapterError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| AdapterError::AdapterUnavailable(e.to_string()))?;
        let mut adapter = Self {
            config,
            client,
            health: HealthResponse {
                version: String::new(),
                embedding_dim: 0,
            },
        };
        let v = adapter.request(|c, base| c.get(format!("{base}/v1/health")))?;
        let version = field(&v, "version")?.as_str().ok_or_else(|| bad("version", "is not a string"))?;
        let dim = field(&v, "embedding_dim")?.as_u64().ok_or_else(|| bad("embedding_dim", "is not an integer"))?;
        adapter.health = HealthResponse {
            version: version.to_string(),
            embedding_dim: dim as usize,
        };
        Ok(adapter)
    }

    pub fn health(&self) -> &HealthResponse {
        &self.health
    }

    fn request(
        &self,
        build: impl Fn(&reqwest::blocking::Client, &str) -> reqwest::blocking::RequestBuilder,
    ) -> Result<Value, AdapterError> {
        let base = self.config.endpoint.trim_end_matches('/');
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            match build(&self.client, base).send() {
                Ok(resp) if resp.status().is_server_error() => {
                    last = format!("server answered {}", resp.status());
                }
                Ok(resp) if !resp.status().is_success() => {
                    let status = resp.status();
                    let body = resp.text().unwrap_or_default();
                    return Err(AdapterError::GenerationFailed(format!("{status}: {body}")));
                }
                Ok(resp) => {
                    return resp.json::<Value>().map_err(|e| AdapterError::ProtocolError(format!("response is not JSON: {e}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(AdapterError::AdapterUnavailable(format!(
            "{} after {} attempt(s): {last}",
            self.config.endpoint,
            self.config.retries + 1
        )))
    }

    fn post_translate(&self, input: &str, config: &GenerationConfig) -> Result<Value, AdapterError> {
        let body = TranslateRequest {
            input: input.to_string(),
            config: config.clone(),
        };
        self.request(|c, base| c.post(format!("{base}/v1/translate")).json(&body))
    }
}

impl ModelAdapter for HttpAdapter {
    fn translate(&self, input: &str, config: &GenerationConfig) -> Result<GenerationResult, AdapterError> {
        if input.is_empty() {
            return Err(AdapterError::EmptyInput);
        }
        parse_protocol_response(&self.post_translate(input, config)?, config)
    }

    fn embed_source(&self, input: &str) -> Result<Vec<Vec<f64>>, AdapterError> {
        if input.is_empty() {
            return Err(AdapterError::EmptyInput);
        }
        let mut config = GenerationConfig::new();
        config.insert("mode".into(), "embed_only".into());
        parse_embeddings(&self.post_translate(input, &config)?)
    }

    fn embedding_dim(&self) -> usize {
        self.health.embedding_dim
    }

    fn concurrency(&self) -> Concurrency {
        self.config.concurrency
    }
}
