//! Async client for the pvguard review API.

use reqwest::{Method, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use pvguard_core::icsr::IcsrDocument;
use pvguard_core::pipeline::{AdjudicationRecord, GuardrailReport, QueueItem, ReviewCase, ReviewStatus, ReviewerAssessment};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{status} {code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    /// The API error code, for errors the server answered with.
    pub fn code(&self) -> Option<&str> {
        match self {
            Self::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct Envelope {
    error: EnvelopeBody,
}

#[derive(Deserialize)]
struct EnvelopeBody {
    code: String,
    message: String,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    token: Option<String>,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            token,
            http: reqwest::Client::new(),
        }
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        let req = self.http.request(method, format!("{}{path}", self.base));
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    async fn check(resp: Response) -> Result<Response, ClientError> {
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let text = resp.text().await?;
        Err(match serde_json::from_str::<Envelope>(&text) {
            Ok(e) => ClientError::Api {
                status,
                code: e.error.code,
                message: e.error.message,
            },
            Err(_) => ClientError::Api {
                status,
                code: "http_error".into(),
                message: text,
            },
        })
    }

    async fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T, ClientError> {
        let resp = Self::check(req.send().await?).await?;
        let bytes = resp.bytes().await?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Submits a document for processing; an existing case id returns the
    /// stored report.
    pub async fn ingest(&self, doc: &IcsrDocument) -> Result<GuardrailReport, ClientError> {
        Self::json(self.request(Method::POST, "/api/cases").json(doc)).await
    }

    pub async fn case(&self, case_id: &str) -> Result<ReviewCase, ClientError> {
        Self::json(self.request(Method::GET, &format!("/api/cases/{case_id}"))).await
    }

    pub async fn queue(&self, status: Option<ReviewStatus>) -> Result<Vec<QueueItem>, ClientError> {
        let mut req = self.request(Method::GET, "/api/queue");
        if let Some(s) = status {
            req = req.query(&[("status", s.as_str())]);
        }
        Self::json(req).await
    }

    pub async fn submit_assessment(&self, case_id: &str, a: &ReviewerAssessment) -> Result<ReviewCase, ClientError> {
        Self::json(self.request(Method::POST, &format!("/api/cases/{case_id}/assessments")).json(a)).await
    }

    pub async fn adjudicate(&self, case_id: &str, record: &AdjudicationRecord) -> Result<ReviewCase, ClientError> {
        Self::json(self.request(Method::POST, &format!("/api/cases/{case_id}/adjudication")).json(record)).await
    }

    pub async fn close(&self, case_id: &str) -> Result<ReviewCase, ClientError> {
        Self::json(self.request(Method::POST, &format!("/api/cases/{case_id}/close"))).await
    }

    pub async fn annotated_html(&self, case_id: &str) -> Result<String, ClientError> {
        let resp = self.request(Method::GET, &format!("/api/cases/{case_id}/annotated")).send().await?;
        Ok(Self::check(resp).await?.text().await?)
    }
}
