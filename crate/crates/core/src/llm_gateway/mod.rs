//! Access to the reasoning model.
//!
//! A [`Gateway`] wraps a [`CompletionBackend`] (an OpenAI-compatible HTTP
//! endpoint or a scripted oracle) with admission control and an optional
//! JSONL audit trail, and turns raw answers into [`ChoiceResult`]s.

mod audit;
mod choice;
mod http;
mod limiter;
mod oracle;

pub use audit::{AuditLog, AuditRecord};
pub use choice::{parse_choice, ChoiceOutcome, ChoiceResult};
pub use http::{chat_completions_url, HttpBackend, RetryPolicy};
pub use limiter::{Limiter, Permit};
pub use oracle::{OracleBackend, OracleScript, NO_MATCH_ANSWER};

use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kg_store::EntityId;
use crate::prompt_forge::{Prompt, PromptKind};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;
pub const DEFAULT_MAX_TOKENS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Api { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Where a request comes from; oracles use it to know the option targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestContext {
    pub kind: PromptKind,
    pub source: EntityId,
    /// Voting round, i.e. index of the permutation that produced the prompt.
    pub round: usize,
    /// Target behind each option, in option order.
    pub options: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub context: RequestContext,
}

impl CompletionRequest {
    /// Chat-completions request body.
    pub fn wire_body(&self) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": self.prompt }],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        if let Some(seed) = self.seed {
            body["seed"] = seed.into();
        }
        body
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.wire_body().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("negative temperature".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub trait CompletionBackend: Send + Sync {
    /// The assistant's message text.
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewaySettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub max_in_flight: usize,
    pub rate_per_sec: Option<f64>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            model: "oracle".into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            rate_per_sec: None,
        }
    }
}

/// HTTP endpoint settings on top of [`GatewaySettings`].
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

pub struct Gateway {
    backend: Box<dyn CompletionBackend>,
    limiter: Limiter,
    audit: Option<AuditLog>,
    settings: GatewaySettings,
}

impl Gateway {
    pub fn new(backend: Box<dyn CompletionBackend>, settings: GatewaySettings) -> Self {
        Self {
            limiter: Limiter::new(settings.max_in_flight, settings.rate_per_sec),
            backend,
            audit: None,
            settings,
        }
    }

    pub fn oracle(script: OracleScript) -> Self {
        Self::new(
            Box::new(OracleBackend::new(script)),
            GatewaySettings::default(),
        )
    }

    pub fn http(
        endpoint: &EndpointConfig,
        settings: GatewaySettings,
    ) -> Result<Self, GatewayError> {
        let backend = HttpBackend::new(
            &endpoint.url,
            endpoint.api_key.clone(),
            endpoint.timeout,
            endpoint.retry,
        )?;
        Ok(Self::new(Box::new(backend), settings))
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn request_for(&self, prompt: &Prompt, round: usize) -> CompletionRequest {
        CompletionRequest {
            model: self.settings.model.clone(),
            prompt: prompt.rendered.clone(),
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
            seed: self.settings.seed,
            context: RequestContext {
                kind: prompt.kind,
                source: prompt.source,
                round,
                options: prompt.option_targets(),
            },
        }
    }

    /// Raw completion, admitted through the limiter.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let _permit = self.limiter.acquire();
        self.backend.complete(request)
    }

    /// Ask one round of a prompt and parse the answer.
    pub fn ask(&self, prompt: &Prompt, round: usize) -> Result<ChoiceResult, GatewayError> {
        let request = self.request_for(prompt, round);
        let started = Instant::now();
        let raw = self.complete(&request);
        let latency_ms = started.elapsed().as_millis() as u64;
        let result = raw.clone().map(|text| parse_choice(&text, &prompt.options));
        if let Some(audit) = &self.audit {
            let rec = AuditRecord {
                request_hash: request.hash(),
                prompt_kind: prompt.kind,
                source: prompt.source,
                permutation_index: round,
                raw_response: raw.as_ref().ok().cloned(),
                outcome: result.as_ref().ok().map(|r| r.outcome.clone()),
                error: raw.as_ref().err().map(ToString::to_string),
                latency_ms,
            };
            if let Err(e) = audit.record(&rec) {
                log::warn!("audit log write failed: {e}");
            }
        }
        result
    }
}
