//! Transport-agnostic contracts for external text and model services.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("client unavailable: {0}")]
    Unavailable(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service returned status {status}: {body}")]
    Status { status: u16, body: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextGenRequest {
    pub instruction: String,
    pub demonstrations: Vec<String>,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextGenResponse {
    pub text: String,
}

/// Instruction-following text generator used for optional rewriting.
pub trait TextGenClient: Send + Sync {
    fn complete(&self, request: &TextGenRequest) -> Result<TextGenResponse, ClientError>;
}

/// Returns the payload unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoTextClient;

impl TextGenClient for EchoTextClient {
    fn complete(&self, request: &TextGenRequest) -> Result<TextGenResponse, ClientError> {
        Ok(TextGenResponse { text: request.payload.clone() })
    }
}

impl<F> TextGenClient for F
where
    F: Fn(&TextGenRequest) -> Result<TextGenResponse, ClientError> + Send + Sync,
{
    fn complete(&self, request: &TextGenRequest) -> Result<TextGenResponse, ClientError> {
        self(request)
    }
}

/// Wire shape of a model request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model: String,
    pub prompt: String,
    pub image_ref: Option<String>,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
}

/// A vision-language model under evaluation. Calls must not depend on each
/// other.
pub trait ModelClient: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, prompt: &str, image_ref: Option<&str>) -> Result<String, ClientError>;

    fn timeout(&self) -> Duration {
        Duration::from_secs(60)
    }
}
