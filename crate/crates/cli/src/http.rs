//! HTTP model client speaking the JSON request/response contract.

use std::time::Duration;

use scenecause_core::client::{ClientError, ModelClient, ModelRequest, ModelResponse};

pub const API_KEY_VAR: &str = "SCENECAUSE_API_KEY";

pub struct HttpModel {
    model: String,
    endpoint: String,
    api_key: Option<String>,
    max_tokens: u32,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpModel {
    pub fn new(model: String, endpoint: String, api_key: Option<String>, max_tokens: u32, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpModel { model, endpoint, api_key, max_tokens, timeout, agent }
    }

    fn transport(&self, e: ureq::Error) -> ClientError {
        match e {
            ureq::Error::Timeout(_) => ClientError::Timeout(self.timeout),
            other => ClientError::Transport(other.to_string()),
        }
    }
}

impl ModelClient for HttpModel {
    fn name(&self) -> &str {
        &self.model
    }

    fn generate(&self, prompt: &str, image_ref: Option<&str>) -> Result<String, ClientError> {
        let body = ModelRequest {
            model: self.model.clone(),
            prompt: prompt.to_string(),
            image_ref: image_ref.map(str::to_string),
            max_tokens: self.max_tokens,
        };
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|e| self.transport(e))?;
        let status = response.status().as_u16();
        if status >= 400 {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Status { status, body });
        }
        let parsed: ModelResponse = response.body_mut().read_json().map_err(|e| self.transport(e))?;
        Ok(parsed.text)
    }

    fn timeout(&self) -> Duration {
        self.timeout
    }
}
