//! OpenAI-compatible HTTP backend: one POST per completion, body carrying
//! model/messages/temperature/max_tokens, reading back
//! `choices[0].message.content` and the usage counts.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    Backend, BackendConfig, BackendReply, ChatRequest, FinishReason, GatewayError, InvokeError,
};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(60);

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::InvalidRequest("http backend requires endpoint".into()))?;
        // Credentials come only from the named environment variable; they
        // never appear in config files or logs.
        let api_key = match &config.credential_env_var {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Auth(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(REQUEST_TIMEOUT))
            .build()
            .into();
        Ok(Self {
            endpoint,
            api_key,
            agent,
        })
    }
}

fn parse_reply(payload: &Value) -> Result<BackendReply, InvokeError> {
    let choice = payload
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| InvokeError::Malformed("missing choices[0]".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| InvokeError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let usage = |key: &str| {
        payload
            .pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(BackendReply {
        content,
        finish_reason,
        prompt_units: usage("prompt_tokens"),
        completion_units: usage("completion_tokens"),
    })
}

impl Backend for HttpBackend {
    fn invoke(&self, request: &ChatRequest) -> Result<BackendReply, InvokeError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({ "role": m.role.as_str(), "content": m.content }))
            .collect();
        let mut body = json!({
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.rng_seed {
            body["seed"] = json!(seed);
        }

        let mut builder = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("authorization", format!("Bearer {key}"));
        }

        let mut response = builder
            .send_json(&body)
            .map_err(|e| InvokeError::Transient(format!("request failed: {e}")))?;

        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(InvokeError::Auth(format!("http status {status}"))),
            408 | 429 | 500..=599 => {
                return Err(InvokeError::Transient(format!("http status {status}")))
            }
            _ => {
                let text = response.body_mut().read_to_string().unwrap_or_default();
                let snippet: String = text.chars().take(200).collect();
                return Err(InvokeError::Malformed(format!(
                    "http status {status}: {snippet}"
                )));
            }
        }

        let payload: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| InvokeError::Malformed(format!("unparsable body: {e}")))?;
        parse_reply(&payload)
    }
}
