//! Client for a remote model endpoint.

use std::time::{Duration, Instant};

use base64::Engine;
use serde::Serialize;

use super::{build_prompt, parse_response, Grounder, GroundingError, GroundingQuery, GroundingResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
    image: String,
    width: u32,
    height: u32,
}

/// POSTs `{"prompt", "image" (base64 PNG), "width", "height"}` and parses
/// the reply text. Blocking; scheduling belongs to the caller.
pub struct RemoteGrounder {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteGrounder {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }
}

impl Grounder for RemoteGrounder {
    fn ground(&mut self, query: &GroundingQuery) -> Result<GroundingResult, GroundingError> {
        let image = query
            .image
            .as_ref()
            .ok_or_else(|| GroundingError::InvalidImage("remote grounding needs an image".into()))?;
        let prompt = build_prompt(&query.instruction, image.width(), image.height())?;
        let body = Request {
            prompt: &prompt,
            image: base64::engine::general_purpose::STANDARD.encode(image.to_png()?),
            width: image.width(),
            height: image.height(),
        };
        let started = Instant::now();
        let mut request = self.agent.post(&self.config.url);
        if let Some(token) = &self.config.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| GroundingError::GroundingUnavailable(e.to_string()))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GroundingError::GroundingUnavailable(e.to_string()))?;
        let latency = started.elapsed().as_secs_f64();
        Ok(parse_response(&text, image.width(), image.height())?.with_latency(latency))
    }
}
