//! Blocking JSON-over-HTTP helper shared by the external extractor, embedding
//! and generator clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    bearer: Option<String>,
}

impl JsonClient {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            bearer: None,
        }
    }

    /// Reads a bearer token from the named environment variable, if set.
    pub fn with_bearer_from_env(mut self, var: Option<&str>) -> Self {
        self.bearer = var
            .and_then(|v| std::env::var(v).ok())
            .filter(|k| !k.is_empty());
        self
    }

    /// POSTs `body` as JSON and decodes a JSON response. Non-2xx statuses,
    /// transport failures and undecodable bodies all surface as `Err(message)`.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: &Req,
    ) -> Result<Resp, String> {
        let mut request = self.agent.post(url);
        if let Some(token) = &self.bearer {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(|e| e.to_string())?;
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| format!("invalid response body: {e}"))
    }
}
