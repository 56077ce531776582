//! HTTP transport abstraction with live, recording, and replay modes.
//!
//! Cassette format (stable across versions): a JSON object
//! `{"version": 1, "records": [...]}` where each record holds the request
//! digest, method, URL, and the JSON response body. The digest is the hex
//! SHA-256 of `method \n url \n canonical-json-body`; headers (and thus
//! credentials) are never digested or stored. Replay consumes records:
//! repeated identical requests replay their recorded responses in order.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

pub trait Transport: Send + Sync {
    fn get_json(
        &self,
        url: &str,
        headers: &[(String, String)],
    ) -> Result<serde_json::Value, GatewayError>;

    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError>;
}

/// Hex SHA-256 identifying a request for cassette matching.
pub fn request_digest(method: &str, url: &str, body: Option<&serde_json::Value>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(method.as_bytes());
    hasher.update(b"\n");
    hasher.update(url.as_bytes());
    hasher.update(b"\n");
    if let Some(body) = body {
        hasher.update(body.to_string().as_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub digest: String,
    pub method: String,
    pub url: String,
    pub response: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Cassette {
    pub version: u32,
    pub records: Vec<CassetteRecord>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Permanent(format!("read cassette {path:?}: {e}")))?;
        let cassette: Cassette = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Permanent(format!("parse cassette {path:?}: {e}")))?;
        if cassette.version != 1 {
            return Err(GatewayError::Permanent(format!(
                "unsupported cassette version {}",
                cassette.version
            )));
        }
        Ok(cassette)
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| GatewayError::Permanent(format!("encode cassette: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| GatewayError::Permanent(format!("write cassette {path:?}: {e}")))
    }
}

/// Live HTTP transport over `ureq`. Non-2xx statuses are classified:
/// 401/403 are auth failures, 408/429/5xx are transient, everything else
/// is permanent.
pub struct LiveTransport {
    agent: ureq::Agent,
}

impl Default for LiveTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl LiveTransport {
    pub fn new() -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build();
        LiveTransport {
            agent: config.new_agent(),
        }
    }

    fn classify_status(status: u16, body_snippet: &str) -> GatewayError {
        match status {
            401 | 403 => GatewayError::Auth(status),
            408 | 429 => GatewayError::Transient(format!("status {status}: {body_snippet}")),
            s if s >= 500 => GatewayError::Transient(format!("status {s}: {body_snippet}")),
            s => GatewayError::Permanent(format!("status {s}: {body_snippet}")),
        }
    }

    fn handle_response(
        mut response: ureq::http::Response<ureq::Body>,
    ) -> Result<serde_json::Value, GatewayError> {
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let snippet = response
                .body_mut()
                .read_to_string()
                .unwrap_or_default()
                .chars()
                .take(200)
                .collect::<String>();
            return Err(Self::classify_status(status, &snippet));
        }
        response
            .body_mut()
            .read_json::<serde_json::Value>()
            .map_err(|e| GatewayError::Permanent(format!("malformed JSON response: {e}")))
    }
}

impl Transport for LiveTransport {
    fn get_json(
        &self,
        url: &str,
        headers: &[(String, String)],
    ) -> Result<serde_json::Value, GatewayError> {
        let mut req = self.agent.get(url);
        for (name, value) in headers {
            req = req.header(name.as_str(), value.as_str());
        }
        let response = req
            .call()
            .map_err(|e| GatewayError::Transient(format!("transport: {e}")))?;
        Self::handle_response(response)
    }

    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError> {
        let mut req = self.agent.post(url);
        for (name, value) in headers {
            req = req.header(name.as_str(), value.as_str());
        }
        let response = req
            .send_json(body)
            .map_err(|e| GatewayError::Transient(format!("transport: {e}")))?;
        Self::handle_response(response)
    }
}

/// Wraps another transport and appends every exchange to a cassette file.
pub struct RecordingTransport<T: Transport> {
    inner: T,
    path: PathBuf,
    cassette: Mutex<Cassette>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, path: impl Into<PathBuf>) -> Self {
        RecordingTransport {
            inner,
            path: path.into(),
            cassette: Mutex::new(Cassette {
                version: 1,
                records: Vec::new(),
            }),
        }
    }

    fn record(
        &self,
        method: &str,
        url: &str,
        body: Option<&serde_json::Value>,
        response: &serde_json::Value,
    ) -> Result<(), GatewayError> {
        let mut cassette = self.cassette.lock().expect("cassette lock");
        cassette.records.push(CassetteRecord {
            digest: request_digest(method, url, body),
            method: method.to_string(),
            url: url.to_string(),
            response: response.clone(),
        });
        cassette.save(&self.path)
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn get_json(
        &self,
        url: &str,
        headers: &[(String, String)],
    ) -> Result<serde_json::Value, GatewayError> {
        let response = self.inner.get_json(url, headers)?;
        self.record("GET", url, None, &response)?;
        Ok(response)
    }

    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError> {
        let response = self.inner.post_json(url, headers, body)?;
        self.record("POST", url, Some(body), &response)?;
        Ok(response)
    }
}

/// Replays a cassette. Requests are matched by digest against the first
/// unconsumed record; anything not in the cassette raises a miss rather
/// than silently hitting the network.
pub struct ReplayTransport {
    cassette: Cassette,
    consumed: Mutex<Vec<bool>>,
}

impl ReplayTransport {
    pub fn new(cassette: Cassette) -> Self {
        let consumed = Mutex::new(vec![false; cassette.records.len()]);
        ReplayTransport { cassette, consumed }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::new(Cassette::load(path)?))
    }

    fn replay(
        &self,
        method: &str,
        url: &str,
        body: Option<&serde_json::Value>,
    ) -> Result<serde_json::Value, GatewayError> {
        let digest = request_digest(method, url, body);
        let mut consumed = self.consumed.lock().expect("replay lock");
        for (i, record) in self.cassette.records.iter().enumerate() {
            if !consumed[i] && record.digest == digest {
                consumed[i] = true;
                return Ok(record.response.clone());
            }
        }
        Err(GatewayError::CassetteMiss(digest))
    }
}

impl Transport for ReplayTransport {
    fn get_json(
        &self,
        url: &str,
        _headers: &[(String, String)],
    ) -> Result<serde_json::Value, GatewayError> {
        self.replay("GET", url, None)
    }

    fn post_json(
        &self,
        url: &str,
        _headers: &[(String, String)],
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError> {
        self.replay("POST", url, Some(body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = request_digest("POST", "http://x/v1/decode", Some(&json!({"k": 1})));
        let b = request_digest("POST", "http://x/v1/decode", Some(&json!({"k": 1})));
        let c = request_digest("POST", "http://x/v1/decode", Some(&json!({"k": 2})));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn replay_consumes_records_in_order() {
        let url = "http://x/v1/chat";
        let body = json!({"q": "hi"});
        let digest = request_digest("POST", url, Some(&body));
        let cassette = Cassette {
            version: 1,
            records: vec![
                CassetteRecord {
                    digest: digest.clone(),
                    method: "POST".into(),
                    url: url.into(),
                    response: json!({"text": "first"}),
                },
                CassetteRecord {
                    digest,
                    method: "POST".into(),
                    url: url.into(),
                    response: json!({"text": "second"}),
                },
            ],
        };
        let replay = ReplayTransport::new(cassette);
        let first = replay.post_json(url, &[], &body).unwrap();
        let second = replay.post_json(url, &[], &body).unwrap();
        assert_eq!(first["text"], "first");
        assert_eq!(second["text"], "second");
        assert!(matches!(
            replay.post_json(url, &[], &body),
            Err(GatewayError::CassetteMiss(_))
        ));
    }

    #[test]
    fn replay_misses_unknown_requests() {
        let replay = ReplayTransport::new(Cassette {
            version: 1,
            records: vec![],
        });
        assert!(matches!(
            replay.get_json("http://x/v1/info", &[]),
            Err(GatewayError::CassetteMiss(_))
        ));
    }

    #[test]
    fn cassette_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cassette.json");
        let cassette = Cassette {
            version: 1,
            records: vec![CassetteRecord {
                digest: "d".repeat(64),
                method: "GET".into(),
                url: "http://x/v1/info".into(),
                response: json!({"latent_dim": 4}),
            }],
        };
        cassette.save(&path).unwrap();
        let loaded = Cassette::load(&path).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.records[0].response["latent_dim"], 4);
    }
}
