//! Chat-completions-dialect HTTP backends: multimodal chat and remote
//! embeddings. Images travel as base64 PNG data URLs inside the message
//! content parts, which is the de-facto compatible surface for hosted
//! multimodal models behind OpenAI-style gateways.

use std::sync::Arc;

use base64::Engine;
use serde_json::json;

use super::{ChatModel, ChatRequest, Embedder, EmbeddingVector, GatewayError, Transport};

/// Default environment variable holding the gateway API key.
pub const DEFAULT_API_KEY_ENV: &str = "LATENTX_API_KEY";

fn auth_headers(api_key: &Option<String>) -> Vec<(String, String)> {
    let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
    if let Some(key) = api_key {
        headers.push(("Authorization".to_string(), format!("Bearer {key}")));
    }
    headers
}

/// Multimodal chat client for `POST {base_url}/chat/completions`.
pub struct HttpChatModel {
    transport: Arc<dyn Transport>,
    base_url: String,
    api_key: Option<String>,
}

impl HttpChatModel {
    pub fn new(transport: Arc<dyn Transport>, base_url: impl Into<String>) -> Self {
        HttpChatModel {
            transport,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: None,
        }
    }

    pub fn with_api_key(mut self, api_key: Option<String>) -> Self {
        self.api_key = api_key;
        self
    }

    fn request_body(req: &ChatRequest) -> serde_json::Value {
        let mut content = vec![json!({"type": "text", "text": req.prompt})];
        for png in &req.images {
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        json!({
            "model": req.model_name,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "messages": [{"role": "user", "content": content}]
        })
    }
}

impl ChatModel for HttpChatModel {
    fn sample(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let url = format!("{}/chat/completions", self.base_url);
        let body = Self::request_body(req);
        let response = self
            .transport
            .post_json(&url, &auth_headers(&self.api_key), &body)?;
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| {
                GatewayError::Permanent("chat response missing choices[0].message.content".into())
            })
    }
}

/// Embedding client for `POST {base_url}/embeddings`.
pub struct RemoteEmbedder {
    transport: Arc<dyn Transport>,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl RemoteEmbedder {
    pub fn new(
        transport: Arc<dyn Transport>,
        base_url: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        RemoteEmbedder {
            transport,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: None,
        }
    }

    pub fn with_api_key(mut self, api_key: Option<String>) -> Self {
        self.api_key = api_key;
        self
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "embed requires at least one text".to_string(),
            ));
        }
        let url = format!("{}/embeddings", self.base_url);
        let body = json!({"model": self.model, "input": texts});
        let response = self
            .transport
            .post_json(&url, &auth_headers(&self.api_key), &body)?;
        let data = response["data"]
            .as_array()
            .ok_or_else(|| GatewayError::Permanent("embeddings response missing data".into()))?;
        if data.len() != texts.len() {
            return Err(GatewayError::Permanent(format!(
                "embeddings response has {} rows for {} inputs",
                data.len(),
                texts.len()
            )));
        }
        // Align by the declared index when present, by position otherwise.
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
            let values = item["embedding"]
                .as_array()
                .ok_or_else(|| GatewayError::Permanent("embedding row missing values".into()))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| GatewayError::Permanent("non-numeric embedding".into()))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if index >= out.len() || out[index].is_some() {
                return Err(GatewayError::Permanent(format!(
                    "embedding index {index} out of place"
                )));
            }
            out[index] = Some(EmbeddingVector {
                values,
                model_name: self.model.clone(),
            });
        }
        Ok(out.into_iter().map(|v| v.expect("all indices filled")).collect())
    }

    fn name(&self) -> String {
        format!("remote:{}", self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Cassette, CassetteRecord, ReplayTransport};
    use serde_json::json;

    #[test]
    fn chat_body_embeds_images_as_data_urls() {
        let req = ChatRequest {
            prompt: "what changes?".into(),
            images: vec![vec![1, 2, 3]],
            temperature: 1.0,
            top_p: 1.0,
            model_name: "test-model".into(),
        };
        let body = HttpChatModel::request_body(&req);
        assert_eq!(body["model"], "test-model");
        let content = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content.len(), 2);
        let url = content[1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
    }

    #[test]
    fn chat_replays_from_cassette() {
        let req = ChatRequest {
            prompt: "p".into(),
            images: vec![],
            temperature: 1.0,
            top_p: 1.0,
            model_name: "m".into(),
        };
        let body = HttpChatModel::request_body(&req);
        let url = "http://gw/v1/chat/completions";
        let cassette = Cassette {
            version: 1,
            records: vec![CassetteRecord {
                digest: crate::gateway::request_digest("POST", url, Some(&body)),
                method: "POST".into(),
                url: url.into(),
                response: json!({"choices": [{"message": {"content": "replayed"}}]}),
            }],
        };
        let model = HttpChatModel::new(Arc::new(ReplayTransport::new(cassette)), "http://gw/v1");
        assert_eq!(model.sample(&req).unwrap(), "replayed");
        // Nothing left in the cassette: a second identical call misses.
        assert!(matches!(
            model.sample(&req),
            Err(GatewayError::CassetteMiss(_))
        ));
    }

    #[test]
    fn remote_embedder_orders_by_index() {
        let url = "http://gw/v1/embeddings";
        let body = json!({"model": "emb", "input": ["a", "b"]});
        let cassette = Cassette {
            version: 1,
            records: vec![CassetteRecord {
                digest: crate::gateway::request_digest("POST", url, Some(&body)),
                method: "POST".into(),
                url: url.into(),
                response: json!({"data": [
                    {"index": 1, "embedding": [0.0, 1.0]},
                    {"index": 0, "embedding": [1.0, 0.0]}
                ]}),
            }],
        };
        let embedder =
            RemoteEmbedder::new(Arc::new(ReplayTransport::new(cassette)), "http://gw/v1", "emb");
        let out = embedder
            .embed(&["a".to_string(), "b".to_string()])
            .unwrap();
        assert_eq!(out[0].values, vec![1.0, 0.0]);
        assert_eq!(out[1].values, vec![0.0, 1.0]);
    }
}
