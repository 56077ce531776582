//! Client for a remote decoder service.
//!
//! Wire protocol (HTTP + JSON):
//!
//! ```text
//! GET  /v1/info    → {"latent_dim": n, "kind": "vae"|"diffusion", "supports_perturb": bool}
//! POST /v1/decode  {"latents": [[..], ..]} → {"images": ["<base64 PNG>", ..]}  (index-aligned)
//! POST /v1/perturb {"z": [..], "direction": [..], "gamma": x} → {"z_tilde": [..]}
//! ```
//!
//! PNG payloads are 8-bit grayscale or RGB without interlacing. Responses
//! are matched to requests positionally within one call; the transport may
//! be live, recording, or cassette replay.

use std::sync::Arc;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_dim, DecoderBackend, DecoderError};
use crate::gateway::{GatewayError, Transport};
use crate::image::Image;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendInfo {
    pub latent_dim: usize,
    pub kind: String,
    pub supports_perturb: bool,
}

pub struct RemoteDecoder {
    transport: Arc<dyn Transport>,
    base_url: String,
    info: BackendInfo,
}

fn remote_err(err: GatewayError) -> DecoderError {
    DecoderError::Remote(err.to_string())
}

impl RemoteDecoder {
    /// Connect and fetch `/v1/info`.
    pub fn connect(transport: Arc<dyn Transport>, base_url: &str) -> Result<Self, DecoderError> {
        let base_url = base_url.trim_end_matches('/').to_string();
        let info_value = transport
            .get_json(&format!("{base_url}/v1/info"), &[])
            .map_err(remote_err)?;
        let info: BackendInfo = serde_json::from_value(info_value)
            .map_err(|e| DecoderError::Remote(format!("malformed /v1/info payload: {e}")))?;
        if info.latent_dim == 0 {
            return Err(DecoderError::Remote("server reports latent_dim 0".into()));
        }
        Ok(RemoteDecoder {
            transport,
            base_url,
            info,
        })
    }

    pub fn info(&self) -> &BackendInfo {
        &self.info
    }

    /// Decode a batch in one request; the response images are index-aligned
    /// with the submitted latents.
    pub fn decode_batch(&self, latents: &[Vec<f64>]) -> Result<Vec<Image>, DecoderError> {
        for z in latents {
            check_dim(z, self.info.latent_dim)?;
        }
        let body = json!({ "latents": latents });
        let response = self
            .transport
            .post_json(&format!("{}/v1/decode", self.base_url), &[], &body)
            .map_err(remote_err)?;
        let images = response["images"]
            .as_array()
            .ok_or_else(|| DecoderError::Remote("decode response missing images".into()))?;
        if images.len() != latents.len() {
            return Err(DecoderError::Remote(format!(
                "decode returned {} images for {} latents",
                images.len(),
                latents.len()
            )));
        }
        images
            .iter()
            .map(|value| {
                let b64 = value
                    .as_str()
                    .ok_or_else(|| DecoderError::Remote("image entry is not a string".into()))?;
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| DecoderError::Remote(format!("bad base64 image: {e}")))?;
                Image::from_png(&bytes)
                    .map_err(|e| DecoderError::Remote(format!("bad PNG payload: {e}")))
            })
            .collect()
    }
}

impl DecoderBackend for RemoteDecoder {
    fn latent_dim(&self) -> usize {
        self.info.latent_dim
    }

    fn name(&self) -> String {
        format!("remote:{}", self.base_url)
    }

    fn decode(&self, z: &[f64]) -> Result<Image, DecoderError> {
        let mut images = self.decode_batch(std::slice::from_ref(&z.to_vec()))?;
        Ok(images.remove(0))
    }

    fn supports_perturb(&self) -> bool {
        self.info.supports_perturb
    }

    fn perturb(&self, z: &[f64], direction: &[f64], gamma: f64) -> Result<Vec<f64>, DecoderError> {
        if !self.info.supports_perturb {
            return Err(DecoderError::UnsupportedOperation("perturb"));
        }
        check_dim(z, self.info.latent_dim)?;
        check_dim(direction, self.info.latent_dim)?;
        let body = json!({ "z": z, "direction": direction, "gamma": gamma });
        let response = self
            .transport
            .post_json(&format!("{}/v1/perturb", self.base_url), &[], &body)
            .map_err(remote_err)?;
        let z_tilde = response["z_tilde"]
            .as_array()
            .ok_or_else(|| DecoderError::Remote("perturb response missing z_tilde".into()))?;
        z_tilde
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| DecoderError::Remote("non-numeric z_tilde entry".into()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{request_digest, Cassette, CassetteRecord, ReplayTransport};

    fn info_record(base: &str, latent_dim: usize, supports_perturb: bool) -> CassetteRecord {
        let url = format!("{base}/v1/info");
        CassetteRecord {
            digest: request_digest("GET", &url, None),
            method: "GET".into(),
            url,
            response: json!({
                "latent_dim": latent_dim,
                "kind": "vae",
                "supports_perturb": supports_perturb
            }),
        }
    }

    #[test]
    fn decode_replays_byte_identical_images() {
        let base = "http://decoder";
        let source = Image::filled(8, 8, 1, 137).unwrap();
        let png = source.to_png().unwrap();
        let b64 = base64::engine::general_purpose::STANDARD.encode(&png);

        let latents = vec![vec![0.0, 1.0]];
        let decode_url = format!("{base}/v1/decode");
        let decode_body = json!({ "latents": latents });
        let cassette = Cassette {
            version: 1,
            records: vec![
                info_record(base, 2, false),
                CassetteRecord {
                    digest: request_digest("POST", &decode_url, Some(&decode_body)),
                    method: "POST".into(),
                    url: decode_url,
                    response: json!({ "images": [b64] }),
                },
            ],
        };
        let decoder =
            RemoteDecoder::connect(Arc::new(ReplayTransport::new(cassette)), base).unwrap();
        let images = decoder.decode_batch(&latents).unwrap();
        assert_eq!(images[0], source);
    }

    #[test]
    fn perturb_round_trips_values() {
        let base = "http://decoder";
        let perturb_url = format!("{base}/v1/perturb");
        let body = json!({ "z": [0.0, 0.0], "direction": [1.0, 0.0], "gamma": 0.5 });
        let cassette = Cassette {
            version: 1,
            records: vec![
                info_record(base, 2, true),
                CassetteRecord {
                    digest: request_digest("POST", &perturb_url, Some(&body)),
                    method: "POST".into(),
                    url: perturb_url,
                    response: json!({ "z_tilde": [1.0, 0.0] }),
                },
            ],
        };
        let decoder =
            RemoteDecoder::connect(Arc::new(ReplayTransport::new(cassette)), base).unwrap();
        let out = decoder.perturb(&[0.0, 0.0], &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
    }

    #[test]
    fn perturb_without_capability_is_unsupported() {
        let base = "http://decoder";
        let cassette = Cassette {
            version: 1,
            records: vec![info_record(base, 2, false)],
        };
        let decoder =
            RemoteDecoder::connect(Arc::new(ReplayTransport::new(cassette)), base).unwrap();
        assert!(matches!(
            decoder.perturb(&[0.0, 0.0], &[1.0, 0.0], 0.5),
            Err(DecoderError::UnsupportedOperation("perturb"))
        ));
    }

    #[test]
    fn malformed_payload_is_a_remote_error() {
        let base = "http://decoder";
        let decode_url = format!("{base}/v1/decode");
        let body = json!({ "latents": [[0.0, 0.0]] });
        let cassette = Cassette {
            version: 1,
            records: vec![
                info_record(base, 2, false),
                CassetteRecord {
                    digest: request_digest("POST", &decode_url, Some(&body)),
                    method: "POST".into(),
                    url: decode_url,
                    response: json!({ "images": ["not base64 at all !!!"] }),
                },
            ],
        };
        let decoder =
            RemoteDecoder::connect(Arc::new(ReplayTransport::new(cassette)), base).unwrap();
        assert!(matches!(
            decoder.decode_batch(&[vec![0.0, 0.0]]),
            Err(DecoderError::Remote(_))
        ));
    }
}
