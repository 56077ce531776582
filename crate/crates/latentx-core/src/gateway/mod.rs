//! Clients for multimodal chat models (image+text in, text out, sampled n
//! times) and text-embedding models, with deterministic mock and
//! record/replay backends for hermetic runs.

mod embed;
mod http;
mod mock;
mod transport;

pub use embed::{OfflineEmbedder, OFFLINE_EMBEDDER_NAME, OFFLINE_EMBED_DIM};
pub use http::{HttpChatModel, RemoteEmbedder, DEFAULT_API_KEY_ENV};
pub use mock::{MockReply, ScriptedChat};
pub use transport::{request_digest, Cassette, CassetteRecord, LiveTransport, RecordingTransport, ReplayTransport, Transport};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transient gateway failure: {0}")]
    Transient(String),
    #[error("authentication rejected (status {0})")]
    Auth(u16),
    #[error("gateway failure: {0}")]
    Permanent(String),
    #[error("cassette has no unconsumed record for digest {0}")]
    CassetteMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transient(_))
    }
}

/// One chat request: prompt text plus zero or more PNG images.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub prompt: String,
    pub images: Vec<Vec<u8>>,
    pub temperature: f64,
    pub top_p: f64,
    pub model_name: String,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, images: Vec<Vec<u8>>) -> Self {
        ChatRequest {
            prompt: prompt.into(),
            images,
            temperature: 1.0,
            top_p: 1.0,
            model_name: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(GatewayError::InvalidRequest(format!(
                "top_p {} outside [0, 1]",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// One sampled response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseSample {
    pub index: usize,
    pub text: String,
    pub latency_ms: u64,
}

/// A fixed-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_name: String,
}

/// A chat backend producing one sampled completion per call.
pub trait ChatModel: Send + Sync {
    fn sample(&self, req: &ChatRequest) -> Result<String, GatewayError>;
}

/// A text-embedding backend.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
    /// Stable identifier recorded in manifests so responses can be
    /// re-embedded for verification.
    fn name(&self) -> String;
}

/// Retry and concurrency policy for [`sample_n`].
#[derive(Debug, Clone)]
pub struct SamplePolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub parallelism: usize,
}

impl Default for SamplePolicy {
    fn default() -> Self {
        SamplePolicy {
            max_retries: 3,
            base_delay_ms: 500,
            parallelism: 1,
        }
    }
}

fn backoff_delay(policy: &SamplePolicy, attempt: u32) -> Duration {
    let ms = policy
        .base_delay_ms
        .saturating_mul(1u64 << attempt.min(16))
        .min(10_000);
    Duration::from_millis(ms)
}

fn sample_with_retry(
    model: &dyn ChatModel,
    req: &ChatRequest,
    policy: &SamplePolicy,
) -> Result<String, GatewayError> {
    let mut attempt = 0u32;
    loop {
        match model.sample(req) {
            Ok(text) => return Ok(text),
            Err(err) if err.is_retryable() && attempt < policy.max_retries => {
                std::thread::sleep(backoff_delay(policy, attempt));
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

/// Draw `n` independent samples from the chat model. Draws may run
/// concurrently up to `policy.parallelism`, but results are always
/// aggregated by sample index, so concurrency never reorders downstream
/// scoring. Each draw retries transient failures with exponential backoff,
/// at most `policy.max_retries` times.
pub fn sample_n(
    model: &dyn ChatModel,
    req: &ChatRequest,
    n: usize,
    policy: &SamplePolicy,
) -> Result<Vec<ResponseSample>, GatewayError> {
    if n < 2 {
        return Err(GatewayError::InvalidRequest(format!(
            "need n >= 2 samples for pairwise scoring, got {n}"
        )));
    }
    req.validate()?;

    let workers = policy.parallelism.max(1).min(n);
    let results: Mutex<Vec<Option<Result<ResponseSample, GatewayError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = std::sync::atomic::AtomicBool::new(false);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= n {
                    break;
                }
                let start = Instant::now();
                let outcome = sample_with_retry(model, req, policy).map(|text| ResponseSample {
                    index,
                    text,
                    latency_ms: start.elapsed().as_millis() as u64,
                });
                if outcome.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                results.lock().expect("sample results lock")[index] = Some(outcome);
            });
        }
    });

    let collected = results.into_inner().expect("sample results lock");
    let mut samples = Vec::with_capacity(n);
    for slot in collected {
        match slot {
            Some(Ok(sample)) => samples.push(sample),
            Some(Err(err)) => return Err(err),
            None => {
                return Err(GatewayError::Permanent(
                    "sampling aborted after an earlier failure".to_string(),
                ))
            }
        }
    }
    Ok(samples)
}
