//! The persisted record of one explanation run. A manifest carries enough
//! to reconstruct the run decision: re-embedding the stored responses with
//! the named embedder reproduces the stored certainty.

use serde::{Deserialize, Serialize};

use crate::formula::BiasClass;
use crate::gateway::Embedder;
use crate::perturb::PerturbationPlan;
use crate::prompt::PromptBundle;
use crate::scoring;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRID_FILE: &str = "grid.png";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFormula {
    /// 1-based line in the formula file.
    pub line: usize,
    pub source: String,
    pub bias: BiasClass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub target_index: usize,
    pub created_unix_ms: u64,
    pub completed_unix_ms: u64,
    pub backend: String,
    pub formulas: Vec<ManifestFormula>,
    pub prompts: Vec<PromptBundle>,
    /// The full prompt sent to the model: adaptive texts, then the fixed
    /// ending, newline-joined.
    pub prompt_text: String,
    pub plans: Vec<PerturbationPlan>,
    /// Image files per row, paths relative to the run directory.
    pub images: Vec<Vec<String>>,
    pub grid_image: String,
    /// Per row: whether every image in the row is byte-identical (a no-op
    /// sweep).
    pub rows_identical: Vec<bool>,
    pub n: usize,
    pub gateway_config_digest: String,
    pub embedder: String,
    pub responses: Vec<String>,
    pub latencies_ms: Vec<u64>,
    pub per_response: Vec<f64>,
    pub certainty: f64,
    pub epsilon: f64,
    pub selected_index: usize,
    pub final_explanation: String,
}

impl RunManifest {
    /// Schema validation: every field required to re-score and replay the
    /// decision is present and internally consistent.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(format!("unknown schema_version {}", self.schema_version));
        }
        if self.run_id.is_empty() {
            return Err("empty run_id".to_string());
        }
        if self.formulas.is_empty() || self.prompts.is_empty() || self.plans.is_empty() {
            return Err("manifest must carry formulas, prompts, and plans".to_string());
        }
        if self.prompt_text.is_empty() {
            return Err("empty prompt_text".to_string());
        }
        if self.images.len() != self.rows_identical.len() {
            return Err("images and rows_identical disagree on row count".to_string());
        }
        if self.images.is_empty() || self.grid_image.is_empty() {
            return Err("manifest must reference image files".to_string());
        }
        if self.n < 2
            || self.responses.len() != self.n
            || self.per_response.len() != self.n
            || self.latencies_ms.len() != self.n
        {
            return Err(format!(
                "need n >= 2 with n responses/scores/latencies, got n={} r={} s={} l={}",
                self.n,
                self.responses.len(),
                self.per_response.len(),
                self.latencies_ms.len()
            ));
        }
        if self.selected_index >= self.n {
            return Err(format!("selected_index {} out of range", self.selected_index));
        }
        if !self.certainty.is_finite() || !self.epsilon.is_finite() {
            return Err("certainty and epsilon must be finite".to_string());
        }
        if self.embedder.is_empty() || self.gateway_config_digest.is_empty() {
            return Err("embedder and gateway digest must be recorded".to_string());
        }
        if self.final_explanation.is_empty() {
            return Err("empty final_explanation".to_string());
        }
        Ok(())
    }

    /// Recompute the certainty from the stored responses with the given
    /// embedder (which must match the recorded one).
    pub fn rescore(&self, embedder: &dyn Embedder) -> Result<f64, String> {
        if embedder.name() != self.embedder {
            return Err(format!(
                "embedder mismatch: manifest recorded `{}`, got `{}`",
                self.embedder,
                embedder.name()
            ));
        }
        let embeddings = embedder
            .embed(&self.responses)
            .map_err(|e| format!("re-embedding failed: {e}"))?;
        let scores = scoring::score(&embeddings).map_err(|e| format!("re-scoring failed: {e}"))?;
        Ok(scores.certainty)
    }

    pub fn to_json_pretty(&self) -> Result<String, String> {
        serde_json::to_string_pretty(self).map_err(|e| e.to_string())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}
