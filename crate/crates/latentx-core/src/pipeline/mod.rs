//! Run orchestration: configuration, the end-to-end explain pipeline, the
//! compile dry run, calibration and evaluation file operations, and the
//! persisted run manifest.

mod manifest;
mod run;

pub use manifest::{ManifestFormula, RunManifest, GRID_FILE, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};
pub use run::{
    build_runtime, explain, formula_relevant, perturb_only, ExplainOutcome, OwnedRuntime,
    PerturbResult, Runtime, TargetResult,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::formula::{classify_bias, parse_formula_file, BiasClass, ParsedFormula};
use crate::metrics::{self, EvalPair};
use crate::perturb::{DiffusionProfile, ModelKind};
use crate::prompt::{compose_prompt_raw, FIXED_ENDING};
use crate::scoring::{self, Threshold};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("line {line}: {message}")]
    Formula { line: usize, message: String },
    #[error("no formulas found in the input")]
    EmptyFormulaSet,
    #[error("no calibration records found in the input")]
    EmptyCalibrationSet,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Gateway settings: connection, sampling, and retry knobs. The API key is
/// read from the named environment variable, never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model: String,
    pub embed_model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: u32,
    pub parallelism: usize,
    pub api_key_env: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: String::new(),
            model: String::new(),
            embed_model: String::new(),
            temperature: 1.0,
            top_p: 1.0,
            max_retries: 3,
            parallelism: 1,
            api_key_env: crate::gateway::DEFAULT_API_KEY_ENV.to_string(),
        }
    }
}

impl GatewayConfig {
    /// Stable digest of the gateway configuration, recorded in manifests.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("gateway config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Property conditioning configuration for the conditional biases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyConfig {
    pub name: String,
    /// Latent coordinate carrying the property conditioning.
    pub index: usize,
    #[serde(default = "default_property_on")]
    pub on_value: f64,
    #[serde(default = "default_property_off")]
    pub off_value: f64,
    /// Group id the property is associated with, for relevance filtering.
    #[serde(default)]
    pub group: Option<String>,
}

fn default_property_on() -> f64 {
    3.0
}

fn default_property_off() -> f64 {
    -3.0
}

/// Which targets to explain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSelection {
    One(usize),
    Many(Vec<usize>),
    Keyword(String),
}

impl Default for TargetSelection {
    fn default() -> Self {
        TargetSelection::Keyword("all".to_string())
    }
}

impl TargetSelection {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        if text == "all" {
            return Ok(TargetSelection::Keyword("all".to_string()));
        }
        if let Ok(one) = text.parse::<usize>() {
            return Ok(TargetSelection::One(one));
        }
        let many: Result<Vec<usize>, _> = text.split(',').map(|p| p.trim().parse()).collect();
        match many {
            Ok(list) if !list.is_empty() => Ok(TargetSelection::Many(list)),
            _ => Err(PipelineError::Config(format!(
                "target must be an index, a comma list, or `all`, got `{text}`"
            ))),
        }
    }

    pub fn resolve(&self, latent_dim: usize) -> Result<Vec<usize>, PipelineError> {
        let indices = match self {
            TargetSelection::One(i) => vec![*i],
            TargetSelection::Many(list) => list.clone(),
            TargetSelection::Keyword(word) if word == "all" => (0..latent_dim).collect(),
            TargetSelection::Keyword(other) => {
                return Err(PipelineError::Config(format!(
                    "unknown target keyword `{other}`"
                )))
            }
        };
        for &i in &indices {
            if i >= latent_dim {
                return Err(PipelineError::Config(format!(
                    "target index {i} out of range for latent_dim {latent_dim}"
                )));
            }
        }
        Ok(indices)
    }
}

/// One run's configuration. Serialized as JSON; every field has a default
/// except the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `synthetic`, `linear`, or a remote decoder base URL.
    pub backend: String,
    /// `vae`, `ddpm`, or `conditional`.
    pub profile: String,
    pub latent_dim: usize,
    pub targets: TargetSelection,
    /// Latent index → group id.
    pub groups: BTreeMap<usize, String>,
    pub property: Option<PropertyConfig>,
    /// Certainty threshold; the calibrated default applies when absent.
    pub epsilon: Option<f64>,
    pub n: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub gateway: GatewayConfig,
    /// Synthetic backend: dimension → factor name (`pos_x`, `pos_y`,
    /// `scale`, `rotation`, `shape`, `brightness`). Empty map uses the
    /// default assignment.
    pub factors: BTreeMap<usize, String>,
    /// Linear backend feature matrix; identity when absent.
    pub linear_matrix: Option<Vec<Vec<f64>>>,
    pub base_latent: Option<Vec<f64>>,
    pub random_confound: bool,
    /// `offline` or `remote`.
    pub embedder: String,
    /// Scripted chat replies (cycled); selects the mock gateway.
    pub mock_responses: Option<Vec<String>>,
    /// Cassette file; selects the replay gateway.
    pub cassette: Option<PathBuf>,
    /// Bounded parallelism across targets.
    pub parallel_targets: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: "synthetic".to_string(),
            profile: "vae".to_string(),
            latent_dim: 6,
            targets: TargetSelection::default(),
            groups: BTreeMap::new(),
            property: None,
            epsilon: None,
            n: 5,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            gateway: GatewayConfig::default(),
            factors: BTreeMap::new(),
            linear_matrix: None,
            base_latent: None,
            random_confound: false,
            embedder: "offline".to_string(),
            mock_responses: None,
            cassette: None,
            parallel_targets: 1,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("bad config: {e}")))
    }

    pub fn model_kind(&self, latent_dim: usize) -> Result<ModelKind, PipelineError> {
        match self.profile.as_str() {
            "vae" => Ok(ModelKind::VaeLatent { latent_dim }),
            "ddpm" => Ok(ModelKind::DiffusionDirection {
                latent_dim,
                profile: DiffusionProfile::Ddpm,
            }),
            "conditional" => Ok(ModelKind::DiffusionDirection {
                latent_dim,
                profile: DiffusionProfile::Conditional,
            }),
            other => Err(PipelineError::Config(format!(
                "unknown profile `{other}` (want vae, ddpm, or conditional)"
            ))),
        }
    }

    pub fn effective_epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(scoring::DEFAULT_EPSILON)
    }
}

/// Parse and classify a formula file, mapping failures to line-numbered
/// errors. An input with no formulas is an error for every pipeline
/// operation.
pub fn load_formulas(text: &str) -> Result<Vec<(ParsedFormula, BiasClass)>, PipelineError> {
    let parsed = parse_formula_file(text).map_err(|e| PipelineError::Formula {
        line: e.line,
        message: e.inner.to_string(),
    })?;
    if parsed.is_empty() {
        return Err(PipelineError::EmptyFormulaSet);
    }
    parsed
        .into_iter()
        .map(|pf| {
            let bias = classify_bias(&pf.ast).map_err(|e| PipelineError::Formula {
                line: pf.line,
                message: e.to_string(),
            })?;
            Ok((pf, bias))
        })
        .collect()
}

fn layout_line(bias: BiasClass) -> &'static str {
    match bias {
        BiasClass::Disentanglement => "2 rows: sweep; sweep after a confound shift",
        BiasClass::CombinationInterGroup => {
            "2 rows: sweep; sweep after a confound shift from another group"
        }
        BiasClass::CombinationIntraGroup => {
            "2 rows: sweep; sweep after a confound shift from the same group"
        }
        BiasClass::ConditionalDependent | BiasClass::ConditionalIndependent => {
            "2 rows: sweep with property on; sweep with property off"
        }
    }
}

/// Dry-run compilation: prompts and plan layout for every formula, no
/// backends touched. With no property name, conditional templates keep
/// their `[property_k]` slot.
pub fn compile(formulas_text: &str, property_name: Option<&str>) -> Result<String, PipelineError> {
    let formulas = load_formulas(formulas_text)?;
    let mut out = String::new();
    for (pf, bias) in &formulas {
        let bundle = compose_prompt_raw(&pf.ast, *bias, property_name).map_err(|e| {
            PipelineError::Formula {
                line: pf.line,
                message: e.to_string(),
            }
        })?;
        let rules: Vec<String> = bundle.rule_trace.iter().map(|r| r.rule.to_string()).collect();
        out.push_str(&format!("# formula line {}\n", pf.line));
        out.push_str(&format!("source: {}\n", pf.ast.source_text));
        out.push_str(&format!("bias: {}\n", bias.name()));
        out.push_str(&format!("rules: {}\n", rules.join(",")));
        out.push_str(&format!("adaptive: {}\n", bundle.adaptive_text));
        out.push_str(&format!("ending: {}\n", FIXED_ENDING));
        out.push_str(&format!("layout: {}\n", layout_line(*bias)));
        out.push('\n');
    }
    Ok(out)
}

/// Calibrate a threshold from a records file and persist it as
/// `threshold.json` under `out_dir` (when given).
pub fn calibrate_file(
    records_text: &str,
    out_dir: Option<&std::path::Path>,
) -> Result<Threshold, PipelineError> {
    let set = scoring::parse_calibration_file(records_text)
        .map_err(PipelineError::Config)?;
    if set.records.is_empty() {
        return Err(PipelineError::EmptyCalibrationSet);
    }
    let threshold = scoring::calibrate(&set)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(e.to_string()))?;
        let path = dir.join("threshold.json");
        let json = serde_json::to_string_pretty(&threshold)
            .map_err(|e| PipelineError::Io(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| PipelineError::Io(e.to_string()))?;
    }
    Ok(threshold)
}

/// One evaluation record: a generated explanation against its references.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub run_id: String,
    pub hypothesis: String,
    pub references: Vec<String>,
}

/// Parse the evaluation file: tab-separated `run_id`, hypothesis, then one
/// or more references; `#` starts a comment line.
pub fn parse_eval_file(text: &str) -> Result<Vec<EvalRecord>, PipelineError> {
    let mut records = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(PipelineError::Config(format!(
                "line {line_no}: expected run_id<TAB>hypothesis<TAB>reference..., got {} fields",
                fields.len()
            )));
        }
        records.push(EvalRecord {
            run_id: fields[0].to_string(),
            hypothesis: fields[1].to_string(),
            references: fields[2..].iter().map(|s| s.to_string()).collect(),
        });
    }
    if records.is_empty() {
        return Err(PipelineError::Config("no evaluation records".to_string()));
    }
    Ok(records)
}

/// Machine-readable evaluation summary persisted next to the manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub corpus_bleu4: f64,
    pub mean_rouge_l_f: f64,
    pub per_run: Vec<EvalRunScores>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRunScores {
    pub run_id: String,
    pub bleu4: f64,
    pub rouge_l_precision: f64,
    pub rouge_l_recall: f64,
    pub rouge_l_f: f64,
}

/// Score an evaluation file. Returns the rendered delimited report and
/// writes `eval_summary.json` under `out_dir` (when given). Scores are
/// stored on 0..1 and rendered ×100.
pub fn eval_file(
    records_text: &str,
    out_dir: Option<&std::path::Path>,
) -> Result<(String, EvalSummary), PipelineError> {
    let records = parse_eval_file(records_text)?;
    let pairs: Vec<EvalPair> = records
        .iter()
        .map(|r| EvalPair::new(r.hypothesis.clone(), r.references.clone()))
        .collect();
    let report = metrics::evaluate(&pairs)
        .map_err(|e| PipelineError::Config(format!("evaluation failed: {e}")))?;

    let mut per_run = Vec::with_capacity(records.len());
    let mut text = String::from("run_id\tbleu4\trouge_l_p\trouge_l_r\trouge_l_f\n");
    for (record, pair_report) in records.iter().zip(&report.per_pair) {
        text.push_str(&format!(
            "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
            record.run_id,
            pair_report.bleu4 * 100.0,
            pair_report.rouge_l.precision * 100.0,
            pair_report.rouge_l.recall * 100.0,
            pair_report.rouge_l.f1 * 100.0,
        ));
        per_run.push(EvalRunScores {
            run_id: record.run_id.clone(),
            bleu4: pair_report.bleu4,
            rouge_l_precision: pair_report.rouge_l.precision,
            rouge_l_recall: pair_report.rouge_l.recall,
            rouge_l_f: pair_report.rouge_l.f1,
        });
    }
    text.push_str(&format!(
        "corpus\t{:.2}\t-\t-\t{:.2}\n",
        report.bleu4 * 100.0,
        report.rouge_l_f * 100.0
    ));

    let summary = EvalSummary {
        corpus_bleu4: report.bleu4,
        mean_rouge_l_f: report.rouge_l_f,
        per_run,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(e.to_string()))?;
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| PipelineError::Io(e.to_string()))?;
        std::fs::write(dir.join("eval_summary.json"), json)
            .map_err(|e| PipelineError::Io(e.to_string()))?;
    }
    Ok((text, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::CANONICAL_FORMULAS;

    fn canonical_file() -> String {
        let mut text = String::from("# canonical formulas\n");
        for (formula, _) in CANONICAL_FORMULAS {
            text.push_str(formula);
            text.push('\n');
        }
        text
    }

    #[test]
    fn compile_emits_five_blocks() {
        let out = compile(&canonical_file(), None).unwrap();
        assert_eq!(out.matches("# formula line").count(), 5);
        assert_eq!(out.matches("ending: What is the pattern of change?").count(), 5);
    }

    #[test]
    fn compile_reports_bad_line() {
        let err = compile("P(z[1] | nonsense\n", None).unwrap_err();
        match err {
            PipelineError::Formula { line, .. } => assert_eq!(line, 1),
            other => panic!("expected formula error, got {other}"),
        }
    }

    #[test]
    fn compile_empty_input_rejected() {
        assert!(matches!(
            compile("# only comments\n\n", None),
            Err(PipelineError::EmptyFormulaSet)
        ));
    }

    #[test]
    fn target_selection_parses() {
        assert!(matches!(
            TargetSelection::parse("all").unwrap(),
            TargetSelection::Keyword(_)
        ));
        assert!(matches!(
            TargetSelection::parse("3").unwrap(),
            TargetSelection::One(3)
        ));
        assert!(matches!(
            TargetSelection::parse("0, 2, 4").unwrap(),
            TargetSelection::Many(_)
        ));
        assert!(TargetSelection::parse("x").is_err());
    }

    #[test]
    fn target_selection_resolves_bounds() {
        let all = TargetSelection::Keyword("all".to_string());
        assert_eq!(all.resolve(3).unwrap(), vec![0, 1, 2]);
        let one = TargetSelection::One(5);
        assert!(one.resolve(3).is_err());
    }

    #[test]
    fn gateway_digest_is_stable_and_sensitive() {
        let a = GatewayConfig::default();
        let mut b = GatewayConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.model = "other".to_string();
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn config_defaults_fill_in() {
        let config = RunConfig::from_json("{\"latent_dim\": 4}").unwrap();
        assert_eq!(config.latent_dim, 4);
        assert_eq!(config.n, 5);
        assert_eq!(config.backend, "synthetic");
        assert_eq!(config.effective_epsilon(), scoring::DEFAULT_EPSILON);
    }

    #[test]
    fn eval_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let text = "# header\nrun-1\tthe cat sat on the mat\tthe cat sat on a mat\nrun-2\ta b c\ta c\tc b a\n";
        let (report, summary) = eval_file(text, Some(dir.path())).unwrap();
        assert!(report.starts_with("run_id\t"));
        assert!(report.contains("corpus\t"));
        assert_eq!(summary.per_run.len(), 2);
        assert!(dir.path().join("eval_summary.json").exists());
    }

    #[test]
    fn eval_file_requires_references() {
        assert!(parse_eval_file("run-1\thypothesis only\n").is_err());
    }

    #[test]
    fn calibrate_file_persists_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let threshold =
            calibrate_file("a 0.9 1\nb 0.5 1\nc 0.1 0\n", Some(dir.path())).unwrap();
        assert_eq!(threshold.objective, 1.0);
        assert!(dir.path().join("threshold.json").exists());
    }

    #[test]
    fn calibrate_empty_file_rejected() {
        assert!(matches!(
            calibrate_file("# nothing\n", None),
            Err(PipelineError::EmptyCalibrationSet)
        ));
    }
}
