//! The end-to-end explain pipeline: select relevant formulas per target,
//! compose prompts, plan and materialize perturbations, decode and compose
//! the image grid, sample the multimodal model, score, select, and persist
//! one manifest per target.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use super::manifest::{ManifestFormula, RunManifest, GRID_FILE, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};
use super::{PipelineError, RunConfig};
use crate::decoder::{
    DecoderBackend, Factor, LinearDecoder, RemoteDecoder, SyntheticDecoder,
};
use crate::formula::{BiasClass, Index, ParsedFormula};
use crate::gateway::{
    sample_n, ChatModel, ChatRequest, Embedder, HttpChatModel, LiveTransport, OfflineEmbedder,
    RemoteEmbedder, ReplayTransport, SamplePolicy, ScriptedChat,
};
use crate::image::{compose_grid, Image};
use crate::perturb::{
    materialize, plan, MaterializedRow, PerturbationPlan, PlanConfig, PropertySpec,
};
use crate::prompt::{compose_prompt, PromptBundle};
use crate::scoring;

/// Pixel gap between grid cells.
const GRID_GAP: u32 = 4;

/// Borrowed backends for one pipeline invocation.
pub struct Runtime<'a> {
    pub backend: &'a dyn DecoderBackend,
    pub chat: &'a dyn ChatModel,
    pub embedder: &'a dyn Embedder,
}

/// Owning variant built from configuration.
pub struct OwnedRuntime {
    pub backend: Box<dyn DecoderBackend>,
    pub chat: Box<dyn ChatModel>,
    pub embedder: Box<dyn Embedder>,
}

impl OwnedRuntime {
    pub fn as_runtime(&self) -> Runtime<'_> {
        Runtime {
            backend: self.backend.as_ref(),
            chat: self.chat.as_ref(),
            embedder: self.embedder.as_ref(),
        }
    }
}

fn build_backend(config: &RunConfig) -> Result<Box<dyn DecoderBackend>, PipelineError> {
    match config.backend.as_str() {
        "synthetic" => {
            if config.profile != "vae" {
                return Err(PipelineError::Config(
                    "the synthetic backend only serves the vae profile".to_string(),
                ));
            }
            let decoder = if config.factors.is_empty() {
                SyntheticDecoder::with_default_factors(config.latent_dim)
            } else {
                let mut factors = std::collections::BTreeMap::new();
                for (&dim, name) in &config.factors {
                    let factor = Factor::parse(name).ok_or_else(|| {
                        PipelineError::Config(format!("unknown factor `{name}`"))
                    })?;
                    factors.insert(dim, factor);
                }
                SyntheticDecoder::new(config.latent_dim, factors)
                    .map_err(|e| PipelineError::Config(e.to_string()))?
            };
            Ok(Box::new(decoder))
        }
        "linear" => {
            let decoder = match &config.linear_matrix {
                Some(matrix) => LinearDecoder::new(matrix.clone())
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
                None => LinearDecoder::scaled_identity(config.latent_dim, 1.0),
            };
            Ok(Box::new(decoder))
        }
        url if url.starts_with("http://") || url.starts_with("https://") => {
            let decoder = RemoteDecoder::connect(Arc::new(LiveTransport::new()), url)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            Ok(Box::new(decoder))
        }
        other => Err(PipelineError::Config(format!(
            "unknown backend `{other}` (want synthetic, linear, or an http(s) URL)"
        ))),
    }
}

fn build_chat(config: &RunConfig) -> Result<Box<dyn ChatModel>, PipelineError> {
    if let Some(responses) = &config.mock_responses {
        if responses.is_empty() {
            return Err(PipelineError::Config("mock_responses is empty".to_string()));
        }
        return Ok(Box::new(ScriptedChat::cycling(responses.clone())));
    }
    if let Some(cassette_path) = &config.cassette {
        let transport = ReplayTransport::load(cassette_path)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let model = HttpChatModel::new(Arc::new(transport), config.gateway.base_url.clone());
        return Ok(Box::new(model));
    }
    if config.gateway.base_url.is_empty() {
        return Err(PipelineError::Config(
            "no gateway configured: set gateway.base_url, mock_responses, or cassette".to_string(),
        ));
    }
    let api_key = std::env::var(&config.gateway.api_key_env).ok();
    let model = HttpChatModel::new(Arc::new(LiveTransport::new()), config.gateway.base_url.clone())
        .with_api_key(api_key);
    Ok(Box::new(model))
}

fn build_embedder(config: &RunConfig) -> Result<Box<dyn Embedder>, PipelineError> {
    match config.embedder.as_str() {
        "offline" => Ok(Box::new(OfflineEmbedder)),
        "remote" => {
            if config.gateway.base_url.is_empty() || config.gateway.embed_model.is_empty() {
                return Err(PipelineError::Config(
                    "remote embedder needs gateway.base_url and gateway.embed_model".to_string(),
                ));
            }
            let api_key = std::env::var(&config.gateway.api_key_env).ok();
            Ok(Box::new(
                RemoteEmbedder::new(
                    Arc::new(LiveTransport::new()),
                    config.gateway.base_url.clone(),
                    config.gateway.embed_model.clone(),
                )
                .with_api_key(api_key),
            ))
        }
        other => Err(PipelineError::Config(format!(
            "unknown embedder `{other}` (want offline or remote)"
        ))),
    }
}

/// Construct the decoder backend, chat model, and embedder from run
/// configuration.
pub fn build_runtime(config: &RunConfig) -> Result<OwnedRuntime, PipelineError> {
    Ok(OwnedRuntime {
        backend: build_backend(config)?,
        chat: build_chat(config)?,
        embedder: build_embedder(config)?,
    })
}

/// Relevance of one classified formula to a target latent: a literal
/// subscript must equal the target; a free subscript matches according to
/// the bias and the configured groups (combination formulas need the
/// target grouped; conditional formulas respect the property's group when
/// one is configured).
pub fn formula_relevant(
    parsed: &ParsedFormula,
    bias: BiasClass,
    target: usize,
    config: &RunConfig,
) -> bool {
    match &parsed.ast.relation.lhs.target.index {
        Some(Index::Literal(n)) => *n == target as i64,
        _ => match bias {
            BiasClass::Disentanglement => true,
            BiasClass::CombinationInterGroup | BiasClass::CombinationIntraGroup => {
                config.groups.contains_key(&target)
            }
            BiasClass::ConditionalDependent => match property_group(config) {
                Some(group) => config.groups.get(&target) == Some(&group),
                None => true,
            },
            BiasClass::ConditionalIndependent => match property_group(config) {
                Some(group) => config.groups.get(&target) != Some(&group),
                None => true,
            },
        },
    }
}

fn property_group(config: &RunConfig) -> Option<String> {
    config.property.as_ref().and_then(|p| p.group.clone())
}

/// One prepared target: everything up to (but excluding) the gateway call.
struct PreparedTarget {
    formulas: Vec<ManifestFormula>,
    prompts: Vec<PromptBundle>,
    prompt_text: String,
    plans: Vec<PerturbationPlan>,
    row_images: Vec<Vec<Image>>,
    rows_identical: Vec<bool>,
    grid: Image,
}

fn plan_config(config: &RunConfig) -> PlanConfig {
    PlanConfig {
        groups: if config.groups.is_empty() {
            None
        } else {
            Some(config.groups.clone())
        },
        property: config.property.as_ref().map(|p| PropertySpec {
            name: p.name.clone(),
            index: p.index,
            on_value: p.on_value,
            off_value: p.off_value,
        }),
        base_latent: config.base_latent.clone(),
        random_confound: config.random_confound,
    }
}

fn decode_row(
    backend: &dyn DecoderBackend,
    row: &MaterializedRow,
) -> Result<Vec<Image>, String> {
    match row {
        MaterializedRow::Vae { latents, .. } => latents
            .iter()
            .map(|z| backend.decode(z).map_err(|e| e.to_string()))
            .collect(),
        MaterializedRow::Diffusion {
            base,
            confound,
            sweep,
            ..
        } => {
            let start = match confound {
                Some(shift) => backend
                    .perturb(base, &shift.direction, shift.gamma)
                    .map_err(|e| e.to_string())?,
                None => base.clone(),
            };
            sweep
                .iter()
                .map(|shift| {
                    let z = backend
                        .perturb(&start, &shift.direction, shift.gamma)
                        .map_err(|e| e.to_string())?;
                    backend.decode(&z).map_err(|e| e.to_string())
                })
                .collect()
        }
    }
}

fn prepare_target(
    config: &RunConfig,
    formulas: &[(ParsedFormula, BiasClass)],
    backend: &dyn DecoderBackend,
    target: usize,
) -> Result<PreparedTarget, String> {
    let relevant: Vec<&(ParsedFormula, BiasClass)> = formulas
        .iter()
        .filter(|(pf, bias)| formula_relevant(pf, *bias, target, config))
        .collect();
    if relevant.is_empty() {
        return Err(format!("no relevant formulas for target {target}"));
    }

    let kind = config
        .model_kind(backend.latent_dim())
        .map_err(|e| e.to_string())?;
    let pconfig = plan_config(config);
    let property_name = config.property.as_ref().map(|p| p.name.as_str());

    let mut manifest_formulas = Vec::new();
    let mut prompts = Vec::new();
    let mut plans = Vec::new();
    let mut row_images: Vec<Vec<Image>> = Vec::new();

    for (pf, bias) in relevant {
        let bundle = compose_prompt(&pf.ast, *bias, property_name).map_err(|e| e.to_string())?;
        let target_plan =
            plan(*bias, kind, target, config.seed, &pconfig).map_err(|e| e.to_string())?;
        let rows = materialize(&target_plan, kind);
        for row in &rows {
            row_images.push(decode_row(backend, row)?);
        }
        manifest_formulas.push(ManifestFormula {
            line: pf.line,
            source: pf.ast.source_text.clone(),
            bias: *bias,
        });
        prompts.push(bundle);
        plans.push(target_plan);
    }

    let rows_identical: Vec<bool> = row_images
        .iter()
        .map(|row| row.windows(2).all(|w| w[0] == w[1]))
        .collect();
    let grid = compose_grid(&row_images, GRID_GAP).map_err(|e| e.to_string())?;

    let mut prompt_text = prompts
        .iter()
        .map(|p| p.adaptive_text.clone())
        .collect::<Vec<_>>()
        .join("\n");
    prompt_text.push('\n');
    prompt_text.push_str(&prompts[0].fixed_ending);

    Ok(PreparedTarget {
        formulas: manifest_formulas,
        prompts,
        prompt_text,
        plans,
        row_images,
        rows_identical,
        grid,
    })
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn run_id(config: &RunConfig, formulas_text: &str, target: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(formulas_text.as_bytes());
    hasher.update(config.gateway.digest().as_bytes());
    hasher.update(config.backend.as_bytes());
    hasher.update(target.to_le_bytes());
    hasher.update(config.seed.to_le_bytes());
    hasher.update(config.n.to_le_bytes());
    let digest = hasher.finalize();
    let short: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("run-{target:02}-{short}")
}

fn write_target_files(
    run_dir: &Path,
    prepared: &PreparedTarget,
) -> Result<(Vec<Vec<String>>, Vec<u8>), String> {
    std::fs::create_dir_all(run_dir).map_err(|e| format!("create {run_dir:?}: {e}"))?;
    let mut image_paths = Vec::new();
    for (row_idx, row) in prepared.row_images.iter().enumerate() {
        let mut row_paths = Vec::new();
        for (step_idx, image) in row.iter().enumerate() {
            let file = format!("row{row_idx}_step{step_idx}.png");
            let png = image.to_png().map_err(|e| e.to_string())?;
            std::fs::write(run_dir.join(&file), png).map_err(|e| e.to_string())?;
            row_paths.push(file);
        }
        image_paths.push(row_paths);
    }
    let grid_png = prepared.grid.to_png().map_err(|e| e.to_string())?;
    std::fs::write(run_dir.join(GRID_FILE), &grid_png).map_err(|e| e.to_string())?;
    Ok((image_paths, grid_png))
}

/// Per-target outcome: a manifest, or the failure message with a flag for
/// gateway-rooted failures (which drive the partial-failure exit code).
#[derive(Debug)]
pub struct TargetResult {
    pub target_index: usize,
    pub run_id: String,
    pub outcome: Result<RunManifest, String>,
}

#[derive(Debug)]
pub struct ExplainOutcome {
    pub results: Vec<TargetResult>,
}

impl ExplainOutcome {
    pub fn all_ok(&self) -> bool {
        self.results.iter().all(|r| r.outcome.is_ok())
    }
}

fn validate_run_inputs(
    config: &RunConfig,
    formulas: &[(ParsedFormula, BiasClass)],
) -> Result<(), PipelineError> {
    let any_conditional = formulas.iter().any(|(_, b)| b.is_conditional());
    if any_conditional && config.property.is_none() {
        return Err(PipelineError::Config(
            "a conditional formula is supplied but no property is configured".to_string(),
        ));
    }
    if !any_conditional && config.property.is_some() {
        return Err(PipelineError::Config(
            "a property is configured but no conditional formula is supplied".to_string(),
        ));
    }
    if let Some(property) = &config.property {
        if property.index >= config.latent_dim {
            return Err(PipelineError::Config(format!(
                "property index {} out of range for latent_dim {}",
                property.index, config.latent_dim
            )));
        }
    }
    for (&index, _) in &config.groups {
        if index >= config.latent_dim {
            return Err(PipelineError::Config(format!(
                "group assignment references index {index}, but latent_dim is {}",
                config.latent_dim
            )));
        }
    }
    Ok(())
}

fn explain_one_target(
    config: &RunConfig,
    formulas: &[(ParsedFormula, BiasClass)],
    formulas_text: &str,
    runtime: &Runtime<'_>,
    target: usize,
) -> TargetResult {
    let id = run_id(config, formulas_text, target);
    let created = unix_ms();
    let outcome = (|| -> Result<RunManifest, String> {
        let prepared = prepare_target(config, formulas, runtime.backend, target)?;
        let run_dir = config.out_dir.join(&id);
        let (image_paths, grid_png) = write_target_files(&run_dir, &prepared)?;

        let mut request = ChatRequest::new(prepared.prompt_text.clone(), vec![grid_png]);
        request.temperature = config.gateway.temperature;
        request.top_p = config.gateway.top_p;
        request.model_name = config.gateway.model.clone();
        let policy = SamplePolicy {
            max_retries: config.gateway.max_retries,
            base_delay_ms: 500,
            parallelism: config.gateway.parallelism,
        };
        let samples =
            sample_n(runtime.chat, &request, config.n, &policy).map_err(|e| e.to_string())?;

        let texts: Vec<String> = samples.iter().map(|s| s.text.clone()).collect();
        let embeddings = runtime.embedder.embed(&texts).map_err(|e| e.to_string())?;
        let scores = scoring::score(&embeddings).map_err(|e| e.to_string())?;
        let epsilon = config.effective_epsilon();
        let scored = scoring::select(samples, embeddings, scores, epsilon);

        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            run_id: id.clone(),
            target_index: target,
            created_unix_ms: created,
            completed_unix_ms: unix_ms(),
            backend: runtime.backend.name(),
            formulas: prepared.formulas,
            prompts: prepared.prompts,
            prompt_text: prepared.prompt_text,
            plans: prepared.plans,
            images: image_paths,
            grid_image: GRID_FILE.to_string(),
            rows_identical: prepared.rows_identical,
            n: config.n,
            gateway_config_digest: config.gateway.digest(),
            embedder: runtime.embedder.name(),
            responses: scored.samples.iter().map(|s| s.text.clone()).collect(),
            latencies_ms: scored.samples.iter().map(|s| s.latency_ms).collect(),
            per_response: scored.per_response,
            certainty: scored.certainty,
            epsilon,
            selected_index: scored.selected_index,
            final_explanation: scored.final_text,
        };
        manifest.validate()?;
        let json = manifest.to_json_pretty()?;
        std::fs::write(run_dir.join(MANIFEST_FILE), json).map_err(|e| e.to_string())?;
        Ok(manifest)
    })();
    TargetResult {
        target_index: target,
        run_id: id,
        outcome,
    }
}

/// Run the full pipeline for every selected target. Parse, classification,
/// and configuration problems fail the whole call; per-target failures are
/// recorded in the outcome while the remaining targets still complete.
pub fn explain(
    config: &RunConfig,
    formulas_text: &str,
    runtime: &Runtime<'_>,
) -> Result<ExplainOutcome, PipelineError> {
    let formulas = super::load_formulas(formulas_text)?;
    validate_run_inputs(config, &formulas)?;
    let latent_dim = runtime.backend.latent_dim();
    if latent_dim != config.latent_dim {
        return Err(PipelineError::Config(format!(
            "backend reports latent_dim {latent_dim}, config says {}",
            config.latent_dim
        )));
    }
    let targets = config.targets.resolve(latent_dim)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| PipelineError::Io(e.to_string()))?;

    let workers = config.parallel_targets.max(1).min(targets.len());
    let results: Mutex<Vec<Option<TargetResult>>> =
        Mutex::new((0..targets.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let slot = next.fetch_add(1, Ordering::SeqCst);
                if slot >= targets.len() {
                    break;
                }
                let result =
                    explain_one_target(config, &formulas, formulas_text, runtime, targets[slot]);
                results.lock().expect("target results lock")[slot] = Some(result);
            });
        }
    });

    let results = results
        .into_inner()
        .expect("target results lock")
        .into_iter()
        .map(|r| r.expect("every target slot filled"))
        .collect();
    Ok(ExplainOutcome { results })
}

/// Per-target outcome of a dry perturbation run.
#[derive(Debug)]
pub struct PerturbResult {
    pub target_index: usize,
    pub run_id: String,
    pub outcome: Result<(), String>,
}

/// Dry perturbation run: plan, decode, and persist images plus `plan.json`
/// per target, touching no gateway.
pub fn perturb_only(
    config: &RunConfig,
    formulas_text: &str,
    backend: &dyn DecoderBackend,
) -> Result<Vec<PerturbResult>, PipelineError> {
    let formulas = super::load_formulas(formulas_text)?;
    validate_run_inputs(config, &formulas)?;
    let latent_dim = backend.latent_dim();
    if latent_dim != config.latent_dim {
        return Err(PipelineError::Config(format!(
            "backend reports latent_dim {latent_dim}, config says {}",
            config.latent_dim
        )));
    }
    let targets = config.targets.resolve(latent_dim)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| PipelineError::Io(e.to_string()))?;

    let mut results = Vec::new();
    for target in targets {
        let id = run_id(config, formulas_text, target);
        let outcome = (|| -> Result<(), String> {
            let prepared = prepare_target(config, &formulas, backend, target)?;
            let run_dir = config.out_dir.join(&id);
            write_target_files(&run_dir, &prepared)?;
            let plan_summary = serde_json::json!({
                "run_id": id,
                "target_index": target,
                "formulas": prepared.formulas,
                "prompts": prepared.prompts,
                "plans": prepared.plans,
                "rows_identical": prepared.rows_identical,
            });
            let json = serde_json::to_string_pretty(&plan_summary).map_err(|e| e.to_string())?;
            std::fs::write(run_dir.join("plan.json"), json).map_err(|e| e.to_string())?;
            Ok(())
        })();
        results.push(PerturbResult {
            target_index: target,
            run_id: id,
            outcome,
        });
    }
    Ok(results)
}
