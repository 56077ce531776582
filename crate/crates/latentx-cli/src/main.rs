//! `latentx` — compile inductive-bias formulas into perturbation plans and
//! prompts, run explanation pipelines against decoder and multimodal
//! backends, calibrate the certainty threshold, and score explanations.
//!
//! Exit codes: 0 success, 1 configuration or parse error, 2 partial
//! failure (one or more targets failed while the rest completed).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use latentx_core::pipeline::{self, RunConfig, TargetSelection};

#[derive(Parser)]
#[command(name = "latentx", version, about = "Latent-variable explanation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Formula file: one formula per line, `#` comments.
    #[arg(long)]
    formulas: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target latent index, comma list, or `all`.
    #[arg(long)]
    target: Option<String>,
    /// Decoder backend: `synthetic`, `linear`, or a base URL.
    #[arg(long)]
    backend: Option<String>,
    /// Certainty threshold override.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Samples per explanation.
    #[arg(long)]
    n: Option<usize>,
    /// Mock gateway file: a cassette (`{"version":1,...}`) to replay, or
    /// scripted replies (`{"responses":[...]}`).
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Output directory for run manifests and images.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, classify, and print prompts and plan layout; no backends.
    Compile {
        #[arg(long)]
        formulas: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Plan and decode perturbation sequences; write images and plan.json.
    Perturb(RunArgs),
    /// Run the full explanation pipeline and persist manifests.
    Explain(RunArgs),
    /// Calibrate the certainty threshold from labeled records.
    Calibrate {
        /// Records file: `run_id certainty label` per line.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score explanations against references with BLEU@4 and ROUGE-L.
    Eval {
        /// Tab-separated records: run_id, hypothesis, references...
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_to_string(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_json(&read_to_string(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(target) = &args.target {
        config.targets = TargetSelection::parse(target)?;
    }
    if let Some(backend) = &args.backend {
        config.backend = backend.clone();
    }
    if let Some(epsilon) = args.epsilon {
        config.epsilon = Some(epsilon);
    }
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(mock) = &args.mock {
        let text = read_to_string(mock)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", mock.display()))?;
        if value.get("version").is_some() {
            config.cassette = Some(mock.clone());
        } else if let Some(responses) = value.get("responses").and_then(|r| r.as_array()) {
            let texts: Option<Vec<String>> = responses
                .iter()
                .map(|v| v.as_str().map(|s| s.to_string()))
                .collect();
            config.mock_responses =
                Some(texts.context("mock responses must be strings")?);
        } else {
            anyhow::bail!(
                "{} is neither a cassette nor a scripted-responses file",
                mock.display()
            );
        }
    }
    Ok(config)
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Compile { formulas, config } => {
            let text = read_to_string(&formulas)?;
            let property = match &config {
                Some(path) => {
                    let config = RunConfig::from_json(&read_to_string(path)?)?;
                    config.property.map(|p| p.name)
                }
                None => None,
            };
            let output = pipeline::compile(&text, property.as_deref())?;
            print!("{output}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Perturb(args) => {
            let config = load_config(&args)?;
            let text = read_to_string(&args.formulas)?;
            let runtime = pipeline::build_runtime(&config)?;
            let results = pipeline::perturb_only(&config, &text, runtime.backend.as_ref())?;
            let mut failed = false;
            for result in &results {
                match &result.outcome {
                    Ok(()) => println!(
                        "target {}: wrote {}",
                        result.target_index,
                        config.out_dir.join(&result.run_id).display()
                    ),
                    Err(message) => {
                        failed = true;
                        eprintln!("target {}: FAILED: {message}", result.target_index);
                    }
                }
            }
            Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Explain(args) => {
            let config = load_config(&args)?;
            let text = read_to_string(&args.formulas)?;
            let runtime = pipeline::build_runtime(&config)?;
            let outcome = pipeline::explain(&config, &text, &runtime.as_runtime())?;
            let mut failed = false;
            for result in &outcome.results {
                match &result.outcome {
                    Ok(manifest) => println!(
                        "target {}: certainty {:.4} -> {}",
                        result.target_index, manifest.certainty, manifest.final_explanation
                    ),
                    Err(message) => {
                        failed = true;
                        eprintln!("target {}: FAILED: {message}", result.target_index);
                    }
                }
            }
            Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Calibrate { records, out } => {
            let text = read_to_string(&records)?;
            let threshold = pipeline::calibrate_file(&text, out.as_deref())?;
            println!(
                "epsilon = {:.6} (objective {:.4})",
                threshold.epsilon, threshold.objective
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { records, out } => {
            let text = read_to_string(&records)?;
            let (report, _summary) = pipeline::eval_file(&text, out.as_deref())?;
            print!("{report}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
