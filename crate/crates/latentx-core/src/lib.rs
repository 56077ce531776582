//! Core library for `latentx`: compile inductive-bias formulas over latent
//! variables into perturbation plans and prompts, drive decoder and multimodal
//! model backends, and select uncertainty-filtered textual explanations.
//!
//! The crate is organized around the stages of one explanation run:
//!
//! * [`formula`] — parse the formula DSL, extract symbols, classify the bias.
//! * [`prompt`] — translate a classified formula into prompt text via the
//!   symbol-to-word lookup grammar, with an optional LLM refinement path.
//! * [`perturb`] — turn a bias into a concrete latent perturbation plan and
//!   materialize it into latent sequences.
//! * [`decoder`] — decode latents to images (procedural synthetic, linear
//!   test decoder, remote HTTP service) and compose image grids.
//! * [`gateway`] — multimodal chat and embedding clients with mock,
//!   record/replay, and HTTP backends.
//! * [`scoring`] — certainty scores, explanation selection, and threshold
//!   calibration.
//! * [`metrics`] — BLEU@4 and ROUGE-L reference implementations.
//! * [`pipeline`] — run orchestration, manifests, and file formats backing
//!   the `latentx` CLI.

pub mod decoder;
pub mod formula;
pub mod gateway;
pub mod image;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod prompt;
pub mod scoring;
pub mod text;

/// The literal emitted when no explanation clears the certainty threshold.
pub const NO_CLEAR_EXPLANATION: &str = "No clear explanation";
