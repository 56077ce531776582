//! Decoder backends: map latent vectors to images behind one interface.
//!
//! Three implementations ship: a procedural synthetic decoder with
//! ground-truth factor semantics, a linear test decoder, and a client for
//! a remote decoder service speaking the HTTP+JSON wire protocol.

mod linear;
mod remote;
mod synthetic;

pub mod measure;

pub use linear::LinearDecoder;
pub use remote::{BackendInfo, RemoteDecoder};
pub use synthetic::{Factor, SyntheticDecoder};

use thiserror::Error;

use crate::image::{Image, ImageError};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("latent has length {got}, backend expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("backend does not support {0}")]
    UnsupportedOperation(&'static str),
    #[error("remote decode failed: {0}")]
    Remote(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Perturb(#[from] crate::perturb::PerturbError),
    #[error("bad configuration: {0}")]
    BadConfig(String),
}

/// A latent-to-image decoder. Decoding is deterministic: the same latent
/// yields a byte-identical image.
pub trait DecoderBackend: Send + Sync {
    fn latent_dim(&self) -> usize;

    /// Stable identifier recorded in manifests.
    fn name(&self) -> String;

    fn decode(&self, z: &[f64]) -> Result<Image, DecoderError>;

    /// Whether [`DecoderBackend::perturb`] is available.
    fn supports_perturb(&self) -> bool {
        false
    }

    /// Semantic-direction perturbation in the backend's feature space.
    fn perturb(&self, _z: &[f64], _direction: &[f64], _gamma: f64) -> Result<Vec<f64>, DecoderError> {
        Err(DecoderError::UnsupportedOperation("perturb"))
    }
}

pub(crate) fn check_dim(z: &[f64], expected: usize) -> Result<(), DecoderError> {
    if z.len() != expected {
        return Err(DecoderError::DimensionMismatch {
            got: z.len(),
            expected,
        });
    }
    Ok(())
}
