//! Linear test decoder: decodes `A·z` as a grayscale bar chart and serves
//! as the reference backend for the direction-perturbation formula.

use super::{check_dim, DecoderBackend, DecoderError};
use crate::image::Image;
use crate::perturb;

const CHART: u32 = 64;
const VALUE_RANGE: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct LinearDecoder {
    /// Row-major feature matrix; `matrix.len()` is the feature dimension.
    matrix: Vec<Vec<f64>>,
    latent_dim: usize,
}

impl LinearDecoder {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self, DecoderError> {
        if matrix.is_empty() {
            return Err(DecoderError::BadConfig("empty matrix".to_string()));
        }
        let latent_dim = matrix[0].len();
        if latent_dim == 0 || matrix.iter().any(|row| row.len() != latent_dim) {
            return Err(DecoderError::BadConfig(
                "matrix rows must share a positive length".to_string(),
            ));
        }
        Ok(LinearDecoder { matrix, latent_dim })
    }

    /// `scale · I` of the given dimension.
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let matrix = (0..dim)
            .map(|i| {
                let mut row = vec![0.0; dim];
                row[i] = scale;
                row
            })
            .collect();
        LinearDecoder::new(matrix).expect("identity matrix is valid")
    }

    pub fn features(&self, z: &[f64]) -> Result<Vec<f64>, DecoderError> {
        check_dim(z, self.latent_dim)?;
        Ok(self
            .matrix
            .iter()
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect())
    }
}

impl DecoderBackend for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn name(&self) -> String {
        "linear".to_string()
    }

    fn decode(&self, z: &[f64]) -> Result<Image, DecoderError> {
        let features = self.features(z)?;
        let n = features.len() as u32;
        let bar_width = (CHART / n).max(1);
        let mid = CHART / 2;

        let mut image = Image::filled(CHART, CHART, 1, 0)?;
        for (k, &value) in features.iter().enumerate() {
            let clamped = value.clamp(-VALUE_RANGE, VALUE_RANGE);
            let extent = ((clamped.abs() / VALUE_RANGE) * (mid - 1) as f64).round() as u32;
            let x0 = k as u32 * bar_width;
            let x1 = ((k as u32 + 1) * bar_width).min(CHART);
            let (y0, y1) = if clamped >= 0.0 {
                (mid - extent, mid)
            } else {
                (mid, mid + extent)
            };
            for y in y0..=y1.min(CHART - 1) {
                for x in x0..x1 {
                    image.put(x, y, &[255]);
                }
            }
        }
        Ok(image)
    }

    fn supports_perturb(&self) -> bool {
        true
    }

    /// Routes through the shared direction formula with `A·z` as the
    /// feature map, so a square matrix is required.
    fn perturb(&self, z: &[f64], direction: &[f64], gamma: f64) -> Result<Vec<f64>, DecoderError> {
        check_dim(z, self.latent_dim)?;
        let shifted = perturb::apply_direction(z, direction, gamma, |x| {
            self.features(x)
                .map_err(|e| perturb::PerturbError::DimensionMismatch(e.to_string()))
        })?;
        Ok(shifted)
    }
}
