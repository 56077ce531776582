//! Procedural synthetic decoder with ground-truth factor semantics.
//!
//! Each latent dimension may carry one factor of variation; unassigned
//! dimensions are no-ops, so sweeping them yields byte-identical images.
//! Latents are read on [−3, 3] (clamped) and mapped affinely onto each
//! factor's range:
//!
//! * `PosX` / `PosY` — centroid offset, ±16 px on a 64×64 canvas.
//! * `Scale` — silhouette half-extent, 8..24 px.
//! * `Rotation` — 0°..90°.
//! * `Shape` — silhouette morph; the −3 / 0 / +3 anchors render an exact
//!   ellipse, triangle, and square, with implicit-surface blends between
//!   consecutive anchors so the silhouette mass grows strictly along the
//!   sweep.
//! * `Brightness` — fill intensity, 64..255 on black.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_dim, DecoderBackend, DecoderError};
use crate::image::Image;

pub const CANVAS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    PosX,
    PosY,
    Scale,
    Rotation,
    Shape,
    Brightness,
}

impl Factor {
    pub const ALL: [Factor; 6] = [
        Factor::PosX,
        Factor::PosY,
        Factor::Scale,
        Factor::Rotation,
        Factor::Shape,
        Factor::Brightness,
    ];

    pub fn parse(name: &str) -> Option<Factor> {
        match name {
            "pos_x" => Some(Factor::PosX),
            "pos_y" => Some(Factor::PosY),
            "scale" => Some(Factor::Scale),
            "rotation" => Some(Factor::Rotation),
            "shape" => Some(Factor::Shape),
            "brightness" => Some(Factor::Brightness),
            _ => None,
        }
    }
}

/// Rendering parameters after the latent-to-factor transfer.
struct Pose {
    pos_x: f64,
    pos_y: f64,
    scale: f64,
    rotation_rad: f64,
    shape: f64,
    brightness: u8,
}

#[derive(Debug, Clone)]
pub struct SyntheticDecoder {
    latent_dim: usize,
    factors: BTreeMap<usize, Factor>,
}

impl SyntheticDecoder {
    pub fn new(latent_dim: usize, factors: BTreeMap<usize, Factor>) -> Result<Self, DecoderError> {
        let mut seen = Vec::new();
        for (&dim, factor) in &factors {
            if dim >= latent_dim {
                return Err(DecoderError::BadConfig(format!(
                    "factor {factor:?} assigned to dimension {dim}, but latent_dim is {latent_dim}"
                )));
            }
            if seen.contains(factor) {
                return Err(DecoderError::BadConfig(format!(
                    "factor {factor:?} assigned to more than one dimension"
                )));
            }
            seen.push(*factor);
        }
        Ok(SyntheticDecoder {
            latent_dim,
            factors,
        })
    }

    /// Factors assigned in enum order to the first dimensions, remaining
    /// dimensions unassigned.
    pub fn with_default_factors(latent_dim: usize) -> Self {
        let factors = Factor::ALL
            .iter()
            .take(latent_dim)
            .enumerate()
            .map(|(i, f)| (i, *f))
            .collect();
        SyntheticDecoder::new(latent_dim, factors).expect("default assignment is valid")
    }

    pub fn factors(&self) -> &BTreeMap<usize, Factor> {
        &self.factors
    }

    fn pose(&self, z: &[f64]) -> Pose {
        let mut pose = Pose {
            pos_x: 0.0,
            pos_y: 0.0,
            scale: 16.0,
            rotation_rad: 0.0,
            shape: 0.0,
            brightness: 255,
        };
        for (&dim, factor) in &self.factors {
            let v = z[dim].clamp(-3.0, 3.0);
            let unit = (v + 3.0) / 6.0; // 0..1
            match factor {
                Factor::PosX => pose.pos_x = v / 3.0 * 16.0,
                Factor::PosY => pose.pos_y = v / 3.0 * 16.0,
                Factor::Scale => pose.scale = 8.0 + unit * 16.0,
                Factor::Rotation => pose.rotation_rad = unit * std::f64::consts::FRAC_PI_2,
                Factor::Shape => pose.shape = v,
                Factor::Brightness => pose.brightness = (64.0 + unit * 191.0).round() as u8,
            }
        }
        pose
    }
}

/// Ellipse with semi-axes (s, s/2); negative inside.
fn implicit_ellipse(x: f64, y: f64, s: f64) -> f64 {
    let a = s;
    let b = s / 2.0;
    ((x / a) * (x / a) + (y / b) * (y / b)).sqrt() - 1.0
}

/// Isoceles triangle, apex up, centroid at the origin: apex (0, −4s/3),
/// base corners (±s, 2s/3). Negative inside.
fn implicit_triangle(x: f64, y: f64, s: f64) -> f64 {
    let sqrt5 = 5.0f64.sqrt();
    let bottom = (y - 2.0 * s / 3.0) / s;
    let left = (-2.0 * x - y - 4.0 * s / 3.0) / (sqrt5 * s);
    let right = (2.0 * x - y - 4.0 * s / 3.0) / (sqrt5 * s);
    bottom.max(left).max(right)
}

/// Axis-aligned square with half-extent s; negative inside.
fn implicit_square(x: f64, y: f64, s: f64) -> f64 {
    x.abs().max(y.abs()) / s - 1.0
}

/// Silhouette morph over the shape coordinate: ellipse at −3, triangle at
/// 0, square at +3, blending the implicit functions linearly in between.
/// The anchor areas grow (ellipse < triangle < square for these
/// proportions), so silhouette mass grows strictly along the sweep.
fn implicit_shape(x: f64, y: f64, s: f64, shape: f64) -> f64 {
    let shape = shape.clamp(-3.0, 3.0);
    if shape <= 0.0 {
        let t = (shape + 3.0) / 3.0;
        (1.0 - t) * implicit_ellipse(x, y, s) + t * implicit_triangle(x, y, s)
    } else {
        let t = shape / 3.0;
        (1.0 - t) * implicit_triangle(x, y, s) + t * implicit_square(x, y, s)
    }
}

impl DecoderBackend for SyntheticDecoder {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn name(&self) -> String {
        "synthetic".to_string()
    }

    fn decode(&self, z: &[f64]) -> Result<Image, DecoderError> {
        check_dim(z, self.latent_dim)?;
        let pose = self.pose(z);
        let (sin, cos) = pose.rotation_rad.sin_cos();
        let center = CANVAS as f64 / 2.0;

        let mut pixels = vec![0u8; (CANVAS * CANVAS) as usize];
        for row in 0..CANVAS {
            for col in 0..CANVAS {
                let px = col as f64 + 0.5 - center - pose.pos_x;
                let py = row as f64 + 0.5 - center - pose.pos_y;
                // Sample the unrotated silhouette at the derotated point;
                // the sense keeps the measured principal angle inside one
                // 180° branch over the whole rotation range.
                let rx = px * cos - py * sin;
                let ry = px * sin + py * cos;
                if implicit_shape(rx, ry, pose.scale, pose.shape) <= 0.0 {
                    pixels[(row * CANVAS + col) as usize] = pose.brightness;
                }
            }
        }
        Ok(Image::new(CANVAS, CANVAS, 1, pixels)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::measure;

    fn decoder() -> SyntheticDecoder {
        SyntheticDecoder::with_default_factors(6)
    }

    const SWEEP: [f64; 5] = [-3.0, -1.5, 0.0, 1.5, 3.0];

    fn sweep_images(decoder: &SyntheticDecoder, dim: usize) -> Vec<Image> {
        SWEEP
            .iter()
            .map(|&v| {
                let mut z = vec![0.0; decoder.latent_dim()];
                z[dim] = v;
                decoder.decode(&z).unwrap()
            })
            .collect()
    }

    fn strictly_increasing(values: &[f64]) -> bool {
        values.windows(2).all(|w| w[0] < w[1])
    }

    #[test]
    fn pos_x_moves_centroid_right() {
        let images = sweep_images(&decoder(), 0);
        let xs: Vec<f64> = images.iter().map(|im| measure::centroid(im).0).collect();
        assert!(strictly_increasing(&xs), "centroid x {xs:?}");
    }

    #[test]
    fn pos_y_moves_centroid_down() {
        let images = sweep_images(&decoder(), 1);
        let ys: Vec<f64> = images.iter().map(|im| measure::centroid(im).1).collect();
        assert!(strictly_increasing(&ys), "centroid y {ys:?}");
    }

    #[test]
    fn scale_grows_mass() {
        let images = sweep_images(&decoder(), 2);
        let masses: Vec<f64> = images.iter().map(|im| measure::mass(im) as f64).collect();
        assert!(strictly_increasing(&masses), "mass {masses:?}");
    }

    #[test]
    fn rotation_turns_principal_axis_monotonically() {
        let images = sweep_images(&decoder(), 3);
        let angles: Vec<f64> = images
            .iter()
            .map(measure::principal_angle_degrees)
            .collect();
        let increasing = strictly_increasing(&angles);
        let decreasing = angles.windows(2).all(|w| w[0] > w[1]);
        assert!(
            increasing || decreasing,
            "principal angle not monotone: {angles:?}"
        );
        // The 90° turn is spread over the sweep; steps should be sizeable.
        let span = (angles[4] - angles[0]).abs();
        assert!(span > 60.0, "angle span {span}");
    }

    #[test]
    fn shape_morph_grows_mass_strictly() {
        let images = sweep_images(&decoder(), 4);
        let masses: Vec<f64> = images.iter().map(|im| measure::mass(im) as f64).collect();
        assert!(strictly_increasing(&masses), "mass {masses:?}");
    }

    #[test]
    fn brightness_raises_mean_intensity() {
        let images = sweep_images(&decoder(), 5);
        let means: Vec<f64> = images.iter().map(measure::mean_intensity).collect();
        assert!(strictly_increasing(&means), "mean intensity {means:?}");
    }

    #[test]
    fn unassigned_dimension_is_a_no_op() {
        let decoder = SyntheticDecoder::with_default_factors(6);
        // Re-create with dimension 5 unassigned.
        let mut factors = decoder.factors().clone();
        factors.remove(&5);
        let decoder = SyntheticDecoder::new(6, factors).unwrap();
        let images = sweep_images(&decoder, 5);
        for other in &images[1..] {
            assert_eq!(images[0], *other, "unassigned sweep must not change pixels");
        }
    }

    #[test]
    fn decode_is_deterministic() {
        let decoder = decoder();
        let z = vec![0.7, -1.2, 2.0, 0.3, -0.4, 1.1];
        assert_eq!(decoder.decode(&z).unwrap(), decoder.decode(&z).unwrap());
    }

    #[test]
    fn anchors_render_expected_mass_ordering() {
        // ellipse (−3) < triangle (0) < square (+3) silhouette areas.
        let images = sweep_images(&decoder(), 4);
        let ellipse = measure::mass(&images[0]) as f64;
        let triangle = measure::mass(&images[2]) as f64;
        let square = measure::mass(&images[4]) as f64;
        assert!(ellipse < triangle && triangle < square);
        // Sanity against the closed-form areas at s = 16: πs²/2 ≈ 402,
        // 2s² = 512, 4s² = 1024 (rasterization tolerance).
        assert!((ellipse - 402.0).abs() < 40.0, "ellipse {ellipse}");
        assert!((triangle - 512.0).abs() < 40.0, "triangle {triangle}");
        assert!((square - 1024.0).abs() < 40.0, "square {square}");
    }

    #[test]
    fn duplicate_factor_rejected() {
        let mut factors = BTreeMap::new();
        factors.insert(0, Factor::PosX);
        factors.insert(1, Factor::PosX);
        assert!(matches!(
            SyntheticDecoder::new(4, factors),
            Err(DecoderError::BadConfig(_))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let decoder = decoder();
        assert!(matches!(
            decoder.decode(&[0.0; 3]),
            Err(DecoderError::DimensionMismatch { got: 3, expected: 6 })
        ));
    }

    #[test]
    fn perturb_is_unsupported() {
        let decoder = decoder();
        assert!(!decoder.supports_perturb());
        assert!(matches!(
            decoder.perturb(&[0.0; 6], &[0.0; 6], 1.0),
            Err(DecoderError::UnsupportedOperation("perturb"))
        ));
    }
}
