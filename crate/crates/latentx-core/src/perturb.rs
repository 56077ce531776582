//! Perturbation planning: turn a classified formula plus model kind into a
//! concrete layout of latent sweeps and direction shifts, arranged into the
//! multi-row image-sequence rows the bias prompts presume.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::BiasClass;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("target index {target} out of range for latent dimension {dim}")]
    TargetOutOfRange { target: usize, dim: usize },
    #[error("combination bias requires a group assignment map")]
    MissingGroupAssignment,
    #[error("conditional bias requires a property configuration")]
    MissingProperty,
    #[error("no admissible confound index exists for target {target}")]
    NoConfoundAvailable { target: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sweep grid invalid: {0}")]
    BadGrid(String),
}

/// Which γ grid a diffusion backend sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionProfile {
    Ddpm,
    Conditional,
}

/// The generative-model family being explained: per-coordinate VAE latents
/// or semantic latent directions of a diffusion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelKind {
    VaeLatent { latent_dim: usize },
    DiffusionDirection { latent_dim: usize, profile: DiffusionProfile },
}

impl ModelKind {
    pub fn latent_dim(&self) -> usize {
        match self {
            ModelKind::VaeLatent { latent_dim } => *latent_dim,
            ModelKind::DiffusionDirection { latent_dim, .. } => *latent_dim,
        }
    }

    /// The default sweep grid for this model family.
    pub fn default_grid(&self) -> SweepGrid {
        let values = match self {
            ModelKind::VaeLatent { .. } => vec![-3.0, -1.5, 0.0, 1.5, 3.0],
            ModelKind::DiffusionDirection {
                profile: DiffusionProfile::Ddpm,
                ..
            } => vec![0.1, 0.2, 0.3, 0.4, 0.5],
            ModelKind::DiffusionDirection {
                profile: DiffusionProfile::Conditional,
                ..
            } => vec![1.0, 2.0, 3.0, 4.0, 5.0],
        };
        SweepGrid::new(values).expect("built-in grids are valid")
    }

    /// The offset applied to a confound coordinate/direction: the sweep
    /// extreme, for maximal visual contrast.
    pub fn confound_offset(&self) -> f64 {
        let grid = self.default_grid();
        *grid.values.last().expect("grids are non-empty")
    }
}

/// Ordered offsets (VAE) or γ strengths (diffusion) swept along the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub values: Vec<f64>,
}

impl SweepGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, PerturbError> {
        if values.len() < 2 {
            return Err(PerturbError::BadGrid(format!(
                "need at least two sweep values, got {}",
                values.len()
            )));
        }
        if !values.windows(2).all(|w| w[0] < w[1]) {
            return Err(PerturbError::BadGrid(
                "sweep values must be strictly increasing".to_string(),
            ));
        }
        Ok(SweepGrid { values })
    }
}

/// A fixed shift applied to one non-target coordinate before the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confound {
    pub index: usize,
    pub offset: f64,
}

/// One image-sequence row: sweep the target coordinate over the grid from
/// a base latent, optionally after a confound shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub row_id: usize,
    pub base_latent: Vec<f64>,
    pub target_index: usize,
    pub confound: Option<Confound>,
    pub grid: SweepGrid,
}

/// Property conditioning for the conditional biases: the named property
/// rides on one latent coordinate, toggled between an on and an off value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub name: String,
    pub index: usize,
    pub on_value: f64,
    pub off_value: f64,
}

/// Planner inputs that come from run configuration rather than the formula.
#[derive(Debug, Clone, Default)]
pub struct PlanConfig {
    /// Latent index → group id; required for the combination biases.
    pub groups: Option<BTreeMap<usize, String>>,
    /// Required for the conditional biases.
    pub property: Option<PropertySpec>,
    /// Base latent; zero vector when absent.
    pub base_latent: Option<Vec<f64>>,
    /// Pick the confound index pseudo-randomly among admissible candidates
    /// instead of taking the lowest.
    pub random_confound: bool,
}

/// The per-bias layout of sequence rows for one target latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub bias: BiasClass,
    pub rows: Vec<SequenceRow>,
    pub target_index: usize,
    pub groups: Option<BTreeMap<usize, String>>,
    pub property: Option<PropertySpec>,
}

/// SplitMix64; just enough determinism to break confound ties by seed.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn pick_confound(
    candidates: Vec<usize>,
    target: usize,
    random: bool,
    seed: u64,
) -> Result<usize, PerturbError> {
    if candidates.is_empty() {
        return Err(PerturbError::NoConfoundAvailable { target });
    }
    if random {
        let mut state = seed;
        let pick = (splitmix64(&mut state) % candidates.len() as u64) as usize;
        Ok(candidates[pick])
    } else {
        Ok(candidates[0])
    }
}

/// Build the perturbation plan for one classified formula and one target
/// latent. Deterministic in all arguments: the same inputs produce an
/// identical plan.
pub fn plan(
    bias: BiasClass,
    kind: ModelKind,
    target_index: usize,
    seed: u64,
    config: &PlanConfig,
) -> Result<PerturbationPlan, PerturbError> {
    let dim = kind.latent_dim();
    if target_index >= dim {
        return Err(PerturbError::TargetOutOfRange {
            target: target_index,
            dim,
        });
    }
    let base = match &config.base_latent {
        Some(base) => {
            if base.len() != dim {
                return Err(PerturbError::DimensionMismatch(format!(
                    "base latent has length {}, expected {dim}",
                    base.len()
                )));
            }
            base.clone()
        }
        None => vec![0.0; dim],
    };
    let grid = kind.default_grid();
    let offset = kind.confound_offset();

    let row = |row_id: usize, confound: Option<Confound>| SequenceRow {
        row_id,
        base_latent: base.clone(),
        target_index,
        confound,
        grid: grid.clone(),
    };

    let rows = match bias {
        BiasClass::Disentanglement => {
            let candidates: Vec<usize> = (0..dim).filter(|&i| i != target_index).collect();
            let confound_index =
                pick_confound(candidates, target_index, config.random_confound, seed)?;
            vec![
                row(0, None),
                row(
                    1,
                    Some(Confound {
                        index: confound_index,
                        offset,
                    }),
                ),
            ]
        }
        BiasClass::CombinationInterGroup | BiasClass::CombinationIntraGroup => {
            let groups = config
                .groups
                .as_ref()
                .ok_or(PerturbError::MissingGroupAssignment)?;
            let target_group = groups
                .get(&target_index)
                .ok_or(PerturbError::MissingGroupAssignment)?;
            let want_same = bias == BiasClass::CombinationIntraGroup;
            let candidates: Vec<usize> = (0..dim)
                .filter(|&i| i != target_index)
                .filter(|i| match groups.get(i) {
                    Some(g) => (g == target_group) == want_same,
                    None => false,
                })
                .collect();
            let confound_index =
                pick_confound(candidates, target_index, config.random_confound, seed)?;
            vec![
                row(0, None),
                row(
                    1,
                    Some(Confound {
                        index: confound_index,
                        offset,
                    }),
                ),
            ]
        }
        BiasClass::ConditionalDependent | BiasClass::ConditionalIndependent => {
            let property = config
                .property
                .as_ref()
                .ok_or(PerturbError::MissingProperty)?;
            if property.index >= dim {
                return Err(PerturbError::TargetOutOfRange {
                    target: property.index,
                    dim,
                });
            }
            if property.index == target_index {
                return Err(PerturbError::NoConfoundAvailable {
                    target: target_index,
                });
            }
            // The rows differ only in the property conditioning value.
            vec![
                row(
                    0,
                    Some(Confound {
                        index: property.index,
                        offset: property.on_value,
                    }),
                ),
                row(
                    1,
                    Some(Confound {
                        index: property.index,
                        offset: property.off_value,
                    }),
                ),
            ]
        }
    };

    Ok(PerturbationPlan {
        bias,
        rows,
        target_index,
        groups: config.groups.clone(),
        property: config.property.clone(),
    })
}

/// Direction shift along a latent direction with strength γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionShift {
    pub direction: Vec<f64>,
    pub gamma: f64,
}

/// A plan row lowered to backend inputs: explicit latent vectors for VAE
/// backends, or (base, direction, γ) shifts for a perturb endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaterializedRow {
    Vae {
        row_id: usize,
        latents: Vec<Vec<f64>>,
    },
    Diffusion {
        row_id: usize,
        base: Vec<f64>,
        confound: Option<DirectionShift>,
        sweep: Vec<DirectionShift>,
    },
}

fn one_hot(dim: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[index] = 1.0;
    v
}

/// Lower a plan into per-row backend inputs. VAE rows set the target
/// coordinate to each grid value with every other coordinate fixed at the
/// (confound-shifted) base; diffusion rows emit (z, direction, γ) triples
/// for the backend's perturb endpoint.
pub fn materialize(plan: &PerturbationPlan, kind: ModelKind) -> Vec<MaterializedRow> {
    let dim = kind.latent_dim();
    plan.rows
        .iter()
        .map(|row| match kind {
            ModelKind::VaeLatent { .. } => {
                let mut base = row.base_latent.clone();
                if let Some(confound) = &row.confound {
                    base[confound.index] += confound.offset;
                }
                let latents = row
                    .grid
                    .values
                    .iter()
                    .map(|&value| {
                        let mut z = base.clone();
                        z[row.target_index] = value;
                        z
                    })
                    .collect();
                MaterializedRow::Vae {
                    row_id: row.row_id,
                    latents,
                }
            }
            ModelKind::DiffusionDirection { .. } => {
                let confound = row.confound.as_ref().map(|c| DirectionShift {
                    direction: one_hot(dim, c.index),
                    gamma: c.offset,
                });
                let sweep = row
                    .grid
                    .values
                    .iter()
                    .map(|&gamma| DirectionShift {
                        direction: one_hot(dim, row.target_index),
                        gamma,
                    })
                    .collect();
                MaterializedRow::Diffusion {
                    row_id: row.row_id,
                    base: row.base_latent.clone(),
                    confound,
                    sweep,
                }
            }
        })
        .collect()
}

/// The semantic-direction perturbation: `z + γ·(decode(z + d) − decode(z))`,
/// computed in the feature space of `decode_fn` and required to land back
/// in latent space (the feature difference must have the latent length).
pub fn apply_direction<F>(
    z: &[f64],
    direction: &[f64],
    gamma: f64,
    mut decode_fn: F,
) -> Result<Vec<f64>, PerturbError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, PerturbError>,
{
    if z.len() != direction.len() {
        return Err(PerturbError::DimensionMismatch(format!(
            "z has length {}, direction {}",
            z.len(),
            direction.len()
        )));
    }
    let shifted: Vec<f64> = z.iter().zip(direction).map(|(a, b)| a + b).collect();
    let feat_shifted = decode_fn(&shifted)?;
    let feat_base = decode_fn(z)?;
    if feat_shifted.len() != feat_base.len() || feat_base.len() != z.len() {
        return Err(PerturbError::DimensionMismatch(format!(
            "feature difference has length {}, expected {}",
            feat_base.len(),
            z.len()
        )));
    }
    Ok(z.iter()
        .zip(feat_shifted.iter().zip(&feat_base))
        .map(|(zi, (fs, fb))| zi + gamma * (fs - fb))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vae(dim: usize) -> ModelKind {
        ModelKind::VaeLatent { latent_dim: dim }
    }

    #[test]
    fn vae_grid_matches_spec_values() {
        let grid = vae(4).default_grid();
        assert_eq!(grid.values, vec![-3.0, -1.5, 0.0, 1.5, 3.0]);
    }

    #[test]
    fn diffusion_grids_per_profile() {
        let ddpm = ModelKind::DiffusionDirection {
            latent_dim: 3,
            profile: DiffusionProfile::Ddpm,
        };
        assert_eq!(ddpm.default_grid().values, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let cond = ModelKind::DiffusionDirection {
            latent_dim: 3,
            profile: DiffusionProfile::Conditional,
        };
        assert_eq!(cond.default_grid().values, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn disentanglement_plan_layout() {
        let plan = plan(
            BiasClass::Disentanglement,
            vae(6),
            0,
            0,
            &PlanConfig::default(),
        )
        .unwrap();
        assert_eq!(plan.rows.len(), 2);
        assert!(plan.rows[0].confound.is_none());
        let confound = plan.rows[1].confound.unwrap();
        assert_ne!(confound.index, 0);
        assert_eq!(confound.index, 1, "lowest admissible index");
        assert_eq!(confound.offset, 3.0);
    }

    #[test]
    fn single_latent_has_no_confound() {
        let err = plan(
            BiasClass::Disentanglement,
            vae(1),
            0,
            0,
            &PlanConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PerturbError::NoConfoundAvailable { .. }));
    }

    #[test]
    fn combination_confound_respects_groups() {
        let mut groups = BTreeMap::new();
        groups.insert(0, "G".to_string());
        groups.insert(1, "G".to_string());
        groups.insert(2, "G'".to_string());
        let config = PlanConfig {
            groups: Some(groups),
            ..Default::default()
        };
        let inter = plan(BiasClass::CombinationInterGroup, vae(3), 0, 0, &config).unwrap();
        assert_eq!(inter.rows[1].confound.unwrap().index, 2);
        let intra = plan(BiasClass::CombinationIntraGroup, vae(3), 0, 0, &config).unwrap();
        assert_eq!(intra.rows[1].confound.unwrap().index, 1);
    }

    #[test]
    fn combination_without_groups_rejected() {
        let err = plan(
            BiasClass::CombinationInterGroup,
            vae(3),
            0,
            0,
            &PlanConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PerturbError::MissingGroupAssignment));
    }

    #[test]
    fn conditional_rows_differ_in_property_value() {
        let config = PlanConfig {
            property: Some(PropertySpec {
                name: "young appearance".into(),
                index: 3,
                on_value: 3.0,
                off_value: -3.0,
            }),
            ..Default::default()
        };
        let plan = plan(BiasClass::ConditionalDependent, vae(4), 0, 0, &config).unwrap();
        assert_eq!(plan.rows.len(), 2);
        assert_eq!(plan.rows[0].target_index, plan.rows[1].target_index);
        let (a, b) = (plan.rows[0].confound.unwrap(), plan.rows[1].confound.unwrap());
        assert_eq!(a.index, 3);
        assert_eq!(b.index, 3);
        assert_eq!(a.offset, 3.0);
        assert_eq!(b.offset, -3.0);
    }

    #[test]
    fn conditional_without_property_rejected() {
        let err = plan(
            BiasClass::ConditionalIndependent,
            vae(4),
            0,
            0,
            &PlanConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PerturbError::MissingProperty));
    }

    #[test]
    fn plan_is_deterministic() {
        let config = PlanConfig::default();
        let a = plan(BiasClass::Disentanglement, vae(6), 2, 17, &config).unwrap();
        let b = plan(BiasClass::Disentanglement, vae(6), 2, 17, &config).unwrap();
        assert_eq!(a, b);
        let bytes_a = serde_json::to_vec(&a).unwrap();
        let bytes_b = serde_json::to_vec(&b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn random_confound_mode_is_seed_deterministic() {
        let config = PlanConfig {
            random_confound: true,
            ..Default::default()
        };
        let a = plan(BiasClass::Disentanglement, vae(8), 0, 42, &config).unwrap();
        let b = plan(BiasClass::Disentanglement, vae(8), 0, 42, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn materialize_vae_varies_one_coordinate() {
        let plan = plan(
            BiasClass::Disentanglement,
            vae(3),
            1,
            0,
            &PlanConfig::default(),
        )
        .unwrap();
        let rows = materialize(&plan, vae(3));
        let MaterializedRow::Vae { latents, .. } = &rows[0] else {
            panic!("expected vae row");
        };
        assert_eq!(latents.len(), 5);
        for (latent, expected) in latents.iter().zip([-3.0, -1.5, 0.0, 1.5, 3.0]) {
            assert_eq!(latent[1], expected);
            assert_eq!(latent[0], 0.0);
            assert_eq!(latent[2], 0.0);
        }
    }

    #[test]
    fn materialize_vae_confound_holds_constant() {
        let plan = plan(
            BiasClass::Disentanglement,
            vae(3),
            1,
            0,
            &PlanConfig::default(),
        )
        .unwrap();
        let rows = materialize(&plan, vae(3));
        let MaterializedRow::Vae { latents, .. } = &rows[1] else {
            panic!("expected vae row");
        };
        // Confound picked the lowest non-target index 0, shifted by +3.
        for latent in latents {
            assert_eq!(latent[0], 3.0);
        }
    }

    #[test]
    fn materialize_diffusion_emits_shift_triples() {
        let kind = ModelKind::DiffusionDirection {
            latent_dim: 4,
            profile: DiffusionProfile::Ddpm,
        };
        let plan = plan(BiasClass::Disentanglement, kind, 2, 0, &PlanConfig::default()).unwrap();
        let rows = materialize(&plan, kind);
        let MaterializedRow::Diffusion { base, sweep, confound, .. } = &rows[1] else {
            panic!("expected diffusion row");
        };
        assert_eq!(base, &vec![0.0; 4]);
        assert_eq!(sweep.len(), 5);
        assert_eq!(sweep[0].gamma, 0.1);
        assert_eq!(sweep[0].direction, vec![0.0, 0.0, 1.0, 0.0]);
        let confound = confound.as_ref().unwrap();
        assert_eq!(confound.gamma, 0.5, "max-gamma confound shift");
        assert_eq!(confound.direction, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn apply_direction_zero_gamma_is_identity() {
        let z = vec![0.5, -1.0, 2.0];
        let out = apply_direction(&z, &[1.0, 0.0, 0.0], 0.0, |x| Ok(x.to_vec())).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn apply_direction_identity_decoder_adds_direction() {
        let z = vec![1.0, 2.0];
        let d = vec![0.25, -0.5];
        let out = apply_direction(&z, &d, 1.0, |x| Ok(x.to_vec())).unwrap();
        assert_eq!(out, vec![1.25, 1.5]);
    }

    #[test]
    fn apply_direction_matches_linear_closed_form() {
        // decode(x) = 2·I·x, z = 0, d = e1, γ = 0.5 ⇒ z̃ = e1.
        let z = vec![0.0, 0.0, 0.0];
        let d = vec![1.0, 0.0, 0.0];
        let decode = |x: &[f64]| Ok(x.iter().map(|v| 2.0 * v).collect());
        let out = apply_direction(&z, &d, 0.5, decode).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn apply_direction_dimension_mismatch() {
        let err = apply_direction(&[0.0, 0.0], &[1.0], 1.0, |x| Ok(x.to_vec())).unwrap_err();
        assert!(matches!(err, PerturbError::DimensionMismatch(_)));
    }

    #[test]
    fn grid_invariants_enforced() {
        assert!(SweepGrid::new(vec![1.0]).is_err());
        assert!(SweepGrid::new(vec![1.0, 1.0]).is_err());
        assert!(SweepGrid::new(vec![2.0, 1.0]).is_err());
        assert!(SweepGrid::new(vec![1.0, 2.0]).is_ok());
    }
}
