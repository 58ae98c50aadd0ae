//! Weak and strong input perturbations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::scene::SyntheticScene;
use crate::error::{LabError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub mode: AugmentMode,
    pub jitter_sigma: f64,
    /// Per-coordinate zeroing probability (strong only).
    pub dropout_prob: f64,
    /// Per-point multiplicative scale interval (strong only).
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl AugmentSpec {
    pub fn weak(jitter_sigma: f64, seed: u64) -> Self {
        AugmentSpec {
            mode: AugmentMode::Weak,
            jitter_sigma,
            dropout_prob: 0.0,
            scale_range: (1.0, 1.0),
            seed,
        }
    }

    pub fn strong(jitter_sigma: f64, dropout_prob: f64, scale_range: (f64, f64), seed: u64) -> Self {
        AugmentSpec {
            mode: AugmentMode::Strong,
            jitter_sigma,
            dropout_prob,
            scale_range,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        AugmentSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(LabError::invalid("jitter sigma must be >= 0"));
        }
        if self.mode == AugmentMode::Strong {
            if !(0.0..=1.0).contains(&self.dropout_prob) {
                return Err(LabError::invalid("dropout probability must be in [0, 1]"));
            }
            let (lo, hi) = self.scale_range;
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(LabError::invalid("scale range must be a positive interval"));
            }
        }
        Ok(())
    }
}

/// Perturbed copy of `inputs`: jitter, then (strong) per-point scaling and
/// coordinate dropout.
pub(crate) fn augment_inputs(inputs: &Matrix, spec: &AugmentSpec) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = inputs.clone();
    let (lo, hi) = spec.scale_range;
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        if spec.jitter_sigma > 0.0 {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += spec.jitter_sigma * z;
            }
        }
        if spec.mode == AugmentMode::Strong {
            let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            for v in row.iter_mut() {
                *v *= scale;
                if spec.dropout_prob > 0.0 && rng.random::<f64>() < spec.dropout_prob {
                    *v = 0.0;
                }
            }
        }
    }
    out
}

/// Augmented copy of the scene; labels and mask are unchanged.
pub fn augment(scene: &SyntheticScene, spec: &AugmentSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    Ok(SyntheticScene {
        inputs: augment_inputs(&scene.inputs, spec),
        ..scene.clone()
    })
}
