//! RANSAC over minimal three-point rigid hypotheses.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{kabsch_align, residual_rmse, CorrespondenceSet};
use crate::geometry::RigidTransform;

/// Correspondences in a minimal rigid-motion sample.
pub const SAMPLE_SIZE: usize = 3;

/// Total draws allowed per configured iteration, counting degenerate samples.
const DRAW_CAP_FACTOR: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RansacError {
    #[error("need at least {required} correspondences, got {actual}")]
    TooFewCorrespondences { required: usize, actual: usize },
    #[error("no consensus: best model has {best} inliers, need {required}")]
    NoConsensus { best: usize, required: usize },
    #[error("invalid RANSAC parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// Maximum 3D residual of an inlier, meters.
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.03,
            confidence: 0.99,
            max_iterations: 500,
            min_inliers: 10,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), RansacError> {
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(RansacError::InvalidParams("inlier_threshold must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RansacError::InvalidParams("confidence must be in (0, 1)".into()));
        }
        if self.max_iterations < 1 {
            return Err(RansacError::InvalidParams("max_iterations must be >= 1".into()));
        }
        if self.min_inliers < SAMPLE_SIZE {
            return Err(RansacError::InvalidParams(format!(
                "min_inliers must be >= {SAMPLE_SIZE}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: RigidTransform,
    /// Ascending correspondence indices.
    pub inlier_indices: Vec<usize>,
    pub iterations_run: usize,
    /// Best minimal-sample model, before the consensus refit.
    pub sample_transform: RigidTransform,
}

/// Iterations needed to draw at least one all-inlier sample with the given
/// confidence, clamped to `[1, max_iterations]`.
pub fn required_iterations(
    confidence: f64,
    inlier_ratio: f64,
    sample_size: usize,
    max_iterations: usize,
) -> usize {
    let max_iterations = max_iterations.max(1);
    let p_good = inlier_ratio.clamp(0.0, 1.0).powi(sample_size as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return max_iterations;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - p_good).ln()).ceil();
    if !n.is_finite() || n >= max_iterations as f64 {
        max_iterations
    } else {
        (n as usize).max(1)
    }
}

fn inliers_of(t: &RigidTransform, c: &CorrespondenceSet, threshold: f64) -> Vec<usize> {
    c.iter()
        .enumerate()
        .filter(|(_, (p, q))| (t.apply(p) - *q).norm() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

struct Hypothesis {
    transform: RigidTransform,
    inliers: Vec<usize>,
    rmse: f64,
}

/// Robust rigid motion: best minimal-sample consensus, refit on its inliers.
pub fn ransac_rigid(c: &CorrespondenceSet, params: &RansacParams) -> Result<RansacResult, RansacError> {
    params.validate()?;
    let n = c.len();
    if n < params.min_inliers {
        return Err(RansacError::TooFewCorrespondences {
            required: params.min_inliers,
            actual: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut budget = params.max_iterations;
    let max_draws = DRAW_CAP_FACTOR * params.max_iterations;
    let mut iterations = 0;
    let mut draws = 0;
    let mut best: Option<Hypothesis> = None;

    while iterations < budget && draws < max_draws {
        draws += 1;
        let idx = sample(&mut rng, n, SAMPLE_SIZE).into_vec();
        let Ok(model) = kabsch_align(&c.select(&idx)) else {
            continue;
        };
        iterations += 1;

        let inliers = inliers_of(&model, c, params.inlier_threshold);
        let better = match &best {
            None => true,
            Some(b) if inliers.len() > b.inliers.len() => true,
            Some(b) if inliers.len() == b.inliers.len() && !inliers.is_empty() => {
                residual_rmse(&model, &c.select(&inliers)).unwrap_or(f64::INFINITY) < b.rmse
            }
            _ => false,
        };
        if better {
            let rmse = if inliers.is_empty() {
                f64::INFINITY
            } else {
                residual_rmse(&model, &c.select(&inliers)).unwrap_or(f64::INFINITY)
            };
            let ratio = inliers.len() as f64 / n as f64;
            budget = budget.min(required_iterations(
                params.confidence,
                ratio,
                SAMPLE_SIZE,
                params.max_iterations,
            ));
            best = Some(Hypothesis {
                transform: model,
                inliers,
                rmse,
            });
        }
    }

    let best_count = best.as_ref().map_or(0, |b| b.inliers.len());
    let best = match best {
        Some(b) if b.inliers.len() >= params.min_inliers => b,
        _ => {
            return Err(RansacError::NoConsensus {
                best: best_count,
                required: params.min_inliers,
            })
        }
    };

    // Refit on the consensus set and recompute it once. The refit is kept only
    // if it still reaches consensus and does not fit the new set worse than
    // the minimal-sample model.
    if let Ok(refit) = kabsch_align(&c.select(&best.inliers)) {
        let refit_inliers = inliers_of(&refit, c, params.inlier_threshold);
        if refit_inliers.len() >= params.min_inliers {
            let subset = c.select(&refit_inliers);
            let refit_rmse = residual_rmse(&refit, &subset).unwrap_or(f64::INFINITY);
            let model_rmse = residual_rmse(&best.transform, &subset).unwrap_or(f64::INFINITY);
            if refit_rmse <= model_rmse {
                return Ok(RansacResult {
                    transform: refit,
                    inlier_indices: refit_inliers,
                    iterations_run: iterations,
                    sample_transform: best.transform,
                });
            }
        }
    }
    Ok(RansacResult {
        transform: best.transform,
        inlier_indices: best.inliers,
        iterations_run: iterations,
        sample_transform: best.transform,
    })
}
