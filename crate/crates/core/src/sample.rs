//! Inversion sampling and semi-synthetic data generation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Observation, SurvivalDataset};
use crate::error::{Error, Result};
use crate::transform::{ConditionalModel, SurvivalPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Draws per subject.
    pub replication: usize,
    /// Replace draws above the largest observed time by a right-censored
    /// observation at that time.
    pub censor_at_max: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            replication: 10,
            censor_at_max: true,
            seed: 0,
        }
    }
}

/// Quantile of `distribution` at `u`.
pub fn sample_time<D: SurvivalPrediction + ?Sized>(distribution: &D, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::ProbabilityOutOfRange(u));
    }
    distribution.quantile(u)
}

/// Uniform in (0, 1) keyed by `(seed, subject, replicate)`: the generator is
/// seeded by `seed`, uses `subject` as its stream and `replicate` as the word
/// position, so any draw can be reproduced in isolation.
pub fn keyed_uniform(seed: u64, subject: usize, replicate: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64);
    rng.set_word_pos(2 * replicate as u128);
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Draws `replication` event times per subject from the model, keeping the
/// subject's covariates. Output is subject-major.
pub fn generate_semisynthetic<M: ConditionalModel>(
    model: &M,
    dataset: &SurvivalDataset,
    config: &SynthConfig,
) -> Result<SurvivalDataset> {
    if config.replication == 0 {
        return Err(Error::InvalidConfig(
            "replication must be at least 1".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.n_features() != model.input_dim() {
        return Err(Error::SchemaMismatch {
            expected: model.input_dim(),
            found: dataset.n_features(),
        });
    }
    let t_max = dataset.max_time();
    let per_subject = dataset
        .observations
        .par_iter()
        .enumerate()
        .map(|(i, obs)| {
            let dist = model.distribution(&obs.covariates)?;
            (0..config.replication)
                .map(|r| {
                    let t = sample_time(&dist, keyed_uniform(config.seed, i, r))?;
                    let x = obs.covariates.clone();
                    Ok(if config.censor_at_max && t > t_max {
                        Observation::right_censored(t_max, x)
                    } else {
                        Observation::exact(t, x)
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurvivalDataset::new(
        per_subject.into_iter().flatten().collect(),
        dataset.feature_names.clone(),
    ))
}
