//! Conditional transformation models for survival analysis.
//!
//! A model writes the conditional event-time distribution as
//! `F(t | x) = F_Z(h(t | x))`, with a fixed target distribution `F_Z` and a
//! transformation `h` that is strictly increasing in `t`. Covariates enter
//! through a small fully connected feature extractor. The crate covers
//! censoring-aware maximum likelihood, evaluation with proper scores, deep
//! ensembles, and inversion sampling of semi-synthetic data.

pub mod basis;
pub mod data;
pub mod error;
pub mod feature;
pub mod fit;
pub mod metrics;
pub mod model;
pub mod sample;
pub mod target;
pub mod transform;

pub use basis::{fit_scaler, BernsteinBasis, LogTimeScaler};
pub use data::{validate_dataset, CensoringKind, Observation, SurvivalDataset, ValidationMode};
pub use error::{Error, Result};
pub use feature::{Activation, ExtractorParams, ExtractorSpec};
pub use fit::{
    ensemble_cdf, fit, fit_ensemble, nll_batch, nll_observation, EnsembleModel, TrainConfig,
    TrainingLog,
};
pub use metrics::{c_index, crps, evaluate, log_score, EvaluationReport};
pub use model::{
    deserialize_model, serialize_model, FittedModel, ModelSpec, ModelState, Parameterization,
};
pub use sample::{generate_semisynthetic, sample_time, SynthConfig};
pub use target::TargetFamily;
pub use transform::{ConditionalDistribution, ConditionalModel, HeadParams, SurvivalPrediction};
