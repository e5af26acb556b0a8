//! Maximum-likelihood fitting and deep ensembles.

pub mod ensemble;
pub mod likelihood;
pub mod sgd;

pub use ensemble::{
    bootstrap_indices, deserialize_ensemble, ensemble_cdf, fit_ensemble, fit_members, member_seed,
    select_top, serialize_ensemble, EnsembleDistribution, EnsembleModel, MemberFit,
};
pub use likelihood::{nll_batch, nll_observation, INTERVAL_EPS};
pub use sgd::{fit, fit_split, fit_with_log, split_indices, EpochRecord, TrainConfig, TrainingLog};
