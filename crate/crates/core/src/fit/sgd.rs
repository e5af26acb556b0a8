//! Minibatch SGD with per-group learning rates and early stopping.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{fit_scaler, LogTimeScaler};
use crate::data::{validate_dataset, SurvivalDataset, ValidationMode};
use crate::error::{Error, Result};
use crate::fit::likelihood::accumulate;
use crate::metrics::stable_mean;
use crate::model::{FittedModel, ModelSpec, ModelState, Parameterization};

/// Optimizer settings that are not part of the model specification. Epochs,
/// learning rates, patience and the seed live on [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Fraction of subjects held out for early stopping.
    pub validation_fraction: f64,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
    /// Global gradient norm above which minibatch gradients are rescaled.
    pub clip_norm: f64,
    /// Relative widening of the log-time scaler beyond the observed range.
    pub scaler_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            validation_fraction: 0.2,
            momentum: 0.0,
            clip_norm: 10.0,
            scaler_margin: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must lie in (0, 1) (got {})",
                self.validation_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1) (got {})",
                self.momentum
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_norm must be positive (got {})",
                self.clip_norm
            )));
        }
        if !(self.scaler_margin.is_finite() && self.scaler_margin >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "scaler_margin must be nonnegative (got {})",
                self.scaler_margin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the initial state, before any update.
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    /// Mean pre-clipping gradient norm over the epoch's minibatches.
    pub grad_norm: f64,
    /// Number of minibatches whose gradient was clipped.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    /// Clamped interval contributions seen during training passes.
    pub degenerate_intervals: usize,
}

/// Deterministic train/validation split of `0..n`. At least one subject stays
/// in each part when `n >= 2`; with a single subject it serves as both.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if n < 2 {
        return (idx.clone(), idx);
    }
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn check_compatible(dataset: &SurvivalDataset, spec: &ModelSpec) -> Result<()> {
    if spec.parameterization.uses_extractor() && dataset.n_features() != spec.extractor.input_dim {
        return Err(Error::SchemaMismatch {
            expected: spec.extractor.input_dim,
            found: dataset.n_features(),
        });
    }
    Ok(())
}

/// Fits a model with a seeded validation split. See [`fit_with_log`].
pub fn fit(
    dataset: &SurvivalDataset,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<FittedModel> {
    fit_with_log(dataset, spec, config).map(|(model, _)| model)
}

/// Fits the scaler on the full dataset, splits it by `spec.seed` and trains on
/// the training part.
pub fn fit_with_log(
    dataset: &SurvivalDataset,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<(FittedModel, TrainingLog)> {
    let dataset = validate_dataset(dataset.clone(), ValidationMode::Fitting)?;
    config.validate()?;
    let scaler = fit_scaler(&dataset, config.scaler_margin)?;
    let (train, val) = split_indices(dataset.len(), config.validation_fraction, spec.seed);
    fit_split(
        &dataset.subset(&train),
        &dataset.subset(&val),
        spec,
        config,
        scaler,
    )
}

/// Per-parameter learning rates in flat layout. The flexible parameterization
/// has no head parameters; its final extractor layer produces the Bernstein
/// coefficients and uses the head rate.
fn learning_rates(spec: &ModelSpec, state: &ModelState) -> Vec<f64> {
    let mut lrs = vec![spec.lr_head; spec.n_head_params()];
    let mut extractor = vec![spec.lr_extractor; spec.n_extractor_params()];
    if spec.parameterization == Parameterization::BernsteinFlexible {
        if let Some(last) = state.extractor.layers.last() {
            let n_last = last.weights.len() + last.bias.len();
            let start = extractor.len() - n_last;
            extractor[start..].fill(spec.lr_head);
        }
    }
    lrs.extend(extractor);
    lrs
}

fn mean_nll(state: &ModelState, data: &SurvivalDataset) -> Result<(f64, usize)> {
    let mut values = Vec::with_capacity(data.len());
    let mut degenerate = 0;
    for obs in &data.observations {
        let acc = accumulate(state, std::iter::once(obs), None)?;
        values.push(acc.sum);
        degenerate += acc.degenerate;
    }
    Ok((stable_mean(&values), degenerate))
}

/// Trains on `train`, early-stopping on `validation`, with a fixed scaler.
/// The returned model carries the mean NLL of both parts at the chosen
/// parameters.
pub fn fit_split(
    train: &SurvivalDataset,
    validation: &SurvivalDataset,
    spec: &ModelSpec,
    config: &TrainConfig,
    scaler: LogTimeScaler,
) -> Result<(FittedModel, TrainingLog)> {
    spec.validate()?;
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_compatible(train, spec)?;
    check_compatible(validation, spec)?;

    let mut state = ModelState::initial(spec, scaler, spec.seed)?;
    let mut theta = state.to_flat();
    let lrs = learning_rates(spec, &state);
    let mut velocity = vec![0.0; theta.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut log = TrainingLog::default();
    let (train_nll, d0) = mean_nll(&state, train)?;
    let (val_nll, _) = mean_nll(&state, validation)?;
    log.degenerate_intervals += d0;
    if !train_nll.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    log.epochs.push(EpochRecord {
        epoch: 0,
        train_nll,
        val_nll,
        grad_norm: 0.0,
        clipped: 0,
    });
    let mut best = (val_nll, train_nll, theta.clone());
    let mut since_best = 0;

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut norm_sum = 0.0;
        let mut n_batches = 0;
        let mut clipped = 0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; theta.len()];
            let acc = accumulate(
                &state,
                batch.iter().map(|&i| &train.observations[i]),
                Some(&mut grad),
            )?;
            if !acc.sum.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            norm_sum += norm;
            n_batches += 1;
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
                clipped += 1;
            }
            for ((p, v), (g, lr)) in theta
                .iter_mut()
                .zip(velocity.iter_mut())
                .zip(grad.iter().zip(&lrs))
            {
                *v = config.momentum * *v + g;
                *p -= lr * *v;
            }
            state = ModelState::from_flat(spec, scaler, &theta)?;
        }

        let (train_nll, d) = mean_nll(&state, train)?;
        let (val_nll, _) = mean_nll(&state, validation)?;
        log.degenerate_intervals += d;
        if !train_nll.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let grad_norm = norm_sum / n_batches as f64;
        info!("epoch {epoch}, train_nll {train_nll}, val_nll {val_nll}, grad_norm {grad_norm}, clipped {clipped}");
        if d > 0 {
            warn!("epoch {epoch}: {d} interval contributions clamped");
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_nll,
            val_nll,
            grad_norm,
            clipped,
        });
        if val_nll < best.0 {
            best = (val_nll, train_nll, theta.clone());
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= spec.early_stopping_patience {
                break;
            }
        }
    }

    let (val_nll, train_nll, theta) = best;
    let state = ModelState::from_flat(spec, scaler, &theta)?;
    Ok((FittedModel::from_state(&state, train_nll, val_nll), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::feature::ExtractorSpec;
    use crate::target::TargetFamily;
    use rand::Rng;

    fn exponential(rng: &mut impl Rng, rate: f64) -> f64 {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        -u.ln() / rate
    }

    fn exponential_data(n: usize, beta: f64, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = (0..n)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let t = exponential(&mut rng, (beta * x).exp());
                let c = exponential(&mut rng, 0.3);
                if t <= c {
                    Observation::exact(t, vec![x])
                } else {
                    Observation::right_censored(c, vec![x])
                }
            })
            .collect();
        SurvivalDataset::with_default_names(obs)
    }

    fn small_spec(p: Parameterization) -> ModelSpec {
        let mut spec = ModelSpec::new(
            TargetFamily::MinimumExtremeValue,
            p,
            ExtractorSpec::linear(1, 1),
        );
        spec.epochs = 30;
        spec
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_indices(50, 0.2, 9);
        assert_eq!((a.len(), b.len()), (40, 10));
        assert_eq!(split_indices(50, 0.2, 9), (a.clone(), b.clone()));
        let mut all: Vec<_> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(1, 0.2, 0), (vec![0], vec![0]));
    }

    #[test]
    fn fitting_is_deterministic() {
        let data = exponential_data(150, 0.8, 1);
        let spec = small_spec(Parameterization::BernsteinShift);
        let config = TrainConfig::default();
        let (a, la) = fit_with_log(&data, &spec, &config).unwrap();
        let (b, lb) = fit_with_log(&data, &spec, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn training_does_not_worsen_the_fit() {
        let data = exponential_data(200, 1.0, 2);
        for p in Parameterization::ALL {
            let (model, log) =
                fit_with_log(&data, &small_spec(p), &TrainConfig::default()).unwrap();
            let initial = &log.epochs[0];
            assert!(model.validation_nll <= initial.val_nll, "{p:?}");
            assert!(model.train_nll <= initial.train_nll, "{p:?}");
            assert_eq!(log.epochs[log.best_epoch].val_nll, model.validation_nll);
        }
    }

    #[test]
    fn baseline_predicts_the_same_for_every_subject() {
        let data = exponential_data(100, 1.0, 3);
        let model = fit(
            &data,
            &small_spec(Parameterization::Baseline),
            &TrainConfig::default(),
        )
        .unwrap();
        let a = model.conditional_distribution(&[-0.9]).unwrap();
        let b = model.conditional_distribution(&[0.7]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_censored_and_schema_errors() {
        let obs = vec![Observation::right_censored(1.0, vec![0.0]); 5];
        let data = SurvivalDataset::with_default_names(obs);
        let spec = small_spec(Parameterization::LinearShift);
        assert_eq!(
            fit(&data, &spec, &TrainConfig::default()),
            Err(Error::AllCensored)
        );

        let data = exponential_data(20, 1.0, 4);
        let mut spec = small_spec(Parameterization::LinearShift);
        spec.extractor.input_dim = 3;
        assert!(matches!(
            fit(&data, &spec, &TrainConfig::default()),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let data = exponential_data(20, 1.0, 5);
        let spec = small_spec(Parameterization::LinearShift);
        for config in [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                validation_fraction: 1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                fit(&data, &spec, &config),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn flexible_output_layer_uses_head_rate() {
        let mut spec = small_spec(Parameterization::BernsteinFlexible);
        spec.extractor.hidden_dims = vec![3];
        spec.lr_head = 0.5;
        spec.lr_extractor = 0.01;
        let state = ModelState::initial(&spec, LogTimeScaler::new(0.0, 1.0).unwrap(), 0).unwrap();
        let lrs = learning_rates(&spec, &state);
        // first layer: 1 x 3 weights and 3 biases
        let first = 3 + 3;
        assert!(lrs[..first].iter().all(|&v| v == 0.01));
        assert!(lrs[first..].iter().all(|&v| v == 0.5));
    }
}
