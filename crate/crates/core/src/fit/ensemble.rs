//! Bootstrap deep ensembles: B members trained on resamples, the M with the
//! lowest out-of-bag NLL averaged point-wise.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{fit_scaler, LogTimeScaler};
use crate::data::{validate_dataset, Observation, SurvivalDataset, ValidationMode};
use crate::error::{Error, Result};
use crate::fit::sgd::{fit_split, TrainConfig, TrainingLog};
use crate::model::{FittedModel, ModelSpec, SCHEMA_VERSION};
use crate::transform::{ConditionalDistribution, ConditionalModel, SurvivalPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<FittedModel>,
    pub member_validation_nlls: Vec<f64>,
}

/// One trained bootstrap member before selection.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberFit {
    pub index: usize,
    pub seed: u64,
    pub model: FittedModel,
    pub log: TrainingLog,
}

/// Seed of bootstrap member `index`; drives its resample, initialization and
/// minibatch order.
pub fn member_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// In-bag indices (n draws with replacement, sorted) and out-of-bag indices.
pub fn bootstrap_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; n];
    for _ in 0..n {
        counts[rng.gen_range(0..n)] += 1;
    }
    let mut in_bag = Vec::with_capacity(n);
    let mut oob = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            oob.push(i);
        }
        in_bag.extend(std::iter::repeat_n(i, c));
    }
    (in_bag, oob)
}

/// Trains one member on its bootstrap resample with a shared scaler.
pub fn fit_member(
    dataset: &SurvivalDataset,
    spec: &ModelSpec,
    config: &TrainConfig,
    scaler: LogTimeScaler,
    index: usize,
) -> Result<MemberFit> {
    let seed = member_seed(spec.seed, index);
    let (in_bag, mut oob) = bootstrap_indices(dataset.len(), seed);
    if oob.is_empty() {
        warn!("bootstrap member {index} has no out-of-bag subjects; validating in-bag");
        oob = in_bag.clone();
    }
    let mut member_spec = spec.clone();
    member_spec.seed = seed;
    let (model, log) = fit_split(
        &dataset.subset(&in_bag),
        &dataset.subset(&oob),
        &member_spec,
        config,
        scaler,
    )?;
    Ok(MemberFit {
        index,
        seed,
        model,
        log,
    })
}

/// Trains `b` bootstrap members on a pool of `jobs` threads (0 picks the
/// default). Results are returned in member order regardless of scheduling.
pub fn fit_members(
    dataset: &SurvivalDataset,
    spec: &ModelSpec,
    config: &TrainConfig,
    b: usize,
    jobs: usize,
) -> Result<Vec<MemberFit>> {
    let dataset = validate_dataset(dataset.clone(), ValidationMode::Fitting)?;
    config.validate()?;
    if b == 0 {
        return Err(Error::InvalidConfig(
            "ensemble needs at least one member".into(),
        ));
    }
    // one scaler for all members keeps their CDFs on a common time axis
    let scaler = fit_scaler(&dataset, config.scaler_margin)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| {
        (0..b)
            .into_par_iter()
            .map(|i| fit_member(&dataset, spec, config, scaler, i))
            .collect()
    })
}

/// Keeps the `m` members with the lowest validation NLL, ties broken by seed.
pub fn select_top(members: &[MemberFit], m: usize) -> Result<EnsembleModel> {
    if m == 0 || m > members.len() {
        return Err(Error::InvalidConfig(format!(
            "top-M must satisfy 1 <= M <= B (got M = {m}, B = {})",
            members.len()
        )));
    }
    let mut ranked: Vec<&MemberFit> = members.iter().collect();
    ranked.sort_by(|a, b| {
        a.model
            .validation_nll
            .total_cmp(&b.model.validation_nll)
            .then(a.seed.cmp(&b.seed))
    });
    ranked.truncate(m);
    Ok(EnsembleModel {
        member_validation_nlls: ranked.iter().map(|f| f.model.validation_nll).collect(),
        members: ranked.into_iter().map(|f| f.model.clone()).collect(),
    })
}

pub fn fit_ensemble(
    dataset: &SurvivalDataset,
    spec: &ModelSpec,
    config: &TrainConfig,
    b: usize,
    m: usize,
) -> Result<EnsembleModel> {
    if m == 0 || m > b {
        return Err(Error::InvalidConfig(format!(
            "top-M must satisfy 1 <= M <= B (got M = {m}, B = {b})"
        )));
    }
    select_top(&fit_members(dataset, spec, config, b, 0)?, m)
}

impl EnsembleModel {
    pub fn check(&self) -> Result<()> {
        let first = self
            .members
            .first()
            .ok_or_else(|| Error::MalformedArtifact("ensemble has no members".into()))?;
        if self.member_validation_nlls.len() != self.members.len() {
            return Err(Error::MalformedArtifact(
                "one validation NLL per member is required".into(),
            ));
        }
        for member in &self.members {
            member.check()?;
            if member.spec.family != first.spec.family
                || member.spec.parameterization != first.spec.parameterization
                || member.spec.extractor.input_dim != first.spec.extractor.input_dim
            {
                return Err(Error::MalformedArtifact(
                    "ensemble members disagree on family, parameterization or inputs".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn distribution(&self, x: &[f64]) -> Result<EnsembleDistribution> {
        let members = self
            .members
            .iter()
            .map(|m| m.conditional_distribution(x))
            .collect::<Result<_>>()?;
        Ok(EnsembleDistribution { members })
    }
}

impl ConditionalModel for EnsembleModel {
    type Distribution = EnsembleDistribution;

    fn distribution(&self, x: &[f64]) -> Result<EnsembleDistribution> {
        EnsembleModel::distribution(self, x)
    }

    /// Union of the member scalers.
    fn scaler(&self) -> LogTimeScaler {
        let lo = self
            .members
            .iter()
            .map(|m| m.scaler.a_lo)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .members
            .iter()
            .map(|m| m.scaler.b_hi)
            .fold(f64::NEG_INFINITY, f64::max);
        LogTimeScaler { a_lo: lo, b_hi: hi }
    }

    fn input_dim(&self) -> usize {
        self.members[0].spec.extractor.input_dim
    }
}

/// `M^-1 sum_m F_m(t | x)`.
pub fn ensemble_cdf(ensemble: &EnsembleModel, x: &[f64], t: f64) -> Result<f64> {
    Ok(ensemble.distribution(x)?.cdf(t))
}

/// Equal-weight mixture of member conditional distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDistribution {
    members: Vec<ConditionalDistribution>,
}

impl EnsembleDistribution {
    pub fn new(members: Vec<ConditionalDistribution>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument(
                "mixture needs at least one member".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ConditionalDistribution] {
        &self.members
    }

    fn mean(&self, f: impl Fn(&ConditionalDistribution) -> f64) -> f64 {
        self.members.iter().map(f).sum::<f64>() / self.members.len() as f64
    }
}

impl SurvivalPrediction for EnsembleDistribution {
    fn cdf(&self, t: f64) -> f64 {
        self.mean(|m| m.cdf(t))
    }

    fn survivor(&self, t: f64) -> f64 {
        self.mean(|m| m.survivor(t))
    }

    /// Bisection in log-time between the smallest and largest member quantile,
    /// which bracket the mixture quantile.
    fn quantile(&self, p: f64) -> Result<f64> {
        let qs = self
            .members
            .iter()
            .map(|m| m.quantile(p))
            .collect::<Result<Vec<_>>>()?;
        let mut lo = qs.iter().copied().fold(f64::INFINITY, f64::min).ln();
        let mut hi = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid.exp()) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }

    /// `-log(M^-1 sum_m L_m)` from the member NLLs, via log-sum-exp.
    fn nll(&self, obs: &Observation) -> Result<f64> {
        let logs = self
            .members
            .iter()
            .map(|m| m.nll(obs).map(|v| -v))
            .collect::<Result<Vec<_>>>()?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        Ok(-(max + (sum / logs.len() as f64).ln()))
    }
}

#[derive(Serialize)]
struct EnsembleOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    ensemble: &'a EnsembleModel,
}

pub fn serialize_ensemble(ensemble: &EnsembleModel) -> Result<Vec<u8>> {
    ensemble.check()?;
    let mut bytes = serde_json::to_vec_pretty(&EnsembleOut {
        schema_version: SCHEMA_VERSION,
        ensemble,
    })
    .map_err(|e| Error::MalformedArtifact(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn deserialize_ensemble(bytes: &[u8]) -> Result<EnsembleModel> {
    let mut value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::MalformedArtifact(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::MalformedArtifact("artifact is not a JSON object".into()))?;
    let version = obj
        .remove("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::MalformedArtifact("missing schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::SchemaVersionMismatch {
            expected: SCHEMA_VERSION,
            found: u32::try_from(version).unwrap_or(u32::MAX),
        });
    }
    let ensemble: EnsembleModel =
        serde_json::from_value(value).map_err(|e| Error::MalformedArtifact(e.to_string()))?;
    ensemble.check()?;
    Ok(ensemble)
}
