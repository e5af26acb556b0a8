//! Concordance index, log-score and CRPS of predicted distributions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, CensoringKind, Observation, SurvivalDataset, ValidationMode};
use crate::error::{Error, Result};
use crate::transform::{ConditionalDistribution, ConditionalModel, SurvivalPrediction};

/// Mean of `values` summed in ascending order, so the result does not depend
/// on the order of the input.
pub fn stable_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Concordance counts: numerator in half-units and number of comparable pairs.
fn concordance_counts(times: &[f64], events: &[bool], risk: &[f64]) -> (u64, u64) {
    let mut half_units = 0u64;
    let mut pairs = 0u64;
    for j in 0..times.len() {
        if !events[j] {
            continue;
        }
        for i in 0..times.len() {
            if times[j] < times[i] {
                pairs += 1;
                if risk[j] > risk[i] {
                    half_units += 2;
                } else if risk[j] == risk[i] {
                    half_units += 1;
                }
            }
        }
    }
    (half_units, pairs)
}

/// Harrell's concordance index. A pair (i, j) is comparable when `T_j < T_i`
/// and subject j had the event; it is concordant when `risk_j > risk_i`. Risk
/// ties count 1/2, time ties are not comparable.
pub fn c_index(times: &[f64], events: &[bool], risk: &[f64]) -> Result<f64> {
    if events.len() != times.len() || risk.len() != times.len() {
        return Err(Error::DimensionMismatch {
            context: "c-index inputs",
            expected: times.len(),
            found: if events.len() != times.len() {
                events.len()
            } else {
                risk.len()
            },
        });
    }
    let (half_units, pairs) = concordance_counts(times, events, risk);
    if pairs == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(half_units as f64 / (2 * pairs) as f64)
}

/// Negative log-likelihood of an exact or right-censored observation; the
/// same computation as the training objective.
pub fn log_score(distribution: &ConditionalDistribution, obs: &Observation) -> Result<f64> {
    match obs.censoring {
        CensoringKind::Exact | CensoringKind::RightCensored => distribution.nll(obs),
        other => Err(Error::UnsupportedCensoringKind(other.as_str())),
    }
}

const CRPS_PANELS: usize = 512;
const CRPS_MAX_PANELS: usize = 8192;
const CRPS_REL_TOL: f64 = 1e-7;
const CRPS_ABS_TOL: f64 = 1e-13;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// Composite Simpson on [a, b], doubling the panel count until successive
/// estimates agree.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let mut panels = CRPS_PANELS;
    let mut previous = simpson(&f, a, b, panels);
    loop {
        panels *= 2;
        let current = simpson(&f, a, b, panels);
        if (current - previous).abs() <= CRPS_REL_TOL * current.abs() + CRPS_ABS_TOL {
            return Ok(current);
        }
        if panels >= CRPS_MAX_PANELS {
            return Err(Error::QuadratureNonConvergence { previous, current });
        }
        previous = current;
    }
}

/// `int_0^t F(u)^2 du + event * int_t^t_max (1 - F(u))^2 du`.
///
/// The lower integral uses `u = t s^4`, which smooths power-law behaviour of
/// `F` near zero; the upper one is taken in log-time. Endpoint values at `t`
/// are one-sided limits from inside each interval.
pub fn crps<D: SurvivalPrediction + ?Sized>(
    distribution: &D,
    t: f64,
    event: bool,
    t_max: f64,
) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::NonPositiveEvalTime(t));
    }
    if !(t <= t_max) {
        return Err(Error::InvalidArgument(format!(
            "CRPS requires t <= t_max (got t = {t}, t_max = {t_max})"
        )));
    }
    let lower = integrate(
        |s| {
            if s <= 0.0 {
                return 0.0;
            }
            let u = if s >= 1.0 { t } else { t * s.powi(4) };
            let f = if s >= 1.0 {
                distribution.cdf_left(t)
            } else {
                distribution.cdf(u)
            };
            f * f * 4.0 * t * s.powi(3)
        },
        0.0,
        1.0,
    )?;
    if !event {
        return Ok(lower);
    }
    let upper = integrate(
        |v| {
            let u = v.exp();
            let s = distribution.survivor(u);
            s * s * u
        },
        t.ln(),
        t_max.ln(),
    )?;
    Ok(lower + upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub nll: f64,
    /// Only defined for exact and right-censored subjects.
    pub crps: Option<f64>,
    /// Negative predicted median, the risk score used for the c-index.
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_subject: Vec<SubjectScore>,
    pub mean_nll: f64,
    pub mean_crps: Option<f64>,
    /// `None` when the dataset has no comparable pair.
    pub c_index: Option<f64>,
    pub n_subjects: usize,
    pub n_comparable_pairs: u64,
    /// Upper integration limit used for the CRPS.
    pub t_max: f64,
}

/// Scores every subject and the dataset as a whole. `t_max` is the larger of
/// the scaler's upper time and the largest time in the data.
pub fn evaluate<M: ConditionalModel>(
    model: &M,
    dataset: &SurvivalDataset,
) -> Result<EvaluationReport> {
    let dataset = validate_dataset(dataset.clone(), ValidationMode::Scoring)?;
    if dataset.n_features() != model.input_dim() {
        return Err(Error::SchemaMismatch {
            expected: model.input_dim(),
            found: dataset.n_features(),
        });
    }
    let t_max = model.scaler().max_time().max(dataset.max_time());
    let per_subject = dataset
        .observations
        .par_iter()
        .map(|obs| {
            let dist = model.distribution(&obs.covariates)?;
            let nll = dist.nll(obs)?;
            let crps = match obs.censoring {
                CensoringKind::Exact => Some(crps(&dist, obs.time(), true, t_max)?),
                CensoringKind::RightCensored => Some(crps(&dist, obs.time(), false, t_max)?),
                _ => None,
            };
            let risk = -dist.median()?;
            Ok(SubjectScore { nll, crps, risk })
        })
        .collect::<Result<Vec<_>>>()?;

    let nlls: Vec<f64> = per_subject.iter().map(|s| s.nll).collect();
    let crpss: Vec<f64> = per_subject.iter().filter_map(|s| s.crps).collect();
    let times: Vec<f64> = dataset.observations.iter().map(Observation::time).collect();
    let events: Vec<bool> = dataset
        .observations
        .iter()
        .map(|o| o.censoring == CensoringKind::Exact)
        .collect();
    let risk: Vec<f64> = per_subject.iter().map(|s| s.risk).collect();
    let (half_units, pairs) = concordance_counts(&times, &events, &risk);
    Ok(EvaluationReport {
        mean_nll: stable_mean(&nlls),
        mean_crps: (!crpss.is_empty()).then(|| stable_mean(&crpss)),
        c_index: (pairs > 0).then(|| half_units as f64 / (2 * pairs) as f64),
        n_subjects: per_subject.len(),
        n_comparable_pairs: pairs,
        t_max,
        per_subject,
    })
}
