//! Survival observations and datasets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CensoringKind {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "right")]
    RightCensored,
    #[serde(rename = "left")]
    LeftCensored,
    #[serde(rename = "interval")]
    IntervalCensored,
}

impl CensoringKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CensoringKind::Exact => "exact",
            CensoringKind::RightCensored => "right",
            CensoringKind::LeftCensored => "left",
            CensoringKind::IntervalCensored => "interval",
        }
    }
}

impl fmt::Display for CensoringKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CensoringKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "exact" => Ok(CensoringKind::Exact),
            "right" => Ok(CensoringKind::RightCensored),
            "left" => Ok(CensoringKind::LeftCensored),
            "interval" => Ok(CensoringKind::IntervalCensored),
            other => Err(format!("unknown censoring status `{other}`")),
        }
    }
}

/// One subject: an event time (or censoring interval) and its covariates.
///
/// Times are stored as a closed pair `time_lower <= time_upper`:
///
/// | kind     | `time_lower` | `time_upper` | likelihood interval |
/// |----------|--------------|--------------|---------------------|
/// | exact    | t            | t            | density at t        |
/// | right    | t            | +inf         | (t, inf)            |
/// | left     | t            | t            | (0, t]              |
/// | interval | l            | u            | (l, u]              |
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time_lower: f64,
    pub time_upper: f64,
    pub censoring: CensoringKind,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn exact(time: f64, covariates: Vec<f64>) -> Self {
        Self {
            time_lower: time,
            time_upper: time,
            censoring: CensoringKind::Exact,
            covariates,
        }
    }

    pub fn right_censored(time: f64, covariates: Vec<f64>) -> Self {
        Self {
            time_lower: time,
            time_upper: f64::INFINITY,
            censoring: CensoringKind::RightCensored,
            covariates,
        }
    }

    pub fn left_censored(time: f64, covariates: Vec<f64>) -> Self {
        Self {
            time_lower: time,
            time_upper: time,
            censoring: CensoringKind::LeftCensored,
            covariates,
        }
    }

    pub fn interval_censored(lower: f64, upper: f64, covariates: Vec<f64>) -> Self {
        Self {
            time_lower: lower,
            time_upper: upper,
            censoring: CensoringKind::IntervalCensored,
            covariates,
        }
    }

    /// The recorded time used for ranking (c-index) and CRPS.
    pub fn time(&self) -> f64 {
        self.time_lower
    }

    /// 1 for an observed event, 0 otherwise.
    pub fn event_indicator(&self) -> u8 {
        u8::from(self.censoring == CensoringKind::Exact)
    }

    fn check(&self, index: usize, p: usize) -> Result<()> {
        if !(self.time_lower.is_finite() && self.time_lower > 0.0) {
            return Err(Error::NonPositiveTime {
                index,
                time: self.time_lower,
            });
        }
        if self.time_upper.is_nan() || self.time_upper <= 0.0 {
            return Err(Error::NonPositiveTime {
                index,
                time: self.time_upper,
            });
        }
        if self.time_upper < self.time_lower {
            return Err(Error::InvertedInterval {
                index,
                lower: self.time_lower,
                upper: self.time_upper,
            });
        }
        let inconsistent = |reason: &str| Error::InconsistentCensoring {
            index,
            reason: reason.to_string(),
        };
        match self.censoring {
            CensoringKind::Exact if self.time_upper != self.time_lower => {
                return Err(inconsistent("exact observation with distinct upper time"));
            }
            CensoringKind::LeftCensored if self.time_upper != self.time_lower => {
                return Err(inconsistent(
                    "left-censored observation with distinct upper time",
                ));
            }
            CensoringKind::RightCensored if self.time_upper != f64::INFINITY => {
                return Err(inconsistent(
                    "right-censored observation with finite upper time",
                ));
            }
            _ => {}
        }
        if self.covariates.len() != p {
            return Err(Error::RaggedCovariates {
                index,
                expected: p,
                found: self.covariates.len(),
            });
        }
        if let Some(column) = self.covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCovariate { index, column });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    pub observations: Vec<Observation>,
    pub feature_names: Vec<String>,
}

impl SurvivalDataset {
    pub fn new(observations: Vec<Observation>, feature_names: Vec<String>) -> Self {
        Self {
            observations,
            feature_names,
        }
    }

    /// Builds a dataset with generated feature names `x1..xp`.
    pub fn with_default_names(observations: Vec<Observation>) -> Self {
        let p = observations.first().map_or(0, |o| o.covariates.len());
        let feature_names = (1..=p).map(|i| format!("x{i}")).collect();
        Self::new(observations, feature_names)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Largest finite time recorded anywhere in the dataset.
    pub fn max_time(&self) -> f64 {
        self.observations
            .iter()
            .flat_map(|o| [o.time_lower, o.time_upper])
            .filter(|t| t.is_finite())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Dataset restricted to the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            observations: indices
                .iter()
                .map(|&i| self.observations[i].clone())
                .collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    /// Scoring and sampling: censored-only datasets are fine.
    Scoring,
    /// Fitting additionally requires at least one exact observation.
    Fitting,
}

/// Returns the dataset unchanged if every observation is well formed,
/// otherwise the first violation found.
pub fn validate_dataset(raw: SurvivalDataset, mode: ValidationMode) -> Result<SurvivalDataset> {
    if raw.observations.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = raw.feature_names.len();
    for (index, obs) in raw.observations.iter().enumerate() {
        obs.check(index, p)?;
    }
    if mode == ValidationMode::Fitting
        && raw
            .observations
            .iter()
            .all(|o| o.censoring != CensoringKind::Exact)
    {
        return Err(Error::AllCensored);
    }
    Ok(raw)
}
