//! Parameter-free target distributions `F_Z`.
//!
//! Every tail quantity is computed in log space so that censored likelihood
//! terms stay accurate where the CDF is close to 0 or 1.

use serde::{Deserialize, Serialize};

use crate::basis::{sigmoid, softplus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFamily {
    /// Standard logistic, `F(z) = 1 / (1 + exp(-z))`; log-odds scale.
    Logistic,
    /// Standard minimum extreme value, `F(z) = 1 - exp(-exp(z))`; log-cumulative-hazard scale.
    MinimumExtremeValue,
}

impl TargetFamily {
    pub fn cdf(self, z: f64) -> f64 {
        match self {
            TargetFamily::Logistic => sigmoid(z),
            TargetFamily::MinimumExtremeValue => -(-z.exp()).exp_m1(),
        }
    }

    /// `1 - F(z)`, evaluated directly rather than by subtraction.
    pub fn survivor(self, z: f64) -> f64 {
        match self {
            TargetFamily::Logistic => sigmoid(-z),
            TargetFamily::MinimumExtremeValue => (-z.exp()).exp(),
        }
    }

    pub fn log_cdf(self, z: f64) -> f64 {
        match self {
            TargetFamily::Logistic => -softplus(-z),
            TargetFamily::MinimumExtremeValue => {
                let ez = z.exp();
                if ez == 0.0 {
                    z
                } else if ez < 1.0 {
                    // log F = z + log((1 - exp(-e^z)) / e^z), the ratio is near 1
                    z + (-(-ez).exp_m1() / ez).ln()
                } else {
                    (-(-ez).exp_m1()).ln()
                }
            }
        }
    }

    pub fn log_survivor(self, z: f64) -> f64 {
        match self {
            TargetFamily::Logistic => -softplus(z),
            TargetFamily::MinimumExtremeValue => -z.exp(),
        }
    }

    pub fn density(self, z: f64) -> f64 {
        self.log_density(z).exp()
    }

    pub fn log_density(self, z: f64) -> f64 {
        match self {
            TargetFamily::Logistic => -softplus(z) - softplus(-z),
            TargetFamily::MinimumExtremeValue => z - z.exp(),
        }
    }

    /// Derivative of [`Self::log_cdf`].
    pub fn d_log_cdf(self, z: f64) -> f64 {
        match self {
            TargetFamily::Logistic => sigmoid(-z),
            TargetFamily::MinimumExtremeValue => {
                let ez = z.exp();
                if ez.is_infinite() {
                    0.0
                } else if ez == 0.0 {
                    1.0
                } else {
                    // e^z exp(-e^z) / (1 - exp(-e^z))
                    ez * (-ez).exp() / -(-ez).exp_m1()
                }
            }
        }
    }

    /// Derivative of [`Self::log_survivor`].
    pub fn d_log_survivor(self, z: f64) -> f64 {
        match self {
            TargetFamily::Logistic => -sigmoid(z),
            TargetFamily::MinimumExtremeValue => -z.exp(),
        }
    }

    /// Derivative of [`Self::log_density`].
    pub fn d_log_density(self, z: f64) -> f64 {
        match self {
            TargetFamily::Logistic => sigmoid(-z) - sigmoid(z),
            TargetFamily::MinimumExtremeValue => 1.0 - z.exp(),
        }
    }

    /// Inverse CDF for `p` in the open unit interval.
    pub fn quantile(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        Ok(match self {
            TargetFamily::Logistic => p.ln() - (-p).ln_1p(),
            TargetFamily::MinimumExtremeValue => (-(-p).ln_1p()).ln(),
        })
    }
}
