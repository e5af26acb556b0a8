//! Bernstein polynomial basis on [0, 1], the monotone coefficient map and the
//! log-time scaler that maps observed times onto the basis support.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

pub const DEFAULT_BERNSTEIN_ORDER: usize = 6;

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic sigmoid, also the derivative of [`softplus`].
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn check_order(order: usize) -> Result<()> {
    if order < 1 {
        return Err(Error::InvalidOrder(order));
    }
    Ok(())
}

/// Bernstein basis of degree `order` evaluated at `u` (clamped to [0, 1]).
///
/// Uses the de Casteljau recurrence, so the components are nonnegative and
/// sum to one up to rounding.
pub fn bernstein_eval(order: usize, u: f64) -> Result<Vec<f64>> {
    check_order(order)?;
    Ok(bernstein_unchecked(order, u))
}

pub(crate) fn bernstein_unchecked(order: usize, u: f64) -> Vec<f64> {
    let u = u.clamp(0.0, 1.0);
    let v = 1.0 - u;
    let mut b = vec![0.0; order + 1];
    b[0] = 1.0;
    for n in 1..=order {
        for k in (1..=n).rev() {
            b[k] = v * b[k] + u * b[k - 1];
        }
        b[0] *= v;
    }
    b
}

/// Weights `d` such that `d . theta` is the derivative in `u` of
/// `bernstein_eval(order, u) . theta`.
pub(crate) fn bernstein_deriv_weights(order: usize, u: f64) -> Vec<f64> {
    let lower = bernstein_unchecked(order - 1, u);
    let k_f = order as f64;
    let mut d = vec![0.0; order + 1];
    for (k, &b) in lower.iter().enumerate() {
        d[k] -= k_f * b;
        d[k + 1] += k_f * b;
    }
    d
}

/// Derivative in `u` of the Bernstein polynomial with coefficients `theta`.
pub fn bernstein_deriv(order: usize, u: f64, theta: &[f64]) -> Result<f64> {
    check_order(order)?;
    if theta.len() != order + 1 {
        return Err(Error::DimensionMismatch {
            context: "bernstein coefficients",
            expected: order + 1,
            found: theta.len(),
        });
    }
    let lower = bernstein_unchecked(order - 1, u);
    let k_f = order as f64;
    Ok(k_f
        * lower
            .iter()
            .zip(theta.windows(2))
            .map(|(b, w)| (w[1] - w[0]) * b)
            .sum::<f64>())
}

/// Maps unconstrained `gamma` to strictly increasing coefficients:
/// `theta_1 = gamma_1`, `theta_k = gamma_1 + sum_{j=2..k} softplus(gamma_j)`.
pub fn monotone_reparam(gamma: &[f64]) -> Vec<f64> {
    let mut theta = Vec::with_capacity(gamma.len());
    let mut acc = match gamma.first() {
        Some(&g) => g,
        None => return theta,
    };
    theta.push(acc);
    for &g in &gamma[1..] {
        acc += softplus(g);
        theta.push(acc);
    }
    theta
}

/// Pulls a gradient with respect to `theta = monotone_reparam(gamma)` back to
/// `gamma`.
pub fn monotone_reparam_vjp(gamma: &[f64], grad_theta: &[f64]) -> Vec<f64> {
    debug_assert_eq!(gamma.len(), grad_theta.len());
    let n = gamma.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    // suffix sums of grad_theta
    let mut suffix = 0.0;
    for j in (1..n).rev() {
        suffix += grad_theta[j];
        out[j] = sigmoid(gamma[j]) * suffix;
    }
    out[0] = suffix + grad_theta[0];
    out
}

/// Inverse of [`monotone_reparam`] for a strictly increasing `theta`.
pub fn monotone_reparam_inv(theta: &[f64]) -> Vec<f64> {
    let mut gamma = Vec::with_capacity(theta.len());
    if let Some(&first) = theta.first() {
        gamma.push(first);
        for w in theta.windows(2) {
            gamma.push(softplus_inv(w[1] - w[0]));
        }
    }
    gamma
}

/// A Bernstein polynomial with increasing coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinBasis {
    order: usize,
    theta: Vec<f64>,
}

impl BernsteinBasis {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        let order = theta.len().saturating_sub(1);
        check_order(order)?;
        if theta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "Bernstein coefficients must be strictly increasing".into(),
            ));
        }
        Ok(Self { order, theta })
    }

    pub fn from_unconstrained(gamma: &[f64]) -> Result<Self> {
        Self::new(monotone_reparam(gamma))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.theta
    }

    pub fn eval(&self, u: f64) -> f64 {
        dot(&bernstein_unchecked(self.order, u), &self.theta)
    }

    pub fn deriv(&self, u: f64) -> f64 {
        dot(&bernstein_deriv_weights(self.order, u), &self.theta)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Affine map from log-time onto the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogTimeScaler {
    pub a_lo: f64,
    pub b_hi: f64,
}

impl LogTimeScaler {
    pub fn new(a_lo: f64, b_hi: f64) -> Result<Self> {
        if !(a_lo.is_finite() && b_hi.is_finite() && b_hi > a_lo) {
            return Err(Error::InvalidArgument(format!(
                "scaler bounds must be finite with b_hi > a_lo (got {a_lo}, {b_hi})"
            )));
        }
        Ok(Self { a_lo, b_hi })
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.b_hi - self.a_lo
    }

    /// Scaled log-time; values outside [0, 1] are left unclamped.
    #[inline]
    pub fn scale(&self, log_t: f64) -> f64 {
        (log_t - self.a_lo) / self.width()
    }

    /// Smallest time covered by the scaler, `exp(a_lo)`.
    pub fn min_time(&self) -> f64 {
        self.a_lo.exp()
    }

    /// Largest time covered by the scaler, `exp(b_hi)`.
    pub fn max_time(&self) -> f64 {
        self.b_hi.exp()
    }
}

/// Fits the scaler to the log of every finite time in the dataset, widened on
/// both sides by `margin` times the observed range. A degenerate range (all
/// times equal) is widened to +/- 0.5 around the single value.
pub fn fit_scaler(dataset: &SurvivalDataset, margin: f64) -> Result<LogTimeScaler> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scaler margin must be nonnegative (got {margin})"
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for obs in &dataset.observations {
        for t in [obs.time_lower, obs.time_upper] {
            if t.is_finite() && t > 0.0 {
                let u = t.ln();
                lo = lo.min(u);
                hi = hi.max(u);
            }
        }
    }
    if !lo.is_finite() {
        return Err(Error::EmptyDataset);
    }
    let range = hi - lo;
    if range <= 0.0 {
        return LogTimeScaler::new(lo - 0.5, hi + 0.5);
    }
    LogTimeScaler::new(lo - margin * range, hi + margin * range)
}
