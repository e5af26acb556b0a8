//! Transformation function `h(t | x)`, its time derivative and its gradients,
//! plus the conditional distribution `F(t | x) = F_Z(h(t | x))`.
//!
//! Bernstein parameterizations work on the scaled log-time
//! `u = (log t - a_lo) / (b_hi - a_lo)`. Outside [0, 1] the Bernstein
//! polynomial is continued linearly with its slope at the nearest endpoint, so
//! `h` stays strictly increasing and tends to -inf / +inf in the tails.

use crate::basis::{
    bernstein_deriv_weights, bernstein_unchecked, dot, monotone_reparam, monotone_reparam_inv,
    monotone_reparam_vjp, sigmoid, softplus, softplus_inv, LogTimeScaler,
};
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::fit::likelihood::observation_nll;
use crate::model::{ModelSpec, Parameterization};
use crate::target::TargetFamily;

/// Head parameters. Only the subset used by the parameterization is active:
///
/// | parameterization        | active          |
/// |-------------------------|-----------------|
/// | baseline                | gamma           |
/// | linear shift            | a, b_raw, w     |
/// | linear scale            | a, w            |
/// | bernstein shift         | w, gamma        |
/// | bernstein shift/scale   | w, gamma, beta  |
/// | bernstein flexible      | (none)          |
///
/// The flat layout follows the order `a, b_raw, w, gamma, beta`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadParams {
    pub a: f64,
    pub b_raw: f64,
    pub w: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Active {
    a: bool,
    b_raw: bool,
    w: bool,
    gamma: bool,
    beta: bool,
}

fn active(p: Parameterization) -> Active {
    use Parameterization::*;
    let (a, b_raw, w, gamma, beta) = match p {
        Baseline => (false, false, false, true, false),
        LinearShift => (true, true, true, false, false),
        LinearScale => (true, false, true, false, false),
        BernsteinShift => (false, false, true, true, false),
        BernsteinShiftScale => (false, false, true, true, true),
        BernsteinFlexible => (false, false, false, false, false),
    };
    Active {
        a,
        b_raw,
        w,
        gamma,
        beta,
    }
}

impl HeadParams {
    /// Zero head with the shapes required by `p`.
    pub fn zeros(p: Parameterization, feature_dim: usize, order: usize) -> Self {
        let act = active(p);
        Self {
            a: 0.0,
            b_raw: 0.0,
            w: if act.w {
                vec![0.0; feature_dim]
            } else {
                Vec::new()
            },
            gamma: if act.gamma {
                vec![0.0; order + 1]
            } else {
                Vec::new()
            },
            beta: if act.beta {
                vec![0.0; feature_dim]
            } else {
                Vec::new()
            },
        }
    }

    pub fn n_params(p: Parameterization, feature_dim: usize, order: usize) -> usize {
        let act = active(p);
        usize::from(act.a)
            + usize::from(act.b_raw)
            + if act.w { feature_dim } else { 0 }
            + if act.gamma { order + 1 } else { 0 }
            + if act.beta { feature_dim } else { 0 }
    }

    pub fn flatten(&self, p: Parameterization) -> Vec<f64> {
        let act = active(p);
        let mut out = Vec::new();
        if act.a {
            out.push(self.a);
        }
        if act.b_raw {
            out.push(self.b_raw);
        }
        if act.w {
            out.extend_from_slice(&self.w);
        }
        if act.gamma {
            out.extend_from_slice(&self.gamma);
        }
        if act.beta {
            out.extend_from_slice(&self.beta);
        }
        out
    }

    pub fn unflatten(
        p: Parameterization,
        feature_dim: usize,
        order: usize,
        flat: &[f64],
    ) -> Result<Self> {
        let expected = Self::n_params(p, feature_dim, order);
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "head parameters",
                expected,
                found: flat.len(),
            });
        }
        let act = active(p);
        let mut head = Self::zeros(p, feature_dim, order);
        let mut it = flat.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        if act.a {
            head.a = take(1)[0];
        }
        if act.b_raw {
            head.b_raw = take(1)[0];
        }
        if act.w {
            head.w = take(feature_dim);
        }
        if act.gamma {
            head.gamma = take(order + 1);
        }
        if act.beta {
            head.beta = take(feature_dim);
        }
        Ok(head)
    }

    /// Unconstrained coefficients whose image under the monotone map is
    /// `scale * linspace(F_Z^-1(0.05), F_Z^-1(0.95), order + 1)`.
    pub fn initial_gamma(family: TargetFamily, order: usize, scale: f64) -> Vec<f64> {
        let (z_lo, z_hi) = central_range(family);
        let theta: Vec<f64> = (0..=order)
            .map(|k| scale * (z_lo + (z_hi - z_lo) * k as f64 / order as f64))
            .collect();
        monotone_reparam_inv(&theta)
    }

    /// Starting head for training: with zero feature weights, `h` sweeps the
    /// central 90% of the target distribution across the scaler range.
    pub fn initial(spec: &ModelSpec, scaler: &LogTimeScaler) -> Self {
        use Parameterization::*;
        let p = spec.parameterization;
        let mut head = Self::zeros(p, spec.feature_dim(), spec.bernstein_order);
        let (z_lo, z_hi) = central_range(spec.family);
        match p {
            Baseline | BernsteinShift => {
                head.gamma = Self::initial_gamma(spec.family, spec.bernstein_order, 1.0);
            }
            BernsteinShiftScale => {
                // softplus(0) = ln 2 multiplies the polynomial at start
                head.gamma = Self::initial_gamma(
                    spec.family,
                    spec.bernstein_order,
                    1.0 / std::f64::consts::LN_2,
                );
            }
            LinearShift => {
                let slope = (z_hi - z_lo) / scaler.width();
                head.b_raw = softplus_inv(slope);
                head.a = z_lo - slope * scaler.a_lo;
            }
            LinearScale => {
                let mid = 0.5 * (scaler.a_lo + scaler.b_hi);
                head.a = 0.5 * (z_lo + z_hi) - std::f64::consts::LN_2 * mid;
            }
            BernsteinFlexible => {}
        }
        head
    }
}

fn central_range(family: TargetFamily) -> (f64, f64) {
    (
        family.quantile(0.05).expect("valid probability"),
        family.quantile(0.95).expect("valid probability"),
    )
}

/// `h` reduced to its form for one feature vector.
#[derive(Debug, Clone, PartialEq)]
enum Resolved {
    /// `h = intercept + slope * log t`.
    Linear { intercept: f64, slope: f64 },
    /// `h = scale * B(u) + shift` with `B` the Bernstein polynomial of `theta`.
    Bernstein {
        theta: Vec<f64>,
        scale: f64,
        shift: f64,
    },
}

/// Basis weights `(c, d)` with `B(u) = c . theta` and `B'(u) = d . theta`,
/// including the linear continuation outside [0, 1].
fn basis_weights(order: usize, u: f64) -> (Vec<f64>, Vec<f64>) {
    if u < 0.0 {
        let d = bernstein_deriv_weights(order, 0.0);
        let mut c = bernstein_unchecked(order, 0.0);
        for (ci, di) in c.iter_mut().zip(&d) {
            *ci += u * di;
        }
        (c, d)
    } else if u > 1.0 {
        let d = bernstein_deriv_weights(order, 1.0);
        let mut c = bernstein_unchecked(order, 1.0);
        for (ci, di) in c.iter_mut().zip(&d) {
            *ci += (u - 1.0) * di;
        }
        (c, d)
    } else {
        (
            bernstein_unchecked(order, u),
            bernstein_deriv_weights(order, u),
        )
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::NonPositiveEvalTime(t));
    }
    Ok(())
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

fn check_shapes(spec: &ModelSpec, head: &HeadParams, features: &[f64]) -> Result<()> {
    let p = spec.parameterization;
    let act = active(p);
    let order = spec.bernstein_order;
    if p.uses_extractor() {
        check_len("features", spec.feature_dim(), features.len())?;
    }
    if act.w {
        check_len("head w", features.len(), head.w.len())?;
    }
    if act.beta {
        check_len("head beta", features.len(), head.beta.len())?;
    }
    if act.gamma {
        check_len("head gamma", order + 1, head.gamma.len())?;
    }
    if p.uses_bernstein() && order < 1 {
        return Err(Error::InvalidOrder(order));
    }
    Ok(())
}

fn resolve(spec: &ModelSpec, head: &HeadParams, features: &[f64]) -> Result<Resolved> {
    use Parameterization::*;
    check_shapes(spec, head, features)?;
    Ok(match spec.parameterization {
        Baseline => Resolved::Bernstein {
            theta: monotone_reparam(&head.gamma),
            scale: 1.0,
            shift: 0.0,
        },
        LinearShift => Resolved::Linear {
            intercept: head.a + dot(features, &head.w),
            slope: softplus(head.b_raw),
        },
        LinearScale => Resolved::Linear {
            intercept: head.a,
            slope: softplus(dot(features, &head.w)),
        },
        BernsteinShift => Resolved::Bernstein {
            theta: monotone_reparam(&head.gamma),
            scale: 1.0,
            shift: dot(features, &head.w),
        },
        BernsteinShiftScale => Resolved::Bernstein {
            theta: monotone_reparam(&head.gamma),
            scale: softplus(dot(features, &head.beta)),
            shift: dot(features, &head.w),
        },
        BernsteinFlexible => Resolved::Bernstein {
            theta: monotone_reparam(features),
            scale: 1.0,
            shift: 0.0,
        },
    })
}

impl Resolved {
    fn eval(&self, t: f64, scaler: &LogTimeScaler) -> (f64, f64) {
        let log_t = t.ln();
        match self {
            Resolved::Linear { intercept, slope } => (intercept + slope * log_t, slope / t),
            Resolved::Bernstein {
                theta,
                scale,
                shift,
            } => {
                let (c, d) = basis_weights(theta.len() - 1, scaler.scale(log_t));
                let h = scale * dot(&c, theta) + shift;
                let dh_dt = scale * dot(&d, theta) / (scaler.width() * t);
                (h, dh_dt)
            }
        }
    }

    fn h_at_log(&self, log_t: f64, scaler: &LogTimeScaler) -> f64 {
        match self {
            Resolved::Linear { intercept, slope } => intercept + slope * log_t,
            Resolved::Bernstein {
                theta,
                scale,
                shift,
            } => {
                let (c, _) = basis_weights(theta.len() - 1, scaler.scale(log_t));
                scale * dot(&c, theta) + shift
            }
        }
    }
}

/// `(h(t | x), dh/dt)` for one feature vector.
pub fn eval_transform(
    spec: &ModelSpec,
    head: &HeadParams,
    features: &[f64],
    t: f64,
    scaler: &LogTimeScaler,
) -> Result<(f64, f64)> {
    check_time(t)?;
    Ok(resolve(spec, head, features)?.eval(t, scaler))
}

/// Gradients of `upstream_h * h + upstream_dhdt * dh/dt` with respect to the
/// active head parameters (same layout as `head`) and to the features.
pub fn grad_transform(
    spec: &ModelSpec,
    head: &HeadParams,
    features: &[f64],
    t: f64,
    scaler: &LogTimeScaler,
    upstream_h: f64,
    upstream_dhdt: f64,
) -> Result<(HeadParams, Vec<f64>)> {
    use Parameterization::*;
    check_time(t)?;
    check_shapes(spec, head, features)?;
    let p = spec.parameterization;
    let mut g = HeadParams::zeros(p, features.len(), spec.bernstein_order);
    let mut g_features = vec![
        0.0;
        if p.uses_extractor() {
            features.len()
        } else {
            0
        }
    ];
    let log_t = t.ln();
    let inv_t = 1.0 / t;

    match p {
        LinearShift => {
            g.a = upstream_h;
            g.b_raw = sigmoid(head.b_raw) * (upstream_h * log_t + upstream_dhdt * inv_t);
            for ((gw, gf), (&f, &w)) in
                g.w.iter_mut()
                    .zip(g_features.iter_mut())
                    .zip(features.iter().zip(&head.w))
            {
                *gw = upstream_h * f;
                *gf = upstream_h * w;
            }
        }
        LinearScale => {
            let eta = dot(features, &head.w);
            let g_eta = sigmoid(eta) * (upstream_h * log_t + upstream_dhdt * inv_t);
            g.a = upstream_h;
            for ((gw, gf), (&f, &w)) in
                g.w.iter_mut()
                    .zip(g_features.iter_mut())
                    .zip(features.iter().zip(&head.w))
            {
                *gw = g_eta * f;
                *gf = g_eta * w;
            }
        }
        Baseline | BernsteinShift | BernsteinShiftScale | BernsteinFlexible => {
            let order = spec.bernstein_order;
            let (c, d) = basis_weights(order, scaler.scale(log_t));
            let k = 1.0 / (scaler.width() * t);
            let raw: &[f64] = if p == BernsteinFlexible {
                features
            } else {
                &head.gamma
            };
            let theta = monotone_reparam(raw);
            let (scale, g_eta) = if p == BernsteinShiftScale {
                let eta = dot(features, &head.beta);
                let b = dot(&c, &theta);
                let b_prime = dot(&d, &theta);
                (
                    softplus(eta),
                    sigmoid(eta) * (upstream_h * b + upstream_dhdt * k * b_prime),
                )
            } else {
                (1.0, 0.0)
            };
            let g_theta: Vec<f64> = c
                .iter()
                .zip(&d)
                .map(|(ci, di)| scale * (upstream_h * ci + upstream_dhdt * k * di))
                .collect();
            let g_raw = monotone_reparam_vjp(raw, &g_theta);
            if p == BernsteinFlexible {
                g_features = g_raw;
            } else {
                g.gamma = g_raw;
            }
            if matches!(p, BernsteinShift | BernsteinShiftScale) {
                for ((gw, gf), (&f, &w)) in
                    g.w.iter_mut()
                        .zip(g_features.iter_mut())
                        .zip(features.iter().zip(&head.w))
                {
                    *gw = upstream_h * f;
                    *gf = upstream_h * w;
                }
            }
            if p == BernsteinShiftScale {
                for ((gb, gf), (&f, &b)) in g
                    .beta
                    .iter_mut()
                    .zip(g_features.iter_mut())
                    .zip(features.iter().zip(&head.beta))
                {
                    *gb = g_eta * f;
                    *gf += g_eta * b;
                }
            }
        }
    }
    Ok((g, g_features))
}

/// Shared interface of single-model and ensemble predictions.
pub trait SurvivalPrediction {
    fn cdf(&self, t: f64) -> f64;

    /// Left limit `F(t-)`; equal to [`Self::cdf`] for continuous distributions.
    fn cdf_left(&self, t: f64) -> f64 {
        self.cdf(t)
    }

    fn survivor(&self, t: f64) -> f64 {
        1.0 - self.cdf(t)
    }

    fn quantile(&self, p: f64) -> Result<f64>;

    fn median(&self) -> Result<f64> {
        self.quantile(0.5)
    }

    /// Negative log-likelihood contribution of one observation.
    fn nll(&self, obs: &Observation) -> Result<f64>;
}

/// Anything that maps a covariate vector to a predicted distribution: a single
/// fitted model or an ensemble.
pub trait ConditionalModel: Sync {
    type Distribution: SurvivalPrediction + Send;

    fn distribution(&self, x: &[f64]) -> Result<Self::Distribution>;

    fn scaler(&self) -> LogTimeScaler;

    /// Number of covariates expected per subject.
    fn input_dim(&self) -> usize;
}

/// Conditional distribution of `T` given one covariate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDistribution {
    family: TargetFamily,
    scaler: LogTimeScaler,
    resolved: Resolved,
}

impl ConditionalDistribution {
    pub fn new(
        spec: &ModelSpec,
        head: &HeadParams,
        features: &[f64],
        scaler: LogTimeScaler,
    ) -> Result<Self> {
        Ok(Self {
            family: spec.family,
            scaler,
            resolved: resolve(spec, head, features)?,
        })
    }

    pub fn family(&self) -> TargetFamily {
        self.family
    }

    pub fn scaler(&self) -> &LogTimeScaler {
        &self.scaler
    }

    /// `(h(t), dh/dt)`.
    pub fn transform(&self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        Ok(self.resolved.eval(t, &self.scaler))
    }

    pub fn pdf(&self, t: f64) -> f64 {
        self.log_pdf(t).exp()
    }

    pub fn log_pdf(&self, t: f64) -> f64 {
        match self.transform(t) {
            Ok((h, dh)) => self.family.log_density(h) + dh.ln(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Solves `h(t) = F_Z^-1(p)` by bisection in log-time.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        let z = self.family.quantile(p)?;
        let f = |log_t: f64| self.resolved.h_at_log(log_t, &self.scaler) - z;
        let width = self.scaler.width();
        let mut lo = self.scaler.a_lo;
        let mut hi = self.scaler.b_hi;
        let mut step = width;
        let mut expansions = 0;
        while f(lo) > 0.0 {
            lo -= step;
            step *= 2.0;
            expansions += 1;
            if expansions > 60 {
                return Err(Error::InvalidArgument(format!(
                    "could not bracket quantile {p} from below"
                )));
            }
        }
        step = width;
        while f(hi) < 0.0 {
            hi += step;
            step *= 2.0;
            expansions += 1;
            if expansions > 120 {
                return Err(Error::InvalidArgument(format!(
                    "could not bracket quantile {p} from above"
                )));
            }
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }
}

impl SurvivalPrediction for ConditionalDistribution {
    fn cdf(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        if t <= 0.0 {
            return 0.0;
        }
        if t == f64::INFINITY {
            return 1.0;
        }
        self.family.cdf(self.resolved.eval(t, &self.scaler).0)
    }

    fn survivor(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        if t <= 0.0 {
            return 1.0;
        }
        if t == f64::INFINITY {
            return 0.0;
        }
        self.family.survivor(self.resolved.eval(t, &self.scaler).0)
    }

    fn quantile(&self, p: f64) -> Result<f64> {
        ConditionalDistribution::quantile(self, p)
    }

    fn nll(&self, obs: &Observation) -> Result<f64> {
        Ok(observation_nll(self.family, obs, |t| self.transform(t))?.value)
    }
}
