//! Censoring-aware negative log-likelihood and its gradient.

use log::debug;

use crate::data::{CensoringKind, Observation};
use crate::error::{Error, Result};
use crate::feature::extractor_backward_into;
use crate::model::ModelState;
use crate::target::TargetFamily;
use crate::transform::{eval_transform, grad_transform, SurvivalPrediction};

/// Interval probabilities below this value are clamped.
pub const INTERVAL_EPS: f64 = 1e-12;

/// Sensitivity of one NLL contribution to `h(t)` and `dh/dt` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TermGrad {
    pub t: f64,
    pub d_h: f64,
    pub d_dhdt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ObservationNll {
    pub value: f64,
    /// At most two entries (interval censoring evaluates `h` twice).
    pub terms: Vec<TermGrad>,
    /// The interval probability underflowed and was clamped.
    pub degenerate: bool,
}

fn single(value: f64, t: f64, d_h: f64, d_dhdt: f64) -> ObservationNll {
    ObservationNll {
        value,
        terms: vec![TermGrad { t, d_h, d_dhdt }],
        degenerate: false,
    }
}

/// NLL of one observation given a way to evaluate `(h(t), dh/dt)`. Every
/// caller goes through here, so training, scoring and reporting agree bitwise.
pub(crate) fn observation_nll(
    family: TargetFamily,
    obs: &Observation,
    mut eval: impl FnMut(f64) -> Result<(f64, f64)>,
) -> Result<ObservationNll> {
    let right = |t: f64, h: f64| single(-family.log_survivor(h), t, -family.d_log_survivor(h), 0.0);
    match obs.censoring {
        CensoringKind::Exact => {
            let t = obs.time_lower;
            let (h, dh) = eval(t)?;
            Ok(single(
                -family.log_density(h) - dh.ln(),
                t,
                -family.d_log_density(h),
                -1.0 / dh,
            ))
        }
        CensoringKind::RightCensored => {
            let t = obs.time_lower;
            Ok(right(t, eval(t)?.0))
        }
        CensoringKind::LeftCensored => {
            let t = obs.time_upper;
            let (h, _) = eval(t)?;
            Ok(single(-family.log_cdf(h), t, -family.d_log_cdf(h), 0.0))
        }
        CensoringKind::IntervalCensored => {
            let (tl, tu) = (obs.time_lower, obs.time_upper);
            if tu == f64::INFINITY {
                return Ok(right(tl, eval(tl)?.0));
            }
            let (hl, _) = eval(tl)?;
            let (hu, _) = eval(tu)?;
            let (ls_l, ls_u) = (family.log_survivor(hl), family.log_survivor(hu));
            // log(S(l) - S(u)) = log S(l) + log(1 - exp(delta))
            let delta = ls_u - ls_l;
            let one_minus = -delta.exp_m1();
            let log_p = ls_l + one_minus.ln();
            if !(one_minus > 0.0 && log_p >= INTERVAL_EPS.ln()) {
                return Ok(ObservationNll {
                    value: -INTERVAL_EPS.ln(),
                    terms: Vec::new(),
                    degenerate: true,
                });
            }
            let r = delta.exp() / one_minus;
            Ok(ObservationNll {
                value: -log_p,
                terms: vec![
                    TermGrad {
                        t: tl,
                        d_h: -(1.0 + r) * family.d_log_survivor(hl),
                        d_dhdt: 0.0,
                    },
                    TermGrad {
                        t: tu,
                        d_h: r * family.d_log_survivor(hu),
                        d_dhdt: 0.0,
                    },
                ],
                degenerate: false,
            })
        }
    }
}

/// Negative log-likelihood contribution of one observation.
pub fn nll_observation(state: &ModelState, obs: &Observation) -> Result<f64> {
    state.conditional(&obs.covariates)?.nll(obs)
}

/// Sum of the NLL over `observations` and its gradient with respect to the
/// flat parameter vector (head first, then extractor).
pub fn nll_batch(state: &ModelState, observations: &[Observation]) -> Result<(f64, Vec<f64>)> {
    if observations.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut grad = vec![0.0; state.spec.n_params()];
    let acc = accumulate(state, observations.iter(), Some(&mut grad))?;
    Ok((acc.sum, grad))
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Accumulated {
    pub sum: f64,
    pub degenerate: usize,
}

/// Sums NLL terms in iteration order, adding gradients into `grad` if given.
pub(crate) fn accumulate<'a>(
    state: &ModelState,
    observations: impl Iterator<Item = &'a Observation>,
    mut grad: Option<&mut [f64]>,
) -> Result<Accumulated> {
    let spec = &state.spec;
    let n_head = spec.n_head_params();
    let mut acc = Accumulated::default();
    for obs in observations {
        let (features, tape) = state.features(&obs.covariates)?;
        let term = observation_nll(spec.family, obs, |t| {
            eval_transform(spec, &state.head, &features, t, &state.scaler)
        })?;
        acc.sum += term.value;
        if term.degenerate {
            acc.degenerate += 1;
            debug!("interval probability below {INTERVAL_EPS:e}; contribution clamped");
        }
        let Some(grad) = grad.as_deref_mut() else {
            continue;
        };
        let mut upstream = vec![0.0; features.len()];
        for g in &term.terms {
            let (g_head, g_features) = grad_transform(
                spec,
                &state.head,
                &features,
                g.t,
                &state.scaler,
                g.d_h,
                g.d_dhdt,
            )?;
            for (dst, src) in grad[..n_head]
                .iter_mut()
                .zip(g_head.flatten(spec.parameterization))
            {
                *dst += src;
            }
            for (u, v) in upstream.iter_mut().zip(&g_features) {
                *u += v;
            }
        }
        if let Some(tape) = tape {
            if !term.terms.is_empty() {
                extractor_backward_into(
                    &spec.extractor,
                    &state.extractor,
                    &tape,
                    &upstream,
                    &mut grad[n_head..],
                )?;
            }
        }
    }
    Ok(acc)
}
