//! Model specification, trainable state and the persisted model artifact.

use serde::{Deserialize, Serialize};

use crate::basis::{LogTimeScaler, DEFAULT_BERNSTEIN_ORDER};
use crate::error::{Error, Result};
use crate::feature::{extractor_forward, init_params, ExtractorParams, ExtractorSpec, Tape};
use crate::target::TargetFamily;
use crate::transform::{ConditionalDistribution, ConditionalModel, HeadParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Unconditional Bernstein transformation, `h = b(u)' g(gamma)`.
    Baseline,
    /// `h = a + softplus(b_raw) log t + phi(x)' w`.
    LinearShift,
    /// `h = a + softplus(phi(x)' w) log t`.
    LinearScale,
    /// `h = b(u)' g(gamma) + phi(x)' w`.
    BernsteinShift,
    /// `h = softplus(phi(x)' beta) b(u)' g(gamma) + phi(x)' w`.
    BernsteinShiftScale,
    /// `h = b(u)' g(phi(x))`, with `phi(x)` of dimension K + 1.
    BernsteinFlexible,
}

impl Parameterization {
    pub const ALL: [Parameterization; 6] = [
        Parameterization::Baseline,
        Parameterization::LinearShift,
        Parameterization::LinearScale,
        Parameterization::BernsteinShift,
        Parameterization::BernsteinShiftScale,
        Parameterization::BernsteinFlexible,
    ];

    pub fn uses_extractor(self) -> bool {
        self != Parameterization::Baseline
    }

    pub fn uses_bernstein(self) -> bool {
        !matches!(
            self,
            Parameterization::LinearShift | Parameterization::LinearScale
        )
    }
}

/// Default learning rates `(extractor, head)` per configuration. The baseline
/// has no extractor; its extractor rate is the common 0.001 and never used.
pub fn reference_learning_rates(
    parameterization: Parameterization,
    family: TargetFamily,
) -> (f64, f64) {
    use Parameterization::*;
    use TargetFamily::*;
    let head = match (parameterization, family) {
        (Baseline, Logistic) => 0.1,
        (LinearShift, Logistic) => 0.01,
        (LinearScale, Logistic) => 0.1,
        (BernsteinShift, Logistic) => 0.1,
        (BernsteinShiftScale, Logistic) => 0.01,
        (BernsteinFlexible, Logistic) => 0.1,
        (Baseline, MinimumExtremeValue) => 0.01,
        (LinearShift, MinimumExtremeValue) => 0.01,
        (LinearScale, MinimumExtremeValue) => 0.01,
        (BernsteinShift, MinimumExtremeValue) => 0.01,
        (BernsteinShiftScale, MinimumExtremeValue) => 0.01,
        (BernsteinFlexible, MinimumExtremeValue) => 0.1,
    };
    (0.001, head)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: TargetFamily,
    pub parameterization: Parameterization,
    pub bernstein_order: usize,
    pub extractor: ExtractorSpec,
    pub lr_extractor: f64,
    pub lr_head: f64,
    pub epochs: usize,
    pub early_stopping_patience: usize,
    pub seed: u64,
}

impl ModelSpec {
    /// Spec with default order, per-configuration learning rates, 200 epochs and a
    /// patience of 20. For the flexible parameterization the extractor output
    /// dimension is set to `order + 1`.
    pub fn new(
        family: TargetFamily,
        parameterization: Parameterization,
        mut extractor: ExtractorSpec,
    ) -> Self {
        let (lr_extractor, lr_head) = reference_learning_rates(parameterization, family);
        if parameterization == Parameterization::BernsteinFlexible {
            extractor.output_dim = DEFAULT_BERNSTEIN_ORDER + 1;
        }
        Self {
            family,
            parameterization,
            bernstein_order: DEFAULT_BERNSTEIN_ORDER,
            extractor,
            lr_extractor,
            lr_head,
            epochs: 200,
            early_stopping_patience: 20,
            seed: 0,
        }
    }

    /// Sets the Bernstein order, keeping the flexible extractor output in sync.
    pub fn with_order(mut self, order: usize) -> Self {
        self.bernstein_order = order;
        if self.parameterization == Parameterization::BernsteinFlexible {
            self.extractor.output_dim = order + 1;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.parameterization.uses_bernstein() && self.bernstein_order < 1 {
            return Err(Error::InvalidOrder(self.bernstein_order));
        }
        for (name, lr) in [
            ("lr_extractor", self.lr_extractor),
            ("lr_head", self.lr_head),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "{name} must be positive (got {lr})"
                )));
            }
        }
        self.extractor.validate()?;
        if self.parameterization == Parameterization::BernsteinFlexible
            && self.extractor.output_dim != self.bernstein_order + 1
        {
            return Err(Error::InvalidSpec(format!(
                "flexible parameterization needs extractor output_dim = order + 1 = {} (got {})",
                self.bernstein_order + 1,
                self.extractor.output_dim
            )));
        }
        Ok(())
    }

    /// Dimension of the feature vector consumed by the head.
    pub fn feature_dim(&self) -> usize {
        if self.parameterization.uses_extractor() {
            self.extractor.output_dim
        } else {
            0
        }
    }

    pub fn n_head_params(&self) -> usize {
        HeadParams::n_params(
            self.parameterization,
            self.feature_dim(),
            self.bernstein_order,
        )
    }

    pub fn n_extractor_params(&self) -> usize {
        if self.parameterization.uses_extractor() {
            self.extractor.n_params()
        } else {
            0
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_head_params() + self.n_extractor_params()
    }
}

/// Complete parameter state of a model: the head, the extractor and the frozen
/// log-time scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub scaler: LogTimeScaler,
    pub head: HeadParams,
    pub extractor: ExtractorParams,
}

impl ModelState {
    /// Seeded starting point for training; see [`HeadParams::initial`].
    pub fn initial(spec: &ModelSpec, scaler: LogTimeScaler, seed: u64) -> Result<Self> {
        spec.validate()?;
        let head = HeadParams::initial(spec, &scaler);
        let extractor = if spec.parameterization.uses_extractor() {
            let mut params = init_params(&spec.extractor, seed);
            if spec.parameterization == Parameterization::BernsteinFlexible {
                // the output layer produces gamma(x); start it at the reference gamma
                let gamma = HeadParams::initial_gamma(spec.family, spec.bernstein_order, 1.0);
                if let Some(last) = params.layers.last_mut() {
                    last.bias.copy_from_slice(&gamma);
                }
            }
            params
        } else {
            ExtractorParams { layers: Vec::new() }
        };
        Ok(Self {
            spec: spec.clone(),
            scaler,
            head,
            extractor,
        })
    }

    pub fn from_flat(spec: &ModelSpec, scaler: LogTimeScaler, flat: &[f64]) -> Result<Self> {
        let n_head = spec.n_head_params();
        if flat.len() != spec.n_params() {
            return Err(Error::DimensionMismatch {
                context: "model parameters",
                expected: spec.n_params(),
                found: flat.len(),
            });
        }
        Self::from_parts(spec, scaler, &flat[..n_head], &flat[n_head..])
    }

    fn from_parts(
        spec: &ModelSpec,
        scaler: LogTimeScaler,
        head: &[f64],
        extractor: &[f64],
    ) -> Result<Self> {
        let head = HeadParams::unflatten(
            spec.parameterization,
            spec.feature_dim(),
            spec.bernstein_order,
            head,
        )?;
        let extractor = if spec.parameterization.uses_extractor() {
            ExtractorParams::unflatten(&spec.extractor, extractor)?
        } else if extractor.is_empty() {
            ExtractorParams { layers: Vec::new() }
        } else {
            return Err(Error::DimensionMismatch {
                context: "extractor parameters",
                expected: 0,
                found: extractor.len(),
            });
        };
        Ok(Self {
            spec: spec.clone(),
            scaler,
            head,
            extractor,
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = self.head.flatten(self.spec.parameterization);
        flat.extend(self.extractor.flatten());
        flat
    }

    /// Extractor output for `x`, with the forward tape when an extractor is used.
    pub fn features(&self, x: &[f64]) -> Result<(Vec<f64>, Option<Tape>)> {
        if !self.spec.parameterization.uses_extractor() {
            return Ok((Vec::new(), None));
        }
        let (f, tape) = extractor_forward(&self.spec.extractor, &self.extractor, x)?;
        Ok((f, Some(tape)))
    }

    pub fn conditional(&self, x: &[f64]) -> Result<ConditionalDistribution> {
        let (features, _) = self.features(x)?;
        ConditionalDistribution::new(&self.spec, &self.head, &features, self.scaler)
    }
}

/// Trained model, immutable once produced by fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub scaler: LogTimeScaler,
    pub head_params: Vec<f64>,
    pub extractor_params: Vec<f64>,
    pub train_nll: f64,
    pub validation_nll: f64,
}

impl FittedModel {
    pub fn from_state(state: &ModelState, train_nll: f64, validation_nll: f64) -> Self {
        Self {
            spec: state.spec.clone(),
            scaler: state.scaler,
            head_params: state.head.flatten(state.spec.parameterization),
            extractor_params: state.extractor.flatten(),
            train_nll,
            validation_nll,
        }
    }

    pub fn state(&self) -> Result<ModelState> {
        ModelState::from_parts(
            &self.spec,
            self.scaler,
            &self.head_params,
            &self.extractor_params,
        )
    }

    /// Conditional distribution of the event time given covariates `x`.
    pub fn conditional_distribution(&self, x: &[f64]) -> Result<ConditionalDistribution> {
        if x.len() != self.spec.extractor.input_dim {
            return Err(Error::DimensionMismatch {
                context: "covariates",
                expected: self.spec.extractor.input_dim,
                found: x.len(),
            });
        }
        self.state()?.conditional(x)
    }

    /// Checks the artifact invariants: finite values, consistent lengths and a
    /// valid scaler.
    pub fn check(&self) -> Result<()> {
        self.spec
            .validate()
            .map_err(|e| Error::MalformedArtifact(e.to_string()))?;
        LogTimeScaler::new(self.scaler.a_lo, self.scaler.b_hi)
            .map_err(|e| Error::MalformedArtifact(e.to_string()))?;
        if self.head_params.len() != self.spec.n_head_params()
            || self.extractor_params.len() != self.spec.n_extractor_params()
        {
            return Err(Error::MalformedArtifact(format!(
                "expected {} head and {} extractor parameters, found {} and {}",
                self.spec.n_head_params(),
                self.spec.n_extractor_params(),
                self.head_params.len(),
                self.extractor_params.len()
            )));
        }
        let all_finite = self
            .head_params
            .iter()
            .chain(&self.extractor_params)
            .chain([&self.train_nll, &self.validation_nll])
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::MalformedArtifact("non-finite parameter".into()));
        }
        Ok(())
    }
}

impl ConditionalModel for FittedModel {
    type Distribution = ConditionalDistribution;

    fn distribution(&self, x: &[f64]) -> Result<ConditionalDistribution> {
        self.conditional_distribution(x)
    }

    fn scaler(&self) -> LogTimeScaler {
        self.scaler
    }

    fn input_dim(&self) -> usize {
        self.spec.extractor.input_dim
    }
}

#[derive(Serialize)]
struct ArtifactOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    model: &'a FittedModel,
}

/// Encodes the model as a JSON artifact. Floats are written in shortest
/// round-trip form, so decoding restores every value exactly.
pub fn serialize_model(model: &FittedModel) -> Result<Vec<u8>> {
    model.check()?;
    let mut bytes = serde_json::to_vec_pretty(&ArtifactOut {
        schema_version: SCHEMA_VERSION,
        model,
    })
    .map_err(|e| Error::MalformedArtifact(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn deserialize_model(bytes: &[u8]) -> Result<FittedModel> {
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
    let model: FittedModel =
        serde_json::from_value(value).map_err(|e| Error::MalformedArtifact(e.to_string()))?;
    model.check()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::Activation;

    fn sample_model() -> FittedModel {
        let extractor = ExtractorSpec {
            input_dim: 3,
            hidden_dims: vec![4],
            output_dim: 2,
            activation: Activation::Tanh,
            init_scale: 1.0,
        };
        let spec = ModelSpec::new(
            TargetFamily::Logistic,
            Parameterization::BernsteinShiftScale,
            extractor,
        );
        let scaler = LogTimeScaler::new(-0.3, 2.7).unwrap();
        let state = ModelState::initial(&spec, scaler, 4).unwrap();
        FittedModel::from_state(&state, 1.234_567_890_123_456_7, 0.1 + 0.2)
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = sample_model();
        let bytes = serialize_model(&m).unwrap();
        let back = deserialize_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.validation_nll.to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn artifact_has_documented_keys() {
        let bytes = serialize_model(&sample_model()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "extractor_params",
                "head_params",
                "scaler",
                "schema_version",
                "spec",
                "train_nll",
                "validation_nll"
            ]
        );
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["spec"]["parameterization"], "bernstein_shift_scale");
        assert_eq!(v["spec"]["family"], "logistic");
    }

    #[test]
    fn truncated_and_mismatched_artifacts() {
        let bytes = serialize_model(&sample_model()).unwrap();
        assert!(matches!(
            deserialize_model(&bytes[..bytes.len() / 2]),
            Err(Error::MalformedArtifact(_))
        ));
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["schema_version"] = 2.into();
        assert_eq!(
            deserialize_model(&serde_json::to_vec(&v).unwrap()),
            Err(Error::SchemaVersionMismatch {
                expected: 1,
                found: 2
            })
        );
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["head_params"].as_array_mut().unwrap().pop();
        assert!(matches!(
            deserialize_model(&serde_json::to_vec(&v).unwrap()),
            Err(Error::MalformedArtifact(_))
        ));
    }

    #[test]
    fn reference_rates() {
        use Parameterization::*;
        use TargetFamily::*;
        assert_eq!(
            reference_learning_rates(BernsteinShift, Logistic),
            (0.001, 0.1)
        );
        assert_eq!(
            reference_learning_rates(LinearShift, Logistic),
            (0.001, 0.01)
        );
        assert_eq!(
            reference_learning_rates(Baseline, MinimumExtremeValue).1,
            0.01
        );
        assert_eq!(
            reference_learning_rates(BernsteinFlexible, MinimumExtremeValue).1,
            0.1
        );
    }

    #[test]
    fn spec_validation() {
        let mut spec = ModelSpec::new(
            TargetFamily::Logistic,
            Parameterization::BernsteinFlexible,
            ExtractorSpec::linear(2, 2),
        );
        assert_eq!(spec.extractor.output_dim, 7);
        spec.validate().unwrap();
        spec.extractor.output_dim = 3;
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
        let mut spec = ModelSpec::new(
            TargetFamily::Logistic,
            Parameterization::LinearShift,
            ExtractorSpec::linear(2, 2),
        );
        spec.bernstein_order = 0;
        spec.validate().unwrap();
        spec.lr_head = 0.0;
        assert!(spec.validate().is_err());
    }
}
