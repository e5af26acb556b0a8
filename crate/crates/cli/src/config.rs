//! Model and training configuration: a flat TOML file whose keys can each be
//! overridden by a command-line flag of the same name.

use std::path::Path;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tramsurv::model::reference_learning_rates;
use tramsurv::{Activation, ExtractorSpec, ModelSpec, Parameterization, TargetFamily, TrainConfig};

use crate::error::{CliError, CliResult};

/// Every field is optional; unset fields fall back to the defaults documented
/// on each flag.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    /// logistic | minimum_extreme_value [default: logistic]
    #[arg(long = "family")]
    pub family: Option<String>,
    /// baseline | linear_shift | linear_scale | bernstein_shift |
    /// bernstein_shift_scale | bernstein_flexible [default: bernstein_shift]
    #[arg(long = "parameterization")]
    pub parameterization: Option<String>,
    /// Bernstein order K [default: 6]
    #[arg(long = "bernstein_order")]
    pub bernstein_order: Option<usize>,
    /// Hidden layer widths, comma separated [default: none]
    #[arg(long = "hidden_dims", value_delimiter = ',')]
    pub hidden_dims: Option<Vec<usize>>,
    /// Feature dimension [default: number of covariates; K + 1 for flexible]
    #[arg(long = "output_dim")]
    pub output_dim: Option<usize>,
    /// relu | tanh [default: relu]
    #[arg(long = "activation")]
    pub activation: Option<String>,
    /// Scale of the uniform weight initialization [default: 1]
    #[arg(long = "init_scale")]
    pub init_scale: Option<f64>,
    /// [default: per-configuration rate]
    #[arg(long = "lr_extractor")]
    pub lr_extractor: Option<f64>,
    /// [default: per-configuration rate]
    #[arg(long = "lr_head")]
    pub lr_head: Option<f64>,
    /// [default: 200]
    #[arg(long = "epochs")]
    pub epochs: Option<usize>,
    /// [default: 20]
    #[arg(long = "early_stopping_patience")]
    pub early_stopping_patience: Option<usize>,
    /// [default: 0]
    #[arg(long = "seed")]
    pub seed: Option<u64>,
    /// [default: 32]
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    /// [default: 0.2]
    #[arg(long = "validation_fraction")]
    pub validation_fraction: Option<f64>,
    /// [default: 0]
    #[arg(long = "momentum")]
    pub momentum: Option<f64>,
    /// [default: 10]
    #[arg(long = "clip_norm")]
    pub clip_norm: Option<f64>,
    /// [default: 0]
    #[arg(long = "scaler_margin")]
    pub scaler_margin: Option<f64>,
}

macro_rules! merge_fields {
    ($base:ident, $over:ident; $($f:ident),*) => {
        SpecConfig { $($f: $over.$f.clone().or($base.$f.clone())),* }
    };
}

fn parse_enum<T: DeserializeOwned>(key: &str, value: &str) -> CliResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| CliError::Config(format!("unknown {key} `{value}`")))
}

impl SpecConfig {
    pub fn from_toml_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` win.
    pub fn merged(&self, over: &SpecConfig) -> SpecConfig {
        let base = self;
        merge_fields!(base, over;
            family, parameterization, bernstein_order, hidden_dims, output_dim, activation,
            init_scale, lr_extractor, lr_head, epochs, early_stopping_patience, seed,
            batch_size, validation_fraction, momentum, clip_norm, scaler_margin)
    }

    /// Fills defaults and builds the model specification for `input_dim`
    /// covariates together with the optimizer settings.
    pub fn resolve(&self, input_dim: usize) -> CliResult<(ModelSpec, TrainConfig)> {
        let family: TargetFamily =
            parse_enum("family", self.family.as_deref().unwrap_or("logistic"))?;
        let parameterization: Parameterization = parse_enum(
            "parameterization",
            self.parameterization
                .as_deref()
                .unwrap_or("bernstein_shift"),
        )?;
        let activation: Activation =
            parse_enum("activation", self.activation.as_deref().unwrap_or("relu"))?;
        let extractor = ExtractorSpec {
            input_dim: input_dim.max(1),
            hidden_dims: self.hidden_dims.clone().unwrap_or_default(),
            output_dim: self.output_dim.unwrap_or(input_dim.max(1)),
            activation,
            init_scale: self.init_scale.unwrap_or(1.0),
        };
        let order = self
            .bernstein_order
            .unwrap_or(tramsurv::basis::DEFAULT_BERNSTEIN_ORDER);
        let mut spec = ModelSpec::new(family, parameterization, extractor).with_order(order);
        if let Some(d) = self.output_dim {
            spec.extractor.output_dim = d;
        }
        let (lr_extractor, lr_head) = reference_learning_rates(parameterization, family);
        spec.lr_extractor = self.lr_extractor.unwrap_or(lr_extractor);
        spec.lr_head = self.lr_head.unwrap_or(lr_head);
        if let Some(e) = self.epochs {
            spec.epochs = e;
        }
        if let Some(p) = self.early_stopping_patience {
            spec.early_stopping_patience = p;
        }
        spec.seed = self.seed.unwrap_or(0);
        spec.validate()?;

        let defaults = TrainConfig::default();
        let config = TrainConfig {
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            validation_fraction: self
                .validation_fraction
                .unwrap_or(defaults.validation_fraction),
            momentum: self.momentum.unwrap_or(defaults.momentum),
            clip_norm: self.clip_norm.unwrap_or(defaults.clip_norm),
            scaler_margin: self.scaler_margin.unwrap_or(defaults.scaler_margin),
        };
        config.validate()?;
        Ok((spec, config))
    }
}
