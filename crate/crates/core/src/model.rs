//! Fitted predictors together with the window shape and scaling they were
//! trained with, stored as flat JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{mlp_forward, predict_linear, AverageModel, LinearModel, LogisticModel, MlpModel};
use crate::cnn::{didactic_forward, DidacticCnnParams, GeneralCnnModel};
use crate::error::{Error, Result};
use crate::grid::{NormalizationParams, WindowSpec};
use crate::optim::Trainable;

/// Model parameters, tagged by `model_type`. Every variant works in
/// normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "kebab-case")]
pub enum Predictor {
    Avg(AverageModel),
    Linear(LinearModel),
    Logistic(LogisticModel),
    Nn(MlpModel),
    CnnDidactic(DidacticCnnParams),
    CnnGeneral(GeneralCnnModel),
}

impl Predictor {
    pub fn model_type(&self) -> &'static str {
        match self {
            Predictor::Avg(_) => "avg",
            Predictor::Linear(_) => "linear",
            Predictor::Logistic(_) => "logistic",
            Predictor::Nn(_) => "nn",
            Predictor::CnnDidactic(_) => "cnn-didactic",
            Predictor::CnnGeneral(_) => "cnn-general",
        }
    }

    /// Prediction for an already normalized window.
    pub fn predict_normalized(&self, window: &[f64]) -> Result<f64> {
        match self {
            Predictor::Avg(m) => Ok(m.mean),
            Predictor::Linear(m) => predict_linear(m, window),
            Predictor::Logistic(m) => {
                if window.len() + 1 != m.params.len() {
                    return Err(Error::shape(format!("{} window values", m.params.len() - 1), window.len()));
                }
                Ok(m.predict(window))
            }
            Predictor::Nn(m) => mlp_forward(m, window),
            Predictor::CnnDidactic(p) => Ok(didactic_forward(window, p)?.prediction),
            Predictor::CnnGeneral(m) => m.forward(window),
        }
    }

    /// Checks the parameter shapes against `window`.
    pub fn validate(&self, window: &WindowSpec) -> Result<()> {
        let n = window.len();
        let expect = |what: &str, want: usize, got: usize| {
            if want == got {
                Ok(())
            } else {
                Err(Error::shape(format!("{want} {what}"), got))
            }
        };
        match self {
            Predictor::Avg(m) => {
                if !m.mean.is_finite() {
                    return Err(Error::InvalidParams("non-finite mean".into()));
                }
                Ok(())
            }
            Predictor::Linear(m) => {
                expect("linear weights", n, m.weights.len())?;
                if !m.bias.is_finite() || !crate::math::all_finite(&m.weights) {
                    return Err(Error::InvalidParams("non-finite linear weight".into()));
                }
                Ok(())
            }
            Predictor::Logistic(m) => {
                expect("logistic parameters", n + 1, m.params.len())?;
                if !crate::math::all_finite(&m.params) {
                    return Err(Error::InvalidParams("non-finite logistic weight".into()));
                }
                Ok(())
            }
            Predictor::Nn(m) => {
                expect("network inputs", n, m.inputs)?;
                m.validate()
            }
            Predictor::CnnDidactic(p) => {
                if window.rows != 3 || window.cols() != 3 {
                    return Err(Error::shape("3×3 window", format!("{}×{}", window.rows, window.cols())));
                }
                p.validate()
            }
            Predictor::CnnGeneral(m) => {
                if m.arch.input_rows != window.rows || m.arch.input_cols != window.cols() {
                    return Err(Error::shape(
                        format!("{}×{} window", m.arch.input_rows, m.arch.input_cols),
                        format!("{}×{}", window.rows, window.cols()),
                    ));
                }
                m.validate()
            }
        }
    }
}

/// A fitted predictor ready to run on raw travel times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    #[serde(flatten)]
    pub predictor: Predictor,
    pub window: WindowSpec,
    pub normalization: NormalizationParams,
    pub seed: u64,
    /// Training settings of the method, kept for reference.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl SavedModel {
    pub fn validate(&self) -> Result<()> {
        NormalizationParams::new(self.normalization.t_min, self.normalization.t_max)?;
        if self.window.rows == 0 || self.window.target >= self.window.rows {
            return Err(Error::Config(format!(
                "target row {} outside a {}-row window",
                self.window.target, self.window.rows
            )));
        }
        self.predictor.validate(&self.window)
    }

    /// Prediction in hours for a raw window.
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        let scaled: Vec<f64> = window.iter().map(|v| self.normalization.normalize(*v)).collect();
        Ok(self.normalization.denormalize(self.predictor.predict_normalized(&scaled)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and re-validates the shape chain.
    pub fn from_json(s: &str) -> Result<Self> {
        let m: SavedModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
