//! Comparison predictors: historical average, linear and logistic
//! regression over the flattened window, and a one-hidden-layer sigmoid
//! network.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NormalizationParams, TrainingSample};
use crate::math::{dot, sigmoid, sigmoid_grad_from_output};
use crate::optim::{full_batch_descent, DescentConfig, Trainable};

/// Mean of the historical values of the target segment.
pub fn predict_unweighted_average(history: &[f64]) -> Result<f64> {
    crate::math::mean(history).ok_or_else(|| Error::NoData("empty history".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageModel {
    pub mean: f64,
    pub history_len: usize,
}

impl AverageModel {
    pub fn fit(history: &[f64]) -> Result<Self> {
        Ok(Self { mean: predict_unweighted_average(history)?, history_len: history.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Ridge damping added to the normal equations so that singular designs
/// (constant or duplicated columns) still have a unique solution.
pub const RIDGE_DAMPING: f64 = 1e-8;

fn check_batch(samples: &[TrainingSample]) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::NoData("no training samples".into()))?;
    let n = first.window.len();
    if let Some(bad) = samples.iter().find(|s| s.window.len() != n) {
        return Err(Error::shape(format!("{n} window values"), bad.window.len()));
    }
    Ok(n)
}

/// Least squares on flattened windows, solved in closed form.
///
/// Inputs and targets are centred first, so the bias is not damped and a
/// zero-variance column gets a zero weight.
pub fn fit_linear(samples: &[TrainingSample]) -> Result<LinearModel> {
    let n_in = check_batch(samples)?;
    if samples.len() < n_in + 1 {
        return Err(Error::Underdetermined { samples: samples.len(), parameters: n_in + 1 });
    }
    let m = samples.len() as f64;
    let mut x_mean = vec![0.0; n_in];
    let mut y_mean = 0.0;
    for s in samples {
        for (acc, v) in x_mean.iter_mut().zip(&s.window) {
            *acc += v;
        }
        y_mean += s.target;
    }
    x_mean.iter_mut().for_each(|v| *v /= m);
    y_mean /= m;

    let x = DMatrix::from_fn(samples.len(), n_in, |r, c| samples[r].window[c] - x_mean[c]);
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.target - y_mean));
    let mut gram = x.transpose() * &x;
    for i in 0..n_in {
        gram[(i, i)] += RIDGE_DAMPING;
    }
    let rhs = x.transpose() * y;
    let weights = gram
        .cholesky()
        .ok_or_else(|| Error::Data("normal equations are not positive definite".into()))?
        .solve(&rhs);
    let weights: Vec<f64> = weights.iter().copied().collect();
    let bias = y_mean - dot(&weights, &x_mean);
    if !crate::math::all_finite(&weights) || !bias.is_finite() {
        return Err(Error::Data("linear fit produced non-finite coefficients".into()));
    }
    Ok(LinearModel { weights, bias })
}

pub fn predict_linear(model: &LinearModel, window: &[f64]) -> Result<f64> {
    if window.len() != model.weights.len() {
        return Err(Error::shape(format!("{} window values", model.weights.len()), window.len()));
    }
    Ok(dot(&model.weights, window) + model.bias)
}

/// `S(w·x + b)` on normalized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Window weights followed by the bias.
    pub params: Vec<f64>,
}

impl LogisticModel {
    pub fn new(weights: &[f64], bias: f64) -> Self {
        let mut params = weights.to_vec();
        params.push(bias);
        Self { params }
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.params.len() - 1]
    }

    pub fn bias(&self) -> f64 {
        *self.params.last().unwrap()
    }
}

impl Trainable for LogisticModel {
    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn predict(&self, window: &[f64]) -> f64 {
        sigmoid(dot(self.weights(), window) + self.bias())
    }

    fn loss_and_gradient(&self, batch: &[TrainingSample], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n_in = self.params.len() - 1;
        let mut loss = 0.0;
        for s in batch {
            let y = self.predict(&s.window);
            let delta = y - s.target;
            loss += 0.5 * delta * delta;
            let dz = delta * sigmoid_grad_from_output(y);
            for (g, x) in grad[..n_in].iter_mut().zip(&s.window) {
                *g += dz * x;
            }
            grad[n_in] += dz;
        }
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        loss / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub descent: DescentConfig,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { descent: DescentConfig::adam(0.05, 2000), seed: 0 }
    }
}

/// Full-batch descent on samples already scaled into (0, 1).
pub fn fit_logistic(samples: &[TrainingSample], cfg: &LogisticConfig) -> Result<(LogisticModel, Vec<f64>)> {
    let n_in = check_batch(samples)?;
    let mut rng = crate::math::seeded_rng(cfg.seed);
    let mut model = LogisticModel { params: crate::math::uniform_init(&mut rng, n_in + 1) };
    let history = full_batch_descent(&mut model, samples, &cfg.descent)?;
    Ok((model, history))
}

/// Prediction in hours from a raw window: normalize, apply the model,
/// map the sigmoid output back.
pub fn predict_logistic(model: &LogisticModel, norm: &NormalizationParams, window: &[f64]) -> Result<f64> {
    if window.len() + 1 != model.params.len() {
        return Err(Error::shape(format!("{} window values", model.params.len() - 1), window.len()));
    }
    let scaled: Vec<f64> = window.iter().map(|v| norm.normalize(*v)).collect();
    Ok(norm.denormalize(model.predict(&scaled)))
}

/// One hidden sigmoid layer feeding one sigmoid output.
///
/// Flat layout: hidden weights `[hidden][input]`, hidden biases, output
/// weights, output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub inputs: usize,
    pub hidden_count: usize,
    pub params: Vec<f64>,
}

impl MlpModel {
    pub fn parameter_count(inputs: usize, hidden: usize) -> usize {
        hidden * inputs + hidden + hidden + 1
    }

    pub fn zeros(inputs: usize, hidden_count: usize) -> Self {
        Self { inputs, hidden_count, params: vec![0.0; Self::parameter_count(inputs, hidden_count)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.hidden_count == 0 {
            return Err(Error::Config("MLP needs at least one input and one hidden unit".into()));
        }
        let expected = Self::parameter_count(self.inputs, self.hidden_count);
        if self.params.len() != expected {
            return Err(Error::shape(format!("{expected} parameters"), self.params.len()));
        }
        if !crate::math::all_finite(&self.params) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        Ok(())
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let hb = self.hidden_count * self.inputs;
        let ow = hb + self.hidden_count;
        let ob = ow + self.hidden_count;
        (hb, ow, ob)
    }

    fn hidden_into(&self, window: &[f64], hidden: &mut [f64]) -> f64 {
        let (hb, ow, ob) = self.offsets();
        for (k, h) in hidden.iter_mut().enumerate() {
            let row = &self.params[k * self.inputs..(k + 1) * self.inputs];
            *h = sigmoid(dot(row, window) + self.params[hb + k]);
        }
        sigmoid(dot(&self.params[ow..ob], hidden) + self.params[ob])
    }
}

/// Normalized-scale output of the network.
pub fn mlp_forward(model: &MlpModel, window: &[f64]) -> Result<f64> {
    if window.len() != model.inputs {
        return Err(Error::shape(format!("{} window values", model.inputs), window.len()));
    }
    Ok(model.predict(window))
}

impl Trainable for MlpModel {
    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn predict(&self, window: &[f64]) -> f64 {
        let mut hidden = vec![0.0; self.hidden_count];
        self.hidden_into(window, &mut hidden)
    }

    fn loss_and_gradient(&self, batch: &[TrainingSample], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (hb, ow, ob) = self.offsets();
        let mut hidden = vec![0.0; self.hidden_count];
        let mut loss = 0.0;
        for s in batch {
            let y = self.hidden_into(&s.window, &mut hidden);
            let delta = y - s.target;
            loss += 0.5 * delta * delta;
            let dz_out = delta * sigmoid_grad_from_output(y);
            grad[ob] += dz_out;
            for (k, h) in hidden.iter().enumerate() {
                grad[ow + k] += dz_out * h;
                let dz_h = dz_out * self.params[ow + k] * sigmoid_grad_from_output(*h);
                grad[hb + k] += dz_h;
                for (g, x) in grad[k * self.inputs..(k + 1) * self.inputs].iter_mut().zip(&s.window) {
                    *g += dz_h * x;
                }
            }
        }
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        loss / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_count: usize,
    pub descent: DescentConfig,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden_count: 2, descent: DescentConfig::adam(0.05, 3000), seed: 0 }
    }
}

pub fn mlp_train(samples: &[TrainingSample], cfg: &MlpConfig) -> Result<(MlpModel, Vec<f64>)> {
    let n_in = check_batch(samples)?;
    let mut model = MlpModel::zeros(n_in, cfg.hidden_count);
    model.validate()?;
    let mut rng = crate::math::seeded_rng(cfg.seed);
    model.params = crate::math::uniform_init(&mut rng, model.params.len());
    let history = full_batch_descent(&mut model, samples, &cfg.descent)?;
    Ok((model, history))
}
