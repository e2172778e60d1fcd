//! Full-batch gradient descent over models that expose a flat parameter
//! vector, with a heavy-ball or Adam step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TrainingSample;

/// A predictor trained on the squared error `½(ŷ − t)²`, averaged over a
/// batch.
pub trait Trainable {
    fn parameters(&self) -> &[f64];
    fn parameters_mut(&mut self) -> &mut [f64];

    /// Prediction on the normalized scale.
    fn predict(&self, window: &[f64]) -> f64;

    /// Writes the gradient of the batch-mean loss into `grad` (overwriting
    /// it) and returns the loss.
    fn loss_and_gradient(&self, batch: &[TrainingSample], grad: &mut [f64]) -> f64;

    fn loss(&self, batch: &[TrainingSample]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        batch.iter().map(|s| 0.5 * (self.predict(&s.window) - s.target).powi(2)).sum::<f64>() / batch.len() as f64
    }
}

/// How a full-batch gradient becomes a parameter step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// `v ← μv − ηg`, `θ ← θ + v`.
    #[default]
    Momentum,
    /// Bias-corrected first and second moment estimates, with
    /// `β₁ = momentum` and `β₂ = 0.999`.
    Adam,
}

/// Step size over the course of training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate at the first epoch to zero
    /// after the last.
    Cosine,
}

impl Schedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Heavy-ball coefficient, or Adam's `β₁`; 0 with the momentum rule gives
    /// plain gradient descent.
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub rule: UpdateRule,
    #[serde(default)]
    pub schedule: Schedule,
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl DescentConfig {
    /// Constant-rate steepest descent.
    pub fn plain(learning_rate: f64, epochs: usize) -> Self {
        Self { learning_rate, epochs, momentum: 0.0, rule: UpdateRule::Momentum, schedule: Schedule::Constant }
    }

    /// Adam with `β₁ = 0.9` and cosine decay.
    pub fn adam(learning_rate: f64, epochs: usize) -> Self {
        Self { learning_rate, epochs, momentum: 0.9, rule: UpdateRule::Adam, schedule: Schedule::Cosine }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Runs `cfg.epochs` full-batch steps and returns the loss measured before
/// each step.
pub fn full_batch_descent<M: Trainable>(model: &mut M, batch: &[TrainingSample], cfg: &DescentConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::NoData("empty training batch".into()));
    }
    let n = model.parameters().len();
    let mut grad = vec![0.0; n];
    let mut velocity = vec![0.0; n];
    let mut second = match cfg.rule {
        UpdateRule::Momentum => Vec::new(),
        UpdateRule::Adam => vec![0.0; n],
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let loss = model.loss_and_gradient(batch, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, detail: format!("loss {loss}") });
        }
        history.push(loss);
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        match cfg.rule {
            UpdateRule::Momentum => {
                for ((p, v), g) in model.parameters_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = cfg.momentum * *v - lr * g;
                    *p += *v;
                }
            }
            UpdateRule::Adam => {
                let t = epoch as i32 + 1;
                let c1 = 1.0 - cfg.momentum.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let params = model.parameters_mut();
                for i in 0..n {
                    velocity[i] = cfg.momentum * velocity[i] + (1.0 - cfg.momentum) * grad[i];
                    second[i] = ADAM_BETA2 * second[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    params[i] -= lr * (velocity[i] / c1) / ((second[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
        if model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, detail: "non-finite parameter".into() });
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `ŷ = θ·x`, so the loss is quadratic in θ.
    struct Scale(Vec<f64>);

    impl Trainable for Scale {
        fn parameters(&self) -> &[f64] {
            &self.0
        }
        fn parameters_mut(&mut self) -> &mut [f64] {
            &mut self.0
        }
        fn predict(&self, window: &[f64]) -> f64 {
            self.0[0] * window[0]
        }
        fn loss_and_gradient(&self, batch: &[TrainingSample], grad: &mut [f64]) -> f64 {
            let n = batch.len() as f64;
            grad[0] = batch.iter().map(|s| (self.predict(&s.window) - s.target) * s.window[0]).sum::<f64>() / n;
            self.loss(batch)
        }
    }

    fn batch() -> Vec<TrainingSample> {
        (1..=4)
            .map(|k| TrainingSample {
                window: vec![k as f64],
                target: 2.0 * k as f64,
                target_segment: 0,
                anchor_interval: 0,
                target_interval_start: 0,
            })
            .collect()
    }

    #[test]
    fn converges_on_quadratic() {
        let mut m = Scale(vec![0.0]);
        let cfg = DescentConfig::plain(0.1, 200);
        let h = full_batch_descent(&mut m, &batch(), &cfg).unwrap();
        assert!((m.0[0] - 2.0).abs() < 1e-9);
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn oversized_step_diverges_with_epoch() {
        let mut m = Scale(vec![0.0]);
        let cfg = DescentConfig::plain(10.0, 2000);
        match full_batch_descent(&mut m, &batch(), &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config_and_empty_batch() {
        let mut m = Scale(vec![0.0]);
        let bad = DescentConfig::plain(-1.0, 1);
        assert!(matches!(full_batch_descent(&mut m, &batch(), &bad), Err(Error::Config(_))));
        let ok = DescentConfig::plain(0.1, 1);
        assert!(matches!(full_batch_descent(&mut m, &[], &ok), Err(Error::NoData(_))));
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut m = Scale(vec![0.0]);
        let h = full_batch_descent(&mut m, &batch(), &DescentConfig::adam(0.1, 500)).unwrap();
        assert!((m.0[0] - 2.0).abs() < 1e-6, "{}", m.0[0]);
        assert!(h.last().unwrap() < &1e-10);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = Schedule::Cosine;
        assert_eq!(s.rate(0.2, 0, 100), 0.2);
        approx::assert_relative_eq!(s.rate(0.2, 50, 100), 0.1, max_relative = 1e-12);
        assert!(s.rate(0.2, 99, 100) < 1e-4);
        assert_eq!(Schedule::Constant.rate(0.2, 99, 100), 0.2);
    }

    #[test]
    fn config_defaults_from_json() {
        let c: DescentConfig = serde_json::from_str(r#"{"learning_rate":0.1,"epochs":5}"#).unwrap();
        assert_eq!(c, DescentConfig::plain(0.1, 5));
        let a: DescentConfig =
            serde_json::from_str(r#"{"learning_rate":0.1,"epochs":5,"momentum":0.9,"rule":"adam","schedule":"cosine"}"#).unwrap();
        assert_eq!(a, DescentConfig::adam(0.1, 5));
    }
}
