//! The 3×3-input convolutional predictor in closed form.
//!
//! The window holds three adjacent segments (rows) over the intervals
//! `j-2, j-1, j` (columns). One 2×2 filter slides over it with linear
//! activation, giving four hidden values with their own biases, and a linear
//! output unit combines them:
//!
//! ```text
//! h1 = w11·T1,j-2 + w12·T2,j-2 + w13·T1,j-1 + w14·T2,j-1 + b11
//! h2 = w11·T2,j-2 + w12·T3,j-2 + w13·T2,j-1 + w14·T3,j-1 + b12
//! h3 = w11·T1,j-1 + w12·T2,j-1 + w13·T1,j   + w14·T2,j   + b13
//! h4 = w11·T2,j-1 + w12·T3,j-1 + w13·T2,j   + w14·T3,j   + b14
//! T' = Σ w2k·hk + b21
//! ```
//!
//! The filter's first index steps along segments and its second along time,
//! so on the segment-major window it acts as a transposed 2×2 kernel and the
//! hidden values come out in column-major order.
//!
//! The published form of `h4` repeats `T2,j-1` in the `w12` term. The sliding
//! pattern of `h1..h3` and the `w12`/`w14` update rules both require
//! `T3,j-1` there, which is what is implemented.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TrainingSample;

pub const WINDOW_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DidacticCnnParams {
    /// `w11, w12, w13, w14`.
    pub filter: [f64; 4],
    /// `b11..b14`, one per output position.
    pub conv_biases: [f64; 4],
    /// `w21..w24`.
    pub out_weights: [f64; 4],
    /// `b21`.
    pub out_bias: f64,
    pub learning_rate: f64,
}

impl DidacticCnnParams {
    /// Filter weights, per-position biases, output weights and output bias.
    pub const PARAMETER_COUNT: usize = 4 + 4 + 4 + 1;

    pub fn zeros(learning_rate: f64) -> Self {
        Self { filter: [0.0; 4], conv_biases: [0.0; 4], out_weights: [0.0; 4], out_bias: 0.0, learning_rate }
    }

    /// Uniform `[-0.5, 0.5]` initialization.
    pub fn random(seed: u64, learning_rate: f64) -> Self {
        let mut rng = crate::math::seeded_rng(seed);
        Self::from_vec(&crate::math::uniform_init(&mut rng, Self::PARAMETER_COUNT), learning_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if !crate::math::all_finite(&self.to_vec()) {
            return Err(Error::InvalidParams("non-finite didactic parameter".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }

    /// Flat layout `[w11..w14, b11..b14, w21..w24, b21]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::PARAMETER_COUNT);
        v.extend_from_slice(&self.filter);
        v.extend_from_slice(&self.conv_biases);
        v.extend_from_slice(&self.out_weights);
        v.push(self.out_bias);
        v
    }

    pub fn from_vec(v: &[f64], learning_rate: f64) -> Self {
        assert_eq!(v.len(), Self::PARAMETER_COUNT);
        Self {
            filter: v[0..4].try_into().unwrap(),
            conv_biases: v[4..8].try_into().unwrap(),
            out_weights: v[8..12].try_into().unwrap(),
            out_bias: v[12],
            learning_rate,
        }
    }
}

/// Parameter count of a fully-connected net with one hidden layer and one
/// output: every input-to-hidden weight, every hidden-to-output weight, and
/// a bias on every hidden and output unit.
pub const fn fully_connected_parameter_count(inputs: usize, hidden: usize) -> usize {
    inputs * hidden + hidden + hidden + 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DidacticOutput {
    pub prediction: f64,
    pub hidden: [f64; 4],
}

/// Inputs seen by the four filter weights at each output position:
/// `patches[k][m]` multiplies `w1,m+1` in `h_{k+1}`.
fn patches(window: &[f64]) -> [[f64; 4]; 4] {
    // Segment-major window: T(segment, time) with time 0 = j-2.
    let t = |seg: usize, time: usize| window[seg * 3 + time];
    [
        [t(0, 0), t(1, 0), t(0, 1), t(1, 1)],
        [t(1, 0), t(2, 0), t(1, 1), t(2, 1)],
        [t(0, 1), t(1, 1), t(0, 2), t(1, 2)],
        [t(1, 1), t(2, 1), t(1, 2), t(2, 2)],
    ]
}

fn check_window(window: &[f64]) -> Result<()> {
    if window.len() != WINDOW_LEN {
        return Err(Error::shape("3x3 window", format!("{} values", window.len())));
    }
    if !crate::math::all_finite(window) {
        return Err(Error::invalid("window contains a non-finite value"));
    }
    Ok(())
}

pub fn didactic_forward(window: &[f64], p: &DidacticCnnParams) -> Result<DidacticOutput> {
    check_window(window)?;
    let patches = patches(window);
    let hidden: [f64; 4] =
        std::array::from_fn(|k| (0..4).map(|m| p.filter[m] * patches[k][m]).sum::<f64>() + p.conv_biases[k]);
    let prediction = (0..4).map(|k| p.out_weights[k] * hidden[k]).sum::<f64>() + p.out_bias;
    Ok(DidacticOutput { prediction, hidden })
}

/// `F = ½(T' − T)²`.
pub fn didactic_loss(prediction: f64, target: f64) -> f64 {
    0.5 * (prediction - target).powi(2)
}

/// Partial derivatives of `F` for one sample, laid out like
/// [`DidacticCnnParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DidacticGradients {
    /// `δ = T' − T`.
    pub delta: f64,
    pub filter: [f64; 4],
    pub conv_biases: [f64; 4],
    pub out_weights: [f64; 4],
    pub out_bias: f64,
}

impl DidacticGradients {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(DidacticCnnParams::PARAMETER_COUNT);
        v.extend_from_slice(&self.filter);
        v.extend_from_slice(&self.conv_biases);
        v.extend_from_slice(&self.out_weights);
        v.push(self.out_bias);
        v
    }
}

pub fn didactic_gradients(window: &[f64], target: f64, p: &DidacticCnnParams) -> Result<DidacticGradients> {
    let out = didactic_forward(window, p)?;
    let patches = patches(window);
    let delta = out.prediction - target;
    Ok(DidacticGradients {
        delta,
        // ∂F/∂w2k = δ·hk
        out_weights: std::array::from_fn(|k| delta * out.hidden[k]),
        // ∂F/∂b21 = δ
        out_bias: delta,
        // ∂F/∂w1m = δ·Σk w2k·(input under w1m at position k)
        filter: std::array::from_fn(|m| delta * (0..4).map(|k| p.out_weights[k] * patches[k][m]).sum::<f64>()),
        // ∂F/∂b1k = δ·w2k
        conv_biases: std::array::from_fn(|k| delta * p.out_weights[k]),
    })
}

/// One stochastic gradient step on a single (window, target) pair. All
/// partials are taken at the pre-update parameters.
pub fn didactic_sgd_step(window: &[f64], target: f64, p: &DidacticCnnParams) -> Result<DidacticCnnParams> {
    let g = didactic_gradients(window, target, p)?;
    let eta = p.learning_rate;
    let next = DidacticCnnParams {
        filter: std::array::from_fn(|m| p.filter[m] - eta * g.filter[m]),
        conv_biases: std::array::from_fn(|k| p.conv_biases[k] - eta * g.conv_biases[k]),
        out_weights: std::array::from_fn(|k| p.out_weights[k] - eta * g.out_weights[k]),
        out_bias: p.out_bias - eta * g.out_bias,
        learning_rate: eta,
    };
    if !crate::math::all_finite(&next.to_vec()) {
        return Err(Error::Divergence { epoch: 0, detail: "non-finite didactic update".into() });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DidacticTraining {
    pub params: DidacticCnnParams,
    /// Mean pre-update loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Sequential per-sample updates, one pass over `samples` per epoch, in the
/// given order.
pub fn didactic_train(samples: &[TrainingSample], initial: DidacticCnnParams, epochs: usize) -> Result<DidacticTraining> {
    initial.validate()?;
    if samples.is_empty() {
        return Err(Error::NoData("no training samples".into()));
    }
    let mut params = initial;
    let mut loss_history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut total = 0.0;
        for s in samples {
            let out = didactic_forward(&s.window, &params)?;
            total += didactic_loss(out.prediction, s.target);
            params = didactic_sgd_step(&s.window, s.target, &params).map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { epoch, detail },
                other => other,
            })?;
        }
        loss_history.push(total / samples.len() as f64);
    }
    Ok(DidacticTraining { params, loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::conv::{conv2d_valid, ConvBias, FeatureMap};
    use crate::gradcheck::{central_differences, compare};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn random_window(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn sample(window: Vec<f64>, target: f64) -> TrainingSample {
        TrainingSample { window, target, target_segment: 0, anchor_interval: 0, target_interval_start: 0 }
    }

    #[test]
    fn zero_parameters_give_zero() {
        let out = didactic_forward(&[0.3; 9], &DidacticCnnParams::zeros(0.1)).unwrap();
        assert_eq!(out.prediction, 0.0);
        assert_eq!(out.hidden, [0.0; 4]);
    }

    #[test]
    fn selector_returns_oldest_first_segment() {
        let mut p = DidacticCnnParams::zeros(0.1);
        p.filter = [1.0, 0.0, 0.0, 0.0];
        p.out_weights = [1.0, 0.0, 0.0, 0.0];
        let window: Vec<f64> = (1..=9).map(f64::from).collect();
        // T1,j-2 sits at row 0, column 0.
        assert_eq!(didactic_forward(&window, &p).unwrap().prediction, 1.0);
    }

    /// Explicit 4×9 connection matrix: row k lists, for every window cell,
    /// the filter weight linking it to hidden unit k.
    fn connection_matrix_forward(window: &[f64], p: &DidacticCnnParams) -> f64 {
        // (segment, time) offsets of w11..w14, and of positions h1..h4.
        let filter_offsets = [(0, 0), (1, 0), (0, 1), (1, 1)];
        let positions = [(0, 0), (1, 0), (0, 1), (1, 1)];
        let mut conn = [[0.0; 9]; 4];
        for (k, (ps, pt)) in positions.iter().enumerate() {
            for (m, (fs, ft)) in filter_offsets.iter().enumerate() {
                conn[k][(ps + fs) * 3 + (pt + ft)] = p.filter[m];
            }
        }
        let mut out = p.out_bias;
        for (k, row) in conn.iter().enumerate() {
            let hk: f64 = row.iter().zip(window).map(|(c, x)| c * x).sum::<f64>() + p.conv_biases[k];
            out += p.out_weights[k] * hk;
        }
        out
    }

    #[test]
    fn matches_connection_matrix() {
        let mut rng = crate::math::seeded_rng(3);
        for trial in 0..200 {
            let p = DidacticCnnParams::random(trial, 0.1);
            let w = random_window(&mut rng);
            let a = didactic_forward(&w, &p).unwrap().prediction;
            assert!((a - connection_matrix_forward(&w, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn equals_generic_convolution_on_time_major_window() {
        let mut rng = crate::math::seeded_rng(5);
        for trial in 0..100 {
            let p = DidacticCnnParams::random(100 + trial, 0.1);
            let w = random_window(&mut rng);
            let time_major = FeatureMap::new(3, 3, w.clone()).unwrap().transpose();
            let conv = conv2d_valid(&time_major, &p.filter, ConvBias::Untied(&p.conv_biases)).unwrap();
            let via_conv: f64 = conv.data.iter().zip(&p.out_weights).map(|(h, w)| h * w).sum::<f64>() + p.out_bias;
            let out = didactic_forward(&w, &p).unwrap();
            assert_eq!(conv.data, out.hidden.to_vec());
            assert!((via_conv - out.prediction).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(didactic_loss(0.5, 0.5), 0.0);
        assert_eq!(didactic_loss(1.0, 0.0), 0.5);
        assert!((didactic_loss(0.7, 0.4) - 0.045).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_is_a_fixed_point() {
        let p = DidacticCnnParams::random(9, 0.1);
        let w = [0.2; 9];
        let target = didactic_forward(&w, &p).unwrap().prediction;
        assert_eq!(didactic_sgd_step(&w, target, &p).unwrap(), p);
    }

    #[test]
    fn hand_computed_step_moves_only_output_bias() {
        let p = DidacticCnnParams::zeros(0.1);
        let next = didactic_sgd_step(&[1.0; 9], 1.0, &p).unwrap();
        let mut expected = p;
        expected.out_bias = 0.1;
        assert_eq!(next, expected);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = crate::math::seeded_rng(17);
        for trial in 0..100 {
            let p = DidacticCnnParams::random(1000 + trial, 0.1);
            let w = random_window(&mut rng);
            let target = rng.random_range(-1.0..1.0);
            let analytic = didactic_gradients(&w, target, &p).unwrap().to_vec();
            let numeric = central_differences(&p.to_vec(), 1e-5, |v| {
                let q = DidacticCnnParams::from_vec(v, p.learning_rate);
                didactic_loss(didactic_forward(&w, &q).unwrap().prediction, target)
            });
            assert!(compare(&analytic, &numeric).max_relative_error < 1e-6);
        }
    }

    #[test]
    fn repeated_sample_converges() {
        let s = vec![sample(vec![0.1, 0.2, 0.3, 0.2, 0.3, 0.4, 0.3, 0.4, 0.5], 0.45)];
        let run = didactic_train(&s, DidacticCnnParams::random(1, 0.05), 400).unwrap();
        let h = &run.loss_history;
        let first_small = h.iter().position(|l| *l < 1e-10).expect("did not converge");
        assert!(h[..=first_small].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn tiny_step_decreases_loss() {
        let mut rng = crate::math::seeded_rng(11);
        for trial in 0..200 {
            let w = random_window(&mut rng);
            let target = rng.random_range(-1.0..1.0);
            let p = DidacticCnnParams::random(trial, 1e-6);
            let before = didactic_loss(didactic_forward(&w, &p).unwrap().prediction, target);
            let q = didactic_sgd_step(&w, target, &p).unwrap();
            let after = didactic_loss(didactic_forward(&w, &q).unwrap().prediction, target);
            assert!(after < before, "trial {trial}: {before} -> {after}");
        }
    }

    #[test]
    fn sample_order_matters_but_is_reproducible() {
        let mut rng = crate::math::seeded_rng(12);
        let samples: Vec<_> = (0..6).map(|_| sample(random_window(&mut rng), rng.random_range(0.0..1.0))).collect();
        let mut reversed = samples.clone();
        reversed.reverse();
        let init = DidacticCnnParams::random(5, 0.05);
        let a = didactic_train(&samples, init, 3).unwrap().params;
        let b = didactic_train(&reversed, init, 3).unwrap().params;
        assert_ne!(a, b);
        assert_eq!(didactic_train(&samples, init, 3).unwrap().params, a);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let p = DidacticCnnParams::random(2, 0.1);
        let run = didactic_train(&[sample(vec![0.1; 9], 0.2)], p, 0).unwrap();
        assert_eq!(run.params, p);
        assert!(run.loss_history.is_empty());
    }

    #[test]
    fn rejects_bad_windows() {
        let p = DidacticCnnParams::zeros(0.1);
        assert!(didactic_forward(&[0.0; 8], &p).is_err());
        let mut w = [0.0; 9];
        w[4] = f64::NAN;
        assert!(matches!(didactic_forward(&w, &p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let s = vec![sample(vec![1e3; 9], 1e3)];
        let err = didactic_train(&s, DidacticCnnParams::random(4, 10.0), 50).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }
}
