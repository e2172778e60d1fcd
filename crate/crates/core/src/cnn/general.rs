//! Convolutional stack followed by fully-connected layers, trained by
//! full-batch gradient descent with hand-written backpropagation.
//!
//! Forward path: `conv(2×2) → σ → conv(2×2) → σ → [pool] → flatten →
//! σ-dense × 3 → linear output`. Each conv filter has one shared bias.
//! All parameters live in one flat vector, layer after layer, each layer as
//! weights (row-major) followed by biases. Conv weights are indexed
//! `[out_channel][in_channel][row][col]`, dense weights `[output][input]`.

use serde::{Deserialize, Serialize};

use super::conv::{pool_block, pooled_len, PoolMode};
use crate::error::{Error, Result};
use crate::grid::TrainingSample;
use crate::math::{sigmoid, sigmoid_grad_from_output};
use crate::optim::{full_batch_descent, DescentConfig, Trainable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralArch {
    pub input_rows: usize,
    pub input_cols: usize,
    /// Filter count of each 2×2 conv layer.
    pub conv_filters: Vec<usize>,
    #[serde(default)]
    pub pooling: Option<PoolMode>,
    /// Widths of the sigmoid hidden layers.
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone)]
struct ConvShape {
    in_ch: usize,
    out_ch: usize,
    in_rows: usize,
    in_cols: usize,
    out_rows: usize,
    out_cols: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvShape {
    fn out_len(&self) -> usize {
        self.out_ch * self.out_rows * self.out_cols
    }
}

#[derive(Debug, Clone)]
struct PoolShape {
    mode: PoolMode,
    channels: usize,
    in_rows: usize,
    in_cols: usize,
    out_rows: usize,
    out_cols: usize,
}

#[derive(Debug, Clone)]
struct DenseShape {
    inputs: usize,
    outputs: usize,
    w_off: usize,
    b_off: usize,
    sigmoid: bool,
}

#[derive(Debug, Clone)]
struct Layout {
    conv: Vec<ConvShape>,
    pool: Option<PoolShape>,
    dense: Vec<DenseShape>,
    total: usize,
}

impl GeneralArch {
    /// Default stack for a `rows × cols` window: filters (4, 8), hidden
    /// widths (16, 16, 8), no pooling.
    pub fn for_window(rows: usize, cols: usize) -> Self {
        Self { input_rows: rows, input_cols: cols, conv_filters: vec![4, 8], pooling: None, hidden: vec![16, 16, 8] }
    }

    fn layout(&self) -> Result<Layout> {
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) || self.hidden.contains(&0) {
            return Err(Error::Config("layer sizes must be positive and at least one conv layer is required".into()));
        }
        let (mut rows, mut cols, mut ch) = (self.input_rows, self.input_cols, 1);
        let mut off = 0;
        let mut conv = Vec::new();
        for (l, &out_ch) in self.conv_filters.iter().enumerate() {
            if rows < 2 || cols < 2 {
                return Err(Error::Config(format!(
                    "conv layer {} receives a {rows}x{cols} map; a 2x2 valid convolution needs at least 2x2 \
                     (input {}x{})",
                    l + 1,
                    self.input_rows,
                    self.input_cols
                )));
            }
            let w_off = off;
            off += out_ch * ch * 4;
            let b_off = off;
            off += out_ch;
            conv.push(ConvShape {
                in_ch: ch,
                out_ch,
                in_rows: rows,
                in_cols: cols,
                out_rows: rows - 1,
                out_cols: cols - 1,
                w_off,
                b_off,
            });
            rows -= 1;
            cols -= 1;
            ch = out_ch;
        }
        let pool = self.pooling.map(|mode| {
            let p = PoolShape {
                mode,
                channels: ch,
                in_rows: rows,
                in_cols: cols,
                out_rows: pooled_len(rows),
                out_cols: pooled_len(cols),
            };
            rows = p.out_rows;
            cols = p.out_cols;
            p
        });
        let mut inputs = ch * rows * cols;
        let mut dense = Vec::new();
        for (k, &outputs) in self.hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let w_off = off;
            off += outputs * inputs;
            let b_off = off;
            off += outputs;
            dense.push(DenseShape { inputs, outputs, w_off, b_off, sigmoid: k < self.hidden.len() });
            inputs = outputs;
        }
        Ok(Layout { conv, pool, dense, total: off })
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.layout()?.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralCnnConfig {
    pub conv_filters: Vec<usize>,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub pooling: Option<PoolMode>,
    pub descent: DescentConfig,
    pub seed: u64,
}

impl Default for GeneralCnnConfig {
    fn default() -> Self {
        Self {
            conv_filters: vec![4, 8],
            hidden: vec![16, 16, 8],
            pooling: None,
            descent: DescentConfig::adam(0.05, 3000),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralCnnModel {
    pub arch: GeneralArch,
    pub params: Vec<f64>,
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    conv_out: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    pool_src: Vec<usize>,
    dense_out: Vec<Vec<f64>>,
    d_conv: Vec<Vec<f64>>,
    d_dense: Vec<Vec<f64>>,
    d_flat: Vec<f64>,
}

impl Workspace {
    fn new(layout: &Layout) -> Self {
        let conv_out: Vec<Vec<f64>> = layout.conv.iter().map(|c| vec![0.0; c.out_len()]).collect();
        let pooled_len = layout.pool.as_ref().map_or(0, |p| p.channels * p.out_rows * p.out_cols);
        let dense_out: Vec<Vec<f64>> = layout.dense.iter().map(|d| vec![0.0; d.outputs]).collect();
        Self {
            d_conv: conv_out.clone(),
            conv_out,
            pooled: vec![0.0; pooled_len],
            pool_src: vec![0; pooled_len * 4],
            d_dense: dense_out.clone(),
            dense_out,
            d_flat: vec![0.0; layout.dense[0].inputs],
        }
    }
}

impl GeneralCnnModel {
    pub fn zeros(arch: GeneralArch) -> Result<Self> {
        let layout = arch.layout()?;
        Ok(Self { params: vec![0.0; layout.total], arch })
    }

    /// Uniform `[-0.5, 0.5]` initialization from `seed`.
    pub fn random(arch: GeneralArch, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        let mut rng = crate::math::seeded_rng(seed);
        m.params = crate::math::uniform_init(&mut rng, m.params.len());
        Ok(m)
    }

    pub fn from_parts(arch: GeneralArch, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        if params.len() != m.params.len() {
            return Err(Error::shape(format!("{} parameters", m.params.len()), params.len()));
        }
        if !crate::math::all_finite(&params) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        m.params = params;
        Ok(m)
    }

    /// Re-checks the shape chain and parameter count, e.g. after loading.
    pub fn validate(&self) -> Result<()> {
        let layout = self.arch.layout()?;
        if layout.total != self.params.len() {
            return Err(Error::shape(format!("{} parameters", layout.total), self.params.len()));
        }
        if !crate::math::all_finite(&self.params) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.arch.input_rows * self.arch.input_cols
    }

    /// Index of the output unit's bias in [`Self::params`].
    pub fn output_bias_index(&self) -> usize {
        self.params.len() - 1
    }

    fn layout(&self) -> Layout {
        self.arch.layout().expect("architecture validated on construction")
    }

    pub fn forward(&self, window: &[f64]) -> Result<f64> {
        if window.len() != self.window_len() {
            return Err(Error::shape(format!("{} window values", self.window_len()), window.len()));
        }
        let layout = self.layout();
        let mut ws = Workspace::new(&layout);
        Ok(forward_pass(&self.params, &layout, window, &mut ws))
    }
}

fn forward_pass(p: &[f64], layout: &Layout, window: &[f64], ws: &mut Workspace) -> f64 {
    for (l, c) in layout.conv.iter().enumerate() {
        let (before, rest) = ws.conv_out.split_at_mut(l);
        let input: &[f64] = if l == 0 { window } else { &before[l - 1] };
        let out = &mut rest[0];
        let w = &p[c.w_off..c.b_off];
        let b = &p[c.b_off..c.b_off + c.out_ch];
        let in_plane = c.in_rows * c.in_cols;
        for o in 0..c.out_ch {
            for r in 0..c.out_rows {
                for col in 0..c.out_cols {
                    let mut z = b[o];
                    for ci in 0..c.in_ch {
                        let wk = &w[(o * c.in_ch + ci) * 4..(o * c.in_ch + ci) * 4 + 4];
                        let x = &input[ci * in_plane..];
                        let top = r * c.in_cols + col;
                        let bot = top + c.in_cols;
                        z += wk[0] * x[top] + wk[1] * x[top + 1] + wk[2] * x[bot] + wk[3] * x[bot + 1];
                    }
                    out[(o * c.out_rows + r) * c.out_cols + col] = sigmoid(z);
                }
            }
        }
    }

    let conv_last: &[f64] = ws.conv_out.last().map(|v| v.as_slice()).unwrap_or(window);
    let flat: &[f64] = match &layout.pool {
        None => conv_last,
        Some(ps) => {
            let in_plane = ps.in_rows * ps.in_cols;
            for ch in 0..ps.channels {
                for r in 0..ps.out_rows {
                    for col in 0..ps.out_cols {
                        let k = (ch * ps.out_rows + r) * ps.out_cols + col;
                        let block = pool_block(ps.in_rows, ps.in_cols, r, col);
                        let idx = block.map(|(i, j)| ch * in_plane + i * ps.in_cols + j);
                        ws.pool_src[4 * k..4 * k + 4].copy_from_slice(&idx);
                        ws.pooled[k] = match ps.mode {
                            PoolMode::Max => {
                                let best = idx.iter().copied().fold(idx[0], |b, i| if conv_last[i] > conv_last[b] { i } else { b });
                                ws.pool_src[4 * k] = best;
                                conv_last[best]
                            }
                            PoolMode::Mean => idx.iter().map(|&i| conv_last[i]).sum::<f64>() / 4.0,
                        };
                    }
                }
            }
            &ws.pooled
        }
    };

    for (l, d) in layout.dense.iter().enumerate() {
        let (before, rest) = ws.dense_out.split_at_mut(l);
        let input: &[f64] = if l == 0 { flat } else { &before[l - 1] };
        let out = &mut rest[0];
        for o in 0..d.outputs {
            let row = &p[d.w_off + o * d.inputs..d.w_off + (o + 1) * d.inputs];
            let z = p[d.b_off + o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            out[o] = if d.sigmoid { sigmoid(z) } else { z };
        }
    }
    ws.dense_out.last().unwrap()[0]
}

/// Accumulates `d_out · ∂ŷ/∂θ` into `grad`, using activations left in `ws`
/// by the preceding forward pass over the same window.
fn backward_pass(p: &[f64], layout: &Layout, window: &[f64], ws: &mut Workspace, d_out: f64, grad: &mut [f64]) {
    let n_dense = layout.dense.len();
    ws.d_dense[n_dense - 1][0] = d_out;
    for l in (0..n_dense).rev() {
        let d = &layout.dense[l];
        // Turn d(activation) into d(pre-activation) in place.
        if d.sigmoid {
            for (g, a) in ws.d_dense[l].iter_mut().zip(&ws.dense_out[l]) {
                *g *= sigmoid_grad_from_output(*a);
            }
        }
        let input: &[f64] = if l > 0 {
            &ws.dense_out[l - 1]
        } else if layout.pool.is_some() {
            &ws.pooled
        } else {
            ws.conv_out.last().unwrap()
        };
        let (d_before, d_rest) = ws.d_dense.split_at_mut(l);
        let dz = &d_rest[0];
        let d_in: &mut [f64] = if l > 0 { &mut d_before[l - 1] } else { &mut ws.d_flat };
        d_in.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..d.outputs {
            let g = dz[o];
            grad[d.b_off + o] += g;
            let w_row = d.w_off + o * d.inputs;
            for i in 0..d.inputs {
                grad[w_row + i] += g * input[i];
                d_in[i] += p[w_row + i] * g;
            }
        }
    }

    let n_conv = layout.conv.len();
    let d_last = &mut ws.d_conv[n_conv - 1];
    match &layout.pool {
        None => d_last.copy_from_slice(&ws.d_flat),
        Some(ps) => {
            d_last.iter_mut().for_each(|v| *v = 0.0);
            for (k, g) in ws.d_flat.iter().enumerate() {
                match ps.mode {
                    PoolMode::Max => d_last[ws.pool_src[4 * k]] += g,
                    PoolMode::Mean => {
                        for &src in &ws.pool_src[4 * k..4 * k + 4] {
                            d_last[src] += 0.25 * g;
                        }
                    }
                }
            }
        }
    }

    for l in (0..n_conv).rev() {
        let c = &layout.conv[l];
        for (g, a) in ws.d_conv[l].iter_mut().zip(&ws.conv_out[l]) {
            *g *= sigmoid_grad_from_output(*a);
        }
        let (d_before, d_rest) = ws.d_conv.split_at_mut(l);
        let dz = &d_rest[0];
        let input: &[f64] = if l == 0 { window } else { &ws.conv_out[l - 1] };
        let mut d_in: Option<&mut Vec<f64>> = if l > 0 { Some(&mut d_before[l - 1]) } else { None };
        if let Some(d) = d_in.as_deref_mut() {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
        let in_plane = c.in_rows * c.in_cols;
        for o in 0..c.out_ch {
            for r in 0..c.out_rows {
                for col in 0..c.out_cols {
                    let g = dz[(o * c.out_rows + r) * c.out_cols + col];
                    grad[c.b_off + o] += g;
                    let top = r * c.in_cols + col;
                    let taps = [top, top + 1, top + c.in_cols, top + c.in_cols + 1];
                    for ci in 0..c.in_ch {
                        let wk = c.w_off + (o * c.in_ch + ci) * 4;
                        for (t, &pos) in taps.iter().enumerate() {
                            grad[wk + t] += g * input[ci * in_plane + pos];
                            if let Some(d) = d_in.as_deref_mut() {
                                d[ci * in_plane + pos] += p[wk + t] * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Trainable for GeneralCnnModel {
    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn predict(&self, window: &[f64]) -> f64 {
        let layout = self.layout();
        let mut ws = Workspace::new(&layout);
        forward_pass(&self.params, &layout, window, &mut ws)
    }

    fn loss_and_gradient(&self, batch: &[TrainingSample], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let layout = self.layout();
        let mut ws = Workspace::new(&layout);
        let mut loss = 0.0;
        for s in batch {
            let y = forward_pass(&self.params, &layout, &s.window, &mut ws);
            let delta = y - s.target;
            loss += 0.5 * delta * delta;
            backward_pass(&self.params, &layout, &s.window, &mut ws, delta, grad);
        }
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        loss / n
    }

    fn loss(&self, batch: &[TrainingSample]) -> f64 {
        let layout = self.layout();
        let mut ws = Workspace::new(&layout);
        let total: f64 = batch
            .iter()
            .map(|s| 0.5 * (forward_pass(&self.params, &layout, &s.window, &mut ws) - s.target).powi(2))
            .sum();
        total / batch.len().max(1) as f64
    }
}

impl GeneralCnnModel {
    /// Predictions for many windows with one set of scratch buffers.
    pub fn predict_many<'a>(&self, windows: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
        let layout = self.layout();
        let mut ws = Workspace::new(&layout);
        windows.into_iter().map(|w| forward_pass(&self.params, &layout, w, &mut ws)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneralTraining {
    pub model: GeneralCnnModel,
    pub loss_history: Vec<f64>,
}

/// Trains on normalized samples whose windows are `rows × cols`.
pub fn general_train(samples: &[TrainingSample], rows: usize, cols: usize, cfg: &GeneralCnnConfig) -> Result<GeneralTraining> {
    let arch = GeneralArch {
        input_rows: rows,
        input_cols: cols,
        conv_filters: cfg.conv_filters.clone(),
        pooling: cfg.pooling,
        hidden: cfg.hidden.clone(),
    };
    let mut model = GeneralCnnModel::random(arch, cfg.seed)?;
    if let Some(bad) = samples.iter().find(|s| s.window.len() != rows * cols) {
        return Err(Error::shape(format!("{} window values", rows * cols), bad.window.len()));
    }
    let loss_history = full_batch_descent(&mut model, samples, &cfg.descent)?;
    Ok(GeneralTraining { model, loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_differences, compare};
    use rand::Rng;

    fn samples(rows: usize, cols: usize, n: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = crate::math::seeded_rng(seed);
        (0..n)
            .map(|_| TrainingSample {
                window: (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect(),
                target: rng.random_range(0.0..1.0),
                target_segment: 0,
                anchor_interval: 0,
                target_interval_start: 0,
            })
            .collect()
    }

    #[test]
    fn default_parameter_count() {
        // conv 1→4: 16+4, conv 4→8: 128+8, dense 8→16: 128+16,
        // 16→16: 256+16, 16→8: 128+8, 8→1: 8+1.
        assert_eq!(GeneralArch::for_window(3, 3).parameter_count().unwrap(), 20 + 136 + 144 + 272 + 136 + 9);
    }

    #[test]
    fn zero_network_outputs_final_bias() {
        let mut m = GeneralCnnModel::zeros(GeneralArch::for_window(3, 4)).unwrap();
        let b = m.output_bias_index();
        m.params[b] = 0.37;
        assert_eq!(m.forward(&[0.5; 12]).unwrap(), 0.37);
    }

    #[test]
    fn shape_chain_violation_is_a_config_error() {
        let arch = GeneralArch::for_window(2, 5);
        assert!(matches!(GeneralCnnModel::zeros(arch), Err(Error::Config(_))));
        let m = GeneralCnnModel::zeros(GeneralArch::for_window(3, 3)).unwrap();
        assert!(m.forward(&[0.0; 8]).is_err());
    }

    fn check(arch: GeneralArch, seed: u64) -> f64 {
        let rows = arch.input_rows;
        let cols = arch.input_cols;
        let model = GeneralCnnModel::random(arch, seed).unwrap();
        let batch = samples(rows, cols, 3, seed + 1);
        let mut grad = vec![0.0; model.params.len()];
        model.loss_and_gradient(&batch, &mut grad);
        let numeric = central_differences(&model.params, 1e-5, |p| {
            let mut probe = model.clone();
            probe.params.copy_from_slice(p);
            probe.loss(&batch)
        });
        compare(&grad, &numeric).max_relative_error
    }

    #[test]
    fn gradients_match_finite_differences() {
        assert!(check(GeneralArch::for_window(3, 3), 1) < 1e-5);
        assert!(check(GeneralArch::for_window(4, 5), 2) < 1e-5);
    }

    #[test]
    fn pooled_gradients_match_finite_differences() {
        for mode in [PoolMode::Max, PoolMode::Mean] {
            let arch = GeneralArch { pooling: Some(mode), ..GeneralArch::for_window(5, 6) };
            assert!(check(arch, 3) < 1e-5, "{mode:?}");
        }
    }

    #[test]
    fn training_reduces_loss() {
        let batch = samples(3, 3, 40, 9);
        let cfg = GeneralCnnConfig {
            descent: DescentConfig::plain(0.5, 200),
            ..Default::default()
        };
        let run = general_train(&batch, 3, 3, &cfg).unwrap();
        assert!(run.loss_history.last().unwrap() < &run.loss_history[0]);
    }
}
