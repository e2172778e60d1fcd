//! Error metrics, fit/evaluate orchestration and the comparison table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fit_linear, fit_logistic, mlp_train, AverageModel, LogisticConfig, MlpConfig};
use crate::cnn::{didactic_train, general_train, DidacticCnnParams, GeneralCnnConfig};
use crate::error::{Error, Result};
use crate::grid::{fill_missing, split_by_date, window_samples, FillPolicy, NormalizationParams, TimeSpaceMatrix, TrainingSample, WindowSpec};
use crate::io::{format_instant, write_matrix};
use crate::model::{Predictor, SavedModel};

/// Accuracy requirement for provincial roads, in percent.
pub const PROVINCIAL_REQUIREMENT_PCT: f64 = 25.0;
/// Accuracy requirement for freeways, in percent.
pub const FREEWAY_REQUIREMENT_PCT: f64 = 10.0;

/// `|actual − predicted| / actual`.
pub fn relative_error(actual: f64, predicted: f64) -> Result<f64> {
    if !(actual > 0.0) || !actual.is_finite() || !predicted.is_finite() {
        return Err(Error::invalid(format!("relative error undefined for actual {actual}, predicted {predicted}")));
    }
    Ok((actual - predicted).abs() / actual)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapeSummary {
    /// Percent.
    pub mape: f64,
    pub used: usize,
    /// Pairs skipped because the relative error is undefined for them.
    pub excluded: usize,
}

/// MAPE in percent, skipping and counting pairs with a nonpositive actual.
pub fn mape_summary(pairs: &[(f64, f64)]) -> Result<MapeSummary> {
    let mut total = 0.0;
    let mut used = 0;
    for &(a, p) in pairs {
        if let Ok(e) = relative_error(a, p) {
            total += e;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoData("no valid (actual, predicted) pairs".into()));
    }
    Ok(MapeSummary { mape: 100.0 * total / used as f64, used, excluded: pairs.len() - used })
}

/// MAPE in percent over `(actual, predicted)` pairs.
pub fn mape(pairs: &[(f64, f64)]) -> Result<f64> {
    Ok(mape_summary(pairs)?.mape)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Avg,
    Linear,
    Logistic,
    Nn,
    CnnDidactic,
    CnnGeneral,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Avg, Method::Linear, Method::Logistic, Method::Nn, Method::CnnDidactic, Method::CnnGeneral];

    pub fn name(self) -> &'static str {
        match self {
            Method::Avg => "avg",
            Method::Linear => "linear",
            Method::Logistic => "logistic",
            Method::Nn => "nn",
            Method::CnnDidactic => "cnn-didactic",
            Method::CnnGeneral => "cnn-general",
        }
    }

    /// Parses a comma-separated list such as `avg,linear,nn`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        s.split(',').map(|m| m.trim().parse()).collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Settings for the per-sample trainer of the 3×3 model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DidacticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DidacticConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 30, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub logistic: LogisticConfig,
    pub nn: MlpConfig,
    pub cnn_didactic: DidacticConfig,
    pub cnn_general: GeneralCnnConfig,
}

impl TrainingConfig {
    /// Uses `seed` for every randomly initialized method.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.logistic.seed = seed;
        self.nn.seed = seed;
        self.cnn_didactic.seed = seed;
        self.cnn_general.seed = seed;
        self
    }

    fn seed_of(&self, method: Method) -> u64 {
        match method {
            Method::Avg | Method::Linear => 0,
            Method::Logistic => self.logistic.seed,
            Method::Nn => self.nn.seed,
            Method::CnnDidactic => self.cnn_didactic.seed,
            Method::CnnGeneral => self.cnn_general.seed,
        }
    }

    fn settings_of(&self, method: Method) -> Result<serde_json::Value> {
        Ok(match method {
            Method::Avg | Method::Linear => serde_json::Value::Null,
            Method::Logistic => serde_json::to_value(self.logistic)?,
            Method::Nn => serde_json::to_value(self.nn)?,
            Method::CnnDidactic => serde_json::to_value(self.cnn_didactic)?,
            Method::CnnGeneral => serde_json::to_value(&self.cnn_general)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub window: WindowSpec,
    /// Target rows inside the window, one model each. Empty means
    /// `window.target` only.
    pub targets: Vec<usize>,
    pub fill: FillPolicy,
    pub training: TrainingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { window: WindowSpec::new(3, 2, 0), targets: Vec::new(), fill: FillPolicy::Drop, training: TrainingConfig::default() }
    }
}

impl ExperimentConfig {
    pub fn target_rows(&self) -> Vec<usize> {
        if self.targets.is_empty() {
            vec![self.window.target]
        } else {
            self.targets.clone()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

fn scale_samples(samples: &[TrainingSample], norm: &NormalizationParams) -> Vec<TrainingSample> {
    samples
        .iter()
        .map(|s| TrainingSample {
            window: s.window.iter().map(|v| norm.normalize(*v)).collect(),
            target: norm.normalize(s.target),
            ..s.clone()
        })
        .collect()
}

/// Scaling fitted to every travel time a training sample touches.
pub fn training_normalization(train: &[TrainingSample]) -> Result<NormalizationParams> {
    NormalizationParams::from_training(train.iter().flat_map(|s| s.window.iter().copied().chain([s.target])))
}

/// Fits `method` on raw training samples shaped by `window`.
pub fn fit_model(method: Method, train: &[TrainingSample], window: &WindowSpec, cfg: &TrainingConfig) -> Result<SavedModel> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if let Some(bad) = train.iter().find(|s| s.window.len() != window.len()) {
        return Err(Error::shape(format!("{} window values", window.len()), bad.window.len()));
    }
    let normalization = training_normalization(train)?;
    let scaled = scale_samples(train, &normalization);
    let predictor = match method {
        Method::Avg => {
            let history: Vec<f64> = scaled.iter().map(|s| s.target).collect();
            Predictor::Avg(AverageModel::fit(&history)?)
        }
        Method::Linear => Predictor::Linear(fit_linear(&scaled)?),
        Method::Logistic => Predictor::Logistic(fit_logistic(&scaled, &cfg.logistic)?.0),
        Method::Nn => Predictor::Nn(mlp_train(&scaled, &cfg.nn)?.0),
        Method::CnnDidactic => {
            if window.rows != 3 || window.cols() != 3 {
                return Err(Error::Config(format!(
                    "cnn-didactic needs a 3×3 window, got {}×{}",
                    window.rows,
                    window.cols()
                )));
            }
            let c = cfg.cnn_didactic;
            let init = DidacticCnnParams::random(c.seed, c.learning_rate);
            Predictor::CnnDidactic(didactic_train(&scaled, init, c.epochs)?.params)
        }
        Method::CnnGeneral => {
            Predictor::CnnGeneral(general_train(&scaled, window.rows, window.cols(), &cfg.cnn_general)?.model)
        }
    };
    let model = SavedModel {
        predictor,
        window: *window,
        normalization,
        seed: cfg.seed_of(method),
        config: cfg.settings_of(method)?,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub segment_id: String,
    /// Matrix row of the segment.
    pub row: usize,
    /// Percent.
    pub mape: f64,
    pub test_samples: usize,
    pub excluded: usize,
    pub train_samples: usize,
    pub normalization: NormalizationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub segments: Vec<SegmentScore>,
    /// Percent, over all test samples of all target segments.
    pub mape: f64,
    pub test_samples: usize,
    pub excluded: usize,
    pub train_samples: usize,
    /// First instant of the test period.
    pub split: String,
    pub config_digest: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the matrix in its CSV form.
pub fn data_digest(m: &TimeSpaceMatrix) -> Result<String> {
    let mut buf = Vec::new();
    write_matrix(&mut buf, m)?;
    Ok(sha256_hex(&buf))
}

/// Samples for one target row; windows may use filled cells but targets must
/// have been observed.
fn target_samples(original: &TimeSpaceMatrix, filled: &TimeSpaceMatrix, spec: &WindowSpec) -> Result<Vec<TrainingSample>> {
    let mut samples = window_samples(filled, spec).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Config(msg),
        other => other,
    })?;
    samples.retain(|s| original.is_observed(s.target_segment, s.anchor_interval + 1));
    Ok(samples)
}

/// Fits `method` for `cfg.window` on targets before `boundary`. Returns the
/// model and the number of training samples.
pub fn train_on_split(m: &TimeSpaceMatrix, method: Method, cfg: &ExperimentConfig, boundary: i64) -> Result<(SavedModel, usize)> {
    let filled = fill_missing(m, cfg.fill);
    let (train, _) = split_by_date(target_samples(m, &filled, &cfg.window)?, boundary);
    let model = fit_model(method, &train, &cfg.window, &cfg.training)?;
    Ok((model, train.len()))
}

/// Fits on targets before `boundary` (unix seconds) and scores the rest.
pub fn run_experiment(m: &TimeSpaceMatrix, method: Method, cfg: &ExperimentConfig, boundary: i64) -> Result<EvalReport> {
    let filled = fill_missing(m, cfg.fill);
    let mut segments = Vec::new();
    let mut all_pairs = Vec::new();
    let mut train_total = 0;
    for target in cfg.target_rows() {
        let spec = cfg.window.with_target(target);
        let (train, test) = split_by_date(target_samples(m, &filled, &spec)?, boundary);
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config(format!(
                "split at {} leaves {} training and {} test samples",
                format_instant(boundary),
                train.len(),
                test.len()
            )));
        }
        let model = fit_model(method, &train, &spec, &cfg.training)?;
        let pairs = test.iter().map(|s| Ok((s.target, model.predict(&s.window)?))).collect::<Result<Vec<_>>>()?;
        let summary = mape_summary(&pairs)?;
        let row = spec.target_row();
        segments.push(SegmentScore {
            segment_id: m.segment_ids()[row].clone(),
            row,
            mape: summary.mape,
            test_samples: summary.used,
            excluded: summary.excluded,
            train_samples: train.len(),
            normalization: model.normalization,
        });
        train_total += train.len();
        all_pairs.extend(pairs);
    }
    let summary = mape_summary(&all_pairs)?;
    let settings = serde_json::json!({
        "method": method,
        "experiment": cfg,
        "method_config": cfg.training.settings_of(method)?,
        "split": boundary,
    });
    Ok(EvalReport {
        method,
        segments,
        mape: summary.mape,
        test_samples: summary.used,
        excluded: summary.excluded,
        train_samples: train_total,
        split: format_instant(boundary),
        config_digest: sha256_hex(settings.to_string().as_bytes()),
    })
}

/// Reports of several methods on one split, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub split: String,
    pub data_digest: String,
    pub reports: Vec<EvalReport>,
}

/// Runs every method on identical samples and ranks them by overall MAPE.
pub fn compare_methods(m: &TimeSpaceMatrix, methods: &[Method], cfg: &ExperimentConfig, boundary: i64) -> Result<Comparison> {
    if methods.is_empty() {
        return Err(Error::Config("no methods to compare".into()));
    }
    let mut reports = methods.iter().map(|&method| run_experiment(m, method, cfg, boundary)).collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| a.mape.total_cmp(&b.mape).then(a.method.cmp(&b.method)));
    Ok(Comparison { split: format_instant(boundary), data_digest: data_digest(m)?, reports })
}

impl Comparison {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Plain-text table: one row per method with per-segment and overall
    /// MAPE, followed by the two requirement lines.
    pub fn table(&self) -> String {
        let segs: Vec<&str> = self.reports.first().map_or(Vec::new(), |r| r.segments.iter().map(|s| s.segment_id.as_str()).collect());
        let mut out = format!("{:<30}", "Method");
        for s in &segs {
            out += &format!("{s:>10}");
        }
        out += &format!("{:>10}\n", "MAPE");
        for r in &self.reports {
            out += &format!("{:<30}", r.method.name());
            for s in &r.segments {
                out += &format!("{:>9.2}%", s.mape);
            }
            out += &format!("{:>9.2}%\n", r.mape);
        }
        let pad = " ".repeat(10 * segs.len());
        out += &format!("{:<30}{pad}{:>9.2}%\n", "requirement (freeway)", FREEWAY_REQUIREMENT_PCT);
        out += &format!("{:<30}{pad}{:>9.2}%\n", "requirement (provincial road)", PROVINCIAL_REQUIREMENT_PCT);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::Timeline;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(0.04, 0.04).unwrap(), 0.0);
        approx::assert_relative_eq!(relative_error(100.0, 90.0).unwrap(), 0.10, max_relative = 1e-12);
        approx::assert_relative_eq!(relative_error(0.0345, 0.0345 * 1.0569).unwrap(), 0.0569, max_relative = 1e-9);
        assert!(relative_error(0.0, 1.0).is_err());
        assert!(relative_error(-1.0, 1.0).is_err());
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[(1.0, 1.0), (2.0, 2.0)]).unwrap(), 0.0);
        approx::assert_relative_eq!(mape(&[(1.0, 1.1), (1.0, 0.8)]).unwrap(), 15.0, max_relative = 1e-12);
        assert!(matches!(mape(&[]), Err(Error::NoData(_))));
        let s = mape_summary(&[(0.0, 1.0), (1.0, 1.2), (-2.0, 1.0)]).unwrap();
        assert_eq!((s.used, s.excluded), (1, 2));
        approx::assert_relative_eq!(s.mape, 20.0, max_relative = 1e-12);
        assert!(mape(&[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn mape_matches_summation_oracle() {
        let mut rng = crate::math::seeded_rng(99);
        let pairs: Vec<(f64, f64)> =
            (0..1000).map(|_| (rng.random_range(0.01..0.2), rng.random_range(0.0..0.3))).collect();
        let mut oracle = 0.0;
        for (a, p) in &pairs {
            oracle += ((a - p) / a).abs();
        }
        oracle = oracle * 100.0 / 1000.0;
        approx::assert_relative_eq!(mape(&pairs).unwrap(), oracle, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn mape_is_order_invariant(mut pairs in prop::collection::vec((0.01f64..1.0, 0.0f64..2.0), 1..50), seed in any::<u64>()) {
            let before = mape(&pairs).unwrap();
            let mut rng = crate::math::seeded_rng(seed);
            for i in (1..pairs.len()).rev() {
                pairs.swap(i, rng.random_range(0..=i));
            }
            prop_assert!((mape(&pairs).unwrap() - before).abs() <= 1e-9 * before.max(1.0));
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert_eq!(Method::parse_list("avg, cnn-general").unwrap(), vec![Method::Avg, Method::CnnGeneral]);
        assert!(matches!("svm".parse::<Method>(), Err(Error::Config(_))));
    }

    fn constant_matrix(days: usize) -> TimeSpaceMatrix {
        let n = days * 288;
        let tl = Timeline::new(0, 5, n).unwrap();
        let lens = [3.0, 4.0, 2.5];
        let cells = lens.iter().flat_map(|l| std::iter::repeat_n(Some(l / 80.0), n)).collect();
        TimeSpaceMatrix::from_cells(vec!["S1".into(), "S2".into(), "S3".into()], tl, cells).unwrap()
    }

    fn quick_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig { targets: vec![0, 1, 2], ..Default::default() };
        cfg.training.nn.descent.epochs = 3000;
        cfg.training.logistic.descent.epochs = 4000;
        cfg.training.cnn_general.descent.epochs = 500;
        cfg.training.cnn_didactic.epochs = 2;
        cfg
    }

    #[test]
    fn constant_travel_time_is_learnable_by_every_method() {
        let m = constant_matrix(2);
        let boundary = m.timeline().interval_start(400);
        for method in Method::ALL {
            let r = run_experiment(&m, method, &quick_config(), boundary).unwrap();
            assert!(r.mape < 1.0, "{method}: {}", r.mape);
            assert_eq!(r.segments.iter().map(|s| s.test_samples).sum::<usize>(), r.test_samples);
            assert_eq!(r.segments.len(), 3);
        }
    }

    #[test]
    fn empty_split_is_a_config_error() {
        let m = constant_matrix(1);
        let cfg = quick_config();
        assert!(matches!(run_experiment(&m, Method::Avg, &cfg, 0), Err(Error::Config(_))));
        assert!(matches!(run_experiment(&m, Method::Avg, &cfg, i64::MAX), Err(Error::Config(_))));
    }

    #[test]
    fn oversized_window_is_a_config_error() {
        let m = constant_matrix(1);
        let cfg = ExperimentConfig { window: WindowSpec::new(4, 2, 0), ..quick_config() };
        assert!(matches!(run_experiment(&m, Method::Avg, &cfg, 3600), Err(Error::Config(_))));
    }

    #[test]
    fn comparison_is_sorted_with_requirement_rows() {
        let m = constant_matrix(2);
        let boundary = m.timeline().interval_start(400);
        let c = compare_methods(&m, &[Method::Nn, Method::Avg, Method::Linear], &quick_config(), boundary).unwrap();
        assert!(c.reports.windows(2).all(|w| w[0].mape <= w[1].mape));
        let table = c.table();
        assert_eq!(table.lines().count(), 1 + 3 + 2);
        assert!(table.contains("10.00%") && table.contains("25.00%"));
        let single = compare_methods(&m, &[Method::Avg], &quick_config(), boundary).unwrap();
        assert_eq!(single.reports.len(), 1);
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"window":{"rows":3,"lookback":2,"target":2}}"#).unwrap();
        assert_eq!(cfg.target_rows(), vec![2]);
        assert_eq!(cfg.fill, FillPolicy::Drop);
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::Config(_))));
    }
}
