//! Time-space travel-time matrices and supervised windows over them.
//!
//! Rows are road segments in adjacency order, columns are reporting
//! intervals from oldest to newest. Windows keep that layout, so for a
//! three-interval lookback the columns are `j-2, j-1, j`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{IntervalRecord, Timeline};

#[derive(Debug, Clone)]
pub struct TimeSpaceMatrix {
    segment_ids: Vec<String>,
    timeline: Timeline,
    /// Row-major, segments × intervals. Unobserved cells hold NaN.
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl TimeSpaceMatrix {
    /// Builds a matrix from row-major cells; `None` marks an unobserved cell.
    pub fn from_cells(segment_ids: Vec<String>, timeline: Timeline, cells: Vec<Option<f64>>) -> Result<Self> {
        if cells.len() != segment_ids.len() * timeline.len {
            return Err(Error::shape(
                format!("{}x{} cells", segment_ids.len(), timeline.len),
                format!("{} cells", cells.len()),
            ));
        }
        let mut values = Vec::with_capacity(cells.len());
        let mut mask = Vec::with_capacity(cells.len());
        for c in cells {
            match c {
                Some(v) if v.is_finite() && v > 0.0 => {
                    values.push(v);
                    mask.push(true);
                }
                Some(v) => return Err(Error::Data(format!("travel time {v} is not finite and positive"))),
                None => {
                    values.push(f64::NAN);
                    mask.push(false);
                }
            }
        }
        Ok(Self { segment_ids, timeline, values, mask })
    }

    pub fn empty(segment_ids: Vec<String>, timeline: Timeline) -> Self {
        let n = segment_ids.len() * timeline.len;
        Self { segment_ids, timeline, values: vec![f64::NAN; n], mask: vec![false; n] }
    }

    pub fn segment_ids(&self) -> &[String] {
        &self.segment_ids
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn n_segments(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.timeline.len
    }

    #[inline]
    pub fn get(&self, segment: usize, interval: usize) -> Option<f64> {
        let k = segment * self.timeline.len + interval;
        self.mask[k].then(|| self.values[k])
    }

    pub fn is_observed(&self, segment: usize, interval: usize) -> bool {
        self.mask[segment * self.timeline.len + interval]
    }

    pub fn row(&self, segment: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.timeline.len).map(move |j| self.get(segment, j))
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn observed_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(v, _)| *v)
    }

    fn set(&mut self, segment: usize, interval: usize, value: f64) {
        let k = segment * self.timeline.len + interval;
        self.values[k] = value;
        self.mask[k] = true;
    }
}

impl PartialEq for TimeSpaceMatrix {
    /// Unobserved cells compare equal regardless of their placeholder.
    fn eq(&self, other: &Self) -> bool {
        self.segment_ids == other.segment_ids
            && self.timeline == other.timeline
            && self.mask == other.mask
            && self.values.iter().zip(&other.values).zip(&self.mask).all(|((a, b), m)| !m || a == b)
    }
}

/// Places interval records into a matrix over the given segments and
/// timeline. Cells without a record (or with a record of zero trips) stay
/// unobserved.
pub fn build_matrix(records: &[IntervalRecord], segment_ids: &[String], timeline: Timeline) -> Result<TimeSpaceMatrix> {
    let row_of: HashMap<&str, usize> = segment_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if row_of.len() != segment_ids.len() {
        return Err(Error::invalid("duplicate segment ids"));
    }
    let mut m = TimeSpaceMatrix::empty(segment_ids.to_vec(), timeline);
    let mut unknown: Vec<&str> = Vec::new();
    for rec in records {
        let Some(&row) = row_of.get(rec.segment_id.as_str()) else {
            if !unknown.contains(&rec.segment_id.as_str()) {
                unknown.push(&rec.segment_id);
            }
            continue;
        };
        if rec.interval_len_min != timeline.step_min {
            return Err(Error::invalid(format!(
                "record interval {} min does not match timeline step {} min",
                rec.interval_len_min, timeline.step_min
            )));
        }
        let col = timeline.index_of_start(rec.interval_start).ok_or_else(|| {
            Error::Data(format!("record at {} is not on the timeline", rec.interval_start))
        })?;
        if let (Some(v), true) = (rec.mean_travel_time_hr, rec.trip_count > 0) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Data(format!("record mean {v} is not finite and positive")));
            }
            m.set(row, col, v);
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownSegment(unknown.join(", ")));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillPolicy {
    ForwardFill,
    SegmentMedian,
    /// Leave gaps; windowing skips any anchor that touches one.
    #[default]
    Drop,
}

pub fn fill_missing(m: &TimeSpaceMatrix, policy: FillPolicy) -> TimeSpaceMatrix {
    let mut out = m.clone();
    match policy {
        FillPolicy::Drop => {}
        FillPolicy::ForwardFill => {
            for i in 0..m.n_segments() {
                let mut last = None;
                for j in 0..m.n_intervals() {
                    match m.get(i, j) {
                        Some(v) => last = Some(v),
                        None => {
                            if let Some(v) = last {
                                out.set(i, j, v);
                            }
                        }
                    }
                }
            }
        }
        FillPolicy::SegmentMedian => {
            for i in 0..m.n_segments() {
                let mut observed: Vec<f64> = m.row(i).flatten().collect();
                if observed.is_empty() {
                    continue;
                }
                observed.sort_by(f64::total_cmp);
                let n = observed.len();
                let median = if n % 2 == 1 { observed[n / 2] } else { 0.5 * (observed[n / 2 - 1] + observed[n / 2]) };
                for j in 0..m.n_intervals() {
                    if !m.is_observed(i, j) {
                        out.set(i, j, median);
                    }
                }
            }
        }
    }
    out
}

/// Min-max scaling of travel times onto the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub t_min: f64,
    pub t_max: f64,
}

impl NormalizationParams {
    /// Fraction of the observed range added below the minimum and above the
    /// maximum, so sigmoid outputs never need to saturate.
    pub const MARGIN: f64 = 0.05;

    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite() && t_max > t_min) {
            return Err(Error::InvalidParams(format!("normalization range [{t_min}, {t_max}] is degenerate")));
        }
        Ok(Self { t_min, t_max })
    }

    /// Range of the training values widened by [`Self::MARGIN`] on each side.
    ///
    /// A constant training set has no range; its margin is taken relative to
    /// the value itself instead.
    pub fn from_training(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (lo, hi) = values.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NoData("no finite training values to normalize".into()));
        }
        let span = if hi > lo { hi - lo } else { lo.abs() };
        Self::new(lo - Self::MARGIN * span, hi + Self::MARGIN * span)
    }

    #[inline]
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.t_min) / (self.t_max - self.t_min)
    }

    #[inline]
    pub fn denormalize(&self, v: f64) -> f64 {
        self.t_min + v * (self.t_max - self.t_min)
    }
}

pub fn normalize_matrix(m: &TimeSpaceMatrix, params: &NormalizationParams) -> TimeSpaceMatrix {
    let mut out = m.clone();
    for (v, observed) in out.values.iter_mut().zip(&m.mask) {
        if *observed {
            *v = params.normalize(*v);
        }
    }
    out
}

/// Shape of the input window: `rows` adjacent segments starting at
/// `first_row`, the anchor interval plus `lookback` earlier intervals, and the
/// target row inside the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub rows: usize,
    pub lookback: usize,
    pub target: usize,
    #[serde(default)]
    pub first_row: usize,
}

impl WindowSpec {
    pub fn new(rows: usize, lookback: usize, target: usize) -> Self {
        Self { rows, lookback, target, first_row: 0 }
    }

    pub fn cols(&self) -> usize {
        self.lookback + 1
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrix row of the target segment.
    pub fn target_row(&self) -> usize {
        self.first_row + self.target
    }

    pub fn with_target(self, target: usize) -> Self {
        Self { target, ..self }
    }

    pub fn check(&self, m: &TimeSpaceMatrix) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::invalid("window needs at least one segment"));
        }
        if self.first_row + self.rows > m.n_segments() {
            return Err(Error::invalid(format!(
                "window rows {}..{} exceed the {} segments of the matrix",
                self.first_row,
                self.first_row + self.rows,
                m.n_segments()
            )));
        }
        if self.target >= self.rows {
            return Err(Error::invalid(format!("target row {} outside a {}-row window", self.target, self.rows)));
        }
        if self.lookback + 2 > m.n_intervals() {
            return Err(Error::invalid(format!(
                "lookback {} needs at least {} intervals, matrix has {}",
                self.lookback,
                self.lookback + 2,
                m.n_intervals()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Row-major `rows × (lookback + 1)` travel times.
    pub window: Vec<f64>,
    pub target: f64,
    /// Matrix row of the target segment.
    pub target_segment: usize,
    /// Index of the newest interval in the window.
    pub anchor_interval: usize,
    /// Unix seconds at which the target interval starts.
    pub target_interval_start: i64,
}

fn fill_window(m: &TimeSpaceMatrix, spec: &WindowSpec, anchor: usize, out: &mut Vec<f64>) -> bool {
    out.clear();
    let first_col = anchor - spec.lookback;
    for i in spec.first_row..spec.first_row + spec.rows {
        for j in first_col..=anchor {
            match m.get(i, j) {
                Some(v) => out.push(v),
                None => return false,
            }
        }
    }
    true
}

/// Every fully observed window whose next-interval target is observed too.
/// Samples come out in anchor order.
pub fn window_samples(m: &TimeSpaceMatrix, spec: &WindowSpec) -> Result<Vec<TrainingSample>> {
    spec.check(m)?;
    let target_row = spec.target_row();
    let mut samples = Vec::new();
    let mut buf = Vec::with_capacity(spec.len());
    for anchor in spec.lookback..m.n_intervals() - 1 {
        let Some(target) = m.get(target_row, anchor + 1) else { continue };
        if fill_window(m, spec, anchor, &mut buf) {
            samples.push(TrainingSample {
                window: buf.clone(),
                target,
                target_segment: target_row,
                anchor_interval: anchor,
                target_interval_start: m.timeline().interval_start(anchor + 1),
            });
        }
    }
    Ok(samples)
}

/// A fully observed window used for forecasting; the target may lie beyond
/// the end of the matrix or be unobserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWindow {
    pub window: Vec<f64>,
    pub target_segment: usize,
    pub anchor_interval: usize,
    pub target_interval_start: i64,
    pub actual: Option<f64>,
}

pub fn forecast_windows(m: &TimeSpaceMatrix, spec: &WindowSpec) -> Result<Vec<ForecastWindow>> {
    if spec.first_row + spec.rows > m.n_segments() || spec.target >= spec.rows || spec.lookback >= m.n_intervals() {
        return Err(Error::invalid("window does not fit the matrix"));
    }
    let target_row = spec.target_row();
    let mut out = Vec::new();
    let mut buf = Vec::with_capacity(spec.len());
    for anchor in spec.lookback..m.n_intervals() {
        if fill_window(m, spec, anchor, &mut buf) {
            out.push(ForecastWindow {
                window: buf.clone(),
                target_segment: target_row,
                anchor_interval: anchor,
                target_interval_start: m.timeline().interval_start(anchor + 1),
                actual: (anchor + 1 < m.n_intervals()).then(|| m.get(target_row, anchor + 1)).flatten(),
            });
        }
    }
    Ok(out)
}

/// Splits samples by the start of their target interval: targets at or
/// after `boundary` (unix seconds) go to the test side.
pub fn split_by_date(samples: Vec<TrainingSample>, boundary: i64) -> (Vec<TrainingSample>, Vec<TrainingSample>) {
    samples.into_iter().partition(|s| s.target_interval_start < boundary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(n: usize) -> Timeline {
        Timeline::new(0, 5, n).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("s{i}")).collect()
    }

    fn full(rows: usize, cols: usize) -> TimeSpaceMatrix {
        let cells = (0..rows * cols).map(|k| Some(0.03 + k as f64 * 1e-3)).collect();
        TimeSpaceMatrix::from_cells(ids(rows), tl(cols), cells).unwrap()
    }

    fn rec(seg: &str, j: usize, v: Option<f64>) -> IntervalRecord {
        IntervalRecord {
            segment_id: seg.into(),
            interval_start: j as i64 * 300,
            interval_len_min: 5,
            mean_travel_time_hr: v,
            trip_count: v.map_or(0, |_| 10),
        }
    }

    #[test]
    fn build_full_three_by_three() {
        let recs: Vec<_> = (1..=3).flat_map(|i| (0..3).map(move |j| rec(&format!("s{i}"), j, Some(0.03)))).collect();
        let m = build_matrix(&recs, &ids(3), tl(3)).unwrap();
        assert_eq!(m.observed_count(), 9);
    }

    #[test]
    fn build_empty_and_one_missing() {
        let m = build_matrix(&[], &ids(3), tl(3)).unwrap();
        assert_eq!(m.observed_count(), 0);

        let recs: Vec<_> = (1..=3)
            .flat_map(|i| (0..8).map(move |j| rec(&format!("s{i}"), j, if i == 2 && j == 5 { None } else { Some(0.04) })))
            .collect();
        let m = build_matrix(&recs, &ids(3), tl(8)).unwrap();
        assert_eq!(m.observed_count(), 23);
        assert!(!m.is_observed(1, 5));
    }

    #[test]
    fn build_rejects_unknown_segment() {
        let err = build_matrix(&[rec("zz", 0, Some(0.1))], &ids(2), tl(2)).unwrap_err();
        assert!(matches!(err, Error::UnknownSegment(s) if s == "zz"));
    }

    #[test]
    fn forward_fill() {
        let m = TimeSpaceMatrix::from_cells(ids(1), tl(3), vec![Some(0.03), None, Some(0.05)]).unwrap();
        let f = fill_missing(&m, FillPolicy::ForwardFill);
        assert_eq!(f.row(0).collect::<Vec<_>>(), vec![Some(0.03), Some(0.03), Some(0.05)]);

        let m = TimeSpaceMatrix::from_cells(ids(1), tl(2), vec![None, Some(0.04)]).unwrap();
        let f = fill_missing(&m, FillPolicy::ForwardFill);
        assert_eq!(f.get(0, 0), None);
    }

    #[test]
    fn segment_median_fill() {
        let m = TimeSpaceMatrix::from_cells(ids(1), tl(4), vec![Some(0.03), None, Some(0.05), Some(0.04)]).unwrap();
        let f = fill_missing(&m, FillPolicy::SegmentMedian);
        assert_eq!(f.get(0, 1), Some(0.04));
    }

    #[test]
    fn fill_is_identity_on_full_matrix() {
        let m = full(3, 5);
        for p in [FillPolicy::ForwardFill, FillPolicy::SegmentMedian, FillPolicy::Drop] {
            assert_eq!(fill_missing(&m, p), m);
        }
    }

    #[test]
    fn normalization_boundaries() {
        let p = NormalizationParams::new(0.02, 0.06).unwrap();
        assert_eq!(p.normalize(0.02), 0.0);
        assert!((p.normalize(0.04) - 0.5).abs() < 1e-15);
        assert!(NormalizationParams::new(0.05, 0.05).is_err());

        let p = NormalizationParams::from_training([0.02, 0.06, 0.04]).unwrap();
        assert!((p.t_min - 0.018).abs() < 1e-15);
        assert!((p.t_max - 0.062).abs() < 1e-15);
        assert!(NormalizationParams::from_training(std::iter::empty()).is_err());
    }

    #[test]
    fn three_by_ten_gives_seven_samples() {
        let m = full(3, 10);
        let samples = window_samples(&m, &WindowSpec::new(3, 2, 1)).unwrap();
        // Brute force over every anchor j: needs j-2 >= 0 and j+1 <= 9.
        let expected: Vec<usize> = (0..10).filter(|j| *j >= 2 && j + 1 < 10).collect();
        assert_eq!(samples.iter().map(|s| s.anchor_interval).collect::<Vec<_>>(), expected);
        assert_eq!(samples.len(), 7);
    }

    #[test]
    fn minimal_matrix_gives_one_sample() {
        let m = full(2, 4);
        assert_eq!(window_samples(&m, &WindowSpec::new(2, 2, 0)).unwrap().len(), 1);
    }

    #[test]
    fn windows_touching_gaps_are_skipped() {
        let mut cells: Vec<Option<f64>> = (0..3 * 6).map(|_| Some(0.03)).collect();
        cells[6 + 3] = None; // segment 2, interval 3
        let m = TimeSpaceMatrix::from_cells(ids(3), tl(6), cells).unwrap();
        let anchors: Vec<_> = window_samples(&m, &WindowSpec::new(3, 2, 0))
            .unwrap()
            .iter()
            .map(|s| s.anchor_interval)
            .collect();
        // Anchors 3 and 4 include interval 3.
        assert_eq!(anchors, vec![2]);
    }

    #[test]
    fn window_extent_errors() {
        let m = full(3, 4);
        assert!(window_samples(&m, &WindowSpec::new(4, 1, 0)).is_err());
        assert!(window_samples(&m, &WindowSpec::new(3, 3, 0)).is_err());
        assert!(window_samples(&m, &WindowSpec::new(3, 1, 3)).is_err());
    }

    #[test]
    fn split_examples() {
        let m = full(1, 12);
        let samples = window_samples(&m, &WindowSpec::new(1, 1, 0)).unwrap();
        let n = samples.len();
        let (train, test) = split_by_date(samples.clone(), -1);
        assert!(train.is_empty());
        assert_eq!(test.len(), n);
        let (train, test) = split_by_date(samples.clone(), i64::MAX);
        assert!(test.is_empty());
        assert_eq!(train.len(), n);
        let (train, test) = split_by_date(samples, 6 * 300);
        assert!(train.iter().all(|s| s.target_interval_start < 1800));
        assert!(test.iter().all(|s| s.target_interval_start >= 1800));
    }

    #[test]
    fn forecast_includes_final_anchor() {
        let m = full(2, 5);
        let w = forecast_windows(&m, &WindowSpec::new(2, 1, 0)).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w.last().unwrap().actual, None);
        assert_eq!(w[0].actual, m.get(0, 2));
    }
}
