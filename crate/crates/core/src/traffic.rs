//! Traffic characteristics and conversion of toll-detector reads into
//! per-interval travel times.
//!
//! Units follow the usual traffic-engineering conventions: flow in car/hr,
//! speeds in km/hr, density in car/km, distances in km and travel times in
//! hours. Timestamps are unix seconds.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Flow `Q` in car/hr from a count observed over one reporting interval.
pub fn compute_flow(vehicle_count: u64, interval_len_min: u32) -> Result<f64> {
    if interval_len_min == 0 {
        return Err(Error::invalid("interval length must be positive"));
    }
    Ok(vehicle_count as f64 * (60.0 / interval_len_min as f64))
}

/// Time mean speed `U_t`: the plain average of spot speeds at one location.
pub fn compute_time_mean_speed(instant_speeds: &[f64]) -> Result<f64> {
    if instant_speeds.is_empty() {
        return Err(Error::NoData("no instantaneous speeds".into()));
    }
    if let Some(bad) = instant_speeds.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::invalid(format!("speed {bad} is not a finite nonnegative value")));
    }
    Ok(instant_speeds.iter().sum::<f64>() / instant_speeds.len() as f64)
}

/// Density `K = Q / U_t`. A stopped stream (`U_t <= 0`) has no estimate.
pub fn estimate_density(flow: f64, time_mean_speed: f64) -> Result<f64> {
    if !(time_mean_speed > 0.0) {
        return Err(Error::DivisionDegenerate(format!(
            "time mean speed {time_mean_speed} km/hr gives no density estimate"
        )));
    }
    Ok(flow / time_mean_speed)
}

/// Travel time `T = D / U_s` in hours.
pub fn estimate_travel_time(distance_km: f64, space_mean_speed: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(Error::invalid(format!("distance {distance_km} km must be positive")));
    }
    if !(space_mean_speed > 0.0) {
        return Err(Error::DivisionDegenerate(format!(
            "space mean speed {space_mean_speed} km/hr gives no travel time"
        )));
    }
    Ok(distance_km / space_mean_speed)
}

/// Space mean speed `U_s = D / T` in km/hr.
pub fn compute_space_mean_speed(distance_km: f64, travel_time_hr: f64) -> Result<f64> {
    if !(distance_km > 0.0 && travel_time_hr > 0.0) {
        return Err(Error::invalid(format!(
            "distance ({distance_km}) and travel time ({travel_time_hr}) must be positive"
        )));
    }
    Ok(distance_km / travel_time_hr)
}

/// Opaque vehicle identifier. Textual tags are interned on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleTag(pub u64);

/// One read of a vehicle tag by a roadside detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvent {
    pub detector_id: Arc<str>,
    pub vehicle_tag: VehicleTag,
    /// Unix seconds. Sub-second precision is kept.
    pub timestamp: f64,
}

impl DetectionEvent {
    pub fn new(detector_id: impl Into<Arc<str>>, vehicle_tag: VehicleTag, timestamp: f64) -> Result<Self> {
        let detector_id = detector_id.into();
        if detector_id.is_empty() {
            return Err(Error::invalid("empty detector id"));
        }
        if !timestamp.is_finite() {
            return Err(Error::invalid("non-finite timestamp"));
        }
        Ok(Self { detector_id, vehicle_tag, timestamp })
    }
}

/// A road segment between two detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDef {
    pub segment_id: String,
    pub origin_detector: String,
    pub dest_detector: String,
    pub length_km: f64,
}

impl SegmentDef {
    pub fn new(
        segment_id: impl Into<String>,
        origin_detector: impl Into<String>,
        dest_detector: impl Into<String>,
        length_km: f64,
    ) -> Result<Self> {
        let seg = Self {
            segment_id: segment_id.into(),
            origin_detector: origin_detector.into(),
            dest_detector: dest_detector.into(),
            length_km,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_id.is_empty() || self.origin_detector.is_empty() || self.dest_detector.is_empty() {
            return Err(Error::invalid("segment and detector ids must be non-empty"));
        }
        if self.origin_detector == self.dest_detector {
            return Err(Error::invalid(format!(
                "segment {} starts and ends at detector {}",
                self.segment_id, self.origin_detector
            )));
        }
        if !(self.length_km > 0.0 && self.length_km.is_finite()) {
            return Err(Error::invalid(format!(
                "segment {} has non-positive length {}",
                self.segment_id, self.length_km
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub vehicle_tag: VehicleTag,
    pub segment_id: String,
    pub depart: f64,
    pub arrive: f64,
    pub travel_time_hr: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MatchOptions {
    /// Pairings longer than this are treated as re-entries, not trips.
    pub max_trip_hr: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { max_trip_hr: 4.0 }
    }
}

/// Read counts from one matching pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MatchDiagnostics {
    pub origin_reads: usize,
    pub dest_reads: usize,
    pub matched: usize,
    /// Origin reads with no later destination read.
    pub unmatched_origin: usize,
    /// Origin reads whose earliest later destination read exceeded the
    /// maximum trip duration.
    pub rejected_too_long: usize,
    pub unmatched_dest: usize,
}

impl MatchDiagnostics {
    pub fn dropped_origin(&self) -> usize {
        self.unmatched_origin + self.rejected_too_long
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatchOutcome {
    pub trips: Vec<Trip>,
    pub diagnostics: MatchDiagnostics,
}

/// Pairs origin and destination reads of the same tag into trips.
///
/// For every tag, origin reads are visited in time order and each takes the
/// earliest strictly later destination read that no earlier origin read has
/// consumed. A read is used at most once. Trips are returned sorted by
/// departure time (ties by tag).
pub fn match_trips(events: &[DetectionEvent], segment: &SegmentDef, opts: MatchOptions) -> MatchOutcome {
    let origin = segment.origin_detector.as_str();
    let dest = segment.dest_detector.as_str();
    let max_secs = opts.max_trip_hr * SECONDS_PER_HOUR;

    // (tag, side, time) with side 0 = origin, 1 = destination; sorting groups
    // each tag's origin reads ahead of its destination reads, both in time order.
    let mut reads: Vec<(VehicleTag, u8, f64)> = Vec::new();
    let mut diag = MatchDiagnostics::default();
    for ev in events {
        if &*ev.detector_id == origin {
            reads.push((ev.vehicle_tag, 0, ev.timestamp));
            diag.origin_reads += 1;
        } else if &*ev.detector_id == dest {
            reads.push((ev.vehicle_tag, 1, ev.timestamp));
            diag.dest_reads += 1;
        }
    }
    reads.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));

    let mut trips = Vec::new();
    for group in reads.chunk_by(|a, b| a.0 == b.0) {
        let tag = group[0].0;
        let split = group.partition_point(|r| r.1 == 0);
        let (origins, dests) = group.split_at(split);
        let mut next_dest = 0;
        let mut consumed = 0;
        for &(_, _, depart) in origins {
            while next_dest < dests.len() && dests[next_dest].2 <= depart {
                next_dest += 1;
            }
            match dests.get(next_dest) {
                None => diag.unmatched_origin += 1,
                Some(&(_, _, arrive)) if arrive - depart > max_secs => diag.rejected_too_long += 1,
                Some(&(_, _, arrive)) => {
                    trips.push(Trip {
                        vehicle_tag: tag,
                        segment_id: segment.segment_id.clone(),
                        depart,
                        arrive,
                        travel_time_hr: (arrive - depart) / SECONDS_PER_HOUR,
                    });
                    next_dest += 1;
                    consumed += 1;
                }
            }
        }
        diag.matched += consumed;
        diag.unmatched_dest += dests.len() - consumed;
    }
    trips.sort_by(|a, b| a.depart.total_cmp(&b.depart).then(a.vehicle_tag.cmp(&b.vehicle_tag)));
    MatchOutcome { trips, diagnostics: diag }
}

/// A uniform grid of reporting intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    /// Unix seconds of the first interval start.
    pub start: i64,
    pub step_min: u32,
    pub len: usize,
}

impl Timeline {
    pub fn new(start: i64, step_min: u32, len: usize) -> Result<Self> {
        if step_min == 0 {
            return Err(Error::invalid("interval length must be positive"));
        }
        Ok(Self { start, step_min, len })
    }

    /// Smallest aligned timeline containing every instant in `[first, last]`.
    pub fn covering(first: f64, last: f64, step_min: u32) -> Result<Self> {
        if step_min == 0 {
            return Err(Error::invalid("interval length must be positive"));
        }
        if !(first.is_finite() && last.is_finite()) || last < first {
            return Err(Error::invalid("timeline bounds must be finite and ordered"));
        }
        let step = step_min as i64 * 60;
        let start = (first.floor() as i64).div_euclid(step) * step;
        let end = (last.floor() as i64).div_euclid(step) * step;
        Ok(Self { start, step_min, len: ((end - start) / step) as usize + 1 })
    }

    pub fn step_secs(&self) -> i64 {
        self.step_min as i64 * 60
    }

    pub fn interval_start(&self, index: usize) -> i64 {
        self.start + index as i64 * self.step_secs()
    }

    pub fn end(&self) -> i64 {
        self.interval_start(self.len)
    }

    /// Interval containing instant `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let offset = (t - self.start as f64) / self.step_secs() as f64;
        if offset < 0.0 || !offset.is_finite() {
            return None;
        }
        let idx = offset.floor() as usize;
        (idx < self.len).then_some(idx)
    }

    /// Index of an interval that starts exactly at `start`.
    pub fn index_of_start(&self, start: i64) -> Option<usize> {
        let rel = start - self.start;
        if rel < 0 || rel % self.step_secs() != 0 {
            return None;
        }
        let idx = (rel / self.step_secs()) as usize;
        (idx < self.len).then_some(idx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub segment_id: String,
    pub interval_start: i64,
    pub interval_len_min: u32,
    /// `None` when no trip completed in the interval.
    pub mean_travel_time_hr: Option<f64>,
    pub trip_count: usize,
}

/// Averages trip travel times per segment and reporting interval.
///
/// Trips are bucketed by arrival, since a travel time only becomes known once
/// the vehicle reaches the destination detector. Every (segment, interval)
/// pair of the timeline gets a record; intervals without trips have
/// `trip_count == 0`. Arrivals outside the timeline are ignored.
pub fn aggregate_travel_times(
    trips: &[Trip],
    segment_ids: &[String],
    timeline: &Timeline,
) -> Result<Vec<IntervalRecord>> {
    let step = timeline.step_min;
    if step == 0 || 60 % step != 0 {
        return Err(Error::invalid(format!("interval length {step} min does not divide 60")));
    }
    if timeline.start.rem_euclid(timeline.step_secs()) != 0 {
        return Err(Error::invalid("timeline start is not aligned to the interval length"));
    }
    let row_of: HashMap<&str, usize> = segment_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut sums = vec![0.0; segment_ids.len() * timeline.len];
    let mut counts = vec![0usize; segment_ids.len() * timeline.len];
    for trip in trips {
        let row = *row_of
            .get(trip.segment_id.as_str())
            .ok_or_else(|| Error::UnknownSegment(trip.segment_id.clone()))?;
        if let Some(col) = timeline.index_of(trip.arrive) {
            sums[row * timeline.len + col] += trip.travel_time_hr;
            counts[row * timeline.len + col] += 1;
        }
    }

    let mut records = Vec::with_capacity(sums.len());
    for (row, seg) in segment_ids.iter().enumerate() {
        for col in 0..timeline.len {
            let n = counts[row * timeline.len + col];
            records.push(IntervalRecord {
                segment_id: seg.clone(),
                interval_start: timeline.interval_start(col),
                interval_len_min: step,
                mean_travel_time_hr: (n > 0).then(|| sums[row * timeline.len + col] / n as f64),
                trip_count: n,
            });
        }
    }
    Ok(records)
}
