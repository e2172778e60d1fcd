//! Synthetic corridor traffic.
//!
//! Speeds come from a linear speed-density closure evaluated at the density
//! that carries the interval's demand. Congestion events slow a segment by a
//! fixed fraction and travel upstream (towards lower segment indices) at a
//! configurable number of segments per interval. Travel times get
//! multiplicative log-normal noise. Detection events are sampled per
//! (segment, interval) cell from independent random streams, so any subset of
//! cells can be emitted on its own and still matches a full emission.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeSpaceMatrix;
use crate::traffic::{estimate_travel_time, DetectionEvent, SegmentDef, Timeline, VehicleTag};

/// Lowest speed reported when density exceeds jam density.
pub const FLOOR_SPEED_KMH: f64 = 5.0;

/// 2017-07-01T00:00:00Z.
pub const DEFAULT_START_UNIX_S: i64 = 1_498_867_200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenshieldsSpeed {
    pub speed: f64,
    /// Density was above jam density and the floor speed was used.
    pub clamped: bool,
}

/// `u = u_f (1 − k / k_j)`.
pub fn greenshields_speed(density: f64, free_flow: f64, jam_density: f64) -> GreenshieldsSpeed {
    if density > jam_density {
        return GreenshieldsSpeed { speed: FLOOR_SPEED_KMH, clamped: true };
    }
    GreenshieldsSpeed { speed: free_flow * (1.0 - density.max(0.0) / jam_density), clamped: false }
}

/// Density on the uncongested branch that carries `flow` car/hr, i.e. the
/// smaller root of `q = u_f k (1 − k/k_j)`. Demand above capacity saturates
/// at the critical density `k_j / 2`.
pub fn density_for_flow(flow: f64, free_flow: f64, jam_density: f64) -> f64 {
    let disc = 1.0 - 4.0 * flow / (free_flow * jam_density);
    if disc <= 0.0 {
        jam_density / 2.0
    } else {
        0.5 * jam_density * (1.0 - disc.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionEvent {
    /// Segment hit first; the slowdown then moves to lower indices.
    pub origin_segment_index: usize,
    pub start_interval: usize,
    pub duration_intervals: usize,
    /// Fractional speed reduction in (0, 1).
    pub severity: f64,
    /// Segments travelled upstream per interval.
    pub wave_speed: f64,
}

impl CongestionEvent {
    /// Interval at which the slowdown reaches `segment`, if it ever does.
    pub fn arrival_interval(&self, segment: usize) -> Option<usize> {
        if segment > self.origin_segment_index {
            return None;
        }
        let distance = (self.origin_segment_index - segment) as f64;
        // Whole segments covered after t intervals: floor(wave_speed * t).
        let lag = (distance / self.wave_speed - 1e-9).ceil().max(0.0) as usize;
        Some(self.start_interval + lag)
    }

    pub fn covers(&self, segment: usize, interval: usize) -> bool {
        self.arrival_interval(segment)
            .is_some_and(|a| interval >= a && interval < a + self.duration_intervals)
    }
}

fn default_free_flow() -> f64 {
    90.0
}
fn default_jam_density() -> f64 {
    400.0
}
fn default_noise() -> f64 {
    0.03
}
fn default_penetration() -> f64 {
    0.94
}
fn default_interval() -> u32 {
    5
}
fn default_start() -> i64 {
    DEFAULT_START_UNIX_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Ordered upstream to downstream.
    pub segments: Vec<SegmentDef>,
    /// Number of intervals.
    pub horizon: usize,
    #[serde(default = "default_interval")]
    pub interval_len_min: u32,
    #[serde(default = "default_free_flow")]
    pub free_flow_speed: f64,
    #[serde(default = "default_jam_density")]
    pub jam_density: f64,
    /// Base flow in car/hr per interval, repeated cyclically over the
    /// horizon (a 288-entry profile at 5 minutes is one day).
    pub demand_profile: Vec<f64>,
    #[serde(default)]
    pub congestion_events: Vec<CongestionEvent>,
    #[serde(default = "default_noise")]
    pub noise_sd_rel: f64,
    #[serde(default = "default_penetration")]
    pub penetration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Unix seconds of the first interval.
    #[serde(default = "default_start")]
    pub start_unix_s: i64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.segments.is_empty() {
            return cfg("scenario needs at least one segment".into());
        }
        if self.segments.len() > 255 {
            return cfg("at most 255 segments are supported".into());
        }
        for s in &self.segments {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.horizon == 0 || self.horizon > u32::MAX as usize {
            return cfg(format!("horizon {} out of range", self.horizon));
        }
        if self.interval_len_min == 0 || 60 % self.interval_len_min != 0 {
            return cfg(format!("interval {} min does not divide 60", self.interval_len_min));
        }
        if self.start_unix_s.rem_euclid(self.interval_len_min as i64 * 60) != 0 {
            return cfg("start is not aligned to the interval length".into());
        }
        if !(self.free_flow_speed > 0.0 && self.jam_density > 0.0) {
            return cfg("free-flow speed and jam density must be positive".into());
        }
        if self.demand_profile.is_empty() || self.demand_profile.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return cfg("demand profile must be non-empty and nonnegative".into());
        }
        if !(self.noise_sd_rel >= 0.0 && self.noise_sd_rel.is_finite()) {
            return cfg("noise must be a nonnegative number".into());
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            return cfg(format!("penetration {} outside [0, 1]", self.penetration));
        }
        for e in &self.congestion_events {
            if e.origin_segment_index >= self.segments.len() {
                return cfg(format!("event origin {} out of range", e.origin_segment_index));
            }
            if !(e.severity > 0.0 && e.severity < 1.0) {
                return cfg(format!("event severity {} outside (0, 1)", e.severity));
            }
            if !(e.wave_speed > 0.0 && e.wave_speed.is_finite()) {
                return cfg(format!("wave speed {} must be positive", e.wave_speed));
            }
        }
        Ok(())
    }

    pub fn timeline(&self) -> Timeline {
        Timeline { start: self.start_unix_s, step_min: self.interval_len_min, len: self.horizon }
    }

    pub fn segment_ids(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.segment_id.clone()).collect()
    }

    pub fn demand_at(&self, interval: usize) -> f64 {
        self.demand_profile[interval % self.demand_profile.len()]
    }

    /// Three-segment corridor, flat demand of 500 vehicles per 5-minute
    /// interval, no events.
    pub fn corridor(days: usize, seed: u64) -> Self {
        let segments = [("S1", "D1", "D2", 3.0), ("S2", "D2", "D3", 4.0), ("S3", "D3", "D4", 2.5)]
            .into_iter()
            .map(|(id, o, d, len)| SegmentDef::new(id, o, d, len).unwrap())
            .collect();
        Self {
            segments,
            horizon: days * 288,
            interval_len_min: 5,
            free_flow_speed: default_free_flow(),
            jam_density: default_jam_density(),
            demand_profile: vec![6000.0],
            congestion_events: Vec::new(),
            noise_sd_rel: default_noise(),
            penetration: default_penetration(),
            seed,
            start_unix_s: DEFAULT_START_UNIX_S,
        }
    }
}

impl ScenarioConfig {
    /// [`ScenarioConfig::corridor`] with random congestion events drawn from
    /// the default [`IncidentModel`].
    pub fn congested_corridor(days: usize, seed: u64) -> Self {
        let mut cfg = Self::corridor(days, seed);
        let per_day = (24 * 60 / cfg.interval_len_min) as usize;
        cfg.congestion_events =
            random_congestion_events(cfg.segments.len(), cfg.horizon, per_day, &IncidentModel::default(), seed);
        cfg
    }
}

/// Parameters for drawing congestion events at random.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncidentModel {
    pub events_per_day: f64,
    pub severity: (f64, f64),
    /// Inclusive range of durations in intervals.
    pub duration: (usize, usize),
    pub wave_speed: f64,
}

impl Default for IncidentModel {
    fn default() -> Self {
        Self { events_per_day: 8.0, severity: (0.3, 0.7), duration: (2, 8), wave_speed: 1.0 }
    }
}

/// Events at uniformly random intervals and origin segments.
pub fn random_congestion_events(
    n_segments: usize,
    horizon: usize,
    intervals_per_day: usize,
    model: &IncidentModel,
    seed: u64,
) -> Vec<CongestionEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1ac1_de47);
    let expected = model.events_per_day * horizon as f64 / intervals_per_day as f64;
    let count = if expected > 0.0 { Poisson::new(expected).unwrap().sample(&mut rng) as usize } else { 0 };
    let mut events: Vec<CongestionEvent> = (0..count)
        .map(|_| CongestionEvent {
            origin_segment_index: rng.random_range(0..n_segments),
            start_interval: rng.random_range(0..horizon),
            duration_intervals: rng.random_range(model.duration.0..=model.duration.1),
            severity: rng.random_range(model.severity.0..model.severity.1),
            wave_speed: model.wave_speed,
        })
        .collect();
    events.sort_by_key(|e| (e.start_interval, e.origin_segment_index));
    events
}

/// Noise-free travel time of one cell in hours.
pub fn base_travel_time(config: &ScenarioConfig, segment: usize, interval: usize) -> Result<f64> {
    let demand = config.demand_at(interval);
    let density = density_for_flow(demand, config.free_flow_speed, config.jam_density);
    let mut speed = greenshields_speed(density, config.free_flow_speed, config.jam_density).speed;
    for e in &config.congestion_events {
        if e.covers(segment, interval) {
            speed *= 1.0 - e.severity;
        }
    }
    estimate_travel_time(config.segments[segment].length_km, speed)
}

/// Ground-truth travel-time matrix.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<TimeSpaceMatrix> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sd_rel).map_err(|e| Error::Config(e.to_string()))?;
    let mut cells = Vec::with_capacity(config.segments.len() * config.horizon);
    for i in 0..config.segments.len() {
        for j in 0..config.horizon {
            let t = base_travel_time(config, i, j)?;
            let factor = if config.noise_sd_rel > 0.0 { noise.sample(&mut rng).exp() } else { 1.0 };
            cells.push(Some(t * factor));
        }
    }
    TimeSpaceMatrix::from_cells(config.segment_ids(), config.timeline(), cells)
}

const EMISSION_SALT: u64 = 0x7e57_da7a_e5e1_7a65;

/// Detection events for every cell of `truth`.
pub fn emit_detection_events(truth: &TimeSpaceMatrix, config: &ScenarioConfig) -> Result<Vec<DetectionEvent>> {
    emit_detection_events_for(truth, config, 0..truth.n_intervals())
}

/// Detection events for the cells whose interval lies in `intervals`.
///
/// Every tagged vehicle completing segment `i` during interval `j` is read at
/// the origin detector and, one travel time later, at the destination
/// detector. Arrival instants are uniform within the interval; the travel
/// time is the cell value times log-normal jitter with log-sd
/// `noise_sd_rel`. Tags are unique per (segment, interval, vehicle).
pub fn emit_detection_events_for(
    truth: &TimeSpaceMatrix,
    config: &ScenarioConfig,
    intervals: Range<usize>,
) -> Result<Vec<DetectionEvent>> {
    config.validate()?;
    if truth.n_segments() != config.segments.len() || intervals.end > truth.n_intervals() {
        return Err(Error::invalid("truth matrix does not match the scenario"));
    }
    let detectors: Vec<(Arc<str>, Arc<str>)> = config
        .segments
        .iter()
        .map(|s| (Arc::from(s.origin_detector.as_str()), Arc::from(s.dest_detector.as_str())))
        .collect();
    let step_secs = truth.timeline().step_secs() as f64;
    let step_hr = step_secs / 3600.0;
    let jitter = Normal::new(0.0, 1.0).unwrap();
    let mut events = Vec::new();
    for (i, (origin, dest)) in detectors.iter().enumerate() {
        for j in intervals.clone() {
            let Some(tt) = truth.get(i, j) else { continue };
            let lambda = config.demand_at(j) * step_hr;
            if lambda <= 0.0 || config.penetration <= 0.0 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ EMISSION_SALT);
            rng.set_stream((i * truth.n_intervals() + j) as u64);
            let vehicles = Poisson::new(lambda).unwrap().sample(&mut rng) as u64;
            let tagged = Binomial::new(vehicles, config.penetration).unwrap().sample(&mut rng);
            if tagged >= 1 << 24 {
                return Err(Error::Config(format!("{tagged} vehicles in one cell exceed the tag space")));
            }
            let start = truth.timeline().interval_start(j) as f64;
            for k in 0..tagged {
                let arrive = start + rng.random::<f64>() * step_secs;
                let rel = if config.noise_sd_rel > 0.0 { (config.noise_sd_rel * jitter.sample(&mut rng)).exp() } else { 1.0 };
                let depart = arrive - tt * rel * 3600.0;
                let tag = VehicleTag(((i as u64) << 56) | ((j as u64) << 24) | k);
                events.push(DetectionEvent { detector_id: origin.clone(), vehicle_tag: tag, timestamp: depart });
                events.push(DetectionEvent { detector_id: dest.clone(), vehicle_tag: tag, timestamp: arrive });
            }
        }
    }
    Ok(events)
}
