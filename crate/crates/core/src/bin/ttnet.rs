use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ttnet::grid::{build_matrix, forecast_windows, TimeSpaceMatrix, WindowSpec};
use ttnet::harness::{compare_methods, train_on_split, ExperimentConfig, Method};
use ttnet::io::{format_instant, parse_instant, read_events, read_matrix, read_segments, write_matrix, write_segments, EventWriter};
use ttnet::model::SavedModel;
use ttnet::synth::{emit_detection_events_for, generate_scenario, random_congestion_events, IncidentModel, ScenarioConfig};
use ttnet::traffic::{aggregate_travel_times, match_trips, MatchOptions, Timeline};
use ttnet::{Error, Result};

/// Travel-time prediction on corridor time-space matrices.
///
/// Exit status: 0 success, 2 configuration error, 3 data error, 4 training
/// diverged.
#[derive(Parser)]
#[command(name = "ttnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write detection events and the true matrix.
    Generate {
        /// Scenario JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only write the true matrix and segment table.
        #[arg(long)]
        no_events: bool,
    },
    /// Match detection events into trips and aggregate them into a matrix.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        /// Interval length in minutes.
        #[arg(long, default_value_t = 5)]
        interval: u32,
        /// Longest plausible trip in hours.
        #[arg(long, default_value_t = 4.0)]
        max_trip_hr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one method on the intervals before the split and save it.
    Train {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        method: String,
        /// Segments, lookback and 1-based target segment, e.g. `3,2,1`.
        #[arg(long)]
        window: Option<String>,
        /// First instant of the held-out period.
        #[arg(long)]
        split: String,
        /// Experiment JSON with training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Forecast the next interval for every complete window of a matrix.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare methods on one split; prints a table and writes a JSON report.
    Evaluate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value = "avg,linear,nn,cnn-general")]
        methods: String,
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        split: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: PathBuf,
    },
}

/// Scenario file: the scenario itself plus an optional model for drawing
/// extra congestion events at random.
#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(flatten)]
    scenario: ScenarioConfig,
    #[serde(default)]
    incidents: Option<IncidentModel>,
}

fn config_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn read_config_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_error(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_matrix(path: &Path) -> Result<TimeSpaceMatrix> {
    read_matrix(open(path)?)
}

/// `x,y,z` with a 1-based target segment.
fn parse_window(s: &str) -> Result<WindowSpec> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("window `{s}` is not x,y,z"))))
        .collect::<Result<_>>()?;
    let [x, y, z] = parts[..] else {
        return Err(Error::Config(format!("window `{s}` is not x,y,z")));
    };
    if x == 0 || z == 0 || z > x {
        return Err(Error::Config(format!("target segment {z} outside a {x}-segment window")));
    }
    Ok(WindowSpec::new(x, y, z - 1))
}

fn experiment(config: Option<&Path>, window: Option<&str>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::from_json(&read_config_text(p)?).map_err(|e| config_error(p, e))?,
        None => ExperimentConfig::default(),
    };
    if let Some(w) = window {
        let first_row = cfg.window.first_row;
        cfg.window = WindowSpec { first_row, ..parse_window(w)? };
        cfg.targets.clear();
    }
    if let Some(seed) = seed {
        cfg.training = cfg.training.with_seed(seed);
    }
    Ok(cfg)
}

fn split_instant(s: &str) -> Result<i64> {
    parse_instant(s).map_err(|e| Error::Config(e.to_string()))
}

fn generate(config: &Path, out: &Path, no_events: bool) -> Result<()> {
    let file: ScenarioFile = serde_json::from_str(&read_config_text(config)?).map_err(|e| config_error(config, e))?;
    let mut scenario = file.scenario;
    if let Some(model) = file.incidents {
        let per_day = (24 * 60 / scenario.interval_len_min.max(1)) as usize;
        scenario.congestion_events.extend(random_congestion_events(
            scenario.segments.len(),
            scenario.horizon,
            per_day,
            &model,
            scenario.seed,
        ));
        scenario.congestion_events.sort_by_key(|e| (e.start_interval, e.origin_segment_index));
    }
    let truth = generate_scenario(&scenario)?;
    fs::create_dir_all(out)?;
    write_matrix(create(&out.join("truth.csv"))?, &truth)?;
    write_segments(create(&out.join("segments.csv"))?, &scenario.segments)?;
    fs::write(out.join("scenario.json"), serde_json::to_string_pretty(&scenario)? + "\n")?;
    let mut count = 0;
    if !no_events {
        let mut w = EventWriter::new(create(&out.join("events.csv"))?)?;
        let per_day = (24 * 60 / scenario.interval_len_min) as usize;
        let mut start = 0;
        while start < truth.n_intervals() {
            let end = (start + per_day).min(truth.n_intervals());
            let events = emit_detection_events_for(&truth, &scenario, start..end)?;
            count += events.len();
            w.write(&events)?;
            start = end;
        }
        w.finish()?;
    }
    println!(
        "{} segments × {} intervals, {} congestion events, {count} detection events written to {}",
        truth.n_segments(),
        truth.n_intervals(),
        scenario.congestion_events.len(),
        out.display()
    );
    Ok(())
}

fn ingest(events: &Path, segments: &Path, interval: u32, max_trip_hr: f64, out: &Path) -> Result<()> {
    let segments = read_segments(open(segments)?)?;
    if segments.is_empty() {
        return Err(Error::Data("segment table is empty".into()));
    }
    let events = read_events(open(events)?)?;
    let opts = MatchOptions { max_trip_hr };
    let mut trips = Vec::new();
    for seg in &segments {
        let outcome = match_trips(&events, seg, opts);
        let d = outcome.diagnostics;
        eprintln!(
            "{}: {} trips, {} origin reads unmatched, {} too long, {} destination reads unmatched",
            seg.segment_id, d.matched, d.unmatched_origin, d.rejected_too_long, d.unmatched_dest
        );
        trips.extend(outcome.trips);
    }
    let Some(first) = trips.iter().map(|t| t.arrive).min_by(f64::total_cmp) else {
        return Err(Error::NoData("no trips could be matched".into()));
    };
    let last = trips.iter().map(|t| t.arrive).max_by(f64::total_cmp).unwrap_or(first);
    let timeline = Timeline::covering(first, last, interval).map_err(|e| Error::Config(e.to_string()))?;
    let ids: Vec<String> = segments.iter().map(|s| s.segment_id.clone()).collect();
    let records = aggregate_travel_times(&trips, &ids, &timeline)?;
    let m = build_matrix(&records, &ids, timeline)?;
    write_matrix(create(out)?, &m)?;
    println!(
        "{} segments × {} intervals from {}, {} of {} cells observed",
        m.n_segments(),
        m.n_intervals(),
        format_instant(timeline.start),
        m.observed_count(),
        m.n_segments() * m.n_intervals()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    matrix: &Path,
    method: &str,
    window: Option<&str>,
    split: &str,
    config: Option<&Path>,
    seed: Option<u64>,
    model_out: &Path,
) -> Result<()> {
    let method: Method = method.parse()?;
    let cfg = experiment(config, window, seed)?;
    let boundary = split_instant(split)?;
    let m = load_matrix(matrix)?;
    let (model, train_len) = train_on_split(&m, method, &cfg, boundary)?;
    model.save(model_out)?;
    println!(
        "{method} fitted on {train_len} samples before {}, target {}, saved to {}",
        format_instant(boundary),
        m.segment_ids()[cfg.window.target_row()],
        model_out.display()
    );
    Ok(())
}

fn predict(model: &Path, matrix: &Path, out: &Path) -> Result<()> {
    let model = SavedModel::load(model).map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("{}: {io}", model.display())),
        other => other,
    })?;
    let m = load_matrix(matrix)?;
    let windows = forecast_windows(&m, &model.window).map_err(|e| Error::Config(e.to_string()))?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["segment_id", "target_interval_start", "predicted_hr", "actual_hr"])?;
    for f in &windows {
        let p = model.predict(&f.window)?;
        w.write_record([
            m.segment_ids()[f.target_segment].as_str(),
            &format_instant(f.target_interval_start),
            &p.to_string(),
            &f.actual.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    println!("{} forecasts written to {}", windows.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    matrix: &Path,
    methods: &str,
    window: Option<&str>,
    split: &str,
    config: Option<&Path>,
    seed: Option<u64>,
    report: &Path,
) -> Result<()> {
    let methods = Method::parse_list(methods)?;
    let cfg = experiment(config, window, seed)?;
    let boundary = split_instant(split)?;
    let m = load_matrix(matrix)?;
    let comparison = compare_methods(&m, &methods, &cfg, boundary)?;
    print!("{}", comparison.table());
    fs::write(report, comparison.to_json()?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, no_events } => generate(&config, &out, no_events),
        Command::Ingest { events, segments, interval, max_trip_hr, out } => {
            ingest(&events, &segments, interval, max_trip_hr, &out)
        }
        Command::Train { matrix, method, window, split, config, seed, model_out } => {
            train(&matrix, &method, window.as_deref(), &split, config.as_deref(), seed, &model_out)
        }
        Command::Predict { model, matrix, out } => predict(&model, &matrix, &out),
        Command::Evaluate { matrix, methods, window, split, config, seed, report } => {
            evaluate(&matrix, &methods, window.as_deref(), &split, config.as_deref(), seed, &report)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
