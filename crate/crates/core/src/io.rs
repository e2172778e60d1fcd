//! CSV formats for detection events, segment definitions and travel-time
//! matrices.
//!
//! * events: `detector_id,vehicle_tag,timestamp_unix_s`, rows in any order
//! * segments: `segment_id,origin_detector,dest_detector,length_km`
//! * matrix: `segment_id` followed by one column per interval, headed by its
//!   ISO-8601 start; unobserved cells are empty

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};

use crate::error::{Error, Result};
use crate::grid::TimeSpaceMatrix;
use crate::traffic::{DetectionEvent, SegmentDef, Timeline, VehicleTag};

const EVENT_HEADER: [&str; 3] = ["detector_id", "vehicle_tag", "timestamp_unix_s"];
const SEGMENT_HEADER: [&str; 4] = ["segment_id", "origin_detector", "dest_detector", "length_km"];

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Data(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: `{field}` is not a valid {what}")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Vehicle tags are opaque strings in the file; they are interned to
/// [`VehicleTag`] values in order of first appearance.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<DetectionEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(rdr.headers()?, &EVENT_HEADER)?;
    let mut tags: HashMap<String, VehicleTag> = HashMap::new();
    let mut detectors: HashMap<String, Arc<str>> = HashMap::new();
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let det = rec.get(0).unwrap_or_default();
        let tag = rec.get(1).unwrap_or_default();
        if tag.is_empty() {
            return Err(Error::Data(format!("line {line}: empty vehicle tag")));
        }
        let ts = parse_f64(rec.get(2).unwrap_or_default(), "timestamp", line)?;
        let next = VehicleTag(tags.len() as u64);
        let tag = *tags.entry(tag.to_string()).or_insert(next);
        let det = detectors.entry(det.to_string()).or_insert_with(|| Arc::from(det)).clone();
        events.push(DetectionEvent::new(det, tag, ts).map_err(|e| Error::Data(format!("line {line}: {e}")))?);
    }
    Ok(events)
}

/// Tags are written as 16-digit hex.
pub fn write_events<W: Write>(writer: W, events: &[DetectionEvent]) -> Result<()> {
    let mut w = EventWriter::new(writer)?;
    w.write(events)?;
    w.finish()
}

/// Appends events to one CSV file in several batches.
pub struct EventWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> EventWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(EVENT_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, events: &[DetectionEvent]) -> Result<()> {
        for e in events {
            self.inner.write_record([&*e.detector_id, &format!("{:016x}", e.vehicle_tag.0), &e.timestamp.to_string()])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_segments<R: Read>(reader: R) -> Result<Vec<SegmentDef>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(rdr.headers()?, &SEGMENT_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let len = parse_f64(rec.get(3).unwrap_or_default(), "length", line)?;
        let seg = SegmentDef::new(
            rec.get(0).unwrap_or_default(),
            rec.get(1).unwrap_or_default(),
            rec.get(2).unwrap_or_default(),
            len,
        )
        .map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        out.push(seg);
    }
    Ok(out)
}

pub fn write_segments<W: Write>(writer: W, segments: &[SegmentDef]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SEGMENT_HEADER)?;
    for s in segments {
        w.write_record([&s.segment_id, &s.origin_detector, &s.dest_detector, &s.length_km.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_instant(unix_s: i64) -> String {
    DateTime::<Utc>::from_timestamp(unix_s, 0)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| unix_s.to_string())
}

/// Accepts RFC 3339 timestamps or plain `YYYY-MM-DD` dates (midnight UTC).
pub fn parse_instant(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    Err(Error::invalid(format!("`{s}` is not an ISO-8601 date or timestamp")))
}

pub fn write_matrix<W: Write>(writer: W, m: &TimeSpaceMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["segment_id".to_string()];
    header.extend((0..m.n_intervals()).map(|j| format_instant(m.timeline().interval_start(j))));
    w.write_record(&header)?;
    for (i, id) in m.segment_ids().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.row(i).map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(reader: R) -> Result<TimeSpaceMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("segment_id") {
        return Err(Error::Data("matrix header must start with `segment_id`".into()));
    }
    let starts: Vec<i64> = header
        .iter()
        .skip(1)
        .map(|h| parse_instant(h).map_err(|_| Error::Data(format!("matrix column `{h}` is not an interval start"))))
        .collect::<Result<_>>()?;
    if starts.len() < 2 {
        return Err(Error::Data("matrix needs at least two interval columns".into()));
    }
    let step = starts[1] - starts[0];
    if step <= 0 || step % 60 != 0 || starts.windows(2).any(|w| w[1] - w[0] != step) {
        return Err(Error::Data("interval columns must be uniformly spaced whole minutes".into()));
    }
    let timeline = Timeline::new(starts[0], (step / 60) as u32, starts.len())?;
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != starts.len() + 1 {
            return Err(Error::Data(format!("line {line}: expected {} fields, found {}", starts.len() + 1, rec.len())));
        }
        ids.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            cells.push(if f.is_empty() { None } else { Some(parse_f64(f, "travel time", line)?) });
        }
    }
    TimeSpaceMatrix::from_cells(ids, timeline, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn events_round_trip_and_intern_tags() {
        let csv = "detector_id,vehicle_tag,timestamp_unix_s\nL2,ABC,220.5\nL1,ABC,100\nL1,XYZ,50\n";
        let ev = read_events(csv.as_bytes()).unwrap();
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[0].vehicle_tag, ev[1].vehicle_tag);
        assert_ne!(ev[0].vehicle_tag, ev[2].vehicle_tag);
        let mut out = Vec::new();
        write_events(&mut out, &ev).unwrap();
        let back = read_events(out.as_slice()).unwrap();
        assert_eq!(back.iter().map(|e| e.timestamp).collect::<Vec<_>>(), vec![220.5, 100.0, 50.0]);
    }

    #[test]
    fn bad_event_rows_are_data_errors() {
        assert!(matches!(read_events("a,b,c\n".as_bytes()), Err(Error::Data(_))));
        let bad = "detector_id,vehicle_tag,timestamp_unix_s\nL1,A,soon\n";
        assert!(matches!(read_events(bad.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn segments_parse() {
        let csv = "segment_id,origin_detector,dest_detector,length_km\nS1,D1,D2,3\n";
        let s = read_segments(csv.as_bytes()).unwrap();
        assert_eq!(s[0].length_km, 3.0);
        assert!(read_segments("segment_id,origin_detector,dest_detector,length_km\nS1,D1,D1,3\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_csv_layout() {
        let tl = Timeline::new(1_498_867_200, 5, 3).unwrap();
        let m = TimeSpaceMatrix::from_cells(vec!["S1".into()], tl, vec![Some(0.03), None, Some(0.05)]).unwrap();
        let mut out = Vec::new();
        write_matrix(&mut out, &m).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert_eq!(
            text,
            "segment_id,2017-07-01T00:00:00Z,2017-07-01T00:05:00Z,2017-07-01T00:10:00Z\nS1,0.03,,0.05\n"
        );
        assert_eq!(read_matrix(out.as_slice()).unwrap(), m);
    }

    #[test]
    fn instants() {
        assert_eq!(parse_instant("2017-12-01").unwrap(), 1_512_086_400);
        assert_eq!(parse_instant("2017-12-01T00:00:00Z").unwrap(), 1_512_086_400);
        assert!(parse_instant("December").is_err());
    }

    proptest! {
        #[test]
        fn matrix_round_trip(vals in proptest::collection::vec(proptest::option::of(1e-4f64..10.0), 6)) {
            let tl = Timeline::new(0, 15, 3).unwrap();
            let m = TimeSpaceMatrix::from_cells(vec!["a".into(), "b".into()], tl, vals).unwrap();
            let mut out = Vec::new();
            write_matrix(&mut out, &m).unwrap();
            let back = read_matrix(out.as_slice()).unwrap();
            prop_assert_eq!(back.row(0).collect::<Vec<_>>(), m.row(0).collect::<Vec<_>>());
            prop_assert_eq!(back.row(1).collect::<Vec<_>>(), m.row(1).collect::<Vec<_>>());
        }
    }
}
