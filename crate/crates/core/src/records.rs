//! CSV files read and written by the command-line tools. Floats use fixed
//! decimals and booleans 0/1 so repeated runs give identical bytes; list
//! fields are `;`-joined.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};

use crate::error::{Error, Result};
use crate::simulator::{GroundTruth, GtRow};
use crate::stats::Histogram;
use crate::tracker::{ErrorRecord, EventRecord, Pin, TrajectoryRow};

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "frame",
    "target_id",
    "x",
    "y",
    "a",
    "b",
    "delta",
    "weight_max",
    "interacting",
    "lost",
];
pub const EVENT_HEADER: [&str; 6] = [
    "frame",
    "group_targets",
    "blob_ids",
    "chosen_permutation",
    "all_scores",
    "fallback_flag",
];
pub const ERROR_HEADER: [&str; 7] = [
    "frame",
    "target_id",
    "predicted_x",
    "predicted_y",
    "observed_x",
    "observed_y",
    "deviation",
];
pub const GROUND_TRUTH_HEADER: [&str; 7] = [
    "frame",
    "fish_id",
    "x",
    "y",
    "heading",
    "bent_flag",
    "merged_with",
];
pub const CORRECTION_HEADER: [&str; 5] = ["frame", "target_id", "blob_id", "x", "y"];
pub const SEED_HEADER: [&str; 3] = ["target_id", "x", "y"];
pub const HISTOGRAM_HEADER: [&str; 2] = ["bin_center", "count"];

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_writer(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_trajectories<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        w.write_record([
            r.frame.to_string(),
            r.target_id.to_string(),
            f4(r.x),
            f4(r.y),
            f4(r.a),
            f4(r.b),
            f4(r.delta),
            format!("{:.6}", r.weight_max),
            flag(r.interacting).into(),
            flag(r.lost).into(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_events<W: Write>(out: W, events: &[EventRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(EVENT_HEADER)?;
    for e in events {
        let chosen: Vec<String> = e.chosen.iter().map(|(t, b)| format!("{t}:{b}")).collect();
        let scores: Vec<String> = e.all_scores.iter().map(|s| format!("{s:.6}")).collect();
        w.write_record([
            e.frame.to_string(),
            join(&e.group_targets),
            join(&e.blob_ids),
            chosen.join(";"),
            scores.join(";"),
            flag(e.fallback).into(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_errors<W: Write>(out: W, errors: &[ErrorRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(ERROR_HEADER)?;
    for e in errors {
        w.write_record([
            e.frame.to_string(),
            e.target_id.to_string(),
            f4(e.predicted_x),
            f4(e.predicted_y),
            f4(e.observed_x),
            f4(e.observed_y),
            f4(e.deviation),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_ground_truth<W: Write>(out: W, gt: &GroundTruth) -> Result<()> {
    let mut w = writer(out);
    w.write_record(GROUND_TRUTH_HEADER)?;
    for r in &gt.rows {
        w.write_record([
            r.frame.to_string(),
            r.fish_id.to_string(),
            f4(r.x),
            f4(r.y),
            f4(r.heading),
            flag(r.bent).into(),
            join(&r.merged_with),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_corrections<W: Write>(out: W, pins: &[Pin]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(CORRECTION_HEADER)?;
    for p in pins {
        w.write_record([
            p.frame.to_string(),
            p.target_id.to_string(),
            p.blob_id.map(|b| b.to_string()).unwrap_or_default(),
            f4(p.x),
            f4(p.y),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_seeds<W: Write>(out: W, seeds: &[(usize, f64, f64)]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SEED_HEADER)?;
    for &(t, x, y) in seeds {
        w.write_record([t.to_string(), f4(x), f4(y)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_histogram<W: Write>(out: W, hist: &Histogram) -> Result<()> {
    let mut w = writer(out);
    w.write_record(HISTOGRAM_HEADER)?;
    for (c, n) in hist.points() {
        w.write_record([f4(c), n.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes with one of the functions above into a file.
pub fn save<T: ?Sized>(
    path: &Path,
    data: &T,
    f: impl Fn(BufWriter<File>, &T) -> Result<()>,
) -> Result<()> {
    f(create(path)?, data)
}

/// Rows of a CSV with a fixed header, each handed over with its 1-based
/// line number.
struct Table {
    path: String,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn read<R: Read>(input: R, path: &str, header: &[&str]) -> Result<Self> {
        let mut r = ReaderBuilder::new().has_headers(true).from_reader(input);
        let got = r.headers()?.clone();
        if got.iter().map(str::trim).ne(header.iter().copied()) {
            return Err(Error::Record {
                path: path.into(),
                reason: format!(
                    "expected header {}, got {}",
                    header.join(","),
                    got.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.into(),
            rows,
        })
    }

    fn bad(&self, line: u64, reason: impl Into<String>) -> Error {
        Error::Record {
            path: self.path.clone().into(),
            reason: format!("line {line}: {}", reason.into()),
        }
    }

    fn field<T: std::str::FromStr>(
        &self,
        line: u64,
        rec: &StringRecord,
        i: usize,
        name: &str,
    ) -> Result<T> {
        let s = rec.get(i).unwrap_or("").trim();
        s.parse()
            .map_err(|_| self.bad(line, format!("bad {name} {s:?}")))
    }

    fn float(&self, line: u64, rec: &StringRecord, i: usize, name: &str) -> Result<f64> {
        let v: f64 = self.field(line, rec, i, name)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.bad(line, format!("non-finite {name}")))
        }
    }

    fn flag(&self, line: u64, rec: &StringRecord, i: usize, name: &str) -> Result<bool> {
        match rec.get(i).map(str::trim) {
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            other => Err(self.bad(line, format!("bad {name} {other:?}, expected 0 or 1"))),
        }
    }

    fn list<T: std::str::FromStr>(
        &self,
        line: u64,
        rec: &StringRecord,
        i: usize,
        name: &str,
    ) -> Result<Vec<T>> {
        let s = rec.get(i).unwrap_or("").trim();
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| self.bad(line, format!("bad {name} entry {p:?}")))
            })
            .collect()
    }
}

pub fn read_trajectories<R: Read>(input: R, path: &str) -> Result<Vec<TrajectoryRow>> {
    let t = Table::read(input, path, &TRAJECTORY_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let line = *line;
        out.push(TrajectoryRow {
            frame: t.field(line, r, 0, "frame")?,
            target_id: t.field(line, r, 1, "target_id")?,
            x: t.float(line, r, 2, "x")?,
            y: t.float(line, r, 3, "y")?,
            a: t.float(line, r, 4, "a")?,
            b: t.float(line, r, 5, "b")?,
            delta: t.float(line, r, 6, "delta")?,
            weight_max: t.float(line, r, 7, "weight_max")?,
            interacting: t.flag(line, r, 8, "interacting")?,
            lost: t.flag(line, r, 9, "lost")?,
        });
    }
    for (w, (line, _)) in out.windows(2).zip(t.rows.iter().skip(1)) {
        if (w[1].frame, w[1].target_id) <= (w[0].frame, w[0].target_id) {
            return Err(t.bad(*line, "rows not strictly ordered by (frame, target_id)"));
        }
    }
    Ok(out)
}

pub fn read_events<R: Read>(input: R, path: &str) -> Result<Vec<EventRecord>> {
    let t = Table::read(input, path, &EVENT_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let line = *line;
        let pairs: Vec<String> = t.list(line, r, 3, "chosen_permutation")?;
        let mut chosen = Vec::with_capacity(pairs.len());
        for p in pairs {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| t.bad(line, format!("bad chosen_permutation entry {p:?}")))?;
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| t.bad(line, format!("bad chosen_permutation entry {p:?}")))
            };
            chosen.push((parse(a)?, parse(b)?));
        }
        out.push(EventRecord {
            frame: t.field(line, r, 0, "frame")?,
            group_targets: t.list(line, r, 1, "group_targets")?,
            blob_ids: t.list(line, r, 2, "blob_ids")?,
            chosen,
            all_scores: t.list(line, r, 4, "all_scores")?,
            fallback: t.flag(line, r, 5, "fallback_flag")?,
        });
    }
    Ok(out)
}

pub fn read_errors<R: Read>(input: R, path: &str) -> Result<Vec<ErrorRecord>> {
    let t = Table::read(input, path, &ERROR_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let line = *line;
        out.push(ErrorRecord {
            frame: t.field(line, r, 0, "frame")?,
            target_id: t.field(line, r, 1, "target_id")?,
            predicted_x: t.float(line, r, 2, "predicted_x")?,
            predicted_y: t.float(line, r, 3, "predicted_y")?,
            observed_x: t.float(line, r, 4, "observed_x")?,
            observed_y: t.float(line, r, 5, "observed_y")?,
            deviation: t.float(line, r, 6, "deviation")?,
        });
    }
    Ok(out)
}

pub fn read_ground_truth<R: Read>(input: R, path: &str) -> Result<GroundTruth> {
    let t = Table::read(input, path, &GROUND_TRUTH_HEADER)?;
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let line = *line;
        rows.push(GtRow {
            frame: t.field(line, r, 0, "frame")?,
            fish_id: t.field(line, r, 1, "fish_id")?,
            x: t.float(line, r, 2, "x")?,
            y: t.float(line, r, 3, "y")?,
            heading: t.float(line, r, 4, "heading")?,
            bent: t.flag(line, r, 5, "bent_flag")?,
            merged_with: t.list(line, r, 6, "merged_with")?,
        });
    }
    for (w, (line, _)) in rows.windows(2).zip(t.rows.iter().skip(1)) {
        if (w[1].frame, w[1].fish_id) <= (w[0].frame, w[0].fish_id) {
            return Err(t.bad(*line, "rows not strictly ordered by (frame, fish_id)"));
        }
    }
    Ok(GroundTruth { rows })
}

/// Corrections; an empty `blob_id` means "at this position". Each row is
/// returned with its line number so callers can report it.
pub fn read_corrections<R: Read>(input: R, path: &str) -> Result<Vec<(u64, Pin)>> {
    let t = Table::read(input, path, &CORRECTION_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let line = *line;
        let blob = r.get(2).unwrap_or("").trim();
        let blob_id = if blob.is_empty() {
            None
        } else {
            Some(t.field(line, r, 2, "blob_id")?)
        };
        out.push((
            line,
            Pin {
                frame: t.field(line, r, 0, "frame")?,
                target_id: t.field(line, r, 1, "target_id")?,
                blob_id,
                x: t.float(line, r, 3, "x")?,
                y: t.float(line, r, 4, "y")?,
            },
        ));
    }
    Ok(out)
}

pub fn read_seeds<R: Read>(input: R, path: &str) -> Result<Vec<(usize, f64, f64)>> {
    let t = Table::read(input, path, &SEED_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let line = *line;
        out.push((
            t.field(line, r, 0, "target_id")?,
            t.float(line, r, 1, "x")?,
            t.float(line, r, 2, "y")?,
        ));
    }
    let mut ids: Vec<usize> = out.iter().map(|s| s.0).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Record {
            path: path.into(),
            reason: "duplicate target_id".into(),
        });
    }
    Ok(out)
}

/// Opens `path` and reads it with one of the functions above.
pub fn load<T>(path: &Path, f: impl Fn(BufReader<File>, &str) -> Result<T>) -> Result<T> {
    f(open(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(frame: u64, target_id: usize) -> TrajectoryRow {
        TrajectoryRow {
            frame,
            target_id,
            x: 1.23456,
            y: 2.0,
            a: 15.0,
            b: 4.0,
            delta: 179.99,
            weight_max: 0.9,
            interacting: true,
            lost: false,
        }
    }

    #[test]
    fn trajectory_bytes() {
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &[row(0, 0)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "frame,target_id,x,y,a,b,delta,weight_max,interacting,lost\n0,0,1.2346,2.0000,15.0000,4.0000,179.9900,0.900000,1,0\n"
        );
    }

    #[test]
    fn trajectory_round_trip() {
        let rows = vec![row(0, 0), row(0, 1), row(1, 0)];
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &rows).unwrap();
        let back = read_trajectories(buf.as_slice(), "t.csv").unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].frame, 1);
        assert!(back[0].interacting);
        assert_eq!(back[0].x, 1.2346);
    }

    #[test]
    fn unordered_trajectory_rejected() {
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &[row(1, 0), row(0, 0)]).unwrap();
        let err = read_trajectories(buf.as_slice(), "t.csv").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn events_round_trip() {
        let e = EventRecord {
            frame: 7,
            group_targets: vec![0, 2],
            blob_ids: vec![1, 3],
            chosen: vec![(0, 3), (2, 1)],
            all_scores: vec![190.5, 120.25],
            fallback: false,
        };
        let mut buf = Vec::new();
        write_events(&mut buf, std::slice::from_ref(&e)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.ends_with("7,0;2,1;3,0:3;2:1,190.500000;120.250000,0\n"),
            "{text}"
        );
        assert_eq!(read_events(buf.as_slice(), "e.csv").unwrap(), vec![e]);
    }

    #[test]
    fn ground_truth_round_trip() {
        let gt = GroundTruth {
            rows: vec![
                GtRow {
                    frame: 0,
                    fish_id: 0,
                    x: 1.0,
                    y: 2.0,
                    heading: 90.0,
                    bent: false,
                    merged_with: vec![1],
                },
                GtRow {
                    frame: 0,
                    fish_id: 1,
                    x: 3.0,
                    y: 4.0,
                    heading: 0.0,
                    bent: true,
                    merged_with: vec![],
                },
            ],
        };
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &gt).unwrap();
        assert_eq!(read_ground_truth(buf.as_slice(), "g.csv").unwrap(), gt);
    }

    #[test]
    fn corrections_with_and_without_blob() {
        let text = "frame,target_id,blob_id,x,y\n10,1,2,5.0,6.0\n11,0,,7.5,8.5\n";
        let pins = read_corrections(text.as_bytes(), "c.csv").unwrap();
        assert_eq!(pins[0].1.blob_id, Some(2));
        assert_eq!(pins[1].1.blob_id, None);
        assert_eq!(pins[1].0, 3);
    }

    #[test]
    fn bad_field_names_line() {
        let text = "frame,target_id,blob_id,x,y\n10,1,2,5.0,6.0\n11,x,,7.5,8.5\n";
        let err = read_corrections(text.as_bytes(), "c.csv")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("c.csv") && err.contains("line 3") && err.contains("target_id"),
            "{err}"
        );
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_seeds("id,x,y\n0,1,2\n".as_bytes(), "s.csv").is_err());
        assert!(read_seeds("target_id,x,y\n0,1,2\n0,3,4\n".as_bytes(), "s.csv").is_err());
    }

    #[test]
    fn histogram_rows() {
        let h = crate::stats::histogram(&[0.5, 1.5, 1.7], 1.0).unwrap();
        let mut buf = Vec::new();
        write_histogram(&mut buf, &h).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin_center,count\n0.5000,1\n1.5000,2\n"
        );
    }
}
