//! CSV readers and writers for per-request records, queue snapshots, CDF
//! tables and ω matrices. Floats use Rust's shortest round-trip formatting,
//! so output bytes are a pure function of the values; `inf` marks requests
//! that never finished.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::metrics::CdfPoint;
use crate::plans::Plan;
use crate::sim::{QueueSnapshot, RequestRecord, ServerQueues};

pub const REQUESTS_HEADER: [&str; 6] = ["id", "service_id", "arrival_ms", "departure_ms", "latency_ms", "plan"];
pub const SNAPSHOT_HEADER: [&str; 8] = [
    "t_ms",
    "server_id",
    "q_up",
    "q_srv",
    "q_down",
    "backlog_up",
    "backlog_srv",
    "backlog_down",
];
pub const CDF_HEADER: [&str; 2] = ["latency_ms", "fraction"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}, expected {expected:?}")]
    Header { found: Vec<String>, expected: Vec<String> },
    #[error("line {line}: bad value {value:?} in column {column}")]
    Value { line: u64, column: String, value: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Width { line: u64, expected: usize, found: usize },
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), IoError> {
    let found: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if found != expected {
        return Err(IoError::Header {
            found,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    header: &'a [&'a str],
    line: u64,
}

impl Row<'_> {
    fn parse<T: std::str::FromStr>(&self, k: usize) -> Result<T, IoError> {
        let raw = self.record.get(k).unwrap_or("").trim();
        raw.parse().map_err(|_| IoError::Value {
            line: self.line,
            column: self.header[k].to_string(),
            value: raw.to_string(),
        })
    }
}

fn rows<R: Read>(
    reader: R,
    header: &'static [&'static str],
    mut each: impl FnMut(Row<'_>) -> Result<(), IoError>,
) -> Result<(), IoError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    check_header(&mut rdr, header)?;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(IoError::Width {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        each(Row {
            record: &record,
            header,
            line,
        })?;
    }
    Ok(())
}

pub fn write_requests<W: Write>(writer: W, records: &[RequestRecord]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REQUESTS_HEADER)?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.service_id.to_string(),
            num(r.arrival_ms),
            num(r.departure_ms),
            num(r.latency_ms),
            r.plan.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed records carry `size = NaN`; the requests CSV does not store sizes.
pub fn read_requests<R: Read>(reader: R) -> Result<Vec<RequestRecord>, IoError> {
    let mut out = Vec::new();
    rows(reader, &REQUESTS_HEADER, |row| {
        out.push(RequestRecord {
            id: row.parse(0)?,
            service_id: row.parse(1)?,
            arrival_ms: row.parse(2)?,
            departure_ms: row.parse(3)?,
            latency_ms: row.parse(4)?,
            plan: row.parse::<Plan>(5)?,
            size: f64::NAN,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_snapshots<W: Write>(writer: W, snapshots: &[QueueSnapshot]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SNAPSHOT_HEADER)?;
    for snap in snapshots {
        for s in &snap.servers {
            w.write_record([
                num(snap.t_ms),
                s.server_id.to_string(),
                s.lengths[0].to_string(),
                s.lengths[1].to_string(),
                s.lengths[2].to_string(),
                num(s.backlogs[0]),
                num(s.backlogs[1]),
                num(s.backlogs[2]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Consecutive rows with the same `t_ms` form one snapshot.
pub fn read_snapshots<R: Read>(reader: R) -> Result<Vec<QueueSnapshot>, IoError> {
    let mut out: Vec<QueueSnapshot> = Vec::new();
    rows(reader, &SNAPSHOT_HEADER, |row| {
        let t: f64 = row.parse(0)?;
        let queues = ServerQueues {
            server_id: row.parse(1)?,
            lengths: [row.parse(2)?, row.parse(3)?, row.parse(4)?],
            backlogs: [row.parse(5)?, row.parse(6)?, row.parse(7)?],
        };
        match out.last_mut() {
            Some(last) if last.t_ms == t => last.servers.push(queues),
            _ => out.push(QueueSnapshot {
                t_ms: t,
                servers: vec![queues],
            }),
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn write_cdf<W: Write>(writer: W, cdf: &[CdfPoint]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CDF_HEADER)?;
    for p in cdf {
        w.write_record([num(p.latency_ms), num(p.fraction)])?;
    }
    w.flush()?;
    Ok(())
}

/// A headerless numeric matrix, one row per line (e.g. ω: services × servers).
pub fn read_matrix<R: Read>(reader: R) -> Result<Vec<Vec<f64>>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(k, raw)| {
                raw.trim().parse::<f64>().map_err(|_| IoError::Value {
                    line,
                    column: k.to_string(),
                    value: raw.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_matrix<W: Write>(writer: W, matrix: &[Vec<f64>]) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(writer);
    for row in matrix {
        w.write_record(row.iter().map(|v| num(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_requests_file(path: &Path, records: &[RequestRecord]) -> Result<(), IoError> {
    write_requests(std::io::BufWriter::new(std::fs::File::create(path)?), records)
}

pub fn read_requests_file(path: &Path) -> Result<Vec<RequestRecord>, IoError> {
    read_requests(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_snapshots_file(path: &Path, snapshots: &[QueueSnapshot]) -> Result<(), IoError> {
    write_snapshots(std::io::BufWriter::new(std::fs::File::create(path)?), snapshots)
}

pub fn read_snapshots_file(path: &Path) -> Result<Vec<QueueSnapshot>, IoError> {
    read_snapshots(std::io::BufReader::new(std::fs::File::open(path)?))
}
