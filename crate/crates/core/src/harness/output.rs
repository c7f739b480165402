//! Report files.
//!
//! | file            | content                                                  |
//! |-----------------|----------------------------------------------------------|
//! | `report.json`   | the full [`RunReport`]                                   |
//! | `downloads.csv` | one row per request: timing components and bytes by class |
//! | `traffic.csv`   | cumulative byte-hops by class after each request          |
//! | `trace.csv`     | every signaling message hop: time, variant, from, to, bytes |
//! | `caches.json`   | snapshot of every cache instance at the end of the run   |
//! | `readings.jsonl`| the gateway's readings, one JSON object per line         |
//!
//! `downloads.csv` columns: `index, client, mode, issued_at, completed_at,
//! hops, redirect_target, t_creation, t_signaling, t_processing, t_http,
//! total, entries, package_bytes, http_bytes, signaling_bytes, bundle_bytes,
//! served_from` (space-separated source node ids, nearest first).
//!
//! `traffic.csv` columns: `request, mode, http, signaling, bundle,
//! http_plus_signaling`; row 0 is the empty prefix.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::metrics::RunReport;
use crate::signaling::MessageEvent;

use super::{HarnessError, ScenarioRun};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OutputOptions {
    pub trace: bool,
    pub cache_snapshot: bool,
    pub readings: bool,
}

#[derive(Serialize)]
struct DownloadRow<'a> {
    index: usize,
    client: u32,
    mode: &'a str,
    issued_at: f64,
    completed_at: f64,
    hops: usize,
    redirect_target: u32,
    t_creation: f64,
    t_signaling: f64,
    t_processing: f64,
    t_http: f64,
    total: f64,
    entries: usize,
    package_bytes: u64,
    http_bytes: u64,
    signaling_bytes: u64,
    bundle_bytes: u64,
    served_from: String,
}

#[derive(Serialize)]
struct TrafficRow<'a> {
    request: usize,
    mode: &'a str,
    http: u64,
    signaling: u64,
    bundle: u64,
    http_plus_signaling: u64,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    time: f64,
    variant: &'a str,
    from: u32,
    to: u32,
    bytes: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_owned(),
        source: e.into(),
    }
}

pub fn write_downloads_csv<W: Write>(report: &RunReport, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in &report.requests {
        out.serialize(DownloadRow {
            index: r.index,
            client: r.client.0,
            mode: r.mode.as_str(),
            issued_at: r.issued_at,
            completed_at: r.completed_at,
            hops: r.hops(),
            redirect_target: r.redirect_target.0,
            t_creation: r.timing.t_creation,
            t_signaling: r.timing.t_signaling,
            t_processing: r.timing.t_processing,
            t_http: r.timing.t_http,
            total: r.total,
            entries: r.entries,
            package_bytes: r.package_bytes,
            http_bytes: r.traffic.http,
            signaling_bytes: r.traffic.signaling,
            bundle_bytes: r.traffic.bundle,
            served_from: r
                .sources
                .iter()
                .map(|s| s.node.0.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_traffic_csv<W: Write>(report: &RunReport, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mode = report.mode.as_str();
    for (k, c) in report.series.cumulative.iter().enumerate() {
        out.serialize(TrafficRow {
            request: k,
            mode,
            http: c.http,
            signaling: c.signaling,
            bundle: c.bundle,
            http_plus_signaling: c.http + c.signaling,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(trace: &[MessageEvent], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for e in trace {
        out.serialize(TraceRow {
            time: e.time,
            variant: e.variant,
            from: e.from.0,
            to: e.to.0,
            bytes: e.bytes,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the report files into `dir`, creating it if needed. Returns the
/// paths written.
pub fn write_outputs(dir: &Path, run: &ScenarioRun, opts: OutputOptions) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    std::fs::write(&path, run.report.to_json()).map_err(io_err(&path))?;
    written.push(path);

    let path = dir.join("downloads.csv");
    let file = File::create(&path).map_err(io_err(&path))?;
    write_downloads_csv(&run.report, BufWriter::new(file)).map_err(csv_err(&path))?;
    written.push(path);

    let path = dir.join("traffic.csv");
    let file = File::create(&path).map_err(io_err(&path))?;
    write_traffic_csv(&run.report, BufWriter::new(file)).map_err(csv_err(&path))?;
    written.push(path);

    if opts.trace {
        let path = dir.join("trace.csv");
        let file = File::create(&path).map_err(io_err(&path))?;
        write_trace_csv(&run.trace, BufWriter::new(file)).map_err(csv_err(&path))?;
        written.push(path);
    }
    if opts.cache_snapshot {
        let path = dir.join("caches.json");
        std::fs::write(&path, run.world.caches().snapshot_json(run.end_time)).map_err(io_err(&path))?;
        written.push(path);
    }
    if opts.readings {
        let path = dir.join("readings.jsonl");
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        run.world.store().write_jsonl(&mut w)?;
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a `report.json` back.
pub fn read_report(path: &Path) -> Result<RunReport, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Io {
        path: path.to_owned(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}
