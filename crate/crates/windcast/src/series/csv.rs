//! CSV ingestion and emission for [`TimeSeries`].
//!
//! Layout: a header row naming the columns, then one row per hour. The
//! first two columns are always `timestamp` (ISO-8601, UTC) and `power_mw`;
//! every further column is a covariate channel. Channels whose name starts
//! with `nwp_` are future-known, all others are measured. Values use a
//! decimal point, no thousands separators; files are UTF-8 with LF line
//! endings.

use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};

use super::{Channel, SeriesError, TimeSeries};

/// Column layout of the reference wind-farm dataset: measured wind
/// speed/direction plus NWP wind speed/direction for two grid cells.
pub const CSV_COLUMNS: [&str; 8] = [
    "timestamp",
    "power_mw",
    "mws",
    "mwd",
    "nwp_ws_c1",
    "nwp_wd_c1",
    "nwp_ws_c2",
    "nwp_wd_c2",
];

fn parse_timestamp(raw: &str, row: usize) -> Result<i64, SeriesError> {
    DateTime::parse_from_rfc3339(raw)
        .map(|dt| dt.timestamp())
        .map_err(|e| SeriesError::ParseError {
            row,
            column: "timestamp".into(),
            message: e.to_string(),
        })
}

fn parse_value(raw: &str, row: usize, column: &str) -> Result<f64, SeriesError> {
    if raw.is_empty() {
        return Err(SeriesError::ParseError {
            row,
            column: column.into(),
            message: "missing cell".into(),
        });
    }
    raw.parse::<f64>().map_err(|e| SeriesError::ParseError {
        row,
        column: column.into(),
        message: e.to_string(),
    })
}

/// Reads a series from `path`, validating against `capacity`.
pub fn read_csv(path: &Path, capacity: f64) -> Result<TimeSeries, SeriesError> {
    let text = fs::read_to_string(path).map_err(|e| SeriesError::Io(e.to_string()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(SeriesError::ParseError {
        row: 0,
        column: "header".into(),
        message: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 2 || columns[0] != "timestamp" || columns[1] != "power_mw" {
        return Err(SeriesError::ParseError {
            row: 0,
            column: "header".into(),
            message: format!("expected columns starting 'timestamp,power_mw', got '{header}'"),
        });
    }
    let channel_names: Vec<String> = columns[2..].iter().map(|s| s.to_string()).collect();

    let mut timestamps = Vec::new();
    let mut target = Vec::new();
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); channel_names.len()];
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(SeriesError::ParseError {
                row,
                column: "row".into(),
                message: format!("expected {} cells, got {}", columns.len(), cells.len()),
            });
        }
        timestamps.push(parse_timestamp(cells[0], row)?);
        target.push(parse_value(cells[1], row, "power_mw")?);
        for (k, cell) in cells[2..].iter().enumerate() {
            channels[k].push(parse_value(cell, row, &channel_names[k])?);
        }
    }

    let covariates = channel_names
        .into_iter()
        .zip(channels)
        .map(|(name, values)| {
            let future_known = name.starts_with("nwp_");
            Channel::new(name, values, future_known)
        })
        .collect();
    TimeSeries::new(timestamps, target, covariates, capacity)
}

/// Writes `series` to `path`. Values are emitted with the shortest
/// representation that round-trips exactly, so write-then-read is the
/// identity.
pub fn write_csv(series: &TimeSeries, path: &Path) -> Result<(), SeriesError> {
    let mut out = String::new();
    out.push_str("timestamp,power_mw");
    for ch in series.covariates() {
        out.push(',');
        out.push_str(&ch.name);
    }
    out.push('\n');
    for i in 0..series.len() {
        let ts = Utc
            .timestamp_opt(series.timestamps()[i], 0)
            .single()
            .expect("validated hourly timestamp");
        out.push_str(&ts.to_rfc3339_opts(SecondsFormat::Secs, true));
        out.push(',');
        out.push_str(&format!("{}", series.target()[i]));
        for ch in series.covariates() {
            out.push(',');
            out.push_str(&format!("{}", ch.values[i]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| SeriesError::Io(e.to_string()))
}
