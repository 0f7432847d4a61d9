//! Parsing and validation of daily Top-200 chart CSV data.
//!
//! Input is comma-delimited with RFC 4180 quoting (multi-artist fields carry
//! embedded commas inside quotes). Columns are resolved by header name,
//! case-insensitively; extra columns are ignored.

use std::collections::HashSet;
use std::io::Read;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// One track on one day of the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartRow {
    pub date: NaiveDate,
    pub uri: String,
    pub rank: u32,
    pub track_name: String,
    pub artist_names: String,
    pub streams: u64,
}

impl ChartRow {
    /// Checks the row invariants: rank in [1, 200], streams >= 1, non-empty uri.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.uri.is_empty() {
            return Err("empty uri".into());
        }
        if !(1..=200).contains(&self.rank) {
            return Err(format!("rank {} outside [1, 200]", self.rank));
        }
        if self.streams < 1 {
            return Err("streams must be >= 1".into());
        }
        Ok(())
    }
}

/// Counts and date coverage for one parsed file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    /// Accepted rows.
    pub n_rows: usize,
    pub n_unique_tracks: usize,
    pub date_min: Option<NaiveDate>,
    pub date_max: Option<NaiveDate>,
    pub n_rejected_rows: usize,
}

const REQUIRED_COLUMNS: [&str; 6] = [
    "date",
    "uri",
    "rank",
    "track_name",
    "artist_names",
    "streams",
];

/// Parses chart CSV from a reader.
///
/// In lenient mode (`strict = false`) rows that fail to parse or violate the
/// `ChartRow` invariants are counted in `n_rejected_rows` and skipped; in
/// strict mode the first such row is a fatal error. A missing required
/// column is fatal in both modes. Duplicate (date, uri) pairs keep the first
/// occurrence; later ones count as rejected.
pub fn parse_chart_csv<R: Read>(source: R, strict: bool) -> Result<(Vec<ChartRow>, DatasetReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    let mut column_index = [usize::MAX; 6];
    for (i, name) in headers.iter().enumerate() {
        let lowered = name.trim().to_ascii_lowercase();
        if let Some(pos) = REQUIRED_COLUMNS.iter().position(|c| *c == lowered) {
            if column_index[pos] == usize::MAX {
                column_index[pos] = i;
            }
        }
    }
    for (pos, name) in REQUIRED_COLUMNS.iter().enumerate() {
        if column_index[pos] == usize::MAX {
            return Err(Error::MissingColumn((*name).to_string()));
        }
    }

    let mut rows = Vec::new();
    let mut rejected = 0usize;
    let mut seen: HashSet<(NaiveDate, String)> = HashSet::new();

    for record in reader.into_records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match parse_record(&record, &column_index) {
            Ok(row) => {
                if seen.contains(&(row.date, row.uri.clone())) {
                    if strict {
                        return Err(Error::BadRow {
                            line,
                            reason: format!("duplicate (date, uri) pair: {} {}", row.date, row.uri),
                        });
                    }
                    rejected += 1;
                    continue;
                }
                seen.insert((row.date, row.uri.clone()));
                rows.push(row);
            }
            Err(reason) => {
                if strict {
                    return Err(Error::BadRow { line, reason });
                }
                rejected += 1;
            }
        }
    }

    let report = build_report(&rows, rejected);
    Ok((rows, report))
}

fn parse_record(
    record: &csv::StringRecord,
    column_index: &[usize; 6],
) -> std::result::Result<ChartRow, String> {
    let field = |pos: usize| -> std::result::Result<&str, String> {
        record
            .get(column_index[pos])
            .ok_or_else(|| format!("missing field `{}`", REQUIRED_COLUMNS[pos]))
    };

    let date = NaiveDate::parse_from_str(field(0)?.trim(), "%Y-%m-%d")
        .map_err(|e| format!("unparseable date: {e}"))?;
    let uri = field(1)?.trim().to_string();
    let rank: u32 = field(2)?
        .trim()
        .parse()
        .map_err(|_| format!("non-integer rank `{}`", field(2).unwrap_or("")))?;
    let track_name = field(3)?.to_string();
    let artist_names = field(4)?.to_string();
    let streams: u64 = field(5)?
        .trim()
        .parse()
        .map_err(|_| format!("non-integer streams `{}`", field(5).unwrap_or("")))?;

    let row = ChartRow {
        date,
        uri,
        rank,
        track_name,
        artist_names,
        streams,
    };
    row.validate()?;
    Ok(row)
}

fn build_report(rows: &[ChartRow], rejected: usize) -> DatasetReport {
    let mut uris: HashSet<&str> = HashSet::new();
    let mut date_min = None;
    let mut date_max = None;
    for row in rows {
        uris.insert(&row.uri);
        date_min = Some(date_min.map_or(row.date, |d: NaiveDate| d.min(row.date)));
        date_max = Some(date_max.map_or(row.date, |d: NaiveDate| d.max(row.date)));
    }
    DatasetReport {
        n_rows: rows.len(),
        n_unique_tracks: uris.len(),
        date_min,
        date_max,
        n_rejected_rows: rejected,
    }
}

/// Inclusive day count between the report's first and last dates.
pub fn date_span_days(report: &DatasetReport) -> Result<i64> {
    match (report.date_min, report.date_max) {
        (Some(min), Some(max)) => Ok(max.signed_duration_since(min).num_days() + 1),
        _ => Err(Error::EmptyDataset),
    }
}

/// Writes rows back out in the same CSV dialect the parser accepts.
pub fn write_chart_csv<W: std::io::Write>(writer: W, rows: &[ChartRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REQUIRED_COLUMNS)?;
    for row in rows {
        w.write_record([
            row.date.format("%Y-%m-%d").to_string(),
            row.uri.clone(),
            row.rank.to_string(),
            row.track_name.clone(),
            row.artist_names.clone(),
            row.streams.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
