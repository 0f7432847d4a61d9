//! Track-level aggregation of daily chart rows and the per-variable
//! summary statistics reported alongside them.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::ChartRow;

/// Per-track aggregate over all charted days.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub uri: String,
    pub track_name: String,
    pub artist_names: String,
    /// Count of distinct chart dates.
    pub days_on_chart: u32,
    /// Sum of daily streams over charted days.
    pub total_streams: u64,
    /// Natural log of `total_streams`.
    pub log_streams: f64,
    pub is_collab: bool,
}

/// Classifies a track as a collaboration from its artist field.
///
/// Markers: a comma, an ampersand, a standalone `feat`/`feat.`/`ft`/`ft.`
/// token (case-insensitive, word-boundary matched), or a spaced `" x "`
/// token (case-insensitive). Letter sequences inside words never match, so
/// "Fatso" and "Soft" stay solo.
pub fn classify_collaboration(artist_names: &str) -> Result<bool> {
    if artist_names.trim().is_empty() {
        return Err(Error::Domain("empty artist field".into()));
    }
    if artist_names.contains(',') || artist_names.contains('&') {
        return Ok(true);
    }
    let lowered = artist_names.to_ascii_lowercase();
    Ok(lowered.contains(" x ") || has_feature_token(&lowered))
}

fn has_feature_token(lowered: &str) -> bool {
    let bytes = lowered.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric();
    for token in ["feat", "ft"] {
        let mut start = 0;
        while let Some(pos) = lowered[start..].find(token) {
            let at = start + pos;
            let end = at + token.len();
            let boundary_before = at == 0 || !is_word(bytes[at - 1]);
            // a trailing '.' closes the token too ("feat.", "ft.")
            let boundary_after = end >= bytes.len() || !is_word(bytes[end]);
            if boundary_before && boundary_after {
                return true;
            }
            start = at + 1;
        }
    }
    false
}

/// Collapses validated daily rows into one record per distinct uri.
///
/// `days_on_chart` counts distinct dates, `total_streams` sums daily
/// streams, and track metadata comes from the earliest date (ties broken
/// lexicographically so the result is permutation-invariant). Returns the
/// records sorted by uri plus a warning per uri whose artist field
/// conflicted across days.
pub fn aggregate_tracks(rows: &[ChartRow]) -> (Vec<TrackRecord>, Vec<String>) {
    struct Accum<'a> {
        dates: Vec<NaiveDate>,
        streams: u64,
        // minimum (date, track_name, artist_names) decides the metadata
        meta: (NaiveDate, &'a str, &'a str),
        artist_variants: Vec<&'a str>,
    }

    let mut by_uri: HashMap<&str, Accum> = HashMap::new();
    for row in rows {
        let key = (row.date, row.track_name.as_str(), row.artist_names.as_str());
        let entry = by_uri.entry(&row.uri).or_insert_with(|| Accum {
            dates: Vec::new(),
            streams: 0,
            meta: key,
            artist_variants: Vec::new(),
        });
        entry.dates.push(row.date);
        entry.streams += row.streams;
        if key < entry.meta {
            entry.meta = key;
        }
        if !entry.artist_variants.contains(&row.artist_names.as_str()) {
            entry.artist_variants.push(&row.artist_names);
        }
    }

    let mut warnings = Vec::new();
    let mut records: Vec<TrackRecord> = by_uri
        .into_iter()
        .map(|(uri, mut acc)| {
            acc.dates.sort_unstable();
            acc.dates.dedup();
            if acc.artist_variants.len() > 1 {
                warnings.push(format!(
                    "uri {uri}: {} artist_names variants; using value from earliest date",
                    acc.artist_variants.len()
                ));
            }
            let artist_names = acc.meta.2.to_string();
            let is_collab = classify_collaboration(&artist_names).unwrap_or(false);
            TrackRecord {
                uri: uri.to_string(),
                track_name: acc.meta.1.to_string(),
                artist_names,
                days_on_chart: acc.dates.len() as u32,
                total_streams: acc.streams,
                log_streams: (acc.streams as f64).ln(),
                is_collab,
            }
        })
        .collect();
    records.sort_by(|a, b| a.uri.cmp(&b.uri));
    warnings.sort();
    (records, warnings)
}

/// Mean, sample SD (divisor n-1), min, and max of one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableSummary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Track-level summary statistics: per-variable moments plus the
/// collaboration share.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub days_on_chart: VariableSummary,
    pub total_streams: VariableSummary,
    pub log_streams: VariableSummary,
    pub collab_rate: f64,
    pub n_tracks: usize,
    /// Set when n = 1 and the SDs are reported as 0 by convention.
    pub sd_degenerate: bool,
}

fn variable_summary(values: &[f64]) -> VariableSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if n > 1.0 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    VariableSummary { mean, sd, min, max }
}

/// Computes summary statistics over a non-empty record list.
pub fn summarize(records: &[TrackRecord]) -> Result<SummaryStats> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = records.len();
    let days: Vec<f64> = records.iter().map(|r| r.days_on_chart as f64).collect();
    let streams: Vec<f64> = records.iter().map(|r| r.total_streams as f64).collect();
    let logs: Vec<f64> = records.iter().map(|r| r.log_streams).collect();
    Ok(SummaryStats {
        days_on_chart: variable_summary(&days),
        total_streams: variable_summary(&streams),
        log_streams: variable_summary(&logs),
        collab_rate: records.iter().filter(|r| r.is_collab).count() as f64 / n as f64,
        n_tracks: n,
        sd_degenerate: n == 1,
    })
}

const TRACK_COLUMNS: [&str; 7] = [
    "uri",
    "track_name",
    "artist_names",
    "days_on_chart",
    "total_streams",
    "log_streams",
    "is_collab",
];

/// Writes the track-level CSV (is_collab as 0/1, log_streams round-trippable).
pub fn write_tracks_csv<W: Write>(writer: W, records: &[TrackRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACK_COLUMNS)?;
    for r in records {
        w.write_record([
            r.uri.clone(),
            r.track_name.clone(),
            r.artist_names.clone(),
            r.days_on_chart.to_string(),
            r.total_streams.to_string(),
            format!("{}", r.log_streams),
            (r.is_collab as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a track-level CSV produced by [`write_tracks_csv`].
pub fn read_tracks_csv<R: Read>(reader: R) -> Result<Vec<TrackRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [usize::MAX; 7];
    for (i, name) in headers.iter().enumerate() {
        let lowered = name.trim().to_ascii_lowercase();
        if let Some(pos) = TRACK_COLUMNS.iter().position(|c| *c == lowered) {
            idx[pos] = i;
        }
    }
    for (pos, name) in TRACK_COLUMNS.iter().enumerate() {
        if idx[pos] == usize::MAX {
            return Err(Error::MissingColumn((*name).to_string()));
        }
    }
    let mut records = Vec::new();
    for record in rdr.into_records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |pos: usize| record.get(idx[pos]).unwrap_or("").trim();
        let bad = |reason: String| Error::BadRow { line, reason };
        let days_on_chart: u32 = get(3)
            .parse()
            .map_err(|_| bad(format!("bad days_on_chart `{}`", get(3))))?;
        let total_streams: u64 = get(4)
            .parse()
            .map_err(|_| bad(format!("bad total_streams `{}`", get(4))))?;
        let log_streams: f64 = get(5)
            .parse()
            .map_err(|_| bad(format!("bad log_streams `{}`", get(5))))?;
        let is_collab = match get(6) {
            "0" | "false" => false,
            "1" | "true" => true,
            other => return Err(bad(format!("bad is_collab `{other}`"))),
        };
        if days_on_chart == 0 {
            return Err(bad("days_on_chart must be >= 1".into()));
        }
        records.push(TrackRecord {
            uri: get(0).to_string(),
            track_name: record.get(idx[1]).unwrap_or("").to_string(),
            artist_names: record.get(idx[2]).unwrap_or("").to_string(),
            days_on_chart,
            total_streams,
            log_streams,
            is_collab,
        });
    }
    Ok(records)
}
