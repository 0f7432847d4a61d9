//! Synthetic data generation calibrated to the published track-level
//! summary statistics, for parameter-recovery tests and ingestion round
//! trips without the proprietary raw chart data.

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::aggregate::TrackRecord;
use crate::error::{Error, Result};
use crate::ingest::ChartRow;
use crate::model::{linear_predictor, sample_negative_binomial, Coefficients, RegressionDataset};

/// Generator configuration. Defaults are calibrated to the published
/// track-level marginals and posterior means: 1,335 tracks, beta =
/// (-8.126, -0.074, 0.859), alpha = 5, log-streams Normal(12.735, 2.1)
/// truncated to [9.223, 17.191], collaboration probability 0.456.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub n_tracks: usize,
    pub coefficients: Coefficients,
    pub alpha: f64,
    pub log_streams_mean: f64,
    pub log_streams_sd: f64,
    pub log_streams_min: f64,
    pub log_streams_max: f64,
    pub collab_prob: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_tracks: 1335,
            coefficients: Coefficients {
                beta0: -8.126,
                beta1: -0.074,
                beta2: 0.859,
            },
            alpha: 5.0,
            log_streams_mean: 12.735,
            log_streams_sd: 2.100,
            log_streams_min: 9.223,
            log_streams_max: 17.191,
            collab_prob: 0.456,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_tracks == 0 {
            return Err(Error::Config("n_tracks must be >= 1".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be finite and > 0".into()));
        }
        if self.log_streams_min >= self.log_streams_max {
            return Err(Error::Config(
                "log-streams truncation bounds must be ordered".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.collab_prob) {
            return Err(Error::Config("collab_prob must be in [0, 1]".into()));
        }
        if !(self.log_streams_sd > 0.0) {
            return Err(Error::Config("log_streams_sd must be > 0".into()));
        }
        Ok(())
    }
}

/// Output of [`generate_tracks`].
#[derive(Debug, Clone)]
pub struct SynthTracks {
    pub records: Vec<TrackRecord>,
    pub dataset: RegressionDataset,
    /// Response draws that exhausted 100 attempts and were clamped to 1 or 365.
    pub n_clamped: usize,
    pub warnings: Vec<String>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    loop {
        let v = mean + sd * rng.sample::<f64, _>(StandardNormal);
        if v >= lo && v <= hi {
            return v;
        }
    }
}

fn draw_covariates(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<f64>) {
    let mut collab = Vec::with_capacity(spec.n_tracks);
    let mut log_streams = Vec::with_capacity(spec.n_tracks);
    for _ in 0..spec.n_tracks {
        collab.push(rng.random::<f64>() < spec.collab_prob);
        log_streams.push(truncated_normal(
            rng,
            spec.log_streams_mean,
            spec.log_streams_sd,
            spec.log_streams_min,
            spec.log_streams_max,
        ));
    }
    (collab, log_streams)
}

/// Simulates chart-shaped track records: covariates from the configured
/// marginals, then days-on-chart drawn NegBin(mu_i, alpha) with draws
/// outside [1, 365] redrawn (up to 100 attempts, then clamped and counted).
pub fn generate_tracks(spec: &GeneratorSpec) -> Result<SynthTracks> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (collab, log_streams) = draw_covariates(spec, &mut rng);

    let mut warnings = Vec::new();
    let n_extreme = (0..spec.n_tracks)
        .filter(|&i| linear_predictor(&spec.coefficients, collab[i], log_streams[i]).exp() > 365.0)
        .count();
    if n_extreme * 2 > spec.n_tracks {
        warnings.push(format!(
            "{} of {} tracks have expected days above 365; the truncation will dominate",
            n_extreme, spec.n_tracks
        ));
    }

    let mut records = Vec::with_capacity(spec.n_tracks);
    let mut y = Vec::with_capacity(spec.n_tracks);
    let mut n_clamped = 0;
    for i in 0..spec.n_tracks {
        let mu = linear_predictor(&spec.coefficients, collab[i], log_streams[i]).exp();
        let mut days = 0u64;
        let mut accepted = false;
        for _ in 0..100 {
            days = sample_negative_binomial(&mut rng, mu, spec.alpha);
            if (1..=365).contains(&days) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            days = days.clamp(1, 365);
            n_clamped += 1;
        }

        let total_streams = log_streams[i].exp().round().max(366.0) as u64;
        let (track_name, artist_names) = synth_names(i, collab[i]);
        y.push(days as u32);
        records.push(TrackRecord {
            uri: format!("synth:track:{i:05}"),
            track_name,
            artist_names,
            days_on_chart: days as u32,
            total_streams,
            log_streams: (total_streams as f64).ln(),
            is_collab: collab[i],
        });
    }

    let dataset =
        RegressionDataset::new(y, collab, records.iter().map(|r| r.log_streams).collect())?;
    Ok(SynthTracks {
        records,
        dataset,
        n_clamped,
        warnings,
    })
}

/// Simulates straight from the generative model with no response
/// truncation: days may be 0 or exceed 365. This is the dataset to fit when
/// checking that the sampler recovers the generator's parameters, since the
/// likelihood being fitted is then exactly the distribution sampled here.
pub fn generate_regression_data(spec: &GeneratorSpec) -> Result<RegressionDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (collab, log_streams) = draw_covariates(spec, &mut rng);
    let y: Vec<u32> = (0..spec.n_tracks)
        .map(|i| {
            let mu = linear_predictor(&spec.coefficients, collab[i], log_streams[i]).exp();
            sample_negative_binomial(&mut rng, mu, spec.alpha) as u32
        })
        .collect();
    RegressionDataset::new(y, collab, log_streams)
}

fn synth_names(i: usize, collab: bool) -> (String, String) {
    let track_name = format!("Track {i:05}");
    let artist_names = if collab {
        format!("Artist {i:05}A, Artist {i:05}B")
    } else {
        format!("Artist {i:05}")
    };
    (track_name, artist_names)
}

/// Expands track records back into daily chart rows: each track gets
/// `days_on_chart` distinct random dates, its total streams split across
/// those days as positive integers summing exactly to the total, and ranks
/// assigned per day by descending daily streams. Aggregating the result
/// reproduces each record's days, total streams, and collaboration flag.
pub fn generate_daily_chart(
    records: &[TrackRecord],
    year: i32,
    seed: u64,
) -> Result<Vec<ChartRow>> {
    let first_day = NaiveDate::from_ymd_opt(year, 1, 1)
        .ok_or_else(|| Error::Config(format!("invalid year {year}")))?;
    let days_in_year = NaiveDate::from_ymd_opt(year, 12, 31).unwrap().ordinal() as usize;
    for r in records {
        if r.days_on_chart as usize > days_in_year {
            return Err(Error::Domain(format!(
                "track {} has {} days on chart but {year} has only {days_in_year} days",
                r.uri, r.days_on_chart
            )));
        }
        if r.total_streams < r.days_on_chart as u64 {
            return Err(Error::Domain(format!(
                "track {} has fewer streams than charted days",
                r.uri
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const MAX_PLACEMENT_ATTEMPTS: usize = 50;
    let mut day_sets: Vec<Vec<usize>> = Vec::new();
    let mut placed = false;
    'attempt: for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut load = vec![0usize; days_in_year];
        day_sets.clear();
        for r in records {
            let days = sample_distinct_days(&mut rng, days_in_year, r.days_on_chart as usize);
            for &d in &days {
                load[d] += 1;
                if load[d] > 200 {
                    continue 'attempt;
                }
            }
            day_sets.push(days);
        }
        placed = true;
        break;
    }
    if !placed {
        return Err(Error::Domain(format!(
            "could not place {} tracks onto 200-slot days after {MAX_PLACEMENT_ATTEMPTS} attempts",
            records.len()
        )));
    }

    // per-day collection of (track index, daily streams)
    let mut per_day: Vec<Vec<(usize, u64)>> = vec![Vec::new(); days_in_year];
    for (t, r) in records.iter().enumerate() {
        let split = split_streams(&mut rng, r.total_streams, r.days_on_chart as usize);
        for (&day, &streams) in day_sets[t].iter().zip(&split) {
            per_day[day].push((t, streams));
        }
    }

    let mut rows = Vec::new();
    for (day, mut entries) in per_day.into_iter().enumerate() {
        // rank 1..k by descending daily streams, uri breaking ties
        entries.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| records[a.0].uri.cmp(&records[b.0].uri))
        });
        let date = first_day + chrono::Days::new(day as u64);
        for (rank0, (t, streams)) in entries.into_iter().enumerate() {
            let r = &records[t];
            rows.push(ChartRow {
                date,
                uri: r.uri.clone(),
                rank: rank0 as u32 + 1,
                track_name: r.track_name.clone(),
                artist_names: r.artist_names.clone(),
                streams,
            });
        }
    }
    rows.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.rank.cmp(&b.rank)));
    Ok(rows)
}

/// Uniform sample of `k` distinct day indices via partial Fisher-Yates.
fn sample_distinct_days(rng: &mut ChaCha8Rng, n_days: usize, k: usize) -> Vec<usize> {
    let mut days: Vec<usize> = (0..n_days).collect();
    for i in 0..k {
        let j = rng.random_range(i..n_days);
        days.swap(i, j);
    }
    days.truncate(k);
    days.sort_unstable();
    days
}

/// Splits `total` into `parts` positive integers summing exactly to
/// `total`: random exponential proportions rounded with a largest-remainder
/// correction on top of a guaranteed 1 per part.
fn split_streams(rng: &mut ChaCha8Rng, total: u64, parts: usize) -> Vec<u64> {
    if parts == 1 {
        return vec![total];
    }
    let spread = total - parts as u64;
    let weights: Vec<f64> = (0..parts)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut shares: Vec<u64> = Vec::with_capacity(parts);
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(parts);
    let mut assigned = 0u64;
    for (i, w) in weights.iter().enumerate() {
        let ideal = spread as f64 * w / weight_sum;
        let floor = ideal.floor() as u64;
        shares.push(floor);
        remainders.push((ideal - floor as f64, i));
        assigned += floor;
    }
    let mut leftover = spread - assigned;
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    for (_, i) in remainders {
        if leftover == 0 {
            break;
        }
        shares[i] += 1;
        leftover -= 1;
    }
    shares.iter_mut().for_each(|s| *s += 1);
    shares
}
