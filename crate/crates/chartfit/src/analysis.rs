//! Derived posterior quantities (rate ratio, sign probability,
//! expected-days contrast) and posterior predictive machinery, including
//! the Negative Binomial vs Poisson comparison.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_negative_binomial, RegressionDataset, ETA_CLAMP};
use crate::nuts::Trace;

/// Median plus an equal-tailed central interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantitySummary {
    pub median: f64,
    pub low: f64,
    pub high: f64,
    pub interval_prob: f64,
}

/// Order-statistic quantile of sorted draws (no interpolation, so monotone
/// transforms commute with it exactly).
fn order_quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn quantity_summary(draws: &[f64], interval_prob: f64) -> Result<QuantitySummary> {
    if draws.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(interval_prob > 0.0 && interval_prob < 1.0) {
        return Err(Error::Domain(format!(
            "interval prob must be in (0, 1), got {interval_prob}"
        )));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - interval_prob) / 2.0;
    Ok(QuantitySummary {
        median: order_quantile(&sorted, 0.5),
        low: order_quantile(&sorted, tail),
        high: order_quantile(&sorted, 1.0 - tail),
        interval_prob,
    })
}

/// Per-draw collaboration rate ratio exp(beta1) with its summary.
pub fn rate_ratio(trace: &Trace, interval_prob: f64) -> Result<(Vec<f64>, QuantitySummary)> {
    let idx = trace.param_index("beta1")?;
    let draws: Vec<f64> = trace.pooled(idx).iter().map(|b| b.exp()).collect();
    let summary = quantity_summary(&draws, interval_prob)?;
    Ok((draws, summary))
}

/// Fraction of pooled draws of the named parameter strictly above zero.
pub fn prob_positive(trace: &Trace, name: &str) -> Result<f64> {
    let idx = trace.param_index(name)?;
    let pooled = trace.pooled(idx);
    if pooled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pooled.iter().filter(|&&v| v > 0.0).count() as f64 / pooled.len() as f64)
}

/// Per-draw expected days on chart mu = exp(beta0 + beta1 collab + beta2 x)
/// at a reference log-streams value.
pub fn expected_days(
    trace: &Trace,
    x_log_streams: f64,
    collab: bool,
    interval_prob: f64,
) -> Result<(Vec<f64>, QuantitySummary)> {
    if !x_log_streams.is_finite() {
        return Err(Error::Domain("reference log-streams must be finite".into()));
    }
    let b0 = trace.param_index("beta0")?;
    let b1 = trace.param_index("beta1")?;
    let b2 = trace.param_index("beta2")?;
    let mut draws = Vec::with_capacity(trace.n_chains() * trace.n_draws());
    for chain in &trace.draws {
        for d in chain {
            let eta = d[b0] + d[b1] * (collab as u8 as f64) + d[b2] * x_log_streams;
            draws.push(eta.exp());
        }
    }
    let summary = quantity_summary(&draws, interval_prob)?;
    Ok((draws, summary))
}

/// The derived-quantity block reported alongside the parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedSummary {
    pub rate_ratio: QuantitySummary,
    pub prob_beta1_positive: f64,
    pub ref_log_streams: f64,
    pub mu_solo: QuantitySummary,
    pub mu_collab: QuantitySummary,
}

/// Computes the full derived block at a reference log-streams value.
pub fn derived_summary(
    trace: &Trace,
    ref_log_streams: f64,
    interval_prob: f64,
) -> Result<DerivedSummary> {
    let (_, ratio) = rate_ratio(trace, interval_prob)?;
    let (_, mu_solo) = expected_days(trace, ref_log_streams, false, interval_prob)?;
    let (_, mu_collab) = expected_days(trace, ref_log_streams, true, interval_prob)?;
    Ok(DerivedSummary {
        rate_ratio: ratio,
        prob_beta1_positive: prob_positive(trace, "beta1")?,
        ref_log_streams,
        mu_solo,
        mu_collab,
    })
}

/// Draws replicate datasets from the posterior predictive distribution.
///
/// Replicate `j` uses the pooled posterior draw at index
/// `j * n_draws / n_rep` (even stride through the chains) and its own
/// ChaCha8 stream, so the result is reproducible regardless of thread
/// scheduling. A trace with a `log_alpha` column replicates from the
/// Negative Binomial; otherwise from the Poisson.
pub fn posterior_predictive(
    trace: &Trace,
    data: &RegressionDataset,
    n_rep: usize,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    if n_rep < 1 {
        return Err(Error::Config("n_rep must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let b0 = trace.param_index("beta0")?;
    let b1 = trace.param_index("beta1")?;
    let b2 = trace.param_index("beta2")?;
    let log_alpha = trace.param_index("log_alpha").ok();
    let total = trace.n_chains() * trace.n_draws();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }

    let pooled: Vec<Vec<f64>> = {
        let mut all = Vec::with_capacity(total);
        for chain in &trace.draws {
            all.extend(chain.iter().cloned());
        }
        all
    };

    let reps: Vec<Vec<u32>> = (0..n_rep)
        .into_par_iter()
        .map(|j| {
            let draw = &pooled[j * total / n_rep];
            let alpha = log_alpha.map(|i| draw[i].exp());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            (0..data.len())
                .map(|i| {
                    let eta = draw[b0]
                        + draw[b1] * (data.x_collab[i] as u8 as f64)
                        + draw[b2] * data.x_log_streams[i];
                    let mu = eta.min(ETA_CLAMP).exp();
                    let count = match alpha {
                        Some(a) => sample_negative_binomial(&mut rng, mu, a),
                        None => Poisson::new(mu)
                            .map(|p| p.sample(&mut rng) as u64)
                            .unwrap_or(0),
                    };
                    count.min(u32::MAX as u64) as u32
                })
                .collect()
        })
        .collect();
    Ok(reps)
}

/// One test statistic: observed value, its distribution over replicates,
/// and the tail probability P(rep >= obs) with ties counted half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpcStat {
    pub observed: f64,
    pub rep_mean: f64,
    pub rep_sd: f64,
    pub p_value: f64,
}

/// Posterior predictive statistics for one stratum of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub n_observations: usize,
    pub mean: PpcStat,
    pub variance: PpcStat,
    pub max: PpcStat,
    pub share_over_300: PpcStat,
    /// Zero observed variance; the variance p-value is not meaningful.
    pub degenerate: bool,
}

/// Posterior predictive check report, overall and by collaboration status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub n_rep: usize,
    pub overall: StratumReport,
    pub solo: Option<StratumReport>,
    pub collab: Option<StratumReport>,
}

fn count_stats(values: &[u32]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let variance = if values.len() > 1 {
        values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let max = values.iter().max().copied().unwrap_or(0) as f64;
    let share = values.iter().filter(|&&v| v > 300).count() as f64 / n;
    (mean, variance, max, share)
}

fn tail_p(rep_values: &[f64], observed: f64) -> f64 {
    let above = rep_values.iter().filter(|&&v| v > observed).count() as f64;
    let ties = rep_values.iter().filter(|&&v| v == observed).count() as f64;
    (above + 0.5 * ties) / rep_values.len() as f64
}

fn stratum_report(obs: &[u32], reps: &[Vec<u32>], keep: &[bool]) -> Option<StratumReport> {
    let obs_kept: Vec<u32> = obs
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .collect();
    if obs_kept.is_empty() {
        return None;
    }
    let (o_mean, o_var, o_max, o_share) = count_stats(&obs_kept);

    let mut rep_means = Vec::with_capacity(reps.len());
    let mut rep_vars = Vec::with_capacity(reps.len());
    let mut rep_maxes = Vec::with_capacity(reps.len());
    let mut rep_shares = Vec::with_capacity(reps.len());
    for rep in reps {
        let kept: Vec<u32> = rep
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .collect();
        let (m, v, x, s) = count_stats(&kept);
        rep_means.push(m);
        rep_vars.push(v);
        rep_maxes.push(x);
        rep_shares.push(s);
    }
    let dist = |values: &[f64]| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (mean, sd)
    };
    let stat = |values: &[f64], observed: f64| {
        let (rep_mean, rep_sd) = dist(values);
        PpcStat {
            observed,
            rep_mean,
            rep_sd,
            p_value: tail_p(values, observed),
        }
    };
    Some(StratumReport {
        n_observations: obs_kept.len(),
        mean: stat(&rep_means, o_mean),
        variance: stat(&rep_vars, o_var),
        max: stat(&rep_maxes, o_max),
        share_over_300: stat(&rep_shares, o_share),
        degenerate: o_var == 0.0,
    })
}

/// Compares observed counts with replicates, overall and stratified by
/// collaboration status.
pub fn ppc_compare(obs: &[u32], reps: &[Vec<u32>], collab: &[bool]) -> Result<PpcReport> {
    if reps.is_empty() {
        return Err(Error::Config("at least one replicate required".into()));
    }
    if obs.len() != collab.len() || reps.iter().any(|r| r.len() != obs.len()) {
        return Err(Error::Domain(
            "observation/replicate shapes disagree".into(),
        ));
    }
    let all = vec![true; obs.len()];
    let solo: Vec<bool> = collab.iter().map(|&c| !c).collect();
    let overall = stratum_report(obs, reps, &all).ok_or(Error::EmptyDataset)?;
    Ok(PpcReport {
        n_rep: reps.len(),
        overall,
        solo: stratum_report(obs, reps, &solo),
        collab: stratum_report(obs, reps, collab),
    })
}

/// Side-by-side posterior predictive comparison of two fits of the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    /// Mean replicate variance / observed variance.
    pub nb_variance_ratio: f64,
    pub poisson_variance_ratio: f64,
    pub nb_max_p_value: f64,
    pub poisson_max_p_value: f64,
    pub observed_variance: f64,
    pub degenerate: bool,
}

/// Predictive variance ratios and max-statistic tail p-values for a
/// Negative Binomial fit and a Poisson fit of the same data.
pub fn model_compare(
    nb_trace: &Trace,
    poisson_trace: &Trace,
    data: &RegressionDataset,
    n_rep: usize,
    seed: u64,
) -> Result<ModelComparison> {
    let (_, obs_var, obs_max, _) = count_stats(&data.y);
    let degenerate = obs_var == 0.0;

    let run = |trace: &Trace| -> Result<(f64, f64)> {
        let reps = posterior_predictive(trace, data, n_rep, seed)?;
        let mut var_ratio_sum = 0.0;
        let mut maxes = Vec::with_capacity(reps.len());
        for rep in &reps {
            let (_, v, m, _) = count_stats(rep);
            if !degenerate {
                var_ratio_sum += v / obs_var;
            }
            maxes.push(m);
        }
        Ok((var_ratio_sum / reps.len() as f64, tail_p(&maxes, obs_max)))
    };
    let (nb_ratio, nb_max_p) = run(nb_trace)?;
    let (pois_ratio, pois_max_p) = run(poisson_trace)?;
    Ok(ModelComparison {
        nb_variance_ratio: nb_ratio,
        poisson_variance_ratio: pois_ratio,
        nb_max_p_value: nb_max_p,
        poisson_max_p_value: pois_max_p,
        observed_variance: obs_var,
        degenerate,
    })
}

/// Histogram export backing external predictive-check plots: day counts
/// binned at width 10 over [0, 370), plus one overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcHistogram {
    pub bin_width: u32,
    pub range_max: u32,
    pub observed: Vec<u32>,
    pub replicates: Vec<Vec<u32>>,
}

pub fn ppc_histogram(obs: &[u32], reps: &[Vec<u32>]) -> PpcHistogram {
    const WIDTH: u32 = 10;
    const MAX: u32 = 370;
    let n_bins = (MAX / WIDTH) as usize + 1; // final bin catches >= MAX
    let bin = |values: &[u32]| {
        let mut counts = vec![0u32; n_bins];
        for &v in values {
            let idx = ((v / WIDTH) as usize).min(n_bins - 1);
            counts[idx] += 1;
        }
        counts
    };
    PpcHistogram {
        bin_width: WIDTH,
        range_max: MAX,
        observed: bin(obs),
        replicates: reps.iter().map(|r| bin(r)).collect(),
    }
}

/// Writes the histogram as machine-readable rows:
/// `series,bin_low,bin_high,count` with an unbounded final bin.
pub fn write_histogram_csv<W: std::io::Write>(writer: W, hist: &PpcHistogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series", "bin_low", "bin_high", "count"])?;
    let mut write_series = |name: &str, counts: &[u32]| -> Result<()> {
        for (i, &count) in counts.iter().enumerate() {
            let lo = i as u32 * hist.bin_width;
            let hi = if lo >= hist.range_max {
                "inf".to_string()
            } else {
                (lo + hist.bin_width).to_string()
            };
            w.write_record([name, &lo.to_string(), &hi, &count.to_string()])?;
        }
        Ok(())
    };
    write_series("observed", &hist.observed)?;
    for (j, rep) in hist.replicates.iter().enumerate() {
        write_series(&format!("rep_{j:04}"), rep)?;
    }
    w.flush()?;
    Ok(())
}
