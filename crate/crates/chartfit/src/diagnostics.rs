//! Convergence diagnostics and posterior summaries: rank-normalized split
//! R-hat, bulk effective sample size, highest-density intervals, and the
//! per-parameter summary table.
//!
//! R-hat and ESS follow the rank-normalization recipe of the modern
//! diagnostics literature: draws are ranked jointly across chains (average
//! ranks on ties), mapped through the normal quantile function with the
//! (r - 3/8)/(S + 1/4) adjustment, and each chain is split in half before
//! the between/within variance comparison. ESS uses per-chain
//! autocovariances by direct summation, the multi-chain combined
//! autocorrelation estimate, and Geyer's initial monotone positive sequence
//! truncation; the integrated time is floored at 1/log10(N) and the result
//! capped at 1.5 x the nominal draw count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuts::Trace;
use crate::special::inverse_normal_cdf;

/// A diagnostic value plus a flag for degenerate (zero-variance) input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostic {
    pub value: f64,
    pub degenerate: bool,
}

/// Joint rank-normalization of multi-chain draws: average ranks over the
/// pooled sample mapped through the normal quantile function.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(chains.len());
    let mut offset = 0;
    for chain in chains {
        offsets.push(offset);
        for (i, &v) in chain.iter().enumerate() {
            indexed.push((v, offset + i));
        }
        offset += chain.len();
    }
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        // average rank for the tie run [i, j], 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &indexed[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }

    let s = total as f64;
    let z = |rank: f64| inverse_normal_cdf((rank - 0.375) / (s + 0.25));
    chains
        .iter()
        .zip(&offsets)
        .map(|(chain, &off)| (0..chain.len()).map(|i| z(ranks[off + i])).collect())
        .collect()
}

fn split_halves(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut halves = Vec::with_capacity(chains.len() * 2);
    for chain in chains {
        let half = chain.len() / 2;
        halves.push(chain[..half].to_vec());
        halves.push(chain[chain.len() - half..].to_vec());
    }
    halves
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().all(|c| c.iter().all(|&v| v == first))
}

fn check_shape(chains: &[Vec<f64>]) -> Result<()> {
    if chains.is_empty() {
        return Err(Error::Domain("at least one chain required".into()));
    }
    let n = chains[0].len();
    if n < 4 {
        return Err(Error::Domain("at least 4 draws per chain required".into()));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Domain("chains must have equal length".into()));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_var(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Rank-normalized split R-hat: sqrt(var_plus / W) over the rank-normalized
/// half-chains. Constant input is defined as 1.0 with the degenerate flag.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Diagnostic> {
    check_shape(chains)?;
    if is_constant(chains) {
        return Ok(Diagnostic {
            value: 1.0,
            degenerate: true,
        });
    }
    let halves = split_halves(&rank_normalize(chains));
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let chain_means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let w = halves.iter().map(|c| sample_var(c)).sum::<f64>() / m;
    let b_over_n = sample_var(&chain_means);
    if w <= 0.0 {
        return Ok(Diagnostic {
            value: 1.0,
            degenerate: true,
        });
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Ok(Diagnostic {
        value: (var_plus / w).sqrt(),
        degenerate: false,
    })
}

/// Biased (divisor n) autocovariance by direct summation, lags 0..n-1.
fn autocovariance(chain: &[f64]) -> Vec<f64> {
    let n = chain.len();
    let m = mean(chain);
    let centered: Vec<f64> = chain.iter().map(|v| v - m).collect();
    (0..n)
        .map(|lag| {
            let mut sum = 0.0;
            for i in 0..n - lag {
                sum += centered[i] * centered[i + lag];
            }
            sum / n as f64
        })
        .collect()
}

/// Rank-normalized bulk effective sample size. Constant input is flagged
/// and reported as the nominal draw count.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Result<Diagnostic> {
    check_shape(chains)?;
    let nominal = chains.iter().map(|c| c.len()).sum::<usize>() as f64;
    if is_constant(chains) {
        return Ok(Diagnostic {
            value: nominal,
            degenerate: true,
        });
    }
    let halves = split_halves(&rank_normalize(chains));
    let m = halves.len();
    let n = halves[0].len();

    let acov: Vec<Vec<f64>> = halves.iter().map(|c| autocovariance(c)).collect();
    let chain_means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let acov_mean = |lag: usize| acov.iter().map(|a| a[lag]).sum::<f64>() / m as f64;

    let mean_var = acov_mean(0) * n as f64 / (n as f64 - 1.0);
    let var_plus = mean_var * (n as f64 - 1.0) / n as f64 + sample_var(&chain_means);
    if var_plus <= 0.0 {
        return Ok(Diagnostic {
            value: nominal,
            degenerate: true,
        });
    }

    // Geyer initial positive sequence over paired lags
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - acov_mean(1)) / var_plus;
    if n > 1 {
        rho[1] = rho_odd;
    }
    let mut t: usize = 1;
    while t + 3 < n && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - acov_mean(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - acov_mean(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t as isize - 2;
    // carry the last positive even term past the truncation point
    if rho_even > 0.0 {
        let idx = max_t + 1;
        if idx >= 0 && (idx as usize) < n {
            rho[idx as usize] = rho_even;
        }
    }
    // Geyer initial monotone sequence
    let mut t = 1usize;
    while (t as isize) <= max_t - 2 {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            let avg = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 1] = avg;
            rho[t + 2] = avg;
        }
        t += 2;
    }

    let mut tau = -1.0;
    if max_t >= 0 {
        tau += 2.0 * rho[..=(max_t as usize).min(n - 1)].iter().sum::<f64>();
    }
    let carry = max_t + 1;
    if carry >= 0 && (carry as usize) < n {
        tau += rho[carry as usize];
    }
    tau = tau.max(1.0 / nominal.log10());
    Ok(Diagnostic {
        value: (nominal / tau).min(1.5 * nominal),
        degenerate: false,
    })
}

/// Highest-density interval: the narrowest window of ceil(prob * N) sorted
/// draws, ties resolved toward the smallest lower bound.
pub fn hdi(draws: &[f64], prob: f64) -> Result<(f64, f64)> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!(
            "hdi prob must be in (0, 1), got {prob}"
        )));
    }
    if draws.len() < 10 {
        return Err(Error::Domain("hdi requires at least 10 draws".into()));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let k = ((prob * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[k - 1]);
    let mut best_width = best.1 - best.0;
    for i in 1..=n - k {
        let width = sorted[i + k - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = (sorted[i], sorted[i + k - 1]);
        }
    }
    Ok(best)
}

/// How a sampled parameter maps to its reporting scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportScale {
    Identity,
    /// The parameter was sampled as a log; report exp(draw).
    Exp,
}

/// One parameter to summarize: reporting name, column in the trace, scale.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub index: usize,
    pub scale: ReportScale,
}

/// One row of the posterior summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
}

/// Summarizes the trace: mean/SD/HDI on the reporting scale, R-hat and ESS
/// on the sampled scale.
pub fn summary_table(
    trace: &Trace,
    params: &[ParamSpec],
    hdi_prob: f64,
) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::with_capacity(params.len());
    for spec in params {
        let chains = trace.param_chains(spec.index);
        let rhat = split_rhat(&chains)?.value;
        let ess = ess_bulk(&chains)?.value;
        let mut pooled = trace.pooled(spec.index);
        if spec.scale == ReportScale::Exp {
            pooled.iter_mut().for_each(|v| *v = v.exp());
        }
        let mean_val = mean(&pooled);
        let sd = sample_var(&pooled).sqrt();
        let (hdi_low, hdi_high) = hdi(&pooled, hdi_prob)?;
        rows.push(SummaryRow {
            name: spec.name.clone(),
            mean: mean_val,
            sd,
            hdi_low,
            hdi_high,
            rhat,
            ess_bulk: ess,
        });
    }
    Ok(rows)
}

/// Renders summary rows as an aligned text table.
pub fn render_summary_table(rows: &[SummaryRow], hdi_prob: f64) -> String {
    let pct = hdi_prob * 100.0;
    let mut out = format!(
        "{:<12} {:>10} {:>10} {:>12} {:>12} {:>8} {:>10}\n",
        "parameter",
        "mean",
        "sd",
        format!("{pct:.0}% hdi lo"),
        format!("{pct:.0}% hdi hi"),
        "rhat",
        "ess_bulk"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>10.3} {:>10.3} {:>12.3} {:>12.3} {:>8.4} {:>10.0}\n",
            r.name, r.mean, r.sd, r.hdi_low, r.hdi_high, r.rhat, r.ess_bulk
        ));
    }
    out
}
