//! Fit orchestration: centering, sampling, back-transformation of draws to
//! the reporting scale, and the self-describing result document.
//!
//! Sampling runs on a centered log-streams covariate (the intercept and
//! slope decorrelate, which the diagonal mass matrix needs); every reported
//! draw has the intercept shifted back, so documents and summaries are
//! always on the raw data scale.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::{derived_summary, DerivedSummary};
use crate::diagnostics::{summary_table, ParamSpec, ReportScale, SummaryRow};
use crate::error::{Error, Result};
use crate::model::{NbPosterior, PoissonPosterior, RegressionDataset};
use crate::nuts::{run_chains, SamplerConfig, Trace};

/// Which regression model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    NegativeBinomial,
    Poisson,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::NegativeBinomial => write!(f, "negative-binomial"),
            ModelKind::Poisson => write!(f, "poisson"),
        }
    }
}

/// Fit configuration on top of the sampler settings.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub model: ModelKind,
    pub sampler: SamplerConfig,
    /// HDI mass for the parameter table.
    pub hdi_prob: f64,
    /// Central-interval mass for derived quantities.
    pub interval_prob: f64,
    /// Reference log-streams for the expected-days contrast; defaults to
    /// the dataset median.
    pub ref_log_streams: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            model: ModelKind::NegativeBinomial,
            sampler: SamplerConfig::default(),
            hdi_prob: 0.94,
            interval_prob: 0.95,
            ref_log_streams: None,
        }
    }
}

/// Echo of the full effective configuration, embedded in every document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelKind,
    pub chains: usize,
    pub warmup_draws: usize,
    pub post_warmup_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub hdi_prob: f64,
    pub interval_prob: f64,
    pub ref_log_streams: f64,
}

/// Per-chain sampler health numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub divergences: Vec<usize>,
    pub step_sizes: Vec<f64>,
    pub mean_accept: Vec<f64>,
    pub max_depth_hits: Vec<usize>,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
}

/// Posterior draws on the reporting scale, chain-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsDocument {
    pub param_names: Vec<String>,
    pub chains: Vec<Vec<Vec<f64>>>,
}

/// The self-describing output of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub config: ConfigEcho,
    pub n_observations: usize,
    pub centering_offset: f64,
    pub parameters: Vec<SummaryRow>,
    pub derived: DerivedSummary,
    pub sampler: SamplerDiagnostics,
    pub draws: DrawsDocument,
}

impl FitDocument {
    /// Serializes deterministically (fixed field order, shortest
    /// round-trip float formatting), so identical seeds give identical
    /// bytes.
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("serializing fit document: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        serde_json::from_reader(reader)
            .map_err(|e| Error::Format(format!("parsing fit document: {e}")))
    }

    /// Rebuilds a trace view over the stored draws.
    pub fn trace(&self) -> Trace {
        Trace {
            param_names: self.draws.param_names.clone(),
            draws: self.draws.chains.clone(),
            stats: vec![],
        }
    }

    pub fn model(&self) -> ModelKind {
        self.config.model
    }
}

/// A completed fit: the reporting-scale trace plus the document.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub trace: Trace,
    pub document: FitDocument,
}

/// Fits the configured model to a track-level dataset.
pub fn fit(data: &RegressionDataset, options: &FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    options.sampler.validate()?;
    if !(options.hdi_prob > 0.0 && options.hdi_prob < 1.0) {
        return Err(Error::Config("hdi_prob must be in (0, 1)".into()));
    }
    if !(options.interval_prob > 0.0 && options.interval_prob < 1.0) {
        return Err(Error::Config("interval_prob must be in (0, 1)".into()));
    }
    let ref_log_streams = match options.ref_log_streams {
        Some(v) if v.is_finite() => v,
        Some(v) => return Err(Error::Config(format!("non-finite ref_log_streams {v}"))),
        None => data.median_log_streams()?,
    };

    let (mut trace, offset) = match options.model {
        ModelKind::NegativeBinomial => {
            let target = NbPosterior::centered(data);
            let offset = target.x_offset;
            (run_chains(&target, &options.sampler)?, offset)
        }
        ModelKind::Poisson => {
            let target = PoissonPosterior::centered(data);
            let offset = target.x_offset;
            (run_chains(&target, &options.sampler)?, offset)
        }
    };
    // reporting scale: beta0 absorbs the centering shift
    for chain in &mut trace.draws {
        for draw in chain.iter_mut() {
            draw[0] -= draw[2] * offset;
        }
    }

    let specs = param_specs(options.model);
    let parameters = summary_table(&trace, &specs, options.hdi_prob)?;
    let derived = derived_summary(&trace, ref_log_streams, options.interval_prob)?;

    let max_rhat = parameters
        .iter()
        .map(|r| r.rhat)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_ess = parameters
        .iter()
        .map(|r| r.ess_bulk)
        .fold(f64::INFINITY, f64::min);
    let sampler = SamplerDiagnostics {
        divergences: trace.stats.iter().map(|s| s.divergences).collect(),
        step_sizes: trace.stats.iter().map(|s| s.step_size).collect(),
        mean_accept: trace
            .stats
            .iter()
            .map(|s| s.accept_stats.iter().sum::<f64>() / s.accept_stats.len().max(1) as f64)
            .collect(),
        max_depth_hits: trace.stats.iter().map(|s| s.n_max_depth).collect(),
        max_rhat,
        min_ess_bulk: min_ess,
    };

    let document = FitDocument {
        config: ConfigEcho {
            model: options.model,
            chains: options.sampler.chains,
            warmup_draws: options.sampler.warmup_draws,
            post_warmup_draws: options.sampler.post_warmup_draws,
            target_accept: options.sampler.target_accept,
            max_tree_depth: options.sampler.max_tree_depth,
            seed: options.sampler.seed,
            hdi_prob: options.hdi_prob,
            interval_prob: options.interval_prob,
            ref_log_streams,
        },
        n_observations: data.len(),
        centering_offset: offset,
        parameters,
        derived,
        sampler,
        draws: DrawsDocument {
            param_names: trace.param_names.clone(),
            chains: trace.draws.clone(),
        },
    };
    Ok(FitResult { trace, document })
}

/// Reporting-scale parameter layout: betas as-is, alpha from log-alpha.
pub fn param_specs(model: ModelKind) -> Vec<ParamSpec> {
    let mut specs = vec![
        ParamSpec {
            name: "beta0".into(),
            index: 0,
            scale: ReportScale::Identity,
        },
        ParamSpec {
            name: "beta1".into(),
            index: 1,
            scale: ReportScale::Identity,
        },
        ParamSpec {
            name: "beta2".into(),
            index: 2,
            scale: ReportScale::Identity,
        },
    ];
    if model == ModelKind::NegativeBinomial {
        specs.push(ParamSpec {
            name: "alpha".into(),
            index: 3,
            scale: ReportScale::Exp,
        });
    }
    specs
}
