//! Negative Binomial GLM of days-on-chart (and the Poisson baseline):
//! log-likelihood, log-prior, unconstrained-space log-posterior, and exact
//! analytic gradients.
//!
//! The model is
//!
//! ```text
//!   n_i ~ NegBin(mu_i, alpha)        E = mu_i, Var = mu_i + mu_i^2/alpha
//!   ln mu_i = beta0 + beta1 * x_collab_i + beta2 * x_log_streams_i
//!   beta_j ~ Normal(0, 2^2),  alpha ~ HalfNormal(2)
//! ```
//!
//! The sampler works on (beta0, beta1, beta2, theta) with theta = ln alpha;
//! the HalfNormal prior carries the exp-transform Jacobian term theta.
//! Log-prior and log-posterior drop additive normalizing constants.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::aggregate::TrackRecord;
use crate::error::{Error, Result};
use crate::nuts::Target;
use crate::special::{digamma, ln_gamma};

/// Linear-predictor clamp: eta above this is treated as overflow and the
/// evaluation is rejected rather than silently saturated.
pub const ETA_CLAMP: f64 = 50.0;

/// Regression coefficients (intercept, collaboration effect, log-streams effect).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// Dispersion parameter of the Negative Binomial, alpha > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispersion {
    alpha: f64,
}

impl Dispersion {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self { alpha })
        } else {
            Err(Error::Domain(format!(
                "dispersion must be finite and > 0, got {alpha}"
            )))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Sampler-space parameter point: three coefficients plus theta = ln alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnconstrainedParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub log_alpha: f64,
}

impl UnconstrainedParams {
    pub fn new(beta0: f64, beta1: f64, beta2: f64, log_alpha: f64) -> Self {
        Self {
            beta0,
            beta1,
            beta2,
            log_alpha,
        }
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            beta0: self.beta0,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.beta0, self.beta1, self.beta2, self.log_alpha]
    }

    pub fn from_slice(q: &[f64]) -> Self {
        Self {
            beta0: q[0],
            beta1: q[1],
            beta2: q[2],
            log_alpha: q[3],
        }
    }
}

/// Response and covariate vectors for the track-level regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub y: Vec<u32>,
    pub x_collab: Vec<bool>,
    pub x_log_streams: Vec<f64>,
}

impl RegressionDataset {
    /// Builds a dataset, checking that the vectors line up. Chart-derived
    /// data always has y >= 1; the likelihood itself is defined for y = 0,
    /// which exact-model simulations may produce.
    pub fn new(y: Vec<u32>, x_collab: Vec<bool>, x_log_streams: Vec<f64>) -> Result<Self> {
        if y.len() != x_collab.len() || y.len() != x_log_streams.len() {
            return Err(Error::Domain(format!(
                "length mismatch: y={}, x_collab={}, x_log_streams={}",
                y.len(),
                x_collab.len(),
                x_log_streams.len()
            )));
        }
        if x_log_streams.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite log_streams".into()));
        }
        Ok(Self {
            y,
            x_collab,
            x_log_streams,
        })
    }

    pub fn from_records(records: &[TrackRecord]) -> Result<Self> {
        Self::new(
            records.iter().map(|r| r.days_on_chart).collect(),
            records.iter().map(|r| r.is_collab).collect(),
            records.iter().map(|r| r.log_streams).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Median of the log-streams covariate (reference value for derived
    /// quantities). Lower of the two middle order statistics for even n.
    pub fn median_log_streams(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut xs = self.x_log_streams.clone();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(xs[(xs.len() - 1) / 2])
    }

    pub fn mean_log_streams(&self) -> f64 {
        self.x_log_streams.iter().sum::<f64>() / self.len() as f64
    }
}

/// Negative Binomial log-pmf in the mean/dispersion parameterization.
///
/// ln[ Γ(n+α) / (Γ(α) n!) · (α/(α+μ))^α · (μ/(α+μ))^n ]
pub fn nb_log_pmf(n: u64, mu: f64, alpha: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!(
            "mu must be finite and > 0, got {mu}"
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "alpha must be finite and > 0, got {alpha}"
        )));
    }
    Ok(nb_log_pmf_unchecked(n as f64, mu, alpha))
}

#[inline]
fn nb_log_pmf_unchecked(n: f64, mu: f64, alpha: f64) -> f64 {
    ln_gamma(n + alpha) - ln_gamma(alpha) - ln_gamma(n + 1.0)
        + alpha * (alpha / (alpha + mu)).ln()
        + n * (mu / (alpha + mu)).ln()
}

/// Poisson log-pmf: n ln μ − μ − ln n!
pub fn poisson_log_pmf(n: u64, mu: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!(
            "mu must be finite and > 0, got {mu}"
        )));
    }
    let n = n as f64;
    Ok(n * mu.ln() - mu - ln_gamma(n + 1.0))
}

/// One draw from NegBin(mu, alpha) via the Gamma-Poisson mixture:
/// lambda ~ Gamma(shape alpha, scale mu/alpha), n ~ Poisson(lambda).
pub fn sample_negative_binomial<R: Rng + ?Sized>(rng: &mut R, mu: f64, alpha: f64) -> u64 {
    let gamma = Gamma::new(alpha, mu / alpha).expect("valid gamma parameters");
    let lambda: f64 = gamma.sample(rng);
    if !(lambda > 0.0) || !lambda.is_finite() {
        return 0;
    }
    Poisson::new(lambda)
        .map(|p| p.sample(rng) as u64)
        .unwrap_or(0)
}

/// eta = beta0 + beta1 * x_collab + beta2 * x_log_streams
pub fn linear_predictor(coeffs: &Coefficients, collab: bool, x_log_streams: f64) -> f64 {
    coeffs.beta0 + coeffs.beta1 * (collab as u8 as f64) + coeffs.beta2 * x_log_streams
}

/// Unnormalized log-prior on the unconstrained scale:
/// −Σ β_j²/8 − α²/8 + θ (Normal(0,2²) coefficients, HalfNormal(2) on
/// α = e^θ with the exp-transform Jacobian θ).
pub fn log_prior(params: &UnconstrainedParams) -> f64 {
    let alpha = params.alpha();
    -(params.beta0.powi(2) + params.beta1.powi(2) + params.beta2.powi(2)) / 8.0
        - alpha * alpha / 8.0
        + params.log_alpha
}

/// Gradient of [`log_prior`] with respect to (β₀, β₁, β₂, θ).
pub fn grad_log_prior(params: &UnconstrainedParams) -> [f64; 4] {
    let alpha = params.alpha();
    [
        -params.beta0 / 4.0,
        -params.beta1 / 4.0,
        -params.beta2 / 4.0,
        -alpha * alpha / 4.0 + 1.0,
    ]
}

/// Value + gradient of an unnormalized log-density, with the overflow flag
/// exposed so the sampler can reject clamped evaluations.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub clamped: bool,
}

fn nb_eval(
    params: &UnconstrainedParams,
    y: &[u32],
    x_collab: &[bool],
    x_log_streams: &[f64],
) -> Evaluation {
    let alpha = params.alpha();
    let coeffs = params.coefficients();
    let mut value = log_prior(params);
    let mut grad = grad_log_prior(params);
    let mut clamped = !alpha.is_finite() || alpha <= 0.0;

    if !clamped {
        let psi_alpha = digamma(alpha);
        let ln_gamma_alpha = ln_gamma(alpha);
        for i in 0..y.len() {
            let n = y[i] as f64;
            let eta = linear_predictor(&coeffs, x_collab[i], x_log_streams[i]);
            if eta > ETA_CLAMP {
                clamped = true;
                break;
            }
            let mu = eta.exp();
            value += ln_gamma(n + alpha) - ln_gamma_alpha - ln_gamma(n + 1.0)
                + alpha * (alpha / (alpha + mu)).ln()
                + n * (mu / (alpha + mu)).ln();

            // d/d eta = y − (y+α) μ/(α+μ), chained to the betas through x
            let d_eta = n - (n + alpha) * mu / (alpha + mu);
            grad[0] += d_eta;
            grad[1] += d_eta * (x_collab[i] as u8 as f64);
            grad[2] += d_eta * x_log_streams[i];

            // d/d alpha, chained to theta by the factor alpha
            let d_alpha = digamma(n + alpha) - psi_alpha + (alpha / (alpha + mu)).ln() + 1.0
                - (n + alpha) / (alpha + mu);
            grad[3] += alpha * d_alpha;
        }
    }

    if clamped || !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Evaluation {
            value: f64::NEG_INFINITY,
            gradient: vec![f64::NAN; 4],
            clamped: true,
        };
    }
    Evaluation {
        value,
        gradient: grad.to_vec(),
        clamped: false,
    }
}

/// Unnormalized log-posterior of the NB model on the unconstrained scale.
/// Returns −∞ when the linear predictor overflows the clamp.
pub fn log_posterior(params: &UnconstrainedParams, data: &RegressionDataset) -> f64 {
    nb_eval(params, &data.y, &data.x_collab, &data.x_log_streams).value
}

/// Exact analytic gradient of [`log_posterior`] with respect to
/// (β₀, β₁, β₂, θ). `None` signals the same overflow condition under which
/// the value is −∞.
pub fn grad_log_posterior(
    params: &UnconstrainedParams,
    data: &RegressionDataset,
) -> Option<[f64; 4]> {
    let eval = nb_eval(params, &data.y, &data.x_collab, &data.x_log_streams);
    if eval.clamped {
        None
    } else {
        Some([
            eval.gradient[0],
            eval.gradient[1],
            eval.gradient[2],
            eval.gradient[3],
        ])
    }
}

fn poisson_eval(
    coeffs: &Coefficients,
    y: &[u32],
    x_collab: &[bool],
    x_log_streams: &[f64],
) -> Evaluation {
    let mut value = -(coeffs.beta0.powi(2) + coeffs.beta1.powi(2) + coeffs.beta2.powi(2)) / 8.0;
    let mut grad = [
        -coeffs.beta0 / 4.0,
        -coeffs.beta1 / 4.0,
        -coeffs.beta2 / 4.0,
    ];
    let mut clamped = false;
    for i in 0..y.len() {
        let n = y[i] as f64;
        let eta = linear_predictor(coeffs, x_collab[i], x_log_streams[i]);
        if eta > ETA_CLAMP {
            clamped = true;
            break;
        }
        let mu = eta.exp();
        value += n * eta - mu - ln_gamma(n + 1.0);
        let d_eta = n - mu;
        grad[0] += d_eta;
        grad[1] += d_eta * (x_collab[i] as u8 as f64);
        grad[2] += d_eta * x_log_streams[i];
    }
    if clamped || !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Evaluation {
            value: f64::NEG_INFINITY,
            gradient: vec![f64::NAN; 3],
            clamped: true,
        };
    }
    Evaluation {
        value,
        gradient: grad.to_vec(),
        clamped: false,
    }
}

/// Unnormalized log-posterior of the Poisson baseline (same coefficient
/// priors, no dispersion parameter).
pub fn poisson_log_posterior(coeffs: &Coefficients, data: &RegressionDataset) -> f64 {
    poisson_eval(coeffs, &data.y, &data.x_collab, &data.x_log_streams).value
}

/// Analytic gradient of [`poisson_log_posterior`] with respect to the betas.
pub fn grad_poisson_log_posterior(
    coeffs: &Coefficients,
    data: &RegressionDataset,
) -> Option<[f64; 3]> {
    let eval = poisson_eval(coeffs, &data.y, &data.x_collab, &data.x_log_streams);
    if eval.clamped {
        None
    } else {
        Some([eval.gradient[0], eval.gradient[1], eval.gradient[2]])
    }
}

/// NB posterior as a sampler target. `x_offset` is subtracted from the
/// log-streams covariate before evaluation; sampling on the centered scale
/// decorrelates intercept and slope, and reported draws shift the intercept
/// back via [`NbPosterior::uncenter_draw`].
#[derive(Debug, Clone)]
pub struct NbPosterior {
    y: Vec<u32>,
    x_collab: Vec<bool>,
    x_log_streams: Vec<f64>,
    pub x_offset: f64,
}

impl NbPosterior {
    pub fn new(data: &RegressionDataset) -> Self {
        Self {
            y: data.y.clone(),
            x_collab: data.x_collab.clone(),
            x_log_streams: data.x_log_streams.clone(),
            x_offset: 0.0,
        }
    }

    /// Centers the log-streams covariate at its sample mean.
    pub fn centered(data: &RegressionDataset) -> Self {
        let offset = data.mean_log_streams();
        Self {
            y: data.y.clone(),
            x_collab: data.x_collab.clone(),
            x_log_streams: data.x_log_streams.iter().map(|x| x - offset).collect(),
            x_offset: offset,
        }
    }

    /// Maps one sampled draw back to the reporting scale:
    /// β₀ ← β₀ − β₂ · offset.
    pub fn uncenter_draw(&self, draw: &mut [f64]) {
        draw[0] -= draw[2] * self.x_offset;
    }
}

impl Target for NbPosterior {
    fn dim(&self) -> usize {
        4
    }

    fn param_names(&self) -> Vec<String> {
        ["beta0", "beta1", "beta2", "log_alpha"]
            .map(String::from)
            .to_vec()
    }

    fn eval(&self, position: &[f64]) -> Option<(f64, Vec<f64>)> {
        let params = UnconstrainedParams::from_slice(position);
        let eval = nb_eval(&params, &self.y, &self.x_collab, &self.x_log_streams);
        if eval.clamped {
            None
        } else {
            Some((eval.value, eval.gradient))
        }
    }
}

/// Poisson posterior as a 3-dimensional sampler target, with the same
/// centering contract as [`NbPosterior`].
#[derive(Debug, Clone)]
pub struct PoissonPosterior {
    y: Vec<u32>,
    x_collab: Vec<bool>,
    x_log_streams: Vec<f64>,
    pub x_offset: f64,
}

impl PoissonPosterior {
    pub fn new(data: &RegressionDataset) -> Self {
        Self {
            y: data.y.clone(),
            x_collab: data.x_collab.clone(),
            x_log_streams: data.x_log_streams.clone(),
            x_offset: 0.0,
        }
    }

    pub fn centered(data: &RegressionDataset) -> Self {
        let offset = data.mean_log_streams();
        Self {
            y: data.y.clone(),
            x_collab: data.x_collab.clone(),
            x_log_streams: data.x_log_streams.iter().map(|x| x - offset).collect(),
            x_offset: offset,
        }
    }

    pub fn uncenter_draw(&self, draw: &mut [f64]) {
        draw[0] -= draw[2] * self.x_offset;
    }
}

impl Target for PoissonPosterior {
    fn dim(&self) -> usize {
        3
    }

    fn param_names(&self) -> Vec<String> {
        ["beta0", "beta1", "beta2"].map(String::from).to_vec()
    }

    fn eval(&self, position: &[f64]) -> Option<(f64, Vec<f64>)> {
        let coeffs = Coefficients {
            beta0: position[0],
            beta1: position[1],
            beta2: position[2],
        };
        let eval = poisson_eval(&coeffs, &self.y, &self.x_collab, &self.x_log_streams);
        if eval.clamped {
            None
        } else {
            Some((eval.value, eval.gradient))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dataset() -> RegressionDataset {
        RegressionDataset::new(
            vec![12, 3, 55, 7, 120, 1, 30, 9],
            vec![false, true, false, true, false, true, false, true],
            vec![11.2, 9.8, 13.5, 10.4, 14.9, 9.3, 12.7, 11.0],
        )
        .unwrap()
    }

    #[test]
    fn nb_log_pmf_geometric_case() {
        // NB(mu=1, alpha=1) is Geometric(1/2): P(0) = 1/2
        let v = nb_log_pmf(0, 1.0, 1.0).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-14, "{v}");
    }

    #[test]
    fn nb_log_pmf_zero_count_closed_form() {
        for (mu, alpha) in [(0.3, 0.7), (16.31, 5.037), (250.0, 2.0)] {
            let v = nb_log_pmf(0, mu, alpha).unwrap();
            let want = alpha * (alpha / (alpha + mu)).ln();
            assert!((v - want).abs() < 1e-12, "mu={mu} alpha={alpha}");
        }
    }

    #[test]
    fn nb_log_pmf_matches_high_precision_oracle() {
        // mpmath, 50 significant digits
        let v = nb_log_pmf(55, 16.31, 5.037).unwrap();
        let want = -8.952593142215671469621;
        assert!(((v - want) / want).abs() < 1e-13, "{v}");
    }

    #[test]
    fn nb_log_pmf_domain_errors() {
        assert!(nb_log_pmf(1, 0.0, 1.0).is_err());
        assert!(nb_log_pmf(1, -1.0, 1.0).is_err());
        assert!(nb_log_pmf(1, 1.0, 0.0).is_err());
        assert!(nb_log_pmf(1, 1.0, -2.0).is_err());
        assert!(nb_log_pmf(1, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn nb_pmf_sums_to_one() {
        // tail bound: mean + 60 * sd covers well past all mass we need
        for (mu, alpha) in [(1.0f64, 1.0f64), (16.3, 5.0), (100.0, 0.5)] {
            let sd = (mu + mu * mu / alpha).sqrt();
            let n_max = (mu + 60.0 * sd).ceil() as u64;
            let total: f64 = (0..=n_max)
                .map(|n| nb_log_pmf(n, mu, alpha).unwrap().exp())
                .sum();
            assert!(
                total > 0.9999 && total <= 1.0 + 1e-9,
                "mu={mu} alpha={alpha}: {total}"
            );
        }
    }

    #[test]
    fn nb_sampler_matches_moments() {
        // Var = mu + mu^2/alpha
        let (mu, alpha) = (16.3, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_negative_binomial(&mut rng, mu, alpha) as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let want_var = mu + mu * mu / alpha;
        assert!((mean - mu).abs() / mu < 0.01, "mean {mean}");
        assert!(
            (var - want_var).abs() / want_var < 0.03,
            "var {var} want {want_var}"
        );
    }

    #[test]
    fn linear_predictor_paper_scale() {
        let coeffs = Coefficients {
            beta0: -8.126,
            beta1: -0.074,
            beta2: 0.859,
        };
        let eta_solo = linear_predictor(&coeffs, false, 12.71);
        assert!((eta_solo - 2.79189).abs() < 1e-10);
        assert!((eta_solo.exp() - 16.3).abs() < 0.1);
        let eta_collab = linear_predictor(&coeffs, true, 12.71);
        assert!((eta_collab.exp() - 15.2).abs() < 0.1);
        let zero = Coefficients {
            beta0: 0.0,
            beta1: 0.0,
            beta2: 0.0,
        };
        assert_eq!(linear_predictor(&zero, true, 123.4), 0.0);
    }

    #[test]
    fn log_prior_reference_points() {
        // beta = 0, theta = 0 (alpha = 1): -1/8 plus zero Jacobian
        let p = UnconstrainedParams::new(0.0, 0.0, 0.0, 0.0);
        assert!((log_prior(&p) - (-0.125)).abs() < 1e-15);

        // doubling beta1 from 2 to 4 decreases the value by (16-4)/8 = 1.5
        let p2 = UnconstrainedParams::new(0.0, 2.0, 0.0, 0.0);
        let p4 = UnconstrainedParams::new(0.0, 4.0, 0.0, 0.0);
        assert!((log_prior(&p2) - log_prior(&p4) - 1.5).abs() < 1e-12);

        // mpmath oracle at beta=(0.3,-1.2,0.85), theta=0.4
        let p = UnconstrainedParams::new(0.3, -1.2, 0.85, 0.4);
        let want = -0.1597551160615584505724;
        assert!((log_prior(&p) - want).abs() < 1e-14);
    }

    #[test]
    fn prior_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-6;
        for _ in 0..100 {
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = UnconstrainedParams::from_slice(&q);
            let grad = grad_log_prior(&p);
            for j in 0..4 {
                let mut hi = q.clone();
                let mut lo = q.clone();
                hi[j] += h;
                lo[j] -= h;
                let fd = (log_prior(&UnconstrainedParams::from_slice(&hi))
                    - log_prior(&UnconstrainedParams::from_slice(&lo)))
                    / (2.0 * h);
                let denom = grad[j].abs().max(1e-8);
                assert!(
                    ((grad[j] - fd) / denom).abs() < 1e-8,
                    "component {j}: analytic {} fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn log_posterior_single_term_and_order_invariance() {
        let params = UnconstrainedParams::new(0.5, -0.1, 0.2, 0.3);
        let single = RegressionDataset::new(vec![0], vec![true], vec![1.5]).unwrap();
        let eta = linear_predictor(&params.coefficients(), true, 1.5);
        let want = nb_log_pmf(0, eta.exp(), params.alpha()).unwrap() + log_prior(&params);
        assert!((log_posterior(&params, &single) - want).abs() < 1e-12);

        let data = small_dataset();
        let mut rev = data.clone();
        rev.y.reverse();
        rev.x_collab.reverse();
        rev.x_log_streams.reverse();
        let a = log_posterior(&params, &data);
        let b = log_posterior(&params, &rev);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn posterior_gradient_matches_finite_differences() {
        let data = small_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..50 {
            let q = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..1.0),
                rng.random_range(-1.0..1.5),
            ];
            let params = UnconstrainedParams::from_slice(&q);
            let grad = grad_log_posterior(&params, &data).unwrap();
            let mut fd = [0.0; 4];
            for j in 0..4 {
                let mut hi = q;
                let mut lo = q;
                hi[j] += h;
                lo[j] -= h;
                fd[j] = (log_posterior(&UnconstrainedParams::from_slice(&hi), &data)
                    - log_posterior(&UnconstrainedParams::from_slice(&lo), &data))
                    / (2.0 * h);
            }
            let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let diff: f64 = grad
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(diff / norm.max(1.0) < 1e-6, "grad {grad:?} fd {fd:?}");
        }
    }

    #[test]
    fn beta_gradient_vanishes_where_mu_equals_y() {
        // With x_log_streams = ln(y), beta = (0, 0, 1) puts mu_i = y_i for
        // every observation. There d/d eta = y - (y+alpha) y/(alpha+y) = 0,
        // so the likelihood part of the beta-gradient is exactly zero and
        // only the prior terms -beta_j/4 remain.
        let y = vec![3u32, 10, 55, 120];
        let x: Vec<f64> = y.iter().map(|&v| (v as f64).ln()).collect();
        let data = RegressionDataset::new(y, vec![false, true, false, true], x).unwrap();
        let params = UnconstrainedParams::new(0.0, 0.0, 1.0, 5.0f64.ln());
        let grad = grad_log_posterior(&params, &data).unwrap();
        assert!(grad[0].abs() < 1e-10, "beta0 grad {}", grad[0]);
        assert!(grad[1].abs() < 1e-10, "beta1 grad {}", grad[1]);
        assert!((grad[2] - (-0.25)).abs() < 1e-10, "beta2 grad {}", grad[2]);
    }

    #[test]
    fn log_posterior_overflow_is_rejected_not_saturated() {
        let data = small_dataset();
        // beta2 = 10 with x ~ 14 pushes eta way past the clamp
        let params = UnconstrainedParams::new(0.0, 0.0, 10.0, 0.0);
        assert_eq!(log_posterior(&params, &data), f64::NEG_INFINITY);
        assert!(grad_log_posterior(&params, &data).is_none());
    }

    #[test]
    fn beta_hessian_is_negative_definite() {
        // finite-difference Hessian in the betas at random points; the NB
        // log link likelihood plus Normal prior is concave in beta
        let data = small_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-4;
        for _ in 0..20 {
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.3..0.8),
                rng.random_range(-0.5..1.0),
            ];
            let mut hess = [[0.0f64; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    let mut pp = q;
                    let mut pm = q;
                    let mut mp = q;
                    let mut mm = q;
                    pp[a] += h;
                    pp[b] += h;
                    pm[a] += h;
                    pm[b] -= h;
                    mp[a] -= h;
                    mp[b] += h;
                    mm[a] -= h;
                    mm[b] -= h;
                    let f =
                        |v: [f64; 4]| log_posterior(&UnconstrainedParams::from_slice(&v), &data);
                    hess[a][b] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
                }
            }
            // negative definite iff Cholesky of -H succeeds
            let mut neg = [[0.0f64; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    neg[a][b] = -hess[a][b];
                }
            }
            assert!(cholesky_3x3_succeeds(&neg), "H = {hess:?} at q = {q:?}");
        }
    }

    fn cholesky_3x3_succeeds(m: &[[f64; 3]; 3]) -> bool {
        let mut l = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut sum = m[i][j];
                for k in 0..j {
                    sum -= l[i][k] * l[j][k];
                }
                if i == j {
                    if sum <= 0.0 {
                        return false;
                    }
                    l[i][j] = sum.sqrt();
                } else {
                    l[i][j] = sum / l[j][j];
                }
            }
        }
        true
    }

    #[test]
    fn poisson_log_pmf_reference() {
        assert!((poisson_log_pmf(1, 1.0).unwrap() - (-1.0)).abs() < 1e-14);
        // mpmath oracle
        let v = poisson_log_pmf(10, 10.0).unwrap();
        assert!((v - (-2.078561643135058455046)).abs() < 1e-12);
        assert!(poisson_log_pmf(1, 0.0).is_err());
    }

    #[test]
    fn nb_approaches_poisson_for_large_alpha() {
        let nb = nb_log_pmf(10, 10.0, 1e8).unwrap();
        let pois = poisson_log_pmf(10, 10.0).unwrap();
        assert!((nb - pois).abs() < 1e-4, "nb {nb} pois {pois}");
    }

    #[test]
    fn poisson_gradient_matches_finite_differences() {
        let data = small_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..50 {
            let q = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..1.0),
            ];
            let coeffs = Coefficients {
                beta0: q[0],
                beta1: q[1],
                beta2: q[2],
            };
            let grad = grad_poisson_log_posterior(&coeffs, &data).unwrap();
            for j in 0..3 {
                let mut hi = q;
                let mut lo = q;
                hi[j] += h;
                lo[j] -= h;
                let fhi = poisson_log_posterior(
                    &Coefficients {
                        beta0: hi[0],
                        beta1: hi[1],
                        beta2: hi[2],
                    },
                    &data,
                );
                let flo = poisson_log_posterior(
                    &Coefficients {
                        beta0: lo[0],
                        beta1: lo[1],
                        beta2: lo[2],
                    },
                    &data,
                );
                let fd = (fhi - flo) / (2.0 * h);
                let denom = grad[j].abs().max(1.0);
                assert!(((grad[j] - fd) / denom).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn centered_posterior_reports_same_density_shape() {
        let data = small_dataset();
        let raw = NbPosterior::new(&data);
        let centered = NbPosterior::centered(&data);
        let offset = centered.x_offset;
        assert!((offset - data.mean_log_streams()).abs() < 1e-12);

        // same point expressed in both parameterizations gives the same
        // likelihood contribution; the prior differs through beta0 only
        let q_raw = [-2.0, -0.1, 0.5, 0.2];
        let q_cen = [q_raw[0] + q_raw[2] * offset, q_raw[1], q_raw[2], q_raw[3]];
        let (v_raw, _) = raw.eval(&q_raw).unwrap();
        let (v_cen, _) = centered.eval(&q_cen).unwrap();
        let prior_raw = -(q_raw[0] * q_raw[0]) / 8.0;
        let prior_cen = -(q_cen[0] * q_cen[0]) / 8.0;
        assert!(((v_raw - prior_raw) - (v_cen - prior_cen)).abs() < 1e-8);

        // uncentering a draw reverses the shift
        let mut draw = q_cen;
        centered.uncenter_draw(&mut draw);
        assert!((draw[0] - q_raw[0]).abs() < 1e-12);
    }

    #[test]
    fn dispersion_type_guards_domain() {
        assert!(Dispersion::new(1.5).is_ok());
        assert!(Dispersion::new(0.0).is_err());
        assert!(Dispersion::new(-1.0).is_err());
        assert!(Dispersion::new(f64::INFINITY).is_err());
        let p = UnconstrainedParams::new(0.0, 0.0, 0.0, 0.5f64.ln());
        assert!((p.alpha() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dataset_validation() {
        assert!(RegressionDataset::new(vec![1], vec![true], vec![1.0, 2.0]).is_err());
        assert!(RegressionDataset::new(vec![1], vec![true], vec![f64::NAN]).is_err());
        let d = RegressionDataset::new(
            vec![1, 2, 3, 4],
            vec![true, false, true, false],
            vec![4.0, 2.0, 3.0, 1.0],
        )
        .unwrap();
        // lower-middle order statistic for even n
        assert_eq!(d.median_log_streams().unwrap(), 2.0);
        assert_eq!(d.mean_log_streams(), 2.5);
    }
}
