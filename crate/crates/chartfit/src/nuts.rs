//! From-scratch No-U-Turn Sampler.
//!
//! Multinomial NUTS with the generalized U-turn criterion: leaves are
//! weighted by exp(-energy error), subtree proposals are drawn
//! multinomially, top-level subtree joins use progressive sampling biased
//! away from the initial point, and the U-turn check uses the momentum sum
//! of each subtree plus the cross-subtree checks the Stan sampler performs.
//!
//! Warmup follows the usual three-phase schedule: a fast initial buffer
//! (dual-averaging step-size adaptation only), expanding slow windows that
//! estimate a diagonal inverse mass matrix, and a fast terminal buffer.
//! Chains are reproducible: chain `c` draws from a ChaCha8 stream derived
//! from the run seed and `c`, so runs are bit-identical across platforms
//! and thread schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Energy error above which a transition is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Dual-averaging constants (gamma, t0, kappa).
const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;

/// Log density with gradient, evaluated by the sampler.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("p{i}")).collect()
    }

    /// Log density and gradient at `position`; `None` marks an invalid
    /// region (overflow, non-finite intermediates) that the sampler must
    /// reject.
    fn eval(&self, position: &[f64]) -> Option<(f64, Vec<f64>)>;
}

/// Sampler configuration. Defaults: 2 chains, 2000 warmup and 2000 kept
/// draws per chain, target acceptance 0.9, maximum tree depth 10.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_draws: usize,
    pub post_warmup_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            warmup_draws: 2000,
            post_warmup_draws: 2000,
            target_accept: 0.9,
            max_tree_depth: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::Config("chains must be >= 1".into()));
        }
        if self.post_warmup_draws < 1 {
            return Err(Error::Config("post_warmup_draws must be >= 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must be in (0, 1)".into()));
        }
        if self.max_tree_depth < 1 {
            return Err(Error::Config("max_tree_depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Step-size and mass-matrix adaptation state for one chain.
#[derive(Debug, Clone)]
pub struct AdaptationState {
    pub step_size: f64,
    mu: f64,
    h_bar: f64,
    log_step_avg: f64,
    count: u64,
    pub mass_inv: Vec<f64>,
    welford_count: u64,
    welford_mean: Vec<f64>,
    welford_m2: Vec<f64>,
}

impl AdaptationState {
    fn new(dim: usize, step_size: f64) -> Self {
        Self {
            step_size,
            mu: (10.0 * step_size).ln(),
            h_bar: 0.0,
            log_step_avg: 0.0,
            count: 0,
            mass_inv: vec![1.0; dim],
            welford_count: 0,
            welford_mean: vec![0.0; dim],
            welford_m2: vec![0.0; dim],
        }
    }

    fn restart_step_size(&mut self, step_size: f64) {
        self.step_size = step_size;
        self.mu = (10.0 * step_size).ln();
        self.h_bar = 0.0;
        self.log_step_avg = 0.0;
        self.count = 0;
    }

    fn update_step_size(&mut self, accept_stat: f64, target_accept: f64) {
        self.count += 1;
        let t = self.count as f64;
        let w = 1.0 / (t + DA_T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (target_accept - accept_stat);
        let log_step = self.mu - self.h_bar * t.sqrt() / DA_GAMMA;
        let decay = t.powf(-DA_KAPPA);
        self.log_step_avg = decay * log_step + (1.0 - decay) * self.log_step_avg;
        self.step_size = log_step.exp();
    }

    fn adapted_step_size(&self) -> f64 {
        if self.count == 0 {
            self.step_size
        } else {
            self.log_step_avg.exp()
        }
    }

    fn observe(&mut self, q: &[f64]) {
        self.welford_count += 1;
        let n = self.welford_count as f64;
        for i in 0..q.len() {
            let delta = q[i] - self.welford_mean[i];
            self.welford_mean[i] += delta / n;
            self.welford_m2[i] += delta * (q[i] - self.welford_mean[i]);
        }
    }

    /// Folds the accumulated window variance into the inverse mass diagonal
    /// with the shrink-to-unit regularization Stan uses, then resets the
    /// accumulators.
    fn update_mass(&mut self) {
        if self.welford_count >= 2 {
            let n = self.welford_count as f64;
            for i in 0..self.mass_inv.len() {
                let var = self.welford_m2[i] / (n - 1.0);
                let reg = n / (n + 5.0) * var + 1e-3 * (5.0 / (n + 5.0));
                self.mass_inv[i] = reg.max(1e-12);
            }
        }
        self.welford_count = 0;
        self.welford_mean.iter_mut().for_each(|v| *v = 0.0);
        self.welford_m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Warmup phase boundaries: [0, init) fast, [init, slow_end) expanding mass
/// windows closing at `window_ends`, [slow_end, warmup) fast.
#[derive(Debug, Clone)]
struct WarmupSchedule {
    init_end: usize,
    slow_end: usize,
    window_ends: Vec<usize>,
}

impl WarmupSchedule {
    fn new(warmup: usize) -> Self {
        const INIT: usize = 75;
        const TERM: usize = 50;
        const BASE: usize = 25;
        let (init_end, term, base) = if warmup >= INIT + TERM + BASE {
            (INIT, TERM, BASE)
        } else {
            let init = (warmup as f64 * 0.15).round() as usize;
            let term = (warmup as f64 * 0.10).round() as usize;
            let base = warmup.saturating_sub(init + term);
            (init, term, base)
        };
        let slow_end = warmup.saturating_sub(term);
        let mut window_ends = Vec::new();
        if base >= 10 {
            let mut pos = init_end;
            let mut size = base;
            loop {
                let end = pos + size;
                if end + 2 * size >= slow_end {
                    window_ends.push(slow_end);
                    break;
                }
                window_ends.push(end);
                pos = end;
                size *= 2;
            }
        }
        Self {
            init_end,
            slow_end,
            window_ends,
        }
    }

    fn in_slow_phase(&self, iter: usize) -> bool {
        iter >= self.init_end && iter < self.slow_end
    }
}

/// Per-draw sampler statistics.
#[derive(Debug, Clone, Copy)]
pub struct DrawStats {
    pub tree_depth: usize,
    pub divergent: bool,
    pub accept_stat: f64,
    pub energy: f64,
    pub n_leapfrog: usize,
}

/// Per-chain post-warmup statistics.
#[derive(Debug, Clone)]
pub struct ChainStats {
    pub step_size: f64,
    pub divergences: usize,
    pub tree_depths: Vec<u16>,
    pub energies: Vec<f64>,
    pub accept_stats: Vec<f64>,
    pub n_max_depth: usize,
    pub mass_inv: Vec<f64>,
}

/// Multi-chain posterior draws plus sampler statistics.
#[derive(Debug, Clone)]
pub struct Trace {
    pub param_names: Vec<String>,
    /// Indexed [chain][draw][parameter].
    pub draws: Vec<Vec<Vec<f64>>>,
    pub stats: Vec<ChainStats>,
}

impl Trace {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_draws(&self) -> usize {
        self.draws.first().map_or(0, |c| c.len())
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.param_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// One parameter's draws for one chain.
    pub fn chain_param(&self, chain: usize, param: usize) -> Vec<f64> {
        self.draws[chain].iter().map(|d| d[param]).collect()
    }

    /// One parameter's draws per chain.
    pub fn param_chains(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains())
            .map(|c| self.chain_param(c, param))
            .collect()
    }

    /// Pooled draws in chain-major order.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_chains() * self.n_draws());
        for chain in &self.draws {
            out.extend(chain.iter().map(|d| d[param]));
        }
        out
    }

    pub fn total_divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }
}

#[derive(Debug, Clone)]
struct PhasePoint {
    q: Vec<f64>,
    p: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

fn kinetic(p: &[f64], mass_inv: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(mass_inv)
        .map(|(pi, mi)| mi * pi * pi)
        .sum::<f64>()
}

fn hamiltonian(point: &PhasePoint, mass_inv: &[f64]) -> f64 {
    -point.logp + kinetic(&point.p, mass_inv)
}

/// One leapfrog step with (possibly negative) step `eps`: half momentum
/// kick, full position drift scaled by the inverse mass, half kick.
/// `None` signals a rejected evaluation (divergence).
fn leapfrog_step<T: Target + ?Sized>(
    start: &PhasePoint,
    eps: f64,
    target: &T,
    mass_inv: &[f64],
) -> Option<PhasePoint> {
    let dim = start.q.len();
    let mut p = vec![0.0; dim];
    let mut q = vec![0.0; dim];
    for i in 0..dim {
        p[i] = start.p[i] + 0.5 * eps * start.grad[i];
        q[i] = start.q[i] + eps * mass_inv[i] * p[i];
    }
    let (logp, grad) = target.eval(&q)?;
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    for i in 0..dim {
        p[i] += 0.5 * eps * grad[i];
    }
    Some(PhasePoint { q, p, logp, grad })
}

/// Result of one public leapfrog step.
#[derive(Debug, Clone)]
pub struct LeapfrogStep {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub gradient: Vec<f64>,
}

/// Velocity-Verlet step exposed for direct use; evaluates the target at the
/// start point first. `None` when either evaluation is rejected.
pub fn leapfrog<T: Target + ?Sized>(
    position: &[f64],
    momentum: &[f64],
    step: f64,
    target: &T,
    mass_inv: &[f64],
) -> Option<LeapfrogStep> {
    let (logp, grad) = target.eval(position)?;
    let start = PhasePoint {
        q: position.to_vec(),
        p: momentum.to_vec(),
        logp,
        grad,
    };
    leapfrog_step(&start, step, target, mass_inv).map(|pp| LeapfrogStep {
        position: pp.q,
        momentum: pp.p,
        log_density: pp.logp,
        gradient: pp.grad,
    })
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Generalized U-turn criterion: the trajectory spanning momenta `p_a` and
/// `p_b` with momentum sum `rho` has turned if either projection of rho on
/// the endpoint velocities is negative.
fn is_turning(p_a: &[f64], p_b: &[f64], rho: &[f64], mass_inv: &[f64]) -> bool {
    let dot_a: f64 = rho
        .iter()
        .zip(p_a)
        .zip(mass_inv)
        .map(|((r, p), m)| r * m * p)
        .sum();
    let dot_b: f64 = rho
        .iter()
        .zip(p_b)
        .zip(mass_inv)
        .map(|((r, p), m)| r * m * p)
        .sum();
    !(dot_a > 0.0) || !(dot_b > 0.0)
}

struct Tree {
    left: PhasePoint,
    right: PhasePoint,
    proposal: PhasePoint,
    log_sum_weight: f64,
    p_sum: Vec<f64>,
    divergent: bool,
    turning: bool,
}

/// U-turn checks for the union of two adjacent trees: the full span plus
/// the two cross-subtree spans ending at the junction momenta.
fn merged_turning(inner: &Tree, outer: &Tree, dir: i32, mass_inv: &[f64]) -> bool {
    let (far_in, junc_in, junc_out, far_out) = if dir > 0 {
        (&inner.left, &inner.right, &outer.left, &outer.right)
    } else {
        (&inner.right, &inner.left, &outer.right, &outer.left)
    };
    let dim = mass_inv.len();
    let mut rho = vec![0.0; dim];
    for i in 0..dim {
        rho[i] = inner.p_sum[i] + outer.p_sum[i];
    }
    if is_turning(&far_in.p, &far_out.p, &rho, mass_inv) {
        return true;
    }
    for i in 0..dim {
        rho[i] = inner.p_sum[i] + junc_out.p[i];
    }
    if is_turning(&far_in.p, &junc_out.p, &rho, mass_inv) {
        return true;
    }
    for i in 0..dim {
        rho[i] = outer.p_sum[i] + junc_in.p[i];
    }
    is_turning(&junc_in.p, &far_out.p, &rho, mass_inv)
}

struct TreeAccum {
    n_leapfrog: usize,
    sum_accept: f64,
}

fn build_leaf<T: Target + ?Sized>(
    target: &T,
    edge: &PhasePoint,
    dir: i32,
    eps: f64,
    mass_inv: &[f64],
    h0: f64,
    acc: &mut TreeAccum,
) -> Tree {
    acc.n_leapfrog += 1;
    match leapfrog_step(edge, dir as f64 * eps, target, mass_inv) {
        None => Tree {
            left: edge.clone(),
            right: edge.clone(),
            proposal: edge.clone(),
            log_sum_weight: f64::NEG_INFINITY,
            p_sum: vec![0.0; edge.q.len()],
            divergent: true,
            turning: false,
        },
        Some(point) => {
            let h = hamiltonian(&point, mass_inv);
            let energy_error = h - h0;
            let divergent = !energy_error.is_finite() || energy_error > DIVERGENCE_THRESHOLD;
            let log_weight = if divergent {
                f64::NEG_INFINITY
            } else {
                -energy_error
            };
            if energy_error.is_finite() {
                acc.sum_accept += (-energy_error.max(0.0)).exp();
            }
            Tree {
                left: point.clone(),
                right: point.clone(),
                proposal: point.clone(),
                p_sum: point.p.clone(),
                log_sum_weight: log_weight,
                divergent,
                turning: false,
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build_tree<T: Target + ?Sized>(
    target: &T,
    rng: &mut ChaCha8Rng,
    edge: &PhasePoint,
    depth: usize,
    dir: i32,
    eps: f64,
    mass_inv: &[f64],
    h0: f64,
    acc: &mut TreeAccum,
) -> Tree {
    if depth == 0 {
        return build_leaf(target, edge, dir, eps, mass_inv, h0, acc);
    }

    let mut inner = build_tree(target, rng, edge, depth - 1, dir, eps, mass_inv, h0, acc);
    if inner.divergent || inner.turning {
        return inner;
    }

    let next_edge = if dir > 0 {
        inner.right.clone()
    } else {
        inner.left.clone()
    };
    let outer = build_tree(
        target,
        rng,
        &next_edge,
        depth - 1,
        dir,
        eps,
        mass_inv,
        h0,
        acc,
    );
    if outer.divergent || outer.turning {
        inner.divergent = outer.divergent;
        inner.turning = outer.turning;
        return inner;
    }

    // multinomial selection between the two halves
    let total = log_add_exp(inner.log_sum_weight, outer.log_sum_weight);
    let take_outer = if total == f64::NEG_INFINITY {
        false
    } else {
        rng.random::<f64>().ln() < outer.log_sum_weight - total
    };
    let proposal = if take_outer {
        outer.proposal.clone()
    } else {
        inner.proposal.clone()
    };

    let turning = merged_turning(&inner, &outer, dir, mass_inv);
    let mut p_sum = inner.p_sum.clone();
    for i in 0..p_sum.len() {
        p_sum[i] += outer.p_sum[i];
    }
    let (left, right) = if dir > 0 {
        (inner.left, outer.right)
    } else {
        (outer.left, inner.right)
    };
    Tree {
        left,
        right,
        proposal,
        log_sum_weight: total,
        p_sum,
        divergent: false,
        turning,
    }
}

fn sample_momentum(rng: &mut ChaCha8Rng, mass_inv: &[f64]) -> Vec<f64> {
    mass_inv
        .iter()
        .map(|mi| {
            let z: f64 = rng.sample(StandardNormal);
            z / mi.sqrt()
        })
        .collect()
}

/// One NUTS transition from `state` (which must carry a finite density and
/// gradient). Returns the next state and the per-draw statistics.
fn transition<T: Target + ?Sized>(
    target: &T,
    rng: &mut ChaCha8Rng,
    state: &PhasePoint,
    eps: f64,
    mass_inv: &[f64],
    max_depth: usize,
) -> (PhasePoint, DrawStats) {
    let mut start = state.clone();
    start.p = sample_momentum(rng, mass_inv);
    let h0 = hamiltonian(&start, mass_inv);

    let mut tree = Tree {
        left: start.clone(),
        right: start.clone(),
        proposal: start.clone(),
        log_sum_weight: 0.0,
        p_sum: start.p.clone(),
        divergent: false,
        turning: false,
    };
    let mut acc = TreeAccum {
        n_leapfrog: 0,
        sum_accept: 0.0,
    };
    let mut depth = 0usize;
    let mut divergent = false;

    while depth < max_depth {
        let dir: i32 = if rng.random::<f64>() < 0.5 { -1 } else { 1 };
        let edge = if dir > 0 {
            tree.right.clone()
        } else {
            tree.left.clone()
        };
        let sub = build_tree(target, rng, &edge, depth, dir, eps, mass_inv, h0, &mut acc);
        if sub.divergent {
            divergent = true;
            break;
        }
        if sub.turning {
            break;
        }

        // progressive sampling biased toward the new subtree
        let log_ratio = sub.log_sum_weight - tree.log_sum_weight;
        if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
            tree.proposal = sub.proposal.clone();
        }
        depth += 1;

        let turned = merged_turning(&tree, &sub, dir, mass_inv);
        tree.log_sum_weight = log_add_exp(tree.log_sum_weight, sub.log_sum_weight);
        for i in 0..tree.p_sum.len() {
            tree.p_sum[i] += sub.p_sum[i];
        }
        if dir > 0 {
            tree.right = sub.right;
        } else {
            tree.left = sub.left;
        }
        if turned {
            break;
        }
    }

    let accept_stat = if acc.n_leapfrog > 0 {
        acc.sum_accept / acc.n_leapfrog as f64
    } else {
        0.0
    };
    let energy = hamiltonian(&tree.proposal, mass_inv);
    let stats = DrawStats {
        tree_depth: depth,
        divergent,
        accept_stat,
        energy,
        n_leapfrog: acc.n_leapfrog,
    };
    (tree.proposal, stats)
}

/// One NUTS transition from an arbitrary position, exposed for direct use
/// and tests. Fails if the density at `position` is not finite.
pub fn nuts_draw<T: Target + ?Sized>(
    position: &[f64],
    target: &T,
    step_size: f64,
    mass_inv: &[f64],
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, DrawStats)> {
    let (logp, grad) = target
        .eval(position)
        .filter(|(v, _)| v.is_finite())
        .ok_or_else(|| Error::Sampler("non-finite density at the initial position".into()))?;
    let state = PhasePoint {
        q: position.to_vec(),
        p: vec![0.0; position.len()],
        logp,
        grad,
    };
    let (next, stats) = transition(target, rng, &state, step_size, mass_inv, max_depth);
    Ok((next.q, stats))
}

/// Doubles/halves the step size until one leapfrog step crosses an
/// acceptance of 0.8, mirroring the usual reasonable-step-size search.
/// `initial` warm-starts the search (the previous adapted step at window
/// boundaries, 1.0 at chain start).
fn find_reasonable_step_size<T: Target + ?Sized>(
    target: &T,
    rng: &mut ChaCha8Rng,
    state: &PhasePoint,
    mass_inv: &[f64],
    initial: f64,
) -> Result<f64> {
    let threshold = 0.8f64.ln();
    let mut eps = if initial.is_finite() && initial > 0.0 {
        initial
    } else {
        1.0
    };
    let mut direction = 0i32;
    for _ in 0..100 {
        let mut point = state.clone();
        point.p = sample_momentum(rng, mass_inv);
        let h0 = hamiltonian(&point, mass_inv);
        let delta = match leapfrog_step(&point, eps, target, mass_inv) {
            Some(next) => h0 - hamiltonian(&next, mass_inv),
            None => f64::NEG_INFINITY,
        };
        let want_bigger = delta > threshold;
        match direction {
            0 => direction = if want_bigger { 1 } else { -1 },
            1 if !want_bigger => return Ok(eps),
            -1 if want_bigger => return Ok(eps),
            _ => {}
        }
        eps *= if direction == 1 { 2.0 } else { 0.5 };
        if eps > 1e7 {
            return Err(Error::Sampler(
                "no acceptably large step size; the posterior may be improper".into(),
            ));
        }
        if eps < 1e-12 {
            return Err(Error::Sampler(
                "no acceptably small step size; the posterior may be discontinuous".into(),
            ));
        }
    }
    Ok(eps)
}

/// Runs the configured chains (in parallel) from default initial positions:
/// zeros jittered uniformly in [-0.5, 0.5] per coordinate and chain.
pub fn run_chains<T: Target>(target: &T, config: &SamplerConfig) -> Result<Trace> {
    config.validate()?;
    let inits = (0..config.chains)
        .map(|c| {
            let mut rng = chain_rng(config.seed, c, true);
            for _ in 0..100 {
                let q: Vec<f64> = (0..target.dim())
                    .map(|_| rng.random_range(-0.5..0.5))
                    .collect();
                if matches!(target.eval(&q), Some((v, _)) if v.is_finite()) {
                    return Ok(q);
                }
            }
            Err(Error::Sampler(format!(
                "chain {c}: no finite initial position found after 100 jitter attempts"
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    run_chains_from(target, config, &inits)
}

/// Runs the configured chains from explicit initial positions.
pub fn run_chains_from<T: Target>(
    target: &T,
    config: &SamplerConfig,
    inits: &[Vec<f64>],
) -> Result<Trace> {
    config.validate()?;
    if inits.len() != config.chains {
        return Err(Error::Config(format!(
            "{} initial positions for {} chains",
            inits.len(),
            config.chains
        )));
    }
    let results: Vec<Result<(Vec<Vec<f64>>, ChainStats)>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_single_chain(target, config, &inits[c], c))
        .collect();

    let mut draws = Vec::with_capacity(config.chains);
    let mut stats = Vec::with_capacity(config.chains);
    for result in results {
        let (chain_draws, chain_stats) = result?;
        draws.push(chain_draws);
        stats.push(chain_stats);
    }
    for (c, chain) in draws.iter().enumerate() {
        if chain.iter().any(|d| d.iter().any(|v| !v.is_finite())) {
            return Err(Error::Sampler(format!(
                "chain {c} produced non-finite draws"
            )));
        }
    }
    Ok(Trace {
        param_names: target.param_names(),
        draws,
        stats,
    })
}

fn chain_rng(seed: u64, chain: usize, init_stream: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // streams 2c / 2c+1 keep init jitter independent of the chain draws
    rng.set_stream(2 * chain as u64 + init_stream as u64);
    rng
}

fn run_single_chain<T: Target + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    init: &[f64],
    chain: usize,
) -> Result<(Vec<Vec<f64>>, ChainStats)> {
    let mut rng = chain_rng(config.seed, chain, false);
    let (logp, grad) = target
        .eval(init)
        .filter(|(v, _)| v.is_finite())
        .ok_or_else(|| {
            Error::Sampler(format!(
                "chain {chain}: non-finite density at the initial position"
            ))
        })?;
    let mut state = PhasePoint {
        q: init.to_vec(),
        p: vec![0.0; init.len()],
        logp,
        grad,
    };

    let mut adapt = AdaptationState::new(target.dim(), 1.0);
    let schedule = WarmupSchedule::new(config.warmup_draws);
    if config.warmup_draws > 0 {
        let eps = find_reasonable_step_size(target, &mut rng, &state, &adapt.mass_inv, 1.0)?;
        adapt.restart_step_size(eps);
    }

    let mut warmup_divergences = 0usize;
    let mut window_cursor = 0usize;
    for iter in 0..config.warmup_draws {
        let (next, stats) = transition(
            target,
            &mut rng,
            &state,
            adapt.step_size,
            &adapt.mass_inv,
            config.max_tree_depth,
        );
        state = next;
        if stats.divergent {
            warmup_divergences += 1;
        }
        adapt.update_step_size(stats.accept_stat, config.target_accept);
        if schedule.in_slow_phase(iter) {
            adapt.observe(&state.q);
        }
        if window_cursor < schedule.window_ends.len()
            && iter + 1 == schedule.window_ends[window_cursor]
        {
            adapt.update_mass();
            let eps = find_reasonable_step_size(
                target,
                &mut rng,
                &state,
                &adapt.mass_inv,
                adapt.step_size,
            )?;
            adapt.restart_step_size(eps);
            window_cursor += 1;
        }
    }
    if config.warmup_draws > 0 && warmup_divergences == config.warmup_draws {
        return Err(Error::Sampler(format!(
            "chain {chain}: every warmup transition diverged; the step size never stabilized"
        )));
    }
    let step_size = adapt.adapted_step_size();

    let mut draws = Vec::with_capacity(config.post_warmup_draws);
    let mut chain_stats = ChainStats {
        step_size,
        divergences: 0,
        tree_depths: Vec::with_capacity(config.post_warmup_draws),
        energies: Vec::with_capacity(config.post_warmup_draws),
        accept_stats: Vec::with_capacity(config.post_warmup_draws),
        n_max_depth: 0,
        mass_inv: adapt.mass_inv.clone(),
    };
    for _ in 0..config.post_warmup_draws {
        let (next, stats) = transition(
            target,
            &mut rng,
            &state,
            step_size,
            &adapt.mass_inv,
            config.max_tree_depth,
        );
        state = next;
        draws.push(state.q.clone());
        chain_stats.tree_depths.push(stats.tree_depth as u16);
        chain_stats.energies.push(stats.energy);
        chain_stats.accept_stats.push(stats.accept_stat);
        if stats.divergent {
            chain_stats.divergences += 1;
        }
        if stats.tree_depth >= config.max_tree_depth {
            chain_stats.n_max_depth += 1;
        }
    }
    Ok((draws, chain_stats))
}

/// Normal likelihood with known observation SD and a Normal prior on the
/// mean: the conjugate model used to validate the sampler against a closed
/// form.
#[derive(Debug, Clone)]
pub struct NormalMeanModel {
    pub observations: Vec<f64>,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub obs_sd: f64,
}

impl NormalMeanModel {
    /// Closed-form posterior (mean, sd).
    pub fn analytic_posterior(&self) -> (f64, f64) {
        let n = self.observations.len() as f64;
        let prior_prec = 1.0 / (self.prior_sd * self.prior_sd);
        let obs_prec = 1.0 / (self.obs_sd * self.obs_sd);
        let prec = prior_prec + n * obs_prec;
        let sum: f64 = self.observations.iter().sum();
        let mean = (self.prior_mean * prior_prec + sum * obs_prec) / prec;
        (mean, prec.sqrt().recip())
    }
}

impl Target for NormalMeanModel {
    fn dim(&self) -> usize {
        1
    }

    fn param_names(&self) -> Vec<String> {
        vec!["mean".into()]
    }

    fn eval(&self, position: &[f64]) -> Option<(f64, Vec<f64>)> {
        let m = position[0];
        let prior_prec = 1.0 / (self.prior_sd * self.prior_sd);
        let obs_prec = 1.0 / (self.obs_sd * self.obs_sd);
        let mut value = -0.5 * prior_prec * (m - self.prior_mean).powi(2);
        let mut grad = -prior_prec * (m - self.prior_mean);
        for &y in &self.observations {
            value -= 0.5 * obs_prec * (y - m).powi(2);
            grad += obs_prec * (y - m);
        }
        Some((value, vec![grad]))
    }
}

/// Result of the conjugate-model validation run.
#[derive(Debug, Clone)]
pub struct ConjugateReport {
    pub sampled_mean: f64,
    pub sampled_sd: f64,
    pub analytic_mean: f64,
    pub analytic_sd: f64,
    pub mcse_mean: f64,
    pub mcse_sd: f64,
    pub ess_bulk: f64,
    pub pass: bool,
}

/// Samples the conjugate Normal-mean model and compares the posterior mean
/// and SD against the closed form, within 3 Monte Carlo standard errors.
pub fn conjugate_check(model: &NormalMeanModel, config: &SamplerConfig) -> Result<ConjugateReport> {
    let trace = run_chains(model, config)?;
    let pooled = trace.pooled(0);
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ess = crate::diagnostics::ess_bulk(&trace.param_chains(0))?.value;
    let (analytic_mean, analytic_sd) = model.analytic_posterior();
    let mcse_mean = sd / ess.sqrt();
    let mcse_sd = sd / (2.0 * ess).sqrt();
    let pass = (mean - analytic_mean).abs() <= 3.0 * mcse_mean
        && (sd - analytic_sd).abs() <= 3.0 * mcse_sd;
    Ok(ConjugateReport {
        sampled_mean: mean,
        sampled_sd: sd,
        analytic_mean,
        analytic_sd,
        mcse_mean,
        mcse_sd,
        ess_bulk: ess,
        pass,
    })
}
