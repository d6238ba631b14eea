//! Per-pixel maximum-likelihood time-of-arrival estimation.
//!
//! The estimate maximizes `L(tau) = sum_j log lambda(t_j; tau)` over the
//! candidate delay. Three interchangeable solvers are provided:
//!
//! * [`estimate_gradient`] — ascent on `L` with backtracking steps
//!   (analytic signal shapes only);
//! * [`estimate_search`] — derivative-free matched filter: coarse scan plus
//!   golden-section refinement, works for any flux form;
//! * [`estimate_zero`] — root of `dL/dtau` by safeguarded bisection/secant,
//!   falling back to the search solver when no sign change brackets a root.
//!
//! All solvers stop below a tenth of the temporal grid spacing; past that
//! point refinement is meaningless because the likelihood itself is only
//! resolved to the grid.

use rand::Rng;

use crate::pulse::{FluxModel, ObservationWindow, PixelFlux, PulseShape};
use crate::sampler::{sample_gaussian, sample_pileup};
use crate::{Error, Result};

/// Likelihood of one pixel's stamps under a candidate delay.
#[derive(Debug, Clone)]
pub struct LikelihoodContext<'a> {
    pub flux: &'a PixelFlux,
    pub stamps: &'a [f64],
    pub window: ObservationWindow,
}

impl<'a> LikelihoodContext<'a> {
    pub fn new(flux: &'a PixelFlux, stamps: &'a [f64], window: ObservationWindow) -> Result<Self> {
        if stamps.is_empty() {
            return Err(Error::Domain("estimation needs at least one stamp".into()));
        }
        Ok(Self {
            flux,
            stamps,
            window,
        })
    }

    fn stamp_mean(&self) -> f64 {
        self.stamps.iter().sum::<f64>() / self.stamps.len() as f64
    }
}

/// `L(tau)`; returns `-inf` when the flux vanishes at some stamp.
pub fn log_likelihood(ctx: &LikelihoodContext, tau: f64) -> f64 {
    let mut acc = 0.0;
    for &t in ctx.stamps {
        let lam = ctx.flux.flux(t, tau);
        if lam <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += lam.ln();
    }
    acc
}

/// One stamp's score `d log lambda / d tau`, analytic signals only.
///
/// With a zero background the Gaussian term simplifies to `(t - tau) /
/// sigma^2` exactly, which stays finite where the raw ratio would
/// underflow to 0/0.
fn score_term(flux: &PixelFlux, t: f64, tau: f64) -> Result<f64> {
    let sigma = match &flux.signal {
        PulseShape::Gaussian { sigma_t } => *sigma_t,
        PulseShape::Tabulated { .. } => {
            return Err(Error::Unsupported(
                "score requires an analytic signal shape".into(),
            ))
        }
    };
    let bg = flux.background.eval(t);
    let u = t - tau;
    if bg == 0.0 {
        if flux.alpha == 0.0 {
            return Ok(0.0);
        }
        return Ok(u / (sigma * sigma));
    }
    let s = flux.alpha * crate::pulse::gaussian_density(u, sigma);
    Ok(u / (sigma * sigma) * s / (s + bg))
}

/// `dL/dtau`.
pub fn dlog_likelihood(ctx: &LikelihoodContext, tau: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &t in ctx.stamps {
        acc += score_term(ctx.flux, t, tau)?;
    }
    Ok(acc)
}

// ── solvers ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Gradient,
    Search,
    Zero,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "search" => Ok(Self::Search),
            "zero" => Ok(Self::Zero),
            other => Err(Error::Config(format!(
                "unknown solver {other:?} (expected gradient, search, or zero)"
            ))),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gradient => "gradient",
            Self::Search => "search",
            Self::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Initial guess; defaults to the stamp sample mean. Oracle runs pass
    /// the true delay here.
    pub init: Option<f64>,
    /// Stop criterion on the delay: a tenth of the temporal grid spacing.
    pub tol: f64,
    pub max_iters: usize,
    /// Restrict the search to `init +/- radius` instead of the full window.
    /// Only sound when the init is trustworthy (oracle mode).
    pub search_radius: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            init: None,
            tol: (1.0 / 256.0) / 10.0,
            max_iters: 200,
            search_radius: None,
        }
    }
}

impl SolverOptions {
    /// Options with the stop criterion tied to a temporal grid spacing.
    pub fn for_grid_dt(dt: f64) -> Self {
        Self {
            tol: dt / 10.0,
            ..Self::default()
        }
    }

    pub fn with_init(mut self, tau0: f64) -> Self {
        self.init = Some(tau0);
        self
    }

    pub fn with_search_radius(mut self, r: f64) -> Self {
        self.search_radius = Some(r);
        self
    }
}

/// Result of an ML solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlEstimate {
    pub tau_hat: f64,
    pub solver: Solver,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the likelihood showed several near-tied modes; the reported
    /// mode is the one nearest the init.
    pub multimodal: bool,
    /// Set when the zero solver found no bracketing sign change and fell
    /// back to the search solver.
    pub fell_back: bool,
}

/// Dispatches to the chosen solver.
pub fn estimate(
    ctx: &LikelihoodContext,
    solver: Solver,
    opts: &SolverOptions,
) -> Result<MlEstimate> {
    match solver {
        Solver::Gradient => estimate_gradient(ctx, opts),
        Solver::Search => estimate_search(ctx, opts),
        Solver::Zero => estimate_zero(ctx, opts),
    }
}

/// Width scale of the signal; sets coarse-scan resolution and step sizes.
fn width_hint(flux: &PixelFlux) -> f64 {
    match &flux.signal {
        PulseShape::Gaussian { sigma_t } => *sigma_t,
        PulseShape::Tabulated { grid, values, .. } => {
            let mass: f64 = values.iter().sum();
            if mass <= 0.0 {
                return grid.dt;
            }
            let mean: f64 = grid.points().zip(values).map(|(t, v)| t * v).sum::<f64>() / mass;
            let var: f64 = grid
                .points()
                .zip(values)
                .map(|(t, v)| (t - mean) * (t - mean) * v)
                .sum::<f64>()
                / mass;
            var.sqrt().max(grid.dt)
        }
    }
}

/// Gradient ascent on `L` with a backtracking step.
pub fn estimate_gradient(ctx: &LikelihoodContext, opts: &SolverOptions) -> Result<MlEstimate> {
    if !ctx.flux.is_differentiable() {
        return Err(Error::Unsupported(
            "gradient solver needs an analytic signal; use the search solver".into(),
        ));
    }
    let sigma = width_hint(ctx.flux);
    let mut tau = opts.init.unwrap_or_else(|| ctx.stamp_mean());
    // natural step: sigma^2 / M makes the no-floor Gaussian case a Newton step
    let mut eta = sigma * sigma / ctx.stamps.len() as f64;
    let mut value = log_likelihood(ctx, tau);
    let mut converged = false;
    let mut iters = 0;

    for _ in 0..opts.max_iters {
        iters += 1;
        let g = dlog_likelihood(ctx, tau)?;
        let mut step = eta * g;
        let mut next = tau + step;
        let mut next_value = log_likelihood(ctx, next);
        let mut backtracks = 0;
        while next_value < value && backtracks < 60 {
            eta *= 0.5;
            step = eta * g;
            next = tau + step;
            next_value = log_likelihood(ctx, next);
            backtracks += 1;
        }
        tau = next;
        value = next_value;
        // a cleanly accepted step lets the step size recover, so a single
        // early overshoot cannot freeze the ascent below the tolerance
        if backtracks == 0 {
            eta *= 2.0;
            if step.abs() < opts.tol {
                converged = true;
                break;
            }
        }
    }

    Ok(MlEstimate {
        tau_hat: tau,
        solver: Solver::Gradient,
        iterations: iters,
        converged,
        multimodal: false,
        fell_back: false,
    })
}

/// Derivative-free matched filter: a coarse scan locates the best mode
/// (nearest the init under near-ties), then golden-section refines it.
pub fn estimate_search(ctx: &LikelihoodContext, opts: &SolverOptions) -> Result<MlEstimate> {
    let init = opts.init.unwrap_or_else(|| ctx.stamp_mean());
    let (lo, hi) = match opts.search_radius {
        Some(r) => (init - r, init + r),
        None => (ctx.window.t_min, ctx.window.t_max),
    };
    if !(hi > lo) {
        return Err(Error::Domain("empty search interval".into()));
    }

    // coarse grid fine enough to see the pulse, capped for wide windows
    let width = width_hint(ctx.flux);
    let step = (width / 2.0).max((hi - lo) / 400.0);
    let count = (((hi - lo) / step).ceil() as usize + 1).max(2);
    let mut best = (f64::NEG_INFINITY, init);
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let tau = lo + (hi - lo) * i as f64 / (count - 1) as f64;
        let v = log_likelihood(ctx, tau);
        values.push((tau, v));
        if v > best.0 {
            best = (v, tau);
        }
    }

    // near-tied local modes: keep the one closest to the init
    let mut candidates = Vec::new();
    for i in 0..values.len() {
        let (tau, v) = values[i];
        let left = if i > 0 {
            values[i - 1].1
        } else {
            f64::NEG_INFINITY
        };
        let right = if i + 1 < values.len() {
            values[i + 1].1
        } else {
            f64::NEG_INFINITY
        };
        if v >= left && v >= right && v > best.0 - 2.0 && v.is_finite() {
            candidates.push(tau);
        }
    }
    let coarse_step = (hi - lo) / (count - 1) as f64;
    let multimodal = candidates
        .iter()
        .any(|c| (c - best.1).abs() > 2.0 * coarse_step + opts.tol);
    let center = candidates
        .iter()
        .cloned()
        .min_by(|a, b| (a - init).abs().total_cmp(&(b - init).abs()))
        .unwrap_or(best.1);

    // golden-section refinement around the chosen mode
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut a = (center - coarse_step).max(lo);
    let mut b = (center + coarse_step).min(hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = log_likelihood(ctx, c);
    let mut fd = log_likelihood(ctx, d);
    let mut iters = count;
    while b - a > opts.tol {
        iters += 1;
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = log_likelihood(ctx, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = log_likelihood(ctx, d);
        }
        if iters > opts.max_iters + count + 200 {
            break;
        }
    }

    Ok(MlEstimate {
        tau_hat: 0.5 * (a + b),
        solver: Solver::Search,
        iterations: iters,
        converged: b - a <= opts.tol,
        multimodal,
        fell_back: false,
    })
}

/// Zero-crossing of `dL/dtau` by safeguarded bisection around the init.
pub fn estimate_zero(ctx: &LikelihoodContext, opts: &SolverOptions) -> Result<MlEstimate> {
    if !ctx.flux.is_differentiable() {
        return Err(Error::Unsupported(
            "zero solver needs an analytic signal; use the search solver".into(),
        ));
    }
    let init = opts.init.unwrap_or_else(|| ctx.stamp_mean());
    let width = width_hint(ctx.flux);

    // expand a bracket around the init until the score changes sign
    let mut h = width;
    let mut lo = init - h;
    let mut hi = init + h;
    let mut g_lo = dlog_likelihood(ctx, lo)?;
    let mut g_hi = dlog_likelihood(ctx, hi)?;
    let mut expansions = 0;
    while g_lo * g_hi > 0.0 && expansions < 40 {
        h *= 2.0;
        lo = (init - h).max(ctx.window.t_min - width);
        hi = (init + h).min(ctx.window.t_max + width);
        g_lo = dlog_likelihood(ctx, lo)?;
        g_hi = dlog_likelihood(ctx, hi)?;
        expansions += 1;
        if lo <= ctx.window.t_min - width && hi >= ctx.window.t_max + width {
            break;
        }
    }
    if g_lo * g_hi > 0.0 {
        // no root in reach; defer to the matched filter
        let mut est = estimate_search(ctx, opts)?;
        est.solver = Solver::Zero;
        est.fell_back = true;
        return Ok(est);
    }

    let mut iters = expansions;
    while hi - lo > opts.tol && iters < opts.max_iters + 200 {
        iters += 1;
        // secant candidate, safeguarded to the bracket interior
        let mid = {
            let denom = g_hi - g_lo;
            let s = if denom != 0.0 {
                (lo * g_hi - hi * g_lo) / denom
            } else {
                f64::NAN
            };
            if s.is_finite() && s > lo + 0.1 * (hi - lo) && s < hi - 0.1 * (hi - lo) {
                s
            } else {
                0.5 * (lo + hi)
            }
        };
        let g_mid = dlog_likelihood(ctx, mid)?;
        if g_lo * g_mid <= 0.0 {
            hi = mid;
            g_hi = g_mid;
        } else {
            lo = mid;
            g_lo = g_mid;
        }
    }

    Ok(MlEstimate {
        tau_hat: 0.5 * (lo + hi),
        solver: Solver::Zero,
        iterations: iters,
        converged: hi - lo <= opts.tol,
        multimodal: false,
        fell_back: false,
    })
}

// ── score diagnostics ─────────────────────────────────────────────────

/// Monte Carlo moments of the score `F_1 = dL/dtau` at the true delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStats {
    pub mean_f1: f64,
    pub var_f1: f64,
    pub trials: usize,
}

/// Samples `trials` stamp sets at delay `tau0` and returns the empirical
/// mean and variance of the score. The mean tends to zero and the variance
/// to the Fisher integral.
pub fn score_statistics(
    model: &FluxModel,
    tau0: f64,
    window: &ObservationWindow,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<ScoreStats> {
    let sigma = model
        .pulse
        .sigma()
        .ok_or_else(|| Error::Unsupported("score statistics need a Gaussian pulse".into()))?;
    let flux = PixelFlux {
        alpha: model.alpha,
        signal: PulseShape::gaussian(sigma)?,
        tau_ref: 0.0,
        background: match model.pileup {
            Some(p) => crate::pulse::Background::PileUp {
                beta: p.beta,
                gamma: p.gamma,
                floor: model.effective_floor(),
            },
            None => crate::pulse::Background::Constant(model.effective_floor()),
        },
    };

    let mut scores = Vec::with_capacity(trials);
    for _ in 0..trials {
        let stamps = if model.pileup.is_some() {
            sample_pileup(model, tau0, window, rng)?
        } else {
            sample_gaussian(model, tau0, window, rng)?
        };
        let mut f1 = 0.0;
        for &t in stamps.times() {
            f1 += score_term(&flux, t, tau0)?;
        }
        scores.push(f1);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok(ScoreStats {
        mean_f1: mean,
        var_f1: var,
        trials,
    })
}

// ── bootstrap ─────────────────────────────────────────────────────────

/// Variance of the mean-of-`K` estimator across bootstrap resamples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapResult {
    pub variance: f64,
    pub resamples: usize,
    pub k: usize,
}

/// Resamples `k` stamps with replacement, estimates by the simple average,
/// and returns the variance of the estimate across `resamples` rounds.
pub fn bootstrap_variance(
    stamps: &[f64],
    k: usize,
    resamples: usize,
    rng: &mut impl Rng,
) -> Result<BootstrapResult> {
    if stamps.is_empty() {
        return Err(Error::Domain("bootstrap needs at least one stamp".into()));
    }
    if k == 0 || resamples < 2 {
        return Err(Error::Domain(format!(
            "bootstrap needs k >= 1 and resamples >= 2, got k={k}, resamples={resamples}"
        )));
    }
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..k {
            acc += stamps[rng.random_range(0..stamps.len())];
        }
        means.push(acc / k as f64);
    }
    let n = means.len() as f64;
    let grand = means.iter().sum::<f64>() / n;
    let variance = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / n;
    Ok(BootstrapResult {
        variance,
        resamples,
        k,
    })
}
