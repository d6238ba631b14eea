//! Monte Carlo sweep harness: simulated MSE-vs-N curves with theory
//! overlays, empirical bias/variance decomposition, unit conversion, and
//! CSV/SVG output.
//!
//! Configs are flat `key = value` text (see [`ExperimentConfig::parse`]).
//! Trials are independent work units keyed by `(N, trial)`; per-pixel RNG
//! streams are derived from `(seed, tag, N, pixel, trial)`, so results do
//! not depend on scheduling or worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::estimator::{estimate, LikelihoodContext, Solver, SolverOptions};
use crate::grid::TimeGrid;
use crate::parallel::run_indexed;
use crate::pulse::{Background, FluxModel, ObservationWindow, PixelFlux, PulseShape};
use crate::sampler::{draw_count, CdfTable, SeededRng};
use crate::scene::{
    bin_scene, bin_scene_2d, effective_pulse_exact, gradient_2d, load_profile_1d,
    make_flat_profile, make_ramp_profile, make_sigmoid_profile, piecewise_reconstruction,
    piecewise_reconstruction_2d, ToaProfile, ToaProfile2d,
};
use crate::theory::{
    mse_1d, mse_1d_simplified, mse_2d, mse_numerical, MsePrediction, SimulatedPoint, SweepCurve,
    SweepPoint, VarianceAveraging,
};
use crate::{Error, Result};

use rand::Rng;
use rand_distr::{Distribution, Normal};

// stream-derivation tags per sweep family
const TAG_1D: u64 = 1;
const TAG_2D: u64 = 2;
const TAG_PILEUP: u64 = 3;
const TAG_FLOOR: u64 = 4;

// ── configuration ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSpec {
    Sigmoid,
    Ramp,
    Flat(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PulseSpec {
    Gaussian,
    File(PathBuf),
}

/// Sweep configuration; defaults follow the 1D experiment parameters
/// (unit-space grid 1/2048, window `[0, 10]` at 1/256, `sigma_t = 0.5`,
/// `alpha0 = 1e4`, zero floor, sigmoid scene).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dx: f64,
    pub dt: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub sigma_t: f64,
    pub alpha0: f64,
    pub lambda_b: f64,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub solver: Solver,
    pub scene: SceneSpec,
    pub pulse: PulseSpec,
    pub pileup_beta: Option<f64>,
    pub pileup_gamma: Option<f64>,
    pub dark_rate: Option<f64>,
    pub lambda_b_list: Option<Vec<f64>>,
    /// Initialize solvers at the true per-pixel delay (bound-evaluation
    /// protocol); otherwise the stamp sample mean is used.
    pub oracle_init: bool,
    /// Worker cap; `None` uses every core, `Some(1)` runs sequentially.
    pub workers: Option<usize>,
    /// Gaussian blur width (grid cells) applied to 2D maps before
    /// gradient estimation.
    pub blur_sigma: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dx: 1.0 / 2048.0,
            dt: 1.0 / 256.0,
            t_min: 0.0,
            t_max: 10.0,
            sigma_t: 0.5,
            alpha0: 1e4,
            lambda_b: 0.0,
            n_list: vec![8, 16, 32, 64, 128, 256],
            trials: 200,
            seed: 0,
            solver: Solver::Search,
            scene: SceneSpec::Sigmoid,
            pulse: PulseSpec::Gaussian,
            pileup_beta: None,
            pileup_gamma: None,
            dark_rate: None,
            lambda_b_list: None,
            oracle_init: true,
            workers: None,
            blur_sigma: 2.0,
        }
    }
}

fn parse_number(s: &str) -> Result<f64> {
    // fractions like 1/2048 keep config files readable
    if let Some((a, b)) = s.split_once('/') {
        let num: f64 = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad number {s:?}")))?;
        let den: f64 = b
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad number {s:?}")))?;
        if den == 0.0 {
            return Err(Error::Config(format!("zero denominator in {s:?}")));
        }
        Ok(num / den)
    } else {
        s.parse()
            .map_err(|_| Error::Config(format!("bad number {s:?}")))
    }
}

fn parse_list<T, F: Fn(&str) -> Result<T>>(s: &str, f: F) -> Result<Vec<T>> {
    s.split(',').map(|tok| f(tok.trim())).collect()
}

impl ExperimentConfig {
    /// Parses the flat `key = value` format. Keys are exactly the field
    /// names; unknown keys are errors. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dx" => cfg.dx = parse_number(value)?,
                "dt" => cfg.dt = parse_number(value)?,
                "t_min" => cfg.t_min = parse_number(value)?,
                "t_max" => cfg.t_max = parse_number(value)?,
                "sigma_t" => cfg.sigma_t = parse_number(value)?,
                "alpha0" => cfg.alpha0 = parse_number(value)?,
                "lambda_b" => cfg.lambda_b = parse_number(value)?,
                "n_list" => {
                    cfg.n_list = parse_list(value, |t| {
                        t.parse()
                            .map_err(|_| Error::Config(format!("bad pixel count {t:?}")))
                    })?
                }
                "trials" => {
                    cfg.trials = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad trials {value:?}")))?
                }
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad seed {value:?}")))?
                }
                "solver" => cfg.solver = value.parse()?,
                "scene" => {
                    cfg.scene = match value {
                        "sigmoid" => SceneSpec::Sigmoid,
                        "ramp" => SceneSpec::Ramp,
                        other => {
                            if let Some(v) = other.strip_prefix("flat:") {
                                SceneSpec::Flat(parse_number(v)?)
                            } else if let Some(p) = other.strip_prefix("file:") {
                                SceneSpec::File(PathBuf::from(p))
                            } else {
                                return Err(Error::Config(format!(
                                    "unknown scene {other:?} (sigmoid, ramp, flat:<tau>, file:<path>)"
                                )));
                            }
                        }
                    }
                }
                "pulse" => {
                    cfg.pulse = match value {
                        "gaussian" => PulseSpec::Gaussian,
                        other => {
                            if let Some(p) = other.strip_prefix("file:") {
                                PulseSpec::File(PathBuf::from(p))
                            } else {
                                return Err(Error::Config(format!(
                                    "unknown pulse {other:?} (gaussian, file:<path>)"
                                )));
                            }
                        }
                    }
                }
                "pileup_beta" => cfg.pileup_beta = Some(parse_number(value)?),
                "pileup_gamma" => cfg.pileup_gamma = Some(parse_number(value)?),
                "dark_rate" => cfg.dark_rate = Some(parse_number(value)?),
                "lambda_b_list" => cfg.lambda_b_list = Some(parse_list(value, parse_number)?),
                "oracle_init" => {
                    cfg.oracle_init = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad bool {value:?}")))?
                }
                "workers" => {
                    let w: usize = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad workers {value:?}")))?;
                    cfg.workers = if w == 0 { None } else { Some(w) };
                }
                "blur_sigma" => cfg.blur_sigma = parse_number(value)?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn window(&self) -> Result<ObservationWindow> {
        ObservationWindow::new(self.t_min, self.t_max)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::spanning(self.t_min, self.t_max, self.dt)
    }

    /// Spatial cell count `round(1/dx)`.
    pub fn cells(&self) -> usize {
        (1.0 / self.dx).round() as usize
    }

    pub fn build_profile(&self) -> Result<ToaProfile> {
        let cells = self.cells();
        match &self.scene {
            SceneSpec::Sigmoid => make_sigmoid_profile(cells),
            SceneSpec::Ramp => make_ramp_profile(cells),
            SceneSpec::Flat(tau) => make_flat_profile(cells, *tau),
            SceneSpec::File(path) => load_profile_1d(path),
        }
    }

    pub fn build_pulse(&self) -> Result<PulseShape> {
        match &self.pulse {
            PulseSpec::Gaussian => PulseShape::gaussian(self.sigma_t),
            PulseSpec::File(path) => PulseShape::load_tabulated(path),
        }
    }

    /// Scene-total flux model: `alpha0` and `lambda_b` over the unit space.
    pub fn scene_model(&self) -> Result<FluxModel> {
        self.scene_model_with_floor(self.lambda_b)
    }

    fn scene_model_with_floor(&self, lambda_b: f64) -> Result<FluxModel> {
        let mut model = FluxModel::new(self.alpha0, lambda_b, self.build_pulse()?)?;
        match (self.pileup_beta, self.pileup_gamma) {
            (Some(beta), Some(gamma)) => model = model.with_pileup(beta, gamma)?,
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "pileup_beta and pileup_gamma must be set together".into(),
                ))
            }
        }
        if let Some(rate) = self.dark_rate {
            // shared across whichever N is being swept; folded per pixel later
            model = model.with_dark(rate, 1)?;
        }
        Ok(model)
    }

    /// Checks consistency and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if !(self.dx > 0.0) || ((1.0 / self.dx) - self.cells() as f64).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "dx = {} must be the reciprocal of an integer cell count",
                self.dx
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.n_list.is_empty() {
            return Err(Error::Config("n_list must not be empty".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_list must be strictly ascending".into()));
        }
        let cells = self.cells();
        for &n in &self.n_list {
            if n == 0 || n > cells || !cells.is_multiple_of(n) {
                return Err(Error::Config(format!(
                    "pixel count {n} must divide the {cells}-cell grid"
                )));
            }
        }
        let window = self.window()?;
        self.time_grid()?;
        if !(self.sigma_t > 0.0) {
            return Err(Error::Config("sigma_t must be positive".into()));
        }
        if !(self.alpha0 >= 0.0) || !(self.lambda_b >= 0.0) {
            return Err(Error::Config(
                "alpha0 and lambda_b must be nonnegative".into(),
            ));
        }
        if !window.pulse_fits(self.sigma_t) {
            warnings.push(format!(
                "6 sigma_t = {} exceeds the window length {}; boundary terms are not negligible",
                6.0 * self.sigma_t,
                window.len()
            ));
        }
        if let Ok(profile) = self.build_profile() {
            let (lo, hi) = profile.min_max();
            if lo - 3.0 * self.sigma_t < window.t_min || hi + 3.0 * self.sigma_t > window.t_max {
                warnings.push(format!(
                    "scene delays [{lo}, {hi}] sit near the window edge; \
                     the well-inside-window assumption is strained"
                ));
            }
        }
        Ok(warnings)
    }
}

// ── empirical MSE and its decomposition ───────────────────────────────

/// One Monte Carlo trial at a fixed pixel count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub tau_hat: Vec<f64>,
    pub mse: f64,
    /// Pixels that recorded no stamps and fell back to the init value.
    pub empty_pixels: usize,
}

/// Grid integral of `(reconstruction - truth)^2` over the unit domain.
pub fn empirical_mse(reconstruction: &ToaProfile, truth: &ToaProfile) -> Result<f64> {
    reconstruction.mean_squared_difference(truth)
}

/// Across-trial decomposition of the empirical MSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalDecomposition {
    /// Integral of `(mean reconstruction - truth)^2`.
    pub bias_sim: f64,
    /// Mean integral of `(reconstruction - mean reconstruction)^2`.
    pub var_sim: f64,
    /// Mean per-trial empirical MSE; equals `bias_sim + var_sim` up to
    /// rounding because the cross term cancels identically.
    pub mean_mse: f64,
}

pub fn decompose_empirical(
    records: &[TrialRecord],
    truth: &ToaProfile,
    n: usize,
) -> Result<EmpiricalDecomposition> {
    if records.is_empty() {
        return Err(Error::Domain(
            "decomposition needs at least one trial".into(),
        ));
    }
    if records.iter().any(|r| r.n != n || r.tau_hat.len() != n) {
        return Err(Error::Config(
            "trial records do not match the pixel count".into(),
        ));
    }
    let trials = records.len() as f64;
    let mut mean_tau = vec![0.0; n];
    for r in records {
        for (m, &v) in mean_tau.iter_mut().zip(&r.tau_hat) {
            *m += v / trials;
        }
    }
    let bias_sim =
        piecewise_reconstruction(&mean_tau, truth.cells())?.mean_squared_difference(truth)?;
    // piecewise-constant fluctuation integrates to a per-pixel mean square
    let var_sim = records
        .iter()
        .map(|r| {
            r.tau_hat
                .iter()
                .zip(&mean_tau)
                .map(|(a, m)| (a - m) * (a - m))
                .sum::<f64>()
                / n as f64
        })
        .sum::<f64>()
        / trials;
    let mean_mse = records.iter().map(|r| r.mse).sum::<f64>() / trials;
    Ok(EmpiricalDecomposition {
        bias_sim,
        var_sim,
        mean_mse,
    })
}

// ── 1D sweeps ─────────────────────────────────────────────────────────

struct SimPointRaw {
    c_sq: f64,
    sim: SimulatedPoint,
}

/// Per-pixel sampling tables (inverse CDF of the exact effective pulse)
/// and estimator fluxes for an `n`-pixel binning.
struct PixelSetup {
    binned: crate::scene::BinnedScene,
    tables: Vec<CdfTable>,
    fluxes: Vec<PixelFlux>,
}

fn pixel_setup(
    config: &ExperimentConfig,
    profile: &ToaProfile,
    model: &FluxModel,
    n: usize,
) -> Result<PixelSetup> {
    let tgrid = config.time_grid()?;
    let binned = bin_scene(profile, model, n)?;
    let gaussian_pulse = model.pulse.sigma().is_some();

    let mut tables = Vec::with_capacity(n);
    let mut fluxes = Vec::with_capacity(n);
    for idx in 0..n {
        let eff = effective_pulse_exact(profile, model, n, idx, &tgrid)?;
        let (grid, flux_table) = eff.flux_table();
        tables.push(CdfTable::new(grid, &flux_table)?);
        let flux = if gaussian_pulse {
            PixelFlux::gaussian(
                model.alpha / n as f64,
                binned.sigma_n.as_ref().expect("gaussian binning")[idx],
                model.effective_floor() / n as f64,
            )?
        } else {
            eff.pixel_flux()
        };
        fluxes.push(flux);
    }
    Ok(PixelSetup {
        binned,
        tables,
        fluxes,
    })
}

/// Simulates one pixel count: stamps from the inverse CDF of each exact
/// effective pulse, ML estimation per pixel, piecewise reconstruction,
/// empirical MSE per trial.
fn simulate_1d_point(
    config: &ExperimentConfig,
    profile: &ToaProfile,
    model: &FluxModel,
    n: usize,
    tag: &[u64],
) -> Result<SimPointRaw> {
    let window = config.window()?;
    let tgrid = config.time_grid()?;
    let PixelSetup {
        binned,
        tables,
        fluxes,
    } = pixel_setup(config, profile, model, n)?;

    let base = SeededRng::new(config.seed);
    let solver = config.solver;
    let records: Vec<Result<TrialRecord>> = run_indexed(config.trials, config.workers, |trial| {
        let mut tau_hat = Vec::with_capacity(n);
        let mut empty = 0;
        for idx in 0..n {
            let mut parts = tag.to_vec();
            parts.extend([n as u64, idx as u64, trial as u64]);
            let mut rng = base.derive(&parts).rng();
            let stamps = tables[idx].draw(&mut rng)?;
            let init = if config.oracle_init {
                Some(binned.tau_n[idx])
            } else {
                None
            };
            if stamps.is_empty() {
                empty += 1;
                tau_hat.push(init.unwrap_or(0.5 * (window.t_min + window.t_max)));
                continue;
            }
            let mut opts = SolverOptions::for_grid_dt(tgrid.dt);
            opts.init = init;
            if config.oracle_init {
                let width = binned
                    .sigma_n
                    .as_ref()
                    .map(|s| s[idx])
                    .unwrap_or(config.sigma_t);
                opts.search_radius = Some(6.0 * width);
            }
            let ctx = LikelihoodContext::new(&fluxes[idx], stamps.times(), window)?;
            tau_hat.push(estimate(&ctx, solver, &opts)?.tau_hat);
        }
        let mse = piecewise_reconstruction(&tau_hat, profile.cells())?
            .mean_squared_difference(profile)?;
        Ok(TrialRecord {
            n,
            trial,
            tau_hat,
            mse,
            empty_pixels: empty,
        })
    });
    let records: Vec<TrialRecord> = records.into_iter().collect::<Result<_>>()?;

    let d = decompose_empirical(&records, profile, n)?;
    Ok(SimPointRaw {
        c_sq: binned.c_sq,
        sim: SimulatedPoint {
            mse: d.mean_mse,
            bias: d.bias_sim,
            variance: d.var_sim,
            trials: records.len(),
        },
    })
}

fn theory_1d(
    config: &ExperimentConfig,
    profile: &ToaProfile,
    model: &FluxModel,
    n: usize,
    c_sq: f64,
) -> Result<MsePrediction> {
    let closed_form_holds =
        model.pulse.sigma().is_some() && model.effective_floor() == 0.0 && model.pileup.is_none();
    if closed_form_holds {
        Ok(mse_1d(c_sq, config.sigma_t, config.alpha0, n))
    } else {
        mse_numerical(
            profile,
            model,
            n,
            &config.time_grid()?,
            &config.window()?,
            VarianceAveraging::PerPixel,
        )
    }
}

/// Theory prediction at a single pixel count (closed form when it holds,
/// numerical otherwise).
pub fn theory_point(config: &ExperimentConfig, n: usize) -> Result<MsePrediction> {
    let profile = config.build_profile()?;
    let model = config.scene_model()?;
    let binned = bin_scene(&profile, &model, n)?;
    theory_1d(config, &profile, &model, n, binned.c_sq)
}

/// Draws the exact stamps one sweep trial would see at pixel count `n`,
/// as `(pixel, time)` pairs ready for the stamp-dump format.
pub fn sample_one_trial(
    config: &ExperimentConfig,
    n: usize,
    trial: usize,
) -> Result<Vec<(usize, f64)>> {
    let profile = config.build_profile()?;
    let model = config.scene_model()?;
    let setup = pixel_setup(config, &profile, &model, n)?;
    let base = SeededRng::new(config.seed);
    let mut out = Vec::new();
    for idx in 0..n {
        let mut rng = base
            .derive(&[TAG_1D, n as u64, idx as u64, trial as u64])
            .rng();
        let stamps = setup.tables[idx].draw(&mut rng)?;
        out.extend(stamps.times().iter().map(|&t| (idx, t)));
    }
    Ok(out)
}

/// The 1D MSE-vs-N sweep: simulation plus the matching theory overlay
/// (closed form when it holds, numerical otherwise).
pub fn run_1d_sweep(config: &ExperimentConfig) -> Result<SweepCurve> {
    config.validate()?;
    if config.pileup_beta.is_some() {
        return Err(Error::Config(
            "pile-up models have their own three-component sampler; use run_pileup".into(),
        ));
    }
    let profile = config.build_profile()?;
    let model = config.scene_model()?;
    let mut points = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let raw = simulate_1d_point(config, &profile, &model, n, &[TAG_1D])?;
        let theory = theory_1d(config, &profile, &model, n, raw.c_sq)?;
        points.push(SweepPoint {
            theory,
            sim: Some(raw.sim),
        });
    }
    SweepCurve::new(points)
}

/// Full vs simplified theory overlays on one shared simulation.
pub struct AblationCurves {
    pub full: SweepCurve,
    pub simplified: SweepCurve,
}

pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationCurves> {
    config.validate()?;
    if config.lambda_b != 0.0
        || config.pileup_beta.is_some()
        || config.dark_rate.is_some()
        || config.pulse != PulseSpec::Gaussian
    {
        return Err(Error::Config(
            "the ablation compares closed forms; it needs a Gaussian pulse, \
             lambda_b = 0, and no pile-up or dark counts"
                .into(),
        ));
    }
    let profile = config.build_profile()?;
    let model = config.scene_model()?;
    let mut full = Vec::new();
    let mut simplified = Vec::new();
    for &n in &config.n_list {
        let raw = simulate_1d_point(config, &profile, &model, n, &[TAG_1D])?;
        full.push(SweepPoint {
            theory: mse_1d(raw.c_sq, config.sigma_t, config.alpha0, n),
            sim: Some(raw.sim),
        });
        simplified.push(SweepPoint {
            theory: mse_1d_simplified(raw.c_sq, config.sigma_t, config.alpha0, n),
            sim: Some(raw.sim),
        });
    }
    Ok(AblationCurves {
        full: SweepCurve::new(full)?,
        simplified: SweepCurve::new(simplified)?,
    })
}

/// One sweep per floor level in `lambda_b_list`, each with the numerical
/// theory overlay. The floor is a scene total: each pixel sees its `1/N`
/// share, mirroring the pile-up decomposition.
pub fn run_noise_floor_sweep(config: &ExperimentConfig) -> Result<Vec<(f64, SweepCurve)>> {
    config.validate()?;
    if config.pileup_beta.is_some() {
        return Err(Error::Config(
            "pile-up models have their own three-component sampler; use run_pileup".into(),
        ));
    }
    let levels = config
        .lambda_b_list
        .clone()
        .unwrap_or_else(|| vec![0.0, 10.0, 30.0]);
    let profile = config.build_profile()?;
    let tgrid = config.time_grid()?;
    let window = config.window()?;

    let mut curves = Vec::with_capacity(levels.len());
    for (li, &lambda_b) in levels.iter().enumerate() {
        let model = config.scene_model_with_floor(lambda_b)?;
        let mut points = Vec::with_capacity(config.n_list.len());
        for &n in &config.n_list {
            let raw = simulate_1d_point(config, &profile, &model, n, &[TAG_FLOOR, li as u64])?;
            let theory = mse_numerical(
                &profile,
                &model,
                n,
                &tgrid,
                &window,
                VarianceAveraging::PerPixel,
            )?;
            points.push(SweepPoint {
                theory,
                sim: Some(raw.sim),
            });
        }
        curves.push((lambda_b, SweepCurve::new(points)?));
    }
    Ok(curves)
}

// ── pile-up sweep ─────────────────────────────────────────────────────

/// Pile-up sweep: three-component sampling per pixel (exact signal
/// mixture, truncated exponential, uniform floor), ML estimation with the
/// oracle noise decomposition, numerical theory overlay.
pub fn run_pileup(config: &ExperimentConfig) -> Result<SweepCurve> {
    config.validate()?;
    let (beta, gamma) = match (config.pileup_beta, config.pileup_gamma) {
        (Some(b), Some(g)) => (b, g),
        _ => {
            return Err(Error::Config(
                "pile-up sweep needs pileup_beta and pileup_gamma".into(),
            ))
        }
    };
    if config.pulse != PulseSpec::Gaussian {
        return Err(Error::Unsupported(
            "pile-up sweep assumes a Gaussian pulse".into(),
        ));
    }
    let profile = config.build_profile()?;
    let model = config.scene_model()?;
    let window = config.window()?;
    let tgrid = config.time_grid()?;
    let pileup = model.pileup.expect("checked above");
    let pileup_mass = pileup.mass(&window);
    let sigma_t = config.sigma_t;

    let mut points = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let binned = bin_scene(&profile, &model, n)?;
        let sigma_n = binned.sigma_n.as_ref().expect("gaussian pulse").clone();
        let floor_pix = model.effective_floor() / n as f64;
        let fluxes: Vec<PixelFlux> = (0..n)
            .map(|idx| PixelFlux {
                alpha: config.alpha0 / n as f64,
                signal: PulseShape::Gaussian {
                    sigma_t: sigma_n[idx],
                },
                tau_ref: 0.0,
                background: Background::PileUp {
                    beta: beta / n as f64,
                    gamma,
                    floor: floor_pix,
                },
            })
            .collect();

        let base = SeededRng::new(config.seed);
        let records: Vec<Result<TrialRecord>> =
            run_indexed(config.trials, config.workers, |trial| {
                let mut tau_hat = Vec::with_capacity(n);
                let mut empty = 0;
                for idx in 0..n {
                    let mut rng = base
                        .derive(&[TAG_PILEUP, n as u64, idx as u64, trial as u64])
                        .rng();
                    let taus = profile.bin_values(n, idx);
                    let mut stamps = Vec::new();
                    // signal: exact mixture over the pixel's footprint
                    let m_s = draw_count(config.alpha0 / n as f64, &mut rng)?;
                    let normal = Normal::new(0.0, sigma_t).expect("positive sigma");
                    for _ in 0..m_s {
                        let cell = rng.random_range(0..taus.len());
                        stamps.push(taus[cell] + normal.sample(&mut rng));
                    }
                    // pile-up: truncated exponential
                    let m_p = draw_count(pileup_mass / n as f64, &mut rng)?;
                    let exp = rand_distr::Exp::new(gamma).expect("positive gamma");
                    for _ in 0..m_p {
                        loop {
                            let t = exp.sample(&mut rng);
                            if window.contains(t) {
                                stamps.push(t);
                                break;
                            }
                        }
                    }
                    // uniform floor
                    let m_b = draw_count(floor_pix * window.len(), &mut rng)?;
                    for _ in 0..m_b {
                        stamps.push(rng.random_range(window.t_min..window.t_max));
                    }

                    let init = if config.oracle_init {
                        Some(binned.tau_n[idx])
                    } else {
                        None
                    };
                    if stamps.is_empty() {
                        empty += 1;
                        tau_hat.push(init.unwrap_or(0.5 * (window.t_min + window.t_max)));
                        continue;
                    }
                    let mut opts = SolverOptions::for_grid_dt(tgrid.dt);
                    opts.init = init;
                    if config.oracle_init {
                        opts.search_radius = Some(6.0 * sigma_n[idx]);
                    }
                    let ctx = LikelihoodContext::new(&fluxes[idx], &stamps, window)?;
                    tau_hat.push(estimate(&ctx, config.solver, &opts)?.tau_hat);
                }
                let mse = piecewise_reconstruction(&tau_hat, profile.cells())?
                    .mean_squared_difference(&profile)?;
                Ok(TrialRecord {
                    n,
                    trial,
                    tau_hat,
                    mse,
                    empty_pixels: empty,
                })
            });
        let records: Vec<TrialRecord> = records.into_iter().collect::<Result<_>>()?;
        let d = decompose_empirical(&records, &profile, n)?;

        let theory = mse_numerical(
            &profile,
            &model,
            n,
            &tgrid,
            &window,
            VarianceAveraging::PerPixel,
        )?;
        points.push(SweepPoint {
            theory,
            sim: Some(SimulatedPoint {
                mse: d.mean_mse,
                bias: d.bias_sim,
                variance: d.var_sim,
                trials: records.len(),
            }),
        });
    }
    SweepCurve::new(points)
}

// ── 2D sweep ──────────────────────────────────────────────────────────

/// Square-array sweep on a depth map. Gaussian pulse with zero floor:
/// stamps come from the exact per-pixel mixture and the ML estimate is the
/// ensemble average. The map is blurred by `blur_sigma` cells first.
pub fn run_2d_sweep(config: &ExperimentConfig, map: &ToaProfile2d) -> Result<SweepCurve> {
    if config.lambda_b != 0.0 || config.pileup_beta.is_some() {
        return Err(Error::Unsupported(
            "the 2D fast path assumes a Gaussian pulse and zero floor".into(),
        ));
    }
    if config.trials == 0 || config.n_list.is_empty() {
        return Err(Error::Config(
            "2D sweep needs trials >= 1 and a nonempty n_list".into(),
        ));
    }
    let map = map.gaussian_blur(config.blur_sigma);
    let cells = map.cells();
    let field = gradient_2d(&map);
    let sigma_t = config.sigma_t;
    let base = SeededRng::new(config.seed);

    let mut points = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let binned = bin_scene_2d(&map, n)?;
        let dn = cells / n;
        let mu = config.alpha0 / (n * n) as f64;

        let trials: Vec<Result<(Vec<f64>, f64)>> =
            run_indexed(config.trials, config.workers, |trial| {
                let mut tau_hat = vec![0.0; n * n];
                for (pixel, slot) in tau_hat.iter_mut().enumerate() {
                    let mut rng = base
                        .derive(&[TAG_2D, n as u64, pixel as u64, trial as u64])
                        .rng();
                    let m = draw_count(mu, &mut rng)?;
                    if m == 0 {
                        *slot = binned.tau[pixel];
                        continue;
                    }
                    let (pr, pc) = (pixel / n, pixel % n);
                    let normal = Normal::new(0.0, sigma_t).expect("positive sigma");
                    let mut acc = 0.0;
                    for _ in 0..m {
                        let r = pr * dn + rng.random_range(0..dn);
                        let c = pc * dn + rng.random_range(0..dn);
                        acc += map.at(r, c) + normal.sample(&mut rng);
                    }
                    *slot = acc / m as f64;
                }
                let rec = piecewise_reconstruction_2d(&tau_hat, n, cells)?;
                let mse = rec.mean_squared_difference(&map)?;
                Ok((tau_hat, mse))
            });
        let trials: Vec<(Vec<f64>, f64)> = trials.into_iter().collect::<Result<_>>()?;

        // bias/variance decomposition around the across-trial mean
        let t = trials.len() as f64;
        let mut mean_tau = vec![0.0; n * n];
        for (tau_hat, _) in &trials {
            for (m, v) in mean_tau.iter_mut().zip(tau_hat) {
                *m += v / t;
            }
        }
        let bias_sim =
            piecewise_reconstruction_2d(&mean_tau, n, cells)?.mean_squared_difference(&map)?;
        let var_sim = trials
            .iter()
            .map(|(tau_hat, _)| {
                tau_hat
                    .iter()
                    .zip(&mean_tau)
                    .map(|(a, m)| (a - m) * (a - m))
                    .sum::<f64>()
                    / (n * n) as f64
            })
            .sum::<f64>()
            / t;
        let mean_mse = trials.iter().map(|(_, m)| m).sum::<f64>() / t;

        points.push(SweepPoint {
            theory: mse_2d(field.c_norm_sq, sigma_t, config.alpha0, n),
            sim: Some(SimulatedPoint {
                mse: mean_mse,
                bias: bias_sim,
                variance: var_sim,
                trials: trials.len(),
            }),
        });
    }
    SweepCurve::new(points)
}

// ── unit conversion ───────────────────────────────────────────────────

/// Physical description of a sensor and its numerical grid.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhysicalUnits {
    pub array_width_mm: Option<f64>,
    pub grid_points: Option<usize>,
    pub group_size: Option<usize>,
    pub window_ns: Option<f64>,
    pub time_points: Option<usize>,
    pub sigma_t_points: Option<f64>,
}

/// Derived grid/physical quantities; fields are present when the inputs
/// determine them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UnitConversion {
    /// One grid cell in micrometers.
    pub cell_um: Option<f64>,
    /// Super-pixel width in micrometers.
    pub super_pixel_um: Option<f64>,
    /// Boxcar stand-in width in grid cells: `group / sqrt(12)`.
    pub sigma_x_cells: Option<f64>,
    pub sigma_x_um: Option<f64>,
    /// `sigma_x` in unit space: `group / (grid sqrt(12))`.
    pub sigma_x_unit: Option<f64>,
    /// One time point in nanoseconds.
    pub dt_ns: Option<f64>,
    pub sigma_t_ns: Option<f64>,
    /// `6 sigma_t` in nanoseconds: the practical pulse width.
    pub pulse_width_ns: Option<f64>,
    pub pulse_width_points: Option<f64>,
}

pub fn convert_units(physical: &PhysicalUnits) -> UnitConversion {
    let mut out = UnitConversion::default();
    if let (Some(mm), Some(grid)) = (physical.array_width_mm, physical.grid_points) {
        let cell_um = mm * 1e3 / grid as f64;
        out.cell_um = Some(cell_um);
        if let Some(group) = physical.group_size {
            let cells = group as f64 / 12f64.sqrt();
            out.super_pixel_um = Some(group as f64 * cell_um);
            out.sigma_x_cells = Some(cells);
            out.sigma_x_um = Some(cells * cell_um);
            out.sigma_x_unit = Some(group as f64 / (grid as f64 * 12f64.sqrt()));
        }
    }
    if let (Some(ns), Some(points)) = (physical.window_ns, physical.time_points) {
        let dt_ns = ns / points as f64;
        out.dt_ns = Some(dt_ns);
        if let Some(sigma_pts) = physical.sigma_t_points {
            out.sigma_t_ns = Some(sigma_pts * dt_ns);
            out.pulse_width_points = Some(6.0 * sigma_pts);
            out.pulse_width_ns = Some(6.0 * sigma_pts * dt_ns);
        }
    }
    out
}

// ── CSV / SVG output ──────────────────────────────────────────────────

/// Sweep CSV: `N,bias_theory,var_theory,mse_theory,mse_sim,bias_sim,var_sim,trials,seed`.
pub fn sweep_to_csv(curve: &SweepCurve, seed: u64) -> String {
    let mut out =
        String::from("N,bias_theory,var_theory,mse_theory,mse_sim,bias_sim,var_sim,trials,seed\n");
    for p in curve.points() {
        let t = &p.theory;
        let _ = write!(
            out,
            "{},{:.9e},{:.9e},{:.9e},",
            t.n,
            t.bias,
            t.variance,
            t.total()
        );
        match &p.sim {
            Some(s) => {
                let _ = write!(
                    out,
                    "{:.9e},{:.9e},{:.9e},{}",
                    s.mse, s.bias, s.variance, s.trials
                );
            }
            None => out.push_str(",,,0"),
        }
        let _ = writeln!(out, ",{seed}");
    }
    out
}

/// Minimal static log-log line chart of theory vs simulation.
pub fn sweep_to_svg(curve: &SweepCurve, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;

    let pts = curve.points();
    let mut ys: Vec<f64> = pts.iter().map(|p| p.theory.total()).collect();
    ys.extend(pts.iter().filter_map(|p| p.sim.map(|s| s.mse)));
    ys.retain(|y| y.is_finite() && *y > 0.0);
    let xs: Vec<f64> = pts.iter().map(|p| p.theory.n as f64).collect();
    if ys.is_empty() || xs.is_empty() {
        return format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\"><text>{title}: no data</text></svg>"
        );
    }
    let (x0, x1) = (
        xs[0].log10(),
        xs[xs.len() - 1].log10().max(xs[0].log10() + 1e-9),
    );
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min).log10() - 0.05;
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).log10() + 0.05;
    let px = |n: f64| ML + (n.log10() - x0) / (x1 - x0) * (W - ML - MR);
    let py = |v: f64| H - MB - (v.log10() - ymin) / (ymax - ymin) * (H - MT - MB);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        W / 2.0
    );
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB,
        H - MB
    );
    for p in pts {
        let x = px(p.theory.n as f64);
        let _ = write!(
            svg,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            H - MB,
            H - MB + 5.0,
            H - MB + 18.0,
            p.theory.n
        );
    }
    let mut decade = ymin.ceil() as i64;
    while (decade as f64) < ymax {
        let y = py(10f64.powi(decade as i32));
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ML}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">1e{decade}</text>\n",
            ML - 5.0,
            ML - 8.0,
            y + 4.0
        );
        decade += 1;
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">N (pixels)</text>\n\
         <text x=\"16\" y=\"{}\" font-size=\"13\" transform=\"rotate(-90 16 {})\">MSE</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    );

    // theory polyline
    let line: Vec<String> = pts
        .iter()
        .map(|p| {
            format!(
                "{:.2},{:.2}",
                px(p.theory.n as f64),
                py(p.theory.total().max(1e-300))
            )
        })
        .collect();
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>",
        line.join(" ")
    );
    // simulation markers
    for p in pts {
        if let Some(s) = p.sim {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#d62728\"/>",
                px(p.theory.n as f64),
                py(s.mse.max(1e-300))
            );
        }
    }
    // legend
    let _ = write!(
        svg,
        "<line x1=\"{}\" y1=\"{MT}\" x2=\"{}\" y2=\"{MT}\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\
         <text x=\"{}\" y=\"{}\" font-size=\"12\">theory</text>\n\
         <circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#d62728\"/>\
         <text x=\"{}\" y=\"{}\" font-size=\"12\">simulation</text>\n</svg>\n",
        W - 180.0,
        W - 150.0,
        W - 144.0,
        MT + 4.0,
        W - 165.0,
        MT + 18.0,
        W - 144.0,
        MT + 22.0
    );
    svg
}
