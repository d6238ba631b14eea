//! Pulse shapes and return-flux models `lambda(t)`.
//!
//! The received flux at a pixel with delay `tau` is
//!
//! ```text
//! lambda(t) = alpha * s(t - tau) + beta*gamma*exp(-gamma*t) + lambda_b + lambda_dark/N
//! ```
//!
//! where `s` is the (unit-mass) pulse shape, the exponential term models
//! pile-up triggered by a strong background, and the constant terms form a
//! uniform noise floor. All types are immutable after construction and safe
//! to share across concurrent trial workers.

use std::path::Path;

use crate::grid::{finite_difference, TimeGrid};
use crate::{Error, Result};

const SQRT_TAU: f64 = 2.5066282746310002; // sqrt(2*pi)

/// Gaussian density `N(u | 0, sigma^2)`.
pub(crate) fn gaussian_density(u: f64, sigma: f64) -> f64 {
    let z = u / sigma;
    (-0.5 * z * z).exp() / (sigma * SQRT_TAU)
}

// ── pulse shapes ──────────────────────────────────────────────────────

/// Transmitted pulse shape `s(u)`, normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub enum PulseShape {
    /// Symmetric Gaussian with standard deviation `sigma_t`.
    Gaussian { sigma_t: f64 },
    /// Arbitrary shape tabulated on a uniform grid (pulse-local time).
    ///
    /// `renormalized` is set when the input table missed unit mass by more
    /// than the construction tolerance and was rescaled.
    Tabulated {
        grid: TimeGrid,
        values: Vec<f64>,
        renormalized: bool,
    },
}

/// Tabulated pulses are renormalized (with a flag) when their trapezoidal
/// mass misses 1 by more than this.
pub const NORMALIZATION_TOL: f64 = 1e-6;

impl PulseShape {
    pub fn gaussian(sigma_t: f64) -> Result<Self> {
        if !(sigma_t > 0.0) || !sigma_t.is_finite() {
            return Err(Error::Domain(format!(
                "sigma_t must be positive, got {sigma_t}"
            )));
        }
        Ok(Self::Gaussian { sigma_t })
    }

    /// Builds a tabulated pulse from samples on a uniform grid.
    ///
    /// Values must be nonnegative with positive total mass; tables whose
    /// trapezoidal mass misses 1 by more than [`NORMALIZATION_TOL`] are
    /// rescaled and flagged.
    pub fn tabulated(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len {
            return Err(Error::Domain("table length does not match grid".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(
                "pulse table must be finite and nonnegative".into(),
            ));
        }
        let mass = grid.trapezoid(&values);
        if !(mass > 0.0) {
            return Err(Error::Domain("pulse table has zero mass".into()));
        }
        if (mass - 1.0).abs() <= NORMALIZATION_TOL {
            Ok(Self::Tabulated {
                grid,
                values,
                renormalized: false,
            })
        } else {
            let values = values.iter().map(|v| v / mass).collect();
            Ok(Self::Tabulated {
                grid,
                values,
                renormalized: true,
            })
        }
    }

    /// Parses the two-column `t s(t)` text format (ascending, uniform t).
    pub fn from_two_column(text: &str) -> Result<Self> {
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (t, v) = match (it.next(), it.next(), it.next()) {
                (Some(t), Some(v), None) => (t, v),
                _ => {
                    return Err(Error::Parse(format!(
                        "line {}: expected `t s(t)`, got {line:?}",
                        lineno + 1
                    )))
                }
            };
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {s:?}", lineno + 1)))
            };
            ts.push(parse(t)?);
            vs.push(parse(v)?);
        }
        if ts.len() < 2 {
            return Err(Error::Parse("pulse table needs at least 2 rows".into()));
        }
        let dt = ts[1] - ts[0];
        if !(dt > 0.0) {
            return Err(Error::Parse("pulse grid must be strictly ascending".into()));
        }
        for w in ts.windows(2) {
            if (w[1] - w[0] - dt).abs() > 1e-6 * dt.max(1e-12) {
                return Err(Error::Parse("pulse grid must be uniformly spaced".into()));
            }
        }
        Self::tabulated(TimeGrid::new(ts[0], dt, ts.len())?, vs)
    }

    pub fn load_tabulated<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_two_column(&std::fs::read_to_string(path)?)
    }

    /// Pulse density `s(u)`. Tabulated shapes interpolate linearly and are
    /// zero outside their grid.
    pub fn density(&self, u: f64) -> f64 {
        match self {
            Self::Gaussian { sigma_t } => gaussian_density(u, *sigma_t),
            Self::Tabulated { grid, values, .. } => {
                if grid.contains(u) {
                    grid.interp_clamped(values, u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Pulse derivative `ds/du`.
    ///
    /// Analytic for Gaussian shapes; central finite differences on the grid
    /// for tabulated shapes (one-sided at the edges). Tabulated shapes
    /// reject `u` outside their grid.
    pub fn derivative(&self, u: f64) -> Result<f64> {
        match self {
            Self::Gaussian { sigma_t } => {
                Ok(-u / (sigma_t * sigma_t) * gaussian_density(u, *sigma_t))
            }
            Self::Tabulated { grid, values, .. } => {
                if !grid.contains(u) {
                    return Err(Error::Domain(format!(
                        "t={u} outside tabulated grid [{}, {}]",
                        grid.t0,
                        grid.t_end()
                    )));
                }
                let slopes = finite_difference(values, grid.dt);
                Ok(grid.interp_clamped(&slopes, u))
            }
        }
    }

    /// Standard deviation for Gaussian shapes.
    pub fn sigma(&self) -> Option<f64> {
        match self {
            Self::Gaussian { sigma_t } => Some(*sigma_t),
            Self::Tabulated { .. } => None,
        }
    }
}

// ── observation window ────────────────────────────────────────────────

/// The interval over which time stamps are recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationWindow {
    pub t_min: f64,
    pub t_max: f64,
}

impl ObservationWindow {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_max > t_min) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::Domain(format!("invalid window [{t_min}, {t_max}]")));
        }
        Ok(Self { t_min, t_max })
    }

    pub fn len(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    /// The theory assumes the pulse sits well inside the window; callers
    /// should warn (not reject) when `6 sigma_t` exceeds the window length.
    pub fn pulse_fits(&self, sigma_t: f64) -> bool {
        6.0 * sigma_t <= self.len()
    }
}

// ── flux model ────────────────────────────────────────────────────────

/// Exponential pile-up component `beta * gamma * exp(-gamma t)` for `t >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PileUp {
    /// Total pile-up mass on `[0, inf)`.
    pub beta: f64,
    /// Decay rate; the pile-up stamps follow `Exponential(gamma)`.
    pub gamma: f64,
}

impl PileUp {
    /// Flux density contributed at time `t`.
    pub fn flux(&self, t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else {
            self.beta * self.gamma * (-self.gamma * t).exp()
        }
    }

    /// Integrated pile-up mass over the window.
    pub fn mass(&self, window: &ObservationWindow) -> f64 {
        let a = window.t_min.max(0.0);
        let b = window.t_max.max(0.0);
        self.beta * ((-self.gamma * a).exp() - (-self.gamma * b).exp())
    }
}

/// Dark counts are folded into the floor as `rate / n_pixels`: the per-pixel
/// sensing area shrinks with the pixel count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkCount {
    pub rate: f64,
    pub n_pixels: usize,
}

/// Return-flux model `lambda(t) = alpha s(t - tau) + pile-up + floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxModel {
    /// Signal flux (expected signal photons over the window).
    pub alpha: f64,
    /// Ambient floor in photons per unit time.
    pub lambda_b: f64,
    pub pulse: PulseShape,
    pub pileup: Option<PileUp>,
    pub dark: Option<DarkCount>,
}

impl FluxModel {
    pub fn new(alpha: f64, lambda_b: f64, pulse: PulseShape) -> Result<Self> {
        if !(alpha >= 0.0) || !(lambda_b >= 0.0) {
            return Err(Error::Domain(format!(
                "alpha and lambda_b must be nonnegative, got alpha={alpha}, lambda_b={lambda_b}"
            )));
        }
        Ok(Self {
            alpha,
            lambda_b,
            pulse,
            pileup: None,
            dark: None,
        })
    }

    pub fn gaussian(alpha: f64, lambda_b: f64, sigma_t: f64) -> Result<Self> {
        Self::new(alpha, lambda_b, PulseShape::gaussian(sigma_t)?)
    }

    pub fn with_pileup(mut self, beta: f64, gamma: f64) -> Result<Self> {
        if !(beta >= 0.0) || !(gamma > 0.0) {
            return Err(Error::Domain(format!(
                "pile-up needs beta >= 0 and gamma > 0, got beta={beta}, gamma={gamma}"
            )));
        }
        self.pileup = Some(PileUp { beta, gamma });
        Ok(self)
    }

    pub fn with_dark(mut self, rate: f64, n_pixels: usize) -> Result<Self> {
        if !(rate >= 0.0) || n_pixels == 0 {
            return Err(Error::Domain(format!(
                "dark count needs rate >= 0 and n_pixels > 0, got rate={rate}, n_pixels={n_pixels}"
            )));
        }
        self.dark = Some(DarkCount { rate, n_pixels });
        Ok(self)
    }

    /// Uniform floor including the per-pixel dark-count share.
    pub fn effective_floor(&self) -> f64 {
        self.lambda_b + self.dark.map_or(0.0, |d| d.rate / d.n_pixels as f64)
    }

    /// Flux density `lambda(t)` for a return delayed by `tau`.
    pub fn eval_flux(&self, tau: f64, t: f64) -> f64 {
        let pileup = self.pileup.map_or(0.0, |p| p.flux(t));
        self.alpha * self.pulse.density(t - tau) + pileup + self.effective_floor()
    }

    /// Expected photon count `Q` over the window.
    ///
    /// The pulse is assumed to sit well inside the window, so its mass
    /// contributes exactly `alpha`; for the Gaussian no-pile-up case this is
    /// the familiar `Q = alpha + 2 T lambda_b`.
    pub fn pulse_energy(&self, window: &ObservationWindow) -> f64 {
        let pileup = self.pileup.map_or(0.0, |p| p.mass(window));
        self.alpha + window.len() * self.effective_floor() + pileup
    }
}

// ── effective per-pixel flux ──────────────────────────────────────────

/// Non-shifting part of an effective per-pixel flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    /// Uniform floor.
    Constant(f64),
    /// Analytic pile-up plus uniform floor; neither moves with `tau`.
    PileUp { beta: f64, gamma: f64, floor: f64 },
}

impl Background {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Self::Constant(floor) => floor,
            Self::PileUp { beta, gamma, floor } => {
                floor
                    + if t < 0.0 {
                        0.0
                    } else {
                        beta * gamma * (-gamma * t).exp()
                    }
            }
        }
    }

    pub fn floor(&self) -> f64 {
        match *self {
            Self::Constant(floor) | Self::PileUp { floor, .. } => floor,
        }
    }
}

/// The flux a single pixel sees, as a function of the candidate delay:
/// `lambda(t; tau) = alpha * s(t - tau) + background(t)`.
///
/// Gaussian signals shift analytically. Tabulated signals were built at a
/// reference delay `tau_ref` on an absolute time grid; shifting translates
/// the table by a whole number of grid indices (replicate padding at the
/// edges) and interpolates linearly at the query time, so the likelihood is
/// resolved to the precision of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFlux {
    pub alpha: f64,
    pub signal: PulseShape,
    /// Delay at which a tabulated signal was tabulated; unused for Gaussian.
    pub tau_ref: f64,
    pub background: Background,
}

impl PixelFlux {
    pub fn gaussian(alpha: f64, sigma: f64, floor: f64) -> Result<Self> {
        Ok(Self {
            alpha,
            signal: PulseShape::gaussian(sigma)?,
            tau_ref: 0.0,
            background: Background::Constant(floor),
        })
    }

    /// Signal density at `t` for candidate delay `tau` (without `alpha`).
    pub fn signal_density(&self, t: f64, tau: f64) -> f64 {
        match &self.signal {
            PulseShape::Gaussian { sigma_t } => gaussian_density(t - tau, *sigma_t),
            PulseShape::Tabulated { grid, values, .. } => {
                let shift = grid.dt * ((tau - self.tau_ref) / grid.dt).round();
                grid.interp_clamped(values, t - shift)
            }
        }
    }

    /// Flux density `lambda(t; tau)`.
    pub fn flux(&self, t: f64, tau: f64) -> f64 {
        self.alpha * self.signal_density(t, tau) + self.background.eval(t)
    }

    /// `d lambda / d tau` at `(t, tau)`; analytic signals only.
    pub fn flux_dtau(&self, t: f64, tau: f64) -> Result<f64> {
        match &self.signal {
            PulseShape::Gaussian { sigma_t } => {
                let u = t - tau;
                Ok(self.alpha * u / (sigma_t * sigma_t) * gaussian_density(u, *sigma_t))
            }
            PulseShape::Tabulated { .. } => Err(Error::Unsupported(
                "tabulated signals have no analytic derivative; use the search solver".into(),
            )),
        }
    }

    /// True when the signal shape admits analytic derivatives in `tau`.
    pub fn is_differentiable(&self) -> bool {
        matches!(self.signal, PulseShape::Gaussian { .. })
    }
}
