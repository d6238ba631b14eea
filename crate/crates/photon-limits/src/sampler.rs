//! Photon time-stamp generation.
//!
//! Three samplers cover the flux models in this crate:
//!
//! * [`sample_gaussian`] — the two-step decomposition for Gaussian pulses:
//!   the total count splits into independent Poisson counts for signal and
//!   floor, then stamps are drawn from the pulse and the uniform floor.
//! * [`sample_inverse_cdf`] — arbitrary tabulated fluxes via a
//!   cumulative-sum lookup table with nearest-index inversion.
//! * [`sample_pileup`] — the three-component mixture with an exponential
//!   pile-up term.
//!
//! Sampling is pure given an RNG stream. Streams are derived from
//! `(seed, pixel, trial)` so parallel execution is order-independent and
//! repeat runs are byte-identical.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::grid::TimeGrid;
use crate::pulse::{FluxModel, ObservationWindow};
use crate::{Error, Result};

// ── seeded streams ────────────────────────────────────────────────────

/// A reproducible RNG handle: identical `(seed, stream)` produce identical
/// sequences across runs and thread schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededRng {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Derives a fresh stream from routing keys such as
    /// `(sweep tag, N, pixel, trial)`.
    pub fn derive(&self, parts: &[u64]) -> Self {
        let mut stream = splitmix64(self.stream ^ 0x243f6a8885a308d3);
        for &p in parts {
            stream = splitmix64(stream ^ p);
        }
        Self {
            seed: self.seed,
            stream,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

// ── time stamps ───────────────────────────────────────────────────────

/// Component tallies of a sampled stamp set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ComponentCounts {
    pub signal: usize,
    pub background: usize,
    pub pileup: usize,
}

/// One pixel's sorted photon arrival times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStamps {
    times: Vec<f64>,
    pub counts: Option<ComponentCounts>,
}

impl TimeStamps {
    pub fn from_times(mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        Self {
            times,
            counts: None,
        }
    }

    fn with_counts(mut times: Vec<f64>, counts: ComponentCounts) -> Self {
        times.sort_by(f64::total_cmp);
        Self {
            times,
            counts: Some(counts),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

// ── samplers ──────────────────────────────────────────────────────────

/// Draws a Poisson count with the given rate.
pub fn draw_count(rate: f64, rng: &mut impl Rng) -> Result<usize> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!(
            "Poisson rate must be nonnegative, got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(0);
    }
    let dist =
        Poisson::new(rate).map_err(|e| Error::Domain(format!("Poisson rate {rate}: {e}")))?;
    Ok(dist.sample(rng) as usize)
}

/// Two-step sampler for Gaussian pulses without pile-up:
/// `M_s ~ Poisson(alpha)` stamps from `N(tau, sigma_t^2)` plus
/// `M_b ~ Poisson(len * floor)` uniform stamps, merged and sorted.
///
/// Signal stamps falling outside the window are kept; the theory assumes
/// `tau` sits well inside, so their probability is negligible. Use
/// [`sample_gaussian_truncated`] for pathological configurations.
pub fn sample_gaussian(
    model: &FluxModel,
    tau: f64,
    window: &ObservationWindow,
    rng: &mut impl Rng,
) -> Result<TimeStamps> {
    sample_gaussian_impl(model, tau, window, false, rng)
}

/// [`sample_gaussian`] with signal stamps rejection-resampled into the
/// window.
pub fn sample_gaussian_truncated(
    model: &FluxModel,
    tau: f64,
    window: &ObservationWindow,
    rng: &mut impl Rng,
) -> Result<TimeStamps> {
    sample_gaussian_impl(model, tau, window, true, rng)
}

fn sample_gaussian_impl(
    model: &FluxModel,
    tau: f64,
    window: &ObservationWindow,
    truncate: bool,
    rng: &mut impl Rng,
) -> Result<TimeStamps> {
    let sigma_t = match model.pulse.sigma() {
        Some(s) => s,
        None => {
            return Err(Error::Unsupported(
                "two-step sampler needs a Gaussian pulse; use sample_inverse_cdf".into(),
            ))
        }
    };
    if model.pileup.is_some() {
        return Err(Error::Unsupported(
            "pile-up models must use sample_pileup".into(),
        ));
    }

    let m_s = draw_count(model.alpha, rng)?;
    let normal = Normal::new(tau, sigma_t).map_err(|e| Error::Domain(e.to_string()))?;
    let mut times = Vec::with_capacity(m_s);
    for _ in 0..m_s {
        let mut t = normal.sample(rng);
        if truncate {
            while !window.contains(t) {
                t = normal.sample(rng);
            }
        }
        times.push(t);
    }

    let m_b = draw_count(window.len() * model.effective_floor(), rng)?;
    for _ in 0..m_b {
        times.push(rng.random_range(window.t_min..window.t_max));
    }

    Ok(TimeStamps::with_counts(
        times,
        ComponentCounts {
            signal: m_s,
            background: m_b,
            pileup: 0,
        },
    ))
}

/// Cumulative-sum lookup table over a tabulated flux, inverted by a
/// nearest-index search (implemented as an `O(log K)` bisection).
#[derive(Debug, Clone)]
pub struct CdfTable {
    grid: TimeGrid,
    cdf: Vec<f64>,
    /// Trapezoidal mass of the flux over the grid; the Poisson rate.
    pub mass: f64,
}

impl CdfTable {
    pub fn new(grid: TimeGrid, flux: &[f64]) -> Result<Self> {
        if flux.len() != grid.len {
            return Err(Error::Domain("flux table length must match grid".into()));
        }
        if flux.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("flux must be finite and nonnegative".into()));
        }
        let mass = grid.trapezoid(flux);
        let total: f64 = flux.iter().sum();
        let mut cdf = Vec::with_capacity(flux.len());
        let mut acc = 0.0;
        for &v in flux {
            acc += v;
            cdf.push(if total > 0.0 { acc / total } else { 0.0 });
        }
        Ok(Self { grid, cdf, mass })
    }

    /// Grid time whose cumulative value is closest to `u`.
    pub fn invert(&self, u: f64) -> f64 {
        let mut lo = 0usize;
        let mut hi = self.cdf.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] < u {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        // lo is the first index with cdf >= u; the neighbor below may be closer
        if lo > 0 && (u - self.cdf[lo - 1]).abs() < (self.cdf[lo] - u).abs() {
            lo -= 1;
        }
        self.grid.t(lo)
    }

    /// Draws `M ~ Poisson(mass)` stamps from the tabulated distribution.
    pub fn draw(&self, rng: &mut impl Rng) -> Result<TimeStamps> {
        let m = draw_count(self.mass, rng)?;
        let mut times = Vec::with_capacity(m);
        for _ in 0..m {
            times.push(self.invert(rng.random::<f64>()));
        }
        Ok(TimeStamps::from_times(times))
    }
}

/// Inverse-CDF sampling from an arbitrary tabulated flux.
pub fn sample_inverse_cdf(grid: &TimeGrid, flux: &[f64], rng: &mut impl Rng) -> Result<TimeStamps> {
    CdfTable::new(grid.clone(), flux)?.draw(rng)
}

/// Three-component pile-up sampler: signal stamps from the Gaussian pulse,
/// exponential pile-up stamps rejection-truncated to the window, and a
/// uniform floor. Component rates are the window masses of the respective
/// flux terms, so the totals stay consistent with `pulse_energy`.
pub fn sample_pileup(
    model: &FluxModel,
    tau: f64,
    window: &ObservationWindow,
    rng: &mut impl Rng,
) -> Result<TimeStamps> {
    let pileup = model
        .pileup
        .ok_or_else(|| Error::Domain("model has no pile-up parameters".into()))?;
    let sigma_t = match model.pulse.sigma() {
        Some(s) => s,
        None => {
            return Err(Error::Unsupported(
                "pile-up sampler supports Gaussian pulses only".into(),
            ))
        }
    };

    let m_s = draw_count(model.alpha, rng)?;
    let normal = Normal::new(tau, sigma_t).map_err(|e| Error::Domain(e.to_string()))?;
    let mut times: Vec<f64> = (0..m_s).map(|_| normal.sample(rng)).collect();

    let m_p = draw_count(pileup.mass(window), rng)?;
    let exp = rand_distr::Exp::new(pileup.gamma).map_err(|e| Error::Domain(e.to_string()))?;
    for _ in 0..m_p {
        loop {
            let t = exp.sample(rng);
            if window.contains(t) {
                times.push(t);
                break;
            }
        }
    }

    let m_b = draw_count(window.len() * model.effective_floor(), rng)?;
    for _ in 0..m_b {
        times.push(rng.random_range(window.t_min..window.t_max));
    }

    Ok(TimeStamps::with_counts(
        times,
        ComponentCounts {
            signal: m_s,
            background: m_b,
            pileup: m_p,
        },
    ))
}

// ── stamp dump format ─────────────────────────────────────────────────

/// Writes the stamp dump: a `# seed=.. N=.. trial=..` header, then one
/// `pixel_index t` line per stamp.
pub fn write_stamp_dump(
    out: &mut impl Write,
    seed: u64,
    n: usize,
    trial: usize,
    stamps: &[(usize, f64)],
) -> Result<()> {
    writeln!(out, "# seed={seed} N={n} trial={trial}")?;
    for (pixel, t) in stamps {
        writeln!(out, "{pixel} {t}")?;
    }
    Ok(())
}

/// Reads a stamp dump back as `(pixel, time)` pairs, skipping headers.
pub fn read_stamp_dump(input: &mut impl BufRead) -> Result<Vec<(usize, f64)>> {
    let mut stamps = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(p), Some(t), None) => {
                let pixel = p
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad pixel {p:?}", lineno + 1)))?;
                let t = t
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad time {t:?}", lineno + 1)))?;
                stamps.push((pixel, t));
            }
            _ => {
                return Err(Error::Parse(format!(
                    "line {}: expected `pixel_index t`",
                    lineno + 1
                )))
            }
        }
    }
    Ok(stamps)
}
