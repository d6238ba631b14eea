//! Ground-truth time-of-arrival profiles, gradients, pixel binning, and
//! effective per-pixel return pulses.
//!
//! Profiles sample `tau` on a fine grid of `K` cells over the unit domain,
//! with sample `k` at the cell midpoint `(k + 0.5) / K`. Pixels group whole
//! cells, so an `N`-pixel binning requires `N` to divide `K`. Spatial
//! integrals use the midpoint rule on this grid.
//!
//! The flux model handed to the binning functions carries *scene totals*:
//! `alpha` is the flux of the whole unit space and `lambda_b` its floor;
//! each of `N` pixels receives a `1/N` share of both.

use std::fmt::Write as _;
use std::path::Path;

use crate::grid::{finite_difference, TimeGrid};
use crate::pulse::{Background, FluxModel, PixelFlux, PulseShape};
use crate::{Error, Result};

// ── 1D profiles ───────────────────────────────────────────────────────

/// Ground-truth time of arrival sampled on a fine 1D grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToaProfile {
    values: Vec<f64>,
}

impl ToaProfile {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain("profile needs at least 2 samples".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("profile values must be finite".into()));
        }
        Ok(Self { values })
    }

    /// Samples `f` at the `cells` cell midpoints.
    pub fn from_fn(cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = 1.0 / cells as f64;
        Self::from_values((0..cells).map(|k| f((k as f64 + 0.5) * dx)).collect())
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sample position of cell `k`.
    pub fn x(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dx()
    }

    /// The `tau` samples of pixel `idx` under an `n`-pixel binning.
    pub fn bin_values(&self, n: usize, idx: usize) -> &[f64] {
        let dn = self.cells() / n;
        &self.values[idx * dn..(idx + 1) * dn]
    }

    /// Per-bin means of `tau` (the piecewise-constant L2 projection).
    pub fn bin_means(&self, n: usize) -> Result<Vec<f64>> {
        check_divides(self.cells(), n)?;
        let dn = self.cells() / n;
        Ok((0..n)
            .map(|i| self.bin_values(n, i).iter().sum::<f64>() / dn as f64)
            .collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Midpoint-rule integral of `(self - other)^2` over the unit domain.
    pub fn mean_squared_difference(&self, other: &ToaProfile) -> Result<f64> {
        if self.cells() != other.cells() {
            return Err(Error::Config(format!(
                "profile grids differ: {} vs {} cells",
                self.cells(),
                other.cells()
            )));
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.cells() as f64)
    }
}

/// The two-step scene with a smooth transition used throughout the sweeps.
pub fn sigmoid_tau(x: f64) -> f64 {
    4.0 / (1.0 + (-20.0 * (x - 0.5)).exp()) + 4.0
}

pub fn make_sigmoid_profile(cells: usize) -> Result<ToaProfile> {
    ToaProfile::from_fn(cells, sigmoid_tau)
}

pub fn make_ramp_profile(cells: usize) -> Result<ToaProfile> {
    ToaProfile::from_fn(cells, |x| x)
}

pub fn make_flat_profile(cells: usize, tau: f64) -> Result<ToaProfile> {
    ToaProfile::from_fn(cells, |_| tau)
}

// ── gradients ─────────────────────────────────────────────────────────

/// Per-sample slopes of a 1D profile plus their aggregate mean square.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub slopes: Vec<f64>,
    /// Grid mean of the squared slope (the fine-binning limit of the
    /// per-pixel aggregate `c^2`).
    pub c_sq: f64,
}

/// Central finite differences scaled by `1/dx` (one-sided at the ends).
pub fn gradient(profile: &ToaProfile) -> GradientField {
    let slopes = finite_difference(profile.values(), profile.dx());
    let c_sq = slopes.iter().map(|c| c * c).sum::<f64>() / slopes.len() as f64;
    GradientField { slopes, c_sq }
}

// ── binning ───────────────────────────────────────────────────────────

/// An `N`-pixel discretization of a 1D scene.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedScene {
    pub n: usize,
    /// Pixel midpoints `x_n = (2n + 1) / (2N)`.
    pub midpoints: Vec<f64>,
    /// `tau` at the grid sample nearest each midpoint.
    pub tau_n: Vec<f64>,
    /// Mean slope over each pixel.
    pub c_n: Vec<f64>,
    /// Gaussian stand-in for the boxcar pixel: `1 / (sqrt(12) N)`.
    pub sigma_x: f64,
    /// Effective pulse widths `sigma_n^2 = c_n^2 sigma_x^2 + sigma_t^2`
    /// (Gaussian pulses only).
    pub sigma_n: Option<Vec<f64>>,
    /// Aggregate `c^2 = mean(c_n^2)`.
    pub c_sq: f64,
}

fn check_divides(cells: usize, n: usize) -> Result<()> {
    if n == 0 || n > cells {
        return Err(Error::Config(format!(
            "pixel count {n} must be in 1..={cells} (grid resolution)"
        )));
    }
    if !cells.is_multiple_of(n) {
        return Err(Error::Config(format!(
            "pixel count {n} must divide the {cells}-cell grid"
        )));
    }
    Ok(())
}

/// Bins a scene into `n` pixels.
///
/// `model.alpha` is the total unit-space flux; it is not consumed here but
/// its pulse width fixes `sigma_n` when the pulse is Gaussian.
pub fn bin_scene(profile: &ToaProfile, model: &FluxModel, n: usize) -> Result<BinnedScene> {
    check_divides(profile.cells(), n)?;
    let cells = profile.cells();
    let dn = cells / n;
    let field = gradient(profile);
    let dx = profile.dx();

    let mut midpoints = Vec::with_capacity(n);
    let mut tau_n = Vec::with_capacity(n);
    let mut c_n = Vec::with_capacity(n);
    for i in 0..n {
        let x_mid = (2 * i + 1) as f64 / (2 * n) as f64;
        midpoints.push(x_mid);
        // nearest grid sample to the midpoint
        let k = ((x_mid / dx - 0.5).round() as usize).min(cells - 1);
        tau_n.push(profile.values()[k]);
        let c = field.slopes[i * dn..(i + 1) * dn].iter().sum::<f64>() / dn as f64;
        c_n.push(c);
    }

    let sigma_x = 1.0 / (12f64.sqrt() * n as f64);
    let c_sq = c_n.iter().map(|c| c * c).sum::<f64>() / n as f64;
    let sigma_n = model.pulse.sigma().map(|sigma_t| {
        c_n.iter()
            .map(|c| (c * c * sigma_x * sigma_x + sigma_t * sigma_t).sqrt())
            .collect()
    });

    Ok(BinnedScene {
        n,
        midpoints,
        tau_n,
        c_n,
        sigma_x,
        sigma_n,
        c_sq,
    })
}

// ── effective return pulses ───────────────────────────────────────────

/// Effective flux seen by one pixel: a tabulated signal plus uniform floor.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePulse {
    /// Normalized signal shape on the temporal grid (absolute time).
    pub shape: PulseShape,
    /// Delay the table corresponds to (the bin mean of `tau`).
    pub tau_ref: f64,
    /// Per-pixel signal mass.
    pub alpha: f64,
    /// Per-pixel uniform floor.
    pub floor: f64,
}

impl EffectivePulse {
    /// Total flux `lambda_n(t)` tabulated on the signal grid.
    pub fn flux_table(&self) -> (TimeGrid, Vec<f64>) {
        self.flux_table_with(&Background::Constant(self.floor))
    }

    /// Flux table with an alternative non-shifting background (pile-up).
    pub fn flux_table_with(&self, background: &Background) -> (TimeGrid, Vec<f64>) {
        match &self.shape {
            PulseShape::Tabulated { grid, values, .. } => {
                let table = grid
                    .points()
                    .zip(values)
                    .map(|(t, s)| self.alpha * s + background.eval(t))
                    .collect();
                (grid.clone(), table)
            }
            PulseShape::Gaussian { .. } => unreachable!("effective pulses are tabulated"),
        }
    }

    /// Likelihood-ready per-pixel flux with the pulse's own uniform floor.
    pub fn pixel_flux(&self) -> PixelFlux {
        self.pixel_flux_with(Background::Constant(self.floor))
    }

    pub fn pixel_flux_with(&self, background: Background) -> PixelFlux {
        PixelFlux {
            alpha: self.alpha,
            signal: self.shape.clone(),
            tau_ref: self.tau_ref,
            background,
        }
    }
}

/// Numerically integrates `lambda(x, t)` over pixel `idx`, producing the
/// exact effective return pulse on `tgrid`.
///
/// The signal mass comes out as `model.alpha / n` (the pixel's share of the
/// scene flux) up to quadrature error, and the floor as
/// `model.effective_floor() / n`. Pile-up terms are not baked into the
/// table; compose them through [`EffectivePulse::pixel_flux_with`].
pub fn effective_pulse_exact(
    profile: &ToaProfile,
    model: &FluxModel,
    n: usize,
    idx: usize,
    tgrid: &TimeGrid,
) -> Result<EffectivePulse> {
    check_divides(profile.cells(), n)?;
    if idx >= n {
        return Err(Error::Domain(format!(
            "pixel index {idx} out of range for n={n}"
        )));
    }
    let taus = profile.bin_values(n, idx);
    let dx = profile.dx();

    let mut signal = vec![0.0; tgrid.len];
    for (i, t) in tgrid.points().enumerate() {
        let mut acc = 0.0;
        for &tau in taus {
            acc += model.pulse.density(t - tau);
        }
        signal[i] = model.alpha * dx * acc;
    }
    let mass = tgrid.trapezoid(&signal);
    if !(mass > 0.0) {
        return Err(Error::Domain(
            "effective pulse has zero mass on the temporal grid; \
             is the pulse inside the window?"
                .into(),
        ));
    }
    let normalized: Vec<f64> = signal.iter().map(|v| v / mass).collect();
    let tau_ref = taus.iter().sum::<f64>() / taus.len() as f64;

    Ok(EffectivePulse {
        shape: PulseShape::tabulated(tgrid.clone(), normalized)?,
        tau_ref,
        alpha: mass,
        floor: model.effective_floor() / n as f64,
    })
}

/// Closed-form effective pulse for pixel `idx`:
/// `lambda_n(t) = (alpha/N) N(t | tau_n, sigma_n^2) + lambda_b/N`.
///
/// Gaussian scene pulses only; tabulated pulses must go through
/// [`effective_pulse_exact`].
pub fn effective_pulse_gaussian(
    binned: &BinnedScene,
    model: &FluxModel,
    idx: usize,
) -> Result<PixelFlux> {
    if idx >= binned.n {
        return Err(Error::Domain(format!(
            "pixel index {idx} out of range for n={}",
            binned.n
        )));
    }
    let sigma_n = match &binned.sigma_n {
        Some(s) => s[idx],
        None => {
            return Err(Error::Unsupported(
                "closed-form effective pulse needs a Gaussian scene pulse; \
                 use effective_pulse_exact for tabulated pulses"
                    .into(),
            ))
        }
    };
    PixelFlux::gaussian(
        model.alpha / binned.n as f64,
        sigma_n,
        model.effective_floor() / binned.n as f64,
    )
}

/// Piecewise-constant profile holding `tau_hat[i]` on pixel `i`.
pub fn piecewise_reconstruction(estimates: &[f64], cells: usize) -> Result<ToaProfile> {
    let n = estimates.len();
    check_divides(cells, n)?;
    let dn = cells / n;
    let mut values = Vec::with_capacity(cells);
    for &tau in estimates {
        values.extend(std::iter::repeat_n(tau, dn));
    }
    ToaProfile::from_values(values)
}

// ── 2D profiles ───────────────────────────────────────────────────────

/// Square 2D time-of-arrival map over `[0, 1]^2`, row-major, with sample
/// `(row, col)` at `((col + 0.5) / K, (row + 0.5) / K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToaProfile2d {
    values: Vec<f64>,
    cells: usize,
}

impl ToaProfile2d {
    pub fn from_values(values: Vec<f64>, cells: usize) -> Result<Self> {
        if cells < 2 || values.len() != cells * cells {
            return Err(Error::Domain(format!(
                "need a square map, got {} values for {cells}x{cells}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("map values must be finite".into()));
        }
        Ok(Self { values, cells })
    }

    pub fn from_fn(cells: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let h = 1.0 / cells as f64;
        let mut values = Vec::with_capacity(cells * cells);
        for row in 0..cells {
            let y = (row as f64 + 0.5) * h;
            for col in 0..cells {
                values.push(f((col as f64 + 0.5) * h, y));
            }
        }
        Self::from_values(values, cells)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cells + col]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean_squared_difference(&self, other: &ToaProfile2d) -> Result<f64> {
        if self.cells != other.cells {
            return Err(Error::Config("map grids differ".into()));
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.values.len() as f64)
    }

    /// Separable Gaussian blur with replicate edges; `sigma` in grid cells.
    /// Used to soften depth-map discontinuities before gradient estimation.
    pub fn gaussian_blur(&self, sigma_cells: f64) -> ToaProfile2d {
        if sigma_cells <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma_cells).ceil() as isize;
        let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
        for k in -radius..=radius {
            kernel.push((-0.5 * (k as f64 / sigma_cells).powi(2)).exp());
        }
        let norm: f64 = kernel.iter().sum();
        for w in &mut kernel {
            *w /= norm;
        }

        let k = self.cells as isize;
        let clamp = |i: isize| i.clamp(0, k - 1) as usize;
        let mut tmp = vec![0.0; self.values.len()];
        for row in 0..self.cells {
            for col in 0..k {
                let mut acc = 0.0;
                for (j, w) in kernel.iter().enumerate() {
                    acc += w * self.at(row, clamp(col + j as isize - radius));
                }
                tmp[row * self.cells + col as usize] = acc;
            }
        }
        let mut out = vec![0.0; self.values.len()];
        for row in 0..k {
            for col in 0..self.cells {
                let mut acc = 0.0;
                for (j, w) in kernel.iter().enumerate() {
                    acc += w * tmp[clamp(row + j as isize - radius) * self.cells + col];
                }
                out[row as usize * self.cells + col] = acc;
            }
        }
        ToaProfile2d {
            values: out,
            cells: self.cells,
        }
    }
}

/// Gradient field of a 2D map with the aggregate
/// `||c||^2 = integral of ||grad tau||^2` over the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField2d {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub c_norm_sq: f64,
}

pub fn gradient_2d(profile: &ToaProfile2d) -> GradientField2d {
    let k = profile.cells();
    let h = 1.0 / k as f64;
    let v = profile.values();
    let mut gx = vec![0.0; v.len()];
    let mut gy = vec![0.0; v.len()];
    for row in 0..k {
        for col in 0..k {
            let i = row * k + col;
            gx[i] = match col {
                0 => (v[i + 1] - v[i]) / h,
                c if c == k - 1 => (v[i] - v[i - 1]) / h,
                _ => (v[i + 1] - v[i - 1]) / (2.0 * h),
            };
            gy[i] = match row {
                0 => (v[i + k] - v[i]) / h,
                r if r == k - 1 => (v[i] - v[i - k]) / h,
                _ => (v[i + k] - v[i - k]) / (2.0 * h),
            };
        }
    }
    let c_norm_sq = gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).sum::<f64>() / v.len() as f64;
    GradientField2d { gx, gy, c_norm_sq }
}

/// Square `N x N` discretization of a 2D scene.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedScene2d {
    pub n: usize,
    /// `tau` at the sample nearest each pixel center, row-major.
    pub tau: Vec<f64>,
    /// Per-pixel squared gradient magnitude of the mean gradient.
    pub c_norm_sq_pixel: Vec<f64>,
    /// Spatial radius of the Gaussian pixel approximation `1/(sqrt(12) N)`.
    pub sigma_s: f64,
    /// Aggregate `||c||^2` over pixels.
    pub c_norm_sq: f64,
}

pub fn bin_scene_2d(profile: &ToaProfile2d, n: usize) -> Result<BinnedScene2d> {
    check_divides(profile.cells(), n)?;
    let k = profile.cells();
    let dn = k / n;
    let field = gradient_2d(profile);
    let h = 1.0 / k as f64;

    let mut tau = Vec::with_capacity(n * n);
    let mut c_norm_sq_pixel = Vec::with_capacity(n * n);
    for pr in 0..n {
        for pc in 0..n {
            let yc = (2 * pr + 1) as f64 / (2 * n) as f64;
            let xc = (2 * pc + 1) as f64 / (2 * n) as f64;
            let row = ((yc / h - 0.5).round() as usize).min(k - 1);
            let col = ((xc / h - 0.5).round() as usize).min(k - 1);
            tau.push(profile.at(row, col));

            let mut mx = 0.0;
            let mut my = 0.0;
            for r in pr * dn..(pr + 1) * dn {
                for c in pc * dn..(pc + 1) * dn {
                    mx += field.gx[r * k + c];
                    my += field.gy[r * k + c];
                }
            }
            let cnt = (dn * dn) as f64;
            mx /= cnt;
            my /= cnt;
            c_norm_sq_pixel.push(mx * mx + my * my);
        }
    }
    let c_norm_sq = c_norm_sq_pixel.iter().sum::<f64>() / (n * n) as f64;
    Ok(BinnedScene2d {
        n,
        tau,
        c_norm_sq_pixel,
        sigma_s: 1.0 / (12f64.sqrt() * n as f64),
        c_norm_sq,
    })
}

/// Piecewise-constant 2D map from row-major `n x n` estimates.
pub fn piecewise_reconstruction_2d(
    estimates: &[f64],
    n: usize,
    cells: usize,
) -> Result<ToaProfile2d> {
    if estimates.len() != n * n {
        return Err(Error::Config(format!(
            "expected {n}x{n} estimates, got {}",
            estimates.len()
        )));
    }
    check_divides(cells, n)?;
    let dn = cells / n;
    let mut values = vec![0.0; cells * cells];
    for row in 0..cells {
        for col in 0..cells {
            values[row * cells + col] = estimates[(row / dn) * n + col / dn];
        }
    }
    ToaProfile2d::from_values(values, cells)
}

/// Smooth synthetic depth map on `[10, 20]`-ish: a tilted plane with two
/// Gaussian hills. Stands in for the real depth maps of the 2D experiments.
pub fn make_synthetic_depth_map(cells: usize) -> Result<ToaProfile2d> {
    ToaProfile2d::from_fn(cells, |x, y| {
        let hill = |cx: f64, cy: f64, s: f64| {
            (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp()
        };
        14.0 + 3.0 * x + 2.0 * y + 3.0 * hill(0.35, 0.6, 0.15) - 2.5 * hill(0.75, 0.3, 0.1)
    })
}

// ── profile files ─────────────────────────────────────────────────────

/// Writes the `H W` header plus rows of space-separated values
/// (1D profiles use an `1 K` header).
pub fn profile_to_string(rows: usize, cols: usize, values: &[f64]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{rows} {cols}");
    for r in 0..rows {
        let row: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn save_profile_1d<P: AsRef<Path>>(profile: &ToaProfile, path: P) -> Result<()> {
    std::fs::write(
        path,
        profile_to_string(1, profile.cells(), profile.values()),
    )?;
    Ok(())
}

pub fn save_profile_2d<P: AsRef<Path>>(profile: &ToaProfile2d, path: P) -> Result<()> {
    let k = profile.cells();
    std::fs::write(path, profile_to_string(k, k, profile.values()))?;
    Ok(())
}

fn parse_profile_text(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty profile file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Parse(format!("bad header {header:?}")))
        })
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse(format!(
            "expected `H W` header, got {header:?}"
        )));
    };
    let mut values = Vec::with_capacity(rows * cols);
    for line in lines {
        for tok in line.split_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad value {tok:?}")))?,
            );
        }
    }
    if values.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {rows}x{cols} = {} values, got {}",
            rows * cols,
            values.len()
        )));
    }
    Ok((rows, cols, values))
}

pub fn load_profile_1d<P: AsRef<Path>>(path: P) -> Result<ToaProfile> {
    let (rows, _, values) = parse_profile_text(&std::fs::read_to_string(path)?)?;
    if rows != 1 {
        return Err(Error::Parse(format!(
            "expected `1 K` header for a 1D profile, got {rows} rows"
        )));
    }
    ToaProfile::from_values(values)
}

pub fn load_profile_2d<P: AsRef<Path>>(path: P) -> Result<ToaProfile2d> {
    let (rows, cols, values) = parse_profile_text(&std::fs::read_to_string(path)?)?;
    if rows != cols {
        return Err(Error::Config(format!(
            "2D scenes require square pixelization, got {rows}x{cols}"
        )));
    }
    ToaProfile2d::from_values(values, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: usize = 2048;

    fn default_model() -> FluxModel {
        FluxModel::gaussian(1e4, 0.0, 0.5).unwrap()
    }

    #[test]
    fn sigmoid_endpoints() {
        assert!((sigmoid_tau(0.5) - 6.0).abs() < 1e-12);
        assert!((sigmoid_tau(0.0) - 4.000181577).abs() < 1e-6);
        assert!((sigmoid_tau(1.0) - 7.999818423).abs() < 1e-6);
    }

    #[test]
    fn gradient_flat_and_ramp() {
        let flat = make_flat_profile(256, 5.0).unwrap();
        let g = gradient(&flat);
        assert_eq!(g.c_sq, 0.0);

        let ramp = make_ramp_profile(256).unwrap();
        let g = gradient(&ramp);
        assert!((g.c_sq - 1.0).abs() < 1e-12);
        assert!(g.slopes.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn gradient_sigmoid_peak_slope() {
        // analytic maximum slope 80 e^0 / (1 + e^0)^2 = 20 at x = 0.5
        let profile = make_sigmoid_profile(K).unwrap();
        let g = gradient(&profile);
        let max = g.slopes.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 20.0).abs() < 1e-3, "max slope {max}");
    }

    #[test]
    fn binning_flat_scene() {
        let profile = make_flat_profile(1024, 5.0).unwrap();
        let binned = bin_scene(&profile, &default_model(), 16).unwrap();
        let sn = binned.sigma_n.as_ref().unwrap();
        assert!(sn.iter().all(|s| (s - 0.5).abs() < 1e-12));
        assert_eq!(binned.c_sq, 0.0);
    }

    #[test]
    fn binning_sigma_x_conversion() {
        // 32 pixels on a 1024-cell grid: sigma_x = 32 / (1024 sqrt(12)) unit
        // space, i.e. 9.2376 grid cells
        let profile = make_sigmoid_profile(1024).unwrap();
        let binned = bin_scene(&profile, &default_model(), 32).unwrap();
        assert!((binned.sigma_x - 32.0 / (1024.0 * 12f64.sqrt())).abs() < 1e-15);
        let cells = binned.sigma_x * 1024.0;
        assert!((cells - 9.2376).abs() < 1e-3, "sigma_x = {cells} cells");
    }

    #[test]
    fn binning_boxcar_width_one() {
        // W = 1 boxcar (a single pixel): sigma_x = 1/sqrt(12)
        let profile = make_sigmoid_profile(64).unwrap();
        let binned = bin_scene(&profile, &default_model(), 1).unwrap();
        assert!((binned.sigma_x - 0.28867513459481287).abs() < 1e-12);
    }

    #[test]
    fn binning_rejects_bad_n() {
        let profile = make_sigmoid_profile(64).unwrap();
        assert!(bin_scene(&profile, &default_model(), 128).is_err());
        assert!(bin_scene(&profile, &default_model(), 48).is_err());
    }

    #[test]
    fn sigma_n_never_below_sigma_t() {
        let profile = make_sigmoid_profile(K).unwrap();
        for n in [8, 64, 256] {
            let binned = bin_scene(&profile, &default_model(), n).unwrap();
            assert!(binned.sigma_n.unwrap().iter().all(|s| *s >= 0.5));
        }
    }

    #[test]
    fn effective_pulse_flat_scene_recovers_shifted_gaussian() {
        let profile = make_flat_profile(512, 5.0).unwrap();
        let model = default_model();
        let tgrid = TimeGrid::spanning(0.0, 10.0, 1.0 / 256.0).unwrap();
        let eff = effective_pulse_exact(&profile, &model, 8, 3, &tgrid).unwrap();
        assert!((eff.alpha - 1e4 / 8.0).abs() / (1e4 / 8.0) < 1e-4);
        assert!((eff.tau_ref - 5.0).abs() < 1e-12);
        if let PulseShape::Tabulated { grid, values, .. } = &eff.shape {
            for (t, v) in grid.points().zip(values) {
                let expect = crate::pulse::gaussian_density(t - 5.0, 0.5);
                assert!((v - expect).abs() < 1e-4, "t={t}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn effective_pulse_ramp_second_moment() {
        // linear ramp with slope 1: second moment of the effective pulse is
        // c^2/(12 N^2) + sigma_t^2 (moment-matching oracle)
        let profile = make_ramp_profile(2048).unwrap();
        let mut model = default_model();
        model.alpha = 1.0;
        let n = 16;
        let tgrid = TimeGrid::spanning(-2.0, 3.0, 1.0 / 512.0).unwrap();
        let eff = effective_pulse_exact(&profile, &model, n, 7, &tgrid).unwrap();
        let (grid, _) = eff.flux_table();
        if let PulseShape::Tabulated { values, .. } = &eff.shape {
            let mean: f64 = grid.points().zip(values).map(|(t, v)| t * v).sum::<f64>() * grid.dt;
            let second: f64 = grid
                .points()
                .zip(values)
                .map(|(t, v)| (t - mean) * (t - mean) * v)
                .sum::<f64>()
                * grid.dt;
            let expect = 1.0 / (12.0 * (n * n) as f64) + 0.25;
            assert!(
                (second - expect).abs() / expect < 1e-3,
                "second moment {second} vs {expect}"
            );
        }
    }

    #[test]
    fn effective_pulse_gaussian_formula() {
        // c_n = 1, N = 8: sigma_n^2 = 1/768 + 0.25
        let profile = make_ramp_profile(1024).unwrap();
        let model = FluxModel::gaussian(800.0, 0.0, 0.5).unwrap();
        let binned = bin_scene(&profile, &model, 8).unwrap();
        let sn = &binned.sigma_n.as_ref().unwrap()[4];
        assert!((sn * sn - (1.0 / 768.0 + 0.25)).abs() < 1e-9);

        let flux = effective_pulse_gaussian(&binned, &model, 4).unwrap();
        assert!((flux.alpha - 100.0).abs() < 1e-12);
        // signal mass over t integrates to alpha (Gaussian normalization)
        let tgrid = TimeGrid::spanning(-10.0, 10.0, 0.01).unwrap();
        let vals: Vec<f64> = tgrid.points().map(|t| flux.flux(t, 0.5)).collect();
        assert!((tgrid.trapezoid(&vals) - 100.0).abs() < 1e-6);
    }

    #[test]
    fn effective_pulse_gaussian_rejects_tabulated() {
        let grid = TimeGrid::spanning(-3.0, 3.0, 0.01).unwrap();
        let vals: Vec<f64> = grid
            .points()
            .map(|t| crate::pulse::gaussian_density(t, 0.5))
            .collect();
        let model = FluxModel::new(1e4, 0.0, PulseShape::tabulated(grid, vals).unwrap()).unwrap();
        let profile = make_sigmoid_profile(512).unwrap();
        let binned = bin_scene(&profile, &model, 8).unwrap();
        assert!(matches!(
            effective_pulse_gaussian(&binned, &model, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn exact_vs_gaussian_effective_pulse_l1() {
        // Approximations 1-3: for smooth scenes and N >= 16 the signal parts
        // agree within 5% of the signal mass in L1 (2% at N = 64, n = 31).
        let profile = make_sigmoid_profile(K).unwrap();
        let model = default_model();
        let tgrid = TimeGrid::spanning(0.0, 10.0, 1.0 / 256.0).unwrap();
        for (n, tol) in [(16usize, 0.05), (64, 0.02)] {
            let binned = bin_scene(&profile, &model, n).unwrap();
            let idx = n / 2 - 1;
            let exact = effective_pulse_exact(&profile, &model, n, idx, &tgrid).unwrap();
            let gauss = effective_pulse_gaussian(&binned, &model, idx).unwrap();
            let l1: f64 = match &exact.shape {
                PulseShape::Tabulated { grid, values, .. } => {
                    grid.points()
                        .zip(values)
                        .map(|(t, v)| {
                            (exact.alpha * v
                                - gauss.alpha * gauss.signal_density(t, binned.tau_n[idx]))
                            .abs()
                        })
                        .sum::<f64>()
                        * grid.dt
                }
                _ => unreachable!(),
            };
            let rel = l1 / exact.alpha;
            assert!(rel < tol, "N={n}: L1/mass = {rel:.4} >= {tol}");
        }
    }

    #[test]
    fn reconstruction_constant_and_exact() {
        let rec = piecewise_reconstruction(&[4.2], 64).unwrap();
        assert!(rec.values().iter().all(|v| *v == 4.2));

        let flat = make_flat_profile(64, 4.2).unwrap();
        assert_eq!(rec.mean_squared_difference(&flat).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_ramp_integrated_error() {
        // midpoint estimates on tau(x) = x: integrated squared error is
        // 1/(12 N^2), up to the 1/dN^2 midpoint-rule factor
        let cells = 2048;
        let ramp = make_ramp_profile(cells).unwrap();
        for n in [8usize, 32] {
            let mids: Vec<f64> = (0..n)
                .map(|i| (2 * i + 1) as f64 / (2 * n) as f64)
                .collect();
            let rec = piecewise_reconstruction(&mids, cells).unwrap();
            let mse = rec.mean_squared_difference(&ramp).unwrap();
            let expect = 1.0 / (12 * n * n) as f64;
            let dn = (cells / n) as f64;
            assert!(
                (mse - expect).abs() / expect < 2.0 / (dn * dn) + 1e-9,
                "n={n}: {mse} vs {expect}"
            );
        }
    }

    #[test]
    fn gradient_2d_separable_additivity() {
        // separable tau(x, y) = f(x) + g(y): 2D aggregate splits into the
        // two 1D aggregates, and the binned bias adds accordingly
        let cells = 256;
        let map = ToaProfile2d::from_fn(cells, |x, y| sigmoid_tau(x) + 0.5 * y).unwrap();
        let g2 = gradient_2d(&map);
        let gx = gradient(&make_sigmoid_profile(cells).unwrap());
        let expect = gx.c_sq + 0.25;
        assert!(
            (g2.c_norm_sq - expect).abs() / expect < 1e-9,
            "{} vs {expect}",
            g2.c_norm_sq
        );

        let n = 16;
        let binned = bin_scene_2d(&map, n).unwrap();
        let means: Vec<f64> = {
            let dn = cells / n;
            (0..n * n)
                .map(|p| {
                    let (pr, pc) = (p / n, p % n);
                    let mut acc = 0.0;
                    for r in pr * dn..(pr + 1) * dn {
                        for c in pc * dn..(pc + 1) * dn {
                            acc += map.at(r, c);
                        }
                    }
                    acc / (dn * dn) as f64
                })
                .collect()
        };
        let rec = piecewise_reconstruction_2d(&means, n, cells).unwrap();
        let bias_num = rec.mean_squared_difference(&map).unwrap();
        let bias_th = binned.c_norm_sq / (12 * n * n) as f64;
        assert!(
            (bias_num - bias_th).abs() / bias_th < 0.05,
            "2D bias {bias_num} vs {bias_th}"
        );
    }

    #[test]
    fn depth_map_roundtrip_via_text() {
        let map = make_synthetic_depth_map(32).unwrap();
        let text = profile_to_string(32, 32, map.values());
        let (rows, cols, values) = parse_profile_text(&text).unwrap();
        assert_eq!((rows, cols), (32, 32));
        let back = ToaProfile2d::from_values(values, 32).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn blur_preserves_flat_maps() {
        let flat = ToaProfile2d::from_fn(64, |_, _| 7.0).unwrap();
        let blurred = flat.gaussian_blur(2.0);
        for v in blurred.values() {
            assert!((v - 7.0).abs() < 1e-12);
        }
    }
}
