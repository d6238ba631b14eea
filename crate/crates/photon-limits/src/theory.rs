//! Closed-form and numerical MSE predictors.
//!
//! For a Gaussian pulse with zero floor the reconstruction MSE over `N`
//! pixels has the closed form
//!
//! ```text
//! MSE(N) = c^2 / (12 N^2)  +  (N / alpha0) (c^2 sigma_x^2 + sigma_t^2)
//! ```
//!
//! with `sigma_x = 1 / (sqrt(12) N)` and `c^2` the mean squared per-pixel
//! slope. Arbitrary pulses, noise floors, and pile-up go through
//! [`mse_numerical`], which integrates the per-pixel Fisher information on
//! the temporal grid. 2D scenes use the square-pixelization analogues.

use crate::grid::{finite_difference, TimeGrid};
use crate::pulse::{Background, FluxModel, ObservationWindow, PixelFlux, PulseShape};
use crate::scene::{bin_scene, effective_pulse_exact, ToaProfile};
use crate::{Error, Result};

// ── prediction types ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMode {
    ClosedForm,
    Numerical,
    /// Closed form with the `c^2 sigma_x^2` variance term omitted.
    Simplified,
}

/// Theoretical bias/variance split at one pixel count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsePrediction {
    pub n: usize,
    pub bias: f64,
    pub variance: f64,
    pub mode: PredictionMode,
}

impl MsePrediction {
    pub fn total(&self) -> f64 {
        self.bias + self.variance
    }
}

/// Simulated counterpart attached to a sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedPoint {
    pub mse: f64,
    pub bias: f64,
    pub variance: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub theory: MsePrediction,
    pub sim: Option<SimulatedPoint>,
}

/// Predictions (and optional simulation results) over ascending `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn new(points: Vec<SweepPoint>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].theory.n >= w[1].theory.n) {
            return Err(Error::Config(
                "sweep points must have strictly ascending N".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.points
    }

    /// `N` with the smallest simulated MSE, when simulations are attached.
    pub fn simulated_minimizer(&self) -> Option<usize> {
        self.points
            .iter()
            .filter_map(|p| p.sim.map(|s| (p.theory.n, s.mse)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n)
    }

    /// `N` with the smallest theoretical total.
    pub fn theory_minimizer(&self) -> Option<usize> {
        self.points
            .iter()
            .map(|p| (p.theory.n, p.theory.total()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n)
    }
}

// ── single-pixel variance ─────────────────────────────────────────────

/// Inverse Fisher information of one pixel's flux with the signal at `tau`:
/// `[ integral (alpha s')^2 / (alpha s + bg) dt ]^-1` by trapezoidal
/// quadrature at spacing `dt` over the window.
///
/// Returns `+inf` when the Fisher integral vanishes (no usable signal).
pub fn single_pixel_variance(
    flux: &PixelFlux,
    tau: f64,
    window: &ObservationWindow,
    dt: f64,
) -> Result<f64> {
    let grid = TimeGrid::spanning(window.t_min, window.t_max, dt)?;
    let signal: Vec<f64> = grid.points().map(|t| flux.signal_density(t, tau)).collect();
    let dsignal: Vec<f64> = match &flux.signal {
        PulseShape::Gaussian { sigma_t } => grid
            .points()
            .map(|t| {
                let u = t - tau;
                -u / (sigma_t * sigma_t) * crate::pulse::gaussian_density(u, *sigma_t)
            })
            .collect(),
        PulseShape::Tabulated { .. } => finite_difference(&signal, dt),
    };
    let integrand: Vec<f64> = grid
        .points()
        .zip(signal.iter().zip(&dsignal))
        .map(|(t, (s, ds))| {
            let den = flux.alpha * s + flux.background.eval(t);
            // vanishing flux carries no information
            if den < 1e-300 {
                0.0
            } else {
                let num = flux.alpha * ds;
                num * num / den
            }
        })
        .collect();
    let fisher = grid.trapezoid(&integrand);
    if fisher > 0.0 {
        Ok(1.0 / fisher)
    } else {
        Ok(f64::INFINITY)
    }
}

// ── closed-form 1D ────────────────────────────────────────────────────

/// Gaussian stand-in width for a boxcar of width `w`.
pub fn optimal_boxcar_sigma(w: f64) -> f64 {
    w / 12f64.sqrt()
}

/// Piecewise-constant approximation error `c^2 / (12 N^2)`.
pub fn bias_1d(c_sq: f64, n: usize) -> f64 {
    c_sq / (12.0 * (n * n) as f64)
}

/// Estimation variance `(N / alpha0) (c^2 sigma_x^2 + sigma_t^2)`.
pub fn variance_1d(c_sq: f64, sigma_x: f64, sigma_t: f64, alpha0: f64, n: usize) -> f64 {
    n as f64 / alpha0 * (c_sq * sigma_x * sigma_x + sigma_t * sigma_t)
}

/// Full closed-form prediction with `sigma_x = 1 / (sqrt(12) N)`.
pub fn mse_1d(c_sq: f64, sigma_t: f64, alpha0: f64, n: usize) -> MsePrediction {
    let sigma_x = 1.0 / (12f64.sqrt() * n as f64);
    MsePrediction {
        n,
        bias: bias_1d(c_sq, n),
        variance: variance_1d(c_sq, sigma_x, sigma_t, alpha0, n),
        mode: PredictionMode::ClosedForm,
    }
}

/// Ablated prediction with the `c^2 sigma_x^2` term omitted.
pub fn mse_1d_simplified(c_sq: f64, sigma_t: f64, alpha0: f64, n: usize) -> MsePrediction {
    MsePrediction {
        n,
        bias: bias_1d(c_sq, n),
        variance: n as f64 / alpha0 * sigma_t * sigma_t,
        mode: PredictionMode::Simplified,
    }
}

// ── numerical 1D ──────────────────────────────────────────────────────

/// How the per-pixel variances enter [`mse_numerical`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceAveraging {
    /// Average the Fisher-inverse over every pixel (default).
    PerPixel,
    /// Use a single representative pixel (fast mode).
    Representative(usize),
}

/// Numerical prediction for arbitrary pulse shape, noise floor, and
/// pile-up: bias from the closed form, variance from the per-pixel inverse
/// Fisher integral of the exact effective pulse.
///
/// `model` carries scene totals; each pixel sees a `1/N` share of the
/// signal, floor, and pile-up mass.
pub fn mse_numerical(
    profile: &ToaProfile,
    model: &FluxModel,
    n: usize,
    tgrid: &TimeGrid,
    window: &ObservationWindow,
    averaging: VarianceAveraging,
) -> Result<MsePrediction> {
    let binned = bin_scene(profile, model, n)?;
    let background = |floor: f64| match model.pileup {
        Some(p) => Background::PileUp {
            beta: p.beta / n as f64,
            gamma: p.gamma,
            floor,
        },
        None => Background::Constant(floor),
    };

    let pixel_variance = |idx: usize| -> Result<f64> {
        let eff = effective_pulse_exact(profile, model, n, idx, tgrid)?;
        let flux = eff.pixel_flux_with(background(eff.floor));
        single_pixel_variance(&flux, eff.tau_ref, window, tgrid.dt)
    };

    let variance = match averaging {
        VarianceAveraging::Representative(idx) => pixel_variance(idx)?,
        VarianceAveraging::PerPixel => {
            let mut acc = 0.0;
            for idx in 0..n {
                acc += pixel_variance(idx)?;
            }
            acc / n as f64
        }
    };

    Ok(MsePrediction {
        n,
        bias: bias_1d(binned.c_sq, n),
        variance,
        mode: PredictionMode::Numerical,
    })
}

// ── 2D ────────────────────────────────────────────────────────────────

/// 2D piecewise-constant bias `||c||^2 / (12 N^2)` for `N x N` pixels.
pub fn bias_2d(c_norm_sq: f64, n: usize) -> f64 {
    c_norm_sq / (12.0 * (n * n) as f64)
}

/// 2D variance `(N^2 / alpha0) (||c||^2 sigma_s^2 + sigma_t^2)`.
pub fn variance_2d(c_norm_sq: f64, sigma_s: f64, sigma_t: f64, alpha0: f64, n: usize) -> f64 {
    (n * n) as f64 / alpha0 * (c_norm_sq * sigma_s * sigma_s + sigma_t * sigma_t)
}

/// Full 2D prediction with `sigma_s = 1 / (sqrt(12) N)`.
pub fn mse_2d(c_norm_sq: f64, sigma_t: f64, alpha0: f64, n: usize) -> MsePrediction {
    let sigma_s = 1.0 / (12f64.sqrt() * n as f64);
    MsePrediction {
        n,
        bias: bias_2d(c_norm_sq, n),
        variance: variance_2d(c_norm_sq, sigma_s, sigma_t, alpha0, n),
        mode: PredictionMode::ClosedForm,
    }
}

/// Real-valued pixel count minimizing the 2D MSE:
/// `(sqrt(alpha0) ||c|| / (sqrt(12) sigma_t))^(1/2)`.
///
/// Small pulse widths push the optimum beyond any physical resolution, in
/// which case maximizing resolution is the best option.
pub fn optimal_n_2d(alpha0: f64, c_norm: f64, sigma_t: f64) -> f64 {
    (alpha0.sqrt() * c_norm / (12f64.sqrt() * sigma_t)).sqrt()
}

/// Bias of a noisy scene: the clean curvature term plus the noise power.
/// `c_sq_clean` must come from the noise-free profile, otherwise the
/// gradient is overestimated.
pub fn noisy_bias_correction(c_sq_clean: f64, n: usize, sigma_e_sq: f64) -> f64 {
    bias_1d(c_sq_clean, n) + sigma_e_sq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_flat_profile, make_sigmoid_profile};

    fn window() -> ObservationWindow {
        ObservationWindow::new(0.0, 10.0).unwrap()
    }

    #[test]
    fn single_pixel_variance_gaussian_no_floor() {
        // sigma_t^2 / alpha
        let flux = PixelFlux::gaussian(100.0, 0.5, 0.0).unwrap();
        let v = single_pixel_variance(&flux, 5.0, &window(), 1.0 / 256.0).unwrap();
        assert!((v - 2.5e-3).abs() / 2.5e-3 < 1e-4, "variance {v}");

        let double = PixelFlux::gaussian(200.0, 0.5, 0.0).unwrap();
        let v2 = single_pixel_variance(&double, 5.0, &window(), 1.0 / 256.0).unwrap();
        assert!(
            (v2 - v / 2.0).abs() / v2 < 1e-9,
            "doubling alpha must halve variance"
        );
    }

    #[test]
    fn single_pixel_variance_grid_refinement() {
        // quadrature self-check: halving the step moves the result < 0.5%
        let flux = PixelFlux::gaussian(100.0, 0.5, 30.0).unwrap();
        let a = single_pixel_variance(&flux, 5.0, &window(), 1.0 / 256.0).unwrap();
        let b = single_pixel_variance(&flux, 5.0, &window(), 1.0 / 512.0).unwrap();
        assert!((a - b).abs() / b < 5e-3, "{a} vs {b}");
    }

    #[test]
    fn single_pixel_variance_zero_fisher() {
        let flux = PixelFlux::gaussian(0.0, 0.5, 1.0).unwrap();
        let v = single_pixel_variance(&flux, 5.0, &window(), 1.0 / 256.0).unwrap();
        assert!(v.is_infinite());
    }

    #[test]
    fn boxcar_sigma_values() {
        assert!((optimal_boxcar_sigma(1.0) - 0.288675).abs() < 1e-6);
        assert!((optimal_boxcar_sigma(1.0 / 8.0) - 0.036084).abs() < 1e-6);
    }

    #[test]
    fn bias_formula_values() {
        assert_eq!(bias_1d(0.0, 17), 0.0);
        // ramp tau(x) = x at N = 10: exact piecewise integral 1/1200
        assert!((bias_1d(1.0, 10) - 1.0 / 1200.0).abs() < 1e-18);
    }

    #[test]
    fn variance_formula_values() {
        // flat scene: N sigma_t^2 / alpha0
        let v = variance_1d(0.0, 0.1, 0.5, 1e4, 64);
        assert!((v - 64.0 * 0.25 / 1e4).abs() < 1e-15);
        // sigma_x substitution leaves (N/alpha0)(c^2/(12 N^2) + sigma_t^2)
        let n = 32;
        let sigma_x = 1.0 / (12f64.sqrt() * n as f64);
        let direct = variance_1d(5.0, sigma_x, 0.5, 1e4, n);
        let algebra = n as f64 / 1e4 * (5.0 / (12.0 * (n * n) as f64) + 0.25);
        assert!((direct - algebra).abs() < 1e-15);
    }

    #[test]
    fn total_is_bias_plus_variance() {
        let p = mse_1d(53.0, 0.5, 1e4, 64);
        assert_eq!(p.total(), p.bias + p.variance);
        let s = mse_1d_simplified(53.0, 0.5, 1e4, 64);
        assert!(s.variance < p.variance);
        assert_eq!(s.bias, p.bias);
    }

    #[test]
    fn closed_form_monotonicity() {
        // the variance (N/alpha0)(c^2/(12 N^2) + sigma_t^2) turns strictly
        // increasing once N > sqrt(c^2 / 12) / sigma_t, here N >= 5
        let mut prev = mse_1d(53.0, 0.5, 1e4, 8);
        for k in 4..12 {
            let cur = mse_1d(53.0, 0.5, 1e4, 1 << k);
            assert!(cur.bias < prev.bias, "bias must decrease in N");
            assert!(cur.variance > prev.variance, "variance must increase in N");
            prev = cur;
        }
    }

    #[test]
    fn numerical_reduces_to_closed_form() {
        let profile = make_sigmoid_profile(2048).unwrap();
        let model = FluxModel::gaussian(1e4, 0.0, 0.5).unwrap();
        let tgrid = TimeGrid::spanning(0.0, 10.0, 1.0 / 256.0).unwrap();
        let n = 32;
        let numeric = mse_numerical(
            &profile,
            &model,
            n,
            &tgrid,
            &window(),
            VarianceAveraging::PerPixel,
        )
        .unwrap();
        let binned = bin_scene(&profile, &model, n).unwrap();
        let closed = mse_1d(binned.c_sq, 0.5, 1e4, n);
        let gap = (numeric.total() - closed.total()).abs() / closed.total();
        assert!(gap < 0.01, "numerical vs closed form gap {gap}");
        assert_eq!(numeric.bias, closed.bias);
    }

    #[test]
    fn numerical_converges_under_grid_refinement() {
        let profile = make_sigmoid_profile(1024).unwrap();
        let model = FluxModel::gaussian(1e4, 0.0, 0.5).unwrap();
        let w = window();
        let coarse = TimeGrid::spanning(0.0, 10.0, 1.0 / 256.0).unwrap();
        let fine = TimeGrid::spanning(0.0, 10.0, 1.0 / 512.0).unwrap();
        let n = 16;
        let a = mse_numerical(
            &profile,
            &model,
            n,
            &coarse,
            &w,
            VarianceAveraging::PerPixel,
        )
        .unwrap()
        .total();
        let b = mse_numerical(&profile, &model, n, &fine, &w, VarianceAveraging::PerPixel)
            .unwrap()
            .total();
        assert!((a - b).abs() / b < 0.01, "{a} vs {b}");
    }

    #[test]
    fn numerical_grows_with_floor() {
        let profile = make_sigmoid_profile(1024).unwrap();
        let tgrid = TimeGrid::spanning(0.0, 10.0, 1.0 / 256.0).unwrap();
        let mut prev = 0.0;
        for lambda_b in [0.0, 10.0, 30.0] {
            let model = FluxModel::gaussian(1e4, lambda_b, 0.5).unwrap();
            let p = mse_numerical(
                &profile,
                &model,
                32,
                &tgrid,
                &window(),
                VarianceAveraging::Representative(16),
            )
            .unwrap();
            assert!(p.total() > prev, "MSE must grow with the floor");
            prev = p.total();
        }
    }

    #[test]
    fn flat_scene_numerical_matches_single_pixel() {
        let profile = make_flat_profile(512, 5.0).unwrap();
        let model = FluxModel::gaussian(1e4, 0.0, 0.5).unwrap();
        let tgrid = TimeGrid::spanning(0.0, 10.0, 1.0 / 256.0).unwrap();
        let p = mse_numerical(
            &profile,
            &model,
            8,
            &tgrid,
            &window(),
            VarianceAveraging::PerPixel,
        )
        .unwrap();
        assert_eq!(p.bias, 0.0);
        // per-pixel flux 1250, width sigma_t: variance = 0.25 / 1250
        assert!((p.variance - 0.25 / 1250.0).abs() / (0.25 / 1250.0) < 1e-3);
    }

    #[test]
    fn two_d_formulas() {
        // flat scene
        assert_eq!(bias_2d(0.0, 8), 0.0);
        let v = variance_2d(0.0, 0.01, 2.0, 1e6, 8);
        assert!((v - 64.0 * 4.0 / 1e6).abs() < 1e-15);
        // separable ramp tau = x + y: ||c||^2 = 2, bias = 1/(6 N^2)
        assert!((bias_2d(2.0, 16) - 1.0 / (6.0 * 256.0)).abs() < 1e-15);
        // gradient magnitude typical of a smoothed real depth map
        assert!((bias_2d(1.42e3, 8) - 1.849).abs() < 1e-3);
        let p = mse_2d(1.42e3, 2.0, 1e6, 8);
        assert_eq!(p.total(), p.bias + p.variance);
    }

    #[test]
    fn optimal_n_2d_scalings() {
        let base = optimal_n_2d(1e6, 62f64.sqrt(), 2.0);
        let scaled = optimal_n_2d(16.0 * 1e6, 62f64.sqrt(), 2.0);
        assert!((scaled / base - 2.0).abs() < 1e-12, "alpha0 x16 doubles N*");
        // shrinking sigma_t pushes the optimum out without bound
        assert!(optimal_n_2d(1e6, 62f64.sqrt(), 0.02) > optimal_n_2d(1e6, 62f64.sqrt(), 2.0));
        assert!(optimal_n_2d(1e6, 62f64.sqrt(), 1e-9) > 1e4);
    }

    #[test]
    fn noisy_bias() {
        assert_eq!(noisy_bias_correction(53.0, 32, 0.0), bias_1d(53.0, 32));
        // flat clean scene: bias is the noise power at every N
        for n in [4, 64, 512] {
            assert_eq!(noisy_bias_correction(0.0, n, 0.01), 0.01);
        }
    }

    #[test]
    fn closed_form_minimizer_matches_grid_search() {
        // the power-of-two sweep minimizer sits next to the dense
        // real-valued minimizer of the same closed form
        let (c_sq, sigma_t, alpha0) = (53.3, 0.5, 1e4);
        let list = [8usize, 16, 32, 64, 128, 256];
        let curve = SweepCurve::new(
            list.iter()
                .map(|&n| SweepPoint {
                    theory: mse_1d(c_sq, sigma_t, alpha0, n),
                    sim: None,
                })
                .collect(),
        )
        .unwrap();
        let coarse = curve.theory_minimizer().unwrap();

        let total = |n: f64| {
            let sx = 1.0 / (12f64.sqrt() * n);
            c_sq / (12.0 * n * n) + n / alpha0 * (c_sq * sx * sx + sigma_t * sigma_t)
        };
        let mut best = (f64::INFINITY, 0.0);
        let mut n = 4.0;
        while n <= 512.0 {
            if total(n) < best.0 {
                best = (total(n), n);
            }
            n += 0.05;
        }
        // dense minimizer ~70.8; nearest list entry is 64
        let nearest = list
            .iter()
            .min_by(|a, b| {
                ((**a as f64) - best.1)
                    .abs()
                    .total_cmp(&((**b as f64) - best.1).abs())
            })
            .unwrap();
        assert_eq!(
            coarse, *nearest,
            "list minimizer {coarse} vs dense {:.1}",
            best.1
        );
    }

    #[test]
    fn sweep_curve_requires_ascending_n() {
        let p = |n| SweepPoint {
            theory: mse_1d(1.0, 0.5, 1e4, n),
            sim: None,
        };
        assert!(SweepCurve::new(vec![p(8), p(16), p(32)]).is_ok());
        assert!(SweepCurve::new(vec![p(16), p(8)]).is_err());
    }
}
