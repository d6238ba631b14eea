//! Uniform temporal grids and quadrature helpers.

use crate::{Error, Result};

/// A uniform grid of `len` time points starting at `t0` with spacing `dt`.
///
/// Tabulated pulses, effective return pulses, and Fisher-integral
/// quadratures all live on such grids.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, len: usize) -> Result<Self> {
        if !(dt > 0.0) || !t0.is_finite() {
            return Err(Error::Domain(format!("invalid grid: t0={t0}, dt={dt}")));
        }
        if len < 2 {
            return Err(Error::Domain("grid needs at least 2 points".into()));
        }
        Ok(Self { t0, dt, len })
    }

    /// Grid spanning `[t_min, t_max]` inclusive with spacing `dt`
    /// (the last point lands on `t_max` when `dt` divides the span).
    pub fn spanning(t_min: f64, t_max: f64, dt: f64) -> Result<Self> {
        if !(t_max > t_min) {
            return Err(Error::Domain(format!("empty time span [{t_min}, {t_max}]")));
        }
        let len = ((t_max - t_min) / dt).round() as usize + 1;
        Self::new(t_min, dt, len.max(2))
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.len - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.t(i))
    }

    /// Index of the grid point nearest to `t`, clamped to the grid.
    pub fn nearest_index(&self, t: f64) -> usize {
        let i = ((t - self.t0) / self.dt).round();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.len - 1)
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 - 1e-12 && t <= self.t_end() + 1e-12
    }

    /// Trapezoidal integral of samples taken on this grid.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.len, "sample count must match grid");
        if values.len() < 2 {
            return 0.0;
        }
        let interior: f64 = values[1..values.len() - 1].iter().sum();
        self.dt * (0.5 * (values[0] + values[values.len() - 1]) + interior)
    }

    /// Linear interpolation of grid samples at `t`, clamping to the edge
    /// values outside the grid (replicate padding).
    pub fn interp_clamped(&self, values: &[f64], t: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len);
        let s = (t - self.t0) / self.dt;
        if s <= 0.0 {
            return values[0];
        }
        let last = self.len - 1;
        if s >= last as f64 {
            return values[last];
        }
        let i = s as usize;
        let frac = s - i as f64;
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }
}

/// Central finite differences with one-sided ends, divided by the spacing.
///
/// Matches the classic numerical `gradient` convention used throughout the
/// scene and theory code.
pub fn finite_difference(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 2, "finite_difference needs at least 2 samples");
    let mut g = vec![0.0; n];
    g[0] = (values[1] - values[0]) / h;
    g[n - 1] = (values[n - 1] - values[n - 2]) / h;
    for i in 1..n - 1 {
        g[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    g
}
