//! Uniform one-dimensional state grids and the projection onto them.

use serde::{Deserialize, Serialize};

use crate::error::{MimikError, Result};

/// Largest number of points allowed on a single axis.
pub const MAX_AXIS_POINTS: usize = 50_000;

/// Uniformly spaced, strictly increasing set of states with its two
/// boundary points.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    points: Vec<f64>,
    h: f64,
}

/// Compact serialized form `{lo, hi, m, h}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
    pub h: f64,
}

impl StateGrid {
    /// Dyadic grid on `[-2^n, 2^n]` with spacing `2^-n`, i.e. `2^(2n+1) + 1` points.
    pub fn dyadic(n: u32) -> Result<Self> {
        let m = if n < 30 { (1usize << (2 * n + 1)) + 1 } else { usize::MAX };
        if !(1..=8).contains(&n) {
            return Err(MimikError::SizeLimit {
                what: "dyadic grid level n (must be 1..=8) points",
                requested: m,
                limit: (1usize << 17) + 1,
            });
        }
        let h = 1.0 / (1u64 << n) as f64;
        let half = (1u64 << n) as f64;
        // exact in binary: every point is an integer multiple of 2^-n
        let points = (0..m).map(|i| -half + i as f64 * h).collect();
        Ok(StateGrid { points, h })
    }

    /// `m` equally spaced points from `lo` to `hi` inclusive.
    pub fn uniform(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(MimikError::Domain(format!(
                "grid needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        if m < 3 {
            return Err(MimikError::Domain(format!("grid needs m >= 3, got {m}")));
        }
        if m > MAX_AXIS_POINTS {
            return Err(MimikError::SizeLimit {
                what: "grid points per axis",
                requested: m,
                limit: MAX_AXIS_POINTS,
            });
        }
        let h = (hi - lo) / (m - 1) as f64;
        let points = (0..m).map(|i| lo + i as f64 * h).collect();
        Ok(StateGrid { points, h })
    }

    /// Grid with spacing `h` covering `[lo, hi]`; `hi` is rounded to the
    /// nearest multiple of `h` from `lo`.
    pub fn with_spacing(lo: f64, hi: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(MimikError::Domain(format!("spacing must be positive, got {h}")));
        }
        let cells = ((hi - lo) / h).round();
        if !(cells >= 2.0) {
            return Err(MimikError::Domain(format!(
                "interval [{lo}, {hi}] holds fewer than two cells of width {h}"
            )));
        }
        Self::uniform(lo, lo + cells * h, cells as usize + 1)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        i == 0 || i + 1 == self.points.len()
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            lo: self.lo(),
            hi: self.hi(),
            m: self.len(),
            h: self.h,
        }
    }

    /// Index of the nearest grid point; ties go to the lower index and
    /// values outside `[lo, hi]` clamp to the boundary.
    pub fn project(&self, x: f64) -> usize {
        let m = self.points.len();
        if x.is_nan() || x <= self.lo() {
            return 0;
        }
        if x >= self.hi() {
            return m - 1;
        }
        let f = (x - self.lo()) / self.h;
        let mut i = (f.floor() as usize).min(m - 1);
        // settle on the bracketing pair using actual point values
        while i > 0 && self.points[i] > x {
            i -= 1;
        }
        while i + 1 < m && self.points[i + 1] <= x {
            i += 1;
        }
        if i + 1 < m && (self.points[i + 1] - x) < (x - self.points[i]) {
            i + 1
        } else {
            i
        }
    }
}
