//! One-dimensional generators built by local moment matching.
//!
//! For a diffusion `dX = b(X) dt + σ(X) dW` on a uniform grid with spacing
//! `h`, the nearest-neighbour rates
//!
//! ```text
//! a(x_i, x_{i+1}) = ½ (b/h + σ²/h²)
//! a(x_i, x_{i-1}) = ½ (σ²/h² - b/h)
//! ```
//!
//! reproduce the drift and the squared volatility as the first two
//! instantaneous moments of the chain. Boundary nodes are absorbing.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{MimikError, Result};
use crate::grid::StateGrid;
use crate::sparse::CsrMatrix;

pub type CoefFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Time-homogeneous scalar diffusion coefficients.
#[derive(Clone)]
pub struct ModelSpec1D {
    pub label: String,
    drift: CoefFn,
    vol: CoefFn,
}

impl fmt::Debug for ModelSpec1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec1D")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl ModelSpec1D {
    pub fn new(
        label: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        vol: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ModelSpec1D {
            label: label.into(),
            drift: Arc::new(drift),
            vol: Arc::new(vol),
        }
    }

    /// Brownian motion with constant drift `mu` and volatility `sigma`.
    pub fn bm(mu: f64, sigma: f64) -> Self {
        Self::new(format!("bm(mu={mu}, sigma={sigma})"), move |_| mu, move |_| sigma)
    }

    /// Ornstein–Uhlenbeck `dX = κ(θ - X) dt + σ dW`.
    pub fn ou(kappa: f64, theta: f64, sigma: f64) -> Self {
        Self::new(
            format!("ou(kappa={kappa}, theta={theta}, sigma={sigma})"),
            move |x| kappa * (theta - x),
            move |_| sigma,
        )
    }

    /// Geometric Brownian motion expressed in log coordinates, where it is
    /// a Brownian motion with drift `mu - sigma²/2`.
    pub fn gbm_log(mu: f64, sigma: f64) -> Self {
        let nu = mu - 0.5 * sigma * sigma;
        Self::new(format!("gbm-log(mu={mu}, sigma={sigma})"), move |_| nu, move |_| sigma)
    }

    /// Cox–Ingersoll–Ross `dX = κ(θ - X) dt + σ √X dW`; needs a positive grid.
    pub fn cir(kappa: f64, theta: f64, sigma: f64) -> Self {
        Self::new(
            format!("cir(kappa={kappa}, theta={theta}, sigma={sigma})"),
            move |x| kappa * (theta - x),
            move |x| sigma * x.max(0.0).sqrt(),
        )
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn vol(&self, x: f64) -> f64 {
        (self.vol)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPolicy {
    #[default]
    Absorbing,
}

/// First-derivative discretization used for the drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// Moment-exact centred rates; fails when `|b| > σ²/h`.
    #[default]
    Central,
    /// One-sided drift, always nonnegative; variance is matched to O(h).
    Upwind,
}

/// Conservative rate matrix: nonnegative off-diagonals, zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub rates: CsrMatrix,
    pub boundary_policy: BoundaryPolicy,
}

impl Generator {
    pub fn new(rates: CsrMatrix) -> Self {
        Generator {
            rates,
            boundary_policy: BoundaryPolicy::Absorbing,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(CsrMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.rates.nrows()
    }

    /// Largest exit rate, `max_i |Q_ii|`.
    pub fn max_exit_rate(&self) -> f64 {
        self.rates
            .diagonal()
            .iter()
            .fold(0.0, |m, &d| m.max(d.abs()))
    }

    /// Rates as (row, col, rate) triplet CSV with a header line.
    pub fn write_triplet_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        crate::export::write_triplets(w, &self.rates)
    }
}

/// Rates `(down, up)` for one interior node.
pub(crate) fn node_rates(b: f64, var: f64, h: f64, stencil: Stencil) -> (f64, f64) {
    match stencil {
        Stencil::Central => {
            let diff = var / (h * h);
            (0.5 * (diff - b / h), 0.5 * (diff + b / h))
        }
        Stencil::Upwind => {
            let half = 0.5 * var / (h * h);
            if b >= 0.0 {
                (half, half + b / h)
            } else {
                (half - b / h, half)
            }
        }
    }
}

/// Tridiagonal rows from per-node `(drift, variance)` pairs.
pub(crate) fn tridiagonal_from_moments(
    grid: &StateGrid,
    moments: impl Fn(usize, f64) -> (f64, f64),
    stencil: Stencil,
) -> Result<Generator> {
    let h = grid.h();
    let m = grid.len();
    let mut triplets = Vec::with_capacity(3 * m);
    for i in 1..m - 1 {
        let x = grid.points()[i];
        let (b, var) = moments(i, x);
        if !(b.is_finite() && var.is_finite()) {
            return Err(MimikError::Domain(format!(
                "non-finite coefficients at x = {x}: drift {b}, variance {var}"
            )));
        }
        if !(var > 0.0) {
            return Err(MimikError::DegenerateVariance { x, variance: var });
        }
        if stencil == Stencil::Central && b.abs() > var / h * (1.0 + 1e-12) {
            return Err(MimikError::Positivity {
                index: i,
                x,
                drift_abs: b.abs(),
                bound: var / h,
                admissible_h: var / b.abs(),
            });
        }
        let (down, up) = node_rates(b, var, h, stencil);
        let (down, up) = (down.max(0.0), up.max(0.0));
        triplets.push((i, i - 1, down));
        triplets.push((i, i + 1, up));
        triplets.push((i, i, -(down + up)));
    }
    Ok(Generator::new(CsrMatrix::from_triplets(m, m, triplets)))
}

/// Moment-matched tridiagonal generator with absorbing boundary rows.
pub fn build_generator_1d(grid: &StateGrid, model: &ModelSpec1D) -> Result<Generator> {
    build_generator_1d_with(grid, model, Stencil::Central)
}

pub fn build_generator_1d_with(
    grid: &StateGrid,
    model: &ModelSpec1D,
    stencil: Stencil,
) -> Result<Generator> {
    let with_vol = |_, x: f64| {
        let s = model.vol(x);
        (model.drift(x), s * s)
    };
    // report the tightest admissible h over the whole grid, not just the
    // first offending node
    tridiagonal_from_moments(grid, with_vol, stencil).map_err(|e| match e {
        MimikError::Positivity {
            index,
            x,
            drift_abs,
            bound,
            ..
        } => {
            let admissible_h = grid.points()[1..grid.len() - 1]
                .iter()
                .filter_map(|&y| {
                    let b = model.drift(y).abs();
                    let s = model.vol(y);
                    (b > 0.0).then(|| s * s / b)
                })
                .fold(f64::INFINITY, f64::min);
            MimikError::Positivity {
                index,
                x,
                drift_abs,
                bound,
                admissible_h,
            }
        }
        other => other,
    })
}

/// Instantaneous mean and variance rates at interior node `i`:
/// `Σ_j a(x_i,x_j)(x_j - x_i)` and `Σ_j a(x_i,x_j)(x_j - x_i)²`.
/// Jumps are taken as lattice offsets `(j - i)·h`, so rounding in the
/// stored grid points does not leak into the moments.
pub fn instantaneous_moments(q: &Generator, grid: &StateGrid, i: usize) -> Result<(f64, f64)> {
    if q.dim() != grid.len() {
        return Err(MimikError::Dimension(format!(
            "generator has {} states, grid has {}",
            q.dim(),
            grid.len()
        )));
    }
    if i >= grid.len() || grid.is_boundary(i) {
        return Err(MimikError::BoundaryIndex { index: i });
    }
    let h = grid.h();
    let (cols, vals) = q.rates.row(i);
    let (mut mean, mut var) = (0.0, 0.0);
    for (&j, &a) in cols.iter().zip(vals) {
        if j == i {
            continue;
        }
        let dx = (j as f64 - i as f64) * h;
        mean += a * dx;
        var += a * dx * dx;
    }
    Ok((mean, var))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dim: usize,
    pub max_row_sum_residual: f64,
    pub worst_row: Option<usize>,
    pub min_off_diagonal: f64,
    pub min_off_diagonal_at: Option<(usize, usize)>,
    /// Rows whose sum exceeds `1e-10 · max|row|`.
    pub row_sum_failures: Vec<usize>,
    /// Rows that are entirely zero (absorbing states).
    pub absorbing_rows: usize,
    /// Boundary rows (first and last) of a 1-D generator are identically zero.
    pub boundary_rows_absorbing: bool,
    pub passed: bool,
}

/// Checks every generator invariant and collects the residuals.
pub fn validate_generator(q: &Generator) -> ValidationReport {
    let n = q.dim();
    let mut max_res = 0.0f64;
    let mut worst_row = None;
    let mut min_off = 0.0f64;
    let mut min_off_at = None;
    let mut failures = Vec::new();
    let mut absorbing = 0;
    for r in 0..n {
        let (cols, vals) = q.rates.row(r);
        let sum: f64 = vals.iter().sum();
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            absorbing += 1;
        }
        if sum.abs() > max_res {
            max_res = sum.abs();
            worst_row = Some(r);
        }
        if sum.abs() > 1e-10 * scale {
            failures.push(r);
        }
        for (&c, &v) in cols.iter().zip(vals) {
            if c != r && v < min_off {
                min_off = v;
                min_off_at = Some((r, c));
            }
        }
    }
    let row_is_zero = |r: usize| q.rates.row(r).1.iter().all(|&v| v == 0.0);
    let boundary_ok = n == 0 || (row_is_zero(0) && row_is_zero(n - 1));
    ValidationReport {
        dim: n,
        max_row_sum_residual: max_res,
        worst_row,
        min_off_diagonal: min_off,
        min_off_diagonal_at: min_off_at,
        passed: failures.is_empty() && min_off >= -1e-12,
        row_sum_failures: failures,
        absorbing_rows: absorbing,
        boundary_rows_absorbing: boundary_ok,
    }
}

/// Clamps off-diagonals in `[-1e-12, 0)` to zero and re-balances the
/// diagonal; errors on anything more negative.
pub fn sanitize_generator(q: &Generator) -> Result<Generator> {
    let n = q.dim();
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let (cols, vals) = q.rates.row(r);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(cols.len());
        let mut out = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            if c == r {
                continue;
            }
            if v < -1e-12 {
                return Err(MimikError::InvalidGenerator(format!(
                    "negative rate {v} from state {r} to {c}"
                )));
            }
            let v = v.max(0.0);
            out += v;
            row.push((c, v));
        }
        row.push((r, -out));
        rows.push(row);
    }
    Ok(Generator::new(CsrMatrix::from_rows(n, rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> StateGrid {
        StateGrid::uniform(-2.0, 2.0, 9).unwrap()
    }

    #[test]
    fn symmetric_rates_for_driftless_bm() {
        let q = build_generator_1d(&grid(), &ModelSpec1D::bm(0.0, 1.0)).unwrap();
        for i in 1..8 {
            assert_eq!(q.rates.get(i, i - 1), 2.0);
            assert_eq!(q.rates.get(i, i), -4.0);
            assert_eq!(q.rates.get(i, i + 1), 2.0);
        }
        assert_eq!(q.rates.row(0).0.len(), 0);
        assert_eq!(q.rates.row(8).0.len(), 0);
    }

    #[test]
    fn drifted_rates() {
        let q = build_generator_1d(&grid(), &ModelSpec1D::bm(1.0, 1.0)).unwrap();
        assert_eq!(q.rates.get(4, 5), 3.0);
        assert_eq!(q.rates.get(4, 3), 1.0);
        assert_eq!(q.rates.get(4, 4), -4.0);
    }

    #[test]
    fn positivity_violation_reports_admissible_h() {
        match build_generator_1d(&grid(), &ModelSpec1D::bm(3.0, 1.0)) {
            Err(MimikError::Positivity { admissible_h, bound, .. }) => {
                assert_eq!(bound, 2.0);
                assert!((admissible_h - 1.0 / 3.0).abs() < 1e-15);
            }
            other => panic!("expected positivity error, got {other:?}"),
        }
    }

    #[test]
    fn upwind_accepts_strong_drift() {
        let q = build_generator_1d_with(&grid(), &ModelSpec1D::bm(3.0, 1.0), Stencil::Upwind)
            .unwrap();
        assert!(validate_generator(&q).passed);
        let (mean, var) = instantaneous_moments(&q, &grid(), 4).unwrap();
        assert!((mean - 3.0).abs() < 1e-12);
        // σ² + |b| h
        assert!((var - 2.5).abs() < 1e-12);
    }

    #[test]
    fn moments_examples() {
        let g = grid();
        let q = build_generator_1d(&g, &ModelSpec1D::bm(0.0, 1.0)).unwrap();
        for i in 1..8 {
            assert_eq!(instantaneous_moments(&q, &g, i).unwrap(), (0.0, 1.0));
        }
        let q = build_generator_1d(&g, &ModelSpec1D::bm(1.0, 1.0)).unwrap();
        assert_eq!(instantaneous_moments(&q, &g, 3).unwrap(), (1.0, 1.0));
        let q = build_generator_1d(&g, &ModelSpec1D::ou(1.0, 0.0, 1.0)).unwrap();
        let (mean, var) = instantaneous_moments(&q, &g, 5).unwrap();
        assert_eq!(g.points()[5], 0.5);
        assert!((mean + 0.5).abs() < 1e-15 && (var - 1.0).abs() < 1e-15);
        assert!(matches!(
            instantaneous_moments(&q, &g, 0),
            Err(MimikError::BoundaryIndex { index: 0 })
        ));
    }

    #[test]
    fn validation_examples() {
        let q = build_generator_1d(&grid(), &ModelSpec1D::bm(0.5, 1.0)).unwrap();
        let rep = validate_generator(&q);
        assert!(rep.passed && rep.boundary_rows_absorbing);

        let mut trip: Vec<_> = q.rates.triplets().collect();
        for t in trip.iter_mut() {
            if t.0 == 3 && t.1 == 4 {
                t.2 += 1e-3;
            }
        }
        let bad = Generator::new(CsrMatrix::from_triplets(9, 9, trip));
        let rep = validate_generator(&bad);
        assert!(!rep.passed);
        assert_eq!(rep.row_sum_failures, vec![3]);

        let rep = validate_generator(&Generator::zero(5));
        assert!(rep.passed);
        assert_eq!(rep.absorbing_rows, 5);
    }

    #[test]
    fn sanitize_clamps_tiny_negatives() {
        let q = Generator::new(CsrMatrix::from_triplets(
            2,
            2,
            [(0, 1, -1e-13), (0, 0, 1e-13), (1, 0, 1.0), (1, 1, -1.0)],
        ));
        let s = sanitize_generator(&q).unwrap();
        assert_eq!(s.rates.get(0, 1), 0.0);
        assert!(validate_generator(&s).passed);
        let q = Generator::new(CsrMatrix::from_triplets(2, 2, [(0, 1, -1e-6), (0, 0, 1e-6)]));
        assert!(sanitize_generator(&q).is_err());
    }
}
