//! Gaussian conditioning and joint chains built from conditional generators.
//!
//! A bivariate chain is assembled from an outer chain `Y` and one inner
//! generator `A_{X|Y=y_j}` per outer state. Two drift conventions exist:
//!
//! * [`DriftMode::Literal`]: the inner drift is
//!   `b₁(x) + ρ σ₁/σ₂ · (y_j − b₂(y_j))` with variance `σ₁²(1 − ρ²)`, and
//!   the outer chain moves independently of `X`.
//! * [`DriftMode::Increment`]: each `Y` jump drags `X` one step in the
//!   direction `sign(ρ)` with probability `q = |ρ| σ₁ h₂ / (σ₂ h₁)`, which
//!   gives the joint chain the cross moment `ρ σ₁ σ₂`. The inner rates are
//!   then matched to whatever drift and variance the coupled moves leave
//!   over, so `X` keeps its marginal moments `(b₁, σ₁²)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MimikError, Result};
use crate::genlib::{build_generator_1d, tridiagonal_from_moments, Generator, ModelSpec1D, Stencil};
use crate::grid::StateGrid;
use crate::sparse::CsrMatrix;
use crate::tensor_ops::{ravel, unravel_into, RhoField, RHO_CLAMP};

/// Condition number above which `Σ₂₂` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
/// Smallest conditional variance accepted.
pub const MIN_COND_VARIANCE: f64 = 1e-12;

/// Mean and covariance of a Gaussian vector split into `(x₁ | x₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPartition {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Indices forming the first block `x₁`; the rest form `x₂`.
    pub split: Vec<usize>,
}

impl GaussianPartition {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, split: Vec<usize>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(MimikError::Dimension(format!(
                "covariance is {}x{}, mean has {d} entries",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        check_symmetric(&sigma)?;
        let mut seen = vec![false; d];
        for &k in &split {
            if k >= d || seen[k] {
                return Err(MimikError::Dimension(format!("bad split index {k}")));
            }
            seen[k] = true;
        }
        if split.is_empty() || split.len() == d {
            return Err(MimikError::Dimension("both blocks of the split must be non-empty".into()));
        }
        Ok(GaussianPartition { mu, sigma, split })
    }

    fn second(&self) -> Vec<usize> {
        (0..self.mu.len()).filter(|k| !self.split.contains(k)).collect()
    }

    /// `(Σ₁₁, Σ₁₂, Σ₂₁, Σ₂₂)`.
    pub fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        blocks(&self.sigma, &self.split, &self.second())
    }

    /// Condition number of `Σ₂₂`.
    pub fn condition(&self) -> f64 {
        condition_number(&self.blocks().3)
    }

    /// `Σ₁₂ Σ₂₂⁻¹`.
    pub fn regression(&self) -> Result<DMatrix<f64>> {
        let (_, s12, _, s22) = self.blocks();
        Ok(s12 * checked_inverse(&s22)?)
    }
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    let asym = (s - s.transpose()).norm();
    if asym > 1e-12 * s.norm() {
        return Err(MimikError::Domain(format!("covariance is not symmetric (residual {asym:e})")));
    }
    Ok(())
}

fn blocks(
    s: &DMatrix<f64>,
    first: &[usize],
    second: &[usize],
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| s[(rows[r], cols[c])])
    };
    (
        pick(first, first),
        pick(first, second),
        pick(second, first),
        pick(second, second),
    )
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(MimikError::Singular { condition });
    }
    m.clone()
        .try_inverse()
        .ok_or(MimikError::Singular { condition })
}

/// Conditional law of `x₁` given `x₂`: mean `μ₁ + Σ₁₂Σ₂₂⁻¹(x₂ − μ₂)` and
/// Schur complement `Σ₁₁ − Σ₁₂Σ₂₂⁻¹Σ₂₁`.
pub fn gaussian_condition(p: &GaussianPartition, x2: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let second = p.second();
    if x2.len() != second.len() {
        return Err(MimikError::Dimension(format!(
            "conditioning vector has {} entries, block has {}",
            x2.len(),
            second.len()
        )));
    }
    let (s11, s12, s21, s22) = p.blocks();
    let w = s12 * checked_inverse(&s22)?;
    let mu1 = DVector::from_iterator(p.split.len(), p.split.iter().map(|&k| p.mu[k]));
    let mu2 = DVector::from_iterator(second.len(), second.iter().map(|&k| p.mu[k]));
    let mean = mu1 + &w * (x2 - mu2);
    let cov = s11 - &w * s21;
    Ok((mean, cov))
}

/// Residuals of the decorrelation identities for `C = −Σ₁₂Σ₂₂⁻¹`:
/// `‖Σ₂₁ + Σ₂₂Cᵀ‖` and `‖var(x₁ + Cx₂) − (Σ₁₁ − Σ₁₂Σ₂₂⁻¹Σ₂₁)‖` (Frobenius).
pub fn orthogonality_check(sigma: &DMatrix<f64>, split: &[usize]) -> Result<(f64, f64)> {
    let d = sigma.nrows();
    let p = GaussianPartition::new(DVector::zeros(d), sigma.clone(), split.to_vec())?;
    let (s11, s12, s21, s22) = p.blocks();
    let w = &s12 * checked_inverse(&s22)?;
    let c = -&w;
    let cov = &s21 + &s22 * c.transpose();
    let var = &s11 + &c * &s21 + &s12 * c.transpose() + &c * &s22 * c.transpose();
    let schur = &s11 - &w * &s21;
    Ok((cov.norm(), (var - schur).norm()))
}

/// How the conditioning chain enters the inner drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    #[default]
    Increment,
    Literal,
}

/// Textbook conditional generator of `X` given `Y = y_j`: variance
/// `σ₁²(1 − ρ²)` and the drift of the chosen mode.
pub fn build_conditional_generator(
    gx: &StateGrid,
    gy: &StateGrid,
    mx: &ModelSpec1D,
    my: &ModelSpec1D,
    rho: &RhoField,
    j: usize,
    mode: DriftMode,
) -> Result<Generator> {
    if rho.shape() != (gx.len(), gy.len()) {
        return Err(MimikError::Dimension(format!(
            "rho field shape {:?} does not match grids ({}, {})",
            rho.shape(),
            gx.len(),
            gy.len()
        )));
    }
    if j >= gy.len() {
        return Err(MimikError::Dimension(format!("outer index {j} outside grid of {}", gy.len())));
    }
    // clamped fields store ±1 as ±RHO_CLAMP, so that level counts as degenerate
    for i in 1..gx.len() - 1 {
        let x = gx.points()[i];
        let p = rho.get(i, j);
        let v = mx.vol(x).powi(2) * (1.0 - p * p);
        if v < MIN_COND_VARIANCE || p.abs() >= RHO_CLAMP {
            return Err(MimikError::DegenerateVariance { x, variance: v });
        }
    }
    let y = gy.points()[j];
    let (by, sy) = (my.drift(y), my.vol(y));
    tridiagonal_from_moments(
        gx,
        |i, x| {
            let p = rho.get(i, j);
            let sx = mx.vol(x);
            let tilt = match mode {
                DriftMode::Literal => p * sx / sy * (y - by),
                DriftMode::Increment => -p * sx / sy * by,
            };
            (mx.drift(x) + tilt, sx * sx * (1.0 - p * p))
        },
        Stencil::Central,
    )
}

/// Outer chain on `Y`, one inner generator per outer state, and (in
/// increment mode) the coupling probabilities of the dragged `X` moves.
#[derive(Debug, Clone)]
pub struct ConditionalFamily {
    pub grid_x: StateGrid,
    pub grid_y: StateGrid,
    pub outer: Generator,
    pub inner: Vec<Generator>,
    pub mode: DriftMode,
    /// `q_ij` row-major in `i`, zero in literal mode.
    pub coupling: Vec<f64>,
    /// Direction of the dragged `X` step per cell.
    pub coupling_sign: Vec<i8>,
}

impl ConditionalFamily {
    pub fn new(
        gx: &StateGrid,
        gy: &StateGrid,
        mx: &ModelSpec1D,
        my: &ModelSpec1D,
        rho: &RhoField,
        mode: DriftMode,
    ) -> Result<Self> {
        let (nx, ny) = (gx.len(), gy.len());
        if rho.shape() != (nx, ny) {
            return Err(MimikError::Dimension(format!(
                "rho field shape {:?} does not match grids ({nx}, {ny})",
                rho.shape()
            )));
        }
        let outer = build_generator_1d(gy, my)?;
        let mut coupling = vec![0.0; nx * ny];
        let mut coupling_sign = vec![0i8; nx * ny];
        let inner: Vec<Generator> = match mode {
            DriftMode::Literal => (0..ny)
                .into_par_iter()
                .map(|j| build_conditional_generator(gx, gy, mx, my, rho, j, mode))
                .collect::<Result<_>>()?,
            DriftMode::Increment => {
                let (h1, h2) = (gx.h(), gy.h());
                for i in 1..nx - 1 {
                    let sx = mx.vol(gx.points()[i]);
                    for j in 1..ny - 1 {
                        let p = rho.get(i, j);
                        if p == 0.0 {
                            continue;
                        }
                        let sy = my.vol(gy.points()[j]);
                        let q = p.abs() * sx * h2 / (sy * h1);
                        if q > 1.0 + 1e-12 {
                            return Err(MimikError::CrossPositivity {
                                i,
                                j,
                                max_rho: sy * h1 / (sx * h2),
                            });
                        }
                        coupling[i * ny + j] = q.min(1.0);
                        coupling_sign[i * ny + j] = if p > 0.0 { 1 } else { -1 };
                    }
                }
                let (coupling, coupling_sign) = (&coupling, &coupling_sign);
                (0..ny)
                    .into_par_iter()
                    .map(|j| {
                        let (down, up) = outer_rates(&outer, j);
                        tridiagonal_from_moments(
                            gx,
                            |i, x| {
                                let q = coupling[i * ny + j];
                                let s = coupling_sign[i * ny + j] as f64;
                                let sx = mx.vol(x);
                                let drift = (up - down) * q * h1 * s;
                                let var = (up + down) * q * h1 * h1;
                                (mx.drift(x) - drift, sx * sx - var)
                            },
                            Stencil::Central,
                        )
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(ConditionalFamily {
            grid_x: gx.clone(),
            grid_y: gy.clone(),
            outer,
            inner,
            mode,
            coupling,
            coupling_sign,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.grid_x.len(), self.grid_y.len())
    }

    pub fn dim(&self) -> usize {
        self.grid_x.len() * self.grid_y.len()
    }

    /// `(inner, outer)` parts of the joint generator: moves of `X` alone,
    /// and every move driven by a `Y` transition.
    pub fn split(&self) -> Result<(Generator, Generator)> {
        let (nx, ny) = self.dims();
        if self.inner.len() != ny || self.inner.iter().any(|g| g.dim() != nx) {
            return Err(MimikError::InvalidGenerator(
                "inner map must hold one generator per outer state".into(),
            ));
        }
        let n = nx * ny;
        let mut inner = Vec::new();
        for (j, g) in self.inner.iter().enumerate() {
            for (i, k, v) in g.rates.triplets() {
                inner.push((i * ny + j, k * ny + j, v));
            }
        }
        let mut outer = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                let z = i * ny + j;
                let q = self.coupling[z];
                let s = self.coupling_sign[z] as isize;
                let (cols, vals) = self.outer.rates.row(j);
                for (&k, &a) in cols.iter().zip(vals) {
                    if k == j || a == 0.0 {
                        continue;
                    }
                    let dir = if k > j { 1 } else { -1 };
                    let target_i = (i as isize + s * dir) as usize;
                    outer.push((z, i * ny + k, a * (1.0 - q)));
                    if q > 0.0 {
                        outer.push((z, target_i * ny + k, a * q));
                    }
                    outer.push((z, z, -a));
                }
            }
        }
        Ok((
            Generator::new(CsrMatrix::from_triplets(n, n, inner)),
            Generator::new(CsrMatrix::from_triplets(n, n, outer)),
        ))
    }

    /// Joint generator on `grid_x × grid_y`, axis-major.
    pub fn assemble(&self) -> Result<Generator> {
        let (a, b) = self.split()?;
        let g = Generator::new(a.rates.add(&b.rates)?);
        let report = crate::genlib::validate_generator(&g);
        if !report.passed {
            return Err(MimikError::InvalidGenerator(format!(
                "assembled conditional generator fails validation: max row sum {:e}, min rate {:e}",
                report.max_row_sum_residual, report.min_off_diagonal
            )));
        }
        Ok(g)
    }
}

fn outer_rates(outer: &Generator, j: usize) -> (f64, f64) {
    let n = outer.dim();
    let down = if j > 0 { outer.rates.get(j, j - 1) } else { 0.0 };
    let up = if j + 1 < n { outer.rates.get(j, j + 1) } else { 0.0 };
    (down, up)
}

pub fn assemble_joint_conditional(family: &ConditionalFamily) -> Result<Generator> {
    family.assemble()
}

/// Nested literal conditioning for any number of axes with a constant
/// correlation matrix: axis `k` is conditioned on axes `k+1..d`, the last
/// axis moves on its own.
pub fn assemble_nested(grids: &[&StateGrid], models: &[&ModelSpec1D], corr: &DMatrix<f64>) -> Result<Generator> {
    let d = grids.len();
    if d < 2 || models.len() != d || corr.nrows() != d || corr.ncols() != d {
        return Err(MimikError::Dimension("nested assembly needs d >= 2 matching grids, models and correlation".into()));
    }
    check_symmetric(corr)?;
    let dims: Vec<usize> = grids.iter().map(|g| g.len()).collect();
    let n = dims
        .iter()
        .try_fold(1usize, |a, &m| a.checked_mul(m))
        .filter(|&n| n <= crate::sparse::MAX_JOINT_ENTRIES)
        .ok_or(MimikError::SizeLimit {
            what: "joint states",
            requested: usize::MAX,
            limit: crate::sparse::MAX_JOINT_ENTRIES,
        })?;
    // regression weights and variance factor per axis
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut factor = Vec::with_capacity(d);
    for k in 0..d {
        if k + 1 == d {
            weights.push(Vec::new());
            factor.push(1.0);
            continue;
        }
        let p = GaussianPartition::new(DVector::zeros(d - k), corr.view((k, k), (d - k, d - k)).into_owned(), vec![0])?;
        let w = p.regression()?;
        let (s11, _, s21, _) = p.blocks();
        let f = s11[(0, 0)] - (&w * s21)[(0, 0)];
        if f < MIN_COND_VARIANCE {
            return Err(MimikError::DegenerateVariance {
                x: f64::NAN,
                variance: f,
            });
        }
        weights.push(w.iter().copied().collect());
        factor.push(f);
    }
    let mut triplets = Vec::new();
    let mut idx = vec![0; d];
    for z in 0..n {
        unravel_into(z, &dims, &mut idx);
        for k in 0..d {
            let i = idx[k];
            if grids[k].is_boundary(i) {
                continue;
            }
            let x = grids[k].points()[i];
            let sk = models[k].vol(x);
            let mut b = models[k].drift(x);
            for (off, &w) in weights[k].iter().enumerate() {
                let l = k + 1 + off;
                let y = grids[l].points()[idx[l]];
                b += w * sk / models[l].vol(y) * (y - models[l].drift(y));
            }
            let var = sk * sk * factor[k];
            let h = grids[k].h();
            if b.abs() > var / h * (1.0 + 1e-12) {
                return Err(MimikError::Positivity {
                    index: i,
                    x,
                    drift_abs: b.abs(),
                    bound: var / h,
                    admissible_h: var / b.abs(),
                });
            }
            let (down, up) = crate::genlib::node_rates(b, var, h, Stencil::Central);
            let mut to = idx.clone();
            to[k] = i - 1;
            triplets.push((z, ravel(&to, &dims), down));
            to[k] = i + 1;
            triplets.push((z, ravel(&to, &dims), up));
            triplets.push((z, z, -(down + up)));
        }
    }
    Ok(Generator::new(CsrMatrix::from_triplets(n, n, triplets)))
}
