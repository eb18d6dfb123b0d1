//! Transition kernels and evolved distributions of finite-state chains.
//!
//! The forward equation `∂U/∂t = A U` is solved by uniformization: with
//! `Λ ≥ max_i |Q_ii|` and `P̃ = I + Q/Λ`,
//!
//! ```text
//! v e^{tQ} = Σ_k e^{-Λt} (Λt)^k / k! · v P̃^k
//! ```
//!
//! truncated once the remaining Poisson mass is below the tolerance. Every
//! term is a stochastic matrix power, so the truncation error bounds the
//! total-variation error directly.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::conditional::ConditionalFamily;
use crate::error::{MimikError, Result};
use crate::genlib::Generator;
use crate::grid::StateGrid;

pub const DEFAULT_TOL: f64 = 1e-10;
/// Dense kernels are only materialized up to this many states.
pub const MAX_DENSE_KERNEL: usize = 20_000;
/// Size up to which the dense scaling-and-squaring exponential is used as a cross-check.
pub const MAX_DENSE_EXPM: usize = 600;

/// Flat axis-major index to multi-index.
pub fn unravel(z: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    crate::tensor_ops::unravel_into(z, dims, &mut out);
    out
}

/// Poisson(λt) weights up to the smallest `K` whose upper tail is `<= tol`.
fn poisson_weights(lt: f64, tol: f64) -> Vec<f64> {
    let ln_lt = lt.ln();
    let mut log_w = -lt;
    let mut weights = Vec::new();
    let mut cum = 0.0;
    let mut k = 0usize;
    loop {
        let w = log_w.exp();
        weights.push(w);
        cum += w;
        // past the mode the tail is monotone; stop when it is below tol
        if (k as f64) > lt && 1.0 - cum <= tol {
            break;
        }
        k += 1;
        log_w += ln_lt - (k as f64).ln();
        if k > 10_000_000 {
            break;
        }
    }
    weights
}

fn check_time(t: f64, tol: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(MimikError::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(MimikError::Domain(format!("tolerance must lie in (0, 1e-4], got {tol}")));
    }
    Ok(())
}

/// Distribution at time `t` of the chain started from `v`, i.e. `v e^{tQ}`.
pub fn expm_apply(q: &Generator, v: &[f64], t: f64, tol: f64) -> Result<Vec<f64>> {
    check_time(t, tol)?;
    if v.len() != q.dim() {
        return Err(MimikError::Dimension(format!(
            "vector has {} entries, generator {} states",
            v.len(),
            q.dim()
        )));
    }
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(MimikError::Domain("initial distribution has negative entries".into()));
    }
    let mass: f64 = v.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(MimikError::Domain(format!("initial distribution sums to {mass}")));
    }
    let lambda = q.max_exit_rate();
    if lambda == 0.0 || t == 0.0 {
        return Ok(v.to_vec());
    }
    let weights = poisson_weights(lambda * t, tol);
    let mut term = v.to_vec();
    let mut scratch = vec![0.0; v.len()];
    let mut out: Vec<f64> = term.iter().map(|x| x * weights[0]).collect();
    for &w in &weights[1..] {
        q.rates.vec_mul_into(&term, &mut scratch);
        for (t, s) in term.iter_mut().zip(&scratch) {
            *t += s / lambda;
        }
        if w > 0.0 {
            for (o, t) in out.iter_mut().zip(&term) {
                *o += w * t;
            }
        }
    }
    Ok(normalize(out))
}

fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    p.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|x| *x /= s);
    }
    p
}

/// Dense `e^{A}` by scaling and squaring a degree-20 Taylor polynomial.
pub fn expm_dense(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = (0..n)
        .map(|c| a.column(c).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// Row-stochastic transition matrix `P(t) = e^{tQ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticKernel {
    pub dim: usize,
    /// Row-major probabilities.
    pub probs: Vec<f64>,
    pub t: f64,
}

impl StochasticKernel {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.probs)
    }

    /// `self · other`, the kernel of running `self` then `other`.
    pub fn compose(&self, other: &StochasticKernel) -> StochasticKernel {
        let p = self.to_dense() * other.to_dense();
        StochasticKernel {
            dim: self.dim,
            probs: p.transpose().as_slice().to_vec(),
            t: self.t + other.t,
        }
    }

    pub fn max_abs_diff(&self, other: &StochasticKernel) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest total-variation distance between matching rows.
    pub fn max_row_tv(&self, other: &StochasticKernel) -> f64 {
        (0..self.dim)
            .map(|i| total_variation(self.row(i), other.row(i)))
            .fold(0.0, f64::max)
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.dim)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Full kernel, one uniformization solve per starting state.
pub fn transition_kernel(q: &Generator, t: f64, tol: f64) -> Result<StochasticKernel> {
    check_time(t, tol)?;
    let n = q.dim();
    if n > MAX_DENSE_KERNEL {
        return Err(MimikError::SizeLimit {
            what: "dense kernel states",
            requested: n,
            limit: MAX_DENSE_KERNEL,
        });
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            expm_apply(q, &e, t, tol)
        })
        .collect::<Result<_>>()?;
    Ok(StochasticKernel {
        dim: n,
        probs: rows.concat(),
        t,
    })
}

/// Kernel of an assembled joint generator.
pub fn joint_kernel_direct(joint: &Generator, t: f64, tol: f64) -> Result<StochasticKernel> {
    transition_kernel(joint, t, tol)
}

/// Exact kernel of the conditional decomposition together with the
/// product-of-exponentials approximation and their gap.
#[derive(Debug, Clone)]
pub struct ConditionalKernel {
    pub exact: StochasticKernel,
    /// `e^{t B_inner} e^{t B_outer}`: inner moves first, then the
    /// conditioning chain. Exact only when the two parts commute.
    pub factorized: StochasticKernel,
    /// Largest row total-variation distance between the two.
    pub deviation: f64,
}

pub fn joint_kernel_conditional(
    family: &ConditionalFamily,
    t: f64,
    tol: f64,
) -> Result<ConditionalKernel> {
    let exact = transition_kernel(&family.assemble()?, t, tol)?;
    let (inner, outer) = family.split()?;
    let kin = transition_kernel(&inner, t, tol)?;
    let kout = transition_kernel(&outer, t, tol)?;
    let mut factorized = kin.compose(&kout);
    factorized.t = t;
    let deviation = exact.max_row_tv(&factorized);
    Ok(ConditionalKernel {
        exact,
        factorized,
        deviation,
    })
}

/// Splitting gap for a single starting state, without materializing full kernels.
pub fn splitting_deviation_from(
    family: &ConditionalFamily,
    start: usize,
    t: f64,
    tol: f64,
) -> Result<f64> {
    let n = family.dim();
    let mut e = vec![0.0; n];
    e[start] = 1.0;
    let exact = expm_apply(&family.assemble()?, &e, t, tol)?;
    let (inner, outer) = family.split()?;
    let mid = expm_apply(&inner, &e, t, tol)?;
    let fact = expm_apply(&outer, &mid, t, tol)?;
    Ok(total_variation(&exact, &fact))
}

/// Joint probabilities on a tensor of grids, axis-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub axes: Vec<StateGrid>,
    pub pmf: Vec<f64>,
    pub init: Vec<usize>,
}

impl JointDistribution {
    pub fn new(axes: Vec<StateGrid>, pmf: Vec<f64>, init: Vec<usize>) -> Result<Self> {
        let n: usize = axes.iter().map(|g| g.len()).product();
        if pmf.len() != n || init.len() != axes.len() {
            return Err(MimikError::Dimension(format!(
                "pmf has {} entries for {} joint states",
                pmf.len(),
                n
            )));
        }
        if pmf.iter().any(|&p| p < 0.0) {
            return Err(MimikError::Domain("pmf has negative entries".into()));
        }
        let mass: f64 = pmf.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(MimikError::Domain(format!("pmf sums to {mass}")));
        }
        Ok(JointDistribution { axes, pmf, init })
    }

    /// Evolves a point mass at `init` for time `t` under `q`.
    pub fn evolve(q: &Generator, axes: Vec<StateGrid>, init: Vec<usize>, t: f64, tol: f64) -> Result<Self> {
        let dims = axes.iter().map(|g| g.len()).collect::<Vec<_>>();
        if dims.iter().product::<usize>() != q.dim() {
            return Err(MimikError::Dimension("axes do not match generator size".into()));
        }
        if init.iter().zip(&dims).any(|(&i, &n)| i >= n) || init.len() != dims.len() {
            return Err(MimikError::Dimension("initial state outside the grid".into()));
        }
        let mut v = vec![0.0; q.dim()];
        v[crate::tensor_ops::ravel(&init, &dims)] = 1.0;
        let pmf = expm_apply(q, &v, t, tol)?;
        Self::new(axes, pmf, init)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|g| g.len()).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let dims = self.dims();
        let mut m = vec![0.0; dims.len()];
        for (z, &p) in self.pmf.iter().enumerate() {
            for (k, &i) in unravel(z, &dims).iter().enumerate() {
                m[k] += p * self.axes[k].points()[i];
            }
        }
        m
    }

    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let dims = self.dims();
        let mu = self.mean();
        let d = dims.len();
        let mut c = vec![vec![0.0; d]; d];
        for (z, &p) in self.pmf.iter().enumerate() {
            let idx = unravel(z, &dims);
            let dx: Vec<f64> = (0..d).map(|k| self.axes[k].points()[idx[k]] - mu[k]).collect();
            for a in 0..d {
                for b in 0..d {
                    c[a][b] += p * dx[a] * dx[b];
                }
            }
        }
        c
    }

    pub fn correlation(&self) -> Vec<Vec<f64>> {
        let c = self.covariance();
        let d = c.len();
        (0..d)
            .map(|a| (0..d).map(|b| c[a][b] / (c[a][a] * c[b][b]).sqrt()).collect())
            .collect()
    }

    pub fn summary(&self) -> MomentSummary {
        MomentSummary {
            mass: self.pmf.iter().sum(),
            mean: self.mean(),
            covariance: self.covariance(),
            correlation: self.correlation(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentSummary {
    pub mass: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
}

/// Cumulative tensor `F(i, j, ..) = Σ_{i' <= i, j' <= j, ..} pmf`.
pub fn distribution_function(dist: &JointDistribution) -> Vec<f64> {
    let dims = dist.dims();
    let mut f = dist.pmf.clone();
    let mut stride = 1;
    for k in (0..dims.len()).rev() {
        let n = dims[k];
        for z in 0..f.len() {
            let i = (z / stride) % n;
            if i > 0 {
                f[z] += f[z - stride];
            }
        }
        stride *= n;
    }
    f
}

/// Axis marginals of a joint distribution.
pub fn marginals(dist: &JointDistribution) -> Vec<Vec<f64>> {
    let dims = dist.dims();
    let mut out: Vec<Vec<f64>> = dims.iter().map(|&n| vec![0.0; n]).collect();
    let mut idx = vec![0; dims.len()];
    for (z, &p) in dist.pmf.iter().enumerate() {
        crate::tensor_ops::unravel_into(z, &dims, &mut idx);
        for (k, &i) in idx.iter().enumerate() {
            out[k][i] += p;
        }
    }
    out
}
