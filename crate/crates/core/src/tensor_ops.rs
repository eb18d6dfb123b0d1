//! Kronecker algebra on rate matrices and the explicit correlation operator.
//!
//! Joint states are indexed axis-major: for axes of sizes `(n1, n2, ..)`
//! the state `(i1, i2, ..)` sits at `((i1 * n2) + i2) * n3 + ..`, matching
//! `A ⊗ I + I ⊗ B`.
//!
//! The correlation operator realizes `ρ σ₁ σ₂ ∂²/∂x∂y` with the nine-point
//! stencil split into a diagonal part (credited) and two axial parts
//! (debited). For `ρ > 0` the credited moves are `(i±1, j±1)`, for `ρ < 0`
//! the anti-diagonal `(i±1, j∓1)`. Each carries the intensity
//! `r = |ρ| σ₁ σ₂ / (2 h₁ h₂)`, and the same `r` is taken off each of the four
//! axial moves, so rows still sum to zero and each marginal's rates are left
//! untouched.

use serde::Serialize;

use crate::error::{MimikError, Result};
use crate::genlib::{node_rates, sanitize_generator, Generator, ModelSpec1D, Stencil};
use crate::grid::StateGrid;
use crate::sparse::{CsrMatrix, MAX_JOINT_ENTRIES};

/// Largest admissible `|ρ|`.
pub const RHO_CLAMP: f64 = 1.0 - 1e-9;

/// Local correlation `ρ(x_i, y_j)` over a grid pair, row-major in `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoField {
    n1: usize,
    n2: usize,
    values: Vec<f64>,
}

impl RhoField {
    pub fn new(n1: usize, n2: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n1 * n2 {
            return Err(MimikError::Dimension(format!(
                "rho field needs {} values, got {}",
                n1 * n2,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(MimikError::Domain(format!("rho value {v} is not finite")));
        }
        let values = values.into_iter().map(|v| v.clamp(-RHO_CLAMP, RHO_CLAMP)).collect();
        Ok(RhoField { n1, n2, values })
    }

    pub fn constant(n1: usize, n2: usize, rho: f64) -> Self {
        Self::new(n1, n2, vec![rho; n1 * n2]).expect("constant field")
    }

    pub fn from_fn(gx: &StateGrid, gy: &StateGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = gx
            .points()
            .iter()
            .flat_map(|&x| gy.points().iter().map(move |&y| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(gx.len(), gy.len(), values)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n2 + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn negated(&self) -> Self {
        RhoField {
            n1: self.n1,
            n2: self.n2,
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    /// Row-major matrix view for JSON output.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n2).map(|c| c.to_vec()).collect()
    }
}

/// Dependence-only rate perturbation on a joint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationOperator {
    pub matrix: CsrMatrix,
    /// Sign of ρ at each cell of the pair (row-major), 0 where inactive.
    pub sign_pattern: Vec<i8>,
    /// Cross intensity `r_ij` at each cell of the pair.
    pub intensity: Vec<f64>,
    /// Local correlation of the pair cell (row-major), after clamping.
    pub rho: Vec<f64>,
    pub dims: Vec<usize>,
    pub axes: (usize, usize),
}

fn guard(what: &'static str, requested: usize) -> Result<()> {
    if requested > MAX_JOINT_ENTRIES {
        Err(MimikError::SizeLimit {
            what,
            requested,
            limit: MAX_JOINT_ENTRIES,
        })
    } else {
        Ok(())
    }
}

/// Standard Kronecker product.
pub fn kron_prod(a: &CsrMatrix, b: &CsrMatrix) -> Result<CsrMatrix> {
    let rows = a.nrows().saturating_mul(b.nrows());
    let cols = a.ncols().saturating_mul(b.ncols());
    guard("kronecker product rows", rows)?;
    guard("kronecker product cols", cols)?;
    guard(
        "kronecker product entries",
        a.nnz().saturating_mul(b.nnz()),
    )?;
    let mut out = Vec::with_capacity(rows);
    for i in 0..a.nrows() {
        let (ac, av) = a.row(i);
        for k in 0..b.nrows() {
            let (bc, bv) = b.row(k);
            let mut row = Vec::with_capacity(ac.len() * bc.len());
            for (&j, &x) in ac.iter().zip(av) {
                for (&l, &y) in bc.iter().zip(bv) {
                    row.push((j * b.ncols() + l, x * y));
                }
            }
            out.push(row);
        }
    }
    Ok(CsrMatrix::from_rows(cols, out))
}

/// `A ⊕ B = A ⊗ I + I ⊗ B`.
pub fn kron_sum(a: &CsrMatrix, b: &CsrMatrix) -> Result<CsrMatrix> {
    if !a.is_square() || !b.is_square() {
        return Err(MimikError::Dimension("kronecker sum needs square operands".into()));
    }
    let left = kron_prod(a, &CsrMatrix::identity(b.nrows()))?;
    let right = kron_prod(&CsrMatrix::identity(a.nrows()), b)?;
    left.add(&right)
}

/// Generator of independent chains run jointly: `A₁ ⊕ A₂ ⊕ ..`.
pub fn assemble_independent(gens: &[&Generator]) -> Result<Generator> {
    if !(2..=4).contains(&gens.len()) {
        return Err(MimikError::SizeLimit {
            what: "number of independent factors (2..=4)",
            requested: gens.len(),
            limit: 4,
        });
    }
    let mut acc = gens[0].rates.clone();
    for g in &gens[1..] {
        acc = kron_sum(&acc, &g.rates)?;
    }
    Ok(Generator::new(acc))
}

/// Axis-major flat index of a multi-index.
pub fn ravel(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |z, (&i, &n)| z * n + i)
}

/// Correlation operator between axes `a` and `b` of a `d`-dimensional
/// joint grid. Other axes are left alone.
pub fn build_pair_correlation_operator(
    grids: &[&StateGrid],
    models: &[&ModelSpec1D],
    a: usize,
    b: usize,
    rho: &RhoField,
) -> Result<CorrelationOperator> {
    if grids.len() != models.len() || a >= grids.len() || b >= grids.len() || a == b {
        return Err(MimikError::Dimension("bad axis pair for correlation operator".into()));
    }
    let (ga, gb) = (grids[a], grids[b]);
    if rho.shape() != (ga.len(), gb.len()) {
        return Err(MimikError::Dimension(format!(
            "rho field shape {:?} does not match grids ({}, {})",
            rho.shape(),
            ga.len(),
            gb.len()
        )));
    }
    let dims: Vec<usize> = grids.iter().map(|g| g.len()).collect();
    let total = dims.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX);
    guard("joint states", total)?;
    let (ha, hb) = (ga.h(), gb.h());

    // pair-level rates, then replicated over the remaining axes
    let (na, nb) = (ga.len(), gb.len());
    let mut sign = vec![0i8; na * nb];
    let mut intensity = vec![0.0; na * nb];
    for i in 1..na - 1 {
        let x = ga.points()[i];
        let sa = models[a].vol(x);
        let (a_down, a_up) = node_rates(models[a].drift(x), sa * sa, ha, Stencil::Central);
        for j in 1..nb - 1 {
            let y = gb.points()[j];
            let p = rho.get(i, j);
            if p == 0.0 {
                continue;
            }
            let sb = models[b].vol(y);
            let (b_down, b_up) = node_rates(models[b].drift(y), sb * sb, hb, Stencil::Central);
            let r = p.abs() * sa * sb / (2.0 * ha * hb);
            let budget = a_down.min(a_up).min(b_down).min(b_up);
            if r > budget * (1.0 + 1e-12) {
                return Err(MimikError::CrossPositivity {
                    i,
                    j,
                    max_rho: (budget * 2.0 * ha * hb / (sa * sb)).max(0.0),
                });
            }
            sign[i * nb + j] = if p > 0.0 { 1 } else { -1 };
            intensity[i * nb + j] = r;
        }
    }

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); total];
    let mut idx = vec![0usize; dims.len()];
    for (z, row) in rows.iter_mut().enumerate() {
        unravel_into(z, &dims, &mut idx);
        let (i, j) = (idx[a], idx[b]);
        let cell = i * nb + j;
        let r = intensity[cell];
        if r == 0.0 {
            continue;
        }
        let mut at = |di: isize, dj: isize, v: f64, idx: &mut [usize]| {
            idx[a] = (i as isize + di) as usize;
            idx[b] = (j as isize + dj) as usize;
            row.push((ravel(idx, &dims), v));
            idx[a] = i;
            idx[b] = j;
        };
        let s = sign[cell] as isize;
        at(1, s, r, &mut idx);
        at(-1, -s, r, &mut idx);
        at(1, 0, -r, &mut idx);
        at(-1, 0, -r, &mut idx);
        at(0, 1, -r, &mut idx);
        at(0, -1, -r, &mut idx);
        row.push((z, 2.0 * r));
    }
    Ok(CorrelationOperator {
        matrix: CsrMatrix::from_rows(total, rows),
        sign_pattern: sign,
        intensity,
        rho: rho.values().to_vec(),
        dims,
        axes: (a, b),
    })
}

/// Bivariate correlation operator on `gx × gy`.
pub fn build_correlation_operator(
    gx: &StateGrid,
    gy: &StateGrid,
    mx: &ModelSpec1D,
    my: &ModelSpec1D,
    rho: &RhoField,
) -> Result<CorrelationOperator> {
    build_pair_correlation_operator(&[gx, gy], &[mx, my], 0, 1, rho)
}

/// `A₁ ⊕ A₂ + A^(c)`, checked cell by cell for negative rates.
pub fn assemble_joint_direct(
    a1: &Generator,
    a2: &Generator,
    c: &CorrelationOperator,
) -> Result<Generator> {
    if c.dims != [a1.dim(), a2.dim()] {
        return Err(MimikError::Dimension(format!(
            "correlation operator dims {:?} vs marginals ({}, {})",
            c.dims,
            a1.dim(),
            a2.dim()
        )));
    }
    let base = assemble_independent(&[a1, a2])?;
    add_correlation(base, &[c])
}

/// Adds any number of pairwise correlation operators to an independent
/// joint generator.
pub fn add_correlation(base: Generator, ops: &[&CorrelationOperator]) -> Result<Generator> {
    let mut rates = base.rates;
    for c in ops {
        rates = rates.add(&c.matrix)?;
    }
    let dims = ops.first().map(|c| c.dims.clone()).unwrap_or_default();
    for (r, col, v) in rates.triplets() {
        if r != col && v < -1e-12 * (1.0 + rates.row(r).1.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
            let cell = if dims.is_empty() { vec![r] } else { crate::kernel::unravel(r, &dims) };
            return Err(MimikError::InvalidGenerator(format!(
                "negative joint rate {v} at cell {cell:?} (target state {col})"
            )));
        }
    }
    sanitize_generator(&Generator::new(rates))
}

pub(crate) fn unravel_into(mut z: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = z % dims[k];
        z /= dims[k];
    }
}

/// Instantaneous mean vector and second-moment matrix of a joint chain at
/// state `z`.
pub fn joint_local_moments(
    q: &Generator,
    grids: &[&StateGrid],
    z: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dims: Vec<usize> = grids.iter().map(|g| g.len()).collect();
    let d = dims.len();
    let mut from = vec![0; d];
    let mut to = vec![0; d];
    unravel_into(z, &dims, &mut from);
    let mut mean = vec![0.0; d];
    let mut second = vec![vec![0.0; d]; d];
    let (cols, vals) = q.rates.row(z);
    for (&c, &a) in cols.iter().zip(vals) {
        if c == z {
            continue;
        }
        unravel_into(c, &dims, &mut to);
        let dx: Vec<f64> = (0..d)
            .map(|k| grids[k].points()[to[k]] - grids[k].points()[from[k]])
            .collect();
        for k in 0..d {
            mean[k] += a * dx[k];
            for l in 0..d {
                second[k][l] += a * dx[k] * dx[l];
            }
        }
    }
    (mean, second)
}
