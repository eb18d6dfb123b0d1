//! Copulas of joint chain distributions and local-correlation fitting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{MimikError, Result};
use crate::genlib::{build_generator_1d, Generator, ModelSpec1D};
use crate::grid::StateGrid;
use crate::kernel::{distribution_function, expm_apply, marginals, JointDistribution};
use crate::tensor_ops::{assemble_joint_direct, build_correlation_operator, CorrelationOperator, RhoField};

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn norm_inv(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

// Gauss-Legendre half rules (nodes on [-1, 0), weights) with 3, 6 and 10 points
const GL: [(&[f64], &[f64]); 3] = [
    (
        &[-0.9324695142031522, -0.6612093864662647, -0.238_619_186_083_197],
        &[0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
    ),
    (
        &[
            -0.9815606342467191, -0.904_117_256_370_475, -0.769_902_674_194_305,
            -0.5873179542866171, -0.3678314989981802, -0.1252334085114692,
        ],
        &[
            0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
            0.2031674267230659, 0.2334925365383547, 0.2491470458134029,
        ],
    ),
    (
        &[
            -0.9931285991850949, -0.9639719272779138, -0.912_234_428_251_326,
            -0.8391169718222188, -0.7463319064601508, -0.636_053_680_726_515,
            -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
            -0.07652652113349733,
        ],
        &[
            0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
            0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
            0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
            0.1527533871307259,
        ],
    ),
];

/// Upper orthant probability `P(X > h, Y > k)` of a standard bivariate
/// normal with correlation `r` (Drezner-Wesolowsky with Genz's refinements).
fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    let (x, w) = if r.abs() < 0.3 {
        GL[0]
    } else if r.abs() < 0.75 {
        GL[1]
    } else {
        GL[2]
    };
    let mut hk = h * k;
    let mut k = k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (xi, wi) in x.iter().zip(w) {
            for s in [-1.0, 1.0] {
                let sn = (asr * (1.0 + s * xi) / 2.0).sin();
                bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (4.0 * PI) + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k).powi(2);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a
                * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * (2.0 * PI).sqrt()
                    * norm_cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for (xi, wi) in x.iter().zip(w) {
                let xs = (a * (1.0 - xi)).powi(2);
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * wi
                    * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                        - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
                let xs = as_ * (1.0 + xi).powi(2) / 4.0;
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * wi
                    * (-(bs / xs + hk) / 2.0).exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                        - (1.0 + c * xs * (1.0 + d * xs)));
            }
            bvn = -bvn / (2.0 * PI);
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                norm_cdf(k) - norm_cdf(h)
            } else {
                norm_cdf(-h) - norm_cdf(-k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(X ≤ x, Y ≤ y)` for a standard bivariate normal with correlation `r`.
pub fn bivariate_normal_cdf(x: f64, y: f64, r: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return norm_cdf(y);
    }
    if y == f64::INFINITY {
        return norm_cdf(x);
    }
    bvn_upper(-x, -y, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Independence,
    Gaussian,
    Clayton,
    Gumbel,
    Frank,
}

/// Parametric copula used as a fitting target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetCopula {
    pub family: CopulaFamily,
    #[serde(default)]
    pub theta: Vec<f64>,
}

impl TargetCopula {
    pub fn new(family: CopulaFamily, theta: Vec<f64>) -> Result<Self> {
        let c = TargetCopula { family, theta };
        c.validate()?;
        Ok(c)
    }

    pub fn independence() -> Self {
        TargetCopula {
            family: CopulaFamily::Independence,
            theta: Vec::new(),
        }
    }

    pub fn gaussian(rho: f64) -> Result<Self> {
        Self::new(CopulaFamily::Gaussian, vec![rho])
    }

    pub fn validate(&self) -> Result<()> {
        let want = if self.family == CopulaFamily::Independence { 0 } else { 1 };
        if self.theta.len() != want {
            return Err(MimikError::Domain(format!(
                "{:?} copula takes {want} parameter(s), got {}",
                self.family,
                self.theta.len()
            )));
        }
        let ok = match (self.family, self.theta.first()) {
            (CopulaFamily::Independence, _) => true,
            (CopulaFamily::Gaussian, Some(&r)) => r > -1.0 && r < 1.0,
            (CopulaFamily::Clayton, Some(&t)) => t > 0.0 && t.is_finite(),
            (CopulaFamily::Gumbel, Some(&t)) => t >= 1.0 && t.is_finite(),
            (CopulaFamily::Frank, Some(&t)) => t != 0.0 && t.is_finite(),
            _ => false,
        };
        if !ok {
            return Err(MimikError::Domain(format!(
                "parameter {:?} outside the domain of the {:?} copula",
                self.theta, self.family
            )));
        }
        Ok(())
    }
}

/// `C(u, v)` of the target family; boundary values are exact.
pub fn target_cdf(c: &TargetCopula, u: f64, v: f64) -> Result<f64> {
    c.validate()?;
    if !((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)) {
        return Err(MimikError::Domain(format!("copula arguments ({u}, {v}) outside [0, 1]")));
    }
    Ok(eval_unchecked(c, u, v))
}

fn eval_unchecked(c: &TargetCopula, u: f64, v: f64) -> f64 {
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    if u == 1.0 {
        return v;
    }
    if v == 1.0 {
        return u;
    }
    let val = match c.family {
        CopulaFamily::Independence => u * v,
        CopulaFamily::Gaussian => {
            let r = c.theta[0];
            if r == 0.0 {
                u * v
            } else {
                bivariate_normal_cdf(norm_inv(u), norm_inv(v), r)
            }
        }
        CopulaFamily::Clayton => {
            let t = c.theta[0];
            let s = (-t * u.ln()).exp_m1() + (-t * v.ln()).exp_m1();
            (-s.ln_1p() / t).exp()
        }
        CopulaFamily::Gumbel => {
            let t = c.theta[0];
            let s = (-u.ln()).powf(t) + (-v.ln()).powf(t);
            (-s.powf(1.0 / t)).exp()
        }
        CopulaFamily::Frank => {
            let t = c.theta[0];
            let num = (-t * u).exp_m1() * (-t * v).exp_m1();
            -(num / (-t).exp_m1()).ln_1p() / t
        }
    };
    val.clamp((u + v - 1.0).max(0.0), u.min(v))
}

/// Density of the Gaussian copula.
pub fn gaussian_copula_density(u: f64, v: f64, r: f64) -> f64 {
    let (a, b) = (norm_inv(u), norm_inv(v));
    let q = 1.0 - r * r;
    (-(r * r * (a * a + b * b) - 2.0 * r * a * b) / (2.0 * q)).exp() / q.sqrt()
}

/// Copula values on the lattice of marginal CDF levels, with an explicit
/// leading zero level on both axes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CopulaSurface {
    pub u_axis: Vec<f64>,
    pub v_axis: Vec<f64>,
    /// Row-major over `(u, v)`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub grounded_residual: f64,
    pub margin_residual: f64,
    pub min_rectangle_volume: f64,
    /// Largest excursion outside the Fréchet bounds.
    pub frechet_excess: f64,
    pub passed: bool,
}

impl CopulaSurface {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.v_axis.len() + j]
    }

    /// Checks groundedness and uniform margins (1e-9), the 2-increasing
    /// property (-1e-9) and the Fréchet bounds within `frechet_tol`.
    pub fn check(&self, frechet_tol: f64) -> AxiomReport {
        let (nu, nv) = (self.u_axis.len(), self.v_axis.len());
        let mut grounded = 0.0f64;
        let mut margin = 0.0f64;
        let mut min_vol = f64::INFINITY;
        let mut frechet = 0.0f64;
        for i in 0..nu {
            for j in 0..nv {
                let (u, v, c) = (self.u_axis[i], self.v_axis[j], self.get(i, j));
                if u == 0.0 || v == 0.0 {
                    grounded = grounded.max(c.abs());
                }
                if (u - 1.0).abs() < 1e-12 {
                    margin = margin.max((c - v).abs());
                }
                if (v - 1.0).abs() < 1e-12 {
                    margin = margin.max((c - u).abs());
                }
                let lower = (u + v - 1.0).max(0.0);
                frechet = frechet.max(lower - c).max(c - u.min(v));
                if i > 0 && j > 0 {
                    let vol = c - self.get(i - 1, j) - self.get(i, j - 1) + self.get(i - 1, j - 1);
                    min_vol = min_vol.min(vol);
                }
            }
        }
        if min_vol == f64::INFINITY {
            min_vol = 0.0;
        }
        AxiomReport {
            grounded_residual: grounded,
            margin_residual: margin,
            min_rectangle_volume: min_vol,
            frechet_excess: frechet.max(0.0),
            passed: grounded <= 1e-9 && margin <= 1e-9 && min_vol >= -1e-9 && frechet <= frechet_tol,
        }
    }

    /// `(u, v, C)` rows.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.values.len());
        for (i, &u) in self.u_axis.iter().enumerate() {
            for (j, &v) in self.v_axis.iter().enumerate() {
                out.push(vec![u, v, self.get(i, j)]);
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        crate::export::write_columns(w, &["u", "v", "C"], &self.rows())
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |s, &x| {
            *s += x;
            Some(*s)
        })
        .collect()
}

/// Copula read off a bivariate cumulative tensor `f` (row-major `n1 × n2`)
/// through its marginal CDFs.
pub fn empirical_copula(f: &[f64], cdf_u: &[f64], cdf_v: &[f64]) -> Result<CopulaSurface> {
    let (n1, n2) = (cdf_u.len(), cdf_v.len());
    if f.len() != n1 * n2 {
        return Err(MimikError::Dimension(format!(
            "cumulative tensor has {} entries, marginals imply {}",
            f.len(),
            n1 * n2
        )));
    }
    for (name, c) in [("u", cdf_u), ("v", cdf_v)] {
        if let Some(k) = c.windows(2).position(|w| w[1] < w[0] - 1e-12) {
            return Err(MimikError::Domain(format!(
                "marginal CDF on axis {name} decreases at index {}",
                k + 1
            )));
        }
        if c.iter().any(|&x| !(-1e-12..=1.0 + 1e-9).contains(&x)) {
            return Err(MimikError::Domain(format!("marginal CDF on axis {name} leaves [0, 1]")));
        }
    }
    let clean = |c: &[f64]| {
        let mut a = vec![0.0];
        a.extend(c.iter().map(|x| x.clamp(0.0, 1.0)));
        a
    };
    let u_axis = clean(cdf_u);
    let v_axis = clean(cdf_v);
    let mut values = vec![0.0; (n1 + 1) * (n2 + 1)];
    for i in 0..n1 {
        for j in 0..n2 {
            values[(i + 1) * (n2 + 1) + j + 1] = f[i * n2 + j].clamp(0.0, 1.0);
        }
    }
    Ok(CopulaSurface { u_axis, v_axis, values })
}

/// Copula of a bivariate joint distribution.
pub fn copula_of(dist: &JointDistribution) -> Result<CopulaSurface> {
    if dist.axes.len() != 2 {
        return Err(MimikError::Dimension("copula extraction is bivariate".into()));
    }
    let f = distribution_function(dist);
    let m = marginals(dist);
    empirical_copula(&f, &cumulative(&m[0]), &cumulative(&m[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Coordinate sweeps allowed per level.
    pub max_iter: usize,
    /// Blocks per axis at each refinement level.
    pub levels: Vec<usize>,
    pub initial_step: f64,
    /// Converged once the step falls below this.
    pub step_tol: f64,
    pub kernel_tol: f64,
    /// Starting grid indices; the grid midpoints by default.
    pub start: Option<(usize, usize)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 200,
            levels: vec![1, 2, 4],
            initial_step: 0.5,
            step_tol: 1e-3,
            kernel_tol: 1e-10,
            start: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub rho_field: RhoField,
    /// Unconstrained block parameters of the last level, row-major.
    pub params: Vec<f64>,
    pub blocks: usize,
    pub objective: f64,
    pub initial_objective: f64,
    /// Objective after every accepted move.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Forward map from a correlation field to the model copula on a fixed
/// pair of grids and marginal models.
pub struct CopulaModel {
    pub gx: StateGrid,
    pub gy: StateGrid,
    pub mx: ModelSpec1D,
    pub my: ModelSpec1D,
    a1: Generator,
    a2: Generator,
    pub start: (usize, usize),
    pub t: f64,
    pub tol: f64,
}

impl CopulaModel {
    pub fn new(
        gx: &StateGrid,
        gy: &StateGrid,
        mx: &ModelSpec1D,
        my: &ModelSpec1D,
        start: (usize, usize),
        t: f64,
        tol: f64,
    ) -> Result<Self> {
        Ok(CopulaModel {
            a1: build_generator_1d(gx, mx)?,
            a2: build_generator_1d(gy, my)?,
            gx: gx.clone(),
            gy: gy.clone(),
            mx: mx.clone(),
            my: my.clone(),
            start,
            t,
            tol,
        })
    }

    pub fn generator(&self, rho: &RhoField) -> Result<(Generator, CorrelationOperator)> {
        let c = build_correlation_operator(&self.gx, &self.gy, &self.mx, &self.my, rho)?;
        Ok((assemble_joint_direct(&self.a1, &self.a2, &c)?, c))
    }

    pub fn distribution(&self, rho: &RhoField) -> Result<JointDistribution> {
        let (q, _) = self.generator(rho)?;
        let ny = self.gy.len();
        let mut v = vec![0.0; q.dim()];
        v[self.start.0 * ny + self.start.1] = 1.0;
        let pmf = expm_apply(&q, &v, self.t, self.tol)?;
        JointDistribution::new(
            vec![self.gx.clone(), self.gy.clone()],
            pmf,
            vec![self.start.0, self.start.1],
        )
    }

    pub fn copula(&self, rho: &RhoField) -> Result<CopulaSurface> {
        copula_of(&self.distribution(rho)?)
    }
}

/// Squared distance between a target and a model surface on the model lattice.
pub fn copula_distance(target: &TargetCopula, surface: &CopulaSurface) -> f64 {
    let mut s = 0.0;
    for (i, &u) in surface.u_axis.iter().enumerate() {
        for (j, &v) in surface.v_axis.iter().enumerate() {
            let d = eval_unchecked(target, u, v) - surface.get(i, j);
            s += d * d;
        }
    }
    s
}

/// Block index of each grid point: equal-mass bins of the marginal CDF.
fn block_map(cdf: &[f64], blocks: usize) -> Vec<usize> {
    let mut prev = 0.0;
    cdf.iter()
        .map(|&c| {
            let mid = 0.5 * (prev + c);
            prev = c;
            ((mid * blocks as f64) as usize).min(blocks - 1)
        })
        .collect()
}

/// Least-squares fit of a blockwise-constant field `ρ = tanh(p)` so the
/// model copula matches `target`, refined coarse to fine.
pub fn fit_local_correlation(
    target: &TargetCopula,
    mx: &ModelSpec1D,
    my: &ModelSpec1D,
    gx: &StateGrid,
    gy: &StateGrid,
    t: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    target.validate()?;
    let (nx, ny) = (gx.len(), gy.len());
    if nx * ny > 10_000 {
        return Err(MimikError::SizeLimit {
            what: "joint states for copula fitting",
            requested: nx * ny,
            limit: 10_000,
        });
    }
    if opts.levels.is_empty() || opts.levels.contains(&0) {
        return Err(MimikError::Domain("fit levels must be positive block counts".into()));
    }
    let start = opts.start.unwrap_or((nx / 2, ny / 2));
    let model = CopulaModel::new(gx, gy, mx, my, start, t, opts.kernel_tol)?;
    // marginals do not depend on the correlation field
    let base = model.distribution(&RhoField::constant(nx, ny, 0.0))?;
    let m = marginals(&base);
    let (cu, cv) = (cumulative(&m[0]), cumulative(&m[1]));

    let mut evaluations = 0usize;
    let field_of = |p: &[f64], nb: usize| -> Result<RhoField> {
        let (bx, by) = (block_map(&cu, nb), block_map(&cv, nb));
        let vals = (0..nx)
            .flat_map(|i| {
                let bx = &bx;
                let by = &by;
                (0..ny).map(move |j| p[bx[i] * nb + by[j]].tanh())
            })
            .collect();
        RhoField::new(nx, ny, vals)
    };
    let objective = |p: &[f64], nb: usize, evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let field = field_of(p, nb)?;
        match model.copula(&field) {
            Ok(s) => Ok(copula_distance(target, &s)),
            Err(MimikError::CrossPositivity { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };

    let mut nb = opts.levels[0];
    let mut p = vec![0.0; nb * nb];
    let initial = objective(&p, nb, &mut evaluations)?;
    let mut best = initial;
    let mut trace = vec![initial];
    let mut iterations = 0;
    let mut converged = true;
    for (level, &blocks) in opts.levels.iter().enumerate() {
        if level > 0 {
            // prolong the previous level's parameters onto the finer blocks
            let prev = nb;
            let mut fine = vec![0.0; blocks * blocks];
            for a in 0..blocks {
                for b in 0..blocks {
                    let pa = a * prev / blocks;
                    let pb = b * prev / blocks;
                    fine[a * blocks + b] = p[pa * prev + pb];
                }
            }
            p = fine;
            nb = blocks;
        }
        let mut step = opts.initial_step;
        let mut sweeps = 0;
        while step >= opts.step_tol {
            if sweeps >= opts.max_iter {
                converged = false;
                break;
            }
            sweeps += 1;
            let mut improved = false;
            for c in 0..p.len() {
                for dir in [1.0, -1.0] {
                    let mut cand = p.clone();
                    cand[c] += dir * step;
                    let val = objective(&cand, nb, &mut evaluations)?;
                    if val < best {
                        best = val;
                        p = cand;
                        trace.push(val);
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        iterations += sweeps;
    }
    let rho_field = field_of(&p, nb)?;
    Ok(FitResult {
        rho_field,
        params: p,
        blocks: nb,
        objective: best,
        initial_objective: initial,
        trace,
        iterations,
        evaluations,
        converged,
    })
}

/// Model copula density against the Gaussian copula density at the
/// operator's local correlation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub h: f64,
    pub rho: f64,
    pub sup_discrepancy: f64,
    pub at: Option<(f64, f64)>,
    pub cells: usize,
}

/// Compares `pmf_ij / (π₁ᵢ π₂ⱼ)` at cell-midpoint copula coordinates in
/// `[0.05, 0.95]²` with the Gaussian copula density of the correlation at
/// the starting cell.
pub fn copula_density_check(
    c_op: &CorrelationOperator,
    joint: &Generator,
    gx: &StateGrid,
    gy: &StateGrid,
    start: (usize, usize),
    t: f64,
    tol: f64,
) -> Result<DensityReport> {
    let (nx, ny) = (gx.len(), gy.len());
    if c_op.dims != [nx, ny] || joint.dim() != nx * ny {
        return Err(MimikError::Dimension("operator, generator and grids disagree".into()));
    }
    let rho = c_op.rho[start.0 * ny + start.1];
    let mut v = vec![0.0; nx * ny];
    v[start.0 * ny + start.1] = 1.0;
    let pmf = expm_apply(joint, &v, t, tol)?;
    let dist = JointDistribution::new(vec![gx.clone(), gy.clone()], pmf, vec![start.0, start.1])?;
    let m = marginals(&dist);
    let (cu, cv) = (cumulative(&m[0]), cumulative(&m[1]));
    let mid = |c: &[f64], k: usize| 0.5 * (c[k] + if k > 0 { c[k - 1] } else { 0.0 });
    let mut sup = 0.0f64;
    let mut at = None;
    let mut cells = 0;
    for i in 0..nx {
        let u = mid(&cu, i);
        if !(0.05..=0.95).contains(&u) || m[0][i] <= 0.0 {
            continue;
        }
        for j in 0..ny {
            let w = mid(&cv, j);
            if !(0.05..=0.95).contains(&w) || m[1][j] <= 0.0 {
                continue;
            }
            cells += 1;
            let model = dist.pmf[i * ny + j] / (m[0][i] * m[1][j]);
            let reference = gaussian_copula_density(u, w, rho);
            let d = (model - reference).abs();
            if d > sup {
                sup = d;
                at = Some((u, w));
            }
        }
    }
    Ok(DensityReport {
        h: gx.h(),
        rho,
        sup_discrepancy: sup,
        at,
        cells,
    })
}

/// Density check over a sequence of spacings on `[lo, hi]²` with constant `ρ`.
pub fn copula_density_sweep(
    mx: &ModelSpec1D,
    my: &ModelSpec1D,
    rho: f64,
    lo: f64,
    hi: f64,
    hs: &[f64],
    t: f64,
    tol: f64,
) -> Result<Vec<DensityReport>> {
    hs.iter()
        .map(|&h| {
            let g = StateGrid::with_spacing(lo, hi, h)?;
            let field = RhoField::constant(g.len(), g.len(), rho);
            let model = CopulaModel::new(&g, &g, mx, my, (g.len() / 2, g.len() / 2), t, tol)?;
            let (q, c) = model.generator(&field)?;
            copula_density_check(&c, &q, &g, &g, model.start, t, tol)
        })
        .collect()
}
