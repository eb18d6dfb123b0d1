//! Browser bindings for three small mimik computations: a one-dimensional
//! chain against its diffusion law, the copula of a correlated pair, and
//! the generator symbol against the characteristic function.
//!
//! The `compute_*` functions are plain Rust so they can be tested natively;
//! the `#[wasm_bindgen]` wrappers only translate errors.

use mimik::copula::copula_of;
use mimik::genlib::{build_generator_1d, ModelSpec1D};
use mimik::grid::StateGrid;
use mimik::kernel::{expm_apply, JointDistribution, DEFAULT_TOL};
use mimik::spectral::{continuous_cf, symbol_1d, SymbolSpec};
use mimik::tensor_ops::{assemble_joint_direct, build_correlation_operator, RhoField};
use mimik::{MimikError, Result};
use wasm_bindgen::prelude::*;

const HALF_WIDTH: f64 = 5.0;
/// Finest spacing the demo accepts; finer grids get slow in a browser.
const MIN_H: f64 = 0.05;

#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    x: Vec<f64>,
    approx: Vec<f64>,
    exact: Vec<f64>,
    sup_error: f64,
}

#[wasm_bindgen]
impl Curve {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn approx(&self) -> Vec<f64> {
        self.approx.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn exact(&self) -> Vec<f64> {
        self.exact.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sup_error(&self) -> f64 {
        self.sup_error
    }
}

/// Copula density cells on the lattice of marginal levels.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    u: Vec<f64>,
    v: Vec<f64>,
    density: Vec<f64>,
}

#[wasm_bindgen]
impl Heatmap {
    /// Cell edges along `u`, starting at 0.
    #[wasm_bindgen(getter)]
    pub fn u(&self) -> Vec<f64> {
        self.u.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn v(&self) -> Vec<f64> {
        self.v.clone()
    }

    /// Row-major `(u.len() - 1) × (v.len() - 1)`.
    #[wasm_bindgen(getter)]
    pub fn density(&self) -> Vec<f64> {
        self.density.clone()
    }
}

fn normal_pdf(x: f64, m: f64, s: f64) -> f64 {
    let z = (x - m) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

fn check_h(h: f64) -> Result<()> {
    if !(MIN_H..=1.0).contains(&h) {
        return Err(MimikError::Domain(format!("spacing must lie in [{MIN_H}, 1], got {h}")));
    }
    Ok(())
}

/// Chain law at `t` divided by `h` next to the exact Gaussian density.
/// `kind` is `"bm"` (`a` = drift) or `"ou"` (`a` = mean reversion, level 0).
pub fn compute_density(kind: &str, a: f64, sigma: f64, h: f64, t: f64, x0: f64) -> Result<Curve> {
    check_h(h)?;
    if !(sigma > 0.0 && t > 0.0) {
        return Err(MimikError::Domain("sigma and t must be positive".into()));
    }
    let (model, mean, sd) = match kind {
        "bm" => (ModelSpec1D::bm(a, sigma), x0 + a * t, sigma * t.sqrt()),
        "ou" if a > 0.0 => (
            ModelSpec1D::ou(a, 0.0, sigma),
            x0 * (-a * t).exp(),
            sigma * ((1.0 - (-2.0 * a * t).exp()) / (2.0 * a)).sqrt(),
        ),
        _ => return Err(MimikError::Domain(format!("unknown model {kind:?}"))),
    };
    let g = StateGrid::with_spacing(-HALF_WIDTH, HALF_WIDTH, h)?;
    let q = build_generator_1d(&g, &model)?;
    let mut p = vec![0.0; g.len()];
    p[g.project(x0)] = 1.0;
    let p = expm_apply(&q, &p, t, DEFAULT_TOL)?;
    let approx: Vec<f64> = p.iter().map(|v| v / g.h()).collect();
    let exact: Vec<f64> = g.points().iter().map(|&x| normal_pdf(x, mean, sd)).collect();
    let sup_error = approx.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Curve {
        x: g.points().to_vec(),
        approx,
        exact,
        sup_error,
    })
}

/// Copula density of a standard Brownian pair with constant correlation.
pub fn compute_copula(rho: f64, h: f64, t: f64) -> Result<Heatmap> {
    check_h(h)?;
    let g = StateGrid::with_spacing(-4.0, 4.0, h.max(0.125))?;
    let n = g.len();
    let bm = ModelSpec1D::bm(0.0, 1.0);
    let a = build_generator_1d(&g, &bm)?;
    let c = build_correlation_operator(&g, &g, &bm, &bm, &RhoField::constant(n, n, rho))?;
    let q = assemble_joint_direct(&a, &a, &c)?;
    let dist = JointDistribution::evolve(&q, vec![g.clone(), g], vec![n / 2, n / 2], t, DEFAULT_TOL)?;
    let s = copula_of(&dist)?;
    let (nu, nv) = (s.u_axis.len(), s.v_axis.len());
    let mut density = Vec::with_capacity((nu - 1) * (nv - 1));
    for i in 1..nu {
        for j in 1..nv {
            let mass = s.get(i, j) - s.get(i - 1, j) - s.get(i, j - 1) + s.get(i - 1, j - 1);
            let area = (s.u_axis[i] - s.u_axis[i - 1]) * (s.v_axis[j] - s.v_axis[j - 1]);
            density.push(if area > 0.0 { mass / area } else { 0.0 });
        }
    }
    Ok(Heatmap {
        u: s.u_axis,
        v: s.v_axis,
        density,
    })
}

/// Real parts of `exp(t q_h(s))` and of the diffusion characteristic
/// function over `|s| ≤ π/h`; the error is the complex sup-distance.
pub fn compute_symbol(mu: f64, sigma: f64, h: f64, t: f64) -> Result<Curve> {
    let spec = SymbolSpec::one_d(mu, sigma, h, t)?;
    let smax = std::f64::consts::PI / h;
    let s: Vec<f64> = (-200..=200).map(|k| smax * k as f64 / 200.0).collect();
    let mut approx = Vec::with_capacity(s.len());
    let mut exact = Vec::with_capacity(s.len());
    let mut sup_error = 0.0f64;
    for &si in &s {
        let a = (symbol_1d(&spec, si) * t).exp();
        let b = continuous_cf(&spec, &[si])?;
        sup_error = sup_error.max((a - b).norm());
        approx.push(a.re);
        exact.push(b.re);
    }
    Ok(Curve {
        x: s,
        approx,
        exact,
        sup_error,
    })
}

fn js(e: MimikError) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub fn density(kind: &str, a: f64, sigma: f64, h: f64, t: f64, x0: f64) -> std::result::Result<Curve, JsValue> {
    compute_density(kind, a, sigma, h, t, x0).map_err(js)
}

#[wasm_bindgen]
pub fn copula(rho: f64, h: f64, t: f64) -> std::result::Result<Heatmap, JsValue> {
    compute_copula(rho, h, t).map_err(js)
}

#[wasm_bindgen]
pub fn symbol_curve(mu: f64, sigma: f64, h: f64, t: f64) -> std::result::Result<Curve, JsValue> {
    compute_symbol(mu, sigma, h, t).map_err(js)
}
