//! Fourier symbols of constant-coefficient lattice generators.
//!
//! For a chain with up/down rates `a±` on spacing `h`, the law after time
//! `t` has discrete characteristic function `E e^{-is(X_t - x)} = e^{t q(s)}`
//! with
//!
//! ```text
//! q(s) = -i μ sin(hs)/h + σ² (cos(hs) - 1)/h²
//! ```
//!
//! on the zone `[-π/h, π/h]`. The diffusion's counterpart is
//! `-iμs - σ²s²/2`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{MimikError, Result};

/// Constant drift, volatility and correlation with lattice spacings.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSpec {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: DMatrix<f64>,
    pub h: Vec<f64>,
    pub t: f64,
}

impl SymbolSpec {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, rho: DMatrix<f64>, h: Vec<f64>, t: f64) -> Result<Self> {
        let d = mu.len();
        if sigma.len() != d || h.len() != d || rho.nrows() != d || rho.ncols() != d || d == 0 {
            return Err(MimikError::Dimension("symbol spec components disagree in dimension".into()));
        }
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(MimikError::Domain("volatilities must be positive".into()));
        }
        if h.iter().any(|&x| !(x > 0.0)) || !(t >= 0.0) {
            return Err(MimikError::Domain("spacings must be positive and t >= 0".into()));
        }
        for a in 0..d {
            if (rho[(a, a)] - 1.0).abs() > 1e-12 {
                return Err(MimikError::Domain("correlation diagonal must be 1".into()));
            }
            for b in 0..d {
                let v = rho[(a, b)];
                if (v - rho[(b, a)]).abs() > 1e-12 || !(-1.0..=1.0).contains(&v) {
                    return Err(MimikError::Domain(format!("invalid correlation entry ({a}, {b}) = {v}")));
                }
            }
        }
        Ok(SymbolSpec { mu, sigma, rho, h, t })
    }

    pub fn one_d(mu: f64, sigma: f64, h: f64, t: f64) -> Result<Self> {
        Self::new(vec![mu], vec![sigma], DMatrix::identity(1, 1), vec![h], t)
    }

    pub fn two_d(mu: [f64; 2], sigma: [f64; 2], rho: f64, h: [f64; 2], t: f64) -> Result<Self> {
        Self::new(
            mu.to_vec(),
            sigma.to_vec(),
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            h.to_vec(),
            t,
        )
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Same coefficients on spacing `h` along every axis.
    pub fn with_spacing(&self, h: f64) -> Self {
        SymbolSpec {
            h: vec![h; self.dim()],
            ..self.clone()
        }
    }

    /// `Λ = diag(σ) ρ diag(σ)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |a, b| self.sigma[a] * self.rho[(a, b)] * self.sigma[b])
    }
}

/// Symbol of axis `k`'s birth-death generator.
pub fn symbol_axis(spec: &SymbolSpec, k: usize, s: f64) -> Complex64 {
    let (mu, sig, h) = (spec.mu[k], spec.sigma[k], spec.h[k]);
    Complex64::new(sig * sig * ((h * s).cos() - 1.0) / (h * h), -mu * (h * s).sin() / h)
}

pub fn symbol_1d(spec: &SymbolSpec, s: f64) -> Complex64 {
    symbol_axis(spec, 0, s)
}

/// Cross term `ρσ₁σ₂ (cos(h₁s₁ + h₂s₂) − cos h₁s₁ − cos h₂s₂ + 1)/(h₁h₂)`.
pub fn symbol_cross_2d(spec: &SymbolSpec, s1: f64, s2: f64) -> f64 {
    let (a, b) = (spec.h[0] * s1, spec.h[1] * s2);
    let c = spec.rho[(0, 1)] * spec.sigma[0] * spec.sigma[1];
    c * ((a + b).cos() - a.cos() - b.cos() + 1.0) / (spec.h[0] * spec.h[1])
}

/// Cross symbol of the sign-switched stencil actually used by the joint
/// generator: the diagonal form for `ρ ≥ 0`, the anti-diagonal one
/// (`cos(h₁s₁ − h₂s₂)`, weight `|ρ|`) for `ρ < 0`.
pub fn operator_cross_symbol(spec: &SymbolSpec, s1: f64, s2: f64) -> f64 {
    let r = spec.rho[(0, 1)];
    if r >= 0.0 {
        symbol_cross_2d(spec, s1, s2)
    } else {
        let (a, b) = (spec.h[0] * s1, spec.h[1] * s2);
        -r * spec.sigma[0] * spec.sigma[1] * ((a - b).cos() - a.cos() - b.cos() + 1.0) / (spec.h[0] * spec.h[1])
    }
}

/// Full symbol of the joint generator at frequency `s`.
pub fn symbol(spec: &SymbolSpec, s: &[f64]) -> Complex64 {
    let mut q: Complex64 = (0..spec.dim()).map(|k| symbol_axis(spec, k, s[k])).sum();
    if spec.dim() == 2 {
        q += operator_cross_symbol(spec, s[0], s[1]);
    }
    q
}

/// `exp(t(−i μ·s − ½ sᵀΛs))`.
pub fn continuous_cf(spec: &SymbolSpec, s: &[f64]) -> Result<Complex64> {
    if s.len() != spec.dim() {
        return Err(MimikError::Dimension("frequency vector has the wrong length".into()));
    }
    let lam = spec.covariance();
    let min = SymmetricEigen::new(lam.clone()).eigenvalues.min();
    if min < -1e-12 * lam.norm().max(1.0) {
        return Err(MimikError::NotPsd { min_eigenvalue: min });
    }
    let d = spec.dim();
    let mut quad = 0.0;
    let mut lin = 0.0;
    for a in 0..d {
        lin += spec.mu[a] * s[a];
        for b in 0..d {
            quad += s[a] * lam[(a, b)] * s[b];
        }
    }
    Ok((Complex64::new(-0.5 * quad, -lin) * spec.t).exp())
}

/// Diffusion counterpart of [`symbol_1d`], `−iμs − ½σ²s²`.
pub fn symbol_limit_1d(spec: &SymbolSpec, s: f64) -> Complex64 {
    Complex64::new(-0.5 * spec.sigma[0].powi(2) * s * s, -spec.mu[0] * s)
}

const MAX_LATTICE: usize = 1 << 14;

fn lattice_size(spec: &SymbolSpec, k: usize, steps: f64) -> Result<usize> {
    let h = spec.h[k];
    let spread = (spec.mu[k].abs() * spec.t + 14.0 * spec.sigma[k] * spec.t.sqrt()) / h;
    let need = 2.0 * (steps + spread + 32.0);
    let n = (need.ceil() as usize).next_power_of_two();
    if n > MAX_LATTICE {
        return Err(MimikError::SizeLimit {
            what: "spectral frequency lattice per axis",
            requested: n,
            limit: MAX_LATTICE,
        });
    }
    Ok(n.max(64))
}

/// Transition probability `P_t(x, y)` of the unbounded lattice chain by the
/// trapezoid rule on the zone: `(∏ h/2π) ∫ e^{t q(s)} e^{is·(y−x)} ds`. The
/// rule is exact up to wrap-around, which the lattice size keeps negligible.
pub fn spectral_kernel(spec: &SymbolSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = spec.dim();
    if x.len() != d || y.len() != d || d > 2 {
        return Err(MimikError::Dimension("spectral kernel supports one or two axes".into()));
    }
    let mut steps = Vec::with_capacity(d);
    let mut sizes = Vec::with_capacity(d);
    for k in 0..d {
        let m = (y[k] - x[k]) / spec.h[k];
        if (m - m.round()).abs() > 1e-9 {
            return Err(MimikError::Domain(format!("target is not on the lattice of axis {k}")));
        }
        steps.push(m.round());
        sizes.push(lattice_size(spec, k, m.abs())?);
    }
    let freq = |k: usize, j: usize| {
        let n = sizes[k] as isize;
        let j = j as isize;
        let j = if j >= n / 2 { j - n } else { j };
        2.0 * PI * j as f64 / (n as f64 * spec.h[k])
    };
    let mut acc = Complex64::new(0.0, 0.0);
    if d == 1 {
        for j in 0..sizes[0] {
            let s = freq(0, j);
            acc += (symbol(spec, &[s]) * spec.t).exp() * Complex64::from_polar(1.0, s * steps[0] * spec.h[0]);
        }
        acc /= sizes[0] as f64;
    } else {
        for j1 in 0..sizes[0] {
            let s1 = freq(0, j1);
            for j2 in 0..sizes[1] {
                let s2 = freq(1, j2);
                let phase = s1 * steps[0] * spec.h[0] + s2 * steps[1] * spec.h[1];
                acc += (symbol(spec, &[s1, s2]) * spec.t).exp() * Complex64::from_polar(1.0, phase);
            }
        }
        acc /= (sizes[0] * sizes[1]) as f64;
    }
    Ok(acc.re)
}

/// What the error sequence measures.
#[derive(Debug, Clone, PartialEq)]
pub enum RateMode {
    /// `sup_s |e^{t q_h(s)} − φ(s)|` over the probe frequencies (axis 0).
    Symbol { probes: Vec<f64> },
    /// `sup |q_cross,h(s₁,s₂) + ρσ₁σ₂s₁s₂|` over the probe grid.
    Cross { probes: Vec<f64> },
    /// `|P_t(x₀,x₀)/h − p_t(x₀)|` against the Gaussian density.
    Kernel,
}

/// Uniform probe frequencies on `[-3, 3]`.
pub fn default_probes() -> Vec<f64> {
    (0..61).map(|k| -3.0 + 0.1 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub h_values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log ε` against `log h`.
    pub slope: f64,
    /// False when the errors fail to decrease strictly.
    pub monotone: bool,
}

/// Least-squares slope of `log e` against `log h`.
pub fn loglog_slope(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn error_at(spec: &SymbolSpec, mode: &RateMode) -> Result<f64> {
    Ok(match mode {
        RateMode::Symbol { probes } => probes
            .iter()
            .map(|&s| {
                let q = (symbol_1d(spec, s) * spec.t).exp();
                let phi = (symbol_limit_1d(spec, s) * spec.t).exp();
                (q - phi).norm()
            })
            .fold(0.0, f64::max),
        RateMode::Cross { probes } => {
            if spec.dim() != 2 {
                return Err(MimikError::Dimension("cross mode needs two axes".into()));
            }
            let c = spec.rho[(0, 1)] * spec.sigma[0] * spec.sigma[1];
            let mut e = 0.0f64;
            for &s1 in probes {
                for &s2 in probes {
                    e = e.max((symbol_cross_2d(spec, s1, s2) + c * s1 * s2).abs());
                }
            }
            e
        }
        RateMode::Kernel => {
            let p = spectral_kernel(spec, &[0.0], &[0.0])?;
            let var = spec.sigma[0].powi(2) * spec.t;
            let m = spec.mu[0] * spec.t;
            let density = (-m * m / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
            (p / spec.h[0] - density).abs()
        }
    })
}

/// Error sequence over spacings `h_values` (each half the previous one)
/// and its fitted order.
pub fn estimate_rate(spec: &SymbolSpec, h_values: &[f64], mode: &RateMode) -> Result<RateEstimate> {
    if h_values.len() < 3 {
        return Err(MimikError::Domain("rate estimation needs at least three spacings".into()));
    }
    for w in h_values.windows(2) {
        if !(w[1] > 0.0) || ((w[0] / w[1]) - 2.0).abs() > 1e-6 {
            return Err(MimikError::Domain("spacings must halve at every step".into()));
        }
    }
    let errors = h_values
        .iter()
        .map(|&h| error_at(&spec.with_spacing(h), mode))
        .collect::<Result<Vec<_>>>()?;
    if errors.iter().any(|&e| !(e > 0.0)) {
        return Err(MimikError::Domain(format!("error sequence {errors:?} has a zero entry")));
    }
    Ok(RateEstimate {
        h_values: h_values.to_vec(),
        slope: loglog_slope(h_values, &errors),
        monotone: errors.windows(2).all(|w| w[1] < w[0]),
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genlib::{build_generator_1d, ModelSpec1D};
    use crate::grid::StateGrid;
    use crate::kernel::expm_apply;
    use proptest::prelude::*;

    #[test]
    fn symbol_basics() {
        let s = SymbolSpec::one_d(0.7, 1.3, 0.1, 1.0).unwrap();
        assert_eq!(symbol_1d(&s, 0.0), Complex64::new(0.0, 0.0));
        let drift_only = SymbolSpec { sigma: vec![0.0], ..SymbolSpec::one_d(1.0, 1.0, 0.25, 1.0).unwrap() };
        assert!(symbol_1d(&drift_only, PI / 0.25).im.abs() < 1e-14);
    }

    #[test]
    fn symbol_limit_by_extrapolation() {
        let q = |h: f64| symbol_1d(&SymbolSpec::one_d(0.0, 1.0, h, 1.0).unwrap(), 2.0).re;
        // Richardson on the h² expansion
        let extrapolated = (100.0 * q(1e-3) - q(1e-2)) / 99.0;
        assert!((extrapolated + 2.0).abs() < 1e-9);
        assert!((q(1e-3) + 2.0).abs() < 1e-5);
    }

    #[test]
    fn cross_symbol_limit_and_sign() {
        let c = |h: f64, s2: f64| symbol_cross_2d(&SymbolSpec::two_d([0.0; 2], [1.0; 2], 0.5, [h, h], 1.0).unwrap(), 1.0, s2);
        assert!((c(1e-3, 1.0) + 0.5).abs() < 1e-5);
        assert!((c(1e-3, -1.0) - 0.5).abs() < 1e-5);
        let zero = SymbolSpec::two_d([0.0; 2], [1.0; 2], 0.0, [0.1, 0.1], 1.0).unwrap();
        assert_eq!(symbol_cross_2d(&zero, 1.3, -0.4), 0.0);
    }

    #[test]
    fn cf_examples() {
        let s = SymbolSpec::new(vec![0.0; 2], vec![1.0; 2], DMatrix::identity(2, 2), vec![0.1; 2], 1.0).unwrap();
        assert_eq!(continuous_cf(&s, &[0.0, 0.0]).unwrap(), Complex64::new(1.0, 0.0));
        assert!((continuous_cf(&s, &[1.0, 0.0]).unwrap().re - 0.6065306597126334).abs() < 1e-15);
        let bad = SymbolSpec {
            rho: DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]),
            mu: vec![0.0; 3],
            sigma: vec![1.0; 3],
            h: vec![0.1; 3],
            t: 1.0,
        };
        assert!(matches!(continuous_cf(&bad, &[1.0, 0.0, 0.0]), Err(MimikError::NotPsd { .. })));
    }

    proptest! {
        #[test]
        fn symbol_contracts(mu in -3.0f64..3.0, sig in 0.1f64..3.0, h in 0.01f64..1.0, u in -1.0f64..1.0) {
            let spec = SymbolSpec::one_d(mu, sig, h, 1.0).unwrap();
            prop_assert!(symbol_1d(&spec, u * PI / h).re <= 0.0);
        }

        #[test]
        fn cf_bounded(a in -1.0f64..1.0, s1 in -5.0f64..5.0, s2 in -5.0f64..5.0, m in -2.0f64..2.0) {
            let spec = SymbolSpec::two_d([m, -m], [1.2, 0.7], a, [0.1, 0.1], 0.8).unwrap();
            prop_assert!(continuous_cf(&spec, &[s1, s2]).unwrap().norm() <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn spectral_kernel_matches_expm() {
        let spec = SymbolSpec::one_d(0.0, 1.0, 0.5, 1.0).unwrap();
        let g = StateGrid::uniform(-12.0, 12.0, 49).unwrap();
        let q = build_generator_1d(&g, &ModelSpec1D::bm(0.0, 1.0)).unwrap();
        let mut v = vec![0.0; 49];
        v[24] = 1.0;
        let p = expm_apply(&q, &v, 1.0, 1e-12).unwrap();
        let mut mass = 0.0;
        for (k, &pk) in p.iter().enumerate() {
            let y = g.points()[k];
            let ps = spectral_kernel(&spec, &[0.0], &[y]).unwrap();
            mass += ps;
            assert!((ps - pk).abs() < 1e-8, "y = {y}: {ps} vs {pk}");
            assert!((ps - spectral_kernel(&spec, &[y], &[0.0]).unwrap()).abs() < 1e-14);
        }
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn spectral_kernel_two_axes_matches_expm() {
        use crate::tensor_ops::{assemble_joint_direct, build_correlation_operator, RhoField};
        let g = StateGrid::uniform(-6.0, 6.0, 25).unwrap();
        let bm = ModelSpec1D::bm(0.0, 1.0);
        let a = build_generator_1d(&g, &bm).unwrap();
        for r in [0.5, -0.3] {
            let c = build_correlation_operator(&g, &g, &bm, &bm, &RhoField::constant(25, 25, r)).unwrap();
            let q = assemble_joint_direct(&a, &a, &c).unwrap();
            let mut v = vec![0.0; 625];
            v[12 * 25 + 12] = 1.0;
            let p = expm_apply(&q, &v, 0.5, 1e-12).unwrap();
            let spec = SymbolSpec::two_d([0.0; 2], [1.0; 2], r, [0.5, 0.5], 0.5).unwrap();
            for (i, j) in [(12, 12), (13, 13), (11, 13), (14, 10)] {
                let y = [g.points()[i], g.points()[j]];
                let ps = spectral_kernel(&spec, &[0.0, 0.0], &y).unwrap();
                assert!((ps - p[i * 25 + j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn symbol_mode_is_second_order() {
        let spec = SymbolSpec::one_d(1.0, 1.0, 0.2, 1.0).unwrap();
        let r = estimate_rate(&spec, &[0.2, 0.1, 0.05, 0.025], &RateMode::Symbol { probes: default_probes() }).unwrap();
        assert!(r.monotone);
        assert!((1.8..=2.2).contains(&r.slope), "{r:?}");
    }

    #[test]
    fn cross_and_kernel_modes() {
        let spec = SymbolSpec::two_d([0.0; 2], [1.0; 2], 0.5, [0.2; 2], 1.0).unwrap();
        let r = estimate_rate(&spec, &[0.2, 0.1, 0.05, 0.025], &RateMode::Cross { probes: default_probes() }).unwrap();
        assert!(r.monotone && r.slope >= 0.9, "{r:?}");
        let spec = SymbolSpec::one_d(0.3, 1.0, 0.2, 1.0).unwrap();
        let r = estimate_rate(&spec, &[0.4, 0.2, 0.1], &RateMode::Kernel).unwrap();
        assert!(r.monotone && r.slope > 1.5, "{r:?}");
    }

    #[test]
    fn rate_preconditions() {
        let spec = SymbolSpec::one_d(0.0, 1.0, 0.1, 1.0).unwrap();
        let probes = RateMode::Symbol { probes: default_probes() };
        assert!(estimate_rate(&spec, &[0.2, 0.1], &probes).is_err());
        assert!(estimate_rate(&spec, &[0.2, 0.1, 0.07], &probes).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let h = [0.4, 0.2, 0.1];
        let e: Vec<f64> = h.iter().map(|x| 3.0 * x * x).collect();
        assert!((loglog_slope(&h, &e) - 2.0).abs() < 1e-12);
    }
}
