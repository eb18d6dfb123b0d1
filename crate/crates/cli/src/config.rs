//! Experiment configuration. Every block rejects unknown keys.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use mimik::conditional::DriftMode;
use mimik::copula::{FitOptions, TargetCopula};
use mimik::grid::StateGrid;
use mimik::tensor_ops::RhoField;
use mimik::ModelSpec1D;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub models: Vec<ModelPreset>,
    pub grid: GridBlock,
    #[serde(default)]
    pub rho: Option<RhoSpec>,
    #[serde(default)]
    pub representation: Option<Representation>,
    #[serde(default)]
    pub mode: DriftMode,
    #[serde(default)]
    pub time: Option<TimeSpec>,
    /// Starting point per axis, projected onto the grid.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub fit: Option<FitSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelPreset {
    Bm {
        #[serde(default)]
        mu: f64,
        sigma: f64,
    },
    Ou {
        kappa: f64,
        #[serde(default)]
        theta: f64,
        sigma: f64,
    },
    /// Geometric Brownian motion on a log-price grid.
    Gbm { mu: f64, sigma: f64 },
    Cir { kappa: f64, theta: f64, sigma: f64 },
}

impl ModelPreset {
    pub fn spec(&self) -> ModelSpec1D {
        match *self {
            ModelPreset::Bm { mu, sigma } => ModelSpec1D::bm(mu, sigma),
            ModelPreset::Ou { kappa, theta, sigma } => ModelSpec1D::ou(kappa, theta, sigma),
            ModelPreset::Gbm { mu, sigma } => ModelSpec1D::gbm_log(mu, sigma),
            ModelPreset::Cir { kappa, theta, sigma } => ModelSpec1D::cir(kappa, theta, sigma),
        }
    }

    /// Constant coefficients `(mu, sigma)` when the preset has them.
    pub fn constant_coefficients(&self) -> Option<(f64, f64)> {
        match *self {
            ModelPreset::Bm { mu, sigma } => Some((mu, sigma)),
            ModelPreset::Gbm { mu, sigma } => Some((mu - 0.5 * sigma * sigma, sigma)),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), CliError> {
        let finite = match *self {
            ModelPreset::Bm { mu, sigma } | ModelPreset::Gbm { mu, sigma } => mu.is_finite() && sigma.is_finite(),
            ModelPreset::Ou { kappa, theta, sigma } | ModelPreset::Cir { kappa, theta, sigma } => {
                kappa.is_finite() && theta.is_finite() && sigma.is_finite()
            }
        };
        if !finite {
            return Err(CliError::schema("model coefficients must be finite"));
        }
        Ok(())
    }
}

/// One grid shared by every axis, or one per axis.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridBlock {
    Shared(GridSpec),
    PerAxis(Vec<GridSpec>),
}

/// Exactly one of `{lo, hi, m}`, `{lo, hi, h}` or `{dyadic}`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub m: Option<usize>,
    pub h: Option<f64>,
    pub dyadic: Option<u32>,
}

pub enum GridShape {
    Points(f64, f64, usize),
    Spacing(f64, f64, f64),
    Dyadic(u32),
}

impl GridSpec {
    pub fn shape(&self) -> Result<GridShape, CliError> {
        match (self.lo, self.hi, self.m, self.h, self.dyadic) {
            (Some(lo), Some(hi), Some(m), None, None) => Ok(GridShape::Points(lo, hi, m)),
            (Some(lo), Some(hi), None, Some(h), None) => Ok(GridShape::Spacing(lo, hi, h)),
            (None, None, None, None, Some(n)) => Ok(GridShape::Dyadic(n)),
            _ => Err(CliError::schema(
                "grid needs exactly one of {lo, hi, m}, {lo, hi, h} or {dyadic}",
            )),
        }
    }

    /// Bounds for sweeps, which choose their own spacing.
    pub fn bounds(&self) -> Result<(f64, f64), CliError> {
        match self.shape()? {
            GridShape::Points(lo, hi, _) | GridShape::Spacing(lo, hi, _) => Ok((lo, hi)),
            GridShape::Dyadic(_) => Err(CliError::schema("sweeps need a grid with lo and hi")),
        }
    }

    pub fn build(&self) -> Result<StateGrid, CliError> {
        Ok(match self.shape()? {
            GridShape::Points(lo, hi, m) => StateGrid::uniform(lo, hi, m)?,
            GridShape::Spacing(lo, hi, h) => StateGrid::with_spacing(lo, hi, h)?,
            GridShape::Dyadic(n) => StateGrid::dyadic(n)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum RhoSpec {
    Constant(f64),
    /// `ρ(x, y) = c0 + cx·x + cy·y`.
    Linear {
        c0: f64,
        #[serde(default)]
        cx: f64,
        #[serde(default)]
        cy: f64,
    },
    /// Constant correlation matrix for any number of axes.
    Matrix(Vec<Vec<f64>>),
}

impl RhoSpec {
    pub fn field(&self, gx: &StateGrid, gy: &StateGrid) -> Result<RhoField, CliError> {
        Ok(match self {
            RhoSpec::Constant(r) => RhoField::constant(gx.len(), gy.len(), *r),
            RhoSpec::Linear { c0, cx, cy } => RhoField::from_fn(gx, gy, |x, y| c0 + cx * x + cy * y)?,
            RhoSpec::Matrix(m) => {
                if m.len() != 2 || m.iter().any(|r| r.len() != 2) {
                    return Err(CliError::schema("a bivariate model needs a 2x2 rho matrix"));
                }
                RhoField::constant(gx.len(), gy.len(), m[0][1])
            }
        })
    }

    pub fn matrix(&self, d: usize) -> Result<DMatrix<f64>, CliError> {
        match self {
            RhoSpec::Constant(r) => Ok(DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { *r })),
            RhoSpec::Matrix(m) => {
                if m.len() != d || m.iter().any(|r| r.len() != d) {
                    return Err(CliError::schema(format!("rho matrix must be {d}x{d}")));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| m[i][j]))
            }
            RhoSpec::Linear { .. } => Err(CliError::schema(
                "a state-dependent rho needs exactly two axes and the direct or conditional representation",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Independent,
    Direct,
    Conditional,
    /// Gaussian-regression nesting over all axes.
    Nested,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    mimik::kernel::DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub target: TargetCopula,
    #[serde(default)]
    pub options: FitOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Symbol error against the continuous characteristic function.
    Symbol,
    /// Cross-term symbol error for two axes.
    Cross,
    /// Kernel peak against the Gaussian density.
    Kernel,
    /// Kolmogorov-Smirnov distance of the chain law at `time.t`.
    Ks,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub h: Vec<f64>,
    /// Monte Carlo paths for KS sweeps without a closed-form law.
    #[serde(default = "default_paths")]
    pub paths: usize,
}

fn default_paths() -> usize {
    20_000
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::schema(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::schema(format!("invalid config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA_VERSION {
            return Err(CliError::schema(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.models.is_empty() {
            return Err(CliError::schema("at least one model is required"));
        }
        for m in &self.models {
            m.check()?;
        }
        if let GridBlock::PerAxis(g) = &self.grid {
            if g.len() != self.models.len() {
                return Err(CliError::schema(format!(
                    "{} grids given for {} models",
                    g.len(),
                    self.models.len()
                )));
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.models.len() || x0.iter().any(|v| !v.is_finite()) {
                return Err(CliError::schema("x0 needs one finite value per model"));
            }
        }
        if let Some(t) = &self.time {
            if !(t.t >= 0.0 && t.t.is_finite()) || !(t.tol > 0.0) {
                return Err(CliError::schema("time.t must be finite and nonnegative, time.tol positive"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.h.is_empty() {
                return Err(CliError::schema("sweep.h is empty"));
            }
            if s.h.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return Err(CliError::schema("sweep spacings must be positive"));
            }
            if s.paths == 0 {
                return Err(CliError::schema("sweep.paths must be positive"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.models.len()
    }

    pub fn grid_spec(&self, axis: usize) -> &GridSpec {
        match &self.grid {
            GridBlock::Shared(g) => g,
            GridBlock::PerAxis(g) => &g[axis],
        }
    }

    pub fn grids(&self) -> Result<Vec<StateGrid>, CliError> {
        (0..self.dim()).map(|k| self.grid_spec(k).build()).collect()
    }

    pub fn specs(&self) -> Vec<ModelSpec1D> {
        self.models.iter().map(ModelPreset::spec).collect()
    }

    /// Start index per axis; the grid midpoint when `x0` is absent.
    pub fn start(&self, grids: &[StateGrid]) -> Vec<usize> {
        match &self.x0 {
            Some(x0) => grids.iter().zip(x0).map(|(g, &x)| g.project(x)).collect(),
            None => grids.iter().map(|g| g.len() / 2).collect(),
        }
    }

    pub fn time(&self) -> Result<TimeSpec, CliError> {
        self.time.ok_or_else(|| CliError::schema("this command needs a time block"))
    }

    /// Explicit representation, else direct for correlated axes and
    /// independent otherwise.
    pub fn representation(&self) -> Representation {
        self.representation.unwrap_or(if self.rho.is_some() {
            Representation::Direct
        } else {
            Representation::Independent
        })
    }
}
