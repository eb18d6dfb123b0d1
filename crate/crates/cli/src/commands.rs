use serde::Serialize;

use mimik::conditional::{assemble_nested, ConditionalFamily};
use mimik::copula::{fit_local_correlation, copula_of, target_cdf, AxiomReport, CopulaModel, FitResult};
use mimik::export::{write_columns, write_dense, write_joint_table};
use mimik::genlib::{build_generator_1d, validate_generator, ValidationReport};
use mimik::kernel::{distribution_function, expm_apply, marginals, JointDistribution, MomentSummary};
use mimik::mc_oracle::{ks_law_vs_cdf, ks_samples_vs_law, simulate_euler, SimConfig};
use mimik::spectral::{default_probes, estimate_rate, loglog_slope, RateMode, SymbolSpec};
use mimik::tensor_ops::{
    add_correlation, assemble_independent, assemble_joint_direct, build_correlation_operator,
    build_pair_correlation_operator, RhoField,
};
use mimik::{Generator, MimikError, StateGrid};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{ExperimentConfig, ModelPreset, Representation, SweepKind};
use crate::error::CliError;
use crate::output::OutDir;

/// Frechet tolerance used for the axiom report of emitted surfaces, in grid steps.
const FRECHET_STEPS: f64 = 2.0;

pub fn build_generator(cfg: &ExperimentConfig, grids: &[StateGrid]) -> Result<Generator, CliError> {
    let specs = cfg.specs();
    let d = cfg.dim();
    if d == 1 {
        return Ok(build_generator_1d(&grids[0], &specs[0])?);
    }
    let rep = cfg.representation();
    let rho = match (rep, &cfg.rho) {
        (Representation::Independent, _) => None,
        (_, Some(r)) => Some(r),
        (_, None) => return Err(CliError::schema("a correlated representation needs a rho block")),
    };
    let gens = || -> Result<Vec<Generator>, CliError> {
        grids
            .iter()
            .zip(&specs)
            .map(|(g, m)| Ok(build_generator_1d(g, m)?))
            .collect()
    };
    match (rep, rho) {
        (Representation::Independent, _) => {
            let a = gens()?;
            Ok(assemble_independent(&a.iter().collect::<Vec<_>>())?)
        }
        (Representation::Direct, Some(rho)) if d == 2 => {
            let a = gens()?;
            let field = rho.field(&grids[0], &grids[1])?;
            let c = build_correlation_operator(&grids[0], &grids[1], &specs[0], &specs[1], &field)?;
            Ok(assemble_joint_direct(&a[0], &a[1], &c)?)
        }
        (Representation::Direct, Some(rho)) => {
            let corr = rho.matrix(d)?;
            let a = gens()?;
            let base = assemble_independent(&a.iter().collect::<Vec<_>>())?;
            let g: Vec<&StateGrid> = grids.iter().collect();
            let m: Vec<_> = specs.iter().collect();
            let mut ops = Vec::new();
            for i in 0..d {
                for j in i + 1..d {
                    if corr[(i, j)] != 0.0 {
                        let field = RhoField::constant(grids[i].len(), grids[j].len(), corr[(i, j)]);
                        ops.push(build_pair_correlation_operator(&g, &m, i, j, &field)?);
                    }
                }
            }
            Ok(add_correlation(base, &ops.iter().collect::<Vec<_>>())?)
        }
        (Representation::Conditional, Some(rho)) => {
            if d != 2 {
                return Err(CliError::schema("the conditional representation is bivariate; use nested for more axes"));
            }
            let field = rho.field(&grids[0], &grids[1])?;
            let fam = ConditionalFamily::new(&grids[0], &grids[1], &specs[0], &specs[1], &field, cfg.mode)?;
            Ok(fam.assemble()?)
        }
        (Representation::Nested, Some(rho)) => {
            let corr = rho.matrix(d)?;
            let g: Vec<&StateGrid> = grids.iter().collect();
            let m: Vec<_> = specs.iter().collect();
            Ok(assemble_nested(&g, &m, &corr)?)
        }
        (_, None) => unreachable!(),
    }
}

#[derive(Serialize)]
struct BuildReport<'a> {
    representation: Representation,
    labels: Vec<String>,
    dims: Vec<usize>,
    nonzeros: usize,
    validation: &'a ValidationReport,
}

pub fn cmd_build(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    let grids = cfg.grids()?;
    let q = build_generator(cfg, &grids)?;
    let report = validate_generator(&q);
    out.write("generator.csv", |w| Ok(q.write_triplet_csv(w)?))?;
    out.json(
        "validation.json",
        &BuildReport {
            representation: if cfg.dim() == 1 { Representation::Independent } else { cfg.representation() },
            labels: cfg.specs().iter().map(|m| m.label.clone()).collect(),
            dims: grids.iter().map(|g| g.len()).collect(),
            nonzeros: q.rates.triplets().count(),
            validation: &report,
        },
    )?;
    if !report.passed {
        return Err(MimikError::InvalidGenerator(format!(
            "row sum residual {:e}, min off-diagonal {:e}",
            report.max_row_sum_residual, report.min_off_diagonal
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvolveReport {
    t: f64,
    tol: f64,
    start: Vec<f64>,
    moments: MomentSummary,
    copula_axioms: Option<AxiomReport>,
}

pub fn cmd_evolve(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    let time = cfg.time()?;
    let grids = cfg.grids()?;
    let q = build_generator(cfg, &grids)?;
    let start = cfg.start(&grids);
    let dist = JointDistribution::evolve(&q, grids.clone(), start.clone(), time.t, time.tol)?;
    let cdf = distribution_function(&dist);
    out.write("distribution.csv", |w| Ok(write_joint_table(w, &grids, &dist.pmf, &cdf)?))?;
    for (k, (p, g)) in marginals(&dist).iter().zip(&grids).enumerate() {
        let rows: Vec<Vec<f64>> = g.points().iter().zip(p).map(|(&x, &v)| vec![x, v]).collect();
        out.write(&format!("marginal_{}.csv", k + 1), |w| Ok(write_columns(w, &["x", "pmf"], &rows)?))?;
    }
    let mut axioms = None;
    if grids.len() == 2 {
        let surface = copula_of(&dist)?;
        let h = grids[0].h().max(grids[1].h());
        axioms = Some(surface.check(FRECHET_STEPS * h));
        out.write("copula.csv", |w| Ok(surface.write_csv(w)?))?;
    }
    out.json(
        "moments.json",
        &EvolveReport {
            t: time.t,
            tol: time.tol,
            start: grids.iter().zip(&start).map(|(g, &i)| g.points()[i]).collect(),
            moments: dist.summary(),
            copula_axioms: axioms,
        },
    )
}

pub fn cmd_fit_copula(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    if cfg.dim() != 2 {
        return Err(CliError::schema("fit-copula needs exactly two models"));
    }
    let fit = cfg.fit.as_ref().ok_or_else(|| CliError::schema("fit-copula needs a fit block"))?;
    let time = cfg.time()?;
    let grids = cfg.grids()?;
    let specs = cfg.specs();
    let mut opts = fit.options.clone();
    if opts.start.is_none() {
        let s = cfg.start(&grids);
        opts.start = Some((s[0], s[1]));
    }
    let start = opts.start.unwrap_or_default();
    let result: FitResult = fit_local_correlation(&fit.target, &specs[0], &specs[1], &grids[0], &grids[1], time.t, &opts)?;
    out.json("fit.json", &result)?;
    let (gx, gy) = (&grids[0], &grids[1]);
    out.write("rho_field.csv", |w| Ok(write_dense(w, gx.points(), gy.points(), result.rho_field.values())?))?;
    let model = CopulaModel::new(gx, gy, &specs[0], &specs[1], start, time.t, opts.kernel_tol)?;
    let fitted = model.copula(&result.rho_field)?;
    out.write("copula_fitted.csv", |w| Ok(fitted.write_csv(w)?))?;
    let mut target = Vec::with_capacity(fitted.values.len());
    for &u in &fitted.u_axis {
        for &v in &fitted.v_axis {
            target.push(vec![u, v, target_cdf(&fit.target, u, v)?]);
        }
    }
    out.write("copula_target.csv", |w| Ok(write_columns(w, &["u", "v", "C"], &target)?))?;
    if !result.converged {
        return Err(CliError::NotConverged {
            iterations: result.iterations,
            objective: result.objective,
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct RateReport {
    kind: SweepKind,
    h_values: Vec<f64>,
    errors: Vec<f64>,
    /// Least-squares order; absent with fewer than two spacings.
    slope: Option<f64>,
    monotone: bool,
}

fn constant_coefficients(m: &ModelPreset) -> Result<(f64, f64), CliError> {
    m.constant_coefficients()
        .ok_or_else(|| CliError::schema("symbol sweeps need constant coefficients (bm or gbm models)"))
}

fn check_halving(h: &[f64]) -> Result<(), CliError> {
    if h.len() < 3 || h.windows(2).any(|w| ((w[0] / w[1]) - 2.0).abs() > 1e-6) {
        return Err(CliError::schema("symbol, cross and kernel sweeps need at least three spacings, each half the previous"));
    }
    Ok(())
}

pub fn cmd_converge(cfg: &ExperimentConfig, out: &mut OutDir, seed: u64) -> Result<(), CliError> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::schema("converge needs a sweep block"))?;
    let time = cfg.time()?;
    let hs = &sweep.h;
    let (errors, slope, monotone) = match sweep.kind {
        SweepKind::Symbol | SweepKind::Kernel => {
            check_halving(hs)?;
            let (mu, sigma) = constant_coefficients(&cfg.models[0])?;
            let spec = SymbolSpec::one_d(mu, sigma, hs[0], time.t)?;
            let mode = if sweep.kind == SweepKind::Symbol {
                RateMode::Symbol { probes: default_probes() }
            } else {
                RateMode::Kernel
            };
            let r = estimate_rate(&spec, hs, &mode)?;
            (r.errors, Some(r.slope), r.monotone)
        }
        SweepKind::Cross => {
            check_halving(hs)?;
            if cfg.dim() != 2 {
                return Err(CliError::schema("cross sweeps need two models"));
            }
            let (m1, s1) = constant_coefficients(&cfg.models[0])?;
            let (m2, s2) = constant_coefficients(&cfg.models[1])?;
            let rho = cfg
                .rho
                .as_ref()
                .ok_or_else(|| CliError::schema("cross sweeps need a rho block"))?
                .matrix(2)?[(0, 1)];
            let spec = SymbolSpec::two_d([m1, m2], [s1, s2], rho, [hs[0]; 2], time.t)?;
            let r = estimate_rate(&spec, hs, &RateMode::Cross { probes: default_probes() })?;
            (r.errors, Some(r.slope), r.monotone)
        }
        SweepKind::Ks => {
            let errors = ks_sweep(cfg, hs, time.t, time.tol, sweep.paths, seed)?;
            let slope = (hs.len() >= 2).then(|| loglog_slope(hs, &errors));
            let monotone = errors.windows(2).all(|w| w[1] < w[0]);
            (errors, slope, monotone)
        }
    };
    let rows: Vec<Vec<f64>> = hs.iter().zip(&errors).map(|(&h, &e)| vec![h, e]).collect();
    out.write("rates.csv", |w| Ok(write_columns(w, &["h", "error"], &rows)?))?;
    out.json(
        "slope.json",
        &RateReport {
            kind: sweep.kind,
            h_values: hs.clone(),
            errors,
            slope,
            monotone,
        },
    )
}

/// KS distance between the chain law of axis 0 at `t` and the exact law
/// when one is known, else an Euler-Maruyama sample.
fn ks_sweep(cfg: &ExperimentConfig, hs: &[f64], t: f64, tol: f64, paths: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    let (lo, hi) = cfg.grid_spec(0).bounds()?;
    let x0 = cfg.x0.as_ref().map_or(0.5 * (lo + hi), |x| x[0]);
    let preset = &cfg.models[0];
    let model = preset.spec();
    let exact = match *preset {
        ModelPreset::Bm { mu, sigma } => Some((x0 + mu * t, sigma * t.sqrt())),
        ModelPreset::Gbm { mu, sigma } => Some((x0 + (mu - 0.5 * sigma * sigma) * t, sigma * t.sqrt())),
        ModelPreset::Ou { kappa, theta, sigma } if kappa > 0.0 => Some((
            theta + (x0 - theta) * (-kappa * t).exp(),
            sigma * ((1.0 - (-2.0 * kappa * t).exp()) / (2.0 * kappa)).sqrt(),
        )),
        _ => None,
    };
    let samples = match exact {
        Some(_) => None,
        None => Some(simulate_euler(&SimConfig::new(vec![model.clone()], vec![x0], t, paths, seed))?.column(0)),
    };
    let mut errors = Vec::with_capacity(hs.len());
    for &h in hs {
        let g = StateGrid::with_spacing(lo, hi, h)?;
        let q = build_generator_1d(&g, &model)?;
        let mut v = vec![0.0; g.len()];
        v[g.project(x0)] = 1.0;
        let p = expm_apply(&q, &v, t, tol)?;
        errors.push(match (&exact, &samples) {
            (Some((m, s)), _) if *s > 0.0 => {
                let law = Normal::new(*m, *s).map_err(|e| MimikError::Domain(e.to_string()))?;
                ks_law_vs_cdf(g.points(), &p, |x| law.cdf(x))
            }
            (Some((m, _)), _) => ks_law_vs_cdf(g.points(), &p, |x| if x < *m { 0.0 } else { 1.0 }),
            (None, Some(s)) => ks_samples_vs_law(s, g.points(), &p),
            (None, None) => unreachable!(),
        });
    }
    Ok(errors)
}
