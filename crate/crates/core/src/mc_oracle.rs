//! Monte Carlo references: Euler paths of the SDE, exact jump paths of a
//! chain, and Kolmogorov-Smirnov distances.
//!
//! Every path draws from its own ChaCha stream (`seed`, stream = path
//! index), so results do not depend on how rayon schedules the work.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::error::{MimikError, Result};
use crate::genlib::{Generator, ModelSpec1D};
use crate::grid::StateGrid;
use crate::tensor_ops::unravel_into;

/// Bins per path for realized covariation.
pub const COVARIATION_BINS: usize = 100;

pub type LocalCorrelation = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum CorrelationSpec {
    Constant(DMatrix<f64>),
    /// State-dependent correlation of a bivariate model.
    Local(LocalCorrelation),
}

impl std::fmt::Debug for CorrelationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorrelationSpec::Constant(m) => write!(f, "Constant({m:?})"),
            CorrelationSpec::Local(_) => f.write_str("Local(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub models: Vec<ModelSpec1D>,
    pub rho: CorrelationSpec,
    pub x0: Vec<f64>,
}

impl SimConfig {
    /// Independent axes with `dt = t_end / 2000`.
    pub fn new(models: Vec<ModelSpec1D>, x0: Vec<f64>, t_end: f64, n_paths: usize, seed: u64) -> Self {
        let d = models.len();
        SimConfig {
            n_paths,
            dt: t_end / 2000.0,
            t_end,
            seed,
            models,
            rho: CorrelationSpec::Constant(DMatrix::identity(d, d)),
            x0,
        }
    }

    pub fn d(&self) -> usize {
        self.models.len()
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) || self.n_paths == 0 {
            return Err(MimikError::Domain("need dt > 0, t_end >= 0 and at least one path".into()));
        }
        if self.x0.len() != self.d() || self.d() == 0 {
            return Err(MimikError::Dimension("x0 does not match the number of models".into()));
        }
        match &self.rho {
            CorrelationSpec::Constant(m) if m.nrows() != self.d() || m.ncols() != self.d() => {
                Err(MimikError::Dimension("correlation matrix has the wrong size".into()))
            }
            CorrelationSpec::Local(_) if self.d() != 2 => {
                Err(MimikError::Dimension("local correlation needs exactly two axes".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Factor `L` with `L Lᵀ = ρ`: Cholesky when definite, otherwise the
/// eigen-square-root with negative round-off clipped to zero.
pub fn correlation_factor(rho: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let asym = (rho - rho.transpose()).norm();
    if asym > 1e-12 * rho.norm() {
        return Err(MimikError::Domain("correlation matrix is not symmetric".into()));
    }
    if let Some(c) = rho.clone().cholesky() {
        return Ok(c.l());
    }
    let eig = SymmetricEigen::new(rho.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        return Err(MimikError::NotPsd { min_eigenvalue: min });
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Terminal values and, when recorded, per-path covariation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub d: usize,
    pub t_end: f64,
    /// Row-major `n_paths × d`.
    pub terminal: Vec<f64>,
    /// Row-major `d × d` realized covariation per path.
    pub covariation: Option<Vec<Vec<f64>>>,
}

impl SampleSet {
    pub fn n_paths(&self) -> usize {
        self.terminal.len() / self.d.max(1)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.terminal.iter().skip(k).step_by(self.d).copied().collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let names: Vec<String> = (1..=self.d).map(|k| format!("x{k}")).collect();
        let names: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let rows: Vec<Vec<f64>> = self.terminal.chunks(self.d).map(|c| c.to_vec()).collect();
        crate::export::write_columns(w, &names, &rows)
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Euler–Maruyama with correlated Gaussian increments.
pub fn simulate_euler(cfg: &SimConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let d = cfg.d();
    let fixed = match &cfg.rho {
        CorrelationSpec::Constant(m) => Some(correlation_factor(m)?),
        CorrelationSpec::Local(_) => None,
    };
    let steps = (cfg.t_end / cfg.dt).round().max(if cfg.t_end > 0.0 { 1.0 } else { 0.0 }) as usize;
    let dt = if steps > 0 { cfg.t_end / steps as f64 } else { 0.0 };
    let sq = dt.sqrt();
    let rows: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p);
            let mut x = cfg.x0.clone();
            let mut xi = vec![0.0; d];
            let mut dw = vec![0.0; d];
            for _ in 0..steps {
                for v in xi.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                match (&fixed, &cfg.rho) {
                    (Some(l), _) => {
                        for a in 0..d {
                            dw[a] = (0..d).map(|b| l[(a, b)] * xi[b]).sum::<f64>() * sq;
                        }
                    }
                    (None, CorrelationSpec::Local(f)) => {
                        let r = f(x[0], x[1]).clamp(-1.0, 1.0);
                        dw[0] = xi[0] * sq;
                        dw[1] = (r * xi[0] + (1.0 - r * r).sqrt() * xi[1]) * sq;
                    }
                    _ => unreachable!(),
                }
                for a in 0..d {
                    let m = &cfg.models[a];
                    x[a] += m.drift(x[a]) * dt + m.vol(x[a]) * dw[a];
                }
            }
            x
        })
        .collect();
    let terminal: Vec<f64> = rows.concat();
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(MimikError::Domain("Euler paths produced non-finite values".into()));
    }
    Ok(SampleSet {
        d,
        t_end: cfg.t_end,
        terminal,
        covariation: None,
    })
}

/// Exact jump-chain sampling of `q` on the tensor grid `grids`, started
/// at the multi-index `x0`. With `record_covariation` the realized
/// covariation over `COVARIATION_BINS` equal bins is kept per path.
pub fn simulate_ctmc(
    q: &Generator,
    grids: &[StateGrid],
    x0: &[usize],
    t_end: f64,
    n_paths: usize,
    seed: u64,
    record_covariation: bool,
) -> Result<SampleSet> {
    let dims: Vec<usize> = grids.iter().map(|g| g.len()).collect();
    let d = dims.len();
    if dims.iter().product::<usize>() != q.dim() || x0.len() != d || x0.iter().zip(&dims).any(|(&i, &n)| i >= n) {
        return Err(MimikError::Dimension("grids, generator and start state disagree".into()));
    }
    if !(t_end >= 0.0) || n_paths == 0 {
        return Err(MimikError::Domain("need t_end >= 0 and at least one path".into()));
    }
    let start = crate::tensor_ops::ravel(x0, &dims);
    let coords = |z: usize, buf: &mut Vec<usize>| -> Vec<f64> {
        unravel_into(z, &dims, buf);
        (0..d).map(|k| grids[k].points()[buf[k]]).collect()
    };
    let results: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut buf = vec![0; d];
            let mut z = start;
            let mut t = 0.0;
            let bin = t_end / COVARIATION_BINS as f64;
            let mut next_edge = 1usize;
            let mut last_edge = coords(z, &mut buf);
            let mut cov = record_covariation.then(|| vec![0.0; d * d]);
            let close_bins = |upto: f64, z: usize, cov: &mut Option<Vec<f64>>, next_edge: &mut usize, last: &mut Vec<f64>, buf: &mut Vec<usize>| {
                if let Some(c) = cov.as_mut() {
                    while *next_edge <= COVARIATION_BINS && (*next_edge as f64) * bin <= upto {
                        let now = coords(z, buf);
                        for a in 0..d {
                            for b in 0..d {
                                c[a * d + b] += (now[a] - last[a]) * (now[b] - last[b]);
                            }
                        }
                        *last = now;
                        *next_edge += 1;
                    }
                }
            };
            loop {
                let (cols, vals) = q.rates.row(z);
                let exit: f64 = cols.iter().zip(vals).filter(|(&c, _)| c != z).map(|(_, &v)| v).sum();
                if exit <= 0.0 {
                    break;
                }
                let hold: f64 = Exp::new(exit).expect("positive rate").sample(&mut rng);
                if t + hold > t_end {
                    break;
                }
                t += hold;
                // bins ending before the jump see the pre-jump state
                close_bins(t, z, &mut cov, &mut next_edge, &mut last_edge, &mut buf);
                let mut u = rng.random::<f64>() * exit;
                let mut target = z;
                for (&c, &v) in cols.iter().zip(vals) {
                    if c == z {
                        continue;
                    }
                    target = c;
                    if u < v {
                        break;
                    }
                    u -= v;
                }
                z = target;
            }
            close_bins(f64::INFINITY, z, &mut cov, &mut next_edge, &mut last_edge, &mut buf);
            (coords(z, &mut buf), cov)
        })
        .collect();
    let mut terminal = Vec::with_capacity(n_paths * d);
    let mut covs = record_covariation.then(Vec::new);
    for (x, c) in results {
        terminal.extend(x);
        if let (Some(all), Some(c)) = (covs.as_mut(), c) {
            all.push(c);
        }
    }
    Ok(SampleSet {
        d,
        t_end,
        terminal,
        covariation: covs,
    })
}

/// Mean realized covariation per unit time, `d × d`.
pub fn covariation_estimate(samples: &SampleSet) -> Result<Vec<Vec<f64>>> {
    let covs = samples
        .covariation
        .as_ref()
        .ok_or_else(|| MimikError::Domain("samples were drawn without covariation records".into()))?;
    if !(samples.t_end > 0.0) || covs.is_empty() {
        return Err(MimikError::Domain("covariation needs t_end > 0 and at least one path".into()));
    }
    let d = samples.d;
    let mut acc = vec![0.0; d * d];
    for c in covs {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let scale = 1.0 / (covs.len() as f64 * samples.t_end);
    Ok(acc.chunks(d).map(|r| r.iter().map(|v| v * scale).collect()).collect())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Two-sample statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// `sup_x |F_n(x) − F(x)|` for a continuous CDF `F`, ties handled.
pub fn ks_against_cdf(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted(samples);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let below = i as f64 / n;
        while i < s.len() && s[i] == x {
            i += 1;
        }
        let f = cdf(x);
        d = d.max((f - below).abs()).max((i as f64 / n - f).abs());
    }
    d
}

/// Distance between a lattice law (`support` increasing, `pmf`) and a
/// continuous CDF, using both one-sided limits at every atom.
pub fn ks_law_vs_cdf(support: &[f64], pmf: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut cum = 0.0;
    let mut d = 0.0f64;
    for (&x, &p) in support.iter().zip(pmf) {
        let f = cdf(x);
        d = d.max((f - cum).abs());
        cum += p;
        d = d.max((cum - f).abs());
    }
    d
}

/// Distance between the empirical law of `samples` and a lattice law.
pub fn ks_samples_vs_law(samples: &[f64], support: &[f64], pmf: &[f64]) -> f64 {
    let s = sorted(samples);
    let n = s.len() as f64;
    let mut cum = 0.0;
    let mut k = 0;
    let mut d = 0.0f64;
    let mut points: Vec<f64> = support.iter().chain(s.iter()).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut law_idx = 0;
    for x in points {
        while law_idx < support.len() && support[law_idx] <= x {
            cum += pmf[law_idx];
            law_idx += 1;
        }
        while k < s.len() && s[k] <= x {
            k += 1;
        }
        d = d.max((k as f64 / n - cum).abs());
    }
    d
}

/// Per-dimension two-sample statistics.
pub fn ks_per_dimension(a: &SampleSet, b: &SampleSet) -> Result<Vec<f64>> {
    if a.d != b.d {
        return Err(MimikError::Dimension("sample sets differ in dimension".into()));
    }
    Ok((0..a.d).map(|k| ks_two_sample(&a.column(k), &b.column(k))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::norm_cdf;
    use crate::genlib::build_generator_1d;
    use crate::kernel::expm_apply;
    use crate::sparse::CsrMatrix;
    use crate::tensor_ops::{assemble_joint_direct, build_correlation_operator, RhoField};

    fn corr(r: f64) -> CorrelationSpec {
        CorrelationSpec::Constant(DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]))
    }

    fn sample_corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn frozen_paths_stay_put() {
        let cfg = SimConfig::new(vec![ModelSpec1D::bm(0.0, 0.0)], vec![0.7], 1.0, 50, 3);
        let s = simulate_euler(&cfg).unwrap();
        assert!(s.terminal.iter().all(|&x| x == 0.7));
        let q = Generator::zero(5);
        let g = StateGrid::uniform(0.0, 1.0, 5).unwrap();
        let s = simulate_ctmc(&q, &[g], &[2], 1.0, 20, 1, false).unwrap();
        assert!(s.terminal.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn euler_bm_pair_correlation() {
        let mut cfg = SimConfig::new(vec![ModelSpec1D::bm(0.0, 1.0); 2], vec![0.0, 0.0], 1.0, 100_000, 11);
        cfg.dt = 0.05;
        cfg.rho = corr(0.5);
        let s = simulate_euler(&cfg).unwrap();
        let r = sample_corr(&s.column(0), &s.column(1));
        assert!((r - 0.5).abs() < 0.01, "{r}");
    }

    #[test]
    fn euler_ou_stationary_variance() {
        let mut cfg = SimConfig::new(vec![ModelSpec1D::ou(1.0, 0.0, 2f64.sqrt())], vec![0.0], 5.0, 40_000, 5);
        cfg.dt = 0.005;
        let s = simulate_euler(&cfg).unwrap();
        let x = s.column(0);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!((v - 1.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn seeded_runs_are_identical() {
        let mut cfg = SimConfig::new(vec![ModelSpec1D::ou(1.0, 0.0, 1.0); 2], vec![0.1, -0.2], 0.5, 500, 99);
        cfg.rho = corr(-0.3);
        assert_eq!(simulate_euler(&cfg).unwrap(), simulate_euler(&cfg).unwrap());
        let g = StateGrid::uniform(-3.0, 3.0, 13).unwrap();
        let q = build_generator_1d(&g, &ModelSpec1D::bm(0.0, 1.0)).unwrap();
        let a = simulate_ctmc(&q, std::slice::from_ref(&g), &[6], 1.0, 300, 7, true).unwrap();
        assert_eq!(a, simulate_ctmc(&q, &[g], &[6], 1.0, 300, 7, true).unwrap());
    }

    #[test]
    fn semidefinite_correlation_clipped() {
        let l = correlation_factor(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!((&l * l.transpose() - DMatrix::from_element(2, 2, 1.0)).norm() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(matches!(correlation_factor(&bad), Err(MimikError::NotPsd { .. })));
    }

    #[test]
    fn two_state_survival() {
        let q = Generator::new(CsrMatrix::from_triplets(3, 3, [(1, 1, -1.0), (1, 2, 1.0)]));
        let g = StateGrid::uniform(0.0, 1.0, 3).unwrap();
        let s = simulate_ctmc(&q, &[g], &[1], 1.0, 100_000, 2, false).unwrap();
        let stay = s.terminal.iter().filter(|&&x| x == 0.5).count() as f64 / 1e5;
        assert!((stay - (-1.0f64).exp()).abs() < 0.005, "{stay}");
    }

    #[test]
    fn ctmc_samples_match_uniformized_law() {
        let g = StateGrid::uniform(-4.0, 4.0, 33).unwrap();
        let q = build_generator_1d(&g, &ModelSpec1D::bm(0.0, 1.0)).unwrap();
        let mut v = vec![0.0; 33];
        v[16] = 1.0;
        let p = expm_apply(&q, &v, 1.0, 1e-10).unwrap();
        let s = simulate_ctmc(&q, std::slice::from_ref(&g), &[16], 1.0, 100_000, 13, false).unwrap();
        let ks = ks_samples_vs_law(&s.column(0), g.points(), &p);
        assert!(ks <= 1.36 / (1e5f64).sqrt() + 1e-10, "{ks}");
    }

    #[test]
    fn ks_examples() {
        let a: Vec<f64> = (0..1000).map(|k| k as f64 / 1000.0).collect();
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.5).collect();
        assert!((ks_two_sample(&a, &b) - 0.5).abs() < 2e-3);
        let u = |x: f64| x.clamp(0.0, 1.0);
        assert!((ks_against_cdf(&b, u) - 0.5).abs() < 2e-3);
        // one atom at zero against N(0,1): both one-sided gaps are 1/2
        assert!((ks_law_vs_cdf(&[0.0], &[1.0], norm_cdf) - 0.5).abs() < 1e-15);
        assert_eq!(ks_samples_vs_law(&[0.0, 1.0], &[0.0, 1.0], &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn ks_lattice_law_shrinks_with_h() {
        let mut last = 1.0;
        for m in [17, 33, 65] {
            let g = StateGrid::uniform(-4.0, 4.0, m).unwrap();
            let q = build_generator_1d(&g, &ModelSpec1D::bm(0.0, 1.0)).unwrap();
            let mut v = vec![0.0; m];
            v[m / 2] = 1.0;
            let p = expm_apply(&q, &v, 1.0, 1e-10).unwrap();
            let ks = ks_law_vs_cdf(g.points(), &p, norm_cdf);
            assert!(ks < last);
            last = ks;
        }
    }

    fn joint_bm(r: f64) -> (Generator, StateGrid) {
        let g = StateGrid::uniform(-4.0, 4.0, 33).unwrap();
        let bm = ModelSpec1D::bm(0.0, 1.0);
        let a = build_generator_1d(&g, &bm).unwrap();
        let c = build_correlation_operator(&g, &g, &bm, &bm, &RhoField::constant(33, 33, r)).unwrap();
        (assemble_joint_direct(&a, &a, &c).unwrap(), g)
    }

    #[test]
    fn covariation_zero_and_sign_flip() {
        let (q0, g) = joint_bm(0.0);
        let c0 = covariation_estimate(&simulate_ctmc(&q0, &[g.clone(), g.clone()], &[16, 16], 1.0, 20_000, 4, true).unwrap()).unwrap();
        assert!(c0[0][1].abs() < 0.03, "{c0:?}");
        assert!((c0[0][0] - 1.0).abs() < 0.05);
        let (qp, _) = joint_bm(0.6);
        let (qn, _) = joint_bm(-0.6);
        let cp = covariation_estimate(&simulate_ctmc(&qp, &[g.clone(), g.clone()], &[16, 16], 1.0, 20_000, 4, true).unwrap()).unwrap();
        let cn = covariation_estimate(&simulate_ctmc(&qn, &[g.clone(), g.clone()], &[16, 16], 1.0, 20_000, 4, true).unwrap()).unwrap();
        assert!((cp[0][1] - 0.6).abs() < 0.04 && (cn[0][1] + 0.6).abs() < 0.04, "{cp:?} {cn:?}");
        assert!(covariation_estimate(&simulate_ctmc(&qp, &[g.clone(), g], &[16, 16], 1.0, 10, 4, false).unwrap()).is_err());
    }
}
