//! Multi-basin continuous landscape: energy is the negative log density of a
//! Gaussian mixture with full per-component precisions, fitted by EM.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Seed, TimeSeriesMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_PD_TOL};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
struct Component {
    mu: DVector<f64>,
    s: DMatrix<f64>,
    /// Half log-determinant of `S` minus `N/2 log 2 pi`.
    log_norm: f64,
}

impl Component {
    fn new(mu: DVector<f64>, s: DMatrix<f64>) -> Result<Self> {
        linalg::check_spd(&s, DEFAULT_PD_TOL)?;
        let chol = linalg::cholesky(&s)?;
        let log_norm = 0.5 * linalg::logdet_chol(&chol) - 0.5 * mu.len() as f64 * LN_2PI;
        Ok(Self { mu, s, log_norm })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mu;
        self.log_norm - 0.5 * linalg::quad_form(&self.s, &d)
    }
}

#[derive(Debug, Clone)]
pub struct MixtureEnergyModel {
    eta: Vec<f64>,
    comps: Vec<Component>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl MixtureEnergyModel {
    pub fn new(eta: Vec<f64>, mus: Vec<DVector<f64>>, ss: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = eta.len();
        if m == 0 || mus.len() != m || ss.len() != m {
            return Err(Error::InvalidInput(
                "mixture needs matching eta, means and precisions".into(),
            ));
        }
        if eta.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(
                "mixture weights must be nonnegative".into(),
            ));
        }
        if (eta.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(
                "mixture weights must sum to one".into(),
            ));
        }
        let n = mus[0].len();
        let comps = mus
            .into_iter()
            .zip(ss)
            .map(|(mu, s)| {
                if mu.len() != n || s.nrows() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: mu.len().max(s.nrows()),
                    });
                }
                if mu.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("component mean".into()));
                }
                Component::new(mu, s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { eta, comps })
    }

    pub fn n_components(&self) -> usize {
        self.eta.len()
    }

    pub fn n_vars(&self) -> usize {
        self.comps[0].mu.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.eta
    }

    pub fn mean(&self, m: usize) -> &DVector<f64> {
        &self.comps[m].mu
    }

    pub fn precision(&self, m: usize) -> &DMatrix<f64> {
        &self.comps[m].s
    }

    /// `ln eta_m + ln phi(x; mu_m, S_m)` for every component.
    pub fn log_joint(&self, x: &DVector<f64>) -> Vec<f64> {
        self.eta
            .iter()
            .zip(&self.comps)
            .map(|(w, c)| w.ln() + c.log_density(x))
            .collect()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(&self.log_joint(x))
    }

    /// Pooled covariance `sum_m eta_m S_m^{-1}`.
    pub fn pooled_covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.n_vars();
        let mut acc = DMatrix::zeros(n, n);
        for (w, c) in self.eta.iter().zip(&self.comps) {
            acc += linalg::cholesky(&c.s)?.inverse() * *w;
        }
        Ok(acc)
    }

    /// Energy scale `sqrt(tr(sum_m eta_m S_m^{-1}) / N)`.
    pub fn sigma_e(&self) -> Result<f64> {
        Ok((self.pooled_covariance()?.trace() / self.n_vars() as f64).sqrt())
    }
}

fn check_dim(x: &DVector<f64>, m: &MixtureEnergyModel) -> Result<()> {
    if x.len() != m.n_vars() {
        return Err(Error::DimensionMismatch {
            expected: m.n_vars(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `-log sum_m eta_m phi(x; mu_m, S_m)`.
pub fn mixture_energy(x: &DVector<f64>, m: &MixtureEnergyModel) -> Result<f64> {
    check_dim(x, m)?;
    Ok(-m.log_density(x))
}

/// `sum_m gamma_m(x) S_m (x - mu_m)`.
pub fn mixture_energy_gradient(x: &DVector<f64>, m: &MixtureEnergyModel) -> Result<DVector<f64>> {
    let gamma = responsibilities(x, m)?;
    let mut g = DVector::zeros(x.len());
    for (gm, c) in gamma.iter().zip(&m.comps) {
        g += (&c.s * (x - &c.mu)) * *gm;
    }
    Ok(g)
}

pub fn responsibilities(x: &DVector<f64>, m: &MixtureEnergyModel) -> Result<Vec<f64>> {
    check_dim(x, m)?;
    Ok(normalize_log(&m.log_joint(x)))
}

fn normalize_log(lj: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(lj);
    let mut g: Vec<f64> = lj.iter().map(|v| (v - lse).exp()).collect();
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn map_labels(x: &TimeSeriesMatrix, m: &MixtureEnergyModel) -> Result<Vec<usize>> {
    Ok(label_with_confidence(x, m)?
        .into_iter()
        .map(|(l, _)| l)
        .collect())
}

/// MAP label and its responsibility for every row.
pub fn label_with_confidence(
    x: &TimeSeriesMatrix,
    m: &MixtureEnergyModel,
) -> Result<Vec<(usize, f64)>> {
    if x.n_vars() != m.n_vars() {
        return Err(Error::DimensionMismatch {
            expected: m.n_vars(),
            got: x.n_vars(),
        });
    }
    Ok((0..x.n_time())
        .into_par_iter()
        .map(|t| {
            let g = normalize_log(&m.log_joint(&x.row(t)));
            let l = argmax(&g);
            (l, g[l])
        })
        .collect())
}

pub fn write_labels_csv(path: &Path, labels: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "label", "max_responsibility"])?;
    for (t, (l, g)) in labels.iter().enumerate() {
        w.write_record([t.to_string(), l.to_string(), format!("{g}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Relative ridge `c * tr(cov_m) / N` per component.
    pub ridge: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            tol: 1e-6,
            max_iter: 500,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub model: MixtureEnergyModel,
    pub loglik: f64,
    /// Log-likelihood after every EM iteration of the winning restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl MixtureFit {
    pub fn bic(&self, t: usize) -> f64 {
        bic(
            self.loglik,
            self.model.n_components(),
            self.model.n_vars(),
            t,
        )
    }
}

/// `-2 loglik + k log T`, `k = M-1 + M N + M N(N+1)/2`.
pub fn bic(loglik: f64, m: usize, n: usize, t: usize) -> f64 {
    let k = (m - 1) + m * n + m * n * (n + 1) / 2;
    -2.0 * loglik + k as f64 * (t as f64).ln()
}

fn kmeanspp(x: &DMatrix<f64>, m: usize, rng: &mut impl Rng) -> Vec<usize> {
    let t = x.nrows();
    let mut centers = vec![rng.random_range(0..t)];
    let mut d2: Vec<f64> = (0..t)
        .map(|i| (x.row(i) - x.row(centers[0])).norm_squared())
        .collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = t - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc >= u {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..t)
        };
        centers.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min((x.row(i) - x.row(next)).norm_squared());
        }
    }
    centers
}

const LLOYD_MAX_ITER: usize = 100;

fn nearest(row: &DVector<f64>, centers: &[DVector<f64>]) -> usize {
    let d: Vec<f64> = centers.iter().map(|c| -(row - c).norm_squared()).collect();
    argmax(&d)
}

/// Lloyd iterations from the given centers until assignments stop changing.
/// Empty clusters keep their previous center.
fn lloyd(x: &DMatrix<f64>, mut centers: Vec<DVector<f64>>) -> (Vec<DVector<f64>>, Vec<usize>) {
    let rows: Vec<DVector<f64>> = (0..x.nrows()).map(|i| x.row(i).transpose()).collect();
    let mut assign: Vec<usize> = rows.iter().map(|r| nearest(r, &centers)).collect();
    for _ in 0..LLOYD_MAX_ITER {
        let mut sums = vec![DVector::zeros(x.ncols()); centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (r, &a) in rows.iter().zip(&assign) {
            sums[a] += r;
            counts[a] += 1;
        }
        for (k, c) in centers.iter_mut().enumerate() {
            if counts[k] > 0 {
                *c = &sums[k] / counts[k] as f64;
            }
        }
        let next: Vec<usize> = rows.iter().map(|r| nearest(r, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (centers, assign)
}

/// Weighted M-step for one component; `None` when the weight mass is too
/// small or the ridged covariance is not positive definite.
fn m_step(
    x: &DMatrix<f64>,
    gamma: &[f64],
    ridge: f64,
) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let n = x.ncols();
    let mass: f64 = gamma.iter().sum();
    if !(mass > 0.0) {
        return None;
    }
    let mut mu = DVector::zeros(n);
    for (t, g) in gamma.iter().enumerate() {
        mu += x.row(t).transpose() * *g;
    }
    mu /= mass;
    let mut cov = DMatrix::zeros(n, n);
    for (t, g) in gamma.iter().enumerate() {
        let d = x.row(t).transpose() - &mu;
        cov.syger(*g, &d, &d, 1.0);
    }
    // syger fills the lower triangle only
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= mass;
    let r = ridge * cov.trace() / n as f64;
    for i in 0..n {
        cov[(i, i)] += r;
    }
    if cov.trace() <= 0.0 || linalg::check_spd(&cov, DEFAULT_PD_TOL).is_err() {
        return None;
    }
    let chol: Cholesky<f64, Dyn> = cov.cholesky()?;
    Some((mass, mu, linalg::symmetrize(&chol.inverse())))
}

struct EmState {
    eta: Vec<f64>,
    mus: Vec<DVector<f64>>,
    ss: Vec<DMatrix<f64>>,
}

impl EmState {
    fn model(&self) -> Result<MixtureEnergyModel> {
        MixtureEnergyModel::new(self.eta.clone(), self.mus.clone(), self.ss.clone())
    }
}

/// E-step: log-likelihood and responsibilities (`T x M`, row-major).
fn e_step(x: &TimeSeriesMatrix, model: &MixtureEnergyModel) -> (f64, Vec<Vec<f64>>) {
    let rows: Vec<(f64, Vec<f64>)> = (0..x.n_time())
        .into_par_iter()
        .map(|t| {
            let lj = model.log_joint(&x.row(t));
            let lse = log_sum_exp(&lj);
            (lse, normalize_log(&lj))
        })
        .collect();
    let ll = rows.iter().map(|r| r.0).sum();
    (ll, rows.into_iter().map(|r| r.1).collect())
}

fn run_em(x: &TimeSeriesMatrix, m: usize, opts: &GmmOptions, seed: Seed) -> Result<MixtureFit> {
    let data = x.matrix();
    let (t, n) = (x.n_time(), x.n_vars());
    let mut rng = seed.rng();
    let seeds = kmeanspp(data, m, &mut rng);
    let (centers, assign) = lloyd(
        data,
        seeds.iter().map(|&c| data.row(c).transpose()).collect(),
    );

    // hard k-means assignment, then one M-step
    let mut gamma = vec![vec![0.0; m]; t];
    for (g, &a) in gamma.iter_mut().zip(&assign) {
        g[a] = 1.0;
    }
    let global_cov = {
        let mean = x.column_means();
        let mut c = linalg::mle_covariance(data, &mean);
        let r = opts.ridge * c.trace() / n as f64;
        for i in 0..n {
            c[(i, i)] += r;
        }
        c
    };
    let global_s = linalg::symmetrize(
        &linalg::cholesky(&global_cov)
            .map_err(|_| Error::SingularCovariance)?
            .inverse(),
    );

    let floor = 1.0 / (10.0 * t as f64);
    let mut reinitialized = vec![false; m];
    let mut state = EmState {
        eta: vec![1.0 / m as f64; m],
        mus: centers,
        ss: vec![global_s.clone(); m],
    };
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..=opts.max_iter {
        // M-step from current responsibilities
        let mut weights = Vec::with_capacity(m);
        let mut degenerate = None;
        for k in 0..m {
            let col: Vec<f64> = gamma.iter().map(|g| g[k]).collect();
            match m_step(data, &col, opts.ridge) {
                Some((mass, mu, s)) if mass / t as f64 >= floor => {
                    weights.push(mass);
                    state.mus[k] = mu;
                    state.ss[k] = s;
                }
                _ => {
                    degenerate = Some(k);
                    break;
                }
            }
        }
        if let Some(k) = degenerate {
            if reinitialized[k] {
                return Err(Error::DegenerateComponent { component: k });
            }
            reinitialized[k] = true;
            log::debug!("reinitializing collapsed mixture component {k}");
            // restart the component at the worst-explained point
            let model = state.model()?;
            let worst = (0..t)
                .map(|i| model.log_density(&x.row(i)))
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
                );
            state.mus[k] = data.row(worst.0).transpose();
            state.ss[k] = global_s.clone();
            state.eta = vec![1.0 / m as f64; m];
            let model = state.model()?;
            gamma = e_step(x, &model).1;
            // reinitialization breaks the monotone sequence
            trace.clear();
            continue;
        }
        let total: f64 = weights.iter().sum();
        state.eta = weights.iter().map(|w| w / total).collect();
        let model = state.model()?;
        let (ll, g) = e_step(x, &model);
        if !ll.is_finite() {
            return Err(Error::NonFinite("mixture log-likelihood".into()));
        }
        gamma = g;
        iterations = iter;
        if let Some(&prev) = trace.last() {
            if ll < prev - 1e-6 * prev.abs() {
                log::warn!("EM log-likelihood decreased from {prev} to {ll}");
            }
            trace.push(ll);
            if (ll - prev).abs() < opts.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
    }
    let model = state.model()?;
    Ok(MixtureFit {
        loglik: *trace.last().expect("at least one iteration"),
        model,
        trace,
        iterations,
        converged,
    })
}

/// EM from k-means++ seeding refined by Lloyd iterations, with several restarts; the restart with the
/// highest log-likelihood wins (lowest restart index on ties).
pub fn fit_gmm(x: &TimeSeriesMatrix, m: usize, seed: Seed) -> Result<MixtureFit> {
    fit_gmm_with(x, m, seed, &GmmOptions::default())
}

pub fn fit_gmm_with(
    x: &TimeSeriesMatrix,
    m: usize,
    seed: Seed,
    opts: &GmmOptions,
) -> Result<MixtureFit> {
    let n = x.n_vars();
    if m == 0 {
        return Err(Error::InvalidInput(
            "at least one component is required".into(),
        ));
    }
    if x.n_time() < m * (n + 1) {
        return Err(Error::TooFewSamples {
            needed: m * (n + 1),
            got: x.n_time(),
        });
    }
    let runs: Vec<Result<MixtureFit>> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| run_em(x, m, opts, seed.derive(&format!("restart{r}"))))
        .collect();
    let mut best: Option<MixtureFit> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart"))
}

#[derive(Debug, Clone)]
pub struct BicSelection {
    pub m: usize,
    /// BIC for `M = 1..=M_max`.
    pub bics: Vec<f64>,
    pub fit: MixtureFit,
}

pub fn select_components_bic(
    x: &TimeSeriesMatrix,
    m_max: usize,
    seed: Seed,
) -> Result<BicSelection> {
    if m_max == 0 {
        return Err(Error::InvalidInput("M_max must be at least 1".into()));
    }
    let mut bics = Vec::with_capacity(m_max);
    let mut best: Option<(usize, f64, MixtureFit)> = None;
    for m in 1..=m_max {
        let fit = fit_gmm(x, m, seed.derive(&format!("M{m}")))?;
        let b = fit.bic(x.n_time());
        bics.push(b);
        if best.as_ref().is_none_or(|(_, bb, _)| b < *bb) {
            best = Some((m, b, fit));
        }
    }
    let (m, _, fit) = best.expect("m_max >= 1");
    Ok(BicSelection { m, bics, fit })
}

/// Local minima of the mixture energy reached by the Gaussian-mixture
/// mean-shift fixed point `x <- (sum gamma_m S_m)^{-1} sum gamma_m S_m mu_m`
/// started from every component mean.
pub fn energy_modes(m: &MixtureEnergyModel) -> Result<Vec<(DVector<f64>, f64)>> {
    let mut out = Vec::with_capacity(m.n_components());
    for start in 0..m.n_components() {
        let mut x = m.comps[start].mu.clone();
        for _ in 0..1000 {
            let gamma = responsibilities(&x, m)?;
            let n = x.len();
            let mut a = DMatrix::zeros(n, n);
            let mut b = DVector::zeros(n);
            for (g, c) in gamma.iter().zip(&m.comps) {
                a += &c.s * *g;
                b += &c.s * &c.mu * *g;
            }
            let next = linalg::cholesky(&linalg::symmetrize(&a))?.solve(&b);
            let step = (&next - &x).amax();
            x = next;
            if step < 1e-12 * (1.0 + x.amax()) {
                break;
            }
        }
        let e = mixture_energy(&x, m)?;
        out.push((x, e));
    }
    Ok(out)
}

/// Lowest energy among the mixture modes and the supplied energies.
pub fn energy_floor(m: &MixtureEnergyModel, observed: &[f64]) -> Result<f64> {
    let modes = energy_modes(m)?;
    Ok(modes
        .iter()
        .map(|(_, e)| *e)
        .chain(observed.iter().copied())
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureModelRecord {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub eta: Vec<f64>,
    pub mus: Vec<Vec<f64>>,
    /// Row-major precision per component.
    #[serde(rename = "Ss")]
    pub ss: Vec<Vec<f64>>,
    pub loglik: f64,
    #[serde(rename = "BIC")]
    pub bic: f64,
}

impl MixtureModelRecord {
    pub fn from_fit(fit: &MixtureFit, t: usize) -> Self {
        let model = &fit.model;
        let n = model.n_vars();
        Self {
            m: model.n_components(),
            n,
            eta: model.eta.clone(),
            mus: model
                .comps
                .iter()
                .map(|c| c.mu.iter().copied().collect())
                .collect(),
            ss: model
                .comps
                .iter()
                .map(|c| (0..n * n).map(|k| c.s[(k / n, k % n)]).collect())
                .collect(),
            loglik: fit.loglik,
            bic: fit.bic(t),
        }
    }
}

impl TryFrom<MixtureModelRecord> for MixtureEnergyModel {
    type Error = Error;

    fn try_from(r: MixtureModelRecord) -> Result<Self> {
        if r.eta.len() != r.m || r.mus.len() != r.m || r.ss.len() != r.m {
            return Err(Error::format("mixture model", "component count mismatch"));
        }
        if r.mus.iter().any(|v| v.len() != r.n) || r.ss.iter().any(|v| v.len() != r.n * r.n) {
            return Err(Error::format("mixture model", "dimension mismatch"));
        }
        MixtureEnergyModel::new(
            r.eta,
            r.mus.into_iter().map(DVector::from_vec).collect(),
            r.ss.iter()
                .map(|s| DMatrix::from_row_slice(r.n, r.n, s))
                .collect(),
        )
    }
}
