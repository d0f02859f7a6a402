//! Ground-truth generators: a Markov-switching AR(1) system (SLDS) and a
//! Kuramoto network whose phases lock onto regime-specific templates.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::data::{gauss, standardize, Seed, TimeSeriesMatrix};
use crate::error::{Error, Result};
use crate::io::{write_matrix_csv, write_timeseries_csv};

/// Named separation levels and their SNR targets.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Deserialize, Serialize,
)]
#[serde(rename_all = "lowercase")]
pub enum SnrLevel {
    Low,
    Medium,
    High,
}

impl SnrLevel {
    pub fn target(self) -> f64 {
        match self {
            SnrLevel::Low => 1.0,
            SnrLevel::Medium => 2.0,
            SnrLevel::High => 3.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SnrLevel::Low => "low",
            SnrLevel::Medium => "medium",
            SnrLevel::High => "high",
        }
    }
}

/// `K` regimes that stay put with probability `p_stay` and otherwise move
/// uniformly to one of the other regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeChain {
    p_stay: f64,
    p: DMatrix<f64>,
}

impl RegimeChain {
    pub fn new(k: usize, p_stay: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("chain needs at least one state".into()));
        }
        if !(0.0..=1.0).contains(&p_stay) {
            return Err(Error::InvalidInput(format!(
                "p_stay {p_stay} outside [0, 1]"
            )));
        }
        let p = if k == 1 {
            DMatrix::from_element(1, 1, 1.0)
        } else {
            let off = (1.0 - p_stay) / (k - 1) as f64;
            DMatrix::from_fn(k, k, |i, j| if i == j { p_stay } else { off })
        };
        Ok(Self { p_stay, p })
    }

    pub fn k(&self) -> usize {
        self.p.nrows()
    }

    pub fn p_stay(&self) -> f64 {
        self.p_stay
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.p
    }
}

/// Uniform initial state, then one draw per step from the current row.
pub fn sample_chain(chain: &RegimeChain, t: usize, seed: Seed) -> Vec<usize> {
    let mut rng = seed.rng();
    let k = chain.k();
    let mut z = Vec::with_capacity(t);
    if t == 0 {
        return z;
    }
    z.push(rng.random_range(0..k));
    for i in 1..t {
        let row = chain.p.row(z[i - 1]);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = k - 1;
        for j in 0..k {
            acc += row[j];
            if u < acc {
                next = j;
                break;
            }
        }
        z.push(next);
    }
    z
}

/// Minimum pairwise center distance over `sqrt(tr(Sigma) / N)`.
pub fn compute_snr(mus: &[DVector<f64>], sigma: &DMatrix<f64>) -> Result<f64> {
    if mus.len() < 2 {
        return Err(Error::SingleState);
    }
    let scale = (sigma.trace() / sigma.nrows() as f64).sqrt();
    if !(scale > 0.0) {
        return Err(Error::DegenerateScale);
    }
    Ok(min_pairwise_distance(mus) / scale)
}

pub(crate) fn min_pairwise_distance(points: &[DVector<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min((&points[i] - &points[j]).norm());
        }
    }
    best
}

/// Random `n x m` matrix with orthonormal columns.
fn random_orthonormal(n: usize, m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, m, |_, _| gauss(&mut *rng));
    g.qr().q().columns(0, m).into_owned()
}

/// Places `k` centers around the origin so that the achieved SNR equals
/// `snr_target`: a randomly rotated regular simplex when `k <= n + 1`,
/// otherwise random Gaussian directions rescaled to the target minimum
/// distance.
pub fn place_centers(
    n: usize,
    k: usize,
    snr_target: f64,
    sigma: &DMatrix<f64>,
    seed: Seed,
) -> Result<Vec<DVector<f64>>> {
    if k == 0 || n == 0 {
        return Err(Error::InvalidInput(
            "need at least one center and one variable".into(),
        ));
    }
    if !(snr_target >= 0.0) {
        return Err(Error::InvalidInput("SNR target must be nonnegative".into()));
    }
    if k == 1 || snr_target == 0.0 {
        return Ok(vec![DVector::zeros(n); k]);
    }
    let target = snr_target * (sigma.trace() / n as f64).sqrt();
    let mut rng = seed.rng();
    let raw: Vec<DVector<f64>> = if k <= n + 1 {
        // e_i - centroid in R^k lies in the (k-1)-dim complement of 1
        let basis = {
            let mut m = DMatrix::identity(k, k);
            m.column_mut(0).fill(1.0);
            m.qr().q().columns(1, k - 1).into_owned()
        };
        let embed = random_orthonormal(n, k - 1, &mut rng);
        (0..k).map(|i| &embed * basis.row(i).transpose()).collect()
    } else {
        log::debug!(
            "{k} centers exceed the simplex limit in {n} dimensions; using random directions"
        );
        let pts: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(n, |_, _| gauss(&mut rng)))
            .collect();
        let mean = pts.iter().fold(DVector::zeros(n), |a, p| a + p) / k as f64;
        pts.into_iter().map(|p| p - &mean).collect()
    };
    let d = min_pairwise_distance(&raw);
    Ok(raw.into_iter().map(|p| p * (target / d)).collect())
}

/// SPD matrix with eigenvalues uniform in `[1, cond_max]`, random
/// eigenvectors and trace rescaled to `n`.
pub fn random_covariance(n: usize, cond_max: f64, seed: Seed) -> DMatrix<f64> {
    let mut rng = seed.rng();
    let q = random_orthonormal(n, n, &mut rng);
    let eig = DVector::from_fn(n, |_, _| rng.random_range(1.0..=cond_max));
    let s = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    let s = crate::linalg::symmetrize(&s);
    &s * (n as f64 / s.trace())
}

/// Symmetric square root of a positive semidefinite matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone)]
pub struct SldsConfig {
    pub n: usize,
    pub t: usize,
    pub rho: f64,
    pub sigma: DMatrix<f64>,
    pub mus: Vec<DVector<f64>>,
    pub chain: RegimeChain,
    pub snr_target: f64,
}

impl SldsConfig {
    /// Draws `Sigma` (condition number <= 10, trace N) and the centers from
    /// `seed`.
    pub fn generate(
        n: usize,
        k: usize,
        t: usize,
        rho: f64,
        p_stay: f64,
        snr_target: f64,
        seed: Seed,
    ) -> Result<Self> {
        let sigma = random_covariance(n, 10.0, seed.derive("slds/sigma"));
        let mus = place_centers(n, k, snr_target, &sigma, seed.derive("slds/centers"))?;
        let cfg = Self {
            n,
            t,
            rho,
            sigma,
            mus,
            chain: RegimeChain::new(k, p_stay)?,
            snr_target,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.2..0.5).contains(&self.rho) {
            return Err(Error::Config(format!(
                "rho {} outside [0.2, 0.5)",
                self.rho
            )));
        }
        if !(0.80..=0.95).contains(&self.chain.p_stay()) {
            return Err(Error::Config(format!(
                "p_stay {} outside [0.80, 0.95]",
                self.chain.p_stay()
            )));
        }
        if self.mus.len() != self.chain.k() || self.sigma.nrows() != self.n {
            return Err(Error::Config("SLDS dimensions are inconsistent".into()));
        }
        Ok(())
    }
}

/// Simulated series with its ground truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub x: TimeSeriesMatrix,
    pub z: Vec<usize>,
    /// True basin centers in observation space, one per state.
    pub centers: Vec<DVector<f64>>,
    pub p_star: DMatrix<f64>,
}

/// `x_1 ~ N(mu_{z_1}, Sigma)`, `x_t = rho x_{t-1} + (1 - rho) mu_{z_t} + xi_t`.
/// Parameter ranges are not checked here so that limiting cases can be run.
pub fn simulate_slds(cfg: &SldsConfig, seed: Seed) -> Result<SimOutput> {
    let z = sample_chain(&cfg.chain, cfg.t, seed.derive("slds/chain"));
    let mut rng = seed.derive("slds/noise").rng();
    let l = psd_sqrt(&cfg.sigma);
    let n = cfg.n;
    let mut x = DMatrix::zeros(cfg.t, n);
    let mut prev: Option<DVector<f64>> = None;
    for (t, &state) in z.iter().enumerate() {
        let xi = &l * DVector::from_fn(n, |_, _| gauss(&mut rng));
        let mu = &cfg.mus[state];
        let next = match &prev {
            None => mu + xi,
            Some(p) => p * cfg.rho + mu * (1.0 - cfg.rho) + xi,
        };
        x.set_row(t, &next.transpose());
        prev = Some(next);
    }
    Ok(SimOutput {
        x: TimeSeriesMatrix::new(x)?,
        z,
        centers: cfg.mus.clone(),
        p_star: cfg.chain.transition_matrix().clone(),
    })
}

#[derive(Debug, Clone)]
pub struct KuramotoConfig {
    pub n: usize,
    pub t: usize,
    pub omega: DVector<f64>,
    pub coupling: DMatrix<f64>,
    pub alpha: f64,
    pub zeta: f64,
    pub dt: f64,
    /// `K x N` phase templates.
    pub templates: DMatrix<f64>,
    pub chain: RegimeChain,
    pub burn_in: usize,
}

/// Scalar settings for [`KuramotoConfig::from_params`]. `alpha: None`
/// leaves the locking gain to calibration.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KuramotoParams {
    pub alpha: Option<f64>,
    pub zeta: f64,
    pub dt: f64,
    /// Total coupling per oscillator; each pair gets `coupling / N`.
    pub coupling: f64,
    pub omega_sd: f64,
    pub burn_in: usize,
}

impl Default for KuramotoParams {
    fn default() -> Self {
        Self {
            alpha: None,
            zeta: 0.05,
            dt: 0.05,
            coupling: 0.4,
            omega_sd: 0.1,
            burn_in: 200,
        }
    }
}

pub const KURAMOTO_ALPHA: f64 = 1.0;

impl KuramotoConfig {
    /// Default scalars with `omega ~ N(0, 0.1^2)`, all-to-all coupling
    /// `0.4 / N` and uniform random templates drawn from `seed`.
    pub fn generate(n: usize, k: usize, t: usize, p_stay: f64, seed: Seed) -> Result<Self> {
        Self::from_params(n, k, t, p_stay, &KuramotoParams::default(), seed)
    }

    pub fn from_params(
        n: usize,
        k: usize,
        t: usize,
        p_stay: f64,
        params: &KuramotoParams,
        seed: Seed,
    ) -> Result<Self> {
        let mut rng = seed.derive("kuramoto/params").rng();
        let omega = DVector::from_fn(n, |_, _| params.omega_sd * gauss(&mut rng));
        let mut coupling = DMatrix::from_element(n, n, params.coupling / n as f64);
        coupling.fill_diagonal(0.0);
        let templates = DMatrix::from_fn(k, n, |_, _| rng.random_range(0.0..2.0 * PI));
        Ok(Self {
            n,
            t,
            omega,
            coupling,
            alpha: params.alpha.unwrap_or(KURAMOTO_ALPHA),
            zeta: params.zeta,
            dt: params.dt,
            templates,
            chain: RegimeChain::new(k, p_stay)?,
            burn_in: params.burn_in,
        })
    }

    /// `dt (max|omega| + max row sum of C + alpha)`; must stay below pi.
    pub fn stability_bound(&self) -> f64 {
        let max_omega = self.omega.amax();
        let row = (0..self.n)
            .map(|i| self.coupling.row(i).sum())
            .fold(0.0, f64::max);
        self.dt * (max_omega + row + self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.alpha >= 0.0) || !(self.zeta >= 0.0) {
            return Err(Error::Config(
                "Kuramoto needs dt > 0, alpha >= 0, zeta >= 0".into(),
            ));
        }
        if self.coupling != self.coupling.transpose() || self.coupling.iter().any(|c| *c < 0.0) {
            return Err(Error::Config(
                "coupling must be symmetric and nonnegative".into(),
            ));
        }
        if self.templates.nrows() != self.chain.k()
            || self.templates.ncols() != self.n
            || self.omega.len() != self.n
        {
            return Err(Error::Config("Kuramoto dimensions are inconsistent".into()));
        }
        let bound = self.stability_bound();
        if bound >= PI {
            return Err(Error::UnstableStep { bound });
        }
        Ok(())
    }

    /// Largest locking gain used by calibration: the linearized locking step
    /// must not overshoot (`dt * alpha <= 1`) and the stability guard must
    /// hold with a 10% margin.
    pub fn max_stable_alpha(&self) -> f64 {
        let probe = Self {
            alpha: 0.0,
            ..self.clone()
        };
        (0.9 * (PI / self.dt - probe.stability_bound() / self.dt)).min(1.0 / self.dt)
    }

    pub fn centers(&self) -> Vec<DVector<f64>> {
        (0..self.templates.nrows())
            .map(|k| self.templates.row(k).transpose().map(f64::sin))
            .collect()
    }
}

/// Euler-Maruyama integration of
/// `d theta_i = [omega_i + sum_j C_ij sin(theta_j - theta_i) + alpha sin(phi_{z,i} - theta_i)] dt + sqrt(2 zeta) dW`,
/// observed as `y = sin(theta)` after discarding `burn_in` steps.
pub fn simulate_kuramoto(cfg: &KuramotoConfig, seed: Seed) -> Result<SimOutput> {
    cfg.validate()?;
    let total = cfg.t + cfg.burn_in;
    let z_all = sample_chain(&cfg.chain, total, seed.derive("kuramoto/chain"));
    let theta = integrate_phases(cfg, &z_all, seed)?;
    let y = theta.rows(cfg.burn_in, cfg.t).map(f64::sin);
    Ok(SimOutput {
        x: TimeSeriesMatrix::new(y)?,
        z: z_all[cfg.burn_in..].to_vec(),
        centers: cfg.centers(),
        p_star: cfg.chain.transition_matrix().clone(),
    })
}

/// Phase trajectory, one row per step including burn-in.
pub fn integrate_phases(cfg: &KuramotoConfig, z: &[usize], seed: Seed) -> Result<DMatrix<f64>> {
    let n = cfg.n;
    let mut rng = seed.derive("kuramoto/noise").rng();
    let mut init = seed.derive("kuramoto/init").rng();
    let mut theta = DVector::from_fn(n, |_, _| init.random_range(0.0..2.0 * PI));
    let noise = (2.0 * cfg.zeta * cfg.dt).sqrt();
    let mut out = DMatrix::zeros(z.len(), n);
    for (t, &state) in z.iter().enumerate() {
        out.set_row(t, &theta.transpose());
        let mut next = theta.clone();
        for i in 0..n {
            let mut drift = cfg.omega[i] + cfg.alpha * (cfg.templates[(state, i)] - theta[i]).sin();
            for j in 0..n {
                if cfg.coupling[(i, j)] != 0.0 {
                    drift += cfg.coupling[(i, j)] * (theta[j] - theta[i]).sin();
                }
            }
            next[i] += cfg.dt * drift + noise * gauss(&mut rng);
        }
        theta = next;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Kuramoto phases".into()));
    }
    Ok(out)
}

/// SNR of observed data: per-state means of the standardized series over
/// the average within-state covariance.
pub fn empirical_snr(x: &TimeSeriesMatrix, z: &[usize], k: usize) -> Result<f64> {
    let xs = standardize(x)?;
    let n = xs.n_vars();
    let mut means = Vec::new();
    let mut pooled = DMatrix::zeros(n, n);
    let mut visited = 0;
    for state in 0..k {
        let idx: Vec<usize> = z
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == state)
            .map(|(t, _)| t)
            .collect();
        if idx.len() < 2 {
            continue;
        }
        let sub = xs.select_rows(&idx)?;
        let mean = sub.column_means();
        pooled += crate::linalg::mle_covariance(sub.matrix(), &mean);
        means.push(mean);
        visited += 1;
    }
    if visited < 2 {
        return Err(Error::SingleState);
    }
    compute_snr(&means, &(pooled / visited as f64))
}

/// Sets `alpha` so that the simulated observables reach `snr_target`.
/// Bisection on `log alpha` with the simulation seed held fixed, so each
/// evaluation sees the same chain, initial phases and noise.
pub fn calibrate_kuramoto(
    cfg: &KuramotoConfig,
    snr_target: f64,
    seed: Seed,
) -> Result<KuramotoConfig> {
    let k = cfg.chain.k();
    let eval = |alpha: f64| -> Result<f64> {
        let c = KuramotoConfig {
            alpha,
            ..cfg.clone()
        };
        let out = simulate_kuramoto(&c, seed)?;
        empirical_snr(&out.x, &out.z, k)
    };
    let mut lo = 1e-3f64;
    let mut hi = cfg.max_stable_alpha();
    if eval(hi)? < snr_target {
        log::warn!("Kuramoto SNR target {snr_target} not reachable; using alpha = {hi:.3}");
        return Ok(KuramotoConfig {
            alpha: hi,
            ..cfg.clone()
        });
    }
    if eval(lo)? >= snr_target {
        return Ok(KuramotoConfig {
            alpha: lo,
            ..cfg.clone()
        });
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        let s = eval(mid)?;
        if (s - snr_target).abs() <= 1e-3 * snr_target {
            return Ok(KuramotoConfig {
                alpha: mid,
                ..cfg.clone()
            });
        }
        if s < snr_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    Ok(KuramotoConfig {
        alpha: hi,
        ..cfg.clone()
    })
}

/// Writes `X.csv`, `z.csv`, `centers.csv`, `P_star.csv` and `config.json`.
pub fn write_bundle(dir: &Path, out: &SimOutput, config: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_timeseries_csv(&dir.join("X.csv"), &out.x)?;
    let mut w = csv::Writer::from_path(dir.join("z.csv"))?;
    w.write_record(["t", "z"])?;
    for (t, z) in out.z.iter().enumerate() {
        w.write_record([t.to_string(), z.to_string()])?;
    }
    w.flush()?;
    let centers: Vec<Vec<f64>> = out
        .centers
        .iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    write_matrix_csv(&dir.join("centers.csv"), out.x.names(), &centers)?;
    let k = out.p_star.nrows();
    let header: Vec<String> = (0..k).map(|j| format!("s{j}")).collect();
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| out.p_star.row(i).iter().copied().collect())
        .collect();
    write_matrix_csv(&dir.join("P_star.csv"), &header, &rows)?;
    fs::write(dir.join("config.json"), serde_json::to_vec_pretty(config)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::transition_matrix;

    #[test]
    fn chain_rows_are_stochastic() {
        let c = RegimeChain::new(4, 0.85).unwrap();
        for i in 0..4 {
            assert!((c.transition_matrix().row(i).sum() - 1.0).abs() < 1e-12);
            assert_eq!(c.transition_matrix()[(i, i)], 0.85);
        }
    }

    #[test]
    fn sticky_chain_is_constant() {
        let c = RegimeChain::new(3, 1.0).unwrap();
        let z = sample_chain(&c, 500, Seed(3));
        assert!(z.iter().all(|&s| s == z[0]));
        assert_eq!(sample_chain(&c, 500, Seed(3)), z);
    }

    #[test]
    fn long_chain_matches_transition_matrix() {
        let c = RegimeChain::new(3, 0.9).unwrap();
        let z = sample_chain(&c, 100_000, Seed(8));
        let p = transition_matrix(&z, 3);
        assert!((p - c.transition_matrix()).amax() < 0.02);
    }

    #[test]
    fn snr_cases() {
        let a = DVector::from_vec(vec![0.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 4.0]);
        let id = DMatrix::identity(2, 2);
        assert!((compute_snr(&[a.clone(), b.clone()], &id).unwrap() - 5.0).abs() < 1e-15);
        let s1 = compute_snr(&[a.clone() * 2.5, b.clone() * 2.5], &id).unwrap();
        assert!((s1 - 12.5).abs() < 1e-12);
        assert!(matches!(compute_snr(&[a], &id), Err(Error::SingleState)));
    }

    #[test]
    fn snr_matches_brute_force_pairs() {
        let mut rng = Seed(4).rng();
        let pts: Vec<DVector<f64>> = (0..7)
            .map(|_| DVector::from_fn(3, |_, _| gauss(&mut rng)))
            .collect();
        let sigma = random_covariance(3, 10.0, Seed(5));
        let mut best = f64::INFINITY;
        for a in &pts {
            for b in &pts {
                let d: f64 = a
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d > 0.0 {
                    best = best.min(d);
                }
            }
        }
        let expected = best / (sigma.trace() / 3.0).sqrt();
        assert!((compute_snr(&pts, &sigma).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn two_centers_are_symmetric() {
        let mus = place_centers(5, 2, 2.0, &DMatrix::identity(5, 5), Seed(1)).unwrap();
        assert!((&mus[0] + &mus[1]).amax() < 1e-12);
        assert!((mus[0].norm() - 1.0).abs() < 1e-12);
        assert!((compute_snr(&mus, &DMatrix::identity(5, 5)).unwrap() - 2.0).abs() < 1e-12);
        let zero = place_centers(5, 3, 0.0, &DMatrix::identity(5, 5), Seed(1)).unwrap();
        assert!(zero.iter().all(|c| c.amax() == 0.0));
    }

    #[test]
    fn placed_centers_hit_target() {
        for (n, k) in [(6, 4), (3, 4), (2, 6), (10, 5)] {
            let sigma = random_covariance(n, 10.0, Seed(n as u64));
            let mus = place_centers(n, k, 2.0, &sigma, Seed(k as u64)).unwrap();
            assert!((compute_snr(&mus, &sigma).unwrap() - 2.0).abs() < 0.02 * 1e-3);
        }
        // regular simplex: all pairs equidistant
        let mus = place_centers(6, 4, 2.0, &DMatrix::identity(6, 6), Seed(2)).unwrap();
        let d = (&mus[0] - &mus[1]).norm();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(((&mus[i] - &mus[j]).norm() - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_properties() {
        let s = random_covariance(8, 10.0, Seed(3));
        assert!((s.trace() - 8.0).abs() < 1e-12);
        let eig = SymmetricEigen::new(s).eigenvalues;
        assert!(eig.max() / eig.min() <= 10.0 + 1e-9);
    }

    #[test]
    fn noise_free_slds_sits_on_centers() {
        let mus = vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![-3.0, 0.5]),
        ];
        let cfg = SldsConfig {
            n: 2,
            t: 50,
            rho: 0.0,
            sigma: DMatrix::zeros(2, 2),
            mus: mus.clone(),
            chain: RegimeChain::new(2, 0.9).unwrap(),
            snr_target: 0.0,
        };
        let out = simulate_slds(&cfg, Seed(1)).unwrap();
        for t in 0..50 {
            assert_eq!(out.x.row(t), mus[out.z[t]]);
        }
    }

    #[test]
    fn single_state_slds_mean() {
        let mu = DVector::from_vec(vec![0.7, -1.2, 2.0]);
        let sigma = random_covariance(3, 10.0, Seed(6));
        let cfg = SldsConfig {
            n: 3,
            t: 10_000,
            rho: 0.3,
            sigma: sigma.clone(),
            mus: vec![mu.clone()],
            chain: RegimeChain::new(1, 0.9).unwrap(),
            snr_target: 0.0,
        };
        let out = simulate_slds(&cfg, Seed(7)).unwrap();
        let mean = out.x.column_means();
        // AR(1): stationary variance Sigma/(1-rho^2), long-run variance of the
        // mean inflated by (1+rho)/(1-rho)
        for j in 0..3 {
            let var = sigma[(j, j)] / (1.0 - 0.09) * (1.3 / 0.7);
            let se = (var / 10_000.0).sqrt();
            assert!((mean[j] - mu[j]).abs() < 3.0 * se, "column {j}");
        }
    }

    #[test]
    fn slds_generate_respects_ranges_and_is_deterministic() {
        let cfg = SldsConfig::generate(6, 3, 400, 0.3, 0.9, 2.0, Seed(11)).unwrap();
        assert!((compute_snr(&cfg.mus, &cfg.sigma).unwrap() - 2.0).abs() < 0.05 * 2.0);
        let a = simulate_slds(&cfg, Seed(2)).unwrap();
        let b = simulate_slds(&cfg, Seed(2)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.z, b.z);
        assert!(SldsConfig::generate(6, 3, 400, 0.5, 0.9, 2.0, Seed(11)).is_err());
        assert!(SldsConfig::generate(6, 3, 400, 0.3, 0.7, 2.0, Seed(11)).is_err());
    }

    #[test]
    fn slds_dwell_segment_means() {
        let cfg = SldsConfig::generate(4, 3, 20_000, 0.3, 0.95, 3.0, Seed(12)).unwrap();
        let out = simulate_slds(&cfg, Seed(13)).unwrap();
        // points at least 20 steps into a dwell, after transients have decayed
        let mut run = 0;
        let mut sums = vec![(DVector::zeros(4), 0usize); 3];
        for t in 0..out.z.len() {
            run = if t > 0 && out.z[t] == out.z[t - 1] {
                run + 1
            } else {
                0
            };
            if run >= 20 {
                sums[out.z[t]].0 += out.x.row(t);
                sums[out.z[t]].1 += 1;
            }
        }
        for (k, (s, c)) in sums.iter().enumerate() {
            let mean = s / *c as f64;
            for j in 0..4 {
                let var = cfg.sigma[(j, j)] / (1.0 - 0.09) * (1.3 / 0.7);
                let se = (var / *c as f64).sqrt();
                assert!(
                    (mean[j] - cfg.mus[k][j]).abs() < 3.0 * se,
                    "state {k} column {j}"
                );
            }
        }
    }

    #[test]
    fn frozen_kuramoto_is_constant() {
        let mut cfg = KuramotoConfig::generate(4, 2, 100, 0.9, Seed(1)).unwrap();
        cfg.omega.fill(0.0);
        cfg.coupling.fill(0.0);
        cfg.alpha = 0.0;
        cfg.zeta = 0.0;
        let out = simulate_kuramoto(&cfg, Seed(2)).unwrap();
        for t in 1..100 {
            assert_eq!(out.x.row(t), out.x.row(0));
        }
    }

    #[test]
    fn strong_locking_tracks_templates() {
        let mut cfg = KuramotoConfig::generate(5, 3, 400, 0.95, Seed(3)).unwrap();
        cfg.coupling.fill(0.0);
        cfg.zeta = 0.0;
        // dt * alpha = 1 makes the linearized locking step contract in one step
        cfg.alpha = 20.0;
        let out = simulate_kuramoto(&cfg, Seed(4)).unwrap();
        let centers = cfg.centers();
        for t in 10..out.z.len() {
            if out.z[t - 10..=t].iter().all(|&s| s == out.z[t]) {
                let y = out.x.row(t);
                let err = (&y - &centers[out.z[t]]).amax();
                assert!(err < 1e-2 + cfg.omega.amax() / cfg.alpha, "t {t}: {err}");
            }
        }
    }

    #[test]
    fn free_diffusion_increment_variance() {
        let mut cfg = KuramotoConfig::generate(3, 1, 20_000, 0.9, Seed(5)).unwrap();
        cfg.coupling.fill(0.0);
        cfg.alpha = 0.0;
        cfg.burn_in = 0;
        let z = vec![0; cfg.t];
        let theta = integrate_phases(&cfg, &z, Seed(6)).unwrap();
        for i in 0..3 {
            let inc: Vec<f64> = (1..cfg.t)
                .map(|t| theta[(t, i)] - theta[(t - 1, i)])
                .collect();
            let m = inc.iter().sum::<f64>() / inc.len() as f64;
            let v = inc.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
            let expected = 2.0 * cfg.zeta * cfg.dt;
            assert!((v / expected - 1.0).abs() < 0.05, "{v} vs {expected}");
        }
    }

    #[test]
    fn unstable_step_is_rejected() {
        let mut cfg = KuramotoConfig::generate(3, 2, 10, 0.9, Seed(1)).unwrap();
        cfg.alpha = 100.0;
        assert!(matches!(
            simulate_kuramoto(&cfg, Seed(1)),
            Err(Error::UnstableStep { .. })
        ));
    }

    #[test]
    fn kuramoto_observables_bounded_and_calibrated() {
        let cfg = KuramotoConfig::generate(6, 3, 500, 0.9, Seed(7)).unwrap();
        let cal = calibrate_kuramoto(&cfg, 3.0, Seed(8)).unwrap();
        let out = simulate_kuramoto(&cal, Seed(8)).unwrap();
        assert!(out.x.matrix().iter().all(|v| (-1.0..=1.0).contains(v)));
        let snr = empirical_snr(&out.x, &out.z, 3).unwrap();
        assert!(
            (snr - 3.0).abs() < 0.05 * 3.0,
            "snr {snr} alpha {}",
            cal.alpha
        );
    }

    #[test]
    fn bundle_has_five_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SldsConfig::generate(3, 2, 30, 0.3, 0.9, 2.0, Seed(1)).unwrap();
        let out = simulate_slds(&cfg, Seed(1)).unwrap();
        write_bundle(dir.path(), &out, &serde_json::json!({"seed": 1})).unwrap();
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(
            names,
            ["P_star.csv", "X.csv", "centers.csv", "config.json", "z.csv"]
        );
    }
}
