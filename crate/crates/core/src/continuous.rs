//! Unimodal continuous landscape: quadratic energy
//! `E(x) = 1/2 (x - mu)^T S (x - mu) - h^T x` with SPD precision `S`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_PD_TOL};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct GaussianEnergyModel {
    mu: DVector<f64>,
    s: DMatrix<f64>,
    h: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    x_star: DVector<f64>,
    e_min: f64,
}

impl GaussianEnergyModel {
    pub fn new(mu: DVector<f64>, s: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        Self::with_tolerance(mu, s, h, DEFAULT_PD_TOL)
    }

    /// As [`GaussianEnergyModel::new`] with a custom relative eigenvalue floor.
    pub fn with_tolerance(
        mu: DVector<f64>,
        s: DMatrix<f64>,
        h: DVector<f64>,
        pd_tol: f64,
    ) -> Result<Self> {
        let n = mu.len();
        if s.nrows() != n || h.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if s.nrows() != n { s.nrows() } else { h.len() },
            });
        }
        if mu.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        linalg::check_spd(&s, pd_tol)?;
        let chol = linalg::cholesky(&s)?;
        let a = chol.solve(&h);
        let x_star = &mu + &a;
        let e_min = -h.dot(&mu) - 0.5 * h.dot(&a);
        Ok(Self {
            mu,
            s,
            h,
            chol,
            x_star,
            e_min,
        })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn field(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    pub fn e_min(&self) -> f64 {
        self.e_min
    }

    /// `S^{-1}`
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn logdet_precision(&self) -> f64 {
        linalg::logdet_chol(&self.chol)
    }

    /// Energy scale `sigma_E = sqrt(tr(S^{-1}) / N)`.
    pub fn sigma_e(&self) -> f64 {
        (self.covariance().trace() / self.n() as f64).sqrt()
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

pub fn quadratic_energy(x: &DVector<f64>, m: &GaussianEnergyModel) -> Result<f64> {
    m.check_dim(x)?;
    let d = x - &m.mu;
    Ok(0.5 * linalg::quad_form(&m.s, &d) - m.h.dot(x))
}

/// Minimizer `x* = mu + S^{-1} h` and minimum `E_min = -h^T mu - 1/2 h^T S^{-1} h`.
pub fn energy_minimum(m: &GaussianEnergyModel) -> (DVector<f64>, f64) {
    (m.x_star.clone(), m.e_min)
}

/// Energies of every row of `x`.
pub fn energy_series(x: &TimeSeriesMatrix, m: &GaussianEnergyModel) -> Result<Vec<f64>> {
    if x.n_vars() != m.n() {
        return Err(Error::DimensionMismatch {
            expected: m.n(),
            got: x.n_vars(),
        });
    }
    (0..x.n_time())
        .into_par_iter()
        .map(|t| quadratic_energy(&x.row(t), m))
        .collect()
}

/// Gaussian log-density with mean `mu + S^{-1} h` and precision `S`.
pub fn log_density(x: &DVector<f64>, m: &GaussianEnergyModel) -> Result<f64> {
    m.check_dim(x)?;
    let d = x - &m.x_star;
    Ok(
        0.5 * m.logdet_precision()
            - 0.5 * m.n() as f64 * LN_2PI
            - 0.5 * linalg::quad_form(&m.s, &d),
    )
}

/// Ridge added to the sample covariance before inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `1e-6 * tr(cov) / N`
    Relative(f64),
    Absolute(f64),
    Off,
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-6)
    }
}

impl Ridge {
    pub(crate) fn amount(self, cov: &DMatrix<f64>) -> f64 {
        match self {
            Ridge::Relative(c) => c * cov.trace() / cov.nrows() as f64,
            Ridge::Absolute(v) => v,
            Ridge::Off => 0.0,
        }
    }
}

/// Closed-form maximum-likelihood fit with `h = 0`, `mu` the sample mean and
/// `S` the inverse of the (ridged) divisor-`T` sample covariance.
pub fn fit_gaussian_mle(x: &TimeSeriesMatrix, ridge: Ridge) -> Result<GaussianEnergyModel> {
    let n = x.n_vars();
    let mean = x.column_means();
    let mut cov = linalg::mle_covariance(x.matrix(), &mean);
    if cov.trace() <= 0.0 {
        return Err(Error::SingularCovariance);
    }
    let r = ridge.amount(&cov);
    for i in 0..n {
        cov[(i, i)] += r;
    }
    let cov = linalg::symmetrize(&cov);
    if linalg::check_spd(&cov, DEFAULT_PD_TOL).is_err() {
        return Err(Error::SingularCovariance);
    }
    let s = linalg::symmetrize(&linalg::cholesky(&cov)?.inverse());
    GaussianEnergyModel::new(mean, s, DVector::zeros(n))
}

/// `(E_t - E_min) / sigma_E`, clamped at zero against rounding.
pub fn normalize_energy(energies: &[f64], m: &GaussianEnergyModel) -> Result<Vec<f64>> {
    normalize_with(energies, m.e_min, m.sigma_e())
}

pub(crate) fn normalize_with(energies: &[f64], e_min: f64, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::DegenerateScale);
    }
    Ok(energies
        .iter()
        .map(|e| ((e - e_min) / sigma).max(0.0))
        .collect())
}

/// JSON form of a continuous model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianModelRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub mu: Vec<f64>,
    pub h: Vec<f64>,
    /// Row-major precision.
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    #[serde(rename = "E_min")]
    pub e_min: f64,
    #[serde(rename = "sigma_E")]
    pub sigma_e: f64,
}

impl From<&GaussianEnergyModel> for GaussianModelRecord {
    fn from(m: &GaussianEnergyModel) -> Self {
        let n = m.n();
        Self {
            n,
            mu: m.mu.iter().copied().collect(),
            h: m.h.iter().copied().collect(),
            s: (0..n * n).map(|k| m.s[(k / n, k % n)]).collect(),
            e_min: m.e_min,
            sigma_e: m.sigma_e(),
        }
    }
}

impl TryFrom<GaussianModelRecord> for GaussianEnergyModel {
    type Error = Error;

    fn try_from(r: GaussianModelRecord) -> Result<Self> {
        if r.mu.len() != r.n || r.h.len() != r.n || r.s.len() != r.n * r.n {
            return Err(Error::format("continuous model", "inconsistent dimensions"));
        }
        GaussianEnergyModel::new(
            DVector::from_vec(r.mu),
            DMatrix::from_row_slice(r.n, r.n, &r.s),
            DVector::from_vec(r.h),
        )
    }
}
