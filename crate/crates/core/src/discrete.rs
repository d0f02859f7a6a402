//! Discrete energy landscape over `+-1` patterns: pairwise Ising energy,
//! l2-regularized pseudolikelihood fitting, greedy single-flip descent to
//! local minima, and an exact maximum-entropy fit by full enumeration for
//! small `N`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BinaryStateMatrix;
use crate::error::{Error, Result};

/// Largest `N` for which `2^N` enumeration is attempted.
pub const MAX_EXACT_VARS: usize = 12;

/// Default pseudolikelihood ridge.
pub const DEFAULT_LAMBDA: f64 = 1e-2;

const PLE_GRAD_TOL: f64 = 1e-6;
const PLE_MAX_ITER: usize = 20_000;
const EXACT_GRAD_TOL: f64 = 1e-6;
const EXACT_MAX_ITER: usize = 500;

/// Pairwise model `E(q) = -1/2 q^T W q - h^T q` with symmetric, zero-diagonal
/// `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    w: DMatrix<f64>,
    h: DVector<f64>,
}

impl IsingModel {
    pub fn new(w: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = h.len();
        if w.nrows() != n || w.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.nrows(),
            });
        }
        if w.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Ising parameters".into()));
        }
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                return Err(Error::InvalidInput("coupling diagonal must be zero".into()));
            }
            for j in i + 1..n {
                if w[(i, j)] != w[(j, i)] {
                    return Err(Error::InvalidInput(
                        "coupling matrix must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(Self { w, h })
    }

    /// Model with no couplings and no fields.
    pub fn zeros(n: usize) -> Self {
        Self {
            w: DMatrix::zeros(n, n),
            h: DVector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn couplings(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn fields(&self) -> &DVector<f64> {
        &self.h
    }

    /// `sum_j W_ij q_j + h_i`
    fn local_field(&self, q: &[i8], i: usize) -> f64 {
        let row = self.w.row(i);
        self.h[i]
            + q.iter()
                .enumerate()
                .map(|(j, &s)| row[j] * s as f64)
                .sum::<f64>()
    }
}

/// Energy of one `+-1` pattern.
pub fn ising_energy(q: &[i8], m: &IsingModel) -> Result<f64> {
    if q.len() != m.n() {
        return Err(Error::DimensionMismatch {
            expected: m.n(),
            got: q.len(),
        });
    }
    let qv = DVector::from_iterator(q.len(), q.iter().map(|&s| s as f64));
    Ok(-0.5 * qv.dot(&(&m.w * &qv)) - m.h.dot(&qv))
}

/// Pattern for state index `k` in the enumeration order: bit `i` set means
/// `q_i = +1`.
pub fn pattern_from_index(k: usize, n: usize) -> Vec<i8> {
    (0..n)
        .map(|i| if (k >> i) & 1 == 1 { 1 } else { -1 })
        .collect()
}

/// Boltzmann probabilities `exp(-E) / Z` over all `2^N` patterns, in
/// [`pattern_from_index`] order.
pub fn boltzmann_distribution(m: &IsingModel) -> Result<Vec<f64>> {
    let n = m.n();
    if n > MAX_EXACT_VARS {
        return Err(Error::TooManyVariables {
            n,
            max: MAX_EXACT_VARS,
        });
    }
    let neg_e: Vec<f64> = (0..1usize << n)
        .map(|k| -ising_energy(&pattern_from_index(k, n), m).expect("dimensions match"))
        .collect();
    let max = neg_e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = neg_e.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// A fitted Ising model with its optimizer diagnostics.
#[derive(Debug, Clone)]
pub struct IsingFit {
    pub model: IsingModel,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

#[inline]
fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One conditional `log P(q_i | q_-i)` problem. `theta[0]` is the field,
/// `theta[1..]` the couplings to the other variables in index order.
struct Conditional<'a> {
    target: Vec<f64>,
    design: &'a DMatrix<f64>,
    skip: usize,
    lambda: f64,
}

impl Conditional<'_> {
    fn margin(&self, theta: &[f64], t: usize) -> f64 {
        let row = self.design.row(t);
        let mut acc = theta[0];
        let mut k = 1;
        for j in 0..row.len() {
            if j != self.skip {
                acc += theta[k] * row[j];
                k += 1;
            }
        }
        2.0 * self.target[t] * acc
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let ll: f64 = (0..self.target.len())
            .map(|t| ln_sigmoid(self.margin(theta, t)))
            .sum();
        ll - self.lambda * theta.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = theta.iter().map(|v| -2.0 * self.lambda * v).collect();
        for t in 0..self.target.len() {
            let coef = 2.0 * self.target[t] * (1.0 - sigmoid(self.margin(theta, t)));
            g[0] += coef;
            let row = self.design.row(t);
            let mut k = 1;
            for j in 0..row.len() {
                if j != self.skip {
                    g[k] += coef * row[j];
                    k += 1;
                }
            }
        }
        g
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient ascent with Barzilai-Borwein trial steps and Armijo backtracking.
/// Returns `(theta, iterations, final gradient norm, converged)`.
fn ascend(problem: &Conditional<'_>, dim: usize, tol: f64) -> (Vec<f64>, usize, f64, bool) {
    let t = problem.target.len() as f64;
    let mut theta = vec![0.0; dim];
    let mut f = problem.objective(&theta);
    let mut g = problem.gradient(&theta);
    let mut step = 1.0 / (t * dim as f64 + 2.0 * problem.lambda);
    for iter in 0..PLE_MAX_ITER {
        let gn = norm(&g);
        if gn < tol {
            return (theta, iter, gn, true);
        }
        let mut alpha = step;
        // near the optimum the Armijo gain drops below the rounding error of
        // a sum over T terms, so allow slack at that level
        let slack = 64.0 * f64::EPSILON * f.abs().max(1.0);
        let (next, f_next) = loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(a, b)| a + alpha * b).collect();
            let fc = problem.objective(&cand);
            if fc >= f + 1e-4 * alpha * gn * gn - slack || alpha < 1e-300 {
                break (cand, fc);
            }
            alpha *= 0.5;
        };
        let g_next = problem.gradient(&next);
        // BB1 step for ascent: s.s / -(s.y)
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy < 0.0 && ss > 0.0 {
            (ss / -sy).clamp(1e-12, 1e6)
        } else {
            alpha * 2.0
        };
        if f_next <= f && ss == 0.0 {
            // no progress possible at machine precision
            let gn = norm(&g_next);
            return (next, iter + 1, gn, gn < tol);
        }
        theta = next;
        f = f_next;
        g = g_next;
    }
    let gn = norm(&g);
    (theta, PLE_MAX_ITER, gn, gn < tol)
}

fn as_float_matrix(q: &BinaryStateMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(q.n_time(), q.n_vars(), |t, j| q.row(t)[j] as f64)
}

fn check_non_constant(q: &BinaryStateMatrix) -> Result<()> {
    for j in 0..q.n_vars() {
        let first = q.row(0)[j];
        if q.rows().all(|r| r[j] == first) {
            return Err(Error::ConstantColumn { column: j });
        }
    }
    Ok(())
}

/// Maximizes `sum_t sum_i log sigma(2 q_ti (h_i + sum_{j!=i} W_ij q_tj))
/// - lambda (|W|^2 + |h|^2)` one conditional at a time, then symmetrizes
/// `W <- (W + W^T) / 2`.
///
/// Non-convergence is reported through [`IsingFit::converged`]; the returned
/// parameters are the last (and best) iterate.
pub fn fit_ising_ple(q: &BinaryStateMatrix, lambda: f64) -> Result<IsingFit> {
    if q.n_time() < 10 {
        return Err(Error::TooShort {
            needed: 10,
            got: q.n_time(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput("lambda must be nonnegative".into()));
    }
    check_non_constant(q)?;
    let n = q.n_vars();
    let design = as_float_matrix(q);
    let row_tol = PLE_GRAD_TOL / (n as f64).sqrt();

    let rows: Vec<(Vec<f64>, usize, f64, bool)> = (0..n)
        .map(|i| {
            let problem = Conditional {
                target: design.column(i).iter().copied().collect(),
                design: &design,
                skip: i,
                lambda,
            };
            ascend(&problem, n, row_tol)
        })
        .collect();

    let mut w = DMatrix::zeros(n, n);
    let mut h = DVector::zeros(n);
    for (i, (theta, _, _, _)) in rows.iter().enumerate() {
        h[i] = theta[0];
        let mut k = 1;
        for j in 0..n {
            if j != i {
                w[(i, j)] = theta[k];
                k += 1;
            }
        }
    }
    let w = crate::linalg::symmetrize(&w);
    let grad_norm = rows.iter().map(|r| r.2 * r.2).sum::<f64>().sqrt();
    let converged = rows.iter().all(|r| r.3);
    if !converged {
        log::warn!("pseudolikelihood fit stopped at gradient norm {grad_norm:.3e}");
    }
    Ok(IsingFit {
        model: IsingModel::new(w, h)?,
        lambda,
        converged,
        iterations: rows.iter().map(|r| r.1).max().unwrap_or(0),
        grad_norm,
    })
}

/// Best-improvement single-flip descent. Each step flips the variable with
/// the largest energy decrease (lowest index on ties) until no flip lowers
/// the energy.
pub fn greedy_descent(q: &[i8], m: &IsingModel) -> Vec<i8> {
    greedy_descent_path(q, m)
        .pop()
        .unwrap_or_else(|| q.to_vec())
}

/// Every pattern visited by [`greedy_descent`], starting with `q`.
pub fn greedy_descent_path(q: &[i8], m: &IsingModel) -> Vec<Vec<i8>> {
    let n = m.n();
    let mut cur = q.to_vec();
    let mut fields: Vec<f64> = (0..n).map(|i| m.local_field(&cur, i)).collect();
    let mut path = vec![cur.clone()];
    // energy strictly decreases, so at most 2^N steps; the cap only guards
    // against pathological rounding
    let cap = 1usize << n.min(24);
    for _ in 0..cap {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            let delta = 2.0 * cur[i] as f64 * fields[i];
            if delta < 0.0 && best.is_none_or(|(_, d)| delta < d) {
                best = Some((i, delta));
            }
        }
        let Some((i, _)) = best else { break };
        cur[i] = -cur[i];
        let s = 2.0 * cur[i] as f64;
        for (j, f) in fields.iter_mut().enumerate() {
            *f += m.w[(j, i)] * s;
        }
        path.push(cur.clone());
    }
    path
}

/// Basin membership of every time point under greedy descent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasinAssignment {
    /// `labels[t]` indexes into `modes`.
    pub labels: Vec<usize>,
    /// Distinct local minima, in order of first appearance.
    pub modes: Vec<Vec<i8>>,
}

pub fn assign_basins(q: &BinaryStateMatrix, m: &IsingModel) -> BasinAssignment {
    let reached: Vec<Vec<i8>> = (0..q.n_time())
        .into_par_iter()
        .map(|t| greedy_descent(q.row(t), m))
        .collect();
    let mut index: HashMap<Vec<i8>, usize> = HashMap::new();
    let mut modes = Vec::new();
    let labels = reached
        .into_iter()
        .map(|mode| {
            *index.entry(mode.clone()).or_insert_with(|| {
                modes.push(mode);
                modes.len() - 1
            })
        })
        .collect();
    BasinAssignment { labels, modes }
}

/// Sufficient statistics `(q_i ..., q_i q_j for i<j ...)` of one pattern.
fn sufficient_stats(q: &[i8]) -> Vec<f64> {
    let n = q.len();
    let mut s = Vec::with_capacity(n + n * (n - 1) / 2);
    s.extend(q.iter().map(|&v| v as f64));
    for i in 0..n {
        for j in i + 1..n {
            s.push((q[i] * q[j]) as f64);
        }
    }
    s
}

/// Exact maximum-likelihood fit of the pairwise maximum-entropy model, with
/// the partition function computed by enumerating all `2^N` patterns.
/// Damped Newton iterations on the concave log-likelihood; converged when
/// the moment mismatch has norm below `1e-6`.
pub fn exact_ising_fit(q: &BinaryStateMatrix) -> Result<IsingFit> {
    let n = q.n_vars();
    if n > MAX_EXACT_VARS {
        return Err(Error::TooManyVariables {
            n,
            max: MAX_EXACT_VARS,
        });
    }
    if q.n_time() == 0 || n == 0 {
        return Err(Error::InvalidInput("empty state matrix".into()));
    }
    let p = n + n * (n - 1) / 2;
    let states: Vec<Vec<f64>> = (0..1usize << n)
        .map(|k| sufficient_stats(&pattern_from_index(k, n)))
        .collect();
    let mut data_moments = vec![0.0; p];
    for row in q.rows() {
        for (acc, v) in data_moments.iter_mut().zip(sufficient_stats(row)) {
            *acc += v;
        }
    }
    let tt = q.n_time() as f64;
    data_moments.iter_mut().for_each(|v| *v /= tt);

    // mean log-likelihood, model moments and covariance at theta
    let evaluate = |theta: &[f64], want_cov: bool| {
        let neg_e: Vec<f64> = states
            .iter()
            .map(|s| s.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect();
        let max = neg_e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = neg_e.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = w.iter().sum();
        let log_z = max + z.ln();
        let mut mean = vec![0.0; p];
        for (s, wk) in states.iter().zip(&w) {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += wk / z * v;
            }
        }
        let cov = want_cov.then(|| {
            let mut c = DMatrix::zeros(p, p);
            for (s, wk) in states.iter().zip(&w) {
                let pk = wk / z;
                for a in 0..p {
                    let da = s[a] - mean[a];
                    for b in a..p {
                        c[(a, b)] += pk * da * (s[b] - mean[b]);
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    c[(a, b)] = c[(b, a)];
                }
            }
            c
        });
        let ll: f64 = data_moments
            .iter()
            .zip(theta)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            - log_z;
        (ll, mean, cov)
    };

    let mut theta = vec![0.0; p];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut damping: f64 = 0.0;
    for iter in 0..EXACT_MAX_ITER {
        iterations = iter;
        let (ll, mean, cov) = evaluate(&theta, true);
        let grad: Vec<f64> = data_moments.iter().zip(&mean).map(|(a, b)| a - b).collect();
        grad_norm = norm(&grad);
        if grad_norm < EXACT_GRAD_TOL {
            converged = true;
            break;
        }
        let cov = cov.expect("requested");
        let g = DVector::from_vec(grad.clone());
        // Levenberg-style damping keeps the step defined when a moment sits
        // on the boundary of the marginal polytope
        let mut accepted = false;
        for _ in 0..60 {
            let mut hess = cov.clone();
            for a in 0..p {
                hess[(a, a)] += damping + 1e-12;
            }
            let Some(chol) = hess.cholesky() else {
                damping = (damping * 10.0).max(1e-8);
                continue;
            };
            let step = chol.solve(&g);
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let (ll_c, _, _) = evaluate(&cand, false);
            if ll_c >= ll - 1e-15 * ll.abs().max(1.0) && ll_c.is_finite() {
                theta = cand;
                damping *= 0.1;
                if damping < 1e-10 {
                    damping = 0.0;
                }
                accepted = true;
                break;
            }
            damping = (damping * 10.0).max(1e-6);
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        log::warn!("exact maximum-entropy fit stopped at moment mismatch {grad_norm:.3e}");
    }

    let mut w = DMatrix::zeros(n, n);
    let h = DVector::from_iterator(n, theta[..n].iter().copied());
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            w[(i, j)] = theta[k];
            w[(j, i)] = theta[k];
            k += 1;
        }
    }
    Ok(IsingFit {
        model: IsingModel::new(w, h)?,
        lambda: 0.0,
        converged,
        iterations,
        grad_norm,
    })
}

/// JSON form of a fitted Ising model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsingModelRecord {
    #[serde(rename = "N")]
    pub n: usize,
    /// Row-major couplings.
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub h: Vec<f64>,
    pub lambda_ising: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl From<&IsingFit> for IsingModelRecord {
    fn from(fit: &IsingFit) -> Self {
        let n = fit.model.n();
        Self {
            n,
            w: (0..n * n).map(|k| fit.model.w[(k / n, k % n)]).collect(),
            h: fit.model.h.iter().copied().collect(),
            lambda_ising: fit.lambda,
            converged: fit.converged,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
        }
    }
}

impl TryFrom<IsingModelRecord> for IsingFit {
    type Error = Error;

    fn try_from(r: IsingModelRecord) -> Result<Self> {
        if r.w.len() != r.n * r.n || r.h.len() != r.n {
            return Err(Error::format("Ising model", "W must be N*N and h length N"));
        }
        let model = IsingModel::new(
            DMatrix::from_row_slice(r.n, r.n, &r.w),
            DVector::from_vec(r.h),
        )?;
        Ok(IsingFit {
            model,
            lambda: r.lambda_ising,
            converged: r.converged,
            iterations: r.iterations,
            grad_norm: r.grad_norm,
        })
    }
}
