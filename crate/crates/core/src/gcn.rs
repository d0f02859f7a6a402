//! Graph-convolutional parametrization of a low-rank-plus-jitter precision
//! matrix `S = Z Z^T + eps I`, `Z = H W_z`, with external field
//! `h = H f` read out from the node embeddings `H`.
//!
//! Gradients are analytic. The identities used throughout:
//! `S^{-1} Z = Z K^{-1}` and `S^{-1} v = (v - Z K^{-1} Z^T v) / eps` with
//! `K = eps I_r + Z^T Z`, which avoid forming the dense inverse.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::continuous::GaussianEnergyModel;
use crate::data::{standardize, Seed, TimeSeriesMatrix};
use crate::error::{Error, Result};
use crate::graph::FunctionalGraph;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const HIDDEN_WIDTH: usize = 16;
pub const FEATURE_DIM: usize = 8;
pub const DEFAULT_RANK_CANDIDATES: [usize; 3] = [8, 12, 16];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-node summary of the standardized series: mean, std, skewness, excess
/// kurtosis, lag-1 autocorrelation, degree, mean `|R|` to neighbours, then
/// zero padding up to [`FEATURE_DIM`].
pub fn node_features(x: &TimeSeriesMatrix, graph: &FunctionalGraph) -> Result<DMatrix<f64>> {
    let n = x.n_vars();
    if graph.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: graph.n(),
        });
    }
    let z = standardize(x)?;
    let z = z.matrix();
    let t = z.nrows() as f64;
    let mut f = DMatrix::zeros(n, FEATURE_DIM);
    for j in 0..n {
        let col = z.column(j);
        let mean = col.sum() / t;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
        let m2 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
        let m3 = col.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / t;
        let m4 = col.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / t;
        let lag: f64 = (1..z.nrows())
            .map(|k| (col[k] - mean) * (col[k - 1] - mean))
            .sum();
        let degree: f64 = (0..n).map(|k| graph.a[(j, k)]).sum();
        let strength: f64 = (0..n)
            .map(|k| graph.a[(j, k)] * graph.r[(j, k)].abs())
            .sum();
        f[(j, 0)] = mean;
        f[(j, 1)] = var.sqrt();
        f[(j, 2)] = m3 / m2.powf(1.5);
        f[(j, 3)] = m4 / (m2 * m2) - 3.0;
        f[(j, 4)] = lag / (m2 * t);
        f[(j, 5)] = degree;
        f[(j, 6)] = if degree > 0.0 { strength / degree } else { 0.0 };
    }
    Ok(f)
}

/// Learnable weights. Layers apply `relu` after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub layers: Vec<DMatrix<f64>>,
    pub wz: DMatrix<f64>,
    pub field_map: DVector<f64>,
    pub epsilon: f64,
}

fn uniform_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl GcnParams {
    /// Two layers `d0 -> hidden -> hidden`, uniform `+-1/sqrt(fan_in)`
    /// weights and a zero field map.
    pub fn init(d0: usize, hidden: usize, rank: usize, epsilon: f64, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let layers = vec![
            uniform_matrix(d0, hidden, d0, &mut rng),
            uniform_matrix(hidden, hidden, hidden, &mut rng),
        ];
        let wz = uniform_matrix(hidden, rank, hidden, &mut rng);
        Self {
            layers,
            wz,
            field_map: DVector::zeros(hidden),
            epsilon,
        }
    }

    pub fn rank(&self) -> usize {
        self.wz.ncols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.wz.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("at least one layer is required".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].ncols(),
                    got: pair[1].nrows(),
                });
            }
        }
        let d = self.layers.last().map(|l| l.ncols()).unwrap_or(0);
        if self.wz.nrows() != d || self.field_map.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.wz.nrows(),
            });
        }
        let finite = self
            .layers
            .iter()
            .flat_map(|l| l.iter())
            .chain(self.wz.iter())
            .chain(self.field_map.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("GCN weights".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum::<usize>() + self.wz.len() + self.field_map.len()
    }

    /// Column-major concatenation: layers, `W_z`, field map.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(l.as_slice());
        }
        v.extend_from_slice(self.wz.as_slice());
        v.extend_from_slice(self.field_map.as_slice());
        v
    }

    /// Copy of `self` with weights taken from `flat` (same layout as
    /// [`GcnParams::to_flat`]).
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.num_params());
        let mut out = self.clone();
        let mut off = 0;
        for l in out.layers.iter_mut() {
            let k = l.len();
            l.as_mut_slice().copy_from_slice(&flat[off..off + k]);
            off += k;
        }
        let k = out.wz.len();
        out.wz.as_mut_slice().copy_from_slice(&flat[off..off + k]);
        off += k;
        out.field_map.as_mut_slice().copy_from_slice(&flat[off..]);
        out
    }

    /// Offsets of each parameter block in the flat layout.
    fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut off = 0;
        for len in self
            .layers
            .iter()
            .map(|l| l.len())
            .chain([self.wz.len(), self.field_map.len()])
        {
            out.push(off..off + len);
            off += len;
        }
        out
    }
}

struct ForwardCache {
    /// `B A_{l-1}` for each layer.
    propagated: Vec<DMatrix<f64>>,
    /// Pre-activations `B A_{l-1} Theta_l`.
    pre: Vec<DMatrix<f64>>,
    h: DMatrix<f64>,
}

fn forward_cached(
    bnorm: &DMatrix<f64>,
    features: &DMatrix<f64>,
    params: &GcnParams,
) -> Result<ForwardCache> {
    params.validate()?;
    let n = bnorm.nrows();
    if bnorm.ncols() != n || features.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: features.nrows(),
        });
    }
    if features.ncols() != params.layers[0].nrows() {
        return Err(Error::DimensionMismatch {
            expected: params.layers[0].nrows(),
            got: features.ncols(),
        });
    }
    let last = params.layers.len() - 1;
    let mut act = features.clone();
    let mut propagated = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    for (l, theta) in params.layers.iter().enumerate() {
        let p = bnorm * &act;
        let z = &p * theta;
        act = if l < last {
            z.map(|v| v.max(0.0))
        } else {
            z.clone()
        };
        propagated.push(p);
        pre.push(z);
    }
    if act.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GCN embedding".into()));
    }
    Ok(ForwardCache {
        propagated,
        pre,
        h: act,
    })
}

/// Node embeddings `H`.
pub fn gcn_forward(
    bnorm: &DMatrix<f64>,
    features: &DMatrix<f64>,
    params: &GcnParams,
) -> Result<DMatrix<f64>> {
    Ok(forward_cached(bnorm, features, params)?.h)
}

/// `Z = H W_z` and `S = Z Z^T + eps I`.
pub fn build_precision(
    h: &DMatrix<f64>,
    wz: &DMatrix<f64>,
    epsilon: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = h * wz;
    let n = z.nrows();
    let mut s = &z * z.transpose();
    for i in 0..n {
        s[(i, i)] += epsilon;
    }
    (z, crate::linalg::symmetrize(&s))
}

/// `K = eps I_r + Z^T Z`
fn capacitance(z: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    let mut k = z.transpose() * z;
    for i in 0..k.nrows() {
        k[(i, i)] += epsilon;
    }
    k
}

/// `log det(Z Z^T + eps I) = N log eps + log det(I_r + Z^T Z / eps)`.
pub fn logdet_lowrank(z: &DMatrix<f64>, epsilon: f64) -> f64 {
    let n = z.nrows() as f64;
    let mut m = z.transpose() * z / epsilon;
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    let core = match m.clone().cholesky() {
        Some(c) => crate::linalg::logdet_chol(&c),
        None => m.determinant().ln(),
    };
    n * epsilon.ln() + core
}

/// `S^{-1} v` by the Woodbury identity.
pub fn woodbury_solve(z: &DMatrix<f64>, epsilon: f64, v: &DVector<f64>) -> DVector<f64> {
    let k = capacitance(z, epsilon);
    let ztv = z.transpose() * v;
    let inner = match k.clone().cholesky() {
        Some(c) => c.solve(&ztv),
        None => k
            .lu()
            .solve(&ztv)
            .unwrap_or_else(|| DVector::zeros(ztv.len())),
    };
    (v - z * inner) / epsilon
}

/// Gradient of the loss, shaped like [`GcnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients {
    pub layers: Vec<DMatrix<f64>>,
    pub wz: DMatrix<f64>,
    pub field_map: DVector<f64>,
}

impl GcnGradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(l.as_slice());
        }
        v.extend_from_slice(self.wz.as_slice());
        v.extend_from_slice(self.field_map.as_slice());
        v
    }
}

fn centered(x: &TimeSeriesMatrix, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.matrix().clone();
    for mut row in c.row_iter_mut() {
        row -= mu.transpose();
    }
    c
}

/// `J' = 1/2 sum_t e_t^T S e_t - (T/2) log det S + lambda |S|_F^2` with
/// `e_t = x_t - mu - S^{-1} h`, `mu` the column means of `x`, and its
/// gradient with respect to every weight.
pub fn nll_loss(
    x: &TimeSeriesMatrix,
    bnorm: &DMatrix<f64>,
    features: &DMatrix<f64>,
    params: &GcnParams,
    lambda_frob: f64,
) -> Result<(f64, GcnGradients)> {
    let n = x.n_vars();
    if bnorm.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bnorm.nrows(),
        });
    }
    let t = x.n_time() as f64;
    let eps = params.epsilon;
    let cache = forward_cached(bnorm, features, params)?;
    let h_emb = &cache.h;
    let z = h_emb * &params.wz;
    let field = h_emb * &params.field_map;

    let k = capacitance(&z, eps);
    let k_chol = k.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let a = (&field - &z * k_chol.solve(&(z.transpose() * &field))) / eps;

    let mut e = centered(x, &x.column_means());
    for mut row in e.row_iter_mut() {
        row -= a.transpose();
    }
    let ez = &e * &z;
    let quad = ez.norm_squared() + eps * e.norm_squared();
    let logdet = logdet_lowrank(&z, eps);
    let ztz = z.transpose() * &z;
    let frob = ztz.norm_squared() + 2.0 * eps * z.norm_squared() + n as f64 * eps * eps;
    let loss = 0.5 * quad - 0.5 * t * logdet + lambda_frob * frob;

    // dJ/dS = 1/2 E^T E + ebar a^T - (T/2) S^{-1} + 2 lambda S; dZ = (G + G^T) Z
    let ebar: DVector<f64> = e.row_sum().transpose();
    let s_inv_z = k_chol.solve(&z.transpose()).transpose();
    let sz = &z * &ztz + &z * eps;
    let d_z = e.transpose() * &ez + &ebar * (a.transpose() * &z) + &a * (ebar.transpose() * &z)
        - s_inv_z * t
        + sz * (4.0 * lambda_frob);
    let d_field = -&ebar;

    let d_wz = h_emb.transpose() * &d_z;
    let d_fmap = h_emb.transpose() * &d_field;
    let mut d_act = &d_z * params.wz.transpose() + &d_field * params.field_map.transpose();

    let last = params.layers.len() - 1;
    let mut d_layers = vec![DMatrix::zeros(0, 0); params.layers.len()];
    for l in (0..=last).rev() {
        let d_pre = if l < last {
            d_act.zip_map(&cache.pre[l], |g, p| if p > 0.0 { g } else { 0.0 })
        } else {
            d_act
        };
        d_layers[l] = cache.propagated[l].transpose() * &d_pre;
        d_act = bnorm.transpose() * (&d_pre * params.layers[l].transpose());
    }

    let grads = GcnGradients {
        layers: d_layers,
        wz: d_wz,
        field_map: d_fmap,
    };
    if !loss.is_finite() || grads.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GCN loss or gradient".into()));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Rescale the whole gradient to norm at most the threshold.
    Global,
    /// Rescale each weight block separately.
    PerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_threshold: f64,
    pub clip_mode: ClipMode,
    pub lambda_frob: f64,
    pub convergence_tol: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub hidden_width: usize,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            clip_threshold: 0.1,
            clip_mode: ClipMode::Global,
            lambda_frob: 1e-3,
            convergence_tol: 1e-4,
            patience_epochs: 5,
            max_epochs: 2000,
            hidden_width: HIDDEN_WIDTH,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.learning_rate,
            self.clip_threshold,
            self.convergence_tol,
            self.epsilon,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.lambda_frob >= 0.0) {
            return Err(Error::Config(
                "training rates and tolerances must be positive".into(),
            ));
        }
        if self.patience_epochs == 0 || self.max_epochs == 0 || self.hidden_width == 0 {
            return Err(Error::Config(
                "patience, max_epochs and hidden_width must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Lowest-loss iterate seen.
    pub params: GcnParams,
    pub loss: f64,
    pub initial_loss: f64,
    pub converged: bool,
    pub epochs: usize,
    pub trace: Vec<TraceRow>,
}

fn clip(g: &mut [f64], blocks: &[std::ops::Range<usize>], threshold: f64, mode: ClipMode) {
    let mut scale = |r: std::ops::Range<usize>| {
        let s = &mut g[r];
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > threshold {
            let f = threshold / norm;
            s.iter_mut().for_each(|v| *v *= f);
        }
    };
    match mode {
        ClipMode::Global => scale(0..blocks.last().map_or(0, |r| r.end)),
        ClipMode::PerBlock => blocks.iter().cloned().for_each(scale),
    }
}

/// Full-batch Adam on [`nll_loss`]. One epoch is one gradient step.
/// Converged once `|dJ'|` and the change in gradient norm both stay below
/// the tolerance for `patience_epochs` consecutive epochs.
pub fn train(
    x: &TimeSeriesMatrix,
    graph: &FunctionalGraph,
    features: &DMatrix<f64>,
    rank: usize,
    config: &TrainConfig,
    seed: Seed,
) -> Result<TrainResult> {
    config.validate()?;
    let n = x.n_vars();
    if rank == 0 || rank > n {
        return Err(Error::InvalidInput(format!("rank {rank} outside 1..={n}")));
    }
    let init = GcnParams::init(
        features.ncols(),
        config.hidden_width,
        rank,
        config.epsilon,
        seed,
    );
    let blocks = init.block_ranges();
    let mut theta = init.to_flat();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let (b1, b2, adam_eps) = (0.9f64, 0.999f64, 1e-8);

    let mut trace = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut initial_loss = f64::NAN;
    let mut prev: Option<(f64, f64)> = None;
    let mut calm = 0;
    let mut converged = false;
    let mut epochs = 0;
    for epoch in 0..config.max_epochs {
        epochs = epoch + 1;
        let params = init.with_flat(&theta);
        let (loss, grads) = nll_loss(x, &graph.bnorm, features, &params, config.lambda_frob)?;
        let mut g = grads.to_flat();
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        trace.push(TraceRow {
            epoch,
            loss,
            grad_norm: gnorm,
        });
        if epoch == 0 {
            initial_loss = loss;
        }
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, theta.clone()));
        }
        if let Some((pl, pg)) = prev {
            if (loss - pl).abs() < config.convergence_tol
                && (gnorm - pg).abs() < config.convergence_tol
            {
                calm += 1;
            } else {
                calm = 0;
            }
        }
        prev = Some((loss, gnorm));
        if calm >= config.patience_epochs {
            converged = true;
            break;
        }

        clip(&mut g, &blocks, config.clip_threshold, config.clip_mode);
        let step = (epoch + 1) as i32;
        let c1 = 1.0 - b1.powi(step);
        let c2 = 1.0 - b2.powi(step);
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            theta[i] -= config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + adam_eps);
        }
    }
    if !converged {
        log::warn!(
            "GCN training hit max_epochs = {} without converging",
            config.max_epochs
        );
    }
    let (loss, flat) = best.expect("at least one epoch");
    Ok(TrainResult {
        params: init.with_flat(&flat),
        loss,
        initial_loss,
        converged,
        epochs,
        trace,
    })
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Continuous energy model implied by trained weights: `mu` the column means
/// of `x`, `S = Z Z^T + eps I`, `h = H f`.
pub fn to_energy_model(
    x: &TimeSeriesMatrix,
    bnorm: &DMatrix<f64>,
    features: &DMatrix<f64>,
    params: &GcnParams,
) -> Result<GaussianEnergyModel> {
    let h_emb = gcn_forward(bnorm, features, params)?;
    let (_, s) = build_precision(&h_emb, &params.wz, params.epsilon);
    let field = &h_emb * &params.field_map;
    GaussianEnergyModel::with_tolerance(x.column_means(), s, field, 0.0)
}

/// Mean exact Gaussian negative log-likelihood of `x` under precision
/// `Z Z^T + eps I`, mean `mu + S^{-1} h`.
fn heldout_nll(
    x: &TimeSeriesMatrix,
    mu: &DVector<f64>,
    z: &DMatrix<f64>,
    field: &DVector<f64>,
    eps: f64,
) -> f64 {
    let a = woodbury_solve(z, eps, field);
    let mut e = centered(x, mu);
    for mut row in e.row_iter_mut() {
        row -= a.transpose();
    }
    let quad = (&e * z).norm_squared() + eps * e.norm_squared();
    let t = x.n_time() as f64;
    let n = x.n_vars() as f64;
    0.5 * quad / t - 0.5 * logdet_lowrank(z, eps) + 0.5 * n * LN_2PI
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSelection {
    pub rank: usize,
    /// `(rank, mean held-out NLL per time point)`; empty when only one
    /// candidate was given.
    pub scores: Vec<(usize, f64)>,
}

/// Time-blocked 3-fold cross-validation over candidate ranks. Ties go to the
/// smallest rank.
pub fn select_rank(
    x: &TimeSeriesMatrix,
    graph: &FunctionalGraph,
    features: &DMatrix<f64>,
    candidates: &[usize],
    config: &TrainConfig,
    seed: Seed,
) -> Result<RankSelection> {
    let n = x.n_vars();
    let t = x.n_time();
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no rank candidates".into()));
    }
    if let Some(&r) = candidates.iter().find(|&&r| r == 0 || r > n) {
        return Err(Error::InvalidInput(format!("rank {r} outside 1..={n}")));
    }
    if t < 3 * (n + 1) {
        return Err(Error::TooShort {
            needed: 3 * (n + 1),
            got: t,
        });
    }
    let mut ranks = candidates.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.len() == 1 {
        return Ok(RankSelection {
            rank: ranks[0],
            scores: Vec::new(),
        });
    }
    let bounds = [0, t / 3, 2 * t / 3, t];
    let mut scores = Vec::with_capacity(ranks.len());
    for &r in &ranks {
        let mut total = 0.0;
        for fold in 0..3 {
            let test_idx: Vec<usize> = (bounds[fold]..bounds[fold + 1]).collect();
            let train_idx: Vec<usize> = (0..t).filter(|i| !test_idx.contains(i)).collect();
            let train_x = x.select_rows(&train_idx)?;
            let test_x = x.select_rows(&test_idx)?;
            let fit = train(
                &train_x,
                graph,
                features,
                r,
                config,
                seed.derive(&format!("rank{r}/fold{fold}")),
            )?;
            let h_emb = gcn_forward(&graph.bnorm, features, &fit.params)?;
            let z = &h_emb * &fit.params.wz;
            let field = &h_emb * &fit.params.field_map;
            total += heldout_nll(
                &test_x,
                &train_x.column_means(),
                &z,
                &field,
                fit.params.epsilon,
            );
        }
        scores.push((r, total / 3.0));
    }
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 < best.1 {
            best = s;
        }
    }
    Ok(RankSelection {
        rank: best.0,
        scores,
    })
}

const BLOB_MAGIC: &[u8; 4] = b"ELGW";
const BLOB_VERSION: u8 = 1;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Binary weight blob: magic `ELGW`, version byte, `u32` array count, then
/// per array `u32` rows, `u32` cols and column-major little-endian `f64`
/// values. Arrays are the layers, `W_z`, then the field map as a column.
pub fn encode_weight_blob(params: &GcnParams) -> Vec<u8> {
    let mut arrays: Vec<(usize, usize, &[f64])> = params
        .layers
        .iter()
        .map(|l| (l.nrows(), l.ncols(), l.as_slice()))
        .collect();
    arrays.push((params.wz.nrows(), params.wz.ncols(), params.wz.as_slice()));
    arrays.push((params.field_map.len(), 1, params.field_map.as_slice()));
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    out.push(BLOB_VERSION);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (r, c, data) in arrays {
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(k)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(what, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Inverse of [`encode_weight_blob`]; `epsilon` comes from the metadata.
pub fn decode_weight_blob(bytes: &[u8], epsilon: f64) -> Result<GcnParams> {
    const WHAT: &str = "weight blob";
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(4, WHAT)? != BLOB_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = rd.take(1, WHAT)?[0];
    if version != BLOB_VERSION {
        return Err(Error::format(
            WHAT,
            format!("unsupported version {version}"),
        ));
    }
    let count = rd.u32(WHAT)? as usize;
    if count < 3 {
        return Err(Error::format(
            WHAT,
            "need at least one layer, W_z and field map",
        ));
    }
    let mut arrays = Vec::new();
    for _ in 0..count {
        let r = rd.u32(WHAT)? as usize;
        let c = rd.u32(WHAT)? as usize;
        let len = r
            .checked_mul(c)
            .and_then(|k| k.checked_mul(8))
            .ok_or_else(|| Error::format(WHAT, "array too large"))?;
        let raw = rd.take(len, WHAT)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        arrays.push(DMatrix::from_vec(r, c, data));
    }
    if rd.pos != bytes.len() {
        return Err(Error::format(WHAT, "trailing bytes"));
    }
    let fmap = arrays.pop().expect("count >= 3");
    if fmap.ncols() != 1 {
        return Err(Error::format(WHAT, "field map must be a column"));
    }
    let wz = arrays.pop().expect("count >= 3");
    let params = GcnParams {
        layers: arrays,
        wz,
        field_map: DVector::from_column_slice(fmap.as_slice()),
        epsilon,
    };
    params
        .validate()
        .map_err(|e| Error::format(WHAT, e.to_string()))?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    #[serde(rename = "N")]
    pub n_vars: usize,
    pub rank: usize,
    pub epsilon: f64,
    pub hidden_width: usize,
    pub feature_dim: usize,
    pub lambda_frob: f64,
    pub loss: f64,
    pub converged: bool,
    pub epochs: usize,
    /// File name of the weight blob, relative to the metadata file.
    pub weights: String,
}

/// Writes `<stem>.json` and `<stem>.bin` into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    meta: &CheckpointMeta,
    params: &GcnParams,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(&meta.weights), encode_weight_blob(params))?;
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_vec_pretty(meta)?,
    )?;
    Ok(())
}

pub fn load_checkpoint(meta_path: &Path) -> Result<(CheckpointMeta, GcnParams)> {
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(meta_path)?)?;
    if meta.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "checkpoint schema_version {} is not supported",
            meta.schema_version
        )));
    }
    let dir = meta_path.parent().unwrap_or(Path::new("."));
    let params = decode_weight_blob(&fs::read(dir.join(&meta.weights))?, meta.epsilon)?;
    if params.rank() != meta.rank {
        return Err(Error::format("checkpoint", "rank does not match weights"));
    }
    Ok((meta, params))
}
