//! Scoring recovered landscapes against ground truth, and the paired
//! statistics used to compare methods.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Seed;
use crate::error::{Error, Result};

/// Mean of the rows of `x` carrying each label in `0..n_basins`.
pub fn basin_centroids(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_basins: usize,
) -> Result<Vec<DVector<f64>>> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let mut sums = vec![DVector::zeros(x.ncols()); n_basins];
    let mut counts = vec![0usize; n_basins];
    for (t, &b) in labels.iter().enumerate() {
        if b >= n_basins {
            return Err(Error::InvalidInput(format!(
                "label {b} outside 0..{n_basins}"
            )));
        }
        sums[b] += x.row(t).transpose();
        counts[b] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(b, (s, c))| {
            if c == 0 {
                Err(Error::EmptyBasin { basin: b })
            } else {
                Ok(s / c as f64)
            }
        })
        .collect()
}

/// Relabels to `0..B` in order of first appearance, dropping unused labels.
pub fn compact_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Minimum-cost assignment on a square cost matrix. Returns `col[row]`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "hungarian needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    // potentials, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    col
}

/// One-to-one pairing between recovered basins and true states.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Recovered basin index to true state, `None` when unmatched.
    pub perm: Vec<Option<usize>>,
    /// True state to recovered basin.
    pub inverse: Vec<Option<usize>>,
    /// `B x K` Euclidean distances.
    pub cost: DMatrix<f64>,
}

impl Matching {
    pub fn total_cost(&self) -> f64 {
        self.perm
            .iter()
            .enumerate()
            .filter_map(|(b, k)| k.map(|k| self.cost[(b, k)]))
            .sum()
    }

    /// Recovered labels mapped to true-state indices.
    pub fn align(&self, labels: &[usize]) -> Vec<Option<usize>> {
        labels
            .iter()
            .map(|&b| self.perm.get(b).copied().flatten())
            .collect()
    }
}

/// Pairs `B` recovered centroids with `K` true centers. When `B != K` the
/// cost matrix is padded with dummies that cost more than any real pair, so
/// the surplus on the larger side stays unmatched.
pub fn hungarian_match(centroids: &[DVector<f64>], true_centers: &[DVector<f64>]) -> Matching {
    let (b, k) = (centroids.len(), true_centers.len());
    let cost = DMatrix::from_fn(b, k, |i, j| (&centroids[i] - &true_centers[j]).norm());
    let n = b.max(k);
    let big = 1.0 + (n as f64) * cost.iter().copied().fold(0.0, f64::max) * 2.0;
    let square = DMatrix::from_fn(n, n, |i, j| if i < b && j < k { cost[(i, j)] } else { big });
    let col = hungarian(&square);
    let mut perm = vec![None; b];
    let mut inverse = vec![None; k];
    for (i, &j) in col.iter().enumerate() {
        if i < b && j < k {
            perm[i] = Some(j);
            inverse[j] = Some(i);
        }
    }
    Matching {
        perm,
        inverse,
        cost,
    }
}

/// Half the smallest distance between true centers.
pub fn default_kappa(true_centers: &[DVector<f64>]) -> Result<f64> {
    if true_centers.len() < 2 {
        return Err(Error::SingleState);
    }
    Ok(0.5 * crate::simulate::min_pairwise_distance(true_centers))
}

/// Fraction of true states whose matched centroid lies within `kappa`.
pub fn basin_recovery(
    matching: &Matching,
    centroids: &[DVector<f64>],
    true_centers: &[DVector<f64>],
    kappa: f64,
) -> f64 {
    let k = true_centers.len();
    if k == 0 {
        return 0.0;
    }
    let hits = (0..k)
        .filter(|&j| {
            matching.inverse[j].is_some_and(|b| (&centroids[b] - &true_centers[j]).norm() <= kappa)
        })
        .count();
    hits as f64 / k as f64
}

/// Transition counts normalized per row. Steps touching an unassigned
/// label are skipped. Rows never left are set uniform and reported.
pub fn transition_matrix_partial(labels: &[Option<usize>], k: usize) -> (DMatrix<f64>, Vec<usize>) {
    let mut counts = DMatrix::zeros(k, k);
    for w in labels.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            counts[(a, b)] += 1.0;
        }
    }
    let mut unvisited = Vec::new();
    for i in 0..k {
        let s = counts.row(i).sum();
        if s > 0.0 {
            counts.row_mut(i).scale_mut(1.0 / s);
        } else {
            counts.row_mut(i).fill(1.0 / k as f64);
            unvisited.push(i);
        }
    }
    (counts, unvisited)
}

pub fn transition_matrix(labels: &[usize], k: usize) -> DMatrix<f64> {
    let opt: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    transition_matrix_partial(&opt, k).0
}

/// One minus the mean row-wise total variation distance.
pub fn tma(p_hat: &DMatrix<f64>, p_star: &DMatrix<f64>) -> Result<f64> {
    if p_hat.shape() != p_star.shape() || p_hat.nrows() != p_hat.ncols() {
        return Err(Error::DimensionMismatch {
            expected: p_star.nrows(),
            got: p_hat.nrows(),
        });
    }
    let k = p_star.nrows() as f64;
    Ok((1.0 - (p_hat - p_star).abs().sum() / (2.0 * k)).clamp(0.0, 1.0))
}

/// One minus the total variation between recovered and true occupancy.
/// Unassigned time points count toward no state.
pub fn sda(aligned: &[Option<usize>], z_true: &[usize], k: usize) -> Result<f64> {
    if aligned.len() != z_true.len() {
        return Err(Error::DimensionMismatch {
            expected: z_true.len(),
            got: aligned.len(),
        });
    }
    if z_true.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let t = z_true.len() as f64;
    let mut nu_hat = vec![0.0; k];
    let mut nu = vec![0.0; k];
    for (a, &z) in aligned.iter().zip(z_true) {
        if let Some(a) = a {
            nu_hat[*a] += 1.0 / t;
        }
        nu[z] += 1.0 / t;
    }
    let tv: f64 = nu_hat.iter().zip(&nu).map(|(a, b)| (a - b).abs()).sum();
    Ok((1.0 - 0.5 * tv).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub br: f64,
    pub tma: f64,
    pub sda: f64,
    pub kappa: f64,
    pub n_recovered: usize,
    /// True states with no outgoing recovered transitions.
    pub unvisited_rows: Vec<usize>,
}

/// Full scoring of one recovered labelling: data-space centroids, matching,
/// then BR, TMA and SDA.
pub fn score_labels(
    x: &DMatrix<f64>,
    labels: &[usize],
    z_true: &[usize],
    true_centers: &[DVector<f64>],
    p_star: &DMatrix<f64>,
    kappa: f64,
) -> Result<MetricReport> {
    let (compact, b) = compact_labels(labels);
    let centroids = basin_centroids(x, &compact, b)?;
    let matching = hungarian_match(&centroids, true_centers);
    let k = true_centers.len();
    let aligned = matching.align(&compact);
    let (p_hat, unvisited_rows) = transition_matrix_partial(&aligned, k);
    Ok(MetricReport {
        br: basin_recovery(&matching, &centroids, true_centers, kappa),
        tma: tma(&p_hat, p_star)?,
        sda: sda(&aligned, z_true, k)?,
        kappa,
        n_recovered: b,
        unvisited_rows,
    })
}

pub const MIN_WILCOXON_PAIRS: usize = 6;
pub const EXACT_WILCOXON_MAX: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Absolute values ranked with midranks for ties, zeros dropped.
fn signed_ranks(differences: &[f64]) -> Result<(Vec<f64>, Vec<bool>, Vec<usize>)> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("Wilcoxon differences".into()));
    }
    let mut nz: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.len() < MIN_WILCOXON_PAIRS {
        return Err(Error::TooFewSamples {
            needed: MIN_WILCOXON_PAIRS,
            got: nz.len(),
        });
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let n = nz.len();
    let mut ranks = vec![0.0; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].fill(mid);
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    let positive = nz.iter().map(|d| *d > 0.0).collect();
    Ok((ranks, positive, ties))
}

/// Two-sided p-value from the exact null over all `2^n` sign patterns.
/// Midranks are doubled so the rank sums stay integral.
pub fn wilcoxon_exact(differences: &[f64]) -> Result<WilcoxonResult> {
    let (ranks, positive, _) = signed_ranks(differences)?;
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[s] = number of sign patterns with doubled W+ = s
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w2: usize = doubled
        .iter()
        .zip(&positive)
        .filter(|(_, p)| **p)
        .map(|(r, _)| r)
        .sum();
    let n_patterns = 2f64.powi(ranks.len() as i32);
    let lower: f64 = counts[..=w2].iter().sum::<f64>() / n_patterns;
    let upper: f64 = counts[w2..].iter().sum::<f64>() / n_patterns;
    Ok(WilcoxonResult {
        w_plus: w2 as f64 / 2.0,
        n: ranks.len(),
        p_value: (2.0 * lower.min(upper)).min(1.0),
        exact: true,
    })
}

/// Normal approximation with tie and continuity corrections.
pub fn wilcoxon_normal(differences: &[f64]) -> Result<WilcoxonResult> {
    let (ranks, positive, ties) = signed_ranks(differences)?;
    let n = ranks.len() as f64;
    let w: f64 = ranks
        .iter()
        .zip(&positive)
        .filter(|(_, p)| **p)
        .map(|(r, _)| r)
        .sum();
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = ties
        .iter()
        .map(|&t| (t as f64).powi(3) - t as f64)
        .sum::<f64>()
        / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(WilcoxonResult {
        w_plus: w,
        n: ranks.len(),
        p_value: (2.0 * std_normal.sf(z)).min(1.0),
        exact: false,
    })
}

/// Two-sided signed-rank test: exact up to 25 nonzero pairs, normal above.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<WilcoxonResult> {
    let nonzero = differences.iter().filter(|d| **d != 0.0).count();
    if nonzero <= EXACT_WILCOXON_MAX {
        wilcoxon_exact(differences)
    } else {
        wilcoxon_normal(differences)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BhResult {
    pub rejected: Vec<bool>,
    pub adjusted: Vec<f64>,
}

/// Step-up false discovery control at level `q`, results in input order.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> Result<BhResult> {
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput("p-values must lie in [0, 1]".into()));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cutoff = (0..m)
        .rev()
        .find(|&i| p_values[order[i]] <= (i + 1) as f64 / m as f64 * q);
    let mut rejected = vec![false; m];
    if let Some(c) = cutoff {
        for &idx in &order[..=c] {
            rejected[idx] = true;
        }
    }
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 1.0;
    for i in (0..m).rev() {
        let idx = order[i];
        running = running.min(p_values[idx] * m as f64 / (i + 1) as f64);
        adjusted[idx] = running;
    }
    Ok(BhResult { rejected, adjusted })
}

pub const DEFAULT_BOOTSTRAP: usize = 2000;

/// Percentile interval of the resampled mean.
pub fn bootstrap_ci(values: &[f64], level: f64, n_boot: usize, seed: Seed) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: values.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) || n_boot == 0 {
        return Err(Error::InvalidInput(
            "bootstrap needs 0 < level < 1 and n_boot > 0".into(),
        ));
    }
    let mut rng = seed.rng();
    let n = values.len();
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&means, alpha),
        quantile_sorted(&means, 1.0 - alpha),
    ))
}

/// Linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
