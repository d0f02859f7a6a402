//! Subject-level functional graph: Pearson correlations, density-preserving
//! thresholding and the symmetric normalization consumed by the GCN.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};

/// Default edge density (top 10% absolute correlations).
pub const DEFAULT_DENSITY: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct FunctionalGraph {
    /// Pearson correlation matrix.
    pub r: DMatrix<f64>,
    /// Threshold on `|R_ij|`.
    pub tau: f64,
    /// Requested edge density.
    pub delta: f64,
    /// Binary adjacency, zero diagonal.
    pub a: DMatrix<f64>,
    /// Weighted adjacency `|R| * A`.
    pub b: DMatrix<f64>,
    /// `D^{-1/2} (I + B) D^{-1/2}`.
    pub bnorm: DMatrix<f64>,
}

impl FunctionalGraph {
    /// Standardizes `x`, correlates, thresholds at density `delta` and
    /// normalizes.
    pub fn build(x: &TimeSeriesMatrix, delta: f64) -> Result<Self> {
        let z = crate::data::standardize(x)?;
        let r = pearson_correlation(&z)?;
        let mut g = threshold_graph(&r, delta)?;
        g.bnorm = normalize_weights(&g.b);
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    /// Fraction of off-diagonal pairs kept.
    pub fn density(&self) -> f64 {
        let n = self.n();
        let kept = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.a[(i, j)] > 0.0)
            .count();
        kept as f64 / (n * (n - 1) / 2) as f64
    }

    /// Writes `(i, j, |R_ij|)` for every kept edge plus a JSON sidecar with
    /// `tau`, `delta` and `N`.
    pub fn write_edge_list(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(csv_path)?;
        wtr.write_record(["i", "j", "weight"])?;
        let n = self.n();
        for i in 0..n {
            for j in i + 1..n {
                if self.a[(i, j)] > 0.0 {
                    wtr.write_record(&[
                        i.to_string(),
                        j.to_string(),
                        format!("{:e}", self.b[(i, j)]),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        let meta = GraphSidecar {
            tau: self.tau,
            delta: self.delta,
            n,
        };
        let mut f = File::create(sidecar_path)?;
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphSidecar {
    tau: f64,
    delta: f64,
    #[serde(rename = "N")]
    n: usize,
}

/// Sample Pearson correlation between columns.
pub fn pearson_correlation(x: &TimeSeriesMatrix) -> Result<DMatrix<f64>> {
    let m = x.matrix();
    let n = m.ncols();
    let means = x.column_means();
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= means.transpose();
    }
    let cov = centered.transpose() * &centered;
    let sd = DVector::from_iterator(n, (0..n).map(|j| cov[(j, j)].sqrt()));
    if let Some(j) = sd.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ConstantColumn { column: j });
    }
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

/// Linear-interpolation quantile of `values` at probability `p`.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Keeps pairs with `|R_ij| >= tau`, `tau` the `(1 - delta)` quantile of the
/// upper-triangular absolute correlations. `bnorm` is left as the identity;
/// call [`normalize_weights`] (or use [`FunctionalGraph::build`]).
pub fn threshold_graph(r: &DMatrix<f64>, delta: f64) -> Result<FunctionalGraph> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "edge density must lie in (0, 1), got {delta}"
        )));
    }
    let n = r.nrows();
    if n < 2 || !r.is_square() {
        return Err(Error::InvalidInput(
            "correlation matrix must be square with N >= 2".into(),
        ));
    }
    let upper: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| r[(i, j)].abs())
        .collect();
    let tau = quantile(&upper, 1.0 - delta);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && r[(i, j)].abs() >= tau {
                a[(i, j)] = 1.0;
                b[(i, j)] = r[(i, j)].abs();
            }
        }
    }
    Ok(FunctionalGraph {
        r: r.clone(),
        tau,
        delta,
        a,
        b,
        bnorm: DMatrix::identity(n, n),
    })
}

/// `D^{-1/2} (I + B) D^{-1/2}` with `D_ii = sum_j (I + B)_ij`.
pub fn normalize_weights(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let with_loops = b + DMatrix::<f64>::identity(n, n);
    let inv_sqrt: Vec<f64> = with_loops
        .row_iter()
        .map(|row| 1.0 / row.sum().sqrt())
        .collect();
    DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * with_loops[(i, j)] * inv_sqrt[j])
}
