//! Shared data containers: real-valued time series, binarized state matrices
//! and seeded randomness.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A `T x N` matrix of real observations: one row per time point, one
/// column per variable (ROI).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    data: DMatrix<f64>,
    names: Vec<String>,
}

impl TimeSeriesMatrix {
    /// Wraps `data` with default column names `x0, x1, ...`.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let names = (0..data.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(data, names)
    }

    pub fn with_names(data: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: data.nrows(),
            });
        }
        if data.ncols() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 variables, got {}",
                data.ncols()
            )));
        }
        if names.len() != data.ncols() {
            return Err(Error::DimensionMismatch {
                expected: data.ncols(),
                got: names.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            let (t, j) = (idx % data.nrows(), idx / data.nrows());
            return Err(Error::NonFinite(format!("time series entry ({t}, {j})")));
        }
        Ok(Self { data, names })
    }

    /// Builds from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(t, n, |i, j| rows[i][j]))
    }

    pub fn n_time(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Observation at time `t` as a column vector.
    pub fn row(&self, t: usize) -> DVector<f64> {
        self.data.row(t).transpose()
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Per-column sample mean.
    pub fn column_means(&self) -> DVector<f64> {
        let t = self.n_time() as f64;
        DVector::from_iterator(
            self.n_vars(),
            self.data.column_iter().map(|c| c.iter().sum::<f64>() / t),
        )
    }

    /// Per-column unbiased (`T - 1`) standard deviation.
    pub fn column_stds(&self) -> DVector<f64> {
        let means = self.column_means();
        let denom = (self.n_time() - 1) as f64;
        DVector::from_iterator(
            self.n_vars(),
            self.data
                .column_iter()
                .zip(means.iter())
                .map(|(c, &m)| (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / denom).sqrt()),
        )
    }

    /// Rows `range` as a new series. Fails if fewer than two rows remain.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let rows = self.data.rows(range.start, range.len()).into_owned();
        Self::with_names(rows, self.names.clone())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let rows = self.data.select_rows(idx);
        Self::with_names(rows, self.names.clone())
    }
}

/// Zero-mean, unit-variance columns using the unbiased standard deviation.
pub fn standardize(x: &TimeSeriesMatrix) -> Result<TimeSeriesMatrix> {
    let means = x.column_means();
    let stds = x.column_stds();
    if let Some(j) = stds.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::ConstantColumn { column: j });
    }
    let mut out = x.data.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let (m, s) = (means[j], stds[j]);
        col.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    TimeSeriesMatrix::with_names(out, x.names.clone())
}

/// Median of a slice; the midpoint of the two central order statistics when
/// the length is even.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// A `T x N` matrix whose entries are exactly `-1` or `+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryStateMatrix {
    n_vars: usize,
    data: Vec<i8>,
}

impl BinaryStateMatrix {
    /// Builds from row-major patterns, rejecting anything other than `+-1`.
    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let n_vars = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_vars);
        for row in rows {
            if row.len() != n_vars {
                return Err(Error::DimensionMismatch {
                    expected: n_vars,
                    got: row.len(),
                });
            }
            if row.iter().any(|&v| v != 1 && v != -1) {
                return Err(Error::InvalidInput("binary states must be +1 or -1".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n_vars, data })
    }

    pub fn n_time(&self) -> usize {
        self.data.len().checked_div(self.n_vars).unwrap_or(0)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn row(&self, t: usize) -> &[i8] {
        &self.data[t * self.n_vars..(t + 1) * self.n_vars]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.data.chunks_exact(self.n_vars.max(1))
    }
}

/// Maps each entry to `+1` when strictly above its column median, else `-1`.
pub fn median_binarize(x: &TimeSeriesMatrix) -> BinaryStateMatrix {
    let (t, n) = (x.n_time(), x.n_vars());
    let medians: Vec<f64> = x.data.column_iter().map(|c| median(c.as_slice())).collect();
    let mut data = Vec::with_capacity(t * n);
    for i in 0..t {
        for (j, &m) in medians.iter().enumerate() {
            data.push(if x.data[(i, j)] > m { 1 } else { -1 });
        }
    }
    BinaryStateMatrix { n_vars: n, data }
}

/// Root seed for every randomized operation. The same seed and configuration
/// reproduce bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derives an independent child seed: `self XOR H(tag)` where `H` is the
    /// first eight bytes of SHA-256.
    pub fn derive(self, tag: &str) -> Seed {
        let digest = Sha256::digest(tag.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        Seed(self.0 ^ u64::from_le_bytes(bytes))
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// One standard normal draw.
pub(crate) fn gauss<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn series(cols: &[&[f64]]) -> TimeSeriesMatrix {
        let t = cols[0].len();
        TimeSeriesMatrix::new(DMatrix::from_fn(t, cols.len(), |i, j| cols[j][i])).unwrap()
    }

    #[test]
    fn standardize_simple_column() {
        let x = series(&[&[1.0, 2.0, 3.0], &[4.0, 0.0, 2.0]]);
        let z = standardize(&x).unwrap();
        let col: Vec<f64> = z.matrix().column(0).iter().copied().collect();
        assert!((col[0] + 1.0).abs() < 1e-12);
        assert!(col[1].abs() < 1e-12);
        assert!((col[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_is_idempotent() {
        let x = series(&[&[1.0, 5.0, 3.0, 8.0], &[0.1, 0.2, -0.4, 0.0]]);
        let once = standardize(&x).unwrap();
        let twice = standardize(&once).unwrap();
        for (a, b) in once.matrix().iter().zip(twice.matrix().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let x = series(&[&[1.0, 2.0, 3.0], &[7.0, 7.0, 7.0]]);
        assert!(matches!(
            standardize(&x),
            Err(Error::ConstantColumn { column: 1 })
        ));
    }

    #[test]
    fn standardize_gaussian_column_two_pass_oracle() {
        let mut rng = Seed(3).rng();
        let dist = Normal::new(5.0, 2.0).unwrap();
        let a: Vec<f64> = (0..1000).map(|_| dist.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..1000).map(|_| dist.sample(&mut rng)).collect();
        let z = standardize(&series(&[&a, &b])).unwrap();
        for col in z.matrix().column_iter() {
            // independent two-pass summation
            let mut sum = 0.0;
            for v in col.iter() {
                sum += v;
            }
            let mean = sum / 1000.0;
            let mut ss = 0.0;
            for v in col.iter() {
                ss += (v - mean) * (v - mean);
            }
            let std = (ss / 999.0).sqrt();
            assert!(mean.abs() < 1e-12, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-12, "std {std}");
        }
    }

    #[test]
    fn binarize_even_length_uses_midpoint_median() {
        let x = series(&[&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 1.0, 1.0]]);
        let q = median_binarize(&x);
        let col0: Vec<i8> = (0..4).map(|t| q.row(t)[0]).collect();
        assert_eq!(col0, vec![-1, -1, 1, 1]);
        // constant column never exceeds its median
        assert!((0..4).all(|t| q.row(t)[1] == -1));
    }

    #[test]
    fn binarize_odd_length() {
        let x = series(&[&[3.0, 1.0, 2.0], &[0.0, 1.0, 2.0]]);
        let q = median_binarize(&x);
        let col0: Vec<i8> = (0..3).map(|t| q.row(t)[0]).collect();
        assert_eq!(col0, vec![1, -1, -1]);
    }

    #[test]
    fn rejects_non_finite_and_tiny_inputs() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(matches!(
            TimeSeriesMatrix::new(bad),
            Err(Error::NonFinite(_))
        ));
        let short = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(TimeSeriesMatrix::new(short).is_err());
        assert!(BinaryStateMatrix::from_rows(&[vec![1, 0]]).is_err());
    }

    #[test]
    fn seed_derivation_is_stable() {
        let s = Seed(42);
        assert_eq!(s.derive("a"), s.derive("a"));
        assert_ne!(s.derive("a"), s.derive("b"));
    }

    proptest::proptest! {
        #[test]
        fn binarized_columns_are_at_most_half_positive(
            rows in proptest::collection::vec(proptest::collection::vec(-5i32..5, 3), 2..40)
        ) {
            let data: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let x = TimeSeriesMatrix::from_rows(&data).unwrap();
            let q = median_binarize(&x);
            let t = x.n_time();
            for j in 0..3 {
                let pos = (0..t).filter(|&i| q.row(i)[j] == 1).count();
                proptest::prop_assert!(pos <= t.div_ceil(2));
            }
        }
    }
}
