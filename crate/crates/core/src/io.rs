//! Time-series file formats: headered CSV and a binary columnar cache.
//!
//! Cache layout (all little-endian): magic `ELTS`, version byte `1`,
//! `u64` T, `u64` N, N column names as `u32` length + UTF-8 bytes, then the
//! `T x N` values column by column as `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};

const CACHE_MAGIC: &[u8; 4] = b"ELTS";
const CACHE_VERSION: u8 = 1;
pub const CACHE_EXTENSION: &str = "elts";

/// Parses a CSV with a header row of column names and one numeric row per
/// time point.
pub fn parse_timeseries_csv<R: Read>(reader: R) -> Result<TimeSeriesMatrix> {
    const WHAT: &str = "time-series CSV";
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::format(WHAT, "missing header row"));
    }
    let n = names.len();
    let mut values = Vec::new();
    let mut t = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != n {
            return Err(Error::format(
                WHAT,
                format!(
                    "row {} has {} fields, header has {n}",
                    line + 1,
                    record.len()
                ),
            ));
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                Error::format(WHAT, format!("row {}: cannot parse {field:?}", line + 1))
            })?;
            values.push(v);
        }
        t += 1;
    }
    TimeSeriesMatrix::with_names(DMatrix::from_row_slice(t, n, &values), names)
}

pub fn read_timeseries_csv(path: &Path) -> Result<TimeSeriesMatrix> {
    parse_timeseries_csv(fs::File::open(path)?)
}

/// Reads CSV, or the binary cache when the extension is `.elts`.
pub fn read_timeseries(path: &Path) -> Result<TimeSeriesMatrix> {
    if path.extension().is_some_and(|e| e == CACHE_EXTENSION) {
        decode_cache(&fs::read(path)?)
    } else {
        read_timeseries_csv(path)
    }
}

pub fn write_timeseries_csv(path: &Path, x: &TimeSeriesMatrix) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..x.n_time())
        .map(|t| x.matrix().row(t).iter().copied().collect())
        .collect();
    write_matrix_csv(path, x.names(), &rows)
}

/// Writes a header and rows of floats using the shortest round-trip
/// formatting.
pub fn write_matrix_csv<S: AsRef<str>>(path: &Path, header: &[S], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header.iter().map(|s| s.as_ref()))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode_cache(x: &TimeSeriesMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + 8 * x.matrix().len());
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.extend_from_slice(&(x.n_time() as u64).to_le_bytes());
    out.extend_from_slice(&(x.n_vars() as u64).to_le_bytes());
    for name in x.names() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for v in x.matrix().as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cache(bytes: &[u8]) -> Result<TimeSeriesMatrix> {
    const WHAT: &str = "time-series cache";
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(k)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format(WHAT, "truncated"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != CACHE_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = take(1)?[0];
    if version != CACHE_VERSION {
        return Err(Error::format(
            WHAT,
            format!("unsupported version {version}"),
        ));
    }
    let t = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let t = usize::try_from(t).map_err(|_| Error::format(WHAT, "T too large"))?;
    let n = usize::try_from(n).map_err(|_| Error::format(WHAT, "N too large"))?;
    let mut names = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let raw = take(len)?;
        names.push(
            std::str::from_utf8(raw)
                .map_err(|_| Error::format(WHAT, "column name is not UTF-8"))?
                .to_owned(),
        );
    }
    let count = t
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::format(WHAT, "size overflow"))?;
    let raw = take(count)?;
    if pos != bytes.len() {
        return Err(Error::format(WHAT, "trailing bytes"));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    TimeSeriesMatrix::with_names(DMatrix::from_vec(t, n, values), names)
}

pub fn write_cache(path: &Path, x: &TimeSeriesMatrix) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_cache(x))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gauss, Seed};

    fn sample() -> TimeSeriesMatrix {
        let mut rng = Seed(1).rng();
        TimeSeriesMatrix::with_names(
            DMatrix::from_fn(7, 3, |_, _| gauss(&mut rng)),
            vec!["a".into(), "roi_b".into(), "ç".into()],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let x = sample();
        write_timeseries_csv(&p, &x).unwrap();
        assert_eq!(read_timeseries(&p).unwrap(), x);
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.elts");
        let x = sample();
        write_cache(&p, &x).unwrap();
        assert_eq!(read_timeseries(&p).unwrap(), x);
    }

    #[test]
    fn csv_rejections() {
        assert!(parse_timeseries_csv("a,b\n1,2\n3\n".as_bytes()).is_err());
        assert!(parse_timeseries_csv("a,b\n1,2\n3,x\n".as_bytes()).is_err());
        assert!(parse_timeseries_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(parse_timeseries_csv("a,b\n1,2\n3,NaN\n".as_bytes()).is_err());
        let ok = parse_timeseries_csv("a, b\n1, 2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(ok.names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn cache_rejections() {
        let bytes = encode_cache(&sample());
        assert!(decode_cache(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_cache(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_cache(&bad).is_err());
        let mut huge = bytes.clone();
        huge[5..13].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_cache(&huge).is_err());
        let mut extra = bytes;
        extra.push(1);
        assert!(decode_cache(&extra).is_err());
    }
}
