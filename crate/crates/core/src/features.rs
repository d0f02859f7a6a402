//! Per-time-point energies for downstream models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continuous::normalize_with;
use crate::continuous::{
    energy_series, normalize_energy, GaussianEnergyModel, GaussianModelRecord,
};
use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::mixture::{
    energy_floor, map_labels, mixture_energy, MixtureEnergyModel, MixtureModelRecord,
};

/// A continuous model read from JSON.
#[derive(Debug, Clone)]
pub enum EnergyModel {
    Gaussian(GaussianEnergyModel),
    Mixture(MixtureEnergyModel),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyRecord {
    Mixture(MixtureModelRecord),
    Gaussian(GaussianModelRecord),
}

impl EnergyModel {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let rec: AnyRecord = serde_json::from_slice(bytes).map_err(|_| {
            Error::format(
                "energy model",
                "neither a continuous nor a mixture model record",
            )
        })?;
        Ok(match rec {
            AnyRecord::Mixture(r) => EnergyModel::Mixture(r.try_into()?),
            AnyRecord::Gaussian(r) => EnergyModel::Gaussian(r.try_into()?),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn n_vars(&self) -> usize {
        match self {
            EnergyModel::Gaussian(m) => m.n(),
            EnergyModel::Mixture(m) => m.n_vars(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureRow {
    pub t: usize,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "E_tilde")]
    pub e_tilde: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// Raw and normalized energy of every row. Mixture energies are measured
/// from the lower of the mode energies and the observed minimum, and carry
/// the MAP component as a label.
pub fn energy_features(x: &TimeSeriesMatrix, model: &EnergyModel) -> Result<Vec<FeatureRow>> {
    if x.n_vars() != model.n_vars() {
        return Err(Error::DimensionMismatch {
            expected: model.n_vars(),
            got: x.n_vars(),
        });
    }
    let (e, e_tilde, labels) = match model {
        EnergyModel::Gaussian(m) => {
            let e = energy_series(x, m)?;
            let et = normalize_energy(&e, m)?;
            (e, et, None)
        }
        EnergyModel::Mixture(m) => {
            let e = (0..x.n_time())
                .map(|t| mixture_energy(&x.row(t), m))
                .collect::<Result<Vec<f64>>>()?;
            let floor = energy_floor(m, &e)?;
            let et = normalize_with(&e, floor, m.sigma_e()?)?;
            (e, et, Some(map_labels(x, m)?))
        }
    };
    Ok(e.into_iter()
        .zip(e_tilde)
        .enumerate()
        .map(|(t, (e, e_tilde))| FeatureRow {
            t,
            e,
            e_tilde,
            label: labels.as_ref().map(|l| l[t]),
        })
        .collect())
}

pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let labelled = rows.first().is_some_and(|r| r.label.is_some());
    if labelled {
        w.write_record(["t", "E", "E_tilde", "label"])?;
    } else {
        w.write_record(["t", "E", "E_tilde"])?;
    }
    for r in rows {
        let mut rec = vec![r.t.to_string(), r.e.to_string(), r.e_tilde.to_string()];
        if let Some(l) = r.label {
            rec.push(l.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuous::{fit_gaussian_mle, quadratic_energy, Ridge};
    use crate::data::{gauss, Seed};
    use crate::mixture::fit_gmm;
    use nalgebra::DMatrix;

    fn data(seed: u64) -> TimeSeriesMatrix {
        let mut rng = Seed(seed).rng();
        TimeSeriesMatrix::new(DMatrix::from_fn(150, 3, |t, j| {
            gauss(&mut rng) + if t % 2 == 0 { 3.0 * j as f64 } else { 0.0 }
        }))
        .unwrap()
    }

    #[test]
    fn gaussian_features_from_json() {
        let x = data(1);
        let m = fit_gaussian_mle(&x, Ridge::default()).unwrap();
        let json = serde_json::to_vec(&GaussianModelRecord::from(&m)).unwrap();
        let model = EnergyModel::from_json(&json).unwrap();
        assert!(matches!(model, EnergyModel::Gaussian(_)));
        let rows = energy_features(&x, &model).unwrap();
        assert_eq!(rows.len(), 150);
        for r in &rows {
            assert!(r.label.is_none());
            let e = quadratic_energy(&x.row(r.t), &m).unwrap();
            assert!((r.e - e).abs() <= 1e-12 * (1.0 + e.abs()));
            let expected = ((e - m.e_min()) / m.sigma_e()).max(0.0);
            assert!((r.e_tilde - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_features_are_labelled_and_nonnegative() {
        let x = data(2);
        let fit = fit_gmm(&x, 2, Seed(3)).unwrap();
        let json = serde_json::to_vec(&MixtureModelRecord::from_fit(&fit, 150)).unwrap();
        let model = EnergyModel::from_json(&json).unwrap();
        let rows = energy_features(&x, &model).unwrap();
        assert!(rows.iter().all(|r| r.e_tilde >= 0.0 && r.label.is_some()));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_features_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("t,E,E_tilde,label\n"));
        assert_eq!(text.lines().count(), 151);
    }

    #[test]
    fn rejects_mismatch_and_junk() {
        let x = data(1);
        let m = fit_gaussian_mle(&x, Ridge::default()).unwrap();
        let model = EnergyModel::Gaussian(m);
        let narrow = TimeSeriesMatrix::new(DMatrix::from_element(4, 2, 1.0)).unwrap();
        assert!(matches!(
            energy_features(&narrow, &model),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(EnergyModel::from_json(br#"{"N":2}"#).is_err());
    }
}
