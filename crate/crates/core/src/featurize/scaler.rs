use serde::{Deserialize, Serialize};

use super::{FeatureSet, N_FEATURES};
use crate::error::{Error, Result};

/// Per-feature min-max scaler. An unfitted scaler has no bounds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizationScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationScaler {
    /// Fit column bounds over `rows`, each a full feature vector.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::ScalerNotFitted)?.as_ref();
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for r in rows {
            let r = r.as_ref();
            if r.len() != min.len() {
                return Err(Error::ShapeMismatch(format!(
                    "scaler rows have {} and {} columns",
                    min.len(),
                    r.len()
                )));
            }
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn fit_features(rows: &[FeatureSet]) -> Result<Self> {
        let arrays: Vec<[f64; N_FEATURES]> = rows.iter().map(FeatureSet::to_array).collect();
        Self::fit(&arrays)
    }

    pub fn is_fitted(&self) -> bool {
        !self.min.is_empty()
    }

    /// Map a row into [0,1]: constant columns go to 0, out-of-range values clamp.
    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if !self.is_fitted() {
            return Err(Error::ScalerNotFitted);
        }
        if row.len() != self.min.len() {
            return Err(Error::ShapeMismatch(format!(
                "scaler fitted on {} columns, row has {}",
                self.min.len(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| {
                if hi > lo {
                    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect())
    }

    pub fn apply(&self, features: &FeatureSet) -> Result<Vec<f64>> {
        self.transform(&features.to_array())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|v| vec![*v]).collect()
    }

    #[test]
    fn column_maps_to_unit_interval() {
        let s = NormalizationScaler::fit(&col(&[2.0, 4.0, 6.0])).unwrap();
        let out: Vec<f64> = [2.0, 4.0, 6.0].iter().map(|v| s.transform(&[*v]).unwrap()[0]).collect();
        assert_eq!(out, [0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let s = NormalizationScaler::fit(&col(&[3.0, 3.0, 3.0])).unwrap();
        assert_eq!(s.transform(&[3.0]).unwrap(), [0.0]);
        assert_eq!(s.transform(&[9.0]).unwrap(), [0.0]);
    }

    #[test]
    fn unseen_values_clamp() {
        let s = NormalizationScaler::fit(&col(&[2.0, 6.0])).unwrap();
        assert_eq!(s.transform(&[8.0]).unwrap(), [1.0]);
        assert_eq!(s.transform(&[-1.0]).unwrap(), [0.0]);
    }

    #[test]
    fn unfitted_scaler_errors() {
        let s = NormalizationScaler::default();
        assert!(matches!(s.transform(&[1.0]), Err(Error::ScalerNotFitted)));
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(NormalizationScaler::fit(&empty), Err(Error::ScalerNotFitted)));
    }

    proptest! {
        #[test]
        fn output_always_in_unit_interval(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20),
            probe in prop::collection::vec(-1e7f64..1e7, 3),
        ) {
            let s = NormalizationScaler::fit(&rows).unwrap();
            for lo_hi in s.min.iter().zip(&s.max) {
                prop_assert!(lo_hi.0 <= lo_hi.1);
            }
            for v in s.transform(&probe).unwrap() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
