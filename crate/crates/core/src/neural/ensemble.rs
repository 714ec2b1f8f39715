use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    ZscoreMean,
    RawMean,
}

impl FromStr for EnsembleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore_mean" | "zscore" => Ok(EnsembleMode::ZscoreMean),
            "raw_mean" | "raw" => Ok(EnsembleMode::RawMean),
            _ => Err(Error::Config(format!("unknown ensemble mode '{s}'"))),
        }
    }
}

fn zscores(r: &[f64]) -> Option<Vec<f64>> {
    let n = r.len() as f64;
    let m = r.iter().sum::<f64>() / n;
    let sd = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    (sd > 0.0).then(|| r.iter().map(|v| (v - m) / sd).collect())
}

/// Elementwise average of two risk lists, optionally after standardizing each
/// over the cohort. A constant list carries no ranking and contributes 0.
pub fn ensemble_risk(a: &[f64], b: &[f64], mode: EnsembleMode) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::arg("risk lists differ in length"));
    }
    if a.len() < 2 {
        return Err(Error::arg("ensembling needs at least two patients"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite risk"));
    }
    let (za, zb) = match mode {
        EnsembleMode::RawMean => (a.to_vec(), b.to_vec()),
        EnsembleMode::ZscoreMean => {
            let f = |r: &[f64], which: &str| {
                zscores(r).unwrap_or_else(|| {
                    log::warn!("{which} risk list has zero variance; it contributes 0 to the ensemble");
                    vec![0.0; r.len()]
                })
            };
            (f(a, "first"), f(b, "second"))
        }
    };
    Ok(za.iter().zip(&zb).map(|(x, y)| 0.5 * (x + y)).collect())
}

/// Replaces missing risks (patients without tumours) by the median of the rest.
pub fn fill_median(risks: &[Option<f64>]) -> Result<Vec<f64>> {
    let mut present: Vec<f64> = risks.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Undefined("no patient has a risk to take the median of".into()));
    }
    present.sort_by(f64::total_cmp);
    let n = present.len();
    let median = if n % 2 == 1 {
        present[n / 2]
    } else {
        0.5 * (present[n / 2 - 1] + present[n / 2])
    };
    Ok(risks.iter().map(|r| r.unwrap_or(median)).collect())
}
