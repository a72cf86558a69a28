//! Covariate preprocessing shared by file ingestion and the simulation
//! harness: binary columns become {0,1}, continuous ones are standardized.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    /// (x − mean)/sd with the sample (n − 1) standard deviation.
    Standardized { mean: f64, sd: f64 },
    /// `low` ↦ 0, `high` ↦ 1.
    Binary { low: f64, high: f64 },
}

impl ColumnTransform {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            ColumnTransform::Standardized { mean, sd } => (v - mean) / sd,
            ColumnTransform::Binary { low, .. } => f64::from(u8::from(v != low)),
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        match *self {
            ColumnTransform::Standardized { mean, sd } => v * sd + mean,
            ColumnTransform::Binary { low, high } => {
                if v == 0.0 {
                    low
                } else {
                    high
                }
            }
        }
    }
}

/// Chooses and applies a transform per column. `names` label errors.
pub fn prepare_covariates(raw: &DMatrix<f64>, names: &[String]) -> Result<(DMatrix<f64>, Vec<ColumnTransform>)> {
    let mut out = raw.clone();
    let mut transforms = Vec::with_capacity(raw.ncols());
    for j in 0..raw.ncols() {
        let name = || names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1));
        let col: Vec<f64> = raw.column(j).iter().copied().collect();
        let mut distinct = col.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let t = match distinct.len() {
            0 | 1 => return Err(Error::ZeroVarianceCovariate(name())),
            2 => ColumnTransform::Binary {
                low: distinct[0],
                high: distinct[1],
            },
            _ => {
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
                if !(sd > 0.0) {
                    return Err(Error::ZeroVarianceCovariate(name()));
                }
                ColumnTransform::Standardized { mean, sd }
            }
        };
        for i in 0..raw.nrows() {
            out[(i, j)] = t.apply(raw[(i, j)]);
        }
        transforms.push(t);
    }
    Ok((out, transforms))
}
