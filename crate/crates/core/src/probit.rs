//! Probit data augmentation for binary outcomes and the causal risk
//! difference computed from μ and Δ draws.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, OutcomeMode, ParamState};
use crate::random::sample_truncnorm;
use crate::scalar::Real;
use crate::special::norm_cdf;

/// p₁ = mean Φ(μ + Δ), p₀ = mean Φ(μ), and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskDifferenceDraw {
    pub p1: f64,
    pub p0: f64,
    pub risk_difference: f64,
}

/// Redraws every latent z_i from N(μ_i + Δ_i a_i, 1) truncated to the half
/// line matching y_i.
pub fn sample_latent_z<T: Real, R: Rng + ?Sized>(
    state: &ParamState<T>,
    data: &Dataset<T>,
    rng: &mut R,
) -> Result<DVector<T>> {
    if data.mode() != OutcomeMode::Binary {
        return Err(Error::InvalidData("latent draws require a binary dataset".into()));
    }
    let eta = state.linear_predictor(data);
    let mut z = DVector::zeros(data.n());
    for i in 0..data.n() {
        let m = eta[i].to_f64_lossy();
        let (lo, hi) = if data.y()[i] == T::one() {
            (0.0, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        z[i] = T::c(sample_truncnorm(m, 1.0, lo, hi, rng)?);
    }
    Ok(z)
}

pub fn risk_difference_draw<T: Real>(state: &ParamState<T>) -> RiskDifferenceDraw {
    let n = state.mu.len() as f64;
    let mut p1 = 0.0;
    let mut p0 = 0.0;
    for (mu, delta) in state.mu.iter().zip(state.delta.iter()) {
        let m = mu.to_f64_lossy();
        p1 += norm_cdf(m + delta.to_f64_lossy());
        p0 += norm_cdf(m);
    }
    let (p1, p0) = (p1 / n, p0 / n);
    RiskDifferenceDraw {
        p1,
        p0,
        risk_difference: p1 - p0,
    }
}
