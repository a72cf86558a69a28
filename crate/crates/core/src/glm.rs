//! Regression baselines: least squares for continuous outcomes and a probit
//! maximum-likelihood fit for binary ones. Both regress the outcome on
//! (1, A, X) and report a Wald interval for the treatment effect.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::PosteriorSummary;
use crate::model::Dataset;
use crate::special::{log_norm_cdf, norm_cdf, norm_logpdf, norm_quantile};

/// Point estimate with standard error and 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalEstimate {
    pub fn wald(estimate: f64, se: f64) -> Self {
        let z = norm_quantile(0.975);
        Self {
            estimate,
            sd: se,
            lower: estimate - z * se,
            upper: estimate + z * se,
        }
    }

    pub fn covers(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

impl From<PosteriorSummary> for IntervalEstimate {
    fn from(s: PosteriorSummary) -> Self {
        Self {
            estimate: s.estimate,
            sd: s.sd,
            lower: s.lower,
            upper: s.upper,
        }
    }
}

/// Columns (1, A, X).
fn treatment_design(data: &Dataset<f64>) -> DMatrix<f64> {
    let n = data.n();
    let p = data.n_covariates();
    DMatrix::from_fn(n, p + 2, |i, j| match j {
        0 => 1.0,
        1 => data.a()[i],
        _ => data.x()[(i, j - 2)],
    })
}

fn invert_spd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let jitter = m.diagonal().amax() * 1e-12;
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite { jitter })
}

/// Ordinary least squares; the effect is the coefficient of A with the
/// classical standard error.
pub fn ols_effect(data: &Dataset<f64>) -> Result<IntervalEstimate> {
    let d = treatment_design(data);
    let (n, q) = d.shape();
    if n <= q {
        return Err(Error::InvalidData(format!("{n} rows cannot fit {q} coefficients")));
    }
    let xtx_inv = invert_spd(d.transpose() * &d)?;
    let beta = &xtx_inv * d.transpose() * data.y();
    let resid = data.y() - &d * &beta;
    let s2 = resid.dot(&resid) / (n - q) as f64;
    Ok(IntervalEstimate::wald(beta[1], (s2 * xtx_inv[(1, 1)]).sqrt()))
}

#[derive(Debug, Clone)]
pub struct ProbitFit {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

fn probit_loglik(d: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = d * beta;
    eta.iter()
        .zip(y.iter())
        .map(|(e, y)| if *y == 1.0 { log_norm_cdf(*e) } else { log_norm_cdf(-e) })
        .sum()
}

/// Probit regression of y on `d` by Fisher scoring with step halving.
pub fn probit_mle(d: &DMatrix<f64>, y: &DVector<f64>) -> Result<ProbitFit> {
    let q = d.ncols();
    let mut beta = DVector::zeros(q);
    let mut ll = probit_loglik(d, y, &beta);
    for iter in 1..=100 {
        let eta = d * &beta;
        let mut grad = DVector::zeros(q);
        let mut info = DMatrix::zeros(q, q);
        for i in 0..d.nrows() {
            let e = eta[i];
            let lp = norm_logpdf(e);
            let up = (lp - log_norm_cdf(e)).exp();
            let down = (lp - log_norm_cdf(-e)).exp();
            let score = if y[i] == 1.0 { up } else { -down };
            let row = d.row(i).transpose();
            grad += &row * score;
            info += &row * row.transpose() * (up * down);
        }
        let info_inv = invert_spd(info)?;
        let step = &info_inv * &grad;
        let mut scale = 1.0;
        let (next, next_ll) = loop {
            let cand = &beta + &step * scale;
            let cll = probit_loglik(d, y, &cand);
            if cll >= ll - 1e-12 || scale < 1e-8 {
                break (cand, cll);
            }
            scale *= 0.5;
        };
        let converged = (next_ll - ll).abs() < 1e-10 * (1.0 + ll.abs()) && step.amax() * scale < 1e-8;
        beta = next;
        ll = next_ll;
        if converged {
            return Ok(ProbitFit {
                coefficients: beta,
                covariance: info_inv,
                iterations: iter,
            });
        }
    }
    Err(Error::invalid("probit", "Fisher scoring did not converge (possible separation)"))
}

/// Risk difference mean Φ(d₁β) − Φ(d₀β) from a probit fit with a delta-method
/// standard error.
pub fn probit_risk_difference(data: &Dataset<f64>) -> Result<IntervalEstimate> {
    let d = treatment_design(data);
    let fit = probit_mle(&d, data.y())?;
    let n = data.n() as f64;
    let mut rd = 0.0;
    let mut grad = DVector::zeros(d.ncols());
    for i in 0..d.nrows() {
        let mut row = d.row(i).transpose();
        row[1] = 1.0;
        let e1 = row.dot(&fit.coefficients);
        let g1 = row.clone() * norm_logpdf(e1).exp();
        row[1] = 0.0;
        let e0 = row.dot(&fit.coefficients);
        rd += norm_cdf(e1) - norm_cdf(e0);
        grad += (g1 - row * norm_logpdf(e0).exp()) / n;
    }
    let var = (grad.transpose() * &fit.covariance * &grad)[(0, 0)];
    Ok(IntervalEstimate::wald(rd / n, var.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OutcomeMode;
    use crate::random::{open_uniform, standard_normal, RngStream};

    #[test]
    fn ols_recovers_exact_effect() {
        let x = DMatrix::from_fn(12, 1, |i, _| (i as f64 * 0.7).cos());
        let a = DVector::from_fn(12, |i, _| (i % 2) as f64);
        let y = DVector::from_fn(12, |i, _| 1.0 + 3.0 * a[i] - 2.0 * x[(i, 0)] + 1e-3 * (i as f64).sin());
        let data = Dataset::new(y, a, x, OutcomeMode::Continuous).unwrap();
        let e = ols_effect(&data).unwrap();
        assert!((e.estimate - 3.0).abs() < 1e-2);
        assert!(e.covers(e.estimate) && e.sd > 0.0);
    }

    #[test]
    fn probit_fit_recovers_coefficients() {
        let mut rng = RngStream::new(12, 0);
        let n = 4000;
        let d = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { standard_normal(&mut rng) });
        let y = DVector::from_fn(n, |i, _| {
            let p = norm_cdf(-0.3 + 0.8 * d[(i, 1)]);
            f64::from(u8::from(open_uniform(&mut rng) < p))
        });
        let fit = probit_mle(&d, &y).unwrap();
        assert!((fit.coefficients[0] + 0.3).abs() < 4.0 * fit.covariance[(0, 0)].sqrt());
        assert!((fit.coefficients[1] - 0.8).abs() < 4.0 * fit.covariance[(1, 1)].sqrt());
    }

    #[test]
    fn separated_data_fails() {
        let d = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(probit_mle(&d, &y).is_err());
    }
}
