//! Posterior summaries of the average effect and of per-subject effects.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;
use crate::model::OutcomeMode;
use crate::scalar::Real;

/// Point estimate, spread and equal-tailed 95% interval of ψ draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub median: f64,
    pub n_draws: usize,
}

impl PosteriorSummary {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let ss = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (m, (ss / (n - 1.0)).sqrt())
}

pub fn summarize_ate(psi: &[f64]) -> Result<PosteriorSummary> {
    if psi.len() < 2 {
        return Err(Error::InsufficientDraws(format!("need at least 2 draws, got {}", psi.len())));
    }
    if let Some(i) = psi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "psi draw", index: i });
    }
    let (estimate, sd) = mean_sd(psi);
    let mut sorted = psi.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(PosteriorSummary {
        estimate,
        sd,
        lower: quantile_sorted(&sorted, 0.025),
        upper: quantile_sorted(&sorted, 0.975),
        median: quantile_sorted(&sorted, 0.5),
        n_draws: psi.len(),
    })
}

pub fn summarize_posterior<T: Real>(draws: &PosteriorDraws<T>) -> Result<PosteriorSummary> {
    summarize_ate(&draws.psi())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEffect {
    /// Row of the subject in the input data.
    pub index: usize,
    pub mean: f64,
    pub sd: f64,
    pub key: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEffectSummary {
    pub subjects: Vec<SubjectEffect>,
    /// Effects are on the probit latent scale rather than the outcome scale.
    pub latent_scale: bool,
}

/// Column-wise posterior mean and SD of Δ. With a key the rows are sorted by
/// it (stable, so ties keep input order).
pub fn summarize_subjects<T: Real>(
    delta_draws: &[DVector<T>],
    key: Option<&[f64]>,
    latent_scale: bool,
) -> Result<SubjectEffectSummary> {
    let first = delta_draws
        .first()
        .ok_or_else(|| Error::InsufficientDraws("no effect draws".into()))?;
    let n = first.len();
    if let Some(d) = delta_draws.iter().find(|d| d.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "effect draw",
            expected: n,
            got: d.len(),
        });
    }
    if let Some(k) = key {
        if k.len() != n {
            return Err(Error::DimensionMismatch {
                what: "ordering key",
                expected: n,
                got: k.len(),
            });
        }
    }
    let mut column = vec![0.0; delta_draws.len()];
    let mut subjects: Vec<SubjectEffect> = (0..n)
        .map(|i| {
            for (c, d) in column.iter_mut().zip(delta_draws) {
                *c = d[i].to_f64_lossy();
            }
            let (mean, sd) = mean_sd(&column);
            SubjectEffect {
                index: i,
                mean,
                sd,
                key: key.map(|k| k[i]),
            }
        })
        .collect();
    if key.is_some() {
        subjects.sort_by(|a, b| a.key.unwrap_or(f64::NAN).total_cmp(&b.key.unwrap_or(f64::NAN)));
    }
    Ok(SubjectEffectSummary {
        subjects,
        latent_scale,
    })
}

pub fn summarize_posterior_subjects<T: Real>(
    draws: &PosteriorDraws<T>,
    key: Option<&[f64]>,
) -> Result<SubjectEffectSummary> {
    summarize_subjects(&draws.delta_draws(), key, draws.mode == OutcomeMode::Binary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{standard_normal, RngStream};
    use proptest::prelude::*;

    #[test]
    fn constant_draws() {
        let s = summarize_ate(&[2.0; 10]).unwrap();
        assert_eq!((s.estimate, s.sd, s.lower, s.upper), (2.0, 0.0, 2.0, 2.0));
    }

    #[test]
    fn mean_of_three() {
        assert_eq!(summarize_ate(&[1.0, 2.0, 3.0]).unwrap().estimate, 2.0);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.025) - 1.1).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.975) - 4.9).abs() < 1e-15);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(summarize_ate(&[1.0]), Err(Error::InsufficientDraws(_))));
        assert!(summarize_subjects::<f64>(&[], None, false).is_err());
    }

    #[test]
    fn normal_draws_give_nominal_interval() {
        let mut rng = RngStream::new(5, 0);
        let v: Vec<f64> = (0..100_000).map(|_| standard_normal(&mut rng)).collect();
        let s = summarize_ate(&v).unwrap();
        assert!((s.lower + 1.959964).abs() < 0.03 && (s.upper - 1.959964).abs() < 0.03);
    }

    #[test]
    fn subject_summaries() {
        let draws = vec![DVector::from_vec(vec![0.0, 5.0]), DVector::from_vec(vec![2.0, 5.0])];
        let s = summarize_subjects(&draws, None, false).unwrap();
        assert_eq!(s.subjects[0].mean, 1.0);
        assert!((s.subjects[0].sd - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.subjects[1].sd, 0.0);
    }

    #[test]
    fn key_sorts_stably() {
        let draws = vec![DVector::from_vec(vec![1.0, 2.0, 3.0]); 2];
        let s = summarize_subjects(&draws, Some(&[0.5, 0.1, 0.5]), true).unwrap();
        let order: Vec<_> = s.subjects.iter().map(|e| e.index).collect();
        assert_eq!(order, vec![1, 0, 2]);
        assert!(s.latent_scale);
    }

    proptest! {
        #[test]
        fn ate_is_mean_of_subject_means(
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 2..20)
        ) {
            let draws: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_vec(r.clone())).collect();
            let psi: Vec<f64> = draws.iter().map(|d| d.mean()).collect();
            let ate = summarize_ate(&psi).unwrap().estimate;
            let subj = summarize_subjects(&draws, None, false).unwrap();
            let exchanged = subj.subjects.iter().map(|s| s.mean).sum::<f64>() / 4.0;
            prop_assert!((ate - exchanged).abs() <= 1e-12);
        }

        #[test]
        fn interval_contains_median(v in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let s = summarize_ate(&v).unwrap();
            prop_assert!(s.lower <= s.median && s.median <= s.upper);
            prop_assert!(s.sd >= 0.0);
        }
    }
}
