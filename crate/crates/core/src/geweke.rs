//! Joint-distribution ("getting it right") test of the sampler.
//!
//! Marginal-conditional draws come straight from the prior and the likelihood;
//! successive-conditional draws alternate one sampler sweep with a fresh
//! outcome drawn given the current state. Both target the same joint law, so
//! the means of any parameter function must agree.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::Sampler;
use crate::model::{
    Dataset, GammaPrior, GpFactor, HyperPriorConfig, InvGammaPrior, OutcomeMode, ParamState, ProposalScales,
    ScalarParam,
};
use crate::random::{sample_gamma, sample_inv_gamma, standard_normal, standard_normal_vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeConfig {
    pub n: usize,
    pub n_covariates: usize,
    /// Draws per simulator.
    pub n_draws: usize,
    /// Successive-conditional sweeps discarded before recording.
    pub burnin: usize,
    pub batches: usize,
    pub q_correction: bool,
    /// Binary mode simulates (z, y) jointly and runs the probit sweep; σ² is
    /// fixed at 1 and not reported.
    pub mode: OutcomeMode,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            n: 10,
            n_covariates: 1,
            n_draws: 50_000,
            burnin: 1_000,
            batches: 20,
            q_correction: true,
            mode: OutcomeMode::Continuous,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GewekeStat {
    pub name: String,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.stats.iter().all(|s| s.z.abs() < threshold)
    }
}

/// Priors and fixed proposal scales used by the joint test: tight enough for
/// the successive-conditional chain to mix within the draw budget, with
/// finite-variance σ² so its mean is testable.
pub fn joint_test_hyperpriors() -> HyperPriorConfig {
    let g = GammaPrior {
        shape: 10.0,
        rate: 10.0,
    };
    HyperPriorConfig {
        sigma2_beta: 1.0,
        l_mu: g,
        eta_mu: g,
        l_delta: g,
        eta_delta: g,
        sigma2: InvGammaPrior {
            shape: 6.0,
            scale: 5.0,
        },
        proposal: ProposalScales::uniform(1.0),
        ..Default::default()
    }
}

/// Draws every parameter from its prior given the design in `data`.
pub fn sample_prior_state<R: Rng + ?Sized>(
    data: &Dataset<f64>,
    hp: &HyperPriorConfig,
    rng: &mut R,
) -> Result<ParamState<f64>> {
    let mut s = ParamState::initial(data);
    s.l_mu = sample_gamma(hp.l_mu.shape, hp.l_mu.rate, rng)?;
    s.eta_mu = sample_gamma(hp.eta_mu.shape, hp.eta_mu.rate, rng)?;
    s.l_delta = sample_gamma(hp.l_delta.shape, hp.l_delta.rate, rng)?;
    s.eta_delta = sample_gamma(hp.eta_delta.shape, hp.eta_delta.rate, rng)?;
    if data.mode() == OutcomeMode::Continuous {
        s.sigma2 = sample_inv_gamma(hp.sigma2.shape, hp.sigma2.scale, rng)?;
    }
    s.beta = standard_normal_vector(data.n_covariates() + 1, rng) * hp.sigma2_beta.sqrt();
    let mu_gp = GpFactor::new(data.sq_dist(), s.l_mu, s.eta_mu, &hp.jitter)?;
    let delta_gp = GpFactor::new(data.sq_dist(), s.l_delta, s.eta_delta, &hp.jitter)?;
    s.mu = data.design() * &s.beta + mu_gp.apply_root(&standard_normal_vector(data.n(), rng))?;
    s.delta = delta_gp.apply_root(&standard_normal_vector(data.n(), rng))?;
    if data.mode() == OutcomeMode::Binary {
        s.z = Some(sample_outcome(&s, data, rng));
    }
    Ok(s)
}

fn sample_outcome<R: Rng + ?Sized>(state: &ParamState<f64>, data: &Dataset<f64>, rng: &mut R) -> DVector<f64> {
    let sd = state.sigma2.sqrt();
    state.linear_predictor(data).map(|m| m + sd * standard_normal(rng))
}

/// Fresh data given the parameters. Binary mode redraws the latents too and
/// sets y = 1[z > 0].
fn simulate_data<R: Rng + ?Sized>(
    state: &mut ParamState<f64>,
    template: &Dataset<f64>,
    rng: &mut R,
) -> Result<Dataset<f64>> {
    let draw = sample_outcome(state, template, rng);
    if template.mode() == OutcomeMode::Continuous {
        return template.with_outcome(draw);
    }
    let y = draw.map(|z| if z > 0.0 { 1.0 } else { 0.0 });
    state.z = Some(draw);
    template.with_outcome(y)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// Runs both simulators and reports a z-score for the mean of each scalar
/// hyperparameter. The successive-conditional standard error uses batch means.
/// Proposal scales are taken from `hp` and held fixed.
pub fn geweke_joint_test<R: Rng + ?Sized>(
    config: &GewekeConfig,
    hp: &HyperPriorConfig,
    rng: &mut R,
) -> Result<GewekeReport> {
    if config.n_draws < 2 * config.batches.max(1) {
        return Err(Error::InsufficientDraws(format!(
            "joint test needs at least {} draws, got {}",
            2 * config.batches.max(1),
            config.n_draws
        )));
    }
    if config.n < 2 || config.batches < 2 {
        return Err(Error::invalid("geweke", "need n ≥ 2 and at least 2 batches"));
    }
    let x = DMatrix::from_fn(config.n, config.n_covariates, |_, _| standard_normal(rng));
    let a = DVector::from_fn(config.n, |i, _| (i % 2) as f64);
    let template = Dataset::new(DVector::from_fn(config.n, |i, _| (i % 2) as f64), a, x, config.mode)?;
    let params: Vec<ScalarParam> = ScalarParam::ALL
        .into_iter()
        .filter(|p| config.mode == OutcomeMode::Continuous || *p != ScalarParam::Sigma2)
        .collect();

    let mut marginal = (0..5).map(|_| Vec::with_capacity(config.n_draws)).collect::<Vec<Vec<f64>>>();
    for _ in 0..config.n_draws {
        let s = sample_prior_state(&template, hp, rng)?;
        for p in ScalarParam::ALL {
            marginal[p.index()].push(s.scalar(p));
        }
    }

    let mut successive = (0..5).map(|_| Vec::with_capacity(config.n_draws)).collect::<Vec<Vec<f64>>>();
    let mut state = sample_prior_state(&template, hp, rng)?;
    for t in 0..config.burnin + config.n_draws {
        let data = simulate_data(&mut state, &template, rng)?;
        let mut sampler = Sampler::new(&data, hp, state)?.with_options(config.q_correction, false);
        sampler.sweep(rng, None)?;
        state = sampler.into_state();
        if t >= config.burnin {
            for p in ScalarParam::ALL {
                successive[p.index()].push(state.scalar(p));
            }
        }
    }

    let batch = config.n_draws / config.batches;
    let stats = params
        .iter()
        .map(|p| {
            let (m_mc, v_mc) = mean_var(&marginal[p.index()]);
            let sc = &successive[p.index()];
            let (m_sc, _) = mean_var(sc);
            let means: Vec<f64> = sc[..batch * config.batches]
                .chunks(batch)
                .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                .collect();
            let (_, v_batch) = mean_var(&means);
            let se = (v_mc / config.n_draws as f64 + v_batch / config.batches as f64).sqrt();
            GewekeStat {
                name: p.name().to_string(),
                marginal_mean: m_mc,
                successive_mean: m_sc,
                z: (m_mc - m_sc) / se,
            }
        })
        .collect();
    Ok(GewekeReport { stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::RngStream;

    #[test]
    fn zero_draws_is_an_error() {
        let cfg = GewekeConfig {
            n_draws: 0,
            ..Default::default()
        };
        let err = geweke_joint_test(&cfg, &HyperPriorConfig::default(), &mut RngStream::new(1, 0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientDraws(_)));
    }

    #[test]
    fn prior_draws_have_prior_means() {
        let hp = HyperPriorConfig::default();
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let a = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0]);
        let data = Dataset::new(DVector::zeros(4), a, x, OutcomeMode::Continuous).unwrap();
        let mut rng = RngStream::new(3, 0);
        let m = 20_000;
        let mean = (0..m)
            .map(|_| sample_prior_state(&data, &hp, &mut rng).unwrap().l_mu)
            .sum::<f64>()
            / m as f64;
        // Gamma(2, 1): mean 2, sd √2.
        assert!((mean - 2.0).abs() < 4.0 * (2.0f64 / m as f64).sqrt());
    }

    #[test]
    fn binary_sweep_passes_joint_test() {
        let cfg = GewekeConfig {
            mode: OutcomeMode::Binary,
            n_draws: 20_000,
            ..Default::default()
        };
        let report = geweke_joint_test(&cfg, &joint_test_hyperpriors(), &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(report.stats.len(), 4);
        assert!(report.passes(4.0), "{:?}", report.stats);
    }
}
