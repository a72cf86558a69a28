//! Metropolis-within-Gibbs sampler: scalar hyperparameters by truncated-normal
//! random-walk Metropolis-Hastings, β/μ/Δ by exact Gaussian conditionals.
//!
//! Sweep order is l_μ, η_μ, β, μ, l_Δ, η_Δ, Δ, σ²; each step conditions on the
//! values already updated earlier in the same sweep. Binary outcomes prepend a
//! latent-z step and drop the σ² step.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    cond_beta_with, cond_delta_with, cond_mu_with, log_joint, log_joint_terms, log_likelihood, Dataset,
    GpFactor, HyperPriorConfig, OutcomeMode, ParamState, ProposalScales, ScalarParam,
};
use crate::probit::{risk_difference_draw, sample_latent_z, RiskDifferenceDraw};
use crate::random::{open_uniform, sample_inv_gamma, sample_mvn, sample_truncnorm, truncnorm_logpdf, RngStream};
use crate::scalar::Real;

pub const TAU_BOUNDS: (f64, f64) = (1e-4, 10.0);

/// Run-length, thinning, chain count and adaptation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_burnin: usize,
    /// Post-burn-in iterations; `n_kept_iterations / thin` draws are stored.
    pub n_kept_iterations: usize,
    pub thin: usize,
    pub n_chains: usize,
    /// Robbins-Monro tuning of τ during burn-in only.
    pub adapt: bool,
    pub target_acceptance: f64,
    pub seed: u64,
    /// Replace the σ² Metropolis step with its conjugate inverse-gamma draw.
    pub conjugate_sigma2: bool,
    /// Start chains after the first at scalars scaled by U(0.5, 2).
    pub overdisperse: bool,
    /// Hastings correction for the truncated proposal. Only disabled by the
    /// mutation canary in the verification suite.
    #[doc(hidden)]
    pub q_correction: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_burnin: 10_000,
            n_kept_iterations: 5_000,
            thin: 5,
            n_chains: 1,
            adapt: true,
            target_acceptance: 0.35,
            seed: 1,
            conjugate_sigma2: false,
            overdisperse: true,
            q_correction: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_kept_iterations == 0 {
            return Err(Error::invalid("n_kept_iterations", "must be positive"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin", "must be at least 1"));
        }
        if self.n_chains == 0 {
            return Err(Error::invalid("n_chains", "must be positive"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::invalid("target_acceptance", "must lie in (0, 1)"));
        }
        if self.n_kept_iterations / self.thin == 0 {
            return Err(Error::invalid("thin", "keeps no draws"));
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        self.n_kept_iterations / self.thin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GibbsBlock {
    Beta,
    Mu,
    Delta,
}

/// One step of a sweep, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepStep {
    LatentZ,
    Scalar(ScalarParam),
    Block(GibbsBlock),
}

pub const CONTINUOUS_SWEEP: [SweepStep; 8] = [
    SweepStep::Scalar(ScalarParam::LMu),
    SweepStep::Scalar(ScalarParam::EtaMu),
    SweepStep::Block(GibbsBlock::Beta),
    SweepStep::Block(GibbsBlock::Mu),
    SweepStep::Scalar(ScalarParam::LDelta),
    SweepStep::Scalar(ScalarParam::EtaDelta),
    SweepStep::Block(GibbsBlock::Delta),
    SweepStep::Scalar(ScalarParam::Sigma2),
];

pub const BINARY_SWEEP: [SweepStep; 8] = [
    SweepStep::LatentZ,
    SweepStep::Scalar(ScalarParam::LMu),
    SweepStep::Scalar(ScalarParam::EtaMu),
    SweepStep::Block(GibbsBlock::Beta),
    SweepStep::Block(GibbsBlock::Mu),
    SweepStep::Scalar(ScalarParam::LDelta),
    SweepStep::Scalar(ScalarParam::EtaDelta),
    SweepStep::Block(GibbsBlock::Delta),
];

/// Observer called around every step of a sweep.
pub trait SweepTrace<T: Real> {
    fn record(&mut self, step: SweepStep, before: &ParamState<T>, after: &ParamState<T>);
}

/// Sampler state plus cached GP factors at the current hyperparameters.
pub struct Sampler<'a, T: Real> {
    data: &'a Dataset<T>,
    hp: &'a HyperPriorConfig,
    state: ParamState<T>,
    mu_gp: GpFactor<T>,
    delta_gp: GpFactor<T>,
    tau: ProposalScales,
    q_correction: bool,
    conjugate_sigma2: bool,
    jitter_events: usize,
    failed_proposals: usize,
}

impl<'a, T: Real> Sampler<'a, T> {
    pub fn new(data: &'a Dataset<T>, hp: &'a HyperPriorConfig, state: ParamState<T>) -> Result<Self> {
        hp.validate()?;
        let terms = log_joint_terms(&state, data, hp)?;
        if let Some(term) = terms.first_non_finite() {
            return Err(Error::NonFiniteInitialization { term });
        }
        let mu_gp = GpFactor::new(data.sq_dist(), state.l_mu, state.eta_mu, &hp.jitter)?;
        let delta_gp = GpFactor::new(data.sq_dist(), state.l_delta, state.eta_delta, &hp.jitter)?;
        let jitter_events = usize::from(mu_gp.jitter() > T::zero()) + usize::from(delta_gp.jitter() > T::zero());
        Ok(Self {
            data,
            hp,
            state,
            mu_gp,
            delta_gp,
            tau: hp.proposal,
            q_correction: true,
            conjugate_sigma2: false,
            jitter_events,
            failed_proposals: 0,
        })
    }

    pub fn with_options(mut self, q_correction: bool, conjugate_sigma2: bool) -> Self {
        self.q_correction = q_correction;
        self.conjugate_sigma2 = conjugate_sigma2;
        self
    }

    pub fn state(&self) -> &ParamState<T> {
        &self.state
    }

    pub fn into_state(self) -> ParamState<T> {
        self.state
    }

    pub fn tau(&self) -> &ProposalScales {
        &self.tau
    }

    pub fn set_tau(&mut self, tau: ProposalScales) {
        self.tau = tau;
    }

    pub fn jitter_events(&self) -> usize {
        self.jitter_events
    }

    pub fn failed_proposals(&self) -> usize {
        self.failed_proposals
    }

    fn steps(&self) -> &'static [SweepStep] {
        match self.data.mode() {
            OutcomeMode::Continuous => &CONTINUOUS_SWEEP,
            OutcomeMode::Binary => &BINARY_SWEEP,
        }
    }

    /// Change in log target when `param` moves to `proposal`, with the factor
    /// to adopt on acceptance.
    fn target_change(&mut self, param: ScalarParam, proposal: T) -> Result<(f64, Option<GpFactor<T>>)> {
        let s = &self.state;
        let current = s.scalar(param);
        let prior = self.hp.scalar_log_prior(param, proposal.to_f64_lossy())
            - self.hp.scalar_log_prior(param, current.to_f64_lossy());
        let sq = self.data.sq_dist();
        let (old, new, field): (&GpFactor<T>, GpFactor<T>, DVector<T>) = match param {
            ScalarParam::LMu => (
                &self.mu_gp,
                GpFactor::new(sq, proposal, s.eta_mu, &self.hp.jitter)?,
                &s.mu - self.data.design() * &s.beta,
            ),
            ScalarParam::EtaMu => (
                &self.mu_gp,
                self.mu_gp.with_amplitude(proposal),
                &s.mu - self.data.design() * &s.beta,
            ),
            ScalarParam::LDelta => (
                &self.delta_gp,
                GpFactor::new(sq, proposal, s.eta_delta, &self.hp.jitter)?,
                s.delta.clone(),
            ),
            ScalarParam::EtaDelta => (
                &self.delta_gp,
                self.delta_gp.with_amplitude(proposal),
                s.delta.clone(),
            ),
            ScalarParam::Sigma2 => {
                let lik = log_likelihood(s, self.data, proposal) - log_likelihood(s, self.data, current);
                return Ok((lik.to_f64_lossy() + prior, None));
            }
        };
        if matches!(param, ScalarParam::LMu | ScalarParam::LDelta) && new.jitter() > T::zero() {
            self.jitter_events += 1;
        }
        let gp = new.log_density(&field)? - old.log_density(&field)?;
        Ok((gp.to_f64_lossy() + prior, Some(new)))
    }

    /// Log acceptance ratio for moving `param` to `proposal`, with the factor
    /// to adopt on acceptance. Factorization failures surface as errors.
    pub fn log_ratio(&mut self, param: ScalarParam, proposal: f64) -> Result<(f64, Option<GpFactor<T>>)> {
        let tau = self.tau.get(param);
        let current = self.state.scalar(param).to_f64_lossy();
        let (mut log_r, factor) = self.target_change(param, T::c(proposal))?;
        if self.q_correction {
            log_r += truncnorm_logpdf(current, proposal, tau, 0.0, f64::INFINITY)
                - truncnorm_logpdf(proposal, current, tau, 0.0, f64::INFINITY);
        }
        Ok((log_r, factor))
    }

    /// One truncated-normal random-walk Metropolis-Hastings update.
    pub fn mh_step<R: Rng + ?Sized>(&mut self, param: ScalarParam, rng: &mut R) -> Result<bool> {
        let tau = self.tau.get(param);
        let current = self.state.scalar(param).to_f64_lossy();
        let proposal = sample_truncnorm(current, tau, 0.0, f64::INFINITY, rng)?;
        let u = open_uniform(rng);
        let (log_r, factor) = match self.log_ratio(param, proposal) {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite { .. }) | Err(Error::NonFinite { .. }) => {
                self.failed_proposals += 1;
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        // NaN compares false, so an undefined ratio rejects.
        if !(u.ln() <= log_r) {
            return Ok(false);
        }
        self.state.set_scalar(param, T::c(proposal));
        match (param, factor) {
            (ScalarParam::LMu | ScalarParam::EtaMu, Some(f)) => self.mu_gp = f,
            (ScalarParam::LDelta | ScalarParam::EtaDelta, Some(f)) => self.delta_gp = f,
            _ => {}
        }
        Ok(true)
    }

    /// Exact draw of σ² from its inverse-gamma full conditional.
    fn conjugate_sigma2_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let resid = self.data.y() - self.state.linear_predictor(self.data);
        let ssr = resid.dot(&resid).to_f64_lossy();
        let shape = self.hp.sigma2.shape + 0.5 * self.data.n() as f64;
        let scale = self.hp.sigma2.scale + 0.5 * ssr;
        self.state.sigma2 = T::c(sample_inv_gamma(shape, scale, rng)?);
        Ok(())
    }

    pub fn gibbs_step<R: Rng + ?Sized>(&mut self, block: GibbsBlock, rng: &mut R) -> Result<()> {
        let (data, hp) = (self.data, self.hp);
        match block {
            GibbsBlock::Beta => {
                let c = cond_beta_with(&self.mu_gp, &self.state, data, hp)?;
                self.state.beta = sample_mvn(&c.mean, &c.root, rng)?;
            }
            GibbsBlock::Mu => {
                let c = cond_mu_with(&self.mu_gp, &self.state, data, hp)?;
                self.state.mu = sample_mvn(&c.mean, &c.root, rng)?;
            }
            GibbsBlock::Delta => {
                let c = cond_delta_with(&self.delta_gp, &self.state, data, hp)?;
                self.state.delta = sample_mvn(&c.mean, &c.root, rng)?;
            }
        }
        Ok(())
    }

    fn run_step<R: Rng + ?Sized>(&mut self, step: SweepStep, rng: &mut R) -> Result<Option<bool>> {
        match step {
            SweepStep::LatentZ => {
                self.state.z = Some(sample_latent_z(&self.state, self.data, rng)?);
                Ok(None)
            }
            SweepStep::Scalar(ScalarParam::Sigma2) if self.conjugate_sigma2 => {
                self.conjugate_sigma2_step(rng)?;
                Ok(Some(true))
            }
            SweepStep::Scalar(p) => self.mh_step(p, rng).map(Some),
            SweepStep::Block(b) => self.gibbs_step(b, rng).map(|_| None),
        }
    }

    /// One full sweep. Returns the acceptance flag of each scalar that was
    /// updated, indexed by [`ScalarParam::index`].
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        mut trace: Option<&mut dyn SweepTrace<T>>,
    ) -> Result<[Option<bool>; 5]> {
        let mut accepted = [None; 5];
        for &step in self.steps() {
            let before = trace.as_ref().map(|_| self.state.clone());
            let outcome = self.run_step(step, rng)?;
            if let SweepStep::Scalar(p) = step {
                accepted[p.index()] = outcome;
            }
            if let (Some(t), Some(b)) = (trace.as_mut(), before) {
                t.record(step, &b, &self.state);
            }
        }
        Ok(accepted)
    }
}

/// Single Metropolis-Hastings update of one scalar, starting from `state`.
pub fn mh_step_scalar<T: Real, R: Rng + ?Sized>(
    param: ScalarParam,
    state: &ParamState<T>,
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
    tau: f64,
    rng: &mut R,
) -> Result<(ParamState<T>, bool)> {
    let mut s = Sampler::new(data, hp, state.clone())?;
    let mut scales = hp.proposal;
    scales.set(param, tau);
    s.set_tau(scales);
    let accepted = s.mh_step(param, rng)?;
    Ok((s.into_state(), accepted))
}

/// Log acceptance ratio for moving `param` to `proposal`, evaluated from two
/// full log-joint evaluations. Reference route for the sampler's incremental
/// computation.
pub fn mh_log_ratio<T: Real>(
    param: ScalarParam,
    state: &ParamState<T>,
    proposal: f64,
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
    tau: f64,
    q_correction: bool,
) -> Result<f64> {
    let mut moved = state.clone();
    moved.set_scalar(param, T::c(proposal));
    let current = state.scalar(param).to_f64_lossy();
    let mut r = (log_joint(&moved, data, hp)? - log_joint(state, data, hp)?).to_f64_lossy();
    if q_correction {
        r += truncnorm_logpdf(current, proposal, tau, 0.0, f64::INFINITY)
            - truncnorm_logpdf(proposal, current, tau, 0.0, f64::INFINITY);
    }
    Ok(r)
}

/// Gibbs draw of one block from its exact conditional.
pub fn gibbs_step_block<T: Real, R: Rng + ?Sized>(
    block: GibbsBlock,
    state: &ParamState<T>,
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
    rng: &mut R,
) -> Result<ParamState<T>> {
    let mut s = Sampler::new(data, hp, state.clone())?;
    s.gibbs_step(block, rng)?;
    Ok(s.into_state())
}

/// A stored post-burn-in draw.
#[derive(Debug, Clone)]
pub struct KeptDraw<T: Real> {
    /// 1-based iteration index after burn-in.
    pub iteration: usize,
    pub state: ParamState<T>,
    /// ψ = mean Δ (continuous) or the risk difference (binary).
    pub psi: f64,
    pub risk: Option<RiskDifferenceDraw>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub stream: u64,
    /// Post-burn-in acceptance rate per scalar; `None` when not updated by MH.
    pub acceptance: [Option<f64>; 5],
    pub final_tau: ProposalScales,
    pub jitter_events: usize,
    pub failed_proposals: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ChainResult<T: Real> {
    pub draws: Vec<KeptDraw<T>>,
    pub diagnostics: ChainDiagnostics,
}

impl<T: Real> ChainResult<T> {
    pub fn psi(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.psi).collect()
    }
}

fn overdispersed_start<T: Real, R: Rng + ?Sized>(data: &Dataset<T>, rng: &mut R) -> ParamState<T> {
    let mut s = ParamState::initial(data);
    for p in ScalarParam::ALL {
        if p == ScalarParam::Sigma2 && data.mode() == OutcomeMode::Binary {
            continue;
        }
        let factor: f64 = rng.gen_range(0.5..2.0);
        s.set_scalar(p, s.scalar(p) * T::c(factor));
    }
    s
}

/// Runs one chain: burn-in with optional τ adaptation, then the kept phase
/// with τ frozen.
pub fn run_chain<T: Real>(
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
    config: &McmcConfig,
    chain: usize,
    rng: &mut RngStream,
) -> Result<ChainResult<T>> {
    config.validate()?;
    let started = Instant::now();
    let init = if chain > 0 && config.overdisperse {
        overdispersed_start(data, rng)
    } else {
        ParamState::initial(data)
    };
    let mut sampler = Sampler::new(data, hp, init)?.with_options(config.q_correction, config.conjugate_sigma2);

    let mut log_tau: [f64; 5] = ScalarParam::ALL.map(|p| hp.proposal.get(p).ln());
    let (lo, hi) = (TAU_BOUNDS.0.ln(), TAU_BOUNDS.1.ln());
    for t in 0..config.n_burnin {
        let acc = sampler.sweep(rng, None)?;
        if config.adapt {
            let gain = (t as f64 + 1.0).powf(-0.6);
            let mut tau = *sampler.tau();
            for p in ScalarParam::ALL {
                if let Some(a) = acc[p.index()] {
                    let step = gain * (f64::from(u8::from(a)) - config.target_acceptance);
                    log_tau[p.index()] = (log_tau[p.index()] + step).clamp(lo, hi);
                    tau.set(p, log_tau[p.index()].exp());
                }
            }
            sampler.set_tau(tau);
        }
    }

    let mut counts = [0usize; 5];
    let mut attempts = [0usize; 5];
    let mut draws = Vec::with_capacity(config.draws_per_chain());
    let binary = data.mode() == OutcomeMode::Binary;
    for t in 0..config.n_kept_iterations {
        let acc = sampler.sweep(rng, None)?;
        for (i, a) in acc.iter().enumerate() {
            if let Some(a) = a {
                attempts[i] += 1;
                counts[i] += usize::from(*a);
            }
        }
        if (t + 1) % config.thin == 0 {
            let state = sampler.state().clone();
            let (psi, risk) = if binary {
                let rd = risk_difference_draw(&state);
                (rd.risk_difference, Some(rd))
            } else {
                (state.psi().to_f64_lossy(), None)
            };
            draws.push(KeptDraw {
                iteration: t + 1,
                state,
                psi,
                risk,
            });
        }
    }
    let acceptance = std::array::from_fn(|i| (attempts[i] > 0).then(|| counts[i] as f64 / attempts[i] as f64));
    Ok(ChainResult {
        draws,
        diagnostics: ChainDiagnostics {
            chain,
            stream: rng.stream(),
            acceptance,
            final_tau: *sampler.tau(),
            jitter_events: sampler.jitter_events(),
            failed_proposals: sampler.failed_proposals(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    })
}

/// Kept draws of every chain, pooled in chain order.
#[derive(Debug, Clone)]
pub struct PosteriorDraws<T: Real> {
    pub mode: OutcomeMode,
    pub chains: Vec<ChainResult<T>>,
}

impl<T: Real> PosteriorDraws<T> {
    pub fn psi(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.draws.iter().map(|d| d.psi)).collect()
    }

    pub fn draws(&self) -> impl Iterator<Item = (usize, &KeptDraw<T>)> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(move |d| (c.diagnostics.chain, d)))
    }

    pub fn delta_draws(&self) -> Vec<DVector<T>> {
        self.draws().map(|(_, d)| d.state.delta.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn diagnostics(&self) -> Vec<ChainDiagnostics> {
        self.chains.iter().map(|c| c.diagnostics.clone()).collect()
    }
}

/// Runs `config.n_chains` chains in parallel on streams derived from
/// `(config.seed, replication, chain)`.
pub fn run_chains<T: Real>(
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
    config: &McmcConfig,
    replication: u64,
) -> Result<PosteriorDraws<T>> {
    config.validate()?;
    let chains = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::for_chain(config.seed, replication, c as u64);
            run_chain(data, hp, config, c, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        mode: data.mode(),
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cond_mu;
    use nalgebra::DMatrix;

    fn toy(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = RngStream::new(seed, 99);
        let x = DMatrix::from_fn(n, 2, |_, _| crate::random::standard_normal(&mut rng));
        let a = DVector::from_fn(n, |i, _| (i % 2) as f64);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 1)] + a[i] + 0.3 * crate::random::standard_normal(&mut rng));
        Dataset::new(y, a, x, OutcomeMode::Continuous).unwrap()
    }

    fn short(seed: u64) -> McmcConfig {
        McmcConfig {
            n_burnin: 50,
            n_kept_iterations: 100,
            thin: 5,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn thinning_keeps_kept_over_thin_draws() {
        let data = toy(8, 1);
        let cfg = McmcConfig {
            n_burnin: 10,
            n_kept_iterations: 1000,
            thin: 5,
            ..Default::default()
        };
        let out = run_chain(&data, &HyperPriorConfig::default(), &cfg, 0, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(out.draws.len(), 200);
        assert_eq!(out.draws.last().unwrap().iteration, 1000);
        for a in out.diagnostics.acceptance.iter().flatten() {
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn same_stream_reproduces_and_streams_differ() {
        let data = toy(8, 2);
        let hp = HyperPriorConfig::default();
        let cfg = short(7);
        let a = run_chain(&data, &hp, &cfg, 0, &mut RngStream::new(7, 0)).unwrap().psi();
        let b = run_chain(&data, &hp, &cfg, 0, &mut RngStream::new(7, 0)).unwrap().psi();
        let c = run_chain(&data, &hp, &cfg, 0, &mut RngStream::new(7, 1)).unwrap().psi();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn incremental_ratio_matches_full_log_joint() {
        let data = toy(6, 3);
        let hp = HyperPriorConfig::default();
        let mut state = ParamState::initial(&data);
        state.mu = data.y() * 0.8;
        state.delta = DVector::from_fn(6, |i, _| 0.1 * i as f64);
        state.l_mu = 0.7;
        state.eta_delta = 1.4;
        for p in ScalarParam::ALL {
            for proposal in [0.3, 0.95, 2.2] {
                let mut s = Sampler::new(&data, &hp, state.clone()).unwrap();
                let (fast, _) = s.log_ratio(p, proposal).unwrap();
                let slow = mh_log_ratio(p, &state, proposal, &data, &hp, hp.proposal.get(p), true).unwrap();
                assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow.abs()), "{p:?}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn tiny_tau_is_almost_always_accepted() {
        let data = toy(6, 4);
        let hp = HyperPriorConfig::default();
        let state = ParamState::initial(&data);
        let mut rng = RngStream::new(4, 0);
        for p in ScalarParam::ALL {
            let accepted = (0..200)
                .filter(|_| mh_step_scalar(p, &state, &data, &hp, 1e-9, &mut rng).unwrap().1)
                .count();
            assert!(accepted >= 198, "{p:?}: {accepted}");
        }
    }

    #[test]
    fn nonpositive_variance_gives_minus_infinity_ratio() {
        let data = toy(5, 5);
        let hp = HyperPriorConfig::default();
        let state = ParamState::initial(&data);
        let r = mh_log_ratio(ScalarParam::Sigma2, &state, 0.0, &data, &hp, 0.3, false).unwrap();
        assert_eq!(r, f64::NEG_INFINITY);
    }

    #[test]
    fn collapsed_beta_prior_returns_mean() {
        let data = toy(6, 6);
        let hp = HyperPriorConfig {
            sigma2_beta: 1e-14,
            ..Default::default()
        };
        let state = ParamState::initial(&data);
        let next = gibbs_step_block(GibbsBlock::Beta, &state, &data, &hp, &mut RngStream::new(1, 1)).unwrap();
        assert!(next.beta.amax() < 1e-5);
        assert_eq!(next.mu, state.mu);
    }

    #[test]
    fn gibbs_mu_draws_average_to_conditional_mean() {
        let data = toy(3, 8);
        let hp = HyperPriorConfig::default();
        let mut state = ParamState::initial(&data);
        state.beta = DVector::from_vec(vec![0.2, -0.4, 0.1]);
        state.delta = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let c = cond_mu(&state, &data, &hp).unwrap();
        let cov = c.covariance().unwrap();
        let m = 10_000;
        let mut rng = RngStream::new(8, 0);
        let mut sum = DVector::zeros(3);
        for _ in 0..m {
            sum += gibbs_step_block(GibbsBlock::Mu, &state, &data, &hp, &mut rng).unwrap().mu;
        }
        let mean = sum / m as f64;
        for i in 0..3 {
            let se = (cov[(i, i)] / m as f64).sqrt();
            assert!((mean[i] - c.mean[i]).abs() < 3.0 * se, "coordinate {i}");
        }
    }

    struct Recorder(Vec<(SweepStep, ParamState<f64>, ParamState<f64>)>);

    impl SweepTrace<f64> for Recorder {
        fn record(&mut self, step: SweepStep, before: &ParamState<f64>, after: &ParamState<f64>) {
            self.0.push((step, before.clone(), after.clone()));
        }
    }

    fn changed_only(step: SweepStep, before: &ParamState<f64>, after: &ParamState<f64>) -> bool {
        let mut expect = before.clone();
        match step {
            SweepStep::LatentZ => expect.z = after.z.clone(),
            SweepStep::Scalar(p) => expect.set_scalar(p, after.scalar(p)),
            SweepStep::Block(GibbsBlock::Beta) => expect.beta = after.beta.clone(),
            SweepStep::Block(GibbsBlock::Mu) => expect.mu = after.mu.clone(),
            SweepStep::Block(GibbsBlock::Delta) => expect.delta = after.delta.clone(),
        }
        &expect == after
    }

    #[test]
    fn sweep_steps_chain_through_updated_values() {
        let data = toy(6, 9);
        let hp = HyperPriorConfig::default();
        let mut s = Sampler::new(&data, &hp, ParamState::initial(&data)).unwrap();
        let mut rng = RngStream::new(9, 0);
        let mut rec = Recorder(Vec::new());
        for _ in 0..5 {
            s.sweep(&mut rng, Some(&mut rec)).unwrap();
        }
        let steps: Vec<_> = rec.0.iter().take(8).map(|r| r.0).collect();
        assert_eq!(steps, CONTINUOUS_SWEEP.to_vec());
        for w in rec.0.windows(2) {
            assert_eq!(w[0].2, w[1].1);
        }
        for (step, before, after) in &rec.0 {
            assert!(changed_only(*step, before, after), "{step:?} touched other coordinates");
        }
    }

    #[test]
    fn zero_signal_effect_is_near_zero() {
        let mut rng = RngStream::new(10, 5);
        let x = DMatrix::from_fn(10, 1, |_, _| crate::random::standard_normal(&mut rng));
        let a = DVector::from_fn(10, |i, _| (i % 2) as f64);
        let data = Dataset::new(DVector::zeros(10), a, x, OutcomeMode::Continuous).unwrap();
        let cfg = McmcConfig {
            n_burnin: 500,
            n_kept_iterations: 2000,
            thin: 2,
            ..Default::default()
        };
        let psi = run_chain(&data, &HyperPriorConfig::default(), &cfg, 0, &mut RngStream::new(10, 0))
            .unwrap()
            .psi();
        let m = psi.iter().sum::<f64>() / psi.len() as f64;
        let sd = (psi.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (psi.len() - 1) as f64).sqrt();
        assert!(m.abs() < 3.0 * sd, "mean {m} sd {sd}");
    }

    #[test]
    fn chains_are_pooled_in_order() {
        let data = toy(6, 11);
        let cfg = McmcConfig {
            n_chains: 3,
            ..short(11)
        };
        let post = run_chains(&data, &HyperPriorConfig::default(), &cfg, 0).unwrap();
        assert_eq!(post.len(), 60);
        let ids: Vec<_> = post.chains.iter().map(|c| c.diagnostics.chain).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_ne!(post.chains[0].psi(), post.chains[1].psi());
    }
}
