//! Model data, parameter state, log joint posterior, and the closed-form
//! Gaussian conditionals for β, μ and Δ.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{chol_factor, se_correlation, squared_distances, CovarianceRoot, JitterPolicy, PdMatrix};
use crate::random::{gamma_logpdf, invgamma_logpdf};
use crate::scalar::Real;
use crate::special::LN_SQRT_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeMode {
    Continuous,
    Binary,
}

impl std::fmt::Display for OutcomeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutcomeMode::Continuous => "continuous",
            OutcomeMode::Binary => "binary",
        })
    }
}

/// Outcomes, treatment indicators and covariates for `n` subjects.
#[derive(Debug, Clone)]
pub struct Dataset<T: Real> {
    y: DVector<T>,
    a: DVector<T>,
    x: DMatrix<T>,
    design: DMatrix<T>,
    sq_dist: DMatrix<T>,
    treated: Vec<usize>,
    mode: OutcomeMode,
}

impl<T: Real> Dataset<T> {
    /// `a` must hold only 0 and 1; `x` is n×P and enters the kernel as given.
    pub fn new(y: DVector<T>, a: DVector<T>, x: DMatrix<T>, mode: OutcomeMode) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 subjects, got {n}")));
        }
        if a.len() != n {
            return Err(Error::DimensionMismatch {
                what: "treatment vector",
                expected: n,
                got: a.len(),
            });
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "covariate rows",
                expected: n,
                got: x.nrows(),
            });
        }
        if let Some(index) = y.iter().position(|v| !v.is_finite_real()) {
            return Err(Error::NonFinite { what: "outcome", index });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite_real()) {
            return Err(Error::NonFinite { what: "covariates", index });
        }
        let mut treated = Vec::new();
        for (i, ai) in a.iter().enumerate() {
            if *ai == T::one() {
                treated.push(i);
            } else if *ai != T::zero() {
                return Err(Error::InvalidData(format!("treatment at row {i} is not 0/1")));
            }
        }
        if treated.is_empty() || treated.len() == n {
            return Err(Error::SingleArm {
                treated: treated.len(),
                n,
            });
        }
        if mode == OutcomeMode::Binary {
            if let Some(i) = y.iter().position(|v| *v != T::zero() && *v != T::one()) {
                return Err(Error::InvalidData(format!("binary outcome at row {i} is not 0/1")));
            }
        }
        let mut design = DMatrix::from_element(n, x.ncols() + 1, T::one());
        design.view_mut((0, 1), (n, x.ncols())).copy_from(&x);
        let sq_dist = squared_distances(&x, &x)?;
        Ok(Self {
            y,
            a,
            x,
            design,
            sq_dist,
            treated,
            mode,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of covariates P.
    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn a(&self) -> &DVector<T> {
        &self.a
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    /// `[1 | X]`, n×(P+1).
    pub fn design(&self) -> &DMatrix<T> {
        &self.design
    }

    pub fn sq_dist(&self) -> &DMatrix<T> {
        &self.sq_dist
    }

    /// Indices of treated subjects, ascending.
    pub fn treated(&self) -> &[usize] {
        &self.treated
    }

    pub fn mode(&self) -> OutcomeMode {
        self.mode
    }

    /// Same covariates and treatment, new outcome vector.
    pub fn with_outcome(&self, y: DVector<T>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "outcome",
                expected: self.n(),
                got: y.len(),
            });
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn logpdf(&self, x: f64) -> f64 {
        gamma_logpdf(x, self.shape, self.rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaPrior {
    pub fn logpdf(&self, x: f64) -> f64 {
        invgamma_logpdf(x, self.shape, self.scale)
    }
}

/// Proposal standard deviations τ for the five Metropolis-updated scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub l_mu: f64,
    pub eta_mu: f64,
    pub l_delta: f64,
    pub eta_delta: f64,
    pub sigma2: f64,
}

impl ProposalScales {
    pub fn uniform(tau: f64) -> Self {
        Self {
            l_mu: tau,
            eta_mu: tau,
            l_delta: tau,
            eta_delta: tau,
            sigma2: tau,
        }
    }

    pub fn get(&self, p: ScalarParam) -> f64 {
        match p {
            ScalarParam::LMu => self.l_mu,
            ScalarParam::EtaMu => self.eta_mu,
            ScalarParam::LDelta => self.l_delta,
            ScalarParam::EtaDelta => self.eta_delta,
            ScalarParam::Sigma2 => self.sigma2,
        }
    }

    pub fn set(&mut self, p: ScalarParam, v: f64) {
        match p {
            ScalarParam::LMu => self.l_mu = v,
            ScalarParam::EtaMu => self.eta_mu = v,
            ScalarParam::LDelta => self.l_delta = v,
            ScalarParam::EtaDelta => self.eta_delta = v,
            ScalarParam::Sigma2 => self.sigma2 = v,
        }
    }
}

/// Fixed prior constants, proposal scales and the factorization jitter policy.
///
/// Gamma priors are shape–rate; the inverse-gamma prior is shape–scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPriorConfig {
    pub sigma2_beta: f64,
    pub l_mu: GammaPrior,
    pub eta_mu: GammaPrior,
    pub l_delta: GammaPrior,
    pub eta_delta: GammaPrior,
    pub sigma2: InvGammaPrior,
    pub proposal: ProposalScales,
    pub jitter: JitterPolicy,
}

impl Default for HyperPriorConfig {
    fn default() -> Self {
        let g = GammaPrior {
            shape: 2.0,
            rate: 1.0,
        };
        Self {
            sigma2_beta: 100.0,
            l_mu: g,
            eta_mu: g,
            l_delta: g,
            eta_delta: g,
            sigma2: InvGammaPrior {
                shape: 2.0,
                scale: 1.0,
            },
            proposal: ProposalScales::uniform(0.3),
            jitter: JitterPolicy::default(),
        }
    }
}

impl HyperPriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma2_beta", self.sigma2_beta),
            ("l_mu.shape", self.l_mu.shape),
            ("l_mu.rate", self.l_mu.rate),
            ("eta_mu.shape", self.eta_mu.shape),
            ("eta_mu.rate", self.eta_mu.rate),
            ("l_delta.shape", self.l_delta.shape),
            ("l_delta.rate", self.l_delta.rate),
            ("eta_delta.shape", self.eta_delta.shape),
            ("eta_delta.rate", self.eta_delta.rate),
            ("sigma2.shape", self.sigma2.shape),
            ("sigma2.scale", self.sigma2.scale),
            ("tau.l_mu", self.proposal.l_mu),
            ("tau.eta_mu", self.proposal.eta_mu),
            ("tau.l_delta", self.proposal.l_delta),
            ("tau.eta_delta", self.proposal.eta_delta),
            ("tau.sigma2", self.proposal.sigma2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("hyperprior", format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn gamma_prior(&self, p: ScalarParam) -> Option<&GammaPrior> {
        match p {
            ScalarParam::LMu => Some(&self.l_mu),
            ScalarParam::EtaMu => Some(&self.eta_mu),
            ScalarParam::LDelta => Some(&self.l_delta),
            ScalarParam::EtaDelta => Some(&self.eta_delta),
            ScalarParam::Sigma2 => None,
        }
    }

    /// Log prior density of one scalar hyperparameter.
    pub fn scalar_log_prior(&self, p: ScalarParam, x: f64) -> f64 {
        match self.gamma_prior(p) {
            Some(g) => g.logpdf(x),
            None => self.sigma2.logpdf(x),
        }
    }
}

/// The Metropolis-updated scalar hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarParam {
    LMu,
    EtaMu,
    LDelta,
    EtaDelta,
    Sigma2,
}

impl ScalarParam {
    pub const ALL: [ScalarParam; 5] = [
        ScalarParam::LMu,
        ScalarParam::EtaMu,
        ScalarParam::LDelta,
        ScalarParam::EtaDelta,
        ScalarParam::Sigma2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScalarParam::LMu => "l_mu",
            ScalarParam::EtaMu => "eta_mu",
            ScalarParam::LDelta => "l_delta",
            ScalarParam::EtaDelta => "eta_delta",
            ScalarParam::Sigma2 => "sigma2",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One state of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState<T: Real> {
    pub mu: DVector<T>,
    pub delta: DVector<T>,
    pub beta: DVector<T>,
    pub l_mu: T,
    pub eta_mu: T,
    pub l_delta: T,
    pub eta_delta: T,
    pub sigma2: T,
    /// Latent probit variables; present only for binary outcomes.
    pub z: Option<DVector<T>>,
}

impl<T: Real> ParamState<T> {
    /// β = 0, μ = ȳ (0 for binary), Δ = 0, l = η = 1, σ² = sample variance of
    /// y (1 for binary). Binary latents start at ±½ matching the sign of y.
    pub fn initial(data: &Dataset<T>) -> Self {
        let n = data.n();
        let nf = T::c(n as f64);
        let binary = data.mode() == OutcomeMode::Binary;
        let ybar = data.y().sum() / nf;
        let var = data
            .y()
            .iter()
            .map(|v| (*v - ybar) * (*v - ybar))
            .fold(T::zero(), |a, b| a + b)
            / T::c((n - 1) as f64);
        let sigma2 = if binary || !(var > T::c(1e-8)) { T::one() } else { var };
        let z = binary.then(|| data.y().map(|v| if v == T::one() { T::c(0.5) } else { T::c(-0.5) }));
        Self {
            mu: DVector::from_element(n, if binary { T::zero() } else { ybar }),
            delta: DVector::zeros(n),
            beta: DVector::zeros(data.n_covariates() + 1),
            l_mu: T::one(),
            eta_mu: T::one(),
            l_delta: T::one(),
            eta_delta: T::one(),
            sigma2,
            z,
        }
    }

    pub fn scalar(&self, p: ScalarParam) -> T {
        match p {
            ScalarParam::LMu => self.l_mu,
            ScalarParam::EtaMu => self.eta_mu,
            ScalarParam::LDelta => self.l_delta,
            ScalarParam::EtaDelta => self.eta_delta,
            ScalarParam::Sigma2 => self.sigma2,
        }
    }

    pub fn set_scalar(&mut self, p: ScalarParam, v: T) {
        match p {
            ScalarParam::LMu => self.l_mu = v,
            ScalarParam::EtaMu => self.eta_mu = v,
            ScalarParam::LDelta => self.l_delta = v,
            ScalarParam::EtaDelta => self.eta_delta = v,
            ScalarParam::Sigma2 => self.sigma2 = v,
        }
    }

    /// Response the Gaussian layer sees: y, or the latent z in binary mode.
    pub fn response<'a>(&'a self, data: &'a Dataset<T>) -> &'a DVector<T> {
        match (&self.z, data.mode()) {
            (Some(z), OutcomeMode::Binary) => z,
            _ => data.y(),
        }
    }

    /// Residual variance seen by the Gaussian layer (1 in binary mode).
    pub fn noise_variance(&self, data: &Dataset<T>) -> T {
        match data.mode() {
            OutcomeMode::Binary => T::one(),
            OutcomeMode::Continuous => self.sigma2,
        }
    }

    /// μ + Δ∘a.
    pub fn linear_predictor(&self, data: &Dataset<T>) -> DVector<T> {
        &self.mu + self.delta.component_mul(data.a())
    }

    /// ψ = mean of Δ over subjects.
    pub fn psi(&self) -> T {
        self.delta.mean()
    }

    pub fn check_dims(&self, data: &Dataset<T>) -> Result<()> {
        let n = data.n();
        for (what, len, want) in [
            ("mu", self.mu.len(), n),
            ("delta", self.delta.len(), n),
            ("beta", self.beta.len(), data.n_covariates() + 1),
        ] {
            if len != want {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: want,
                    got: len,
                });
            }
        }
        match (data.mode(), &self.z) {
            (OutcomeMode::Binary, Some(z)) if z.len() == n => Ok(()),
            (OutcomeMode::Binary, _) => Err(Error::InvalidData("binary mode requires latent z of length n".into())),
            (OutcomeMode::Continuous, None) => Ok(()),
            (OutcomeMode::Continuous, Some(_)) => {
                Err(Error::InvalidData("latent z present in continuous mode".into()))
            }
        }
    }
}

/// Factor of a squared-exponential GP covariance η²·(C(l) + jI).
///
/// The correlation matrix is factored once per length scale; changing the
/// amplitude rescales the factor without refactoring.
#[derive(Debug, Clone)]
pub struct GpFactor<T: Real> {
    corr: Arc<PdMatrix<T>>,
    length_scale: T,
    amplitude: T,
}

impl<T: Real> GpFactor<T> {
    pub fn new(sq_dist: &DMatrix<T>, length_scale: T, amplitude: T, jitter: &JitterPolicy) -> Result<Self> {
        if !(length_scale > T::zero()) || !(amplitude > T::zero()) {
            return Err(Error::invalid("kernel", "length scale and amplitude must be positive"));
        }
        let corr = chol_factor(se_correlation(sq_dist, length_scale), jitter)?;
        Ok(Self {
            corr: Arc::new(corr),
            length_scale,
            amplitude,
        })
    }

    pub fn with_amplitude(&self, amplitude: T) -> Self {
        Self {
            corr: Arc::clone(&self.corr),
            length_scale: self.length_scale,
            amplitude,
        }
    }

    pub fn length_scale(&self) -> T {
        self.length_scale
    }

    pub fn amplitude(&self) -> T {
        self.amplitude
    }

    pub fn dim(&self) -> usize {
        self.corr.dim()
    }

    /// Diagonal jitter in covariance units.
    pub fn jitter(&self) -> T {
        self.corr.jitter() * self.amplitude * self.amplitude
    }

    /// The (jittered) covariance matrix K.
    pub fn covariance(&self) -> DMatrix<T> {
        self.corr.jittered() * (self.amplitude * self.amplitude)
    }

    pub fn logdet(&self) -> T {
        T::c(2.0 * self.dim() as f64) * self.amplitude.ln() + self.corr.logdet()
    }

    /// K^{-1/2}·v with the lower factor, i.e. L⁻¹v/η.
    pub fn whiten(&self, v: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.corr.whiten(v)? / self.amplitude)
    }

    pub fn whiten_matrix(&self, b: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(self.corr.solve_lower(b)? / self.amplitude)
    }

    /// η·L·z, a draw of N(0, K) when z is standard normal.
    pub fn apply_root(&self, z: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.corr.mul_lower(z)? * self.amplitude)
    }

    /// log N(v; 0, K).
    pub fn log_density(&self, v: &DVector<T>) -> Result<T> {
        let w = self.whiten(v)?;
        let n = T::c(self.dim() as f64);
        Ok(-(n * T::c(LN_SQRT_2PI)) - T::c(0.5) * (self.logdet() + w.dot(&w)))
    }
}

/// Posterior-update square root for a GP observed with Gaussian noise on a
/// subset of coordinates.
///
/// With prior draw f = η·L·z₁ and noisy observation e = f_obs + σ·z₂, the map
/// (z₁, z₂) ↦ f − K[:,obs]·M⁻¹·e (M = K[obs,obs] + σ²I) has covariance
/// (K⁻¹ + Sᵀ S/σ²)⁻¹, the conditional covariance.
#[derive(Debug, Clone)]
pub struct GpUpdateRoot<T: Real> {
    prior: GpFactor<T>,
    observed: Vec<usize>,
    k_obs: DMatrix<T>,
    gain: PdMatrix<T>,
    noise_sd: T,
}

impl<T: Real> GpUpdateRoot<T> {
    fn new(prior: GpFactor<T>, observed: Vec<usize>, noise_var: T, jitter: &JitterPolicy) -> Result<Self> {
        let k = prior.covariance();
        let n = k.nrows();
        let m = observed.len();
        let k_obs = DMatrix::from_fn(n, m, |i, j| k[(i, observed[j])]);
        let mut gain = DMatrix::from_fn(m, m, |i, j| k_obs[(observed[i], j)]);
        for i in 0..m {
            gain[(i, i)] += noise_var;
        }
        let gain = chol_factor(gain, jitter)?;
        Ok(Self {
            prior,
            observed,
            k_obs,
            gain,
            noise_sd: noise_var.sqrt(),
        })
    }

    /// K[:,obs]·M⁻¹·r_obs.
    fn gain_apply(&self, r_obs: &DVector<T>) -> Result<DVector<T>> {
        Ok(&self.k_obs * self.gain.solve_vec(r_obs)?)
    }

    fn select(&self, v: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.observed.len(), self.observed.iter().map(|&i| v[i]))
    }
}

impl<T: Real> CovarianceRoot<T> for GpUpdateRoot<T> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn noise_dim(&self) -> usize {
        self.prior.dim() + self.observed.len()
    }

    fn apply(&self, z: &DVector<T>) -> Result<DVector<T>> {
        let n = self.prior.dim();
        if z.len() != self.noise_dim() {
            return Err(Error::DimensionMismatch {
                what: "noise vector",
                expected: self.noise_dim(),
                got: z.len(),
            });
        }
        let f = self.prior.apply_root(&z.rows(0, n).into_owned())?;
        let e = self.select(&f) + z.rows(n, self.observed.len()) * self.noise_sd;
        Ok(&f - self.gain_apply(&e)?)
    }

    fn covariance(&self) -> Result<DMatrix<T>> {
        let k = self.prior.covariance();
        let solved = self.gain.solve(&self.k_obs.transpose())?;
        let mut cov = &k - &self.k_obs * solved;
        cov = (&cov + cov.transpose()) * T::c(0.5);
        Ok(cov)
    }
}

/// Square root of a covariance given as the inverse of a factored precision.
#[derive(Debug, Clone)]
pub struct InversePrecisionRoot<T: Real> {
    precision: PdMatrix<T>,
}

impl<T: Real> CovarianceRoot<T> for InversePrecisionRoot<T> {
    fn dim(&self) -> usize {
        self.precision.dim()
    }

    fn noise_dim(&self) -> usize {
        self.precision.dim()
    }

    /// L_P⁻ᵀ·z, whose covariance is P⁻¹.
    fn apply(&self, z: &DVector<T>) -> Result<DVector<T>> {
        self.precision.unwhiten_transpose(z)
    }

    fn covariance(&self) -> Result<DMatrix<T>> {
        let d = self.precision.dim();
        self.precision.solve(&DMatrix::identity(d, d))
    }
}

#[derive(Debug, Clone)]
pub enum ConditionalRoot<T: Real> {
    InversePrecision(InversePrecisionRoot<T>),
    GpUpdate(GpUpdateRoot<T>),
}

impl<T: Real> CovarianceRoot<T> for ConditionalRoot<T> {
    fn dim(&self) -> usize {
        match self {
            ConditionalRoot::InversePrecision(r) => r.dim(),
            ConditionalRoot::GpUpdate(r) => r.dim(),
        }
    }

    fn noise_dim(&self) -> usize {
        match self {
            ConditionalRoot::InversePrecision(r) => r.noise_dim(),
            ConditionalRoot::GpUpdate(r) => r.noise_dim(),
        }
    }

    fn apply(&self, z: &DVector<T>) -> Result<DVector<T>> {
        match self {
            ConditionalRoot::InversePrecision(r) => r.apply(z),
            ConditionalRoot::GpUpdate(r) => r.apply(z),
        }
    }

    fn covariance(&self) -> Result<DMatrix<T>> {
        match self {
            ConditionalRoot::InversePrecision(r) => r.covariance(),
            ConditionalRoot::GpUpdate(r) => r.covariance(),
        }
    }
}

/// A multivariate normal conditional: mean plus covariance square root.
#[derive(Debug, Clone)]
pub struct ConditionalMvn<T: Real> {
    pub mean: DVector<T>,
    pub root: ConditionalRoot<T>,
}

impl<T: Real> ConditionalMvn<T> {
    pub fn covariance(&self) -> Result<DMatrix<T>> {
        self.root.covariance()
    }
}

/// β | μ: precision XᵀK_μ⁻¹X + I/σ²_β, mean precision⁻¹·XᵀK_μ⁻¹μ.
pub fn cond_beta_with<T: Real>(
    mu_gp: &GpFactor<T>,
    state: &ParamState<T>,
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
) -> Result<ConditionalMvn<T>> {
    let w = mu_gp.whiten_matrix(data.design())?;
    let v = mu_gp.whiten(&state.mu)?;
    let q = w.ncols();
    let mut precision = w.transpose() * &w;
    let prior_prec = T::c(1.0 / hp.sigma2_beta);
    for i in 0..q {
        precision[(i, i)] += prior_prec;
    }
    let precision = (&precision + precision.transpose()) * T::c(0.5);
    let precision = chol_factor(precision, &hp.jitter)?;
    let mean = precision.solve_vec(&(w.transpose() * v))?;
    Ok(ConditionalMvn {
        mean,
        root: ConditionalRoot::InversePrecision(InversePrecisionRoot { precision }),
    })
}

/// μ | β, Δ: covariance (K_μ⁻¹ + I/σ²)⁻¹, mean covariance·(r/σ² + K_μ⁻¹Xβ)
/// with r = y − Δ∘a (z in binary mode, σ² = 1).
pub fn cond_mu_with<T: Real>(
    mu_gp: &GpFactor<T>,
    state: &ParamState<T>,
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
) -> Result<ConditionalMvn<T>> {
    let noise = state.noise_variance(data);
    let prior_mean = data.design() * &state.beta;
    let r = state.response(data) - state.delta.component_mul(data.a());
    let all: Vec<usize> = (0..data.n()).collect();
    let root = GpUpdateRoot::new(mu_gp.clone(), all, noise, &hp.jitter)?;
    let mean = &prior_mean + root.gain_apply(&(r - &prior_mean))?;
    Ok(ConditionalMvn {
        mean,
        root: ConditionalRoot::GpUpdate(root),
    })
}

/// Δ | μ: covariance (K_Δ⁻¹ + D_a/σ²)⁻¹, mean covariance·D_a(y − μ)/σ².
/// Only treated subjects carry likelihood information about Δ.
pub fn cond_delta_with<T: Real>(
    delta_gp: &GpFactor<T>,
    state: &ParamState<T>,
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
) -> Result<ConditionalMvn<T>> {
    let noise = state.noise_variance(data);
    let r = state.response(data) - &state.mu;
    let root = GpUpdateRoot::new(delta_gp.clone(), data.treated().to_vec(), noise, &hp.jitter)?;
    let mean = root.gain_apply(&root.select(&r))?;
    Ok(ConditionalMvn {
        mean,
        root: ConditionalRoot::GpUpdate(root),
    })
}

pub fn mu_factor<T: Real>(state: &ParamState<T>, data: &Dataset<T>, hp: &HyperPriorConfig) -> Result<GpFactor<T>> {
    GpFactor::new(data.sq_dist(), state.l_mu, state.eta_mu, &hp.jitter)
}

pub fn delta_factor<T: Real>(state: &ParamState<T>, data: &Dataset<T>, hp: &HyperPriorConfig) -> Result<GpFactor<T>> {
    GpFactor::new(data.sq_dist(), state.l_delta, state.eta_delta, &hp.jitter)
}

pub fn cond_beta<T: Real>(state: &ParamState<T>, data: &Dataset<T>, hp: &HyperPriorConfig) -> Result<ConditionalMvn<T>> {
    cond_beta_with(&mu_factor(state, data, hp)?, state, data, hp)
}

pub fn cond_mu<T: Real>(state: &ParamState<T>, data: &Dataset<T>, hp: &HyperPriorConfig) -> Result<ConditionalMvn<T>> {
    cond_mu_with(&mu_factor(state, data, hp)?, state, data, hp)
}

pub fn cond_delta<T: Real>(state: &ParamState<T>, data: &Dataset<T>, hp: &HyperPriorConfig) -> Result<ConditionalMvn<T>> {
    cond_delta_with(&delta_factor(state, data, hp)?, state, data, hp)
}

/// Additive pieces of the log joint posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogJointTerms<T> {
    pub likelihood: T,
    pub gp_mu: T,
    pub gp_delta: T,
    pub beta: T,
    pub l_mu: T,
    pub eta_mu: T,
    pub l_delta: T,
    pub eta_delta: T,
    pub sigma2: T,
}

impl<T: Real> LogJointTerms<T> {
    pub fn total(&self) -> T {
        self.likelihood
            + self.gp_mu
            + self.gp_delta
            + self.beta
            + self.l_mu
            + self.eta_mu
            + self.l_delta
            + self.eta_delta
            + self.sigma2
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("likelihood", self.likelihood),
            ("gp_mu", self.gp_mu),
            ("gp_delta", self.gp_delta),
            ("beta", self.beta),
            ("l_mu", self.l_mu),
            ("eta_mu", self.eta_mu),
            ("l_delta", self.l_delta),
            ("eta_delta", self.eta_delta),
            ("sigma2", self.sigma2),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite_real())
        .map(|(name, _)| name)
    }
}

/// Gaussian log likelihood of the response given μ, Δ and the noise variance.
///
/// Binary mode evaluates N(z; μ + Δa, 1) and returns −∞ if any latent sign
/// disagrees with its outcome.
pub fn log_likelihood<T: Real>(state: &ParamState<T>, data: &Dataset<T>, sigma2: T) -> T {
    if !(sigma2 > T::zero()) {
        return T::neg_infinity();
    }
    let resp = state.response(data);
    if data.mode() == OutcomeMode::Binary {
        let consistent = resp
            .iter()
            .zip(data.y().iter())
            .all(|(z, y)| (*z > T::zero()) == (*y == T::one()));
        if !consistent {
            return T::neg_infinity();
        }
    }
    let resid = resp - state.linear_predictor(data);
    let n = T::c(data.n() as f64);
    -(n * (T::c(LN_SQRT_2PI) + T::c(0.5) * sigma2.ln())) - T::c(0.5) * resid.dot(&resid) / sigma2
}

fn scalar_prior<T: Real>(hp: &HyperPriorConfig, p: ScalarParam, x: T) -> T {
    T::c(hp.scalar_log_prior(p, x.to_f64_lossy()))
}

/// All terms of the log joint. Out-of-support scalars give −∞ terms without
/// attempting a factorization.
pub fn log_joint_terms<T: Real>(
    state: &ParamState<T>,
    data: &Dataset<T>,
    hp: &HyperPriorConfig,
) -> Result<LogJointTerms<T>> {
    state.check_dims(data)?;
    let binary = data.mode() == OutcomeMode::Binary;
    let ninf = T::neg_infinity();
    let l_mu = scalar_prior(hp, ScalarParam::LMu, state.l_mu);
    let eta_mu = scalar_prior(hp, ScalarParam::EtaMu, state.eta_mu);
    let l_delta = scalar_prior(hp, ScalarParam::LDelta, state.l_delta);
    let eta_delta = scalar_prior(hp, ScalarParam::EtaDelta, state.eta_delta);
    let sigma2 = if binary {
        T::zero()
    } else {
        scalar_prior(hp, ScalarParam::Sigma2, state.sigma2)
    };
    let likelihood = log_likelihood(state, data, state.noise_variance(data));

    let gp_mu = if state.l_mu > T::zero() && state.eta_mu > T::zero() {
        let f = mu_factor(state, data, hp)?;
        f.log_density(&(&state.mu - data.design() * &state.beta))?
    } else {
        ninf
    };
    let gp_delta = if state.l_delta > T::zero() && state.eta_delta > T::zero() {
        delta_factor(state, data, hp)?.log_density(&state.delta)?
    } else {
        ninf
    };
    let q = state.beta.len();
    let beta = -(T::c(q as f64) * (T::c(LN_SQRT_2PI) + T::c(0.5 * hp.sigma2_beta.ln())))
        - T::c(0.5) * state.beta.dot(&state.beta) / T::c(hp.sigma2_beta);
    Ok(LogJointTerms {
        likelihood,
        gp_mu,
        gp_delta,
        beta,
        l_mu,
        eta_mu,
        l_delta,
        eta_delta,
        sigma2,
    })
}

/// Log of the unnormalized joint posterior.
pub fn log_joint<T: Real>(state: &ParamState<T>, data: &Dataset<T>, hp: &HyperPriorConfig) -> Result<T> {
    Ok(log_joint_terms(state, data, hp)?.total())
}
