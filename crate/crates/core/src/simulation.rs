//! Data-generating processes, the replication loop and performance metrics.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::prepare_covariates;
use crate::error::{Error, Result};
use crate::estimands::{mean_sd, summarize_posterior};
use crate::glm::{ols_effect, probit_risk_difference, IntervalEstimate};
use crate::mcmc::{run_chains, McmcConfig};
use crate::model::{Dataset, HyperPriorConfig, OutcomeMode};
use crate::random::{open_uniform, standard_normal, RngStream};
use crate::special::norm_cdf;

/// Population risk differences under the binary families, each a fixed-seed
/// Monte Carlo average of Φ(f(X,1)) − Φ(f(X,0)) over 10⁶ draws of the
/// covariate law (numpy PCG64, seed 20240601; MC standard error below 6e-4).
pub const Y1B_TRUE_RD_SOME: f64 = 0.279_586_209_075_446_35;
pub const Y1B_TRUE_RD_SUBSTANTIAL: f64 = 0.282_893_611_876_820_94;
pub const Y2B_TRUE_RD_SOME: f64 = -0.145_242_086_859_872_78;
pub const Y2B_TRUE_RD_SUBSTANTIAL: f64 = -0.201_856_941_149_419_66;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LinearY1,
    NonlinearY2,
    Nethery,
    BinaryY1b,
    BinaryY2b,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::LinearY1,
        Family::NonlinearY2,
        Family::Nethery,
        Family::BinaryY1b,
        Family::BinaryY2b,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::LinearY1 => "linear-y1",
            Family::NonlinearY2 => "nonlinear-y2",
            Family::Nethery => "nethery",
            Family::BinaryY1b => "binary-y1b",
            Family::BinaryY2b => "binary-y2b",
        }
    }

    pub fn mode(self) -> OutcomeMode {
        match self {
            Family::BinaryY1b | Family::BinaryY2b => OutcomeMode::Binary,
            _ => OutcomeMode::Continuous,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| Error::UnknownFamily {
                given: s.to_string(),
                legal: Family::ALL.map(Family::name).join(", "),
            })
    }
}

/// Treated-arm covariate law (X₁ ~ N(μ₁,1), X₂ ~ N(μ₂,1), X₃ ~ Bern(p));
/// controls use (0, 2, .4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub mu1: f64,
    pub mu2: f64,
    pub p: f64,
}

impl Overlap {
    pub const SOME: Overlap = Overlap {
        mu1: 1.0,
        mu2: 2.0,
        p: 0.5,
    };
    pub const SUBSTANTIAL: Overlap = Overlap {
        mu1: 1.0,
        mu2: 3.0,
        p: 0.6,
    };
}

/// A simulated data set with its true effect and raw covariates.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset<f64>,
    /// Covariates before standardization.
    pub raw_x: DMatrix<f64>,
    pub truth: f64,
    pub propensity: Option<DVector<f64>>,
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    f64::from(u8::from(open_uniform(rng) < p))
}

/// Bernoulli(½) treatment, redrawn until both arms are present.
fn assign_treatment<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let a = DVector::from_fn(n, |_, _| bernoulli(0.5, rng));
        let treated = a.sum() as usize;
        if treated > 0 && treated < n {
            return a;
        }
    }
}

fn overlap_covariates<R: Rng + ?Sized>(a: &DVector<f64>, o: &Overlap, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(a.len(), 3);
    for i in 0..a.len() {
        let t = a[i] == 1.0;
        x[(i, 0)] = if t { o.mu1 } else { 0.0 } + standard_normal(rng);
        x[(i, 1)] = if t { o.mu2 } else { 2.0 } + standard_normal(rng);
        x[(i, 2)] = bernoulli(if t { o.p } else { 0.4 }, rng);
    }
    x
}

fn build(y: DVector<f64>, a: DVector<f64>, raw_x: DMatrix<f64>, mode: OutcomeMode) -> Result<Dataset<f64>> {
    let (x, _) = prepare_covariates(&raw_x, &[])?;
    Dataset::new(y, a, x, mode)
}

fn linear_mean(x: &DMatrix<f64>, i: usize, a: f64) -> f64 {
    1.0 - 2.0 * x[(i, 0)] + x[(i, 1)] - 1.2 * x[(i, 2)] + 2.0 * a
}

fn nonlinear_mean(x: &DMatrix<f64>, i: usize, a: f64) -> f64 {
    let (x1, x2, x3) = (x[(i, 0)], x[(i, 1)], x[(i, 2)]);
    -3.0 - 2.5 * x1 + 2.0 * x1 * x1 * a + (1.4 - x2 * a).exp() + x2 * x3 - 1.2 * x3 - 2.0 * x3 * a + 2.0 * a
}

fn y1b_index(x: &DMatrix<f64>, i: usize, a: f64) -> f64 {
    -1.0 - 2.0 * x[(i, 0)] + x[(i, 1)] - 1.2 * x[(i, 2)] + 2.0 * a
}

/// The binary Y₂ display carries treatment coefficient 1 (not 2).
fn y2b_index(x: &DMatrix<f64>, i: usize, a: f64) -> f64 {
    let (x1, x2, x3) = (x[(i, 0)], x[(i, 1)], x[(i, 2)]);
    -3.0 - 2.5 * x1 + 2.0 * x1 * x1 * a + (1.4 - x2 * a).exp() + x2 * x3 - 1.2 * x3 - 2.0 * x3 * a + a
}

/// Y ~ N(1 − 2X₁ + X₂ − 1.2X₃ + 2A, 1); the true effect is 2.
pub fn gen_linear<R: Rng + ?Sized>(o: &Overlap, n: usize, rng: &mut R) -> Result<Simulated> {
    let a = assign_treatment(n, rng);
    let raw_x = overlap_covariates(&a, o, rng);
    let y = DVector::from_fn(n, |i, _| linear_mean(&raw_x, i, a[i]) + standard_normal(rng));
    Ok(Simulated {
        data: build(y, a, raw_x.clone(), OutcomeMode::Continuous)?,
        raw_x,
        truth: 2.0,
        propensity: None,
    })
}

/// Individual effect of the nonlinear surface: 2X₁² + e^{1.4−X₂} − e^{1.4} − 2X₃ + 2.
pub fn nonlinear_effect(x1: f64, x2: f64, x3: f64) -> f64 {
    2.0 * x1 * x1 + (1.4 - x2).exp() - 1.4f64.exp() - 2.0 * x3 + 2.0
}

/// Nonlinear surface; the truth is the sample mean of individual effects.
pub fn gen_nonlinear<R: Rng + ?Sized>(o: &Overlap, n: usize, rng: &mut R) -> Result<Simulated> {
    let a = assign_treatment(n, rng);
    let raw_x = overlap_covariates(&a, o, rng);
    let y = DVector::from_fn(n, |i, _| nonlinear_mean(&raw_x, i, a[i]) + standard_normal(rng));
    let truth = (0..n)
        .map(|i| nonlinear_effect(raw_x[(i, 0)], raw_x[(i, 1)], raw_x[(i, 2)]))
        .sum::<f64>()
        / n as f64;
    Ok(Simulated {
        data: build(y, a, raw_x.clone(), OutcomeMode::Continuous)?,
        raw_x,
        truth,
        propensity: None,
    })
}

fn normal_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// P(A = 1 | X) for equal arm sizes, from the arm-conditional densities.
pub fn nethery_propensity(c: f64, x1: f64, x2: f64) -> f64 {
    let bern = |p: f64| if x1 == 1.0 { p } else { 1.0 - p };
    let t = normal_density(x2, 2.0 + c, 1.25 + 0.1 * c) * bern(0.5);
    let u = normal_density(x2, 1.0, 1.0) * bern(0.4);
    t / (t + u)
}

pub fn nethery_y0(x2: f64) -> f64 {
    -1.5 * x2
}

pub fn nethery_y1(x1: f64, x2: f64) -> f64 {
    -3.0 / (1.0 + (-10.0 * (x2 - 1.0)).exp()) + 0.25 * x1 - x1 * x2
}

/// Half treated; noiseless potential outcomes for everyone. The truth is the
/// sample mean of Y(1) − Y(0).
pub fn gen_nethery<R: Rng + ?Sized>(c: f64, n: usize, rng: &mut R) -> Result<Simulated> {
    if !(c >= 0.0) {
        return Err(Error::invalid("c", "must be nonnegative"));
    }
    let n_treated = n / 2;
    let a = DVector::from_fn(n, |i, _| f64::from(u8::from(i < n_treated)));
    let mut raw_x = DMatrix::zeros(n, 2);
    for i in 0..n {
        if a[i] == 1.0 {
            raw_x[(i, 0)] = bernoulli(0.5, rng);
            raw_x[(i, 1)] = 2.0 + c + (1.25 + 0.1 * c) * standard_normal(rng);
        } else {
            raw_x[(i, 0)] = bernoulli(0.4, rng);
            raw_x[(i, 1)] = 1.0 + standard_normal(rng);
        }
    }
    let y1 = DVector::from_fn(n, |i, _| nethery_y1(raw_x[(i, 0)], raw_x[(i, 1)]));
    let y0 = DVector::from_fn(n, |i, _| nethery_y0(raw_x[(i, 1)]));
    let truth = (&y1 - &y0).mean();
    let y = DVector::from_fn(n, |i, _| if a[i] == 1.0 { y1[i] } else { y0[i] });
    let propensity = DVector::from_fn(n, |i, _| nethery_propensity(c, raw_x[(i, 0)], raw_x[(i, 1)]));
    Ok(Simulated {
        data: build(y, a, raw_x.clone(), OutcomeMode::Continuous)?,
        raw_x,
        truth,
        propensity: Some(propensity),
    })
}

/// Population risk difference for a binary family, frozen constants for the
/// two named overlap settings.
pub fn binary_truth(family: Family, o: &Overlap) -> Option<f64> {
    match (family, *o == Overlap::SOME, *o == Overlap::SUBSTANTIAL) {
        (Family::BinaryY1b, true, _) => Some(Y1B_TRUE_RD_SOME),
        (Family::BinaryY1b, _, true) => Some(Y1B_TRUE_RD_SUBSTANTIAL),
        (Family::BinaryY2b, true, _) => Some(Y2B_TRUE_RD_SOME),
        (Family::BinaryY2b, _, true) => Some(Y2B_TRUE_RD_SUBSTANTIAL),
        _ => None,
    }
}

/// Monte Carlo population risk difference over `draws` covariate draws,
/// used for overlap settings without a frozen constant.
pub fn binary_truth_monte_carlo<R: Rng + ?Sized>(family: Family, o: &Overlap, draws: usize, rng: &mut R) -> Result<f64> {
    let index = match family {
        Family::BinaryY1b => y1b_index,
        Family::BinaryY2b => y2b_index,
        _ => return Err(Error::invalid("family", "not a binary family")),
    };
    let a = DVector::from_fn(draws, |_, _| bernoulli(0.5, rng));
    let x = overlap_covariates(&a, o, rng);
    let total: f64 = (0..draws)
        .map(|i| norm_cdf(index(&x, i, 1.0)) - norm_cdf(index(&x, i, 0.0)))
        .sum();
    Ok(total / draws as f64)
}

/// Y ~ Bernoulli(Φ(f(X, A))) for Y1B or Y2B.
pub fn gen_binary<R: Rng + ?Sized>(family: Family, o: &Overlap, n: usize, truth: f64, rng: &mut R) -> Result<Simulated> {
    let index = match family {
        Family::BinaryY1b => y1b_index,
        Family::BinaryY2b => y2b_index,
        _ => return Err(Error::invalid("family", "not a binary family")),
    };
    let a = assign_treatment(n, rng);
    let raw_x = overlap_covariates(&a, o, rng);
    let y = DVector::from_fn(n, |i, _| bernoulli(norm_cdf(index(&raw_x, i, a[i])), rng));
    Ok(Simulated {
        data: build(y, a, raw_x.clone(), OutcomeMode::Binary)?,
        raw_x,
        truth,
        propensity: None,
    })
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: Family,
    pub overlap: Overlap,
    /// Overlap parameter of the nethery family.
    pub c: f64,
    pub n: usize,
    pub replications: usize,
    pub mcmc: McmcConfig,
    pub hyperpriors: HyperPriorConfig,
    pub seed: u64,
    /// Also fit the regression baseline.
    pub baseline: bool,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            family: Family::LinearY1,
            overlap: Overlap::SOME,
            c: 0.0,
            n: 500,
            replications: 1000,
            mcmc: McmcConfig::default(),
            hyperpriors: HyperPriorConfig::default(),
            seed: 1,
            baseline: true,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::invalid("n", "need at least 4 subjects"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications", "must be positive"));
        }
        if !(self.overlap.p > 0.0 && self.overlap.p < 1.0) {
            return Err(Error::invalid("p", "must lie in (0, 1)"));
        }
        if self.family == Family::Nethery && !(self.c >= 0.0) {
            return Err(Error::invalid("c", "must be nonnegative"));
        }
        self.mcmc.validate()?;
        self.hyperpriors.validate()
    }

    /// Population truth for binary families, fixed across replications.
    fn population_truth(&self) -> Result<f64> {
        match binary_truth(self.family, &self.overlap) {
            Some(t) => Ok(t),
            None => {
                let mut rng = RngStream::new(self.seed, u64::MAX);
                binary_truth_monte_carlo(self.family, &self.overlap, 1_000_000, &mut rng)
            }
        }
    }

    /// Data stream of replication k; disjoint from every chain stream.
    fn data_stream(&self, k: usize) -> RngStream {
        RngStream::new(self.seed, ((k as u64) << 16) | 0xFFFF)
    }

    pub fn generate(&self, k: usize, binary_truth: f64) -> Result<Simulated> {
        let mut rng = self.data_stream(k);
        match self.family {
            Family::LinearY1 => gen_linear(&self.overlap, self.n, &mut rng),
            Family::NonlinearY2 => gen_nonlinear(&self.overlap, self.n, &mut rng),
            Family::Nethery => gen_nethery(self.c, self.n, &mut rng),
            f => gen_binary(f, &self.overlap, self.n, binary_truth, &mut rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub truth: f64,
    pub gp: Option<IntervalEstimate>,
    pub baseline: Option<IntervalEstimate>,
    pub error: Option<String>,
}

/// Aggregate performance of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub ate: f64,
    pub abs_bias: f64,
    pub pct_bias: f64,
    pub sd_bar: f64,
    pub se: f64,
    pub coverage: f64,
    pub valid: usize,
    pub failed: usize,
}

/// Metrics over (truth, estimate) pairs; pure and order-independent up to
/// floating-point summation.
pub fn compute_metrics(method: &str, pairs: &[(f64, IntervalEstimate)], failed: usize) -> MethodMetrics {
    let k = pairs.len() as f64;
    let psi: Vec<f64> = pairs.iter().map(|(_, e)| e.estimate).collect();
    let (ate, se) = mean_sd(&psi);
    MethodMetrics {
        method: method.to_string(),
        ate,
        abs_bias: pairs.iter().map(|(t, e)| (e.estimate - t).abs()).sum::<f64>() / k,
        pct_bias: pairs.iter().map(|(t, e)| (e.estimate - t).abs() / t.abs() * 100.0).sum::<f64>() / k,
        sd_bar: pairs.iter().map(|(_, e)| e.sd).sum::<f64>() / k,
        se,
        coverage: pairs.iter().filter(|(t, e)| e.covers(*t)).count() as f64 / k,
        valid: pairs.len(),
        failed,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub spec: ScenarioSpec,
    pub methods: Vec<MethodMetrics>,
    pub rows: Vec<ReplicationRow>,
    /// False when more than 2% of GP fits failed.
    pub valid: bool,
    pub wall_time_secs: f64,
}

impl ReplicationReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Nethery scenarios report mean absolute bias in place of the ATE.
    pub fn reports_abs_bias(&self) -> bool {
        self.spec.family == Family::Nethery
    }
}

pub const GP_METHOD: &str = "GP";
pub const GLM_METHOD: &str = "GLM";

fn run_one(spec: &ScenarioSpec, k: usize, binary_truth: f64) -> ReplicationRow {
    let sim = match spec.generate(k, binary_truth) {
        Ok(s) => s,
        Err(e) => {
            return ReplicationRow {
                replication: k,
                truth: f64::NAN,
                gp: None,
                baseline: None,
                error: Some(e.to_string()),
            }
        }
    };
    let gp = run_chains(&sim.data, &spec.hyperpriors, &spec.mcmc, k as u64)
        .and_then(|draws| summarize_posterior(&draws))
        .map(IntervalEstimate::from);
    let baseline = spec.baseline.then(|| match spec.family.mode() {
        OutcomeMode::Continuous => ols_effect(&sim.data),
        OutcomeMode::Binary => probit_risk_difference(&sim.data),
    });
    let (gp, error) = match gp {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ReplicationRow {
        replication: k,
        truth: sim.truth,
        gp,
        baseline: baseline.and_then(|b| b.ok()),
        error,
    }
}

/// Generates and fits every replication (in parallel), then aggregates.
pub fn run_replications(spec: &ScenarioSpec) -> Result<ReplicationReport> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let truth = match spec.family.mode() {
        OutcomeMode::Binary => spec.population_truth()?,
        OutcomeMode::Continuous => f64::NAN,
    };
    let rows: Vec<ReplicationRow> = (0..spec.replications)
        .into_par_iter()
        .map(|k| run_one(spec, k, truth))
        .collect();
    let gp_pairs: Vec<_> = rows.iter().filter_map(|r| r.gp.map(|e| (r.truth, e))).collect();
    let gp_failed = rows.len() - gp_pairs.len();
    let mut methods = Vec::new();
    if !gp_pairs.is_empty() {
        methods.push(compute_metrics(GP_METHOD, &gp_pairs, gp_failed));
    }
    if spec.baseline {
        let pairs: Vec<_> = rows.iter().filter_map(|r| r.baseline.map(|e| (r.truth, e))).collect();
        if !pairs.is_empty() {
            methods.push(compute_metrics(GLM_METHOD, &pairs, rows.len() - pairs.len()));
        }
    }
    Ok(ReplicationReport {
        spec: spec.clone(),
        methods,
        valid: gp_failed * 50 <= rows.len(),
        rows,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
