//! On-demand verification checks against independent references: dense
//! matrix inversion, the two-subject closed form, the joint-distribution
//! test, deep-tail sampling and the probit marginalization identity.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geweke::{geweke_joint_test, joint_test_hyperpriors, GewekeConfig};
use crate::model::{
    cond_beta, cond_delta, cond_mu, ConditionalMvn, Dataset, HyperPriorConfig, OutcomeMode, ParamState,
};
use crate::probit::sample_latent_z;
use crate::random::{open_uniform, sample_truncnorm, standard_normal, RngStream};
use crate::special::{log_norm_cdf, norm_cdf};

/// Deliberate defects for exercising the checks themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Flip the sign of the Δ conditional mean before comparison.
    DeltaMeanSign,
    /// Run the sampler without the truncated-proposal Hastings correction.
    NoQCorrection,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta-mean-sign" => Ok(Fault::DeltaMeanSign),
            "no-q-correction" => Ok(Fault::NoQCorrection),
            _ => Err(Error::invalid("fault", format!("unknown fault '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub secs: f64,
}

pub const CHECK_NAMES: [&str; 5] = ["conditionals", "grid", "geweke", "tails", "probit"];

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("fixture matrix is invertible")
}

fn dense_kernel(x: &DMatrix<f64>, l: f64, eta: f64) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = (0..x.ncols()).map(|p| (x[(i, p)] - x[(j, p)]).powi(2)).sum();
        eta * eta * (-0.5 * d2 / (l * l)).exp()
    })
}

/// Means and covariances of the three conditionals by explicit inversion of
/// the displayed precision matrices.
pub struct DenseConditionals {
    pub beta: (DVector<f64>, DMatrix<f64>),
    pub mu: (DVector<f64>, DMatrix<f64>),
    pub delta: (DVector<f64>, DMatrix<f64>),
}

pub fn dense_conditionals(state: &ParamState<f64>, data: &Dataset<f64>, hp: &HyperPriorConfig) -> DenseConditionals {
    let n = data.n();
    let x = data.design();
    let k_mu_inv = dense_inverse(&dense_kernel(data.x(), state.l_mu, state.eta_mu));
    let k_delta_inv = dense_inverse(&dense_kernel(data.x(), state.l_delta, state.eta_delta));
    let s2 = state.noise_variance(data);
    let y = state.response(data);

    let q = x.ncols();
    let beta_cov = dense_inverse(&(x.transpose() * &k_mu_inv * x + DMatrix::identity(q, q) / hp.sigma2_beta));
    let beta_mean = &beta_cov * x.transpose() * &k_mu_inv * &state.mu;

    let mu_cov = dense_inverse(&(&k_mu_inv + DMatrix::identity(n, n) / s2));
    let r = y - state.delta.component_mul(data.a());
    let mu_mean = &mu_cov * (r / s2 + &k_mu_inv * x * &state.beta);

    let d_a = DMatrix::from_diagonal(data.a());
    let delta_cov = dense_inverse(&(&k_delta_inv + &d_a * &d_a / s2));
    let delta_mean = &delta_cov * &d_a * (y - &state.mu) / s2;

    DenseConditionals {
        beta: (beta_mean, beta_cov),
        mu: (mu_mean, mu_cov),
        delta: (delta_mean, delta_cov),
    }
}

/// A random small fixture with moderate kernel parameters.
pub fn random_fixture(n: usize, rng: &mut RngStream) -> (Dataset<f64>, ParamState<f64>) {
    let p = 2;
    let x = DMatrix::from_fn(n, p, |_, _| standard_normal(rng));
    let a = loop {
        let a = DVector::from_fn(n, |_, _| f64::from(u8::from(open_uniform(rng) < 0.5)));
        if a.sum() > 0.0 && a.sum() < n as f64 {
            break a;
        }
    };
    let y = DVector::from_fn(n, |_, _| standard_normal(rng));
    let data = Dataset::new(y, a, x, OutcomeMode::Continuous).expect("valid fixture");
    let mut s = ParamState::initial(&data);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * open_uniform(rng);
    s.l_mu = u(0.3, 1.5);
    s.eta_mu = u(0.5, 2.0);
    s.l_delta = u(0.3, 1.5);
    s.eta_delta = u(0.5, 2.0);
    s.sigma2 = u(0.2, 2.0);
    s.mu = DVector::from_fn(n, |_, _| standard_normal(rng));
    s.delta = DVector::from_fn(n, |_, _| standard_normal(rng));
    s.beta = DVector::from_fn(p + 1, |_, _| standard_normal(rng));
    (data, s)
}

fn compare(name: &str, got: &ConditionalMvn<f64>, want: &(DVector<f64>, DMatrix<f64>)) -> Result<f64> {
    let m = rel_err(
        &DMatrix::from_column_slice(got.mean.len(), 1, got.mean.as_slice()),
        &DMatrix::from_column_slice(want.0.len(), 1, want.0.as_slice()),
    );
    let c = rel_err(&got.covariance()?, &want.1);
    if !m.is_finite() || !c.is_finite() {
        return Err(Error::invalid("oracle", format!("{name}: non-finite comparison")));
    }
    Ok(m.max(c))
}

/// Largest relative error of the factored conditionals against dense
/// inversion over `fixtures` random states at n ∈ {2,3,4,5}.
pub fn check_conditionals(fixtures: usize, seed: u64, fault: Option<Fault>) -> Result<f64> {
    let mut rng = RngStream::new(seed, 0);
    let hp = HyperPriorConfig::default();
    let mut worst: f64 = 0.0;
    for f in 0..fixtures {
        let (data, state) = random_fixture(2 + f % 4, &mut rng);
        let dense = dense_conditionals(&state, &data, &hp);
        let mut delta = cond_delta(&state, &data, &hp)?;
        if fault == Some(Fault::DeltaMeanSign) {
            delta.mean = -delta.mean;
        }
        worst = worst
            .max(compare("beta", &cond_beta(&state, &data, &hp)?, &dense.beta)?)
            .max(compare("mu", &cond_mu(&state, &data, &hp)?, &dense.mu)?)
            .max(compare("delta", &delta, &dense.delta)?);
    }
    Ok(worst)
}

/// The two-subject (treated, control) Δ covariance in closed form.
pub fn two_subject_covariance(sigma2: f64, eta: f64, l: f64, d: f64) -> [[f64; 2]; 2] {
    let e2 = eta * eta;
    let shrink = sigma2 * e2 / (sigma2 + e2);
    let r = d / l;
    let off = shrink * (-0.5 * r * r).exp();
    let v2 = e2 * (1.0 - e2 / (sigma2 + e2) * (-r * r).exp());
    [[shrink, off], [off, v2]]
}

pub struct GridResult {
    pub max_rel_err: f64,
    pub monotone: bool,
}

/// Compares cond_delta with the closed form on a 100-triple × 50-distance
/// grid and checks Var(Δ₂) rises strictly with distance on every line.
pub fn check_two_subject_grid(fault: Option<Fault>) -> Result<GridResult> {
    let sigma2s = [0.1, 0.5, 1.0, 2.0, 5.0];
    let etas = [0.5, 1.0, 2.0, 3.0];
    let ls = [0.2, 0.5, 1.0, 2.0, 5.0];
    let hp = HyperPriorConfig::default();
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for &s2 in &sigma2s {
        for &eta in &etas {
            for &l in &ls {
                let mut last = f64::NEG_INFINITY;
                for k in 0..50 {
                    let d = l * (0.05 + 3.95 * k as f64 / 49.0);
                    let x = DMatrix::from_column_slice(2, 1, &[0.0, d]);
                    let data = Dataset::new(
                        DVector::from_vec(vec![0.7, -0.2]),
                        DVector::from_vec(vec![1.0, 0.0]),
                        x,
                        OutcomeMode::Continuous,
                    )?;
                    let mut s = ParamState::initial(&data);
                    s.sigma2 = s2;
                    s.eta_delta = eta;
                    s.l_delta = l;
                    let mut c = cond_delta(&s, &data, &hp)?;
                    if fault == Some(Fault::DeltaMeanSign) {
                        c.mean = -c.mean;
                    }
                    let cov = c.covariance()?;
                    let want = two_subject_covariance(s2, eta, l, d);
                    let want_m = DMatrix::from_fn(2, 2, |i, j| want[i][j]);
                    worst = worst.max(rel_err(&cov, &want_m));
                    // Closed-form mean: only subject 1 is observed.
                    let r = 0.7 - s.mu[0];
                    let m1 = want[0][0] * r / s2;
                    let m2 = want[1][0] * r / s2;
                    let mean_err = ((c.mean[0] - m1).abs()).max((c.mean[1] - m2).abs()) / m1.abs().max(1e-300);
                    worst = worst.max(mean_err);
                    if !(cov[(1, 1)] > last) {
                        monotone = false;
                    }
                    last = cov[(1, 1)];
                }
            }
        }
    }
    Ok(GridResult {
        max_rel_err: worst,
        monotone,
    })
}

/// Deep-tail behaviour of the truncated sampler and log Φ.
pub fn check_tails(seed: u64) -> Result<Vec<String>> {
    let mut failures = Vec::new();
    let mut rng = RngStream::new(seed, 0);
    let m = 20_000;
    let draws: Vec<f64> = (0..m)
        .map(|_| sample_truncnorm(-40.0, 1.0, 0.0, f64::INFINITY, &mut rng))
        .collect::<Result<_>>()?;
    let mean = draws.iter().sum::<f64>() / m as f64;
    // E[X | X > 0] for N(−40, 1): inverse Mills ratio minus 40.
    if draws.iter().any(|v| !(*v > 0.0 && *v < 0.6)) || (mean - 0.024_968_847).abs() > 0.003 {
        failures.push(format!("lower-truncated N(-40,1): mean {mean}"));
    }
    for (x, want) in [(-40.0, -804.608_442_013_753_8), (-5.0, -15.064_998_393_988_726)] {
        let got = log_norm_cdf(x);
        if ((got - want) / want).abs() > 1e-12 {
            failures.push(format!("log Phi({x}) = {got}, expected {want}"));
        }
    }
    let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let data = Dataset::new(
        DVector::from_vec(vec![0.0, 1.0]),
        DVector::from_vec(vec![1.0, 0.0]),
        x,
        OutcomeMode::Binary,
    )?;
    let mut s: ParamState<f64> = ParamState::initial(&data);
    s.mu = DVector::from_vec(vec![50.0, -50.0]);
    for _ in 0..1000 {
        let z = sample_latent_z(&s, &data, &mut rng)?;
        if !(z[0].is_finite() && z[0] < 0.0 && z[1].is_finite() && z[1] > 0.0) {
            failures.push(format!("latent draw against the mean not finite/signed: {z:?}"));
            break;
        }
    }
    Ok(failures)
}

pub struct ProbitIdentity {
    /// Largest |rate − Φ| in binomial standard errors.
    pub max_rate_se: f64,
    /// Largest |mean z − (μ + Δa)| in standard errors after redrawing z given y.
    pub max_latent_se: f64,
}

/// Simulates (z, y) from the augmented hierarchy at fixed (μ, Δ, a) and
/// compares the y-rate with Φ(μ + Δa); also redraws z | y with the sampler's
/// latent step, whose marginal must return to N(μ + Δa, 1).
pub fn check_probit_identity(fixtures: usize, draws: usize, seed: u64) -> Result<ProbitIdentity> {
    let mut rng = RngStream::new(seed, 0);
    let mut max_rate: f64 = 0.0;
    let mut max_latent: f64 = 0.0;
    let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    for _ in 0..fixtures {
        let mu = 1.5 * standard_normal(&mut rng);
        let delta = standard_normal(&mut rng);
        let a = f64::from(u8::from(open_uniform(&mut rng) < 0.5));
        let m = mu + delta * a;
        let p = norm_cdf(m);
        // Subject 0 carries the fixture; subject 1 only keeps both arms present.
        let arms = DVector::from_vec(vec![a, 1.0 - a]);
        let by_outcome = [0.0, 1.0].map(|y| {
            Dataset::new(DVector::from_vec(vec![y, 0.0]), arms.clone(), x.clone(), OutcomeMode::Binary)
        });
        let [d0, d1] = by_outcome;
        let (d0, d1) = (d0?, d1?);
        let mut s = ParamState::initial(&d0);
        s.mu[0] = mu;
        s.delta[0] = delta;
        let mut ones = 0usize;
        let mut z_sum = 0.0;
        for _ in 0..draws {
            let positive = m + standard_normal(&mut rng) > 0.0;
            ones += usize::from(positive);
            let data = if positive { &d1 } else { &d0 };
            z_sum += sample_latent_z(&s, data, &mut rng)?[0];
        }
        let rate = ones as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        max_rate = max_rate.max((rate - p).abs() / se);
        max_latent = max_latent.max((z_sum / draws as f64 - m).abs() * (draws as f64).sqrt());
    }
    Ok(ProbitIdentity {
        max_rate_se: max_rate,
        max_latent_se: max_latent,
    })
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let started = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
        secs: started.elapsed().as_secs_f64(),
    }
}

/// Runs one named check of the suite.
pub fn run_check(name: &str, seed: u64, fault: Option<Fault>) -> Result<CheckOutcome> {
    let outcome = match name {
        "conditionals" => timed(name, || {
            let e = check_conditionals(50, seed, fault)?;
            Ok((e <= 1e-9, format!("max relative error {e:.3e} (tolerance 1e-9)")))
        }),
        "grid" => timed(name, || {
            let g = check_two_subject_grid(fault)?;
            Ok((
                g.max_rel_err <= 1e-10 && g.monotone,
                format!("max relative error {:.3e}, monotone {}", g.max_rel_err, g.monotone),
            ))
        }),
        "geweke" => timed(name, || {
            let config = GewekeConfig {
                q_correction: fault != Some(Fault::NoQCorrection),
                ..Default::default()
            };
            let report = geweke_joint_test(&config, &joint_test_hyperpriors(), &mut RngStream::new(seed, 0))?;
            let zs: Vec<String> = report.stats.iter().map(|s| format!("{}={:.2}", s.name, s.z)).collect();
            Ok((report.passes(4.0), format!("z: {}", zs.join(" "))))
        }),
        "tails" => timed(name, || {
            let failures = check_tails(seed)?;
            Ok((failures.is_empty(), if failures.is_empty() { "ok".into() } else { failures.join("; ") }))
        }),
        "probit" => timed(name, || {
            let r = check_probit_identity(20, 100_000, seed)?;
            Ok((
                r.max_rate_se <= 3.0 && r.max_latent_se <= 4.0,
                format!(
                    "max rate deviation {:.2} SE, max latent mean deviation {:.2} SE",
                    r.max_rate_se, r.max_latent_se
                ),
            ))
        }),
        other => {
            return Err(Error::invalid(
                "check",
                format!("unknown check '{other}'; known: {}", CHECK_NAMES.join(", ")),
            ))
        }
    };
    Ok(outcome)
}
