use gp_causal::kernel::{chol_factor, JitterPolicy};
use gp_causal::mcmc::{run_chains, McmcConfig};
use gp_causal::model::{cond_beta, cond_delta, cond_mu, log_joint, HyperPriorConfig, OutcomeMode, ParamState};
use gp_causal::probit::risk_difference_draw;
use gp_causal::random::{mvn_logpdf, open_uniform, sample_truncnorm, standard_normal, RngStream};
use gp_causal::Dataset;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn covariates(n: usize, p: usize, rng: &mut RngStream) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| standard_normal(rng))
}

fn treatment(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| (i % 2) as f64)
}

fn short_config(seed: u64) -> McmcConfig {
    McmcConfig {
        n_burnin: 300,
        n_kept_iterations: 600,
        thin: 3,
        n_chains: 2,
        seed,
        ..Default::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn binary_null_effect_centres_near_zero() {
    let mut rng = RngStream::new(5, 1);
    let n = 60;
    let x = covariates(n, 2, &mut rng);
    let y = DVector::from_fn(n, |_, _| f64::from(u8::from(open_uniform(&mut rng) < 0.5)));
    let data = Dataset::new(y, treatment(n), x, OutcomeMode::Binary).unwrap();
    let post = run_chains(&data, &HyperPriorConfig::default(), &short_config(3), 0).unwrap();
    let psi = post.psi();
    assert!(mean(&psi).abs() < 0.15, "mean rd {}", mean(&psi));
    for (_, d) in post.draws() {
        let r = d.risk.unwrap();
        assert!((-1.0..=1.0).contains(&r.risk_difference));
        assert!((r.p1 - r.p0 - r.risk_difference).abs() < 1e-15);
        assert_eq!(d.psi, r.risk_difference);
    }
}

#[test]
fn all_ones_outcome_pushes_both_risks_up() {
    let mut rng = RngStream::new(6, 1);
    let n = 30;
    let x = covariates(n, 1, &mut rng);
    let data = Dataset::new(DVector::from_element(n, 1.0), treatment(n), x, OutcomeMode::Binary).unwrap();
    let post = run_chains(&data, &HyperPriorConfig::default(), &short_config(4), 0).unwrap();
    let p1: Vec<f64> = post.draws().map(|(_, d)| d.risk.unwrap().p1).collect();
    let p0: Vec<f64> = post.draws().map(|(_, d)| d.risk.unwrap().p0).collect();
    assert!(mean(&p1) > 0.8 && mean(&p0) > 0.8, "p1 {} p0 {}", mean(&p1), mean(&p0));
    for (_, d) in post.draws() {
        assert!(d.state.z.as_ref().unwrap().iter().all(|z| *z > 0.0));
    }
}

#[test]
fn zero_effect_gives_equal_risks() {
    let mut rng = RngStream::new(7, 1);
    let n = 12;
    let x = covariates(n, 1, &mut rng);
    let y = DVector::from_fn(n, |i, _| (i % 3 == 0) as u8 as f64);
    let data = Dataset::new(y, treatment(n), x, OutcomeMode::Binary).unwrap();
    let mut s = ParamState::initial(&data);
    s.mu = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
    let r = risk_difference_draw(&s);
    assert_eq!(r.p1, r.p0);
    assert_eq!(r.risk_difference, 0.0);
}

fn continuous_fixture(seed: u64) -> (Dataset, ParamState<f64>) {
    let mut rng = RngStream::new(seed, 2);
    let n = 7;
    let x = DMatrix::from_fn(n, 1, |i, _| -1.5 + 0.5 * i as f64);
    let y = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
    let data = Dataset::new(y, treatment(n), x, OutcomeMode::Continuous).unwrap();
    let mut s = ParamState::initial(&data);
    s.mu = DVector::from_fn(n, |_, _| 0.3 * standard_normal(&mut rng));
    s.delta = DVector::from_fn(n, |_, _| 0.3 * standard_normal(&mut rng));
    s.beta = DVector::from_fn(2, |_, _| standard_normal(&mut rng));
    s.l_mu = 1.3;
    s.eta_mu = 0.8;
    s.l_delta = 0.9;
    s.eta_delta = 1.2;
    s.sigma2 = 0.4;
    (data, s)
}

// For a Gaussian full conditional, log p(v'|rest) − log p(v|rest) equals the
// change in the log joint when only v moves.
#[test]
fn block_conditionals_agree_with_log_joint() {
    let hp = HyperPriorConfig::default();
    for seed in 0..5 {
        let (data, s) = continuous_fixture(seed);
        let mut rng = RngStream::new(seed, 3);
        for block in 0..3 {
            let cond = match block {
                0 => cond_beta(&s, &data, &hp),
                1 => cond_mu(&s, &data, &hp),
                _ => cond_delta(&s, &data, &hp),
            }
            .unwrap();
            let cov = chol_factor(cond.covariance().unwrap(), &JitterPolicy::default()).unwrap();
            let mut moved = s.clone();
            let target = match block {
                0 => &mut moved.beta,
                1 => &mut moved.mu,
                _ => &mut moved.delta,
            };
            for v in target.iter_mut() {
                *v += 0.2 * standard_normal(&mut rng);
            }
            let (old_v, new_v) = match block {
                0 => (&s.beta, &moved.beta),
                1 => (&s.mu, &moved.mu),
                _ => (&s.delta, &moved.delta),
            };
            let cond_diff = mvn_logpdf(new_v, &cond.mean, &cov).unwrap() - mvn_logpdf(old_v, &cond.mean, &cov).unwrap();
            let joint_diff = log_joint(&moved, &data, &hp).unwrap() - log_joint(&s, &data, &hp).unwrap();
            assert!(
                (cond_diff - joint_diff).abs() < 1e-7 * (1.0 + joint_diff.abs()),
                "seed {seed} block {block}: {cond_diff} vs {joint_diff}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncated_draws_stay_in_bounds(mean in -30.0f64..30.0, sd in 0.01f64..5.0, lo in -10.0f64..10.0, width in 1e-6f64..20.0, seed in 0u64..1000) {
        let mut rng = RngStream::new(seed, 0);
        let hi = lo + width;
        for _ in 0..20 {
            let x = sample_truncnorm(mean, sd, lo, hi, &mut rng).unwrap();
            prop_assert!(x > lo && x < hi);
        }
        let upper = sample_truncnorm(mean, sd, lo, f64::INFINITY, &mut rng).unwrap();
        prop_assert!(upper > lo && upper.is_finite());
    }

    #[test]
    fn risk_difference_is_bounded(mu in proptest::collection::vec(-8.0f64..8.0, 2..20), shift in -10.0f64..10.0) {
        let n = mu.len();
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y = DVector::from_fn(n, |i, _| ((i / 2) % 2) as f64);
        let a = treatment(n);
        let data = Dataset::new(y, a, x, OutcomeMode::Binary).unwrap();
        let mut s = ParamState::initial(&data);
        s.mu = DVector::from_vec(mu);
        s.delta = DVector::from_element(n, shift);
        let r = risk_difference_draw(&s);
        prop_assert!((0.0..=1.0).contains(&r.p1) && (0.0..=1.0).contains(&r.p0));
        prop_assert!((-1.0..=1.0).contains(&r.risk_difference));
        prop_assert!(r.risk_difference * shift >= 0.0);
    }
}
