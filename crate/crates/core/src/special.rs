//! Standard-normal CDF, log-CDF and quantile functions that stay accurate far
//! into the tails.

use libm::erfc;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this point `log_norm_cdf` switches to the asymptotic expansion.
const ASYMPTOTIC_CUTOFF: f64 = -20.0;

#[inline]
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// log Φ(x), finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 3.0 {
        // Φ(x) = 1 − Φ(−x); Φ(−x) is tiny, so log1p keeps full precision.
        return (-0.5 * erfc(x / std::f64::consts::SQRT_2)).ln_1p();
    }
    if x > ASYMPTOTIC_CUTOFF {
        return (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln();
    }
    // Mills-ratio series: Φ(x) ≈ φ(x)/(−x) · Σ (−1)^k (2k−1)!! / x^{2k}.
    let inv2 = 1.0 / (x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..8 {
        term *= -((2 * k - 1) as f64) * inv2;
        sum += term;
    }
    norm_logpdf(x) - (-x).ln() + sum.ln()
}

// Acklam's rational approximation, used only as a starting point for Newton
// refinement against `log_norm_cdf`.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

/// Rough Φ⁻¹ for the lower half, from log p (p ≤ ½).
fn lower_quantile_guess(log_p: f64) -> f64 {
    const LOG_P_LOW: f64 = -3.719_339_371_288_014_4; // ln 0.02425
    if log_p < LOG_P_LOW {
        let q = (-2.0 * log_p).sqrt();
        let (c, d) = (ACKLAM_C, ACKLAM_D);
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else {
        let q = log_p.exp() - 0.5;
        let r = q * q;
        let (a, b) = (ACKLAM_A, ACKLAM_B);
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    }
}

/// Φ⁻¹(exp(log_p)) for log_p ≤ ln ½.
fn lower_quantile(log_p: f64) -> f64 {
    let mut x = lower_quantile_guess(log_p);
    for _ in 0..6 {
        let lc = log_norm_cdf(x);
        let f = lc - log_p;
        let slope = (norm_logpdf(x) - lc).exp();
        if !(slope.is_finite() && slope > 0.0) {
            break;
        }
        let step = f / slope;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Φ⁻¹(p).
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p <= 0.5 {
        lower_quantile(p.ln())
    } else {
        -lower_quantile((-p).ln_1p())
    }
}

/// Φ⁻¹(exp(log_p)), usable when `exp(log_p)` underflows.
pub fn norm_quantile_log(log_p: f64) -> f64 {
    if log_p.is_nan() || log_p > 0.0 {
        return f64::NAN;
    }
    if log_p == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if log_p <= -std::f64::consts::LN_2 {
        lower_quantile(log_p)
    } else {
        -lower_quantile(log1m_exp(log_p))
    }
}

/// log(Φ(b) − Φ(a)) for a < b, computed without cancellation in either tail.
pub fn log_norm_interval(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        // Reflect into the lower tail.
        return log_norm_interval(-b, -a);
    }
    let lb = log_norm_cdf(b);
    let la = log_norm_cdf(a);
    lb + log1m_exp(la - lb)
}

/// log(1 − exp(x)) for x ≤ 0.
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// log(exp(a) + exp(b)).
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}
