//! Squared-exponential covariance matrices and Cholesky-based positive-definite
//! algebra with jitter escalation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Length scale and amplitude of a squared-exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams<T> {
    length_scale: T,
    amplitude: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(length_scale: T, amplitude: T) -> Result<Self> {
        if !(length_scale > T::zero() && length_scale.is_finite_real()) {
            return Err(Error::invalid("length_scale", "must be positive and finite"));
        }
        if !(amplitude > T::zero() && amplitude.is_finite_real()) {
            return Err(Error::invalid("amplitude", "must be positive and finite"));
        }
        Ok(Self {
            length_scale,
            amplitude,
        })
    }

    pub fn length_scale(&self) -> T {
        self.length_scale
    }

    pub fn amplitude(&self) -> T {
        self.amplitude
    }
}

fn check_finite<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<()> {
    match m.iter().position(|v| !v.is_finite_real()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Pairwise squared Euclidean distances between the rows of `x` and `x_star`.
pub fn squared_distances<T: Real>(x: &DMatrix<T>, x_star: &DMatrix<T>) -> Result<DMatrix<T>> {
    if x.ncols() != x_star.ncols() {
        return Err(Error::DimensionMismatch {
            what: "covariate columns",
            expected: x.ncols(),
            got: x_star.ncols(),
        });
    }
    check_finite(x, "covariates")?;
    check_finite(x_star, "covariates")?;
    let mut d2 = DMatrix::zeros(x.nrows(), x_star.nrows());
    for j in 0..x_star.nrows() {
        for i in 0..x.nrows() {
            let mut s = T::zero();
            for p in 0..x.ncols() {
                let d = x[(i, p)] - x_star[(j, p)];
                s += d * d;
            }
            d2[(i, j)] = s;
        }
    }
    Ok(d2)
}

/// Unit-amplitude kernel exp(−½ d²/l²) from precomputed squared distances.
pub fn se_correlation<T: Real>(sq_dist: &DMatrix<T>, length_scale: T) -> DMatrix<T> {
    let scale = T::c(-0.5) / (length_scale * length_scale);
    sq_dist.map(|d2| (d2 * scale).exp())
}

/// Squared-exponential covariance η²·exp(−½ Σ_p ((x_p − x*_p)/l)²).
pub fn se_kernel<T: Real>(
    x: &DMatrix<T>,
    x_star: &DMatrix<T>,
    params: &KernelParams<T>,
) -> Result<DMatrix<T>> {
    let d2 = squared_distances(x, x_star)?;
    let eta2 = params.amplitude * params.amplitude;
    Ok(se_correlation(&d2, params.length_scale) * eta2)
}

/// How much diagonal jitter a failed factorization may add before giving up.
///
/// Attempt 0 uses no jitter; retry `k` adds `initial_relative · growth^(k−1)`
/// times the mean diagonal.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JitterPolicy {
    pub initial_relative: f64,
    pub growth: f64,
    pub max_retries: u32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            initial_relative: 1e-10,
            growth: 10.0,
            max_retries: 6,
        }
    }
}

/// Symmetric positive-definite matrix with its lower Cholesky factor.
///
/// The factor is of `matrix + jitter·I`; every solve and determinant refers to
/// that jittered matrix.
#[derive(Debug, Clone)]
pub struct PdMatrix<T: Real> {
    matrix: DMatrix<T>,
    lower: DMatrix<T>,
    jitter: T,
}

/// Lower Cholesky factor, or `None` if a pivot is not strictly positive.
fn cholesky_lower<T: Real>(m: DMatrix<T>) -> Option<DMatrix<T>> {
    let l = nalgebra::Cholesky::new(m)?.unpack();
    let ok = l
        .diagonal()
        .iter()
        .all(|d| *d > T::zero() && d.is_finite_real());
    ok.then_some(l)
}

/// Factors `m`, escalating diagonal jitter per `policy` until it succeeds.
pub fn chol_factor<T: Real>(m: DMatrix<T>, policy: &JitterPolicy) -> Result<PdMatrix<T>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    check_finite(&m, "matrix")?;
    let n = m.nrows();
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let mut asym = T::zero();
    for j in 0..n {
        for i in (j + 1)..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if scale > T::zero() && asym / scale > T::c(1e-12) {
        return Err(Error::NotSymmetric {
            asymmetry: (asym / scale).to_f64_lossy(),
        });
    }
    let mean_diag = if n == 0 {
        T::one()
    } else {
        m.diagonal().sum() / T::c(n as f64)
    };
    let base = if mean_diag > T::zero() { mean_diag } else { scale.max(T::one()) };

    let mut jitter = T::zero();
    let mut attempt = 0u32;
    loop {
        let mut trial = m.clone();
        if jitter > T::zero() {
            for i in 0..n {
                trial[(i, i)] += jitter;
            }
        }
        if let Some(lower) = cholesky_lower(trial) {
            return Ok(PdMatrix {
                matrix: m,
                lower,
                jitter,
            });
        }
        if attempt >= policy.max_retries {
            return Err(Error::NotPositiveDefinite {
                jitter: jitter.to_f64_lossy(),
            });
        }
        attempt += 1;
        jitter = base * T::c(policy.initial_relative * policy.growth.powi(attempt as i32 - 1));
    }
}

impl<T: Real> PdMatrix<T> {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The matrix as supplied, without jitter.
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// `matrix + jitter·I`, the matrix the factor actually represents.
    pub fn jittered(&self) -> DMatrix<T> {
        let mut m = self.matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += self.jitter;
        }
        m
    }

    pub fn lower(&self) -> &DMatrix<T> {
        &self.lower
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "right-hand side rows",
                expected: self.dim(),
                got: rows,
            });
        }
        Ok(())
    }

    /// L⁻¹·B.
    pub fn solve_lower(&self, b: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_rows(b.nrows())?;
        let mut x = b.clone();
        self.lower.solve_lower_triangular_unchecked_mut(&mut x);
        Ok(x)
    }

    /// L⁻¹·v.
    pub fn whiten(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.check_rows(v.nrows())?;
        let mut x = v.clone();
        self.lower.solve_lower_triangular_unchecked_mut(&mut x);
        Ok(x)
    }

    /// L⁻ᵀ·v.
    pub fn unwhiten_transpose(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.check_rows(v.nrows())?;
        let mut x = v.clone();
        self.lower.tr_solve_lower_triangular_unchecked_mut(&mut x);
        Ok(x)
    }

    /// L·z.
    pub fn mul_lower(&self, z: &DVector<T>) -> Result<DVector<T>> {
        self.check_rows(z.nrows())?;
        Ok(&self.lower * z)
    }

    /// (M + jitter·I)⁻¹·B via two triangular solves.
    pub fn solve(&self, b: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_rows(b.nrows())?;
        let mut x = b.clone();
        self.lower.solve_lower_triangular_unchecked_mut(&mut x);
        self.lower.tr_solve_lower_triangular_unchecked_mut(&mut x);
        Ok(x)
    }

    pub fn solve_vec(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.check_rows(v.nrows())?;
        let mut x = v.clone();
        self.lower.solve_lower_triangular_unchecked_mut(&mut x);
        self.lower.tr_solve_lower_triangular_unchecked_mut(&mut x);
        Ok(x)
    }

    /// log det(M + jitter·I) = 2 Σ log Lᵢᵢ.
    pub fn logdet(&self) -> T {
        self.lower
            .diagonal()
            .iter()
            .fold(T::zero(), |acc, d| acc + d.ln())
            * T::c(2.0)
    }

    /// vᵀ(M + jitter·I)⁻¹v.
    pub fn quad_form(&self, v: &DVector<T>) -> Result<T> {
        let w = self.whiten(v)?;
        Ok(w.dot(&w))
    }
}

/// Square root `F` of a covariance `Σ = F·Fᵀ`, applied to standard-normal
/// noise of dimension `noise_dim`.
pub trait CovarianceRoot<T: Real> {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn apply(&self, z: &DVector<T>) -> Result<DVector<T>>;
    /// Dense Σ; intended for diagnostics and tests.
    fn covariance(&self) -> Result<DMatrix<T>>;
}

impl<T: Real> CovarianceRoot<T> for PdMatrix<T> {
    fn dim(&self) -> usize {
        PdMatrix::dim(self)
    }

    fn noise_dim(&self) -> usize {
        PdMatrix::dim(self)
    }

    fn apply(&self, z: &DVector<T>) -> Result<DVector<T>> {
        self.mul_lower(z)
    }

    fn covariance(&self) -> Result<DMatrix<T>> {
        Ok(&self.lower * self.lower.transpose())
    }
}
