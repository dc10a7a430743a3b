//! Gaussian process regression over an arbitrary covariance.
//!
//! Everything runs through a Cholesky factor of `K_y = K(X, X) + sigma_n^2 I`.
//! When the plain factorization fails a diagonal jitter is added, starting at
//! `1e-10 * trace/n` and growing tenfold up to `1e-4 * trace/n`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::SpaceTimePoint;
use crate::error::{Error, Result};
use crate::kernels::{gram_stationary, KernelSpec};

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Anything that produces cross-covariance matrices between point sets.
pub trait Covariance {
    fn cov(&self, a: &[SpaceTimePoint], b: &[SpaceTimePoint]) -> Result<DMatrix<f64>>;
}

impl Covariance for KernelSpec {
    fn cov(&self, a: &[SpaceTimePoint], b: &[SpaceTimePoint]) -> Result<DMatrix<f64>> {
        gram_stationary(a, b, self)
    }
}

impl<C: Covariance + ?Sized> Covariance for &C {
    fn cov(&self, a: &[SpaceTimePoint], b: &[SpaceTimePoint]) -> Result<DMatrix<f64>> {
        (**self).cov(a, b)
    }
}

/// Cholesky factor of a symmetric matrix plus the jitter it needed.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L^-1 b`
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut x);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Factorizes `k`, or `k + jitter I` under the escalation policy when the
/// plain factorization fails. The jitter scale is
/// the larger of `trace/n` and `floor`, or 1 when neither is positive.
pub fn factorize_with_floor(k: &DMatrix<f64>, floor: f64) -> Result<JitteredCholesky> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cannot factorize a {}x{} matrix",
            n,
            k.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cannot factorize an empty matrix".into()));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    if let Some(chol) = Cholesky::new(k.clone()) {
        return Ok(JitteredCholesky { chol, jitter: 0.0 });
    }
    let mut scale = (k.trace() / n as f64).max(floor);
    if !(scale > 0.0) {
        scale = 1.0;
    }
    let mut rel = JITTER_START;
    let mut jitter = rel * scale;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        jitter = rel * scale;
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            log::debug!("cholesky needed jitter {jitter:e} (n = {n})");
            return Ok(JitteredCholesky { chol, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter })
}

pub fn factorize(k: &DMatrix<f64>) -> Result<JitteredCholesky> {
    factorize_with_floor(k, 0.0)
}

/// Predictive mean and covariance at a set of test inputs.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    /// Raw posterior covariance, possibly with tiny negative diagonal entries.
    pub cov: DMatrix<f64>,
}

impl Prediction {
    /// Diagonal of the covariance clamped at zero.
    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0)).collect()
    }
}

/// A GP conditioned on observations, expressed in terms of gram matrices.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    factor: JitteredCholesky,
    alpha: DVector<f64>,
    y: DVector<f64>,
    noise_var: f64,
}

impl GpPosterior {
    /// Conditions on `y` observed with covariance `k + noise_var I`.
    pub fn fit(k: &DMatrix<f64>, y: &[f64], noise_var: f64) -> Result<Self> {
        if k.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "gram is {}x{} but there are {} observations",
                k.nrows(),
                k.ncols(),
                y.len()
            )));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {noise_var}"
            )));
        }
        let mut ky = k.clone();
        for i in 0..ky.nrows() {
            ky[(i, i)] += noise_var;
        }
        let factor = factorize(&ky)?;
        let y = DVector::from_column_slice(y);
        let alpha = factor.solve_vec(&y);
        Ok(GpPosterior {
            factor,
            alpha,
            y,
            noise_var,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn factor(&self) -> &JitteredCholesky {
        &self.factor
    }

    /// `K_y^-1 y`
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `-1/2 y' K_y^-1 y - 1/2 log|K_y| - n/2 log 2 pi`
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        -0.5 * self.y.dot(&self.alpha) - 0.5 * self.factor.log_det() - 0.5 * n * (2.0 * PI).ln()
    }

    /// `K(X*, X) K_y^-1 y` for a cross-gram with one row per test input.
    pub fn predict_mean(&self, k_star: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_cross(k_star)?;
        Ok(k_star * &self.alpha)
    }

    /// Mean and covariance given the cross-gram `K(X*, X)` and prior `K(X*, X*)`.
    pub fn predict(&self, k_star: &DMatrix<f64>, k_star_star: &DMatrix<f64>) -> Result<Prediction> {
        self.check_cross(k_star)?;
        if k_star_star.nrows() != k_star.nrows() || k_star_star.ncols() != k_star.nrows() {
            return Err(Error::DimensionMismatch(
                "prior covariance does not match the test inputs".into(),
            ));
        }
        let mean = k_star * &self.alpha;
        let v = self.factor.solve_lower(&k_star.transpose());
        let mut cov = k_star_star - v.tr_mul(&v);
        // exact symmetry
        let m = cov.nrows();
        for i in 0..m {
            for j in 0..i {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }
        Ok(Prediction { mean, cov })
    }

    fn check_cross(&self, k_star: &DMatrix<f64>) -> Result<()> {
        if k_star.ncols() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "cross-gram has {} columns for {} training points",
                k_star.ncols(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// A GP over space-time points with a pluggable covariance.
pub struct GpModel<C: Covariance> {
    pub train_points: Vec<SpaceTimePoint>,
    pub train_values: Vec<f64>,
    pub kernel: C,
    pub noise_var: f64,
    posterior: GpPosterior,
}

impl<C: Covariance> GpModel<C> {
    pub fn new(
        train_points: Vec<SpaceTimePoint>,
        train_values: Vec<f64>,
        kernel: C,
        noise_var: f64,
    ) -> Result<Self> {
        let k = kernel.cov(&train_points, &train_points)?;
        let posterior = GpPosterior::fit(&k, &train_values, noise_var)?;
        Ok(GpModel {
            train_points,
            train_values,
            kernel,
            noise_var,
            posterior,
        })
    }

    pub fn posterior(&self) -> &GpPosterior {
        &self.posterior
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.posterior.log_marginal_likelihood()
    }

    pub fn predict(&self, x_star: &[SpaceTimePoint]) -> Result<Prediction> {
        let ks = self.kernel.cov(x_star, &self.train_points)?;
        let kss = self.kernel.cov(x_star, x_star)?;
        self.posterior.predict(&ks, &kss)
    }

    /// Log-determinant of the covariance of `remaining` after conditioning on
    /// noisy observations at `conditioned_on`.
    pub fn posterior_entropy(
        &self,
        remaining: &[SpaceTimePoint],
        conditioned_on: &[SpaceTimePoint],
    ) -> Result<f64> {
        let krr = self.kernel.cov(remaining, remaining)?;
        if conditioned_on.is_empty() {
            return posterior_entropy(&krr, None);
        }
        let krc = self.kernel.cov(remaining, conditioned_on)?;
        let mut kcc = self.kernel.cov(conditioned_on, conditioned_on)?;
        for i in 0..kcc.nrows() {
            kcc[(i, i)] += self.noise_var;
        }
        posterior_entropy(&krr, Some((&krc, &kcc)))
    }
}

/// `log |K_rr - K_rc K_cc^-1 K_cr|`, the Gaussian entropy of `r` given `c` up
/// to additive constants. `conditioning` carries `(K_rc, K_cc)` with any
/// observation noise already on the diagonal of `K_cc`.
///
/// A degenerate posterior is floored with jitter relative to the prior
/// variance of `r`; if even that fails the call errors.
pub fn posterior_entropy(
    k_rr: &DMatrix<f64>,
    conditioning: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<f64> {
    let n = k_rr.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let prior_scale = (k_rr.trace() / n as f64).max(f64::MIN_POSITIVE);
    let post = match conditioning {
        None => k_rr.clone(),
        Some((k_rc, k_cc)) => {
            if k_rc.nrows() != n || k_rc.ncols() != k_cc.nrows() {
                return Err(Error::DimensionMismatch(
                    "conditioning blocks do not line up".into(),
                ));
            }
            let f = factorize(k_cc)?;
            let v = f.solve_lower(&k_rc.transpose());
            let mut p = k_rr - v.tr_mul(&v);
            for i in 0..n {
                for j in 0..i {
                    let s = 0.5 * (p[(i, j)] + p[(j, i)]);
                    p[(i, j)] = s;
                    p[(j, i)] = s;
                }
            }
            p
        }
    };
    // scale jitter by the prior, not the (possibly vanishing) posterior trace
    if post.trace() / n as f64 > JITTER_START * prior_scale {
        return Ok(factorize(&post)?.log_det());
    }
    let mut floored = post;
    for i in 0..n {
        floored[(i, i)] = floored[(i, i)].max(0.0);
    }
    Ok(factorize_with_floor(&floored, prior_scale)?.log_det())
}
