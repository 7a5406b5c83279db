//! Dense linear-algebra helpers shared by the second step, routing and the
//! VAR benchmark.

use nalgebra::allocator::Allocator;
use nalgebra::{Cholesky, DMatrix, DVector, DefaultAllocator, Dim, OMatrix, OVector};

use crate::error::{Error, Result};

/// Relative jitter for the first retry of a failed Cholesky factorization.
pub const JITTER_SCALE: f64 = 1e-8;
/// Retries after the first failed factorization; each multiplies the jitter by 10.
pub const JITTER_RETRIES: usize = 3;

/// Column means of an observations × variables matrix.
pub fn column_means(obs: &DMatrix<f64>) -> DVector<f64> {
    obs.row_mean().transpose()
}

/// Sample covariance (denominator n − 1) of the columns of `obs`.
pub fn sample_covariance(obs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sample_cross_covariance(obs, obs)
}

/// Sample cross-covariance Cov(a, b) of two observation matrices with the
/// same rows.
pub fn sample_cross_covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs 2 observations, got {n}"
        )));
    }
    let ca = centered(a);
    let cb = centered(b);
    Ok(ca.transpose() * cb / (n as f64 - 1.0))
}

fn centered(obs: &DMatrix<f64>) -> DMatrix<f64> {
    let means = obs.row_mean();
    let mut c = obs.clone();
    for mut row in c.row_iter_mut() {
        row -= &means;
    }
    c
}

/// Correlation matrix implied by a covariance matrix. Entries involving a
/// zero-variance variable are NaN.
pub fn correlation(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        let d = sd[i] * sd[j];
        if d > 0.0 {
            cov[(i, j)] / d
        } else {
            f64::NAN
        }
    })
}

/// A Cholesky factor plus the diagonal jitter that was needed to obtain it.
pub struct SpdFactor<D: Dim>
where
    DefaultAllocator: Allocator<D, D>,
{
    pub cholesky: Cholesky<f64, D>,
    pub jitter: f64,
}

impl<D: Dim> SpdFactor<D>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    pub fn solve_vec(&self, b: &OVector<f64, D>) -> OVector<f64, D> {
        self.cholesky.solve(b)
    }
}

/// Cholesky factorization of a symmetric matrix. On failure, adds
/// `1e-8 · mean(diag)` to the diagonal and retries, growing the jitter
/// tenfold each time, up to three retries.
pub fn cholesky_with_jitter<D: Dim>(m: &OMatrix<f64, D, D>) -> Result<SpdFactor<D>>
where
    DefaultAllocator: Allocator<D, D>,
{
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cholesky", "non-finite matrix entry"));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(SpdFactor {
            cholesky: c,
            jitter: 0.0,
        });
    }
    let n = m.nrows();
    let mean_diag = (0..n).map(|i| m[(i, i)]).sum::<f64>() / n as f64;
    if mean_diag > 0.0 {
        let mut jitter = JITTER_SCALE * mean_diag;
        for _ in 0..JITTER_RETRIES {
            let mut shifted = m.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            if let Some(c) = Cholesky::new(shifted) {
                return Ok(SpdFactor {
                    cholesky: c,
                    jitter,
                });
            }
            jitter *= 10.0;
        }
    }
    Err(Error::NotPositiveDefinite {
        attempts: JITTER_RETRIES,
    })
}

/// Ratio of extreme eigenvalues of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.symmetric_eigenvalues();
    let max = eig.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let min = eig.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Ordinary least squares solution.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimum-norm least-squares solution of `x β ≈ y` through the SVD.
/// Singular values below `max(n, p) · ε · σ_max` are treated as zero.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, b| a.max(*b));
    let eps = x.nrows().max(x.ncols()) as f64 * f64::EPSILON * smax;
    let rank = svd.rank(eps);
    let coefficients = svd
        .solve(y, eps)
        .map_err(|e| Error::invalid("least squares", e.to_string()))?;
    Ok(LeastSquares {
        coefficients,
        rank,
        rank_deficient: rank < x.ncols(),
    })
}

/// Minimum-norm least squares for several right-hand sides at once.
pub fn least_squares_multi(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, b| a.max(*b));
    let eps = x.nrows().max(x.ncols()) as f64 * f64::EPSILON * smax;
    let rank = svd.rank(eps);
    let b = svd
        .solve(y, eps)
        .map_err(|e| Error::invalid("least squares", e.to_string()))?;
    Ok((b, rank))
}

/// Prepend a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}
