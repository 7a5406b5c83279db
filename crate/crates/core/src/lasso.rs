//! L1-penalized least squares by cyclic coordinate descent.
//!
//! The objective is
//!
//! ```text
//! (1/(2n)) Σ (y_i − β₀ − x_iᵀβ)² + λ ‖β‖₁
//! ```
//!
//! with features standardized internally to zero mean and unit (population)
//! variance, so `λ` is on the standardized scale. The unnormalized sum
//! `Σ(…)² + λ'‖β‖₁` corresponds to `λ' = 2nλ`. Coefficients are reported on
//! the original feature scale. Zero-variance features are dropped before
//! fitting and come back as zero coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;
pub const PATH_LENGTH: usize = 50;
pub const PATH_MIN_RATIO: f64 = 1e-3;
pub const DEFAULT_FOLDS: usize = 10;
/// Sweeps with an unchanged sign pattern before an exact active-set solve is tried.
const POLISH_AFTER: usize = 1;
/// Sign-blocked steps allowed per active-set solve.
const POLISH_STEPS: usize = 20;
/// Iterates combined per Anderson extrapolation step.
const ANDERSON_DEPTH: usize = 5;

/// Training rows and response.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.nrows() < 2 {
            return Err(Error::InsufficientData(format!(
                "design needs at least 2 rows, got {}",
                x.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("design matrix", "non-finite entry"));
        }
        Ok(DesignMatrix { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
        }
    }
}

/// Per-feature centring and scaling used during a fit. Dropped
/// (zero-variance) features have `scales[j] == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub means: DVector<f64>,
    pub scales: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub intercept: f64,
    /// Coefficients on the original feature scale.
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    pub standardization: Standardization,
    pub sweeps: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// The standardized problem. Columns of `xs` are the kept features.
///
/// The solver works on `G = XᵀX/n` and `c = Xᵀy/n` and tracks the
/// gradient `g = Xᵀr/n = c − Gβ` in place of the residual, so a coordinate
/// update costs O(p) rather than O(n).
struct Standardized {
    n: usize,
    p: usize,
    xs: DMatrix<f64>,
    kept: Vec<usize>,
    standardization: Standardization,
    y_mean: f64,
    yc: DVector<f64>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    /// `yᵀy/n` for the centred response.
    yy: f64,
}

impl Standardized {
    fn new(design: &DesignMatrix) -> Self {
        let n = design.nrows();
        let p = design.ncols();
        let nf = n as f64;
        let mut means = DVector::zeros(p);
        let mut scales = DVector::zeros(p);
        let mut kept = Vec::new();
        for j in 0..p {
            let col = design.x.column(j);
            let m = col.sum() / nf;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf;
            let sd = var.sqrt();
            means[j] = m;
            if sd > 1e-12 * m.abs().max(1.0) {
                scales[j] = sd;
                kept.push(j);
            }
        }
        let mut xs = DMatrix::zeros(n, kept.len());
        for (k, &j) in kept.iter().enumerate() {
            let (m, s) = (means[j], scales[j]);
            for i in 0..n {
                xs[(i, k)] = (design.x[(i, j)] - m) / s;
            }
        }
        let y_mean = design.y.mean();
        let yc = design.y.add_scalar(-y_mean);
        let gram = xs.tr_mul(&xs) / nf;
        let xty = xs.tr_mul(&yc) / nf;
        let yy = yc.norm_squared() / nf;
        Standardized {
            n,
            p,
            xs,
            kept,
            standardization: Standardization { means, scales },
            y_mean,
            yc,
            gram,
            xty,
            yy,
        }
    }

    fn col(&self, k: usize) -> &[f64] {
        &self.xs.as_slice()[k * self.n..(k + 1) * self.n]
    }

    fn gram_col(&self, k: usize) -> &[f64] {
        let m = self.kept.len();
        &self.gram.as_slice()[k * m..(k + 1) * m]
    }

    fn lambda_max(&self) -> f64 {
        self.xty.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `rss/(2n) + λ‖β‖₁`, with `rss/n = yᵀy/n − βᵀ(c + g)`.
    fn objective(&self, beta: &[f64], grad: &[f64], lambda: f64) -> f64 {
        let fit: f64 = beta
            .iter()
            .zip(self.xty.iter().zip(grad))
            .map(|(b, (c, g))| b * (c + g))
            .sum();
        0.5 * (self.yy - fit) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// One coordinate pass over `coords`; returns the largest coefficient change.
    fn sweep(&self, coords: &[usize], beta: &mut [f64], grad: &mut [f64], lambda: f64) -> f64 {
        let mut max_change = 0.0f64;
        for &k in coords {
            let gk = self.gram_col(k);
            let old = beta[k];
            let rho = grad[k] + gk[k] * old;
            let new = soft_threshold(rho, lambda) / gk[k];
            let delta = new - old;
            if delta != 0.0 {
                for (g, x) in grad.iter_mut().zip(gk) {
                    *g -= delta * x;
                }
                beta[k] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Coordinate descent from `beta` (standardized coefficients of kept
    /// features). Full sweeps alternate with sweeps over the nonzero set.
    fn solve(&self, lambda: f64, beta: &mut [f64], opts: &SolverOptions) -> Result<usize> {
        let mut grad = self.gradient(beta);
        let all: Vec<usize> = (0..self.kept.len()).collect();
        let mut sweeps = 0;
        let mut last_change = f64::INFINITY;
        let mut obj = self.objective(beta, &grad, lambda);
        while sweeps < opts.max_sweeps {
            let change = self.sweep(&all, beta, &mut grad, lambda);
            sweeps += 1;
            obj = self.check_descent(obj, beta, &grad, lambda);
            last_change = change;
            if change < opts.tolerance {
                return Ok(sweeps);
            }
            let active: Vec<usize> = all.iter().copied().filter(|&k| beta[k] != 0.0).collect();
            let mut signs = sign_pattern(&active, beta);
            let mut stable = 0;
            let mut polished = false;
            let mut history: Vec<Vec<f64>> = Vec::with_capacity(ANDERSON_DEPTH + 1);
            while sweeps < opts.max_sweeps {
                let change = self.sweep(&active, beta, &mut grad, lambda);
                sweeps += 1;
                obj = self.check_descent(obj, beta, &grad, lambda);
                if change < opts.tolerance {
                    break;
                }
                history.push(active.iter().map(|&k| beta[k]).collect());
                if history.len() == ANDERSON_DEPTH + 1 {
                    if let Some(new_obj) = self.extrapolate(&active, &history, beta, &mut grad, lambda) {
                        obj = new_obj;
                    }
                    history.clear();
                }
                let now = sign_pattern(&active, beta);
                if now == signs {
                    stable += 1;
                } else {
                    signs = now;
                    stable = 0;
                    polished = false;
                }
                if stable >= POLISH_AFTER && !polished {
                    polished = true;
                    if let Some(new_obj) = self.polish(beta, &mut grad, lambda) {
                        obj = new_obj;
                    }
                }
            }
        }
        Err(Error::NotConverged {
            iterations: sweeps,
            max_change: last_change,
        })
    }

    /// Anderson extrapolation of the last iterates on `active`. Accepted
    /// only if it lowers the objective.
    fn extrapolate(
        &self,
        active: &[usize],
        history: &[Vec<f64>],
        beta: &mut [f64],
        grad: &mut Vec<f64>,
        lambda: f64,
    ) -> Option<f64> {
        let depth = history.len() - 1;
        let a = active.len();
        let u = DMatrix::from_fn(a, depth, |i, j| history[j + 1][i] - history[j][i]);
        let mut utu = u.tr_mul(&u);
        let scale = utu.diagonal().max();
        if !(scale > 0.0) {
            return None;
        }
        for i in 0..depth {
            utu[(i, i)] += 1e-10 * scale;
        }
        let z = utu.cholesky()?.solve(&DVector::from_element(depth, 1.0));
        let total = z.sum();
        if !(total.is_finite() && total != 0.0) {
            return None;
        }
        let mut trial = beta.to_vec();
        for (i, &k) in active.iter().enumerate() {
            trial[k] = (0..depth).map(|j| z[j] / total * history[j + 1][i]).sum();
        }
        self.accept(trial, beta, grad, lambda)
    }

    /// Moves to `trial` if that lowers the objective.
    fn accept(&self, trial: Vec<f64>, beta: &mut [f64], grad: &mut Vec<f64>, lambda: f64) -> Option<f64> {
        let trial_grad = self.gradient(&trial);
        let trial_obj = self.objective(&trial, &trial_grad, lambda);
        if trial_obj < self.objective(beta, grad, lambda) {
            beta.copy_from_slice(&trial);
            *grad = trial_grad;
            Some(trial_obj)
        } else {
            None
        }
    }

    /// `c − Gβ`.
    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut grad: Vec<f64> = self.xty.as_slice().to_vec();
        for (k, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (g, x) in grad.iter_mut().zip(self.gram_col(k)) {
                    *g -= b * x;
                }
            }
        }
        grad
    }

    /// Objective after a pass; debug builds assert it did not increase.
    fn check_descent(&self, prev: f64, beta: &[f64], grad: &[f64], lambda: f64) -> f64 {
        if cfg!(debug_assertions) {
            let obj = self.objective(beta, grad, lambda);
            debug_assert!(
                obj <= prev + 1e-10 * prev.abs().max(1.0),
                "objective increased: {prev} -> {obj}"
            );
            obj
        } else {
            prev
        }
    }

    /// With the sign pattern held fixed, the lasso optimum over the nonzero
    /// set A solves `(X_AᵀX_A/n) β_A = X_Aᵀy/n − λ s_A`. Move toward that
    /// point; if a coefficient would change sign, stop where it reaches zero,
    /// drop it and solve again. Each accepted step lowers the objective, and
    /// coordinate descent still certifies convergence afterwards.
    fn polish(&self, beta: &mut [f64], grad: &mut Vec<f64>, lambda: f64) -> Option<f64> {
        let mut improved = None;
        for _ in 0..POLISH_STEPS {
            let active: Vec<usize> = (0..beta.len()).filter(|&k| beta[k] != 0.0).collect();
            let a = active.len();
            // centred columns have rank at most n - 1
            if a == 0 || a >= self.n {
                break;
            }
            let gram = DMatrix::from_fn(a, a, |i, j| self.gram[(active[i], active[j])]);
            let rhs = DVector::from_fn(a, |i, _| {
                self.xty[active[i]] - lambda * sign(beta[active[i]]) as f64
            });
            let Some(chol) = gram.cholesky() else { break };
            let sol = chol.solve(&rhs);
            if sol.iter().any(|v| !v.is_finite()) {
                break;
            }
            // largest step in [0, 1] keeping every sign
            let mut step = 1.0;
            let mut blocking = None;
            for (i, &k) in active.iter().enumerate() {
                if sign(sol[i]) != sign(beta[k]) {
                    let t = beta[k] / (beta[k] - sol[i]);
                    if t < step {
                        step = t;
                        blocking = Some(k);
                    }
                }
            }
            let mut trial = beta.to_vec();
            for (i, &k) in active.iter().enumerate() {
                trial[k] = beta[k] + step * (sol[i] - beta[k]);
            }
            if let Some(k) = blocking {
                trial[k] = 0.0;
            }
            let trial_grad = self.gradient(&trial);
            let trial_obj = self.objective(&trial, &trial_grad, lambda);
            let current = self.objective(beta, grad, lambda);
            if !(trial_obj <= current) {
                break;
            }
            beta.copy_from_slice(&trial);
            *grad = trial_grad;
            improved = Some(trial_obj);
            if blocking.is_none() {
                break;
            }
        }
        improved
    }

    fn to_fit(&self, beta: &[f64], lambda: f64, sweeps: usize) -> LassoFit {
        let mut coefficients = DVector::zeros(self.p);
        for (k, &j) in self.kept.iter().enumerate() {
            coefficients[j] = beta[k] / self.standardization.scales[j];
        }
        let intercept = self.y_mean - coefficients.dot(&self.standardization.means);
        LassoFit {
            intercept,
            coefficients,
            lambda,
            standardization: self.standardization.clone(),
            sweeps,
        }
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn sign_pattern(active: &[usize], beta: &[f64]) -> Vec<i8> {
    active.iter().map(|&k| sign(beta[k])).collect()
}

/// Four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Smallest λ at which every coefficient is zero.
pub fn lambda_max(design: &DesignMatrix) -> f64 {
    Standardized::new(design).lambda_max()
}

/// `len` log-spaced values from `max` down to `min_ratio * max`.
pub fn lambda_path(max: f64, len: usize, min_ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![max];
    }
    (0..len)
        .map(|k| max * min_ratio.powf(k as f64 / (len - 1) as f64))
        .collect()
}

pub fn fit_lasso(design: &DesignMatrix, lambda: f64) -> Result<LassoFit> {
    fit_lasso_with(design, lambda, &SolverOptions::default())
}

pub fn fit_lasso_with(design: &DesignMatrix, lambda: f64, opts: &SolverOptions) -> Result<LassoFit> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("lasso", format!("lambda {lambda} must be >= 0")));
    }
    let st = Standardized::new(design);
    let mut beta = vec![0.0; st.kept.len()];
    let sweeps = st.solve(lambda, &mut beta, opts)?;
    Ok(st.to_fit(&beta, lambda, sweeps))
}

/// Fits along `lambdas` (decreasing), warm-starting each from the previous.
pub fn fit_path(design: &DesignMatrix, lambdas: &[f64], opts: &SolverOptions) -> Result<Vec<LassoFit>> {
    let st = Standardized::new(design);
    let mut beta = vec![0.0; st.kept.len()];
    lambdas
        .iter()
        .map(|&lambda| {
            let sweeps = st.solve(lambda, &mut beta, opts)?;
            Ok(st.to_fit(&beta, lambda, sweeps))
        })
        .collect()
}

/// Largest KKT violation of `fit` on the standardized scale.
pub fn kkt_residual(design: &DesignMatrix, fit: &LassoFit) -> f64 {
    let st = Standardized::new(design);
    let nf = st.n as f64;
    let beta: Vec<f64> = st
        .kept
        .iter()
        .map(|&j| fit.coefficients[j] * st.standardization.scales[j])
        .collect();
    let mut resid: Vec<f64> = st.yc.as_slice().to_vec();
    for (k, b) in beta.iter().enumerate() {
        for (r, x) in resid.iter_mut().zip(st.col(k)) {
            *r -= b * x;
        }
    }
    (0..st.kept.len())
        .map(|k| {
            let g = dot(st.col(k), &resid) / nf;
            if beta[k] == 0.0 {
                (g.abs() - fit.lambda).max(0.0)
            } else {
                (g - fit.lambda * beta[k].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Cross-validation outcome over the λ path.
#[derive(Clone, Debug)]
pub struct CvSelection {
    pub lambda: f64,
    pub index: usize,
    pub path: Vec<f64>,
    /// Mean out-of-fold squared error per path entry.
    pub errors: Vec<f64>,
}

/// Contiguous, time-ordered fold boundaries.
pub fn contiguous_folds(rows: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    (0..folds)
        .map(|f| (f * rows / folds)..((f + 1) * rows / folds))
        .collect()
}

pub fn cv_lambda(design: &DesignMatrix, folds: usize) -> Result<f64> {
    Ok(cv_select(design, folds, &SolverOptions::default())?.lambda)
}

/// Chooses λ on a 50-point log path by blocked K-fold cross-validation,
/// minimizing mean out-of-fold squared error. Ties go to the larger λ.
pub fn cv_select(design: &DesignMatrix, folds: usize, opts: &SolverOptions) -> Result<CvSelection> {
    let n = design.nrows();
    if folds < 2 || folds > n {
        return Err(Error::InsufficientData(format!(
            "{folds} folds on {n} rows"
        )));
    }
    let blocks = contiguous_folds(n, folds);
    if blocks.iter().any(|b| n - b.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "{folds} folds leave fewer than 2 training rows"
        )));
    }
    let lmax = lambda_max(design);
    if lmax == 0.0 {
        return Ok(CvSelection {
            lambda: 0.0,
            index: 0,
            path: vec![0.0],
            errors: vec![0.0],
        });
    }
    let path = lambda_path(lmax, PATH_LENGTH, PATH_MIN_RATIO);
    let mut sse = vec![0.0; path.len()];
    for block in &blocks {
        let train: Vec<usize> = (0..n).filter(|i| !block.contains(i)).collect();
        let st = Standardized::new(&design.select_rows(&train));
        let (means, scales) = (&st.standardization.means, &st.standardization.scales);
        // held-out rows on the training fold's standardized scale
        let held: Vec<Vec<f64>> = block
            .clone()
            .map(|i| st.kept.iter().map(|&j| (design.x[(i, j)] - means[j]) / scales[j]).collect())
            .collect();
        let mut beta = vec![0.0; st.kept.len()];
        for (k, &lambda) in path.iter().enumerate() {
            st.solve(lambda, &mut beta, opts)?;
            for (row, i) in held.iter().zip(block.clone()) {
                let e = design.y[i] - st.y_mean - dot(row, &beta);
                sse[k] += e * e;
            }
        }
    }
    let errors: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let mut best = 0;
    for k in 1..errors.len() {
        if errors[k] < errors[best] * (1.0 - 1e-12) {
            best = k;
        }
    }
    Ok(CvSelection {
        lambda: path[best],
        index: best,
        path,
        errors,
    })
}

/// Cross-validates, then refits on all rows down the path to the chosen λ.
pub fn fit_cv(design: &DesignMatrix, folds: usize, opts: &SolverOptions) -> Result<(LassoFit, CvSelection)> {
    let sel = cv_select(design, folds, opts)?;
    let fit = if sel.lambda == 0.0 {
        fit_lasso_with(design, 0.0, opts)?
    } else {
        fit_path(design, &sel.path[..=sel.index], opts)?
            .pop()
            .expect("non-empty path")
    };
    Ok((fit, sel))
}

fn predict_row<'a>(fit: &LassoFit, x: impl Iterator<Item = &'a f64>) -> f64 {
    fit.intercept + fit.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// `β₀ + xᵀβ` on the original feature scale.
pub fn predict(fit: &LassoFit, x: &[f64]) -> Result<f64> {
    if x.len() != fit.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.coefficients.len(),
            got: x.len(),
        });
    }
    Ok(predict_row(fit, x.iter()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Centred columns with Xᵀ X = n I.
    pub(crate) fn orthonormal_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        let mut a = gaussian(rng, n, p);
        for mut c in a.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        let q = a.qr().q();
        q * (n as f64).sqrt()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        for x in [-3.5, 0.0, 1e-9, 42.0] {
            assert_eq!(soft_threshold(x, 0.0), x);
        }
    }

    #[test]
    fn null_solution_above_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(&mut rng, 40, 6);
        let y = DVector::from_fn(40, |i, _| x[(i, 0)] * 2.0 + 1.0);
        let d = DesignMatrix::new(x, y.clone()).unwrap();
        let lmax = lambda_max(&d);
        for lambda in [lmax, 2.0 * lmax] {
            let fit = fit_lasso(&d, lambda).unwrap();
            assert!(fit.coefficients.iter().all(|b| *b == 0.0));
            assert!((fit.intercept - y.mean()).abs() < 1e-12);
        }
        let fit = fit_lasso(&d, 0.99 * lmax).unwrap();
        assert!(fit.coefficients.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn orthonormal_matches_soft_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let x = orthonormal_design(&mut rng, n, 3);
        let y = DVector::from_fn(n, |i, _| {
            1.5 * x[(i, 0)] - 0.4 * x[(i, 1)] + 0.05 * x[(i, 2)] + 3.0 + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        let d = DesignMatrix::new(x.clone(), y.clone()).unwrap();
        for lambda in [0.0, 0.01, 0.1, 0.5, 2.0] {
            let fit = fit_lasso(&d, lambda).unwrap();
            for j in 0..3 {
                let z = x.column(j).dot(&y) / n as f64;
                let expected = soft_threshold(z, lambda);
                assert!(
                    (fit.coefficients[j] - expected).abs() < 1e-8,
                    "lambda {lambda} j {j}: {} vs {expected}",
                    fit.coefficients[j]
                );
            }
        }
        // λ = 0 is ordinary least squares
        let fit = fit_lasso(&d, 0.0).unwrap();
        let mut xi = DMatrix::from_element(n, 4, 1.0);
        xi.columns_mut(1, 3).copy_from(&x);
        let ols = (xi.transpose() * &xi).lu().solve(&(xi.transpose() * &y)).unwrap();
        assert!((fit.intercept - ols[0]).abs() < 1e-8);
        for j in 0..3 {
            assert!((fit.coefficients[j] - ols[j + 1]).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_features_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = gaussian(&mut rng, 30, 3);
        x.column_mut(1).fill(4.0);
        let y = DVector::from_fn(30, |i, _| x[(i, 0)] - x[(i, 2)]);
        let d = DesignMatrix::new(x, y).unwrap();
        let fit = fit_lasso(&d, 0.01).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        assert_eq!(fit.standardization.scales[1], 0.0);
        assert!(kkt_residual(&d, &fit) < 1e-6);
    }

    #[test]
    fn all_constant_design_is_intercept_only() {
        let x = DMatrix::zeros(12, 4);
        let y = DVector::from_fn(12, |i, _| i as f64);
        let d = DesignMatrix::new(x, y).unwrap();
        assert_eq!(lambda_max(&d), 0.0);
        assert_eq!(cv_lambda(&d, 4).unwrap(), 0.0);
        let fit = fit_lasso(&d, 0.0).unwrap();
        assert!((fit.intercept - 5.5).abs() < 1e-12);
    }

    #[test]
    fn sparsity_monotone_in_lambda_on_orthonormal_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = orthonormal_design(&mut rng, 60, 8);
        let y = DVector::from_fn(60, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = DesignMatrix::new(x, y).unwrap();
        let path = lambda_path(lambda_max(&d), 30, 1e-3);
        let fits = fit_path(&d, &path, &SolverOptions::default()).unwrap();
        let nnz: Vec<usize> = fits
            .iter()
            .map(|f| f.coefficients.iter().filter(|b| **b != 0.0).count())
            .collect();
        assert!(nnz.windows(2).all(|w| w[0] <= w[1]), "{nnz:?}");
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(&mut rng, 50, 20);
        let y = DVector::from_fn(50, |i, _| x[(i, 3)] + 0.1 * x[(i, 7)]);
        let d = DesignMatrix::new(x, y).unwrap();
        assert_eq!(fit_lasso(&d, 0.02).unwrap(), fit_lasso(&d, 0.02).unwrap());
    }

    #[test]
    fn reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian(&mut rng, 30, 10);
        let y = DVector::from_fn(30, |i, _| x[(i, 0)] + x[(i, 1)]);
        let d = DesignMatrix::new(x, y).unwrap();
        let opts = SolverOptions {
            tolerance: 1e-30,
            max_sweeps: 3,
        };
        match fit_lasso_with(&d, 1e-6, &opts) {
            Err(Error::NotConverged { iterations, .. }) => assert_eq!(iterations, 3),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn predict_examples() {
        let fit = LassoFit {
            intercept: 2.5,
            coefficients: DVector::zeros(3),
            lambda: 0.0,
            standardization: Standardization {
                means: DVector::zeros(3),
                scales: DVector::zeros(3),
            },
            sweeps: 0,
        };
        assert_eq!(predict(&fit, &[1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(predict(&fit, &[1.0]).is_err());
        let mut e1 = fit.clone();
        e1.intercept = 0.0;
        e1.coefficients[0] = 1.0;
        assert_eq!(predict(&e1, &[7.0, 9.0, 11.0]).unwrap(), 7.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut r = fit.clone();
        r.intercept = rng.random_range(-3.0..3.0);
        r.coefficients = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut naive = r.intercept;
        for j in 0..3 {
            naive += r.coefficients[j] * x[j];
        }
        assert!((predict(&r, &x).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn cv_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(&mut rng, 10, 3);
        let y = DVector::from_fn(10, |i, _| x[(i, 0)]);
        let d = DesignMatrix::new(x, y).unwrap();
        assert!(cv_lambda(&d, 1).is_err());
        assert!(cv_lambda(&d, 11).is_err());
    }

    #[test]
    fn leave_one_out_returns_path_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(&mut rng, 10, 3);
        let y = DVector::from_fn(10, |i, _| x[(i, 0)] + 0.2 * rng.sample::<f64, _>(StandardNormal));
        let d = DesignMatrix::new(x, y).unwrap();
        let sel = cv_select(&d, 10, &SolverOptions::default()).unwrap();
        assert_eq!(sel.path.len(), PATH_LENGTH);
        assert!(sel.path.contains(&sel.lambda));
    }

    fn median_selection_rank(noise_only: bool) -> f64 {
        let mut ranks: Vec<usize> = (0..20)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let x = gaussian(&mut rng, 104, 20);
                let y = if noise_only {
                    DVector::from_fn(104, |_, _| rng.sample::<f64, _>(StandardNormal))
                } else {
                    DVector::from_fn(104, |i, _| 2.0 * x[(i, 0)] - x[(i, 5)] + 0.5 * x[(i, 9)])
                };
                let d = DesignMatrix::new(x, y).unwrap();
                cv_select(&d, 10, &SolverOptions::default()).unwrap().index
            })
            .collect();
        ranks.sort();
        (ranks[9] + ranks[10]) as f64 / 2.0
    }

    #[test]
    fn cv_shrinks_hard_on_noise() {
        // top quartile of the path = indices 0..12 (largest λ first)
        let m = median_selection_rank(true);
        assert!(m < PATH_LENGTH as f64 / 4.0, "median index {m}");
    }

    #[test]
    fn cv_keeps_small_lambda_for_exact_signal() {
        let m = median_selection_rank(false);
        assert!(m >= 0.75 * PATH_LENGTH as f64, "median index {m}");
    }
}
