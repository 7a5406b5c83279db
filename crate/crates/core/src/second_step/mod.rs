//! Second step: shrunk best linear prediction of the weekly %ILI increment.
//!
//! Both the joint model and the stand-alone model predict
//! `Z = p_T − p_{T−1}` from a stack `W` of increments and first-step
//! residual signals, using
//! `½Σ_ZW (½Σ_WW + ½D_WW)⁻¹ (W − μ_W)` with `D_WW` the empirical diagonal.

pub mod joint;
pub mod standalone;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::ingest::{clamp_percent, ILI_FLOOR};
use crate::linalg::{cholesky_with_jitter, condition_number};

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Point estimate with a 95% interval, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    /// Centre the interval on the clamped point.
    pub fn new(point: f64, variance: f64) -> Self {
        let point = clamp_percent(point).max(ILI_FLOOR);
        let half = Z_95 * variance.max(0.0).sqrt();
        Estimate {
            point,
            lo: point - half,
            hi: point + half,
        }
    }

    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

/// The solved shrunk system for one model: gain
/// `K = ½Σ_ZW(½Σ_WW + ½D)⁻¹` and conditional variances
/// `diag(Σ_ZZ − K·½Σ_WZ)`, floored at zero.
#[derive(Clone, Debug)]
pub struct ShrunkBlp {
    pub gain: DMatrix<f64>,
    pub variance: DVector<f64>,
    pub jitter: f64,
    pub condition: f64,
}

impl ShrunkBlp {
    pub fn solve(
        sigma_zz: &DMatrix<f64>,
        sigma_zw: &DMatrix<f64>,
        sigma_ww: &DMatrix<f64>,
        d_ww: &DVector<f64>,
    ) -> Result<Self> {
        let m = sigma_ww.nrows();
        if sigma_ww.ncols() != m || sigma_zw.ncols() != m || d_ww.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: sigma_zw.ncols(),
            });
        }
        if sigma_zz.nrows() != sigma_zw.nrows() {
            return Err(Error::DimensionMismatch {
                expected: sigma_zz.nrows(),
                got: sigma_zw.nrows(),
            });
        }
        let mut system = sigma_ww * 0.5;
        for i in 0..m {
            system[(i, i)] += 0.5 * d_ww[i];
        }
        let factor = cholesky_with_jitter(&system)?;
        let half_wz = sigma_zw.transpose() * 0.5;
        let gain = factor.cholesky.solve(&half_wz).transpose();
        let reduction = &gain * &half_wz;
        let variance =
            DVector::from_fn(sigma_zz.nrows(), |i, _| (sigma_zz[(i, i)] - reduction[(i, i)]).max(0.0));
        Ok(ShrunkBlp {
            gain,
            variance,
            jitter: factor.jitter,
            condition: condition_number(&system),
        })
    }

    /// `p_prev + μ_Z + K(W − μ_W)`, unclamped.
    pub fn point(
        &self,
        mu_z: &DVector<f64>,
        mu_w: &DVector<f64>,
        w: &DVector<f64>,
        p_prev: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if w.len() != mu_w.len() {
            return Err(Error::DimensionMismatch {
                expected: mu_w.len(),
                got: w.len(),
            });
        }
        if p_prev.len() != mu_z.len() {
            return Err(Error::DimensionMismatch {
                expected: mu_z.len(),
                got: p_prev.len(),
            });
        }
        Ok(p_prev + mu_z + &self.gain * (w - mu_w))
    }
}

/// Per-week second-step audit row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub week: EpiWeek,
    pub model: String,
    pub rho: Option<f64>,
    pub condition: f64,
    pub jitter: f64,
}

pub fn write_diagnostics(rows: &[Diagnostics], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["year", "week", "model", "rho", "condition", "jitter"])
        .map_err(|e| Error::csv(path, e))?;
    for d in rows {
        w.write_record([
            d.week.year.to_string(),
            d.week.week.to_string(),
            d.model.clone(),
            d.rho.map_or(String::new(), |r| format!("{r}")),
            format!("{}", d.condition),
            format!("{}", d.jitter),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_contains_point() {
        let e = Estimate::new(2.0, 0.25);
        assert!((e.half_width() - 0.98).abs() < 1e-12);
        assert!(e.lo <= e.point && e.point <= e.hi);
        let z = Estimate::new(-1.0, -3.0);
        assert_eq!(z.point, ILI_FLOOR);
        assert_eq!(z.lo, z.hi);
    }

    #[test]
    fn zero_cross_covariance_keeps_prior() {
        let szz = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let szw = DMatrix::zeros(2, 3);
        let sww = DMatrix::identity(3, 3);
        let d = DVector::from_element(3, 1.0);
        let blp = ShrunkBlp::solve(&szz, &szw, &sww, &d).unwrap();
        assert_eq!(blp.variance.as_slice(), &[2.0, 1.0]);
        let mu_z = DVector::from_vec(vec![0.1, -0.2]);
        let mu_w = DVector::zeros(3);
        let w = DVector::from_vec(vec![5.0, 6.0, 7.0]);
        let p = DVector::from_vec(vec![1.0, 2.0]);
        let pt = blp.point(&mu_z, &mu_w, &w, &p).unwrap();
        assert!((pt[0] - 1.1).abs() < 1e-15 && (pt[1] - 1.8).abs() < 1e-15);
        assert!(blp.point(&mu_z, &mu_w, &p, &p).is_err());
    }
}
