//! Scalar second step for geographies modelled without cross-state pooling.
//!
//! `W = (Z_{t−1}, p̂^GT_t − p_{t−1}, p̂^nat_t − p_{t−1})` with unstructured
//! sample covariances and the same diagonal shrinkage as the joint model.

use nalgebra::{Matrix3, RowVector3, Vector3};

use super::Estimate;
use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::first_step::FirstStepPanel;
use crate::geo::GeoId;
use crate::linalg::{cholesky_with_jitter, condition_number};
use crate::panel::WeeklyPanel;

pub fn standalone_stack(z_lag: f64, gt: f64, nat: f64, p_prev: f64) -> Vector3<f64> {
    Vector3::new(z_lag, gt - p_prev, nat - p_prev)
}

fn ili_at(ili: &WeeklyPanel, week: EpiWeek, geo: &GeoId) -> Result<f64> {
    ili.get(week, geo.as_str())
        .ok_or_else(|| Error::MissingData(format!("%ILI for {geo} at {week}")))
}

fn raw_at(first: &FirstStepPanel, week: EpiWeek, geo: &GeoId) -> Result<f64> {
    first
        .get(week, geo)
        .ok_or_else(|| Error::MissingData(format!("first-step estimate for {geo} at {week}")))
}

/// `(W_t, p_{t−1})` for one geography. Reads only that geography's %ILI and
/// first-step estimate plus the national estimate.
pub fn build_standalone_stack(
    geo: &GeoId,
    week: EpiWeek,
    ili: &WeeklyPanel,
    first: &FirstStepPanel,
) -> Result<(Vector3<f64>, f64)> {
    let p1 = ili_at(ili, week.pred(), geo)?;
    let p2 = ili_at(ili, week.pred().pred(), geo)?;
    let w = standalone_stack(
        p1 - p2,
        raw_at(first, week, geo)?,
        raw_at(first, week, &GeoId::national())?,
        p1,
    );
    Ok((w, p1))
}

#[derive(Clone, Debug)]
pub struct StandaloneWindow {
    pub z: Vec<f64>,
    pub w: Vec<Vector3<f64>>,
}

impl StandaloneWindow {
    pub fn collect(
        geo: &GeoId,
        ili: &WeeklyPanel,
        first: &FirstStepPanel,
        week: EpiWeek,
        window: usize,
    ) -> Result<Self> {
        let mut z = Vec::with_capacity(window);
        let mut w = Vec::with_capacity(window);
        for r in 0..window {
            let t = week.offset(r as i64 - window as i64);
            let (wt, p1) = build_standalone_stack(geo, t, ili, first)?;
            z.push(ili_at(ili, t, geo)? - p1);
            w.push(wt);
        }
        Ok(StandaloneWindow { z, w })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StandaloneModel {
    pub mu_z: f64,
    pub mu_w: Vector3<f64>,
    pub sigma_zz: f64,
    pub sigma_zw: RowVector3<f64>,
    pub sigma_ww: Matrix3<f64>,
    pub d_ww: Vector3<f64>,
}

impl StandaloneModel {
    pub fn fit(window: &StandaloneWindow) -> Result<Self> {
        let n = window.z.len();
        if n < 2 || window.w.len() != n {
            return Err(Error::InsufficientData(format!(
                "stand-alone model needs 2 aligned weeks, got {n}"
            )));
        }
        let nf = n as f64;
        let mu_z = window.z.iter().sum::<f64>() / nf;
        let mu_w = window.w.iter().sum::<Vector3<f64>>() / nf;
        let mut sigma_zz = 0.0;
        let mut sigma_zw = RowVector3::zeros();
        let mut sigma_ww = Matrix3::zeros();
        for (z, w) in window.z.iter().zip(&window.w) {
            let dz = z - mu_z;
            let dw = w - mu_w;
            sigma_zz += dz * dz;
            sigma_zw += dw.transpose() * dz;
            sigma_ww += dw * dw.transpose();
        }
        let k = nf - 1.0;
        let sigma_ww = sigma_ww / k;
        Ok(StandaloneModel {
            mu_z,
            mu_w,
            sigma_zz: sigma_zz / k,
            sigma_zw: sigma_zw / k,
            d_ww: sigma_ww.diagonal(),
            sigma_ww,
        })
    }
}

/// Point `p_{T−1} + μ_Z + Σ_ZW(Σ_WW + D)⁻¹(W − μ_W)` with half-width
/// `1.96·sqrt(Σ_ZZ − ½Σ_ZW(Σ_WW + D)⁻¹Σ_WZ)`.
pub fn standalone_estimate(model: &StandaloneModel, w: &Vector3<f64>, p_prev: f64) -> Result<Estimate> {
    let system = model.sigma_ww + Matrix3::from_diagonal(&model.d_ww);
    let factor = cholesky_with_jitter(&system)?;
    let gain = factor.cholesky.solve(&model.sigma_zw.transpose());
    let point = p_prev + model.mu_z + gain.dot(&(w - model.mu_w));
    let variance = model.sigma_zz - 0.5 * gain.dot(&model.sigma_zw.transpose());
    Ok(Estimate::new(point, variance))
}

/// Condition number and jitter of `Σ_WW + D`.
pub fn standalone_conditioning(model: &StandaloneModel) -> Result<(f64, f64)> {
    let system = model.sigma_ww + Matrix3::from_diagonal(&model.d_ww);
    let factor = cholesky_with_jitter(&system)?;
    let dynamic = nalgebra::DMatrix::from_column_slice(3, 3, system.as_slice());
    Ok((condition_number(&dynamic), factor.jitter))
}
