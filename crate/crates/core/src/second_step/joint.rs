//! Joint second step for the pooled geographies.
//!
//! `W_t` stacks four `G`-blocks: `Z_{t−1}`, `p̂^GT_t − p_{t−1}`,
//! `p̂^reg_t − p_{t−1}` (each state's region) and `p̂^nat_t − p_{t−1}`.
//! The covariances of `(Z, W)` are modelled as
//!
//! ```text
//! Σ_ZW = [ρΣ  Σ  Σ  Σ]
//! Σ_WW = | Σ    ρΣ       ρΣ        ρΣ      |
//!        | ρΣ   Σ+Σ^GT   Σ         Σ       |
//!        | ρΣ   Σ        Σ+Σ^reg   Σ       |
//!        | ρΣ   Σ        Σ         Σ+Σ^nat |
//! ```
//!
//! with `Σ = Σ_ZZ` and the error covariances estimated on the training
//! window.

use nalgebra::{DMatrix, DVector};

use super::{Estimate, ShrunkBlp};
use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::first_step::FirstStepPanel;
use crate::geo::{GeoId, GeoRegistry};
use crate::linalg::{column_means, correlation, sample_covariance};
use crate::panel::WeeklyPanel;

pub const RHO_MIN: f64 = 1e-6;
pub const RHO_MAX: f64 = 1.0 - 1e-6;
pub const RHO_GRID: usize = 64;
pub const RHO_TOLERANCE: f64 = 1e-6;

/// Increments `p_t − p_{t−1}` for the given columns, indexed from the
/// second week.
pub fn build_increment_targets(ili: &WeeklyPanel, geos: &[GeoId]) -> Result<WeeklyPanel> {
    if !ili.is_consecutive() {
        return Err(Error::Misaligned("gap in %ILI week index".into()));
    }
    if ili.n_weeks() < 2 {
        return Err(Error::InsufficientData("increments need two weeks".into()));
    }
    let cols = geos
        .iter()
        .map(|g| {
            ili.column_position(g.as_str())
                .ok_or_else(|| Error::MissingData(format!("no %ILI series for {g}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let v = ili.values();
    let z = DMatrix::from_fn(ili.n_weeks() - 1, cols.len(), |i, j| {
        v[(i + 1, cols[j])] - v[(i, cols[j])]
    });
    WeeklyPanel::new(
        ili.index()[1..].to_vec(),
        geos.iter().map(|g| g.to_string()).collect(),
        z,
    )
}

/// Pooled geographies with their regions, in model order.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGeometry {
    pub geos: Vec<GeoId>,
    pub regions: Vec<GeoId>,
}

impl JointGeometry {
    pub fn new(registry: &GeoRegistry, geos: Vec<GeoId>) -> Result<Self> {
        let regions = geos
            .iter()
            .map(|g| registry.region_of(g).cloned())
            .collect::<Result<_>>()?;
        Ok(JointGeometry { geos, regions })
    }

    pub fn len(&self) -> usize {
        self.geos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geos.is_empty()
    }
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

/// `W_t` together with `p_{t−1}`.
pub fn build_predictor_stack(
    week: EpiWeek,
    ili: &WeeklyPanel,
    first: &FirstStepPanel,
    geometry: &JointGeometry,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let g = geometry.len();
    let prev = week.pred();
    let prev2 = prev.pred();
    let us = GeoId::national();
    let nat = raw_at(first, week, &us)?;
    let mut w = DVector::zeros(4 * g);
    let mut p_prev = DVector::zeros(g);
    for (m, (geo, region)) in geometry.geos.iter().zip(&geometry.regions).enumerate() {
        let p1 = ili_at(ili, prev, geo)?;
        let p2 = ili_at(ili, prev2, geo)?;
        p_prev[m] = p1;
        w[m] = p1 - p2;
        w[g + m] = raw_at(first, week, geo)? - p1;
        w[2 * g + m] = raw_at(first, week, region)? - p1;
        w[3 * g + m] = nat - p1;
    }
    Ok((w, p_prev))
}

/// Training observations for one joint model; one row per week.
#[derive(Clone, Debug)]
pub struct TrainingWindow {
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub gt_err: DMatrix<f64>,
    pub reg_err: DMatrix<f64>,
    pub nat_err: DMatrix<f64>,
}

impl TrainingWindow {
    /// Assemble `W = [Z_lag, Z + e^GT, Z + e^reg, Z + e^nat]`.
    pub fn from_parts(
        z: DMatrix<f64>,
        z_lag: DMatrix<f64>,
        gt_err: DMatrix<f64>,
        reg_err: DMatrix<f64>,
        nat_err: DMatrix<f64>,
    ) -> Result<Self> {
        let shape = z.shape();
        for m in [&z_lag, &gt_err, &reg_err, &nat_err] {
            if m.shape() != shape {
                return Err(Error::DimensionMismatch {
                    expected: shape.0 * shape.1,
                    got: m.nrows() * m.ncols(),
                });
            }
        }
        let (n, g) = shape;
        let mut w = DMatrix::zeros(n, 4 * g);
        w.columns_mut(0, g).copy_from(&z_lag);
        w.columns_mut(g, g).copy_from(&(&z + &gt_err));
        w.columns_mut(2 * g, g).copy_from(&(&z + &reg_err));
        w.columns_mut(3 * g, g).copy_from(&(&z + &nat_err));
        Ok(TrainingWindow {
            z,
            w,
            gt_err,
            reg_err,
            nat_err,
        })
    }

    /// Weeks `[week − window, week)`; reads %ILI through `week − 1`.
    pub fn collect(
        ili: &WeeklyPanel,
        first: &FirstStepPanel,
        geometry: &JointGeometry,
        week: EpiWeek,
        window: usize,
    ) -> Result<Self> {
        let g = geometry.len();
        let us = GeoId::national();
        let mut z = DMatrix::zeros(window, g);
        let mut z_lag = DMatrix::zeros(window, g);
        let mut gt = DMatrix::zeros(window, g);
        let mut reg = DMatrix::zeros(window, g);
        let mut nat = DMatrix::zeros(window, g);
        for r in 0..window {
            let t = week.offset(r as i64 - window as i64);
            let nat_t = raw_at(first, t, &us)?;
            for (m, (geo, region)) in geometry.geos.iter().zip(&geometry.regions).enumerate() {
                let p0 = ili_at(ili, t, geo)?;
                let p1 = ili_at(ili, t.pred(), geo)?;
                let p2 = ili_at(ili, t.pred().pred(), geo)?;
                z[(r, m)] = p0 - p1;
                z_lag[(r, m)] = p1 - p2;
                gt[(r, m)] = raw_at(first, t, geo)? - p0;
                reg[(r, m)] = raw_at(first, t, region)? - p0;
                nat[(r, m)] = nat_t - p0;
            }
        }
        TrainingWindow::from_parts(z, z_lag, gt, reg, nat)
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }
}

/// Sample moments of one training window.
#[derive(Clone, Debug)]
pub struct Components {
    pub mu_z: DVector<f64>,
    pub mu_w: DVector<f64>,
    pub sigma_zz: DMatrix<f64>,
    pub sigma_gt: DMatrix<f64>,
    pub sigma_reg: DMatrix<f64>,
    pub sigma_nat: DMatrix<f64>,
    /// Diagonal of the empirical covariance of `W`.
    pub d_ww: DVector<f64>,
    /// Empirical correlation of the stacked `(Z, W)`.
    pub empirical_corr: DMatrix<f64>,
}

pub fn estimate_components(window: &TrainingWindow) -> Result<Components> {
    let g = window.z.ncols();
    let mut zw = DMatrix::zeros(window.len(), 5 * g);
    zw.columns_mut(0, g).copy_from(&window.z);
    zw.columns_mut(g, 4 * g).copy_from(&window.w);
    let joint = sample_covariance(&zw)?;
    Ok(Components {
        mu_z: column_means(&window.z),
        mu_w: column_means(&window.w),
        sigma_zz: joint.view((0, 0), (g, g)).into_owned(),
        sigma_gt: sample_covariance(&window.gt_err)?,
        sigma_reg: sample_covariance(&window.reg_err)?,
        sigma_nat: sample_covariance(&window.nat_err)?,
        d_ww: joint.diagonal().rows(g, 4 * g).into_owned(),
        empirical_corr: correlation(&joint),
    })
}

/// Structured `(Σ_ZW, Σ_WW)` from the component blocks.
pub fn assemble_structured_cov(
    sigma_zz: &DMatrix<f64>,
    sigma_gt: &DMatrix<f64>,
    sigma_reg: &DMatrix<f64>,
    sigma_nat: &DMatrix<f64>,
    rho: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = sigma_zz.nrows();
    for m in [sigma_zz, sigma_gt, sigma_reg, sigma_nat] {
        if m.shape() != (g, g) {
            return Err(Error::DimensionMismatch {
                expected: g,
                got: m.nrows().max(m.ncols()),
            });
        }
    }
    let s = sigma_zz;
    let rs = s * rho;
    let mut zw = DMatrix::zeros(g, 4 * g);
    zw.columns_mut(0, g).copy_from(&rs);
    for b in 1..4 {
        zw.columns_mut(b * g, g).copy_from(s);
    }
    let errors = [None, Some(sigma_gt), Some(sigma_reg), Some(sigma_nat)];
    let mut ww = DMatrix::zeros(4 * g, 4 * g);
    for (i, err) in errors.iter().enumerate() {
        for j in 0..4 {
            let mut block = ww.view_mut((i * g, j * g), (g, g));
            if i == j {
                block.copy_from(s);
                if let Some(e) = err {
                    block += *e;
                }
            } else if i == 0 || j == 0 {
                block.copy_from(&rs);
            } else {
                block.copy_from(s);
            }
        }
    }
    Ok((zw, ww))
}

/// Covariance of the stacked `(Z, W)` implied by the structure.
pub fn structured_joint_cov(c: &Components, rho: f64) -> Result<DMatrix<f64>> {
    let g = c.sigma_zz.nrows();
    let (zw, ww) = assemble_structured_cov(&c.sigma_zz, &c.sigma_gt, &c.sigma_reg, &c.sigma_nat, rho)?;
    let mut out = DMatrix::zeros(5 * g, 5 * g);
    out.view_mut((0, 0), (g, g)).copy_from(&c.sigma_zz);
    out.view_mut((0, g), (g, 4 * g)).copy_from(&zw);
    out.view_mut((g, 0), (4 * g, g)).copy_from(&zw.transpose());
    out.view_mut((g, g), (4 * g, 4 * g)).copy_from(&ww);
    Ok(out)
}

/// Structured correlation as a function of ρ. The diagonal of the
/// structured covariance does not involve ρ, so the correlation is affine
/// in ρ and two evaluations pin it down.
#[derive(Clone, Debug)]
pub struct StructuredTemplate {
    at_zero: DMatrix<f64>,
    slope: DMatrix<f64>,
}

impl StructuredTemplate {
    pub fn new(c: &Components) -> Result<Self> {
        let at_zero = correlation(&structured_joint_cov(c, 0.0)?);
        let at_one = correlation(&structured_joint_cov(c, 1.0)?);
        Ok(StructuredTemplate {
            slope: &at_one - &at_zero,
            at_zero,
        })
    }

    pub fn correlation(&self, rho: f64) -> DMatrix<f64> {
        &self.at_zero + &self.slope * rho
    }
}

/// Minimizes `‖Corr_structured(ρ) − Corr_empirical‖_F` over
/// `[RHO_MIN, RHO_MAX]`: a 64-point grid, then golden-section search on the
/// grid cell around the best point. Entries undefined on either side
/// (zero-variance series) are skipped.
pub fn estimate_rho(empirical: &DMatrix<f64>, template: &StructuredTemplate) -> Result<f64> {
    if empirical.shape() != template.at_zero.shape() {
        return Err(Error::DimensionMismatch {
            expected: template.at_zero.nrows(),
            got: empirical.nrows(),
        });
    }
    let terms: Vec<(f64, f64)> = empirical
        .iter()
        .zip(template.at_zero.iter())
        .zip(template.slope.iter())
        .filter(|((e, a), b)| e.is_finite() && a.is_finite() && b.is_finite())
        .map(|((e, a), b)| (a - e, *b))
        .collect();
    let objective = |rho: f64| -> f64 {
        terms
            .iter()
            .map(|(a, b)| {
                let d = a + rho * b;
                d * d
            })
            .sum()
    };
    let step = (RHO_MAX - RHO_MIN) / (RHO_GRID - 1) as f64;
    let grid = |k: usize| RHO_MIN + step * k as f64;
    let best = (0..RHO_GRID)
        .map(|k| (k, objective(grid(k))))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let mut lo = grid(best.0.saturating_sub(1));
    let mut hi = grid((best.0 + 1).min(RHO_GRID - 1));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while hi - lo > RHO_TOLERANCE {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    let rho = if objective(mid) <= best.1 { mid } else { grid(best.0) };
    Ok(rho.clamp(RHO_MIN, RHO_MAX))
}

/// Fitted joint model for one week.
#[derive(Clone, Debug)]
pub struct SecondStepModel {
    pub mu_z: DVector<f64>,
    pub mu_w: DVector<f64>,
    pub sigma_zz: DMatrix<f64>,
    pub sigma_gt: DMatrix<f64>,
    pub sigma_reg: DMatrix<f64>,
    pub sigma_nat: DMatrix<f64>,
    pub rho: f64,
    pub d_ww: DVector<f64>,
    pub sigma_zw: DMatrix<f64>,
    pub sigma_ww: DMatrix<f64>,
}

impl SecondStepModel {
    pub fn from_components(c: Components, rho: f64) -> Result<Self> {
        let (sigma_zw, sigma_ww) =
            assemble_structured_cov(&c.sigma_zz, &c.sigma_gt, &c.sigma_reg, &c.sigma_nat, rho)?;
        Ok(SecondStepModel {
            mu_z: c.mu_z,
            mu_w: c.mu_w,
            sigma_zz: c.sigma_zz,
            sigma_gt: c.sigma_gt,
            sigma_reg: c.sigma_reg,
            sigma_nat: c.sigma_nat,
            rho,
            d_ww: c.d_ww,
            sigma_zw,
            sigma_ww,
        })
    }

    /// Estimate components and ρ on a training window.
    pub fn fit(window: &TrainingWindow) -> Result<Self> {
        let c = estimate_components(window)?;
        let rho = estimate_rho(&c.empirical_corr, &StructuredTemplate::new(&c)?)?;
        SecondStepModel::from_components(c, rho)
    }

    pub fn solve(&self) -> Result<ShrunkBlp> {
        ShrunkBlp::solve(&self.sigma_zz, &self.sigma_zw, &self.sigma_ww, &self.d_ww)
    }

    /// Point estimates and intervals for every pooled geography.
    pub fn predict(&self, w: &DVector<f64>, p_prev: &DVector<f64>) -> Result<(Vec<Estimate>, ShrunkBlp)> {
        let blp = self.solve()?;
        let point = blp.point(&self.mu_z, &self.mu_w, w, p_prev)?;
        let est = point
            .iter()
            .zip(blp.variance.iter())
            .map(|(p, v)| Estimate::new(*p, *v))
            .collect();
        Ok((est, blp))
    }
}

/// `p_{T−1} + μ_Z + ½Σ_ZW(½Σ_WW + ½D_WW)⁻¹(W_T − μ_W)`, clamped.
pub fn blp_estimate(model: &SecondStepModel, w: &DVector<f64>, p_prev: &DVector<f64>) -> Result<DVector<f64>> {
    let (est, _) = model.predict(w, p_prev)?;
    Ok(DVector::from_iterator(est.len(), est.iter().map(|e| e.point)))
}

/// 95% intervals around `point`.
pub fn interval_estimate(model: &SecondStepModel, point: &DVector<f64>) -> Result<Vec<(f64, f64)>> {
    let blp = model.solve()?;
    if point.len() != blp.variance.len() {
        return Err(Error::DimensionMismatch {
            expected: blp.variance.len(),
            got: point.len(),
        });
    }
    Ok(point
        .iter()
        .zip(blp.variance.iter())
        .map(|(p, v)| {
            let h = super::Z_95 * v.sqrt();
            (p - h, p + h)
        })
        .collect())
}
