//! Choice of stand-alone geographies by multiple correlation.
//!
//! Each contiguous state's %ILI is regressed (with intercept) on every other
//! contiguous state, every other region and the nation over the in-sample
//! period. The non-contiguous states plus the five lowest-R² states are
//! modelled stand-alone.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::geo::{GeoId, GeoRegistry};
use crate::linalg::{least_squares, with_intercept};
use crate::panel::WeeklyPanel;

/// Number of contiguous states set apart besides the non-contiguous ones.
pub const LOWEST_COUNT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct R2 {
    pub r2: f64,
    /// The design was rank deficient and the minimum-norm solution was used.
    pub rank_deficient: bool,
}

fn is_contiguous_state(registry: &GeoRegistry, g: &GeoId) -> bool {
    registry.is_state(g) && !g.is_noncontiguous() && !g.is_excluded()
}

/// Predictor columns used for `geo`, in registry order.
pub fn routing_predictors(geo: &GeoId, ili: &WeeklyPanel, registry: &GeoRegistry) -> Result<Vec<GeoId>> {
    let own_region = registry.region_of(geo)?;
    let present = |g: &GeoId| ili.column_position(g.as_str()).is_some();
    let mut out: Vec<GeoId> = registry
        .states()
        .iter()
        .filter(|g| *g != geo && is_contiguous_state(registry, g) && present(g))
        .cloned()
        .collect();
    out.extend(
        registry
            .regions()
            .into_iter()
            .filter(|r| r != own_region && present(r)),
    );
    let us = GeoId::national();
    if present(&us) {
        out.push(us);
    }
    Ok(out)
}

/// R² of the OLS regression of `geo` on its routing predictors. A constant
/// target is fully explained by the intercept and scores 1.
pub fn multiple_correlation_r2(geo: &GeoId, ili: &WeeklyPanel, registry: &GeoRegistry) -> Result<R2> {
    let y = ili
        .column(geo.as_str())
        .ok_or_else(|| Error::MissingData(format!("no %ILI series for {geo}")))?;
    let preds = routing_predictors(geo, ili, registry)?;
    let cols: Vec<DVector<f64>> = preds
        .iter()
        .map(|g| ili.column(g.as_str()).expect("predictor present"))
        .collect();
    let x = if cols.is_empty() {
        DMatrix::zeros(y.len(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    let x = with_intercept(&x);
    if x.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "routing regression for {geo} has {} rows",
            x.nrows()
        )));
    }
    let ls = least_squares(&x, &y)?;
    if ls.rank_deficient {
        log::warn!("routing regression for {geo} is rank deficient; using minimum-norm fit");
    }
    let resid = &y - &x * &ls.coefficients;
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if sst == 0.0 {
        1.0
    } else {
        (1.0 - resid.norm_squared() / sst).clamp(0.0, 1.0)
    };
    Ok(R2 {
        r2,
        rank_deficient: ls.rank_deficient,
    })
}

/// `{HI, AK} ∩ registry` plus the five contiguous states with the lowest
/// R². Values equal to twelve decimals tie, and ties go to the
/// lexicographically smaller code.
pub fn select_standalone(r2: &BTreeMap<GeoId, f64>, registry: &GeoRegistry) -> Result<BTreeSet<GeoId>> {
    let mut candidates: Vec<(&GeoId, f64)> = r2
        .iter()
        .filter(|(g, _)| is_contiguous_state(registry, g))
        .map(|(g, v)| (g, *v))
        .collect();
    if candidates.len() < LOWEST_COUNT {
        return Err(Error::InsufficientData(format!(
            "{} routing candidates, need {LOWEST_COUNT}",
            candidates.len()
        )));
    }
    let key = |v: f64| (v * 1e12).round();
    candidates.sort_by(|a, b| key(a.1).total_cmp(&key(b.1)).then_with(|| a.0.cmp(b.0)));
    let mut out: BTreeSet<GeoId> = registry
        .states()
        .iter()
        .filter(|g| g.is_noncontiguous())
        .cloned()
        .collect();
    out.extend(candidates.iter().take(LOWEST_COUNT).map(|(g, _)| (*g).clone()));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingRow {
    pub geo: GeoId,
    /// Absent for geographies that are stand-alone by definition.
    pub r2: Option<f64>,
    pub selected: bool,
}

/// Rows of `ili` within `[start, end]`.
pub fn in_sample(ili: &WeeklyPanel, start: EpiWeek, end: EpiWeek) -> Result<WeeklyPanel> {
    let rows: Vec<usize> = (0..ili.n_weeks())
        .filter(|i| (start..=end).contains(&ili.index()[*i]))
        .collect();
    let index = rows.iter().map(|i| ili.index()[*i]).collect();
    let values = ili.values().select_rows(&rows);
    WeeklyPanel::new(index, ili.columns().to_vec(), values)
}

/// Routing over every state in `ili` (already restricted to the in-sample
/// period).
pub fn route(ili: &WeeklyPanel, registry: &GeoRegistry) -> Result<Vec<RoutingRow>> {
    let contiguous: Vec<&GeoId> = registry
        .states()
        .iter()
        .filter(|g| is_contiguous_state(registry, g))
        .collect();
    let r2: BTreeMap<GeoId, f64> = contiguous
        .par_iter()
        .map(|g| Ok(((*g).clone(), multiple_correlation_r2(g, ili, registry)?.r2)))
        .collect::<Result<_>>()?;
    let selected = select_standalone(&r2, registry)?;
    Ok(registry
        .states()
        .iter()
        .map(|g| RoutingRow {
            geo: g.clone(),
            r2: r2.get(g).copied(),
            selected: selected.contains(g),
        })
        .collect())
}

pub fn write_routing_csv(rows: &[RoutingRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["geo", "r2", "selected"])
        .map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record([
            r.geo.to_string(),
            r.r2.map_or(String::new(), |v| format!("{v}")),
            u8::from(r.selected).to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The selected set from a routing file.
pub fn read_routing_csv(path: impl AsRef<Path>) -> Result<BTreeSet<GeoId>> {
    #[derive(Deserialize)]
    struct Row {
        geo: String,
        selected: u8,
    }
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = BTreeSet::new();
    for row in r.deserialize() {
        let row: Row = row.map_err(|e| Error::csv(path, e))?;
        match row.selected {
            0 => {}
            1 => {
                out.insert(GeoId::new(row.geo));
            }
            v => return Err(Error::invalid("routing file", format!("selected = {v}"))),
        }
    }
    Ok(out)
}
