//! First-step raw estimates at state, regional and national resolution.
//!
//! Every model is refit each week on the trailing window of logit %ILI with
//! log search volumes as features. The national model also sees the last
//! `ar_lags` weeks of its own logit %ILI.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enrichment::{enrich_states, reconstruct_regional_series, EnrichmentFlag};
use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::geo::{GeoId, GeoRegistry};
use crate::ingest::{clamp_percent, inv_logit, log1p_features, logit, TrendsData};
use crate::lasso::{fit_cv, predict, DesignMatrix, SolverOptions, DEFAULT_FOLDS};
use crate::panel::{FeaturePanel, WeeklyPanel};

pub const DEFAULT_WINDOW: usize = 104;
pub const DEFAULT_AR_LAGS: usize = 52;

#[derive(Clone, Copy, Debug)]
pub struct FirstStepConfig {
    pub window: usize,
    /// Autoregressive logit-%ILI lags added to the national model.
    pub ar_lags: usize,
    pub folds: usize,
    pub solver: SolverOptions,
}

impl Default for FirstStepConfig {
    fn default() -> Self {
        FirstStepConfig {
            window: DEFAULT_WINDOW,
            ar_lags: DEFAULT_AR_LAGS,
            folds: DEFAULT_FOLDS,
            solver: SolverOptions::default(),
        }
    }
}

impl FirstStepConfig {
    /// Weeks of %ILI needed before the first estimated week.
    pub fn national_history(&self) -> usize {
        self.window + self.ar_lags
    }
}

/// Latest weeks a single fit read, for the look-ahead audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitAudit {
    pub geo: GeoId,
    pub week: EpiWeek,
    pub ili_through: EpiWeek,
    pub features_through: Option<EpiWeek>,
}

impl FitAudit {
    /// %ILI must stop before the estimated week; search data may reach it.
    pub fn check(&self) -> Result<()> {
        if self.ili_through >= self.week {
            return Err(Error::LookAhead(format!(
                "{} at {} read %ILI through {}",
                self.geo, self.week, self.ili_through
            )));
        }
        if let Some(f) = self.features_through {
            if f > self.week {
                return Err(Error::LookAhead(format!(
                    "{} at {} read search data through {f}",
                    self.geo, self.week
                )));
            }
        }
        Ok(())
    }
}

/// Raw estimate for one (geo, week).
#[derive(Clone, Debug)]
pub struct RawEstimate {
    pub percent: f64,
    pub audit: FitAudit,
}

/// All panels the first step reads, on log scale where applicable.
#[derive(Clone, Debug)]
pub struct FirstStepInputs {
    /// %ILI for states, regions and the nation, consecutive weeks.
    pub ili: WeeklyPanel,
    /// Logit of `ili`, same shape.
    pub ili_logit: WeeklyPanel,
    pub state_features: BTreeMap<GeoId, FeaturePanel>,
    pub enrichment_flags: BTreeMap<GeoId, EnrichmentFlag>,
    pub regional_features: BTreeMap<GeoId, FeaturePanel>,
    pub national_features: Option<FeaturePanel>,
}

impl FirstStepInputs {
    pub fn prepare(
        ili: WeeklyPanel,
        trends: &TrendsData,
        registry: &GeoRegistry,
        enrichment: bool,
    ) -> Result<Self> {
        if !ili.is_consecutive() {
            return Err(Error::Misaligned("%ILI panel has gaps between weeks".into()));
        }
        let ili_logit = WeeklyPanel::new(
            ili.index().to_vec(),
            ili.columns().to_vec(),
            DMatrix::from_iterator(
                ili.n_weeks(),
                ili.n_cols(),
                ili.values().iter().map(|v| logit(*v)).collect::<Result<Vec<_>>>()?,
            ),
        )?;
        let states: TrendsData = trends
            .iter()
            .filter(|(g, _)| registry.is_state(g))
            .map(|(g, p)| (g.clone(), p.clone()))
            .collect();
        let enriched = enrich_states(&states, registry, enrichment && !states.is_empty())?;
        let regional = if states.is_empty() {
            BTreeMap::new()
        } else {
            reconstruct_regional_series(&states, registry)?
                .into_iter()
                .map(|(g, p)| Ok((g, log1p_features(&p)?)))
                .collect::<Result<_>>()?
        };
        let national_features = trends
            .get(&GeoId::national())
            .map(log1p_features)
            .transpose()?;
        let mut state_features = BTreeMap::new();
        let mut enrichment_flags = BTreeMap::new();
        for (g, e) in enriched {
            enrichment_flags.insert(g.clone(), e.flag);
            state_features.insert(g, e.features);
        }
        Ok(FirstStepInputs {
            ili,
            ili_logit,
            state_features,
            enrichment_flags,
            regional_features: regional,
            national_features,
        })
    }

    fn target(&self, geo: &GeoId) -> Result<DVector<f64>> {
        self.ili_logit
            .column(geo.as_str())
            .ok_or_else(|| Error::MissingData(format!("no %ILI series for {geo}")))
    }
}

fn feature_row(panel: &WeeklyPanel, week: EpiWeek, out: &mut [f64]) -> Option<EpiWeek> {
    match panel.position(week) {
        Some(i) => {
            for (j, v) in out.iter_mut().enumerate() {
                *v = panel.values()[(i, j)];
            }
            Some(week)
        }
        None => {
            out.fill(0.0);
            None
        }
    }
}

/// Fit on `[week − window, week)` and predict `week`. Search weeks absent
/// from `features` are zero rows.
fn fit_window(
    geo: &GeoId,
    index: &[EpiWeek],
    target: &DVector<f64>,
    features: Option<&WeeklyPanel>,
    lags: usize,
    week: EpiWeek,
    cfg: &FirstStepConfig,
) -> Result<RawEstimate> {
    let needed = cfg.window + lags;
    let first = week.offset(-(needed as i64));
    let insufficient = |available: usize| Error::InsufficientHistory {
        geo: geo.to_string(),
        week,
        needed,
        available,
    };
    let Some(start) = index.first().map(|w| w.weeks_until(&first)) else {
        return Err(insufficient(0));
    };
    if start < 0 {
        let available = index.first().map_or(0, |w| w.weeks_until(&week).max(0)) as usize;
        return Err(insufficient(available));
    }
    let start = start as usize;
    if start + needed > index.len() {
        return Err(insufficient(index.len().saturating_sub(start)));
    }
    let n_search = features.map_or(0, |f| f.n_cols());
    let p = n_search + lags;
    let row0 = start + lags;
    let mut x = DMatrix::zeros(cfg.window, p);
    let mut y = DVector::zeros(cfg.window);
    let mut row = vec![0.0; p];
    let mut features_through = None;
    let mut fill = |t: usize, w: EpiWeek, row: &mut [f64]| {
        if let Some(f) = features {
            if let Some(seen) = feature_row(f, w, &mut row[..n_search]) {
                features_through = features_through.max(Some(seen));
            }
        }
        for l in 1..=lags {
            row[n_search + l - 1] = target[t - l];
        }
    };
    for r in 0..cfg.window {
        let t = row0 + r;
        fill(t, index[t], &mut row);
        x.row_mut(r).copy_from_slice(&row);
        y[r] = target[t];
    }
    let t_now = row0 + cfg.window;
    fill(t_now, week, &mut row);
    let ili_through = index[t_now - 1];

    let yhat = if p == 0 {
        y.mean()
    } else {
        let design = DesignMatrix::new(x, y)?;
        let folds = cfg.folds.min(cfg.window);
        let (fit, _) = fit_cv(&design, folds, &cfg.solver)?;
        predict(&fit, &row)?
    };
    Ok(RawEstimate {
        percent: clamp_percent(inv_logit(yhat)),
        audit: FitAudit {
            geo: geo.clone(),
            week,
            ili_through,
            features_through,
        },
    })
}

/// State-level raw estimate from that state's (possibly enriched) features.
pub fn fit_state_first_step(
    geo: &GeoId,
    inputs: &FirstStepInputs,
    week: EpiWeek,
    cfg: &FirstStepConfig,
) -> Result<RawEstimate> {
    let target = inputs.target(geo)?;
    let features = inputs.state_features.get(geo).map(|f| f.panel());
    fit_window(geo, inputs.ili.index(), &target, features, 0, week, cfg)
        .map_err(|e| e.at(geo.as_str(), week))
}

/// Regional raw estimate from the reconstructed regional search series.
pub fn fit_regional_first_step(
    region: &GeoId,
    inputs: &FirstStepInputs,
    week: EpiWeek,
    cfg: &FirstStepConfig,
) -> Result<RawEstimate> {
    let target = inputs.target(region)?;
    let features = inputs.regional_features.get(region).map(|f| f.panel());
    fit_window(region, inputs.ili.index(), &target, features, 0, week, cfg)
        .map_err(|e| e.at(region.as_str(), week))
}

/// National raw estimate: search features plus autoregressive lags.
pub fn fit_national_first_step(
    inputs: &FirstStepInputs,
    week: EpiWeek,
    cfg: &FirstStepConfig,
) -> Result<RawEstimate> {
    let us = GeoId::national();
    let target = inputs.target(&us)?;
    let features = inputs.national_features.as_ref().map(|f| f.panel());
    fit_window(&us, inputs.ili.index(), &target, features, cfg.ar_lags, week, cfg)
        .map_err(|e| e.at(us.as_str(), week))
}

/// Raw estimates for one week.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstStepOutput {
    pub week: EpiWeek,
    pub state_raw: BTreeMap<GeoId, f64>,
    pub regional: BTreeMap<GeoId, f64>,
    pub national: Option<f64>,
}

/// Rolling first-step estimates: one row per week, one column per geography
/// (states, then regions, then the nation).
#[derive(Clone, Debug, PartialEq)]
pub struct FirstStepPanel {
    pub estimates: WeeklyPanel,
    pub audits: Vec<FitAudit>,
}

impl FirstStepPanel {
    pub fn get(&self, week: EpiWeek, geo: &GeoId) -> Option<f64> {
        self.estimates.get(week, geo.as_str())
    }

    pub fn output(&self, week: EpiWeek) -> Option<FirstStepOutput> {
        let i = self.estimates.position(week)?;
        let mut out = FirstStepOutput {
            week,
            state_raw: BTreeMap::new(),
            regional: BTreeMap::new(),
            national: None,
        };
        for (j, c) in self.estimates.columns().iter().enumerate() {
            let g = GeoId::new(c.as_str());
            let v = self.estimates.values()[(i, j)];
            if g.is_national() {
                out.national = Some(v);
            } else if g.is_region() {
                out.regional.insert(g, v);
            } else {
                out.state_raw.insert(g, v);
            }
        }
        Some(out)
    }

    /// Rows up to and including `week`.
    pub fn through(&self, week: EpiWeek) -> FirstStepPanel {
        let estimates = self.estimates.before(week.succ());
        FirstStepPanel {
            estimates,
            audits: self.audits.iter().filter(|a| a.week <= week).cloned().collect(),
        }
    }

    pub fn check_audits(&self) -> Result<usize> {
        for a in &self.audits {
            a.check()?;
        }
        Ok(self.audits.len())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["year", "week", "geo", "estimate", "ili_through", "features_through"])
            .map_err(|e| Error::csv(path, e))?;
        let est = &self.estimates;
        let audit: BTreeMap<(EpiWeek, &str), &FitAudit> = self
            .audits
            .iter()
            .map(|a| ((a.week, a.geo.as_str()), a))
            .collect();
        for (i, week) in est.index().iter().enumerate() {
            for (j, geo) in est.columns().iter().enumerate() {
                let a = audit.get(&(*week, geo.as_str()));
                w.write_record([
                    week.year.to_string(),
                    week.week.to_string(),
                    geo.clone(),
                    format!("{}", est.values()[(i, j)]),
                    a.map_or(String::new(), |a| a.ili_through.to_string()),
                    a.and_then(|a| a.features_through)
                        .map_or(String::new(), |f| f.to_string()),
                ])
                .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            year: i32,
            week: u32,
            geo: String,
            estimate: f64,
            #[serde(default)]
            ili_through: Option<String>,
            #[serde(default)]
            features_through: Option<String>,
        }
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut cells: BTreeMap<EpiWeek, BTreeMap<String, f64>> = BTreeMap::new();
        let mut columns: Vec<String> = Vec::new();
        let mut audits = Vec::new();
        let parse_week = |s: &Option<String>| -> Result<Option<EpiWeek>> {
            match s.as_deref() {
                None | Some("") => Ok(None),
                Some(s) => s.parse().map(Some),
            }
        };
        for row in r.deserialize() {
            let row: Row = row.map_err(|e| Error::csv(path, e))?;
            let week = EpiWeek::new(row.year, row.week)?;
            if !columns.contains(&row.geo) {
                columns.push(row.geo.clone());
            }
            if let Some(ili_through) = parse_week(&row.ili_through)? {
                audits.push(FitAudit {
                    geo: GeoId::new(row.geo.as_str()),
                    week,
                    ili_through,
                    features_through: parse_week(&row.features_through)?,
                });
            }
            if cells.entry(week).or_default().insert(row.geo.clone(), row.estimate).is_some() {
                return Err(Error::invalid(
                    "first-step cache",
                    format!("duplicate row {week} {}", row.geo),
                ));
            }
        }
        let index: Vec<EpiWeek> = cells.keys().copied().collect();
        let mut values = DMatrix::zeros(index.len(), columns.len());
        for (i, row) in cells.values().enumerate() {
            for (j, c) in columns.iter().enumerate() {
                values[(i, j)] = *row.get(c).ok_or_else(|| {
                    Error::MissingData(format!("first-step cache lacks {c} at {}", index[i]))
                })?;
            }
        }
        Ok(FirstStepPanel {
            estimates: WeeklyPanel::new(index, columns, values)?,
            audits,
        })
    }
}

/// Which first-step model a column uses.
fn model_geos(inputs: &FirstStepInputs, registry: &GeoRegistry) -> Vec<GeoId> {
    let cols = inputs.ili.columns();
    registry
        .all_ili_geos()
        .into_iter()
        .filter(|g| cols.iter().any(|c| c == g.as_str()))
        .collect()
}

/// Refit every model for each requested week on its trailing window.
pub fn first_step_panel(
    inputs: &FirstStepInputs,
    registry: &GeoRegistry,
    weeks: &[EpiWeek],
    cfg: &FirstStepConfig,
) -> Result<FirstStepPanel> {
    let geos = model_geos(inputs, registry);
    let tasks: Vec<(EpiWeek, &GeoId)> = weeks
        .iter()
        .flat_map(|w| geos.iter().map(move |g| (*w, g)))
        .collect();
    let results: Vec<RawEstimate> = tasks
        .par_iter()
        .map(|(week, geo)| {
            if geo.is_national() {
                fit_national_first_step(inputs, *week, cfg)
            } else if geo.is_region() {
                fit_regional_first_step(geo, inputs, *week, cfg)
            } else {
                fit_state_first_step(geo, inputs, *week, cfg)
            }
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(weeks.len(), geos.len());
    for (k, r) in results.iter().enumerate() {
        values[(k / geos.len(), k % geos.len())] = r.percent;
    }
    let estimates = WeeklyPanel::new(
        weeks.to_vec(),
        geos.iter().map(|g| g.to_string()).collect(),
        values,
    )?;
    Ok(FirstStepPanel {
        estimates,
        audits: results.into_iter().map(|r| r.audit).collect(),
    })
}
