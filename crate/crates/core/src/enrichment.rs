//! Regional enrichment of sparse state-level search data.
//!
//! Each region's search series is rebuilt as the population-weighted mean of
//! its member states' raw volumes. Pooled states then use a 2/3 state + 1/3
//! region blend of raw volumes before the log transform. Stand-alone states
//! keep their own series.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geo::{GeoId, GeoRegistry};
use crate::ingest::{log1p_features, TrendsData};
use crate::panel::{FeaturePanel, WeeklyPanel};

pub const STATE_WEIGHT: f64 = 2.0 / 3.0;
pub const REGION_WEIGHT: f64 = 1.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnrichmentFlag {
    Enriched,
    Raw,
}

#[derive(Clone, Debug)]
pub struct EnrichedState {
    pub features: FeaturePanel,
    pub flag: EnrichmentFlag,
}

pub type EnrichedFeatures = BTreeMap<GeoId, EnrichedState>;

fn term_union<'a>(panels: impl Iterator<Item = &'a WeeklyPanel>) -> Vec<String> {
    let mut terms: Vec<String> = panels.flat_map(|p| p.columns().iter().cloned()).collect();
    terms.sort();
    terms.dedup();
    terms
}

/// Population weights of a region's members, summing to one.
pub fn region_weights(registry: &GeoRegistry, region: &GeoId) -> Result<Vec<(GeoId, f64)>> {
    let members = registry.region_members(region)?;
    let pops = members
        .iter()
        .map(|m| registry.population(m))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = pops.iter().sum();
    Ok(members
        .into_iter()
        .zip(pops)
        .map(|(m, p)| (m, p / total))
        .collect())
}

/// Population-weighted regional search series, per region with members.
///
/// Members without a panel count as all-zero series. A region where no
/// member has data is an error.
pub fn reconstruct_regional_series(
    state_panels: &TrendsData,
    registry: &GeoRegistry,
) -> Result<BTreeMap<GeoId, WeeklyPanel>> {
    let mut out = BTreeMap::new();
    for region in registry.regions() {
        let weights = region_weights(registry, &region)?;
        let present: Vec<&WeeklyPanel> = weights
            .iter()
            .filter_map(|(m, _)| state_panels.get(m))
            .collect();
        let Some(first) = present.first() else {
            return Err(Error::MissingData(format!(
                "no member search data for {region}"
            )));
        };
        let index = first.index().to_vec();
        if let Some(p) = present.iter().find(|p| p.index() != index.as_slice()) {
            return Err(Error::Misaligned(format!(
                "{region}: member panels cover different weeks ({} vs {})",
                p.n_weeks(),
                index.len()
            )));
        }
        let terms = term_union(present.iter().copied());
        let mut acc = DMatrix::zeros(index.len(), terms.len());
        for (m, w) in &weights {
            if let Some(p) = state_panels.get(m) {
                let aligned = p.select_columns_zero_fill(&terms)?;
                acc += aligned.values() * *w;
            }
        }
        out.insert(region, WeeklyPanel::new(index, terms, acc)?);
    }
    Ok(out)
}

/// Blend a state's raw volumes with its region's: 2/3 state + 1/3 region.
/// Stand-alone states are returned unchanged.
pub fn blend_state_regional(
    state: &WeeklyPanel,
    region: &WeeklyPanel,
    geo: &GeoId,
    registry: &GeoRegistry,
) -> Result<WeeklyPanel> {
    if registry.is_standalone(geo) {
        return Ok(state.clone());
    }
    if state.index() != region.index() {
        return Err(Error::Misaligned(format!(
            "{geo}: state and region series cover different weeks"
        )));
    }
    let terms = term_union([state, region].into_iter());
    let s = state.select_columns_zero_fill(&terms)?;
    let r = region.select_columns_zero_fill(&terms)?;
    let blended = s.values() * STATE_WEIGHT + r.values() * REGION_WEIGHT;
    WeeklyPanel::new(state.index().to_vec(), terms, blended)
}

/// Log-scale first-step features for every state with search data.
///
/// With `enabled`, pooled states get the blended series; otherwise, and
/// always for stand-alone states, the raw state series is used.
pub fn enrich_states(
    state_panels: &TrendsData,
    registry: &GeoRegistry,
    enabled: bool,
) -> Result<EnrichedFeatures> {
    let regional = if enabled {
        Some(reconstruct_regional_series(state_panels, registry)?)
    } else {
        None
    };
    let mut out = EnrichedFeatures::new();
    for geo in registry.states() {
        let Some(raw) = state_panels.get(geo) else {
            continue;
        };
        let (panel, flag) = match &regional {
            Some(reg) if !registry.is_standalone(geo) => {
                let region = &reg[registry.region_of(geo)?];
                (
                    blend_state_regional(raw, region, geo, registry)?,
                    EnrichmentFlag::Enriched,
                )
            }
            _ => (raw.clone(), EnrichmentFlag::Raw),
        };
        out.insert(
            geo.clone(),
            EnrichedState {
                features: log1p_features(&panel)?,
                flag,
            },
        );
    }
    Ok(out)
}
