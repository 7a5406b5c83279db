//! Parsing, transforming and diagnosing weekly %ILI and search-volume panels.
//!
//! File contracts (UTF-8, header row required):
//!
//! * %ILI: `year,week,geo,ili_percent`
//! * search volumes: `year,week,geo,term,volume` with integer-like volumes in 0..=100
//!
//! Weeks are MMWR `year,week` pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::geo::{GeoId, GeoRegistry};
use crate::panel::{FeaturePanel, WeeklyPanel};

/// Floor applied to %ILI before the logit transform, in percent.
pub const ILI_FLOOR: f64 = 0.01;

/// Search panels keyed by geography (states and `US`), one column per term.
pub type TrendsData = BTreeMap<GeoId, WeeklyPanel>;

#[derive(Debug, Deserialize, Serialize)]
struct IliRow {
    year: i32,
    week: u32,
    geo: String,
    ili_percent: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct TrendsRow {
    year: i32,
    week: u32,
    geo: String,
    term: String,
    volume: f64,
}

fn check_geo(geo: &GeoId, allowed: &BTreeSet<GeoId>) -> Result<()> {
    if geo.is_excluded() {
        return Err(Error::ExcludedGeography(geo.to_string()));
    }
    if !allowed.contains(geo) {
        return Err(Error::UnknownGeography(geo.to_string()));
    }
    Ok(())
}

pub fn parse_ili_csv(path: impl AsRef<Path>, registry: &GeoRegistry) -> Result<WeeklyPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ili_reader(file, registry).map_err(|e| match e {
        Error::InvalidValue { context, message } => Error::InvalidValue {
            context: format!("{} ({context})", path.display()),
            message,
        },
        e => e,
    })
}

/// Parse %ILI rows into a panel with one column per geography present in the
/// input: registry states (all required), then regions, then `US`.
pub fn parse_ili_reader<R: Read>(reader: R, registry: &GeoRegistry) -> Result<WeeklyPanel> {
    let allowed: BTreeSet<GeoId> = registry.all_ili_geos().into_iter().collect();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut cells: BTreeMap<(EpiWeek, GeoId), f64> = BTreeMap::new();
    for (line, rec) in rdr.deserialize().enumerate() {
        let row: IliRow =
            rec.map_err(|e| Error::invalid(format!("row {}", line + 2), e.to_string()))?;
        let week = EpiWeek::new(row.year, row.week)?;
        let geo = GeoId::new(row.geo);
        check_geo(&geo, &allowed)?;
        let v = row.ili_percent;
        if !(v.is_finite() && (0.0..100.0).contains(&v)) {
            return Err(Error::invalid(
                format!("{geo} {week}"),
                format!("%ILI {v} outside [0, 100)"),
            ));
        }
        if cells.insert((week, geo.clone()), v).is_some() {
            return Err(Error::invalid(
                format!("{geo} {week}"),
                "duplicate row".to_string(),
            ));
        }
    }
    let index: Vec<EpiWeek> = cells
        .keys()
        .map(|(w, _)| *w)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let present: BTreeSet<&GeoId> = cells.keys().map(|(_, g)| g).collect();
    let columns: Vec<GeoId> = registry
        .all_ili_geos()
        .into_iter()
        .filter(|g| present.contains(g))
        .collect();
    for s in registry.states() {
        if !present.contains(s) {
            return Err(Error::MissingData(format!("no %ILI rows for {s}")));
        }
    }
    let mut values = DMatrix::zeros(index.len(), columns.len());
    for (i, w) in index.iter().enumerate() {
        for (j, g) in columns.iter().enumerate() {
            values[(i, j)] = *cells
                .get(&(*w, g.clone()))
                .ok_or_else(|| Error::MissingData(format!("%ILI for {g} at {w}")))?;
        }
    }
    WeeklyPanel::new(index, columns.iter().map(|g| g.to_string()).collect(), values)
}

pub fn write_ili_csv(panel: &WeeklyPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (i, week) in panel.index().iter().enumerate() {
        for (j, geo) in panel.columns().iter().enumerate() {
            w.serialize(IliRow {
                year: week.year,
                week: week.week,
                geo: geo.clone(),
                ili_percent: panel.values()[(i, j)],
            })
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_trends_csv(path: impl AsRef<Path>, registry: &GeoRegistry) -> Result<TrendsData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trends_readers(vec![file], registry)
}

/// Read every `*.csv` file in `dir` (sorted by name) as one search-volume table.
pub fn load_trends_dir(dir: impl AsRef<Path>, registry: &GeoRegistry) -> Result<TrendsData> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingData(format!(
            "no csv files in {}",
            dir.display()
        )));
    }
    let files = paths
        .iter()
        .map(|p| std::fs::File::open(p).map_err(|e| Error::io(p, e)))
        .collect::<Result<Vec<_>>>()?;
    parse_trends_readers(files, registry)
}

/// Build one panel per geography over the union of weeks and terms seen.
/// Weeks or terms absent for a geography are filled with 0, Google's own
/// encoding for insufficient volume.
pub fn parse_trends_readers<R: Read>(readers: Vec<R>, registry: &GeoRegistry) -> Result<TrendsData> {
    let mut allowed: BTreeSet<GeoId> = registry.states().iter().cloned().collect();
    allowed.insert(GeoId::national());
    let mut cells: BTreeMap<GeoId, BTreeMap<(EpiWeek, String), f64>> = BTreeMap::new();
    let mut weeks = BTreeSet::new();
    let mut terms = BTreeSet::new();
    for reader in readers {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (line, rec) in rdr.deserialize().enumerate() {
            let row: TrendsRow =
                rec.map_err(|e| Error::invalid(format!("row {}", line + 2), e.to_string()))?;
            let week = EpiWeek::new(row.year, row.week)?;
            let geo = GeoId::new(row.geo);
            check_geo(&geo, &allowed)?;
            let v = row.volume;
            if !(v.is_finite() && (0.0..=100.0).contains(&v)) {
                return Err(Error::invalid(
                    format!("{geo} {week} {}", row.term),
                    format!("volume {v} outside [0, 100]"),
                ));
            }
            weeks.insert(week);
            terms.insert(row.term.clone());
            if cells
                .entry(geo.clone())
                .or_default()
                .insert((week, row.term.clone()), v)
                .is_some()
            {
                return Err(Error::invalid(
                    format!("{geo} {week} {}", row.term),
                    "duplicate row",
                ));
            }
        }
    }
    let index: Vec<EpiWeek> = weeks.into_iter().collect();
    let terms: Vec<String> = terms.into_iter().collect();
    let mut out = TrendsData::new();
    for (geo, geo_cells) in cells {
        let mut values = DMatrix::zeros(index.len(), terms.len());
        for (i, w) in index.iter().enumerate() {
            for (j, t) in terms.iter().enumerate() {
                if let Some(v) = geo_cells.get(&(*w, t.clone())) {
                    values[(i, j)] = *v;
                }
            }
        }
        out.insert(geo, WeeklyPanel::new(index.clone(), terms.clone(), values)?);
    }
    Ok(out)
}

pub fn write_trends_csv(data: &TrendsData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (geo, panel) in data {
        for (i, week) in panel.index().iter().enumerate() {
            for (j, term) in panel.columns().iter().enumerate() {
                w.serialize(TrendsRow {
                    year: week.year,
                    week: week.week,
                    geo: geo.to_string(),
                    term: term.clone(),
                    volume: panel.values()[(i, j)],
                })
                .map_err(|e| Error::csv(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `ln(1 + x)` of every cell.
pub fn log1p_features(panel: &WeeklyPanel) -> Result<FeaturePanel> {
    if panel.values().iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("log1p features", "negative search volume"));
    }
    Ok(FeaturePanel::new(panel.map(f64::ln_1p)?))
}

/// Logit of a percentage, on the proportion scale. Values below
/// [`ILI_FLOOR`] (including 0) are raised to the floor; values within the
/// floor of 100 are lowered symmetrically.
pub fn logit(percent: f64) -> Result<f64> {
    if !percent.is_finite() || !(0.0..100.0).contains(&percent) {
        return Err(Error::invalid(
            "logit",
            format!("{percent} outside [0, 100)"),
        ));
    }
    let q = clamp_percent(percent) / 100.0;
    Ok((q / (1.0 - q)).ln())
}

/// Inverse of [`logit`], returning a percentage.
pub fn inv_logit(y: f64) -> f64 {
    let q = if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    };
    100.0 * q
}

/// Clamp a percentage to `[ILI_FLOOR, 100 - ILI_FLOOR]`.
pub fn clamp_percent(p: f64) -> f64 {
    p.clamp(ILI_FLOOR, 100.0 - ILI_FLOOR)
}

/// Fraction of zero cells in a raw search panel.
pub fn zero_fraction(panel: &WeeklyPanel) -> Result<f64> {
    if panel.is_empty() {
        return Err(Error::MissingData("empty search panel".into()));
    }
    let zeros = panel.values().iter().filter(|v| **v == 0.0).count();
    Ok(zeros as f64 / panel.values().len() as f64)
}

pub fn zero_fraction_report(data: &TrendsData) -> Result<BTreeMap<GeoId, f64>> {
    data.iter()
        .map(|(g, p)| Ok((g.clone(), zero_fraction(p)?)))
        .collect()
}

/// One influenza season clipped to an index: week 40 of `start_year`
/// through week 20 of the following year.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SeasonSlice {
    pub label: String,
    pub start: EpiWeek,
    pub end: EpiWeek,
    /// Row range into the index the slice was computed from.
    #[serde(skip)]
    pub rows: Range<usize>,
}

pub const SEASON_START_WEEK: u32 = 40;
pub const SEASON_END_WEEK: u32 = 20;

pub fn season_slices(index: &[EpiWeek]) -> Vec<SeasonSlice> {
    let (Some(first), Some(last)) = (index.first(), index.last()) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for year in (first.year - 1)..=last.year {
        let lo = EpiWeek {
            year,
            week: SEASON_START_WEEK,
        };
        let hi = EpiWeek {
            year: year + 1,
            week: SEASON_END_WEEK,
        };
        let start = index.partition_point(|w| *w < lo);
        let end = index.partition_point(|w| *w <= hi);
        if start < end {
            out.push(SeasonSlice {
                label: format!("{:02}-{:02}", year.rem_euclid(100), (year + 1).rem_euclid(100)),
                start: index[start],
                end: index[end - 1],
                rows: start..end,
            });
        }
    }
    out
}
