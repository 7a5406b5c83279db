//! Geography identifiers and the registry mapping states to HHS regions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// National geography code.
pub const NATIONAL: &str = "US";
/// Number of HHS regions.
pub const N_REGIONS: usize = 10;
/// Geographies with no CDC %ILI series.
pub const EXCLUDED: &[&str] = &["FL"];
/// States outside the contiguous US. Always modelled stand-alone.
pub const NONCONTIGUOUS: &[&str] = &["HI", "AK"];
/// Stand-alone set shipped with the default registry.
pub const PAPER_STANDALONE: &[&str] = &["HI", "AK", "VT", "MT", "ND", "ME", "SD"];

const DEFAULT_REGISTRY: &str = include_str!("../data/registry.csv");

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeoId(String);

impl GeoId {
    pub fn new(code: impl Into<String>) -> Self {
        GeoId(code.into().trim().to_string())
    }

    pub fn national() -> Self {
        GeoId(NATIONAL.to_string())
    }

    pub fn region(number: usize) -> Self {
        GeoId(format!("R{number}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_national(&self) -> bool {
        self.0 == NATIONAL
    }

    /// Region number 1..=10 if this is a region code.
    pub fn region_number(&self) -> Option<usize> {
        let n: usize = self.0.strip_prefix('R')?.parse().ok()?;
        (1..=N_REGIONS).contains(&n).then_some(n)
    }

    pub fn is_region(&self) -> bool {
        self.region_number().is_some()
    }

    pub fn is_excluded(&self) -> bool {
        EXCLUDED.contains(&self.0.as_str())
    }

    pub fn is_noncontiguous(&self) -> bool {
        NONCONTIGUOUS.contains(&self.0.as_str())
    }
}

impl fmt::Display for GeoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GeoId {
    fn from(s: &str) -> Self {
        GeoId::new(s)
    }
}

/// How strictly a registry file is checked on load.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    /// The full US layout: 51 state-level geographies over all 10 regions,
    /// NYC present and in the same region as NY.
    #[default]
    Full,
    /// Any non-empty set of states over a subset of the regions. Used for
    /// synthetic panels.
    Partial,
}

#[derive(Debug, Deserialize, Serialize)]
struct RegistryRow {
    geo: String,
    region: String,
    population: f64,
    standalone: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeoRegistry {
    states: Vec<GeoId>,
    region_of: BTreeMap<GeoId, GeoId>,
    population: BTreeMap<GeoId, f64>,
    standalone: BTreeSet<GeoId>,
}

impl GeoRegistry {
    /// The shipped 51-geography registry.
    pub fn paper_default() -> Self {
        Self::from_reader(DEFAULT_REGISTRY.as_bytes(), Validation::Full)
            .expect("bundled registry is valid")
    }

    pub fn from_reader<R: Read>(reader: R, validation: Validation) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            let row: RegistryRow = rec.map_err(|e| Error::Registry(e.to_string()))?;
            rows.push(row);
        }
        Self::from_rows(rows, validation)
    }

    fn from_rows(rows: Vec<RegistryRow>, validation: Validation) -> Result<Self> {
        let mut states = Vec::new();
        let mut region_of = BTreeMap::new();
        let mut population = BTreeMap::new();
        let mut standalone = BTreeSet::new();
        for row in rows {
            let geo = GeoId::new(row.geo);
            if geo.is_excluded() {
                return Err(Error::ExcludedGeography(geo.to_string()));
            }
            if geo.is_region() || geo.is_national() || geo.as_str().is_empty() {
                return Err(Error::Registry(format!(
                    "{geo} is not a state-level geography"
                )));
            }
            let region = GeoId::new(row.region);
            if !region.is_region() {
                return Err(Error::Registry(format!("unknown region {region} for {geo}")));
            }
            if !(row.population.is_finite() && row.population > 0.0) {
                return Err(Error::Registry(format!(
                    "non-positive population {} for {geo}",
                    row.population
                )));
            }
            if region_of.contains_key(&geo) {
                return Err(Error::Registry(format!("duplicate geography {geo}")));
            }
            match row.standalone {
                0 => {}
                1 => {
                    standalone.insert(geo.clone());
                }
                v => {
                    return Err(Error::Registry(format!(
                        "standalone flag for {geo} must be 0 or 1, got {v}"
                    )))
                }
            }
            region_of.insert(geo.clone(), region);
            population.insert(geo.clone(), row.population);
            states.push(geo);
        }
        let reg = GeoRegistry {
            states,
            region_of,
            population,
            standalone,
        };
        reg.validate(validation)?;
        Ok(reg)
    }

    fn validate(&self, validation: Validation) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Registry("no geographies".into()));
        }
        if validation == Validation::Partial {
            return Ok(());
        }
        if self.states.len() != 51 {
            return Err(Error::Registry(format!(
                "expected 51 state-level geographies, found {}",
                self.states.len()
            )));
        }
        let regions: BTreeSet<_> = self.region_of.values().collect();
        if regions.len() != N_REGIONS {
            return Err(Error::Registry(format!(
                "expected all {N_REGIONS} regions to have members, found {}",
                regions.len()
            )));
        }
        let nyc = GeoId::new("NYC");
        let ny = GeoId::new("NY");
        match (self.region_of.get(&nyc), self.region_of.get(&ny)) {
            (Some(a), Some(b)) if a == b => Ok(()),
            (Some(_), Some(_)) => Err(Error::Registry("NYC must share NY's region".into())),
            (None, _) => Err(Error::Registry("NYC missing".into())),
            (_, None) => Err(Error::Registry("NY missing".into())),
        }
    }

    /// Load with the full 51-geography checks.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(path, Validation::Full)
    }

    pub fn load_with(path: impl AsRef<Path>, validation: Validation) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, validation)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for geo in &self.states {
            w.serialize(RegistryRow {
                geo: geo.to_string(),
                region: self.region_of[geo].to_string(),
                population: self.population[geo],
                standalone: self.standalone.contains(geo) as u8,
            })
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// State-level geographies in registry order.
    pub fn states(&self) -> &[GeoId] {
        &self.states
    }

    pub fn is_state(&self, geo: &GeoId) -> bool {
        self.region_of.contains_key(geo)
    }

    pub fn region_of(&self, state: &GeoId) -> Result<&GeoId> {
        self.region_of
            .get(state)
            .ok_or_else(|| Error::UnknownGeography(state.to_string()))
    }

    pub fn population(&self, state: &GeoId) -> Result<f64> {
        self.population
            .get(state)
            .copied()
            .ok_or_else(|| Error::UnknownGeography(state.to_string()))
    }

    /// Regions with at least one member, in numeric order.
    pub fn regions(&self) -> Vec<GeoId> {
        let used: BTreeSet<usize> = self
            .region_of
            .values()
            .filter_map(GeoId::region_number)
            .collect();
        used.into_iter().map(GeoId::region).collect()
    }

    /// Member states of `region`, in registry order.
    pub fn region_members(&self, region: &GeoId) -> Result<Vec<GeoId>> {
        if !region.is_region() {
            return Err(Error::UnknownGeography(region.to_string()));
        }
        let members: Vec<GeoId> = self
            .states
            .iter()
            .filter(|s| &self.region_of[*s] == region)
            .cloned()
            .collect();
        if members.is_empty() {
            return Err(Error::UnknownGeography(format!("{region} has no members")));
        }
        Ok(members)
    }

    pub fn is_standalone(&self, geo: &GeoId) -> bool {
        self.standalone.contains(geo)
    }

    pub fn standalone_set(&self) -> &BTreeSet<GeoId> {
        &self.standalone
    }

    /// Stand-alone states in registry order.
    pub fn standalone_states(&self) -> Vec<GeoId> {
        self.states
            .iter()
            .filter(|s| self.standalone.contains(*s))
            .cloned()
            .collect()
    }

    /// States pooled by the joint second step, in registry order.
    pub fn joint_states(&self) -> Vec<GeoId> {
        self.states
            .iter()
            .filter(|s| !self.standalone.contains(*s))
            .cloned()
            .collect()
    }

    /// Copy of this registry with a different stand-alone set.
    pub fn with_standalone(&self, set: BTreeSet<GeoId>) -> Result<Self> {
        if let Some(g) = set.iter().find(|g| !self.is_state(g)) {
            return Err(Error::UnknownGeography(g.to_string()));
        }
        Ok(GeoRegistry {
            standalone: set,
            ..self.clone()
        })
    }

    /// Every geography code accepted in %ILI files.
    pub fn all_ili_geos(&self) -> Vec<GeoId> {
        let mut out = self.states.clone();
        out.extend(self.regions());
        out.push(GeoId::national());
        out
    }
}
