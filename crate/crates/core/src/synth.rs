//! Seeded synthetic panels in the ingestion file formats.
//!
//! The latent logit %ILI of each state is a shared seasonal curve plus a
//! state offset plus a spatially correlated AR(1) deviation. Pooled states
//! share equicorrelated innovations; isolated states get independent ones.
//! Each search term is a noisy power of the latent odds, rescaled so its
//! maximum is 100, rounded, and then zeroed at random.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestConfig, Routing, WeekRange};
use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::geo::{GeoId, GeoRegistry, Validation};
use crate::ingest::{inv_logit, logit, write_ili_csv, write_trends_csv, TrendsData};
use crate::panel::WeeklyPanel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub states: usize,
    pub regions: usize,
    /// States with independent dynamics, flagged stand-alone in the registry.
    pub isolated: usize,
    pub weeks: usize,
    pub start: EpiWeek,
    /// Correlation of AR(1) innovations between pooled states.
    pub spatial_corr: f64,
    pub ar_coef: f64,
    pub innovation_sd: f64,
    pub seasonal_amplitude: f64,
    pub baseline_logit: f64,
    pub terms: usize,
    /// Standard deviation of the log-scale noise on each search term.
    pub search_noise: f64,
    /// Probability that a state search cell is zeroed.
    pub zero_inflation: f64,
    pub national_zero_inflation: f64,
    /// Per-state overrides of `zero_inflation`, as `(state index, rate)`.
    pub zero_inflation_overrides: Vec<(usize, f64)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            states: 20,
            regions: 4,
            isolated: 2,
            weeks: 260,
            start: EpiWeek { year: 2010, week: 40 },
            spatial_corr: 0.6,
            ar_coef: 0.8,
            innovation_sd: 0.15,
            seasonal_amplitude: 0.9,
            baseline_logit: -3.7,
            terms: 8,
            search_noise: 0.15,
            zero_inflation: 0.02,
            national_zero_inflation: 0.0,
            zero_inflation_overrides: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.states == 0 || self.regions == 0 || self.regions > self.states {
            return bad("need 1 <= regions <= states");
        }
        if self.regions > crate::geo::N_REGIONS {
            return bad("at most 10 regions");
        }
        if self.isolated > self.states {
            return bad("isolated exceeds states");
        }
        if self.weeks < 3 || self.terms == 0 {
            return bad("need at least 3 weeks and 1 term");
        }
        if !(0.0..1.0).contains(&self.spatial_corr) || !(0.0..1.0).contains(&self.ar_coef.abs()) {
            return bad("spatial_corr and |ar_coef| must lie in [0, 1)");
        }
        let rates = [self.zero_inflation, self.national_zero_inflation]
            .into_iter()
            .chain(self.zero_inflation_overrides.iter().map(|o| o.1));
        for r in rates {
            if !(0.0..=1.0).contains(&r) {
                return bad("zero-inflation rates must lie in [0, 1]");
            }
        }
        if self.zero_inflation_overrides.iter().any(|o| o.0 >= self.states) {
            return bad("zero-inflation override for unknown state");
        }
        if !(self.innovation_sd >= 0.0 && self.search_noise >= 0.0) {
            return bad("noise levels must be nonnegative");
        }
        Ok(())
    }

    pub fn state_code(i: usize) -> String {
        format!("S{:02}", i + 1)
    }
}

/// Generated panels and the registry they refer to.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub registry: GeoRegistry,
    pub ili: WeeklyPanel,
    pub trends: TrendsData,
    /// Latent logit %ILI per state (weeks × states).
    pub latent: DMatrix<f64>,
}

fn term_volumes(
    rng: &mut ChaCha20Rng,
    latent: &[f64],
    terms: usize,
    noise: f64,
    zero_rate: f64,
) -> DMatrix<f64> {
    let n = latent.len();
    let mean = latent.iter().sum::<f64>() / n as f64;
    let mut out = DMatrix::zeros(n, terms);
    for k in 0..terms {
        let loading: f64 = rng.random_range(0.6..1.4);
        let raw: Vec<f64> = latent
            .iter()
            .map(|x| {
                let e: f64 = rng.sample(StandardNormal);
                (loading * (x - mean) + noise * e).exp()
            })
            .collect();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        for (t, r) in raw.iter().enumerate() {
            let v = (100.0 * r / max).round();
            out[(t, k)] = if rng.random::<f64>() < zero_rate { 0.0 } else { v };
        }
    }
    out
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let s = cfg.states;
    let codes: Vec<String> = (0..s).map(SynthConfig::state_code).collect();
    let isolated: BTreeSet<usize> = (s - cfg.isolated..s).collect();
    let pops: Vec<f64> = (0..s).map(|_| rng.random_range(5e5..1e7f64).round()).collect();

    let mut reg_csv = String::from("geo,region,population,standalone\n");
    for i in 0..s {
        reg_csv.push_str(&format!(
            "{},R{},{},{}\n",
            codes[i],
            1 + i % cfg.regions,
            pops[i],
            u8::from(isolated.contains(&i))
        ));
    }
    let registry = GeoRegistry::from_reader(reg_csv.as_bytes(), Validation::Partial)?;

    // latent field
    let offsets: Vec<f64> = (0..s).map(|_| 0.25 * rng.sample::<f64, _>(StandardNormal)).collect();
    let phase: f64 = rng.random_range(0.0..52.0);
    let seasons = cfg.weeks / 52 + 2;
    let amp: Vec<f64> = (0..seasons).map(|_| rng.random_range(0.7..1.3)).collect();
    let innov_sd = cfg.innovation_sd * (1.0 - cfg.ar_coef * cfg.ar_coef).sqrt();
    let shared = Normal::new(0.0, 1.0).expect("unit normal");
    let mut dev = DVector::<f64>::zeros(s);
    for i in 0..s {
        dev[i] = cfg.innovation_sd * rng.sample::<f64, _>(StandardNormal);
    }
    let mut latent = DMatrix::zeros(cfg.weeks, s);
    let (a, b) = (cfg.spatial_corr.sqrt(), (1.0 - cfg.spatial_corr).sqrt());
    for t in 0..cfg.weeks {
        let common = shared.sample(&mut rng);
        for i in 0..s {
            let own: f64 = rng.sample(StandardNormal);
            let e = if isolated.contains(&i) { own } else { a * common + b * own };
            dev[i] = cfg.ar_coef * dev[i] + innov_sd * e;
            let season = amp[t / 52] * cfg.seasonal_amplitude * (2.0 * PI * (t as f64 - phase) / 52.18).cos();
            latent[(t, i)] = cfg.baseline_logit + offsets[i] + season + dev[i];
        }
    }

    let index: Vec<EpiWeek> = (0..cfg.weeks as i64).map(|k| cfg.start.offset(k)).collect();
    let state_pct = latent.map(inv_logit);
    let regions = registry.regions();
    let mut cols: Vec<String> = codes.clone();
    cols.extend(regions.iter().map(|r| r.to_string()));
    cols.push(GeoId::national().to_string());
    let mut ili = DMatrix::zeros(cfg.weeks, cols.len());
    ili.columns_mut(0, s).copy_from(&state_pct);
    let weighted = |members: &[usize], t: usize| -> f64 {
        let total: f64 = members.iter().map(|i| pops[*i]).sum();
        members.iter().map(|i| pops[*i] * state_pct[(t, *i)]).sum::<f64>() / total
    };
    for (r, region) in regions.iter().enumerate() {
        let members: Vec<usize> = registry
            .region_members(region)?
            .iter()
            .map(|g| codes.iter().position(|c| c == g.as_str()).expect("member"))
            .collect();
        for t in 0..cfg.weeks {
            ili[(t, s + r)] = weighted(&members, t);
        }
    }
    let everyone: Vec<usize> = (0..s).collect();
    for t in 0..cfg.weeks {
        ili[(t, cols.len() - 1)] = weighted(&everyone, t);
    }
    let ili = WeeklyPanel::new(index.clone(), cols, ili)?;

    let term_names: Vec<String> = (0..cfg.terms).map(|k| format!("term{:02}", k + 1)).collect();
    let mut trends = TrendsData::new();
    for i in 0..s {
        let rate = cfg
            .zero_inflation_overrides
            .iter()
            .rev()
            .find(|o| o.0 == i)
            .map_or(cfg.zero_inflation, |o| o.1);
        let col: Vec<f64> = latent.column(i).iter().copied().collect();
        let v = term_volumes(&mut rng, &col, cfg.terms, cfg.search_noise, rate);
        trends.insert(GeoId::new(codes[i].as_str()), WeeklyPanel::new(index.clone(), term_names.clone(), v)?);
    }
    let national: Vec<f64> = ili
        .column(crate::geo::NATIONAL)
        .expect("national column")
        .iter()
        .map(|p| logit(*p))
        .collect::<Result<_>>()?;
    let v = term_volumes(&mut rng, &national, cfg.terms, cfg.search_noise, cfg.national_zero_inflation);
    trends.insert(GeoId::national(), WeeklyPanel::new(index, term_names, v)?);

    Ok(SynthData {
        registry,
        ili,
        trends,
        latent,
    })
}

/// Paths written by [`write_synthetic`].
#[derive(Clone, Debug)]
pub struct SynthFiles {
    pub ili: PathBuf,
    pub trends_dir: PathBuf,
    pub registry: PathBuf,
}

/// Writes `ili.csv`, `trends/states.csv`, `trends/national.csv` and
/// `registry.csv` into `dir`.
pub fn write_synthetic(data: &SynthData, dir: impl AsRef<Path>) -> Result<SynthFiles> {
    let dir = dir.as_ref();
    let trends_dir = dir.join("trends");
    fs::create_dir_all(&trends_dir).map_err(|e| Error::io(&trends_dir, e))?;
    let files = SynthFiles {
        ili: dir.join("ili.csv"),
        trends_dir: trends_dir.clone(),
        registry: dir.join("registry.csv"),
    };
    write_ili_csv(&data.ili, &files.ili)?;
    let (national, states): (TrendsData, TrendsData) =
        data.trends.clone().into_iter().partition(|(g, _)| g.is_national());
    write_trends_csv(&states, trends_dir.join("states.csv"))?;
    write_trends_csv(&national, trends_dir.join("national.csv"))?;
    data.registry.write_csv(&files.registry)?;
    Ok(files)
}

/// Backtest config for a panel written by [`write_synthetic`], with paths
/// relative to that directory. The range starts once the national model
/// has `window + ar_lags` weeks and the second step a full window of
/// first-step estimates.
pub fn synthetic_backtest_config(data: &SynthData, window: usize, ar_lags: usize) -> Result<BacktestConfig> {
    let index = data.ili.index();
    let first = 2 * window + ar_lags.max(2);
    if first >= index.len() {
        return Err(Error::Config(format!(
            "{} weeks cannot cover two windows of {window} plus {ar_lags} lags",
            index.len()
        )));
    }
    let range = WeekRange {
        start: index[first],
        end: index[index.len() - 1],
    };
    let mut cfg = BacktestConfig::new("ili.csv".into(), "trends".into(), range);
    cfg.registry = Some("registry.csv".into());
    cfg.routing = Routing::Registry;
    cfg.window = window;
    cfg.ar_lags = ar_lags;
    cfg.out_dir = Some("out".into());
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_trends_dir, parse_ili_csv};

    #[test]
    fn same_seed_same_files() {
        let cfg = SynthConfig {
            weeks: 60,
            states: 6,
            regions: 2,
            isolated: 1,
            ..Default::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_synthetic(&generate(&cfg).unwrap(), d1.path()).unwrap();
        write_synthetic(&generate(&cfg).unwrap(), d2.path()).unwrap();
        for f in ["ili.csv", "registry.csv", "trends/states.csv", "trends/national.csv"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
        let other = generate(&SynthConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(other.ili, generate(&cfg).unwrap().ili);
    }

    #[test]
    fn files_round_trip_through_ingestion() {
        let cfg = SynthConfig {
            weeks: 40,
            states: 5,
            regions: 2,
            isolated: 1,
            ..Default::default()
        };
        let data = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_synthetic(&data, dir.path()).unwrap();
        let reg = GeoRegistry::load_with(&files.registry, Validation::Partial).unwrap();
        assert_eq!(reg.standalone_states(), vec![GeoId::new("S05")]);
        let ili = parse_ili_csv(&files.ili, &reg).unwrap();
        assert_eq!(ili.columns().len(), 5 + 2 + 1);
        assert!(ili.values().iter().all(|v| *v > 0.0 && *v < 100.0));
        let trends = load_trends_dir(&files.trends_dir, &reg).unwrap();
        assert_eq!(trends.len(), 6);
        for p in trends.values() {
            assert!(p.values().iter().all(|v| (0.0..=100.0).contains(v) && v.fract() == 0.0));
        }
    }

    #[test]
    fn zero_inflation_rate_is_respected() {
        let cfg = SynthConfig {
            weeks: 400,
            states: 3,
            regions: 1,
            isolated: 0,
            zero_inflation: 0.0,
            zero_inflation_overrides: vec![(1, 0.78)],
            ..Default::default()
        };
        let data = generate(&cfg).unwrap();
        let frac = |g: &str| {
            let v = data.trends[&GeoId::new(g)].values();
            v.iter().filter(|x| **x == 0.0).count() as f64 / v.len() as f64
        };
        assert!((frac("S02") - 0.78).abs() < 0.03);
        assert!(frac("S01") < 0.01);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate(&SynthConfig { spatial_corr: 1.5, ..Default::default() }).is_err());
        assert!(generate(&SynthConfig { regions: 0, ..Default::default() }).is_err());
        assert!(generate(&SynthConfig { zero_inflation: -0.1, ..Default::default() }).is_err());
    }
}
