//! Rolling backtest: config, orchestration and output files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::evaluation::{
    naive_estimate, read_external_estimates, season_report, var1_estimate, write_records, write_reports,
    EstimateRecord, Report, ARGOX, NAIVE, VAR1,
};
use crate::first_step::{
    first_step_panel, FirstStepConfig, FirstStepInputs, FirstStepPanel, DEFAULT_AR_LAGS, DEFAULT_WINDOW,
};
use crate::geo::{GeoId, GeoRegistry, Validation};
use crate::ingest::{load_trends_dir, parse_ili_csv, TrendsData};
use crate::lasso::DEFAULT_FOLDS;
use crate::panel::WeeklyPanel;
use crate::routing::{in_sample, read_routing_csv, route, write_routing_csv, RoutingRow};
use crate::second_step::joint::{build_predictor_stack, JointGeometry, SecondStepModel, TrainingWindow};
use crate::second_step::standalone::{
    build_standalone_stack, standalone_conditioning, standalone_estimate, StandaloneModel, StandaloneWindow,
};
use crate::second_step::{write_diagnostics, Diagnostics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub ili: PathBuf,
    pub trends_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeekRange {
    pub start: EpiWeek,
    pub end: EpiWeek,
}

impl WeekRange {
    pub fn weeks(&self) -> Vec<EpiWeek> {
        let n = self.start.weeks_until(&self.end);
        (0..=n).map(|k| self.start.offset(k)).collect()
    }
}

/// Where the stand-alone set comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Routing {
    /// Recompute from in-sample %ILI.
    Auto,
    /// The registry's own `standalone` column.
    Registry,
    File(PathBuf),
}

impl TryFrom<String> for Routing {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Ok(match s.as_str() {
            "auto" => Routing::Auto,
            "registry" => Routing::Registry,
            "" => return Err("empty routing value".into()),
            _ => Routing::File(PathBuf::from(s)),
        })
    }
}

impl From<Routing> for String {
    fn from(r: Routing) -> String {
        r.to_string()
    }
}

impl fmt::Display for Routing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Routing::Auto => f.write_str("auto"),
            Routing::Registry => f.write_str("registry"),
            Routing::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Argox,
    Naive,
    Var1,
    /// Pre-computed estimates read from a CSV.
    External(PathBuf),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Argox => ARGOX.into(),
            Method::Naive => NAIVE.into(),
            Method::Var1 => VAR1.into(),
            Method::External(p) => p
                .file_stem()
                .map_or_else(|| "external".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            ARGOX => Ok(Method::Argox),
            NAIVE => Ok(Method::Naive),
            VAR1 => Ok(Method::Var1),
            _ => match s.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(Method::External(PathBuf::from(p))),
                _ => Err(format!("unknown method {s:?}")),
            },
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        match m {
            Method::External(p) => format!("external:{}", p.display()),
            other => other.label(),
        }
    }
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_true() -> bool {
    true
}

fn default_methods() -> Vec<Method> {
    vec![Method::Argox, Method::Naive, Method::Var1]
}

fn default_ar_lags() -> usize {
    DEFAULT_AR_LAGS
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_routing() -> Routing {
    Routing::Auto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    pub data: DataPaths,
    /// Registry CSV; the bundled US registry when absent.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default = "default_window")]
    pub window: usize,
    pub range: WeekRange,
    #[serde(default = "default_routing")]
    pub routing: Routing,
    #[serde(default = "default_true")]
    pub enrichment: bool,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Seed for the synthetic generator; the backtest itself draws nothing.
    #[serde(default)]
    pub seed: u64,
    /// Routing period for `auto`; all weeks before `range.start` when absent.
    #[serde(default)]
    pub in_sample: Option<WeekRange>,
    #[serde(default = "default_ar_lags")]
    pub ar_lags: usize,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    /// Output directory; `out` next to the config when absent.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Require the full 51-geography layout from a custom registry.
    #[serde(default)]
    pub strict_registry: bool,
}

impl BacktestConfig {
    pub fn new(ili: PathBuf, trends_dir: PathBuf, range: WeekRange) -> Self {
        BacktestConfig {
            data: DataPaths { ili, trends_dir },
            registry: None,
            window: DEFAULT_WINDOW,
            range,
            routing: Routing::Auto,
            enrichment: true,
            methods: default_methods(),
            seed: 0,
            in_sample: None,
            ar_lags: DEFAULT_AR_LAGS,
            cv_folds: DEFAULT_FOLDS,
            out_dir: None,
            strict_registry: false,
        }
    }

    /// Parse a JSON config; relative paths are taken from its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: BacktestConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        Ok(cfg.resolve(&base))
    }

    /// Absolute paths relative to `base`; `out_dir` defaults to `base/out`.
    pub fn resolve(mut self, base: &Path) -> Self {
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.data.ili = abs(&self.data.ili);
        self.data.trends_dir = abs(&self.data.trends_dir);
        self.registry = self.registry.as_deref().map(abs);
        if let Routing::File(p) = &self.routing {
            self.routing = Routing::File(abs(p));
        }
        for m in &mut self.methods {
            if let Method::External(p) = m {
                *m = Method::External(abs(p));
            }
        }
        self.out_dir = Some(self.out_dir.as_deref().map_or_else(|| base.join("out"), abs));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.window < 3 {
            return bad(format!("window must be at least 3, got {}", self.window));
        }
        if self.range.end < self.range.start {
            return bad(format!("range ends ({}) before it starts ({})", self.range.end, self.range.start));
        }
        if self.cv_folds < 2 {
            return bad(format!("cv_folds must be at least 2, got {}", self.cv_folds));
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        let labels: BTreeSet<String> = self.methods.iter().map(Method::label).collect();
        if labels.len() != self.methods.len() {
            return bad("duplicate method labels".into());
        }
        if let Some(s) = &self.in_sample {
            if s.end < s.start {
                return bad("in_sample ends before it starts".into());
            }
        }
        Ok(())
    }

    pub fn first_step(&self) -> FirstStepConfig {
        FirstStepConfig {
            window: self.window,
            ar_lags: self.ar_lags,
            folds: self.cv_folds,
            ..FirstStepConfig::default()
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Weeks that need first-step estimates: the range plus one training window.
    pub fn first_step_weeks(&self) -> Vec<EpiWeek> {
        WeekRange {
            start: self.range.start.offset(-(self.window as i64)),
            end: self.range.end,
        }
        .weeks()
    }
}

/// Registry plus panels, loaded once.
#[derive(Clone, Debug)]
pub struct BacktestData {
    pub registry: GeoRegistry,
    pub ili: WeeklyPanel,
    pub trends: TrendsData,
}

impl BacktestData {
    /// Same panels with a different stand-alone set, which also decides
    /// which states skip regional enrichment.
    pub fn with_standalone(&self, set: BTreeSet<GeoId>) -> Result<Self> {
        Ok(BacktestData {
            registry: self.registry.with_standalone(set)?,
            ili: self.ili.clone(),
            trends: self.trends.clone(),
        })
    }
}

pub fn load_registry(cfg: &BacktestConfig) -> Result<GeoRegistry> {
    match &cfg.registry {
        None => Ok(GeoRegistry::paper_default()),
        Some(p) => {
            let v = if cfg.strict_registry { Validation::Full } else { Validation::Partial };
            GeoRegistry::load_with(p, v)
        }
    }
}

pub fn load_data(cfg: &BacktestConfig) -> Result<BacktestData> {
    let registry = load_registry(cfg)?;
    let ili = parse_ili_csv(&cfg.data.ili, &registry)?;
    let trends = load_trends_dir(&cfg.data.trends_dir, &registry)?;
    Ok(BacktestData { registry, ili, trends })
}

/// Stand-alone set per the config. `auto` routes on the in-sample period.
pub fn resolve_routing(cfg: &BacktestConfig, data: &BacktestData) -> Result<(BTreeSet<GeoId>, Option<Vec<RoutingRow>>)> {
    match &cfg.routing {
        Routing::Registry => Ok((data.registry.standalone_set().clone(), None)),
        Routing::File(p) => Ok((read_routing_csv(p)?, None)),
        Routing::Auto => {
            let period = cfg.in_sample.unwrap_or(WeekRange {
                start: data.ili.index().first().copied().unwrap_or(cfg.range.start),
                end: cfg.range.start.pred(),
            });
            if period.end >= cfg.range.start {
                warn!("routing period {}..{} overlaps the backtest range", period.start, period.end);
            }
            let rows = route(&in_sample(&data.ili, period.start, period.end)?, &data.registry)?;
            let set = rows.iter().filter(|r| r.selected).map(|r| r.geo.clone()).collect();
            Ok((set, Some(rows)))
        }
    }
}

/// Latest weeks one estimate read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub week: EpiWeek,
    pub stage: String,
    pub geo: Option<GeoId>,
    pub ili_through: Option<EpiWeek>,
    pub features_through: Option<EpiWeek>,
}

impl AuditEntry {
    pub fn violation(&self) -> Option<String> {
        let mut out = Vec::new();
        if let Some(t) = self.ili_through.filter(|t| *t >= self.week) {
            out.push(format!("%ILI through {t}"));
        }
        if let Some(t) = self.features_through.filter(|t| *t > self.week) {
            out.push(format!("features through {t}"));
        }
        (!out.is_empty()).then(|| {
            let geo = self.geo.as_ref().map_or(String::new(), |g| format!(" {g}"));
            format!("{} {}{geo}: {}", self.stage, self.week, out.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: Vec<String>,
    pub passed: bool,
}

impl AuditReport {
    pub fn from_entries(entries: &[AuditEntry]) -> Self {
        let violations: Vec<String> = entries.iter().filter_map(AuditEntry::violation).collect();
        AuditReport {
            checked: entries.len(),
            passed: violations.is_empty(),
            violations,
        }
    }
}

/// Everything one backtest produced, before it is written out.
#[derive(Clone, Debug)]
pub struct BacktestOutput {
    pub records: Vec<EstimateRecord>,
    pub diagnostics: Vec<Diagnostics>,
    pub routing: Option<Vec<RoutingRow>>,
    pub standalone: BTreeSet<GeoId>,
    pub first_step: FirstStepPanel,
    pub audit: Vec<AuditEntry>,
    pub report: Report,
}

impl BacktestOutput {
    pub fn audit_report(&self) -> AuditReport {
        AuditReport::from_entries(&self.audit)
    }
}

struct WeekResult {
    records: Vec<EstimateRecord>,
    diagnostics: Vec<Diagnostics>,
    audit: Vec<AuditEntry>,
}

fn record(week: EpiWeek, geo: &GeoId, method: &str, point: f64, truth: f64) -> EstimateRecord {
    EstimateRecord {
        year: week.year,
        week: week.week,
        geo: geo.clone(),
        method: method.into(),
        point,
        lo: None,
        hi: None,
        truth,
        provenance: None,
    }
}

fn view_audit(week: EpiWeek, stage: &str, ili: &WeeklyPanel, first: Option<&FirstStepPanel>) -> AuditEntry {
    AuditEntry {
        week,
        stage: stage.into(),
        geo: None,
        ili_through: ili.index().last().copied(),
        features_through: first.and_then(|f| f.estimates.index().last().copied()),
    }
}

struct WeekContext<'a> {
    cfg: &'a BacktestConfig,
    ili: &'a WeeklyPanel,
    first: &'a FirstStepPanel,
    geometry: &'a JointGeometry,
    standalone: &'a [GeoId],
    states: &'a [GeoId],
    external: &'a [(String, BTreeMap<(EpiWeek, GeoId), f64>)],
}

fn run_week(ctx: &WeekContext, week: EpiWeek) -> Result<WeekResult> {
    let truth_of = |g: &GeoId| {
        ctx.ili
            .get(week, g.as_str())
            .ok_or_else(|| Error::MissingData(format!("%ILI for {g} at {week}")).at(g.as_str(), week))
    };
    let ili = ctx.ili.before(week);
    let first = ctx.first.through(week);
    let window = ctx.cfg.window;
    let mut out = WeekResult {
        records: Vec::new(),
        diagnostics: Vec::new(),
        audit: Vec::new(),
    };
    for m in &ctx.cfg.methods {
        match m {
            Method::Argox => {
                if !ctx.geometry.is_empty() {
                    let train = TrainingWindow::collect(&ili, &first, ctx.geometry, week, window)
                        .map_err(|e| e.at("joint", week))?;
                    let model = SecondStepModel::fit(&train).map_err(|e| e.at("joint", week))?;
                    let (w, p_prev) =
                        build_predictor_stack(week, &ili, &first, ctx.geometry).map_err(|e| e.at("joint", week))?;
                    let (est, blp) = model.predict(&w, &p_prev).map_err(|e| e.at("joint", week))?;
                    for (g, e) in ctx.geometry.geos.iter().zip(&est) {
                        let mut r = record(week, g, ARGOX, e.point, truth_of(g)?);
                        r.lo = Some(e.lo);
                        r.hi = Some(e.hi);
                        r.provenance = Some("joint".into());
                        out.records.push(r);
                    }
                    out.diagnostics.push(Diagnostics {
                        week,
                        model: "joint".into(),
                        rho: Some(model.rho),
                        condition: blp.condition,
                        jitter: blp.jitter,
                    });
                    out.audit.push(view_audit(week, "joint", &ili, Some(&first)));
                }
                for g in ctx.standalone {
                    let fit = || -> Result<_> {
                        let train = StandaloneWindow::collect(g, &ili, &first, week, window)?;
                        let model = StandaloneModel::fit(&train)?;
                        let (w, p_prev) = build_standalone_stack(g, week, &ili, &first)?;
                        Ok((standalone_estimate(&model, &w, p_prev)?, standalone_conditioning(&model)?))
                    };
                    let (e, (condition, jitter)) = fit().map_err(|e| e.at(g.as_str(), week))?;
                    let mut r = record(week, g, ARGOX, e.point, truth_of(g)?);
                    r.lo = Some(e.lo);
                    r.hi = Some(e.hi);
                    r.provenance = Some("standalone".into());
                    out.records.push(r);
                    out.diagnostics.push(Diagnostics {
                        week,
                        model: format!("standalone:{g}"),
                        rho: None,
                        condition,
                        jitter,
                    });
                    let mut a = view_audit(week, "standalone", &ili, Some(&first));
                    a.geo = Some(g.clone());
                    out.audit.push(a);
                }
            }
            Method::Naive => {
                for g in ctx.states {
                    let p = naive_estimate(&ili, week, g).map_err(|e| e.at(g.as_str(), week))?;
                    out.records.push(record(week, g, NAIVE, p, truth_of(g)?));
                }
                out.audit.push(view_audit(week, NAIVE, &ili, None));
            }
            Method::Var1 => {
                let est = var1_estimate(&ili, week, ctx.states, window).map_err(|e| e.at(VAR1, week))?;
                for (g, p) in ctx.states.iter().zip(est.iter()) {
                    out.records.push(record(week, g, VAR1, *p, truth_of(g)?));
                }
                out.audit.push(view_audit(week, VAR1, &ili, None));
            }
            Method::External(_) => {}
        }
    }
    for (label, table) in ctx.external {
        for g in ctx.states {
            if let Some(p) = table.get(&(week, g.clone())) {
                out.records.push(record(week, g, label, *p, truth_of(g)?));
            }
        }
    }
    Ok(out)
}

/// Hash of everything the first-step panel depends on.
fn first_step_fingerprint(cfg: &BacktestConfig, data: &BacktestData) -> String {
    let mut h = DefaultHasher::new();
    let fs = cfg.first_step();
    (fs.window, fs.ar_lags, fs.folds, cfg.enrichment).hash(&mut h);
    for p in [&data.ili] {
        p.index().hash(&mut h);
        p.columns().hash(&mut h);
        p.values().iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    for (g, p) in &data.trends {
        g.hash(&mut h);
        p.index().hash(&mut h);
        p.columns().hash(&mut h);
        p.values().iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    data.registry.all_ili_geos().hash(&mut h);
    data.registry.standalone_set().hash(&mut h);
    format!("{:016x}", h.finish())
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    fingerprint: String,
    weeks: Vec<EpiWeek>,
}

pub const FIRST_STEP_CACHE: &str = "first_step.csv";
const FIRST_STEP_META: &str = "first_step.meta.json";

/// First-step panel for the config's weeks, computed fresh. Stand-alone
/// states are taken from `data.registry`.
pub fn compute_first_step(cfg: &BacktestConfig, data: &BacktestData) -> Result<FirstStepPanel> {
    let inputs = FirstStepInputs::prepare(data.ili.clone(), &data.trends, &data.registry, cfg.enrichment)?;
    let weeks = cfg.first_step_weeks();
    info!("first step: {} weeks from {}", weeks.len(), weeks[0]);
    first_step_panel(&inputs, &data.registry, &weeks, &cfg.first_step())
}

/// First-step panel from `dir`'s cache when it matches, otherwise computed
/// and cached there.
pub fn cached_first_step(cfg: &BacktestConfig, data: &BacktestData, dir: &Path) -> Result<FirstStepPanel> {
    let fingerprint = first_step_fingerprint(cfg, data);
    let weeks = cfg.first_step_weeks();
    let (csv, meta) = (dir.join(FIRST_STEP_CACHE), dir.join(FIRST_STEP_META));
    if let Ok(text) = fs::read_to_string(&meta) {
        if let Ok(m) = serde_json::from_str::<CacheMeta>(&text) {
            if m.fingerprint == fingerprint && m.weeks == weeks && csv.exists() {
                info!("reusing first-step cache {}", csv.display());
                return FirstStepPanel::read_csv(&csv);
            }
        }
    }
    let panel = compute_first_step(cfg, data)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    panel.write_csv(&csv)?;
    let m = CacheMeta { fingerprint, weeks };
    fs::write(&meta, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&meta, e))?;
    Ok(panel)
}

/// Second step and benchmarks for every week in range, given first-step
/// estimates and the stand-alone set.
pub fn backtest_with(
    cfg: &BacktestConfig,
    data: &BacktestData,
    first: FirstStepPanel,
    standalone: BTreeSet<GeoId>,
    routing: Option<Vec<RoutingRow>>,
) -> Result<BacktestOutput> {
    cfg.validate()?;
    let registry = data.registry.with_standalone(standalone.clone())?;
    let present = |g: &GeoId| data.ili.column_position(g.as_str()).is_some();
    let states: Vec<GeoId> = registry.states().iter().filter(|g| present(g)).cloned().collect();
    let joint: Vec<GeoId> = registry.joint_states().into_iter().filter(present).collect();
    let alone: Vec<GeoId> = registry.standalone_states().into_iter().filter(present).collect();
    let geometry = JointGeometry::new(&registry, joint)?;
    let external = cfg
        .methods
        .iter()
        .filter_map(|m| match m {
            Method::External(p) => Some((m.label(), p)),
            _ => None,
        })
        .map(|(l, p)| Ok((l, read_external_estimates(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let ctx = WeekContext {
        cfg,
        ili: &data.ili,
        first: &first,
        geometry: &geometry,
        standalone: &alone,
        states: &states,
        external: &external,
    };
    let weeks = cfg.range.weeks();
    let results: Vec<WeekResult> = weeks.par_iter().map(|w| run_week(&ctx, *w)).collect::<Result<_>>()?;
    let mut audit: Vec<AuditEntry> = first
        .audits
        .iter()
        .map(|a| AuditEntry {
            week: a.week,
            stage: "first_step".into(),
            geo: Some(a.geo.clone()),
            ili_through: Some(a.ili_through),
            features_through: a.features_through,
        })
        .collect();
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for r in results {
        records.extend(r.records);
        diagnostics.extend(r.diagnostics);
        audit.extend(r.audit);
    }
    let report = season_report(&records)?;
    Ok(BacktestOutput {
        records,
        diagnostics,
        routing,
        standalone,
        first_step: first,
        audit,
        report,
    })
}

/// Full in-memory backtest without a cache.
pub fn backtest(cfg: &BacktestConfig, data: &BacktestData) -> Result<BacktestOutput> {
    cfg.validate()?;
    let (standalone, rows) = resolve_routing(cfg, data)?;
    let data = data.with_standalone(standalone.clone())?;
    let first = compute_first_step(cfg, &data)?;
    backtest_with(cfg, &data, first, standalone, rows)
}

pub fn write_output(cfg: &BacktestConfig, out: &BacktestOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_records(&out.records, dir.join("estimates.csv"))?;
    write_diagnostics(&out.diagnostics, dir.join("diagnostics.csv"))?;
    write_reports(&out.report, dir)?;
    if let Some(rows) = &out.routing {
        write_routing_csv(rows, dir.join("standalone.csv"))?;
    }
    let mut resolved = cfg.clone();
    resolved.out_dir = Some(dir.to_path_buf());
    let p = dir.join("resolved_config.json");
    fs::write(&p, serde_json::to_string_pretty(&resolved)?).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("audit.json");
    fs::write(&p, serde_json::to_string_pretty(&out.audit_report())?).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// Load, route, reuse or compute the first step, run every week and write
/// the outputs to the config's `out_dir`. Fails if the look-ahead audit does.
pub fn run_backtest(cfg: &BacktestConfig) -> Result<BacktestOutput> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let dir = cfg.out_dir();
    let (standalone, rows) = resolve_routing(cfg, &data)?;
    info!("{} stand-alone states", standalone.len());
    let data = data.with_standalone(standalone.clone())?;
    let first = cached_first_step(cfg, &data, &dir)?;
    let out = backtest_with(cfg, &data, first, standalone, rows)?;
    write_output(cfg, &out, &dir)?;
    let audit = out.audit_report();
    if !audit.passed {
        return Err(Error::LookAhead(audit.violations.join("; ")));
    }
    Ok(out)
}
