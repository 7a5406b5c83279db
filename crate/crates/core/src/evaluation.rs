//! Benchmarks, accuracy metrics and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::epiweek::EpiWeek;
use crate::error::{Error, Result};
use crate::geo::GeoId;
use crate::ingest::season_slices;
use crate::linalg::least_squares_multi;
use crate::panel::WeeklyPanel;

pub const NAIVE: &str = "naive";
pub const VAR1: &str = "var1";
pub const ARGOX: &str = "argox";
/// Season label for the whole evaluation period.
pub const WHOLE_PERIOD: &str = "all";

/// One estimate of one geography's %ILI in one week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub year: i32,
    pub week: u32,
    pub geo: GeoId,
    pub method: String,
    pub point: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub truth: f64,
    /// `joint` or `standalone` for the two-step method.
    pub provenance: Option<String>,
}

impl EstimateRecord {
    pub fn epiweek(&self) -> Result<EpiWeek> {
        EpiWeek::new(self.year, self.week)
    }

    pub fn covers(&self) -> Option<bool> {
        Some(self.lo? <= self.truth && self.truth <= self.hi?)
    }
}

/// Last week's reported %ILI.
pub fn naive_estimate(ili: &WeeklyPanel, week: EpiWeek, geo: &GeoId) -> Result<f64> {
    let prev = week.pred();
    ili.get(prev, geo.as_str())
        .ok_or_else(|| Error::MissingData(format!("%ILI for {geo} at {prev}")))
}

/// Per-equation OLS coefficients of a lag-1 VAR with intercept; column `j`
/// holds equation `j` as `[intercept, lag coefficients…]`.
#[derive(Clone, Debug)]
pub struct Var1Fit {
    pub coefficients: DMatrix<f64>,
    pub rank_deficient: bool,
}

/// Fit on the `window` weeks before `week`.
pub fn fit_var1(ili: &WeeklyPanel, week: EpiWeek, geos: &[GeoId], window: usize) -> Result<Var1Fit> {
    let cols = geos
        .iter()
        .map(|g| {
            ili.column_position(g.as_str())
                .ok_or_else(|| Error::MissingData(format!("no %ILI series for {g}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let first = week.offset(-(window as i64) - 1);
    let start = ili
        .position(first)
        .ok_or_else(|| Error::InsufficientHistory {
            geo: "VAR(1)".into(),
            week,
            needed: window + 1,
            available: ili.index().iter().filter(|w| **w < week).count(),
        })?;
    if start + window >= ili.n_weeks() || ili.index()[start + window] != week.pred() {
        return Err(Error::Misaligned(format!("VAR(1) window before {week} has gaps")));
    }
    let v = ili.values();
    let k = cols.len();
    let x = DMatrix::from_fn(window, k + 1, |r, j| {
        if j == 0 { 1.0 } else { v[(start + r, cols[j - 1])] }
    });
    let y = DMatrix::from_fn(window, k, |r, j| v[(start + r + 1, cols[j])]);
    let (coefficients, rank) = least_squares_multi(&x, &y)?;
    Ok(Var1Fit {
        coefficients,
        rank_deficient: rank < k + 1,
    })
}

/// One-step VAR(1) prediction for every geography in `geos`.
pub fn var1_estimate(ili: &WeeklyPanel, week: EpiWeek, geos: &[GeoId], window: usize) -> Result<DVector<f64>> {
    let fit = fit_var1(ili, week, geos, window)?;
    let mut x = DVector::zeros(geos.len() + 1);
    x[0] = 1.0;
    for (j, g) in geos.iter().enumerate() {
        x[j + 1] = naive_estimate(ili, week, g)?;
    }
    Ok(fit.coefficients.transpose() * x)
}

fn check_aligned(est: &[f64], truth: &[f64]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: est.len(),
        });
    }
    if est.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    Ok(())
}

pub fn mse(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_aligned(est, truth)?;
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / est.len() as f64)
}

pub fn mae(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_aligned(est, truth)?;
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum::<f64>() / est.len() as f64)
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn correlation(est: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_aligned(est, truth)?;
    if est.len() < 2 {
        return Err(Error::InsufficientData("correlation needs 2 points".into()));
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (e, t) in est.iter().zip(truth) {
        sxy += (e - me) * (t - mt);
        sxx += (e - me).powi(2);
        syy += (t - mt).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Fraction of records whose interval contains the truth; records without
/// an interval are skipped.
pub fn coverage_rate<'a>(records: impl IntoIterator<Item = &'a EstimateRecord>) -> Option<f64> {
    let (hit, n) = records
        .into_iter()
        .filter_map(|r| r.covers())
        .fold((0usize, 0usize), |(h, n), c| (h + usize::from(c), n + 1));
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Metrics for one (method, season, geo).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeoMetrics {
    pub method: String,
    pub season: String,
    pub geo: GeoId,
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub correlation: Option<f64>,
    pub coverage: Option<f64>,
}

/// Geography-averaged metrics for one (method, season).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub season: String,
    pub geos: usize,
    pub mse: f64,
    pub mae: f64,
    pub correlation: Option<f64>,
    pub coverage: Option<f64>,
    /// Mean over geographies of MSE relative to the naive method.
    pub relative_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeMse {
    pub method: String,
    pub season: String,
    pub geo: GeoId,
    pub relative_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub per_geo: Vec<GeoMetrics>,
    pub relative_mse: Vec<RelativeMse>,
}

fn mean(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-season and whole-period tables. Seasons run from week 40 through
/// week 20 of the next year; weeks outside any season only count toward the
/// whole period. Correlations are computed per geography and then averaged.
pub fn season_report(records: &[EstimateRecord]) -> Result<Report> {
    let weeks: BTreeSet<EpiWeek> = records.iter().map(|r| r.epiweek()).collect::<Result<_>>()?;
    let index: Vec<EpiWeek> = weeks.into_iter().collect();
    let mut periods: Vec<(String, EpiWeek, EpiWeek)> = season_slices(&index)
        .into_iter()
        .map(|s| (s.label, s.start, s.end))
        .collect();
    if let (Some(a), Some(b)) = (index.first(), index.last()) {
        periods.push((WHOLE_PERIOD.to_string(), *a, *b));
    }
    let mut groups: BTreeMap<(&str, &GeoId), Vec<(EpiWeek, &EstimateRecord)>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.method, &r.geo)).or_default().push((r.epiweek()?, r));
    }
    let methods: BTreeSet<&str> = records.iter().map(|r| r.method.as_str()).collect();

    let mut per_geo = Vec::new();
    for (label, start, end) in &periods {
        for ((method, geo), rows) in &groups {
            let in_period: Vec<&EstimateRecord> = rows
                .iter()
                .filter(|(w, _)| start <= w && w <= end)
                .map(|(_, r)| *r)
                .collect();
            if in_period.is_empty() {
                continue;
            }
            let est: Vec<f64> = in_period.iter().map(|r| r.point).collect();
            let truth: Vec<f64> = in_period.iter().map(|r| r.truth).collect();
            let corr = if est.len() >= 2 { correlation(&est, &truth)? } else { None };
            per_geo.push(GeoMetrics {
                method: method.to_string(),
                season: label.clone(),
                geo: (*geo).clone(),
                n: est.len(),
                mse: mse(&est, &truth)?,
                mae: mae(&est, &truth)?,
                correlation: corr,
                coverage: coverage_rate(in_period.iter().copied()),
            });
        }
    }

    let naive: BTreeMap<(&str, &GeoId), f64> = per_geo
        .iter()
        .filter(|m| m.method == NAIVE)
        .map(|m| ((m.season.as_str(), &m.geo), m.mse))
        .collect();
    let mut relative_mse = Vec::new();
    for m in &per_geo {
        if let Some(base) = naive.get(&(m.season.as_str(), &m.geo)) {
            if *base > 0.0 {
                relative_mse.push(RelativeMse {
                    method: m.method.clone(),
                    season: m.season.clone(),
                    geo: m.geo.clone(),
                    relative_mse: m.mse / base,
                });
            }
        }
    }

    let mut summary = Vec::new();
    for method in &methods {
        for (label, _, _) in &periods {
            let rows: Vec<&GeoMetrics> = per_geo
                .iter()
                .filter(|m| m.method == *method && &m.season == label)
                .collect();
            if rows.is_empty() {
                continue;
            }
            summary.push(SummaryRow {
                method: method.to_string(),
                season: label.clone(),
                geos: rows.len(),
                mse: mean(rows.iter().map(|m| m.mse)).unwrap_or(f64::NAN),
                mae: mean(rows.iter().map(|m| m.mae)).unwrap_or(f64::NAN),
                correlation: mean(rows.iter().filter_map(|m| m.correlation)),
                coverage: mean(rows.iter().filter_map(|m| m.coverage)),
                relative_mse: mean(
                    relative_mse
                        .iter()
                        .filter(|r| r.method == *method && &r.season == label)
                        .map(|r| r.relative_mse),
                ),
            });
        }
    }
    Ok(Report {
        summary,
        per_geo,
        relative_mse,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v}"))
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `summary.csv`, `per_state.csv`, `relative_mse.csv`,
/// `coverage.csv` and `summary.json` into `dir`.
pub fn write_reports(report: &Report, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows(
        &dir.join("summary.csv"),
        &["method", "season", "geos", "mse", "mae", "correlation", "coverage", "relative_mse"],
        report.summary.iter().map(|s| {
            vec![
                s.method.clone(),
                s.season.clone(),
                s.geos.to_string(),
                format!("{}", s.mse),
                format!("{}", s.mae),
                opt(s.correlation),
                opt(s.coverage),
                opt(s.relative_mse),
            ]
        }),
    )?;
    write_rows(
        &dir.join("per_state.csv"),
        &["method", "season", "geo", "n", "mse", "mae", "correlation", "coverage"],
        report.per_geo.iter().map(|m| {
            vec![
                m.method.clone(),
                m.season.clone(),
                m.geo.to_string(),
                m.n.to_string(),
                format!("{}", m.mse),
                format!("{}", m.mae),
                opt(m.correlation),
                opt(m.coverage),
            ]
        }),
    )?;
    write_rows(
        &dir.join("relative_mse.csv"),
        &["method", "season", "geo", "relative_mse"],
        report.relative_mse.iter().map(|r| {
            vec![
                r.method.clone(),
                r.season.clone(),
                r.geo.to_string(),
                format!("{}", r.relative_mse),
            ]
        }),
    )?;
    write_rows(
        &dir.join("coverage.csv"),
        &["method", "season", "geo", "coverage"],
        report
            .per_geo
            .iter()
            .filter(|m| m.coverage.is_some())
            .map(|m| vec![m.method.clone(), m.season.clone(), m.geo.to_string(), opt(m.coverage)]),
    )?;
    let json = dir.join("summary.json");
    let body = serde_json::to_string_pretty(&serde_json::json!({ "summary": report.summary }))?;
    fs::write(&json, body + "\n").map_err(|e| Error::io(&json, e))
}

pub fn write_records(records: &[EstimateRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EstimateRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: EstimateRecord = row.map_err(|e| Error::csv(path, e))?;
        if let (Some(lo), Some(hi)) = (rec.lo, rec.hi) {
            if !(lo <= rec.point && rec.point <= hi) {
                return Err(Error::invalid(
                    "estimate record",
                    format!("{} {} {}: interval excludes point", rec.method, rec.geo, rec.year),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Pre-computed estimates from another method, columns `year,week,geo,estimate`.
pub fn read_external_estimates(path: impl AsRef<Path>) -> Result<BTreeMap<(EpiWeek, GeoId), f64>> {
    #[derive(Deserialize)]
    struct Row {
        year: i32,
        week: u32,
        geo: String,
        estimate: f64,
    }
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize() {
        let row: Row = row.map_err(|e| Error::csv(path, e))?;
        if !row.estimate.is_finite() {
            return Err(Error::invalid("external estimates", "non-finite estimate"));
        }
        out.insert((EpiWeek::new(row.year, row.week)?, GeoId::new(row.geo)), row.estimate);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn panel(cols: &[&str], n: usize, f: impl FnMut(usize, usize) -> f64) -> WeeklyPanel {
        let s = EpiWeek::new(2014, 30).unwrap();
        WeeklyPanel::new(
            (0..n as i64).map(|k| s.offset(k)).collect(),
            cols.iter().map(|c| c.to_string()).collect(),
            DMatrix::from_fn(n, cols.len(), f),
        )
        .unwrap()
    }

    fn rec(week: EpiWeek, geo: &str, method: &str, point: f64, truth: f64) -> EstimateRecord {
        EstimateRecord {
            year: week.year,
            week: week.week,
            geo: geo.into(),
            method: method.into(),
            point,
            lo: None,
            hi: None,
            truth,
            provenance: None,
        }
    }

    #[test]
    fn naive_is_last_week() {
        let p = panel(&["AA"], 3, |i, _| [1.0, 2.3, 4.0][i]);
        assert_eq!(naive_estimate(&p, p.index()[2], &"AA".into()).unwrap(), 2.3);
        assert!(naive_estimate(&p, p.index()[0], &"AA".into()).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((correlation(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(correlation(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), None);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn metrics_match_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        // textbook single-pass forms
        let n = 50.0;
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
        let r = (n * dot(&a, &b) - sum(&a) * sum(&b))
            / ((n * dot(&a, &a) - sum(&a).powi(2)).sqrt() * (n * dot(&b, &b) - sum(&b).powi(2)).sqrt());
        assert!((correlation(&a, &b).unwrap().unwrap() - r).abs() < 1e-12);
        let m = (dot(&a, &a) - 2.0 * dot(&a, &b) + dot(&b, &b)) / n;
        assert!((mse(&a, &b).unwrap() - m).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn affine_consistency(seed in 0u64..500, s in 0.1f64..10.0, c in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
            let ta: Vec<f64> = a.iter().map(|v| s * v + c).collect();
            let tb: Vec<f64> = b.iter().map(|v| s * v + c).collect();
            let m = mse(&a, &b).unwrap();
            prop_assert!((mse(&ta, &tb).unwrap() - s * s * m).abs() < 1e-9 * (1.0 + m * s * s));
            let r = correlation(&a, &b).unwrap().unwrap();
            prop_assert!((correlation(&ta, &b).unwrap().unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_examples() {
        let w = EpiWeek::new(2015, 2).unwrap();
        let mut wide = rec(w, "AA", "x", 1.0, 3.0);
        wide.lo = Some(-1e9);
        wide.hi = Some(1e9);
        assert_eq!(coverage_rate([&wide]), Some(1.0));
        let mut tight = wide.clone();
        tight.lo = Some(1.0);
        tight.hi = Some(1.0);
        assert_eq!(coverage_rate([&tight]), Some(0.0));
        assert_eq!(coverage_rate([&rec(w, "AA", "x", 1.0, 1.0)]), None);
    }

    #[test]
    fn identity_dynamics_var_equals_naive() {
        let p = panel(&["AA", "BB", "CC"], 40, |_, j| 1.0 + j as f64);
        let geos: Vec<GeoId> = ["AA", "BB", "CC"].iter().map(|g| GeoId::new(*g)).collect();
        let w = p.index()[30];
        let est = var1_estimate(&p, w, &geos, 20).unwrap();
        for (j, g) in geos.iter().enumerate() {
            assert!((est[j] - naive_estimate(&p, w, g).unwrap()).abs() < 1e-10);
        }
        assert!(fit_var1(&p, w, &geos, 20).unwrap().rank_deficient);
        assert!(var1_estimate(&p, p.index()[10], &geos, 20).is_err());
    }

    #[test]
    fn recovers_known_var1() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.7]);
        let c = DVector::from_vec(vec![1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut rows = vec![DVector::from_vec(vec![2.0, 1.7])];
        for _ in 1..n {
            let e = DVector::from_fn(2, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
            let next = &c + &a * rows.last().unwrap() + e;
            rows.push(next);
        }
        let p = panel(&["AA", "BB"], n, |i, j| rows[i][j]);
        let geos = [GeoId::new("AA"), GeoId::new("BB")];
        let fit = fit_var1(&p, p.index()[n - 1], &geos, n - 2).unwrap();
        let lag = fit.coefficients.rows(1, 2).transpose();
        assert!((&lag - &a).abs().max() < 1e-2, "{lag}");
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn rank_deficient_var_still_runs() {
        // 51 equations, 52 parameters, 104 rows with a duplicated column
        let names: Vec<String> = (0..51).map(|i| format!("G{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = panel(&refs, 120, |_, _| rng.random_range(0.5..5.0));
        let mut p2 = p.clone();
        let c = p.column("G00").unwrap();
        p2.set_column("G01", &c).unwrap();
        let geos: Vec<GeoId> = refs.iter().map(|g| GeoId::new(*g)).collect();
        let w = p.index()[110];
        assert_eq!(var1_estimate(&p, w, &geos, 104).unwrap().len(), 51);
        assert!(fit_var1(&p2, w, &geos, 104).unwrap().rank_deficient);
    }

    #[test]
    fn report_naive_relative_one() {
        let start = EpiWeek::new(2014, 38).unwrap();
        let mut recs = Vec::new();
        for k in 0..40 {
            let w = start.offset(k);
            for (g, off) in [("AA", 0.0), ("BB", 0.5)] {
                let truth = 2.0 + (k as f64 * 0.3).sin() + off;
                recs.push(rec(w, g, NAIVE, truth + 0.2 * (k % 3) as f64, truth));
                let mut r = rec(w, g, ARGOX, truth + 0.1, truth);
                r.lo = Some(truth - 0.5);
                r.hi = Some(truth + 0.5);
                recs.push(r);
            }
        }
        let rep = season_report(&recs).unwrap();
        assert!(rep.relative_mse.iter().filter(|r| r.method == NAIVE).all(|r| r.relative_mse == 1.0));
        let seasons: BTreeSet<&str> = rep.summary.iter().map(|s| s.season.as_str()).collect();
        assert_eq!(seasons, BTreeSet::from(["14-15", WHOLE_PERIOD]));
        let argox = rep
            .summary
            .iter()
            .find(|s| s.method == ARGOX && s.season == WHOLE_PERIOD)
            .unwrap();
        assert_eq!(argox.coverage, Some(1.0));
        assert!((argox.mse - 0.01).abs() < 1e-12);
        assert_eq!(argox.geos, 2);
        // 2014 has 53 weeks; weeks outside 40..20 count only toward the whole period
        let season = rep.per_geo.iter().find(|m| m.season == "14-15").unwrap();
        assert_eq!(season.n, 34);

        let dir = tempfile::tempdir().unwrap();
        write_reports(&rep, dir.path()).unwrap();
        for f in ["summary.csv", "per_state.csv", "relative_mse.csv", "coverage.csv", "summary.json"] {
            assert!(dir.path().join(f).exists());
        }
        let path = dir.path().join("records.csv");
        write_records(&recs, &path).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
    }

    #[test]
    fn external_estimates_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gft.csv");
        fs::write(&path, "year,week,geo,estimate\n2015,3,CA,2.5\n").unwrap();
        let ext = read_external_estimates(&path).unwrap();
        assert_eq!(ext[&(EpiWeek::new(2015, 3).unwrap(), GeoId::new("CA"))], 2.5);
    }
}
