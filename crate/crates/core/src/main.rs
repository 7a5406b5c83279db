use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use argox_core::backtest::{
    cached_first_step, load_data, load_registry, resolve_routing, run_backtest, BacktestConfig, Method, Routing,
    WeekRange,
};
use argox_core::evaluation::{read_records, season_report, write_reports, WHOLE_PERIOD};
use argox_core::ingest::{load_trends_dir, parse_ili_csv, zero_fraction_report};
use argox_core::routing::write_routing_csv;
use argox_core::synth::{generate, synthetic_backtest_config, write_synthetic, SynthConfig};
use argox_core::EpiWeek;

#[derive(Parser)]
#[command(name = "argox", version, about = "Two-step influenza nowcasting from search data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check the input files, then summarize them.
    Ingest(RunArgs),
    /// Choose stand-alone states from in-sample %ILI.
    Route(RunArgs),
    /// Fit and cache the rolling first-step estimates.
    FirstStep(RunArgs),
    /// Run the full rolling backtest and write reports.
    Backtest(RunArgs),
    /// Recompute reports from an estimates file.
    Evaluate {
        estimates: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Write a synthetic panel and a matching backtest config.
    Synth(SynthArgs),
}

/// A JSON config, with flags overriding its keys.
#[derive(Args, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ili: Option<PathBuf>,
    #[arg(long)]
    trends_dir: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    start: Option<EpiWeek>,
    #[arg(long)]
    end: Option<EpiWeek>,
    /// `auto`, `registry` or a routing CSV.
    #[arg(long)]
    routing: Option<String>,
    #[arg(long, overrides_with = "no_enrichment")]
    enrichment: bool,
    #[arg(long)]
    no_enrichment: bool,
    /// Comma-separated: argox, naive, var1, external:<csv>.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    in_sample_start: Option<EpiWeek>,
    #[arg(long)]
    in_sample_end: Option<EpiWeek>,
    #[arg(long)]
    ar_lags: Option<usize>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    strict_registry: bool,
}

impl RunArgs {
    fn config(&self) -> Result<BacktestConfig> {
        let cwd = std::env::current_dir()?;
        let mut cfg = match &self.config {
            Some(p) => BacktestConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => {
                let (Some(ili), Some(trends), Some(start), Some(end)) =
                    (&self.ili, &self.trends_dir, self.start, self.end)
                else {
                    bail!("without --config, --ili, --trends-dir, --start and --end are required");
                };
                BacktestConfig::new(ili.clone(), trends.clone(), WeekRange { start, end }).resolve(&cwd)
            }
        };
        let abs = |p: &Path| cwd.join(p);
        if let Some(p) = &self.ili {
            cfg.data.ili = abs(p);
        }
        if let Some(p) = &self.trends_dir {
            cfg.data.trends_dir = abs(p);
        }
        if let Some(p) = &self.registry {
            cfg.registry = Some(abs(p));
        }
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(s) = self.start {
            cfg.range.start = s;
        }
        if let Some(e) = self.end {
            cfg.range.end = e;
        }
        if let Some(r) = &self.routing {
            cfg.routing = match Routing::try_from(r.clone()).map_err(anyhow::Error::msg)? {
                Routing::File(p) => Routing::File(abs(&p)),
                other => other,
            };
        }
        if self.enrichment {
            cfg.enrichment = true;
        }
        if self.no_enrichment {
            cfg.enrichment = false;
        }
        if let Some(ms) = &self.methods {
            cfg.methods = ms
                .iter()
                .map(|m| match Method::try_from(m.clone()).map_err(anyhow::Error::msg)? {
                    Method::External(p) => Ok(Method::External(abs(&p))),
                    other => Ok(other),
                })
                .collect::<Result<_>>()?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        match (self.in_sample_start, self.in_sample_end) {
            (Some(start), Some(end)) => cfg.in_sample = Some(WeekRange { start, end }),
            (None, None) => {}
            _ => bail!("--in-sample-start and --in-sample-end go together"),
        }
        if let Some(l) = self.ar_lags {
            cfg.ar_lags = l;
        }
        if let Some(f) = self.cv_folds {
            cfg.cv_folds = f;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = Some(abs(d));
        }
        if self.strict_registry {
            cfg.strict_registry = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synthetic")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    states: usize,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 2)]
    isolated: usize,
    #[arg(long, default_value_t = 260)]
    weeks: usize,
    #[arg(long, default_value_t = 0.6)]
    spatial_corr: f64,
    #[arg(long, default_value_t = 0.15)]
    search_noise: f64,
    #[arg(long, default_value_t = 0.02)]
    zero_inflation: f64,
    #[arg(long, default_value_t = 8)]
    terms: usize,
    /// Backtest window written to the generated config.
    #[arg(long, default_value_t = 52)]
    window: usize,
    #[arg(long, default_value_t = 4)]
    ar_lags: usize,
}

fn ingest(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let registry = load_registry(&cfg)?;
    let ili = parse_ili_csv(&cfg.data.ili, &registry)?;
    let trends = load_trends_dir(&cfg.data.trends_dir, &registry)?;
    let zeros = zero_fraction_report(&trends)?;
    let idx = ili.index();
    println!(
        "%ILI: {} weeks ({}..{}), {} geographies",
        idx.len(),
        idx.first().map_or(String::new(), |w| w.to_string()),
        idx.last().map_or(String::new(), |w| w.to_string()),
        ili.n_cols()
    );
    println!("search: {} geographies", trends.len());
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    let summary: BTreeMap<String, f64> = zeros.into_iter().map(|(g, z)| (g.to_string(), z)).collect();
    let path = dir.join("zero_fraction.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    println!("zero fractions written to {}", path.display());
    Ok(())
}

fn route(args: &RunArgs) -> Result<()> {
    let mut cfg = args.config()?;
    if cfg.routing != Routing::Auto {
        info!("route always recomputes; ignoring routing = {}", cfg.routing);
        cfg.routing = Routing::Auto;
    }
    let data = load_data(&cfg)?;
    let (set, rows) = resolve_routing(&cfg, &data)?;
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)?;
    let path = dir.join("standalone.csv");
    write_routing_csv(&rows.expect("auto routing yields rows"), &path)?;
    let names: Vec<String> = set.iter().map(|g| g.to_string()).collect();
    println!("stand-alone: {}", names.join(" "));
    println!("wrote {}", path.display());
    Ok(())
}

fn first_step(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let data = load_data(&cfg)?;
    let (set, _) = resolve_routing(&cfg, &data)?;
    let data = data.with_standalone(set)?;
    let dir = cfg.out_dir();
    let panel = cached_first_step(&cfg, &data, &dir)?;
    panel.check_audits()?;
    println!(
        "first step: {} weeks x {} geographies in {}",
        panel.estimates.n_weeks(),
        panel.estimates.n_cols(),
        dir.display()
    );
    Ok(())
}

fn print_summary(report: &argox_core::evaluation::Report) {
    for r in report.summary.iter().filter(|r| r.season == WHOLE_PERIOD) {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<10} mse {:.4}  mae {:.4}  corr {}  coverage {}  rel.mse {}",
            r.method,
            r.mse,
            r.mae,
            opt(r.correlation),
            opt(r.coverage),
            opt(r.relative_mse)
        );
    }
}

fn backtest(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let out = run_backtest(&cfg)?;
    print_summary(&out.report);
    let audit = out.audit_report();
    println!("look-ahead audit: {} checks passed", audit.checked);
    println!("outputs in {}", cfg.out_dir().display());
    Ok(())
}

fn evaluate(estimates: &Path, out_dir: &Path) -> Result<()> {
    let records = read_records(estimates)?;
    let report = season_report(&records)?;
    write_reports(&report, out_dir)?;
    print_summary(&report);
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        states: a.states,
        regions: a.regions,
        isolated: a.isolated,
        weeks: a.weeks,
        spatial_corr: a.spatial_corr,
        search_noise: a.search_noise,
        zero_inflation: a.zero_inflation,
        terms: a.terms,
        ..SynthConfig::default()
    };
    let data = generate(&cfg)?;
    write_synthetic(&data, &a.out_dir)?;
    let mut bt = synthetic_backtest_config(&data, a.window, a.ar_lags)?;
    bt.seed = a.seed;
    let path = a.out_dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&bt)?)?;
    println!("wrote synthetic panel and {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest(a) => ingest(&a),
        Command::Route(a) => route(&a),
        Command::FirstStep(a) => first_step(&a),
        Command::Backtest(a) => backtest(&a),
        Command::Evaluate { estimates, out_dir } => evaluate(&estimates, &out_dir),
        Command::Synth(a) => synth(&a),
    }
}
