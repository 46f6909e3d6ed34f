use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lobres::dist::Family;
use lobres::fit::{Design, FittedModel, LinkMode};
use lobres::liquidity::{daily_threshold, spread_series, xlm_series, LiquiditySeries, MeasureKind};
use lobres::lob::{parse_events, replay, write_events, ReplayOptions, TradingWindow};
use lobres::pipeline::{fit_family, run_pipeline, summaries_from_dir, write_tables, CovariateSet, InputSpec, RunConfig};
use lobres::quantile::{default_grid, quantile_curve, quantile_surface, write_grid_csv};
use lobres::select::{aggregate_daily, best_subsets, write_coefficient_csv, write_heatmap_csv, DaySelection};
use lobres::synth::{gen_index_activity, read_index_csv, simulate_day, write_index_csv, FlowConfig};
use lobres::ted::{build_records, design, extract_teds, read_ted_csv, write_exceedance_csv, write_ted_csv, COVARIATE_NAMES};

#[derive(Parser)]
#[command(name = "lobres", version, about = "Liquidity resilience from limit order book event data")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, env = "LOBRES_CONFIG")]
    config: Option<PathBuf>,
    /// Daily threshold quantile of the liquidity measure.
    #[arg(long, global = true, env = "LOBRES_THRESHOLD_Q")]
    threshold_q: Option<f64>,
    /// Distribution families, comma separated.
    #[arg(long, global = true, env = "LOBRES_FAMILY", value_delimiter = ',')]
    family: Vec<Family>,
    /// single, two-link or three-link.
    #[arg(long, global = true, env = "LOBRES_LINK_MODE")]
    link_mode: Option<LinkMode>,
    /// full, fixed_subset, or a comma-separated list of covariate names.
    #[arg(long, global = true, env = "LOBRES_COVARIATES")]
    covariates: Option<CovariateSet>,
    #[arg(long, global = true, env = "LOBRES_SEED")]
    seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "LOBRES_JOBS")]
    jobs: Option<usize>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true, env = "LOBRES_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate order flow: one event CSV and one index CSV per day.
    Simulate {
        #[arg(long)]
        days: Option<usize>,
    },
    /// Replay events and write the liquidity series.
    Replay {
        #[arg(long)]
        events: PathBuf,
        /// Measure the round-trip cost of this notional instead of the spread.
        #[arg(long)]
        notional: Option<f64>,
        /// Observation window as HH:MM-HH:MM.
        #[arg(long, value_parser = parse_window)]
        window: Option<TradingWindow>,
        #[arg(long)]
        lenient: bool,
    },
    /// Exceedance durations with covariates from events, or bare
    /// exceedances from a series CSV.
    ExtractTed {
        #[arg(long, conflicts_with = "series")]
        events: Option<PathBuf>,
        #[arg(long, requires = "events")]
        index: Option<PathBuf>,
        #[arg(long)]
        series: Option<PathBuf>,
        /// Fixed threshold level; defaults to the daily quantile.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        notional: Option<f64>,
        #[arg(long, value_parser = parse_window)]
        window: Option<TradingWindow>,
        #[arg(long)]
        lenient: bool,
    },
    /// Fit one family to a duration CSV and write the model JSON.
    Fit {
        #[arg(long)]
        ted: PathBuf,
        #[arg(long)]
        include_censored: bool,
    },
    /// Best subsets of every size for the log-duration regression.
    Select {
        #[arg(long)]
        ted: PathBuf,
        #[arg(long)]
        include_censored: bool,
    },
    /// Conditional quantiles of a saved model over one or two covariates.
    QuantileSurface {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        first: String,
        #[arg(long)]
        second: Option<String>,
        #[arg(long, default_value_t = 25)]
        points: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,0.9")]
        levels: Vec<f64>,
        #[arg(long)]
        allow_extrapolation: bool,
    },
    /// Rebuild the cross-day tables from the model JSONs of a run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Full batch run driven by the configuration.
    Run,
}

fn parse_window(s: &str) -> std::result::Result<TradingWindow, String> {
    let hm = |t: &str| -> Option<i64> {
        let (h, m) = t.trim().split_once(':')?;
        Some(TradingWindow::hms(h.parse().ok()?, m.parse().ok()?, 0))
    };
    let (a, b) = s.split_once('-').ok_or("expected HH:MM-HH:MM")?;
    match (hm(a), hm(b)) {
        (Some(start), Some(end)) if end > start => Ok(TradingWindow::new(start, end)),
        _ => Err(format!("bad window '{s}'")),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(q) = self.threshold_q {
            cfg.threshold_q = q;
        }
        if !self.family.is_empty() {
            cfg.families = self.family.clone();
        }
        if let Some(m) = self.link_mode {
            cfg.link_mode = m;
        }
        if let Some(c) = &self.covariates {
            cfg.covariates = c.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }

    fn measure(notional: Option<f64>) -> MeasureKind {
        notional.map_or(MeasureKind::Spread, |notional| MeasureKind::Xlm { notional })
    }
}

fn durations_design(cfg: &RunConfig, ted: &Path, include_censored: bool) -> Result<(Design, Vec<f64>)> {
    let records = read_ted_csv(open(ted)?).with_context(|| format!("reading {}", ted.display()))?;
    let columns = cfg.covariates.indices()?;
    let names = columns.iter().map(|&j| COVARIATE_NAMES[j].to_string()).collect();
    let (rows, tau) = design(&records, &columns, include_censored);
    Ok((Design::new(names, &rows)?, tau))
}

fn execute(cli: &Cli) -> Result<ExitCode> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Simulate { days } => {
            let Some(dir) = &cli.out else { bail!("simulate needs --out <dir>") };
            let InputSpec::Synth { flow } = &cfg.input else { bail!("config input is not a simulator") };
            let flow = FlowConfig { seed: cfg.seed, days: days.unwrap_or(flow.days), ..flow.clone() };
            fs::create_dir_all(dir)?;
            for d in 0..flow.days {
                let events = simulate_day(&flow, d)?;
                write_events(&events, File::create(dir.join(format!("day_{d:03}.csv")))?)?;
                write_index_csv(&gen_index_activity(&flow, d), File::create(dir.join(format!("day_{d:03}.index.csv")))?)?;
            }
        }
        Command::Replay { events, notional, window, lenient } => {
            let ev = parse_events(open(events)?)?;
            let opts = ReplayOptions { strict: !lenient, xlm_notional: *notional, tick_size: cfg.tick_size, ..Default::default() };
            let r = replay(&ev, &opts)?;
            let window = window.unwrap_or(cfg.window);
            let series = match notional {
                Some(n) => xlm_series(&r.frames, window, *n)?,
                None => spread_series(&r.frames, window),
            };
            series.write_csv(output(cli.out.as_deref())?)?;
        }
        Command::ExtractTed { events, index, series, threshold, notional, window, lenient } => {
            let measure = Cli::measure(*notional);
            let level = |s: &LiquiditySeries| -> Result<f64> {
                Ok(match threshold {
                    Some(c) => *c,
                    None => daily_threshold(s, cfg.threshold_q)?.level,
                })
            };
            match (events, series) {
                (None, Some(path)) => {
                    let s = LiquiditySeries::read_csv(open(path)?, measure, *window)?;
                    let c = level(&s)?;
                    write_exceedance_csv(&extract_teds(&s, c), output(cli.out.as_deref())?)?;
                }
                (Some(path), None) => {
                    let ev = parse_events(open(path)?)?;
                    let idx = match index {
                        Some(p) => read_index_csv(open(p)?)?,
                        None => Vec::new(),
                    };
                    let opts = ReplayOptions {
                        strict: !lenient,
                        n_levels: cfg.covariate_spec.n_levels,
                        tick_size: cfg.tick_size,
                        xlm_notional: *notional,
                    };
                    let r = replay(&ev, &opts)?;
                    let window = window.unwrap_or(cfg.window);
                    let s = match notional {
                        Some(n) => xlm_series(&r.frames, window, *n)?,
                        None => spread_series(&r.frames, window),
                    };
                    let c = level(&s)?;
                    let records = build_records(&ev, &r.frames, &s, c, &idx, &cfg.covariate_spec)?;
                    write_ted_csv(&records, output(cli.out.as_deref())?)?;
                }
                _ => bail!("extract-ted needs exactly one of --events or --series"),
            }
        }
        Command::Fit { ted, include_censored } => {
            let family = match cli.family.as_slice() {
                [f] => *f,
                [] => bail!("fit needs --family"),
                _ => bail!("fit takes a single --family"),
            };
            let (d, tau) = durations_design(&cfg, ted, *include_censored)?;
            let model = fit_family(family, cfg.link_mode, &d, &tau, &cfg.fit)?;
            if !model.converged {
                log::warn!("{family} fit did not converge: {:?}", model.diagnostics);
            }
            let mut w = output(cli.out.as_deref())?;
            writeln!(w, "{}", model.to_json()?)?;
        }
        Command::Select { ted, include_censored } => {
            let Some(dir) = &cli.out else { bail!("select needs --out <dir>") };
            let (d, tau) = durations_design(&cfg, ted, *include_censored)?;
            let subsets = best_subsets(&d, &tau)?;
            let full_model = fit_family(Family::Lognormal, LinkMode::Single, &d, &tau, &cfg.fit)?;
            fs::create_dir_all(dir)?;
            let mut w = File::create(dir.join("subsets.json"))?;
            writeln!(w, "{}", serde_json::to_string_pretty(&subsets)?)?;
            let agg = aggregate_daily(&[DaySelection { subsets, full_model }])?;
            write_heatmap_csv(&agg.covariates, &agg.inclusion, File::create(dir.join("inclusion.csv"))?)?;
            write_heatmap_csv(&agg.covariates, &agg.significance, File::create(dir.join("significance.csv"))?)?;
            write_coefficient_csv(&agg.coefficients, File::create(dir.join("coefficients.csv"))?)?;
        }
        Command::QuantileSurface { model, first, second, points, levels, allow_extrapolation } => {
            let m = FittedModel::from_json(&fs::read_to_string(model)?)?;
            let find = |name: &str| -> Result<usize> {
                m.covariates.iter().position(|c| c == name).with_context(|| format!("covariate '{name}' not in the model"))
            };
            let j1 = find(first)?;
            let g1 = default_grid(&m, j1, *points)?;
            let grid = match second {
                Some(s) => {
                    let j2 = find(s)?;
                    let g2 = default_grid(&m, j2, *points)?;
                    quantile_surface(&m, (j1, &g1), (j2, &g2), levels, None, *allow_extrapolation)?
                }
                None => quantile_curve(&m, j1, &g1, levels, None, *allow_extrapolation)?,
            };
            write_grid_csv(&grid, output(cli.out.as_deref())?)?;
        }
        Command::Report { run_dir } => {
            let (families, days, models) = summaries_from_dir(run_dir)?;
            if days.is_empty() {
                bail!("no day directories under {}", run_dir.join("days").display());
            }
            let dest = cli.out.clone().unwrap_or_else(|| run_dir.clone());
            fs::create_dir_all(&dest)?;
            write_tables(&dest, &families, &days, &models)?;
        }
        Command::Run => {
            let report = run_pipeline(&cfg)?;
            for e in &report.errors {
                eprintln!("{}: {}: {}", e.day, e.stage, e.message);
            }
            if !report.success() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LOBRES_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
