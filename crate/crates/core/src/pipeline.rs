//! Batch runs: events to durations, fits, selection and quantile surfaces
//! for every day, with day-level parallelism and deterministic outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::Family;
use crate::error::{Error, Result};
use crate::fit::{fit_loglinear, fit_ml, Design, FitOptions, FittedModel, LinkMode};
use crate::liquidity::{daily_threshold, empirical_quantile, format_value, spread_series, xlm_series, MeasureKind};
use crate::lob::{parse_events, replay, LobEvent, ReplayOptions, TradingWindow};
use crate::quantile::{default_grid, quantile_surface, write_grid_csv};
use crate::select::{aggregate_daily, best_subsets, fixed_subset, write_coefficient_csv, write_heatmap_csv};
use crate::select::{DaySelection, SubsetResult, MAX_SUBSET_COVARIATES};
use crate::synth::{gen_index_activity, read_index_csv, simulate_day, FlowConfig};
use crate::ted::{build_records, covariate_index, design, write_ted_csv, CovariateSpec, COVARIATE_NAMES};

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InputSpec {
    Synth { flow: FlowConfig },
    /// One event CSV per day; index feeds are optional but, when given,
    /// must pair with the event files.
    Files {
        events: Vec<PathBuf>,
        #[serde(default)]
        index: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSet {
    Full,
    FixedSubset,
    Explicit(Vec<String>),
}

impl CovariateSet {
    pub fn indices(&self) -> Result<Vec<usize>> {
        match self {
            CovariateSet::Full => Ok((0..COVARIATE_NAMES.len()).collect()),
            CovariateSet::FixedSubset => Ok(fixed_subset()),
            CovariateSet::Explicit(names) => names
                .iter()
                .map(|n| covariate_index(n).ok_or_else(|| Error::Schema(format!("unknown covariate '{n}'"))))
                .collect(),
        }
    }
}

impl FromStr for CovariateSet {
    type Err = Error;
    /// `full`, `fixed_subset`, or a comma-separated list of names.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovariateSet::Full),
            "fixed_subset" => Ok(CovariateSet::FixedSubset),
            list => {
                let set = CovariateSet::Explicit(list.split(',').map(|n| n.trim().to_string()).collect());
                set.indices()?;
                Ok(set)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub first: String,
    pub second: String,
    pub points: usize,
    pub levels: Vec<f64>,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        SurfaceSpec {
            first: "prevTEDavg".into(),
            second: "spreads".into(),
            points: 25,
            levels: vec![0.1, 0.25, 0.5, 0.75, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub input: InputSpec,
    pub measure: MeasureKind,
    pub threshold_q: f64,
    pub window: TradingWindow,
    pub families: Vec<Family>,
    pub link_mode: LinkMode,
    pub covariates: CovariateSet,
    pub output_dir: PathBuf,
    /// Seeds every random stream; overrides the simulator's own seed.
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
    pub strict: bool,
    pub tick_size: f64,
    pub covariate_spec: CovariateSpec,
    pub include_censored: bool,
    pub select: bool,
    pub surface: Option<SurfaceSpec>,
    pub fit: FitOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: RUN_SCHEMA_VERSION,
            input: InputSpec::Synth { flow: FlowConfig::default() },
            measure: MeasureKind::Spread,
            threshold_q: 0.5,
            window: TradingWindow::default(),
            families: Family::ALL.to_vec(),
            link_mode: LinkMode::Single,
            covariates: CovariateSet::Full,
            output_dir: PathBuf::from("out"),
            seed: 1,
            jobs: 0,
            strict: true,
            tick_size: 0.01,
            covariate_spec: CovariateSpec::default(),
            include_censored: false,
            select: true,
            surface: Some(SurfaceSpec::default()),
            fit: FitOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        if cfg.schema_version != RUN_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "run config schema_version {}, expected {RUN_SCHEMA_VERSION}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Reads a config file; relative input paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let InputSpec::Files { events, index } = &mut cfg.input {
            for p in events.iter_mut().chain(index.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_q > 0.0 && self.threshold_q < 1.0) {
            return Err(Error::InvalidProbability(self.threshold_q));
        }
        if self.window.len_ms() <= 0 || self.window.start_ms < 0 || self.window.end_ms > 24 * 3_600_000 {
            return Err(Error::InvalidParameter("window must lie within the trading day".into()));
        }
        if self.families.is_empty() {
            return Err(Error::InvalidParameter("no families to fit".into()));
        }
        self.covariates.indices()?;
        self.covariate_spec.validate()?;
        match &self.input {
            InputSpec::Synth { flow } => flow.validate()?,
            InputSpec::Files { events, index } => {
                if events.is_empty() {
                    return Err(Error::Empty("event files"));
                }
                if !index.is_empty() && index.len() != events.len() {
                    return Err(Error::InvalidParameter(format!(
                        "{} index files for {} event files",
                        index.len(),
                        events.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn day_labels(&self) -> Vec<String> {
        match &self.input {
            InputSpec::Synth { flow } => (0..flow.days).map(|d| format!("day_{d:03}")).collect(),
            InputSpec::Files { events, .. } => events
                .iter()
                .enumerate()
                .map(|(i, p)| p.file_stem().map_or(format!("day_{i:03}"), |s| s.to_string_lossy().into_owned()))
                .collect(),
        }
    }

    fn load_day(&self, day: usize) -> Result<(Vec<LobEvent>, Vec<i64>)> {
        match &self.input {
            InputSpec::Synth { flow } => {
                let flow = FlowConfig { seed: self.seed, ..flow.clone() };
                Ok((simulate_day(&flow, day)?, gen_index_activity(&flow, day)))
            }
            InputSpec::Files { events, index } => {
                let ev = parse_events(fs::File::open(&events[day])?)?;
                let idx = match index.get(day) {
                    Some(p) => read_index_csv(fs::File::open(p)?)?,
                    None => Vec::new(),
                };
                Ok((ev, idx))
            }
        }
    }
}

/// The single fitting entry point shared by the batch run and the CLI.
/// Single-link lognormal is ordinary least squares on `ln τ`.
pub fn fit_family(family: Family, mode: LinkMode, design: &Design, tau: &[f64], opts: &FitOptions) -> Result<FittedModel> {
    if family == Family::Lognormal && mode == LinkMode::Single {
        fit_loglinear(design, tau)
    } else {
        fit_ml(family, mode, design, tau, opts)
    }
}

/// Lowest-deviance converged family, except that a non-converged gengamma
/// fit hands the designation to the lognormal.
pub fn best_family(models: &[FittedModel]) -> Option<Family> {
    let gengamma_failed = models.iter().any(|m| m.family == Family::GenGamma && !m.converged);
    if gengamma_failed {
        if let Some(m) = models.iter().find(|m| m.family == Family::Lognormal && m.converged) {
            return Some(m.family);
        }
    }
    lowest_deviance(models)
}

pub fn lowest_deviance(models: &[FittedModel]) -> Option<Family> {
    models
        .iter()
        .filter(|m| m.converged && m.deviance.is_finite())
        .min_by(|a, b| a.deviance.total_cmp(&b.deviance))
        .map(|m| m.family)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayError {
    pub day: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub day: String,
    pub n_events: usize,
    pub threshold: Option<f64>,
    pub n_records: usize,
    pub n_censored: usize,
    pub converged: Vec<(Family, bool)>,
    pub lowest_deviance: Option<Family>,
    pub best: Option<Family>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub days: Vec<DaySummary>,
    pub errors: Vec<DayError>,
}

impl RunReport {
    pub fn success(&self) -> bool {
        self.errors.is_empty()
    }
}

struct DayOutcome {
    summary: DaySummary,
    models: Vec<FittedModel>,
    selection: Option<DaySelection>,
    errors: Vec<DayError>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn process_day(cfg: &RunConfig, day: usize, label: &str, dir: &Path) -> DayOutcome {
    let mut out = DayOutcome {
        summary: DaySummary {
            day: label.to_string(),
            n_events: 0,
            threshold: None,
            n_records: 0,
            n_censored: 0,
            converged: Vec::new(),
            lowest_deviance: None,
            best: None,
        },
        models: Vec::new(),
        selection: None,
        errors: Vec::new(),
    };
    let fail = |out: &mut DayOutcome, stage: &str, e: Error| {
        warn!("{label}: {stage}: {e}");
        out.errors.push(DayError { day: label.to_string(), stage: stage.to_string(), message: e.to_string() });
    };
    if let Err(e) = fs::create_dir_all(dir) {
        fail(&mut out, "output", e.into());
        return out;
    }

    let (events, index) = match cfg.load_day(day) {
        Ok(v) => v,
        Err(e) => {
            fail(&mut out, "input", e);
            return out;
        }
    };
    out.summary.n_events = events.len();
    let notional = match cfg.measure {
        MeasureKind::Xlm { notional } => Some(notional),
        MeasureKind::Spread => None,
    };
    let opts = ReplayOptions {
        strict: cfg.strict,
        n_levels: cfg.covariate_spec.n_levels,
        tick_size: cfg.tick_size,
        xlm_notional: notional,
    };
    let extracted = replay(&events, &opts).and_then(|r| {
        let series = match notional {
            Some(n) => xlm_series(&r.frames, cfg.window, n)?,
            None => spread_series(&r.frames, cfg.window),
        };
        let c = daily_threshold(&series, cfg.threshold_q)?.level;
        let records = build_records(&events, &r.frames, &series, c, &index, &cfg.covariate_spec)?;
        Ok((c, records))
    });
    let (c, records) = match extracted {
        Ok(v) => v,
        Err(e) => {
            fail(&mut out, "extract", e);
            return out;
        }
    };
    out.summary.threshold = Some(c);
    out.summary.n_records = records.len();
    out.summary.n_censored = records.iter().filter(|r| r.censored).count();
    let written = fs::File::create(dir.join("ted.csv")).map_err(Error::from).and_then(|f| write_ted_csv(&records, f));
    if let Err(e) = written {
        fail(&mut out, "output", e);
    }

    let columns = cfg.covariates.indices().expect("validated");
    let names: Vec<String> = columns.iter().map(|&j| COVARIATE_NAMES[j].to_string()).collect();
    let (rows, tau) = design(&records, &columns, cfg.include_censored);
    let d = match Design::new(names, &rows) {
        Ok(d) => d,
        Err(e) => {
            fail(&mut out, "design", e);
            return out;
        }
    };
    for &family in &cfg.families {
        match fit_family(family, cfg.link_mode, &d, &tau, &cfg.fit) {
            Ok(m) => {
                if !m.converged {
                    info!("{label}: {family} did not converge");
                }
                let path = dir.join(format!("model_{}.json", family.name()));
                if let Err(e) = write_json(&path, &m) {
                    fail(&mut out, "output", e);
                }
                out.summary.converged.push((family, m.converged));
                out.models.push(m);
            }
            Err(e) => fail(&mut out, &format!("fit {family}"), e),
        }
    }
    out.summary.lowest_deviance = lowest_deviance(&out.models);
    out.summary.best = best_family(&out.models);

    if cfg.select && d.n_covariates() <= MAX_SUBSET_COVARIATES {
        let selected = best_subsets(&d, &tau).and_then(|subsets| {
            let full_model = fit_loglinear(&d, &tau)?;
            Ok(DaySelection { subsets, full_model })
        });
        match selected {
            Ok(s) => {
                if let Err(e) = write_json::<Vec<SubsetResult>>(&dir.join("subsets.json"), &s.subsets) {
                    fail(&mut out, "output", e);
                }
                out.selection = Some(s);
            }
            Err(e) => fail(&mut out, "select", e),
        }
    }

    if let (Some(spec), Some(best)) = (&cfg.surface, out.summary.best) {
        let model = out.models.iter().find(|m| m.family == best).expect("best family was fitted");
        let surface = surface_for(model, spec).and_then(|g| {
            let f = fs::File::create(dir.join("surface.csv"))?;
            write_grid_csv(&g, f)
        });
        if let Err(e) = surface {
            fail(&mut out, "quantile", e);
        }
    }
    out
}

/// Surface over the two configured covariates on their default grids; an error
/// when either is absent from the model.
pub fn surface_for(model: &FittedModel, spec: &SurfaceSpec) -> Result<crate::quantile::QuantileGrid> {
    let find = |n: &str| {
        model
            .covariates
            .iter()
            .position(|c| c == n)
            .ok_or_else(|| Error::Schema(format!("surface covariate '{n}' not in the model")))
    };
    let (j1, j2) = (find(&spec.first)?, find(&spec.second)?);
    let g1 = default_grid(model, j1, spec.points)?;
    let g2 = default_grid(model, j2, spec.points)?;
    quantile_surface(model, (j1, &g1), (j2, &g2), &spec.levels, None, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevianceRow {
    pub family: Family,
    pub converged_days: usize,
    pub lowest_deviance_days: usize,
    pub lowest_deviance_pct: f64,
    pub best_days: usize,
    pub best_pct: f64,
}

/// Per-family share of days with the lowest deviance and with the
/// best-model designation.
pub fn deviance_table(families: &[Family], days: &[DaySummary]) -> Vec<DevianceRow> {
    let n = days.iter().filter(|d| d.best.is_some() || d.lowest_deviance.is_some()).count();
    let pct = |k: usize| if n > 0 { 100.0 * k as f64 / n as f64 } else { 0.0 };
    families
        .iter()
        .map(|&f| {
            let converged_days = days.iter().filter(|d| d.converged.contains(&(f, true))).count();
            let lowest = days.iter().filter(|d| d.lowest_deviance == Some(f)).count();
            let best = days.iter().filter(|d| d.best == Some(f)).count();
            DevianceRow {
                family: f,
                converged_days,
                lowest_deviance_days: lowest,
                lowest_deviance_pct: pct(lowest),
                best_days: best,
                best_pct: pct(best),
            }
        })
        .collect()
}

pub fn write_deviance_csv<W: std::io::Write>(rows: &[DevianceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "converged_days", "lowest_deviance_days", "lowest_deviance_pct", "best_days", "best_pct"])?;
    for r in rows {
        w.write_record([
            r.family.name().to_string(),
            r.converged_days.to_string(),
            r.lowest_deviance_days.to_string(),
            format_value(r.lowest_deviance_pct),
            r.best_days.to_string(),
            format_value(r.best_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Row {
    pub family: Family,
    pub n_days: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Distribution of the adjusted log-scale R² over converged daily fits.
pub fn r2_summary(families: &[Family], models: &[FittedModel]) -> Result<Vec<R2Row>> {
    let mut rows = Vec::new();
    for &f in families {
        let v: Vec<f64> = models.iter().filter(|m| m.family == f && m.converged).map(|m| m.pseudo_r2).collect();
        if v.is_empty() {
            continue;
        }
        let q = |p: f64| empirical_quantile(&v, p);
        rows.push(R2Row { family: f, n_days: v.len(), min: q(0.0)?, q25: q(0.25)?, median: q(0.5)?, q75: q(0.75)?, max: q(1.0)? });
    }
    Ok(rows)
}

pub fn write_r2_csv<W: std::io::Write>(rows: &[R2Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "n_days", "min", "q25", "median", "q75", "max"])?;
    for r in rows {
        w.write_record([
            r.family.name().to_string(),
            r.n_days.to_string(),
            format_value(r.min),
            format_value(r.q25),
            format_value(r.median),
            format_value(r.q75),
            format_value(r.max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cross-day tables from the per-day summaries and models.
pub fn write_tables(out_dir: &Path, families: &[Family], days: &[DaySummary], models: &[FittedModel]) -> Result<()> {
    write_deviance_csv(&deviance_table(families, days), fs::File::create(out_dir.join("deviance_table.csv"))?)?;
    write_r2_csv(&r2_summary(families, models)?, fs::File::create(out_dir.join("r2_summary.csv"))?)?;
    let mut w = csv::Writer::from_writer(fs::File::create(out_dir.join("deviance_by_day.csv"))?);
    w.write_record(["day", "family", "converged", "n_obs", "log_likelihood", "deviance", "pseudo_r2"])?;
    let mut ordered: Vec<(&str, &FittedModel)> = Vec::new();
    let mut it = models.iter();
    for d in days {
        for _ in &d.converged {
            ordered.push((&d.day, it.next().expect("one model per converged entry")));
        }
    }
    for (day, m) in ordered {
        w.write_record([
            day.to_string(),
            m.family.name().to_string(),
            u8::from(m.converged).to_string(),
            m.n_obs.to_string(),
            format_value(m.log_likelihood),
            format_value(m.deviance),
            format_value(m.pseudo_r2),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Day summaries rebuilt from the model JSONs of an earlier run, in day
/// order. Only the fields the cross-day tables use are filled in.
pub fn summaries_from_dir(out_dir: &Path) -> Result<(Vec<Family>, Vec<DaySummary>, Vec<FittedModel>)> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out_dir.join("days"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.is_dir());
    dirs.sort();
    let mut families: Vec<Family> = Vec::new();
    let mut days = Vec::new();
    let mut models = Vec::new();
    for dir in dirs {
        let label = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut day_models = Vec::new();
        for f in Family::ALL {
            let path = dir.join(format!("model_{}.json", f.name()));
            if path.exists() {
                day_models.push(FittedModel::from_json(&fs::read_to_string(&path)?)?);
                if !families.contains(&f) {
                    families.push(f);
                }
            }
        }
        days.push(DaySummary {
            day: label,
            n_events: 0,
            threshold: None,
            n_records: day_models.first().map_or(0, |m| m.n_obs),
            n_censored: 0,
            converged: day_models.iter().map(|m| (m.family, m.converged)).collect(),
            lowest_deviance: lowest_deviance(&day_models),
            best: best_family(&day_models),
        });
        models.extend(day_models);
    }
    families.sort_by_key(|f| Family::ALL.iter().position(|g| g == f));
    Ok((families, days, models))
}

/// Runs every day and writes the output tree under `cfg.output_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out_dir = &cfg.output_dir;
    fs::create_dir_all(out_dir.join("days"))?;
    let labels = cfg.day_labels();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let outcomes: Vec<DayOutcome> = pool.install(|| {
        labels
            .par_iter()
            .enumerate()
            .map(|(i, label)| process_day(cfg, i, label, &out_dir.join("days").join(label)))
            .collect()
    });

    let mut errors: Vec<DayError> = outcomes.iter().flat_map(|o| o.errors.iter().cloned()).collect();
    let days: Vec<DaySummary> = outcomes.iter().map(|o| o.summary.clone()).collect();
    let models: Vec<FittedModel> = outcomes.iter().flat_map(|o| o.models.iter().cloned()).collect();
    write_tables(out_dir, &cfg.families, &days, &models)?;

    let selections: Vec<DaySelection> = outcomes.into_iter().filter_map(|o| o.selection).collect();
    if !selections.is_empty() {
        let sel_dir = out_dir.join("selection");
        fs::create_dir_all(&sel_dir)?;
        match aggregate_daily(&selections) {
            Ok(agg) => {
                write_heatmap_csv(&agg.covariates, &agg.inclusion, fs::File::create(sel_dir.join("inclusion.csv"))?)?;
                write_heatmap_csv(&agg.covariates, &agg.significance, fs::File::create(sel_dir.join("significance.csv"))?)?;
                write_coefficient_csv(&agg.coefficients, fs::File::create(sel_dir.join("coefficients.csv"))?)?;
            }
            Err(e) => errors.push(DayError { day: "all".into(), stage: "select".into(), message: e.to_string() }),
        }
    }

    let report = RunReport { schema_version: RUN_SCHEMA_VERSION, days, errors };
    write_json(&out_dir.join("errors.json"), &report.errors)?;
    write_json(&out_dir.join("run_report.json"), &report)?;
    Ok(report)
}
