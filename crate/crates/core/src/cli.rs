//! Experiment runner behind the `mlmc-greeks` binary.
//!
//! Every command takes its settings from an optional flat JSON config file,
//! with command-line flags taking precedence. Outputs are written once via a
//! temporary file in the target directory followed by a rename.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{GridKind, Method, MethodSpec, PayoffKind, SplitRule};
use crate::greeks::{GreekTriple, Output};
use crate::mlmc::{self, GreekTolerance, LevelStats, MlmcConfig, MlmcReport};
use crate::payoff::crossing_prob;
use crate::rng::{SampleKey, StreamTag};
use crate::sde::{self, MarketParams};

pub const LEVELS_SCHEMA: &str = "# schema: mlmc-greeks/levels/v1";
pub const DENSITY_SCHEMA: &str = "# schema: mlmc-greeks/density/v1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Deepest level accepted from a config.
pub const MAX_LEVEL_CAP: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Levels,
    Mlmc,
    Density,
    Compare,
}

/// `d` as given on the command line or in a config: a count or "auto".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSetting {
    Fixed(usize),
    Named(AutoSplit),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoSplit {
    Auto,
}

impl FromStr for SplitSetting {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(SplitSetting::Named(AutoSplit::Auto));
        }
        s.parse::<usize>()
            .map(SplitSetting::Fixed)
            .map_err(|_| format!("expected a positive integer or 'auto', got '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GridChoice {
    Uniform,
    Power,
}

/// Flat experiment description; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub s0: f64,
    pub k: f64,
    pub r: f64,
    pub sigma: f64,
    pub t: f64,
    pub barrier: Option<f64>,
    pub method: Method,
    pub payoff: PayoffKind,
    pub d: SplitSetting,
    /// c in d = ceil(c · 2^{l/2}) when `d` is "auto".
    pub split_c: f64,
    pub h_star: Option<f64>,
    pub grid: GridChoice,
    /// Power-grid exponent; derived from the barrier when absent.
    pub gamma: Option<f64>,
    pub level_min: u32,
    pub level_max: u32,
    pub samples: u64,
    pub epsilon: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub pilot_samples: u64,
    pub max_level: u32,
    pub greek_tolerance: GreekTolerance,
    pub bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = MarketParams::reference();
        ExperimentConfig {
            mode: None,
            s0: m.s0,
            k: m.k,
            r: m.r,
            sigma: m.sigma,
            t: m.t,
            barrier: None,
            method: Method::Pathwise,
            payoff: PayoffKind::Call,
            d: SplitSetting::Fixed(10),
            split_c: 10.0,
            h_star: None,
            grid: GridChoice::Uniform,
            gamma: None,
            level_min: 2,
            level_max: 8,
            samples: 1_000_000,
            epsilon: 0.02,
            seed: 1,
            out: None,
            pilot_samples: 10_000,
            max_level: MAX_LEVEL_CAP,
            greek_tolerance: GreekTolerance::Relative,
            bins: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn market(&self) -> Result<MarketParams> {
        let p = MarketParams {
            s0: self.s0,
            k: self.k,
            r: self.r,
            sigma: self.sigma,
            t: self.t,
            barrier: self.barrier,
        };
        p.validate()?;
        Ok(p)
    }

    fn grid_kind(&self, choice: GridChoice) -> Result<GridKind> {
        Ok(match choice {
            GridChoice::Uniform => GridKind::Uniform,
            GridChoice::Power => {
                let gamma = match (self.gamma, self.barrier) {
                    (Some(g), _) => g,
                    (None, Some(b)) => sde::gamma_for_barrier(self.s0, b, self.sigma)?,
                    (None, None) => return Err(Error::Config("power grid needs gamma or a barrier".into())),
                };
                GridKind::Power { gamma }
            }
        })
    }

    pub fn method_spec(&self) -> Result<MethodSpec> {
        self.method_spec_on(self.grid)
    }

    fn method_spec_on(&self, grid: GridChoice) -> Result<MethodSpec> {
        let split = match self.d {
            SplitSetting::Fixed(d) => SplitRule::Fixed(d),
            SplitSetting::Named(AutoSplit::Auto) => SplitRule::Adaptive { c: self.split_c },
        };
        let mut spec = MethodSpec::new(self.method, self.payoff)
            .with_split(split)
            .with_grid(self.grid_kind(grid)?);
        if let Some(h) = self.h_star {
            spec = spec.with_h_star(h);
        }
        spec.validate(&self.market()?)?;
        Ok(spec)
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(Error::Config(format!("config is for mode {m:?}, command is {mode:?}")));
            }
        }
        self.market()?;
        if self.level_min > self.level_max {
            return Err(Error::Config(format!(
                "level range {}:{} is empty",
                self.level_min, self.level_max
            )));
        }
        if self.level_max > MAX_LEVEL_CAP || self.max_level > MAX_LEVEL_CAP {
            return Err(Error::Config(format!("levels above {MAX_LEVEL_CAP} are not supported")));
        }
        match mode {
            Mode::Levels | Mode::Compare if self.samples < 100 => {
                return Err(Error::Config("samples must be >= 100".into()))
            }
            Mode::Density => {
                self.market()?.barrier_level()?;
                if self.bins == 0 || self.samples == 0 {
                    return Err(Error::Config("density needs bins >= 1 and samples >= 1".into()));
                }
            }
            Mode::Mlmc if !(self.epsilon > 0.0) => return Err(Error::Config("eps must be positive".into())),
            _ => {}
        }
        if mode == Mode::Compare {
            self.market()?.barrier_level()?;
        }
        if mode != Mode::Density {
            self.method_spec()?;
        }
        Ok(())
    }

    fn apply(&mut self, a: &RunArgs) -> Result<()> {
        if let Some(v) = a.seed {
            self.seed = v;
        }
        if let Some(v) = &a.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = &a.levels {
            let (lo, hi) = parse_level_range(v)?;
            self.level_min = lo;
            self.level_max = hi;
        }
        if let Some(v) = a.samples {
            self.samples = v;
        }
        if let Some(v) = a.eps {
            self.epsilon = v;
        }
        if let Some(v) = &a.method {
            self.method = v.parse()?;
        }
        if let Some(v) = &a.payoff {
            self.payoff = v.parse()?;
        }
        if let Some(v) = a.d {
            self.d = v;
        }
        if let Some(v) = a.hstar {
            self.h_star = Some(v);
        }
        if let Some(v) = a.grid {
            self.grid = v;
        }
        if let Some(v) = a.gamma {
            self.gamma = Some(v);
        }
        if let Some(v) = a.barrier {
            self.barrier = Some(v);
        }
        if let Some(v) = a.bins {
            self.bins = v;
        }
        Ok(())
    }
}

pub fn parse_level_range(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::Config(format!("expected --levels MIN:MAX, got '{s}'"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

#[derive(Debug, Parser)]
#[command(
    name = "mlmc-greeks",
    version,
    about = "Multilevel Monte Carlo values, deltas and vegas under GBM"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-level means and variances with fitted decay rates (CSV + JSON summary).
    Levels(RunArgs),
    /// Adaptive multilevel estimate to a target RMS accuracy (JSON).
    Mlmc(RunArgs),
    /// Histogram of first barrier-crossing times (CSV + JSON summary).
    Density(RunArgs),
    /// Level variances on uniform vs power time grids (JSON).
    Compare(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// MIN:MAX
    #[arg(long)]
    pub levels: Option<String>,
    /// Samples per level.
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// pathwise | cond_exp | split | vibrato
    #[arg(long)]
    pub method: Option<String>,
    /// call | digital | lookback | barrier | barrier_smooth
    #[arg(long)]
    pub payoff: Option<String>,
    /// Splitting count, or "auto" for ceil(split_c · 2^{l/2}).
    #[arg(long)]
    pub d: Option<SplitSetting>,
    #[arg(long)]
    pub hstar: Option<f64>,
    #[arg(long, value_enum)]
    pub grid: Option<GridChoice>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub barrier: Option<f64>,
    /// Histogram bins (density).
    #[arg(long)]
    pub bins: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Resolve config file + flags for one command.
pub fn resolve_config(mode: Mode, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(args)?;
    cfg.validate(mode)?;
    Ok(cfg)
}

/// A finished command: files to write and the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    /// Primary artifact (CSV or JSON).
    pub primary: String,
    /// JSON summary accompanying a CSV.
    pub summary: Option<String>,
    pub exit_code: i32,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub beta_hat: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub alpha_reliable: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelsSummary {
    pub method: Method,
    pub payoff: PayoffKind,
    pub seed: u64,
    pub samples_per_level: u64,
    pub fit_range: Option<(u32, u32)>,
    pub value: FitSummary,
    pub delta: FitSummary,
    pub vega: FitSummary,
    pub rejected: u64,
    pub non_finite: u64,
}

impl LevelsSummary {
    pub fn fit(&self, o: Output) -> &FitSummary {
        match o {
            Output::Value => &self.value,
            Output::Delta => &self.delta,
            Output::Vega => &self.vega,
        }
    }
}

fn fit_summary(levels: &[LevelStats], o: Output, range: Option<(u32, u32)>) -> FitSummary {
    let Some((lo, hi)) = range else {
        return FitSummary {
            beta_hat: None,
            alpha_hat: None,
            alpha_reliable: false,
            note: Some("fewer than 3 correction levels".into()),
        };
    };
    let mut note = None;
    let beta_hat = match mlmc::fit_rate(levels, o, lo..=hi) {
        Ok(f) => Some(f.beta),
        Err(e) => {
            note = Some(e.to_string());
            None
        }
    };
    let (alpha_hat, alpha_reliable) = match mlmc::fit_weak_rate(levels, o) {
        Ok(w) => (Some(w.alpha), w.reliable),
        Err(e) => {
            note.get_or_insert(e.to_string());
            (None, false)
        }
    };
    FitSummary {
        beta_hat,
        alpha_hat,
        alpha_reliable,
        note,
    }
}

pub fn levels_csv(levels: &[LevelStats]) -> String {
    let mut s = String::new();
    s.push_str(LEVELS_SCHEMA);
    s.push('\n');
    s.push_str("level,h,n,mean_value,var_value,mean_delta,var_delta,mean_vega,var_vega,cost\n");
    for l in levels {
        let (m, v) = (l.mean, l.variance);
        writeln!(
            s,
            "{},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            l.level, l.h, l.n_samples, m.value, v.value, m.delta, v.delta, m.vega, v.vega, l.cost
        )
        .unwrap();
    }
    s
}

/// Correction levels (>= 1) used for rate fits, if at least three exist.
fn fit_range(lo: u32, hi: u32) -> Option<(u32, u32)> {
    let lo = lo.max(1);
    (hi >= lo + 2).then_some((lo, hi))
}

pub fn cmd_levels(cfg: &ExperimentConfig) -> Result<(Vec<LevelStats>, LevelsSummary, CommandOutput)> {
    let params = cfg.market()?;
    let spec = cfg.method_spec()?;
    let levels = mlmc::collect_levels(&spec, &params, cfg.level_min..=cfg.level_max, cfg.samples, cfg.seed)?;
    let range = fit_range(cfg.level_min, cfg.level_max);
    let summary = LevelsSummary {
        method: cfg.method,
        payoff: cfg.payoff,
        seed: cfg.seed,
        samples_per_level: cfg.samples,
        fit_range: range,
        value: fit_summary(&levels, Output::Value, range),
        delta: fit_summary(&levels, Output::Delta, range),
        vega: fit_summary(&levels, Output::Vega, range),
        rejected: levels.iter().map(|l| l.rejected).sum(),
        non_finite: levels.iter().map(|l| l.non_finite).sum(),
    };
    let out = CommandOutput {
        primary: levels_csv(&levels),
        summary: Some(to_json(&summary)),
        exit_code: if summary.non_finite > 0 {
            EXIT_NUMERICAL
        } else {
            EXIT_OK
        },
    };
    Ok((levels, summary, out))
}

pub fn cmd_mlmc(cfg: &ExperimentConfig) -> Result<(MlmcReport, CommandOutput)> {
    let params = cfg.market()?;
    let spec = cfg.method_spec()?;
    let mcfg = MlmcConfig {
        pilot_samples: cfg.pilot_samples,
        max_level: cfg.max_level,
        greek_tolerance: cfg.greek_tolerance,
        ..MlmcConfig::default()
    };
    let report = mlmc::run_mlmc_with(&spec, &params, cfg.epsilon, cfg.seed, &mcfg)?;
    let exit_code = if report.non_finite > 0 {
        EXIT_NUMERICAL
    } else if !report.converged {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    };
    let out = CommandOutput {
        primary: to_json(&report),
        summary: None,
        exit_code,
    };
    Ok((report, out))
}

/// First step whose crossing test fires, reported at the step midpoint.
/// Step n crosses when an independent uniform falls below the bridge
/// crossing probability of that step.
pub fn first_crossing_time(params: &MarketParams, grid: &sde::TimeGrid, key: SampleKey) -> Result<Option<f64>> {
    let b = params.barrier_level()?;
    let path = sde::simulate_coupled(params, grid, None, key.with_tag(StreamTag::Path), false)?;
    let mut u = key.with_tag(StreamTag::Bridge).stream();
    let t = grid.boundaries();
    for (n, w) in path.fine_states.windows(2).enumerate() {
        let h = grid.widths()[n];
        let p = crossing_prob(w[0].s, w[1].s, b, params.sigma * w[0].s, h);
        if u.uniform() < p {
            return Ok(Some(0.5 * (t[n] + t[n + 1])));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySummary {
    pub barrier: f64,
    pub level: u32,
    pub paths: u64,
    pub crossings: u64,
    pub empty: bool,
    /// (log(S0/B)/sigma)^2
    pub tau: f64,
    pub median_crossing_time: Option<f64>,
    pub fraction_before_2tau: Option<f64>,
    pub fraction_second_half: Option<f64>,
    /// Centre of the fullest bin.
    pub peak_time: Option<f64>,
    /// Width of the region where the histogram is at least half its peak.
    pub peak_width: Option<f64>,
}

pub fn cmd_density(cfg: &ExperimentConfig) -> Result<(DensitySummary, Vec<u64>, CommandOutput)> {
    let params = cfg.market()?;
    let b = params.barrier_level()?;
    let level = cfg.level_max;
    let grid = cfg.grid_kind(cfg.grid)?.grid(level, params.t)?;
    const CHUNK: u64 = 4096;
    let chunks = cfg.samples.div_ceil(CHUNK);
    let parts: Vec<Result<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut times = Vec::new();
            for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.samples) {
                let key = SampleKey::new(cfg.seed, level, i, StreamTag::Path);
                if let Some(tc) = first_crossing_time(&params, &grid, key)? {
                    times.push(tc);
                }
            }
            Ok(times)
        })
        .collect();
    let mut times = Vec::new();
    for p in parts {
        times.extend(p?);
    }

    let bins = cfg.bins;
    let width = params.t / bins as f64;
    let mut counts = vec![0u64; bins];
    for &tc in &times {
        counts[((tc / width) as usize).min(bins - 1)] += 1;
    }
    let n = times.len() as u64;
    let tau = sde::crossing_time_scale(params.s0, b, params.sigma);
    let frac =
        |pred: &dyn Fn(f64) -> bool| (n > 0).then(|| times.iter().filter(|&&x| pred(x)).count() as f64 / n as f64);
    let median = (n > 0).then(|| {
        let mut s = times.clone();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    });
    let (peak_time, peak_width) = if n > 0 {
        let (imax, &cmax) = counts
            .iter()
            .enumerate()
            .max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i)))
            .unwrap();
        let above = counts.iter().filter(|&&c| 2 * c >= cmax).count();
        (Some((imax as f64 + 0.5) * width), Some(above as f64 * width))
    } else {
        (None, None)
    };
    let summary = DensitySummary {
        barrier: b,
        level,
        paths: cfg.samples,
        crossings: n,
        empty: n == 0,
        tau,
        median_crossing_time: median,
        fraction_before_2tau: frac(&|x| x < 2.0 * tau),
        fraction_second_half: frac(&|x| x >= 0.5 * params.t),
        peak_time,
        peak_width,
    };
    if summary.empty {
        log::info!("no path crossed the barrier {b}");
    }

    let mut csv = String::new();
    csv.push_str(DENSITY_SCHEMA);
    csv.push('\n');
    csv.push_str("t_lo,t_hi,count,density\n");
    for (i, c) in counts.iter().enumerate() {
        let dens = if n > 0 { *c as f64 / (n as f64 * width) } else { 0.0 };
        writeln!(
            csv,
            "{:e},{:e},{},{:e}",
            i as f64 * width,
            (i + 1) as f64 * width,
            c,
            dens
        )
        .unwrap();
    }
    let out = CommandOutput {
        primary: csv,
        summary: Some(to_json(&summary)),
        exit_code: EXIT_OK,
    };
    Ok((summary, counts, out))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub level: u32,
    pub uniform: GreekTriple,
    pub power: GreekTriple,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputComparison {
    /// Power-grid variance below uniform at both of the two finest levels.
    pub power_lower_at_finest_two: bool,
    /// Power-grid variance at or above uniform at the coarsest level.
    pub power_not_lower_at_coarsest: bool,
    /// Same check at the coarsest level where the grids differ.
    pub power_higher_at_coarsest_distinct: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub method: Method,
    pub payoff: PayoffKind,
    pub barrier: f64,
    pub gamma: f64,
    pub seed: u64,
    pub samples_per_level: u64,
    /// Per-level variance of the correction on each grid.
    pub variances: Vec<CompareRow>,
    pub value: OutputComparison,
    pub delta: OutputComparison,
    pub vega: OutputComparison,
    pub non_finite: u64,
}

impl CompareReport {
    pub fn comparison(&self, o: Output) -> &OutputComparison {
        match o {
            Output::Value => &self.value,
            Output::Delta => &self.delta,
            Output::Vega => &self.vega,
        }
    }
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<(CompareReport, CommandOutput)> {
    let params = cfg.market()?;
    let b = params.barrier_level()?;
    let uniform = cfg.method_spec_on(GridChoice::Uniform)?;
    let power = cfg.method_spec_on(GridChoice::Power)?;
    let GridKind::Power { gamma } = power.grid else {
        unreachable!()
    };
    let range = cfg.level_min..=cfg.level_max;
    let lu = mlmc::collect_levels(&uniform, &params, range.clone(), cfg.samples, cfg.seed)?;
    let lp = mlmc::collect_levels(&power, &params, range, cfg.samples, cfg.seed)?;
    let rows: Vec<CompareRow> = lu
        .iter()
        .zip(&lp)
        .map(|(u, p)| CompareRow {
            level: u.level,
            uniform: u.variance,
            power: p.variance,
        })
        .collect();
    let cmp = |o: Output| {
        let finest = &rows[rows.len().saturating_sub(2)..];
        let coarsest = &rows[0];
        OutputComparison {
            power_lower_at_finest_two: rows.len() >= 2 && finest.iter().all(|r| r.power[o] < r.uniform[o]),
            power_not_lower_at_coarsest: coarsest.power[o] >= coarsest.uniform[o],
            power_higher_at_coarsest_distinct: rows.iter().find(|r| r.level >= 1).map(|r| r.power[o] > r.uniform[o]),
        }
    };
    let report = CompareReport {
        method: cfg.method,
        payoff: cfg.payoff,
        barrier: b,
        gamma,
        seed: cfg.seed,
        samples_per_level: cfg.samples,
        value: cmp(Output::Value),
        delta: cmp(Output::Delta),
        vega: cmp(Output::Vega),
        variances: rows,
        non_finite: lu.iter().chain(&lp).map(|l| l.non_finite).sum(),
    };
    let out = CommandOutput {
        primary: to_json(&report),
        summary: None,
        exit_code: if report.non_finite > 0 { EXIT_NUMERICAL } else { EXIT_OK },
    };
    Ok((report, out))
}

/// Write `contents` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Where the summary of a CSV-producing command goes: `<out>.json`.
pub fn summary_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn emit(cfg: &ExperimentConfig, out: &CommandOutput) -> Result<()> {
    match &cfg.out {
        Some(path) => {
            write_atomic(path, &out.primary)?;
            if let Some(s) = &out.summary {
                write_atomic(&summary_path(path), s)?;
            }
        }
        None => {
            print!("{}", out.primary);
            if let Some(s) = &out.summary {
                eprint!("{s}");
            }
        }
    }
    Ok(())
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Fit(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn run_command(command: &Command) -> Result<i32> {
    let (mode, args) = match command {
        Command::Levels(a) => (Mode::Levels, a),
        Command::Mlmc(a) => (Mode::Mlmc, a),
        Command::Density(a) => (Mode::Density, a),
        Command::Compare(a) => (Mode::Compare, a),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = resolve_config(mode, args)?;
    let out = match mode {
        Mode::Levels => cmd_levels(&cfg)?.2,
        Mode::Mlmc => cmd_mlmc(&cfg)?.1,
        Mode::Density => cmd_density(&cfg)?.2,
        Mode::Compare => cmd_compare(&cfg)?.1,
    };
    emit(&cfg, &out)?;
    Ok(out.exit_code)
}

/// Run a parsed command line, reporting errors on stderr; returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    match run_command(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
