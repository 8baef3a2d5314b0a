//! Command-line front end: `synth`, `filter`, `fit`, `simulate`, `report`.
//!
//! Every subcommand accepts `--config FILE`, a flat TOML file of
//! `key = value` pairs named like the long flags (dashes or underscores).
//! Flags given on the command line override the file.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::boot::{run_simulation, BootFund, SimConfig, SimulationOutput, DEFAULT_PCT_GRID};
use crate::panel::{align, ingest_funds, write_funds_csv, FactorPanel, FundSeries, Model, MonthId};
use crate::regress::{batch_fit, RegressionResult};
use crate::report::{
    build_coefficient_summary, build_percentile_report, emit_cdf, read_simulation_artifacts,
    write_simulation_artifacts, PctBelowMode, ReportLabels, ReportMeta,
};
use crate::screen::{run_screen, size_label, ClauseGrouping, ScreenConfig, ScreenOutcome};
use crate::synth::{generate_universe, write_truth_csv, ArchetypeMix, SynthConfig};

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or missing inputs (exit 2).
    Usage(anyhow::Error),
    /// Failure while running (exit 1).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "fundalpha",
    version,
    about = "Luck versus skill in mutual fund alphas"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic factor panel, fund universe and truth file.
    Synth(SynthCmd),
    /// Screen funds and write one audit row per fund.
    Filter(FilterCmd),
    /// Fit a factor model to every admitted fund.
    Fit(FitCmd),
    /// Run the zero-alpha bootstrap and write its artifacts.
    Simulate(SimulateCmd),
    /// Build percentile tables and CDF data, end to end or from artifacts.
    Report(ReportCmd),
}

/// Implements field-wise fallback for `Option` settings.
macro_rules! layered {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            fn or(mut self, other: Self) -> Self {
                $( if self.$field.is_none() { self.$field = other.$field; } )*
                self
            }
        }
    };
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default)]
struct InputArgs {
    /// Factor CSV (date,MKT_RF,SMB,HML[,MOM][,RMW][,CMA],RF).
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Fund CSV (fund_id,date,net_return,aum).
    #[arg(long)]
    funds: Option<PathBuf>,
    /// First month of the study period (YYYYMM).
    #[arg(long)]
    period_start: Option<MonthId>,
    /// Last month of the study period (YYYYMM).
    #[arg(long)]
    period_end: Option<MonthId>,
}
layered!(InputArgs {
    factors,
    funds,
    period_start,
    period_end
});

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default)]
struct ScreenArgs {
    #[arg(long)]
    incubation_threshold: Option<f64>,
    #[arg(long)]
    rf_tstat_max: Option<f64>,
    #[arg(long)]
    index_beta_band: Option<f64>,
    #[arg(long)]
    index_tstat_max: Option<f64>,
    #[arg(long)]
    leverage_beta_max_excess: Option<f64>,
    #[arg(long)]
    market_tstat_min: Option<f64>,
    #[arg(long)]
    min_history: Option<usize>,
    /// Size cutoffs in millions, comma separated.
    #[arg(long, value_delimiter = ',')]
    size_cutoffs: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    clause_grouping: Option<ClauseGrouping>,
}
layered!(ScreenArgs {
    incubation_threshold,
    rf_tstat_max,
    index_beta_band,
    index_tstat_max,
    leverage_beta_max_excess,
    market_tstat_min,
    min_history,
    size_cutoffs,
    clause_grouping,
});

impl ScreenArgs {
    fn config(&self) -> Result<ScreenConfig, CliError> {
        let d = ScreenConfig::default();
        let cfg = ScreenConfig {
            incubation_threshold_aum: self
                .incubation_threshold
                .unwrap_or(d.incubation_threshold_aum),
            rf_tstat_max: self.rf_tstat_max.unwrap_or(d.rf_tstat_max),
            index_beta_band: self.index_beta_band.unwrap_or(d.index_beta_band),
            index_tstat_max: self.index_tstat_max.unwrap_or(d.index_tstat_max),
            leverage_beta_max_excess: self
                .leverage_beta_max_excess
                .unwrap_or(d.leverage_beta_max_excess),
            market_tstat_min: self.market_tstat_min.unwrap_or(d.market_tstat_min),
            min_history_months: self.min_history.unwrap_or(d.min_history_months),
            size_cutoffs: self.size_cutoffs.clone().unwrap_or(d.size_cutoffs),
            clause_grouping: self.clause_grouping.unwrap_or(d.clause_grouping),
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default)]
struct ModelArgs {
    #[arg(long, value_enum)]
    model: Option<Model>,
    /// Size group label (e.g. 5m, 250m, 1b) or "all".
    #[arg(long)]
    group: Option<String>,
    /// Skip the fund screens and use every fund as reported.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_screen: Option<bool>,
}
layered!(ModelArgs {
    model,
    group,
    no_screen
});

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default)]
struct SimArgs {
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_resampled_obs: Option<usize>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}
layered!(SimArgs {
    sims,
    seed,
    min_resampled_obs,
    threads
});

#[derive(Debug, Args)]
struct SynthCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: SynthArgs,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default)]
struct SynthArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    n_funds: Option<usize>,
    #[arg(long)]
    n_months: Option<usize>,
    #[arg(long)]
    start_month: Option<MonthId>,
    #[arg(long)]
    seed: Option<u64>,
    /// True monthly alpha of active funds.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long)]
    idio_vol: Option<f64>,
    /// Archetype fractions, e.g. active=0.6,index=0.1,money_market=0.1,leveraged=0.1,incubating=0.1
    #[arg(long)]
    mix: Option<String>,
    /// Number of leading funds given --skilled-alpha.
    #[arg(long)]
    skilled_count: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    skilled_alpha: Option<f64>,
    #[arg(long)]
    min_coverage: Option<usize>,
    #[arg(long)]
    incubation_exit: Option<usize>,
    #[arg(long, value_enum)]
    truth_model: Option<Model>,
}
layered!(SynthArgs {
    out_dir,
    n_funds,
    n_months,
    start_month,
    seed,
    alpha,
    idio_vol,
    mix,
    skilled_count,
    skilled_alpha,
    min_coverage,
    incubation_exit,
    truth_model,
});

#[derive(Debug, Args)]
struct FilterCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    screen: ScreenArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default)]
struct OutArgs {
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coefficient summary CSV path.
    #[arg(long)]
    summary: Option<PathBuf>,
}
layered!(OutArgs { out, summary });

#[derive(Debug, Args)]
struct FitCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    screen: ScreenArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct SimulateCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    screen: ScreenArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    dir: SimDirArgs,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default)]
struct SimDirArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
}
layered!(SimDirArgs { out_dir });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default)]
struct DirArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Read a previous `simulate` output directory instead of raw inputs.
    #[arg(long)]
    from_sim: Option<PathBuf>,
    #[arg(long, value_enum)]
    pct_below_mode: Option<PctBelowMode>,
}
layered!(DirArgs {
    out_dir,
    from_sim,
    pct_below_mode
});

#[derive(Debug, Args)]
struct ReportCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    screen: ScreenArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    dir: DirArgs,
}

const CONFIG_KEYS: &[&str] = &[
    "factors",
    "funds",
    "period_start",
    "period_end",
    "incubation_threshold",
    "rf_tstat_max",
    "index_beta_band",
    "index_tstat_max",
    "leverage_beta_max_excess",
    "market_tstat_min",
    "min_history",
    "size_cutoffs",
    "clause_grouping",
    "model",
    "group",
    "no_screen",
    "sims",
    "seed",
    "min_resampled_obs",
    "threads",
    "out",
    "summary",
    "out_dir",
    "from_sim",
    "pct_below_mode",
    "n_funds",
    "n_months",
    "start_month",
    "alpha",
    "idio_vol",
    "mix",
    "skilled_count",
    "skilled_alpha",
    "min_coverage",
    "incubation_exit",
    "truth_model",
];

/// Parsed `--config` file.
struct ConfigFile(toml::Table);

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self(toml::Table::new()));
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))
            .map_err(CliError::Usage)?;
        let raw: toml::Table = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))
            .map_err(CliError::Usage)?;
        let mut table = toml::Table::new();
        for (k, v) in raw {
            let key = k.replace('-', "_");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(usage(anyhow!(
                    "unknown config key {k:?} in {}",
                    path.display()
                )));
            }
            table.insert(key, v);
        }
        Ok(Self(table))
    }

    fn get<T: serde::de::DeserializeOwned>(&self) -> Result<T, CliError> {
        toml::Value::Table(self.0.clone())
            .try_into()
            .map_err(|e: toml::de::Error| usage(anyhow!("invalid config value: {e}")))
    }
}

/// Entry point; returns the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (kind, err) = match &e {
                CliError::Usage(err) => ("usage", err),
                CliError::Runtime(err) => ("runtime", err),
            };
            eprintln!("error ({kind}): {err:#}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(c) => {
            let file = ConfigFile::load(c.config.as_deref())?;
            synth(c.opts.or(file.get()?))
        }
        Command::Filter(c) => {
            let file = ConfigFile::load(c.config.as_deref())?;
            filter(
                c.input.or(file.get()?),
                c.screen.or(file.get()?),
                c.out.or(file.get()?),
            )
        }
        Command::Fit(c) => {
            let file = ConfigFile::load(c.config.as_deref())?;
            fit(
                c.input.or(file.get()?),
                c.screen.or(file.get()?),
                c.model.or(file.get()?),
                c.out.or(file.get()?),
            )
        }
        Command::Simulate(c) => {
            let file = ConfigFile::load(c.config.as_deref())?;
            simulate(
                c.input.or(file.get()?),
                c.screen.or(file.get()?),
                c.model.or(file.get()?),
                c.sim.or(file.get()?),
                c.dir.or(file.get()?),
            )
        }
        Command::Report(c) => {
            let file = ConfigFile::load(c.config.as_deref())?;
            report(
                c.input.or(file.get()?),
                c.screen.or(file.get()?),
                c.model.or(file.get()?),
                c.sim.or(file.get()?),
                c.dir.or(file.get()?),
            )
        }
    }
}

fn parse_mix(text: &str) -> Result<ArchetypeMix, CliError> {
    let mut mix = ArchetypeMix {
        active: 0.0,
        index_tracker: 0.0,
        money_market: 0.0,
        leveraged: 0.0,
        incubating: 0.0,
    };
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| usage(anyhow!("mix entry {part:?} is not name=fraction")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| usage(anyhow!("bad fraction in {part:?}")))?;
        let slot = match k.trim() {
            "active" => &mut mix.active,
            "index" => &mut mix.index_tracker,
            "money_market" => &mut mix.money_market,
            "leveraged" => &mut mix.leveraged,
            "incubating" => &mut mix.incubating,
            other => return Err(usage(anyhow!("unknown archetype {other:?}"))),
        };
        *slot = v;
    }
    Ok(mix)
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| usage(anyhow!("missing required option --{flag}")))
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let out_dir = required(a.out_dir, "out-dir")?;
    let d = SynthConfig::default();
    let mut cfg = SynthConfig {
        n_months: a.n_months.unwrap_or(d.n_months),
        n_funds: a.n_funds.unwrap_or(d.n_funds),
        start_month: a.start_month.unwrap_or(d.start_month),
        alpha: a.alpha.unwrap_or(d.alpha),
        idio_vol: a.idio_vol.unwrap_or(d.idio_vol),
        mix: a
            .mix
            .as_deref()
            .map(parse_mix)
            .transpose()?
            .unwrap_or(d.mix),
        min_coverage_months: a.min_coverage,
        incubation_exit_month: a.incubation_exit,
        truth_model: a.truth_model.unwrap_or(d.truth_model),
        seed: a.seed.unwrap_or(d.seed),
        ..d
    };
    if let Some(k) = a.skilled_count {
        let alpha = required(a.skilled_alpha, "skilled-alpha")?;
        cfg.alpha_overrides = (0..k).map(|i| (i, alpha)).collect();
    }
    cfg.validate().map_err(usage)?;
    let u = generate_universe(&cfg).map_err(usage)?;

    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    u.panel
        .write_csv(create(&out_dir.join("factors.csv"))?)
        .context("writing factors.csv")?;
    write_funds_csv(&u.funds, create(&out_dir.join("funds.csv"))?).context("writing funds.csv")?;
    write_truth_csv(&u.truth, create(&out_dir.join("truth.csv"))?).context("writing truth.csv")?;
    println!(
        "wrote {} months of factors and {} funds to {}",
        u.panel.len(),
        u.funds.len(),
        out_dir.display()
    );
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(CliError::Runtime)
}

/// Panel and funds restricted to the study period.
struct Inputs {
    panel: FactorPanel,
    funds: Vec<FundSeries>,
    period: String,
}

fn load_inputs(a: &InputArgs) -> Result<Inputs, CliError> {
    let factors = required(a.factors.as_ref(), "factors")?;
    let funds_path = required(a.funds.as_ref(), "funds")?;
    let open = |p: &PathBuf, what: &str| {
        File::open(p).map_err(|e| usage(anyhow!("cannot open {what} file {}: {e}", p.display())))
    };
    let panel = FactorPanel::from_csv(open(factors, "factor")?)
        .with_context(|| format!("reading {}", factors.display()))?;
    let funds = ingest_funds(open(funds_path, "fund")?)
        .with_context(|| format!("reading {}", funds_path.display()))?;

    let panel = panel
        .restrict(a.period_start, a.period_end)
        .map_err(|_| usage(anyhow!("study period does not overlap the factor panel")))?;
    let (start, end) = (panel.first_month(), panel.last_month());
    let funds = funds
        .iter()
        .map(|f| f.restrict(Some(start), Some(end)))
        .filter(|f| !f.is_empty())
        .collect();
    Ok(Inputs {
        panel,
        funds,
        period: format!("{start}-{end}"),
    })
}

fn filter(input: InputArgs, screen: ScreenArgs, out: OutArgs) -> Result<(), CliError> {
    let cfg = screen.config()?;
    let out = required(out.out, "out")?;
    let inputs = load_inputs(&input)?;
    let outcomes = run_screen(&inputs.funds, &inputs.panel, &cfg);
    write_outcomes(&outcomes, &out)?;
    let admitted = outcomes.iter().filter(|o| o.admitted).count();
    println!("{admitted} of {} funds admitted", outcomes.len());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_outcomes(outcomes: &[ScreenOutcome], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| CliError::Runtime(anyhow!("writing {}: {e}", path.display()));
    w.write_record([
        "fund_id",
        "admitted",
        "failing_rule",
        "beta",
        "t_beta",
        "t_rf",
        "n_obs",
        "last_aum",
        "size_groups",
    ])
    .map_err(io)?;
    for o in outcomes {
        let (beta, t_beta) = match o.market_beta() {
            Some((b, t)) => (Some(b), t),
            None => (None, None),
        };
        w.write_record([
            o.fund_id.clone(),
            o.admitted.to_string(),
            o.failing_rule().map(|r| r.to_string()).unwrap_or_default(),
            opt(beta),
            opt(t_beta),
            opt(o.t_rf()),
            o.n_obs.to_string(),
            opt(o.last_aum),
            o.size_groups.join(";"),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.into()))?;
    Ok(())
}

/// Admitted funds of the chosen group, aligned and fitted.
struct Prepared {
    inputs: Inputs,
    model: Model,
    group: String,
    fits: Vec<(String, Result<RegressionResult, String>)>,
    boot: Vec<BootFund>,
}

fn prepare(input: &InputArgs, screen: &ScreenArgs, m: &ModelArgs) -> Result<Prepared, CliError> {
    let cfg = screen.config()?;
    let model = required(m.model, "model")?;
    let group = m.group.clone().unwrap_or_else(|| "all".to_string());
    let known: Vec<String> = cfg.size_cutoffs.iter().map(|c| size_label(*c)).collect();
    if group != "all" && !known.iter().any(|k| k.eq_ignore_ascii_case(&group)) {
        return Err(usage(anyhow!(
            "unknown group {group:?}; expected \"all\" or one of {}",
            known.join(", ")
        )));
    }
    let inputs = load_inputs(input)?;
    inputs.panel.supports(model).map_err(usage)?;

    let selected: Vec<FundSeries> = if m.no_screen.unwrap_or(false) {
        inputs
            .funds
            .iter()
            .filter(|f| {
                group == "all"
                    || crate::screen::assign_size_groups(f, &cfg)
                        .is_ok_and(|g| g.iter().any(|l| l.eq_ignore_ascii_case(&group)))
            })
            .cloned()
            .collect()
    } else {
        let outcomes = run_screen(&inputs.funds, &inputs.panel, &cfg);
        outcomes
            .iter()
            .zip(&inputs.funds)
            .filter(|(o, _)| group == "all" || o.in_group(&group))
            .filter_map(|(o, f)| o.admitted_series(f))
            .collect()
    };

    let samples = selected
        .iter()
        .map(|f| align(f, &inputs.panel, model))
        .collect::<Result<Vec<_>, _>>()
        .context("aligning funds to the factor panel")?;
    let results = batch_fit(&samples);
    let mut fits = Vec::with_capacity(samples.len());
    let mut boot = Vec::new();
    for (s, r) in samples.into_iter().zip(results) {
        match r {
            Ok(fit) => {
                fits.push((s.fund_id.clone(), Ok(fit.clone())));
                match BootFund::new(s, fit) {
                    Ok(b) => boot.push(b),
                    Err(e) => eprintln!("warning: {e}; fund left out of the simulation"),
                }
            }
            Err(e) => {
                eprintln!("warning: fund {}: {e}", s.fund_id);
                fits.push((s.fund_id, Err(e.to_string())));
            }
        }
    }
    Ok(Prepared {
        inputs,
        model,
        group,
        fits,
        boot,
    })
}

fn fit(input: InputArgs, screen: ScreenArgs, m: ModelArgs, out: OutArgs) -> Result<(), CliError> {
    let path = required(out.out.clone(), "out")?;
    let p = prepare(&input, &screen, &m)?;
    let names: Vec<&str> = std::iter::once("alpha")
        .chain(p.model.factors().iter().map(|f| f.column_name()))
        .collect();
    let mut w = csv::Writer::from_writer(create(&path)?);
    let io = |e: csv::Error| CliError::Runtime(anyhow!("writing {}: {e}", path.display()));
    let mut header = vec![
        "fund_id".to_string(),
        "status".into(),
        "n_obs".into(),
        "dof".into(),
        "sigma2".into(),
    ];
    header.extend(names.iter().map(|n| n.to_string()));
    header.extend(names.iter().map(|n| format!("se_{n}")));
    header.extend(names.iter().map(|n| format!("t_{n}")));
    w.write_record(&header).map_err(io)?;
    for (id, r) in &p.fits {
        let mut rec = vec![id.clone()];
        match r {
            Ok(f) => {
                rec.push(if f.degenerate {
                    "degenerate".into()
                } else {
                    "ok".into()
                });
                rec.extend([f.n_obs.to_string(), f.dof.to_string(), f.sigma2.to_string()]);
                rec.extend(f.coefficients().iter().map(|v| v.to_string()));
                rec.extend(f.se.iter().map(|v| v.to_string()));
                rec.extend(f.tstats.iter().map(|v| v.to_string()));
            }
            Err(e) => {
                rec.push(e.clone());
                rec.extend(std::iter::repeat_n(String::new(), header.len() - 2));
            }
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.into()))?;

    if let Some(summary_path) = out.summary {
        let ok: Vec<RegressionResult> = p
            .fits
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok().cloned())
            .collect();
        let summary =
            build_coefficient_summary(&ok, p.model, &p.group).context("coefficient summary")?;
        summary
            .write_csv(create(&summary_path)?)
            .context("writing summary")?;
        print!("{}", summary.render_table());
    }
    println!("fitted {} funds", p.fits.len());
    Ok(())
}

/// Provenance of a `simulate` output directory.
#[derive(Debug, Serialize, Deserialize)]
struct SimMeta {
    group: String,
    model: Model,
    period: String,
    seed: u64,
    n_sims: usize,
    min_resampled_obs: usize,
    fund_count: usize,
}

const SIM_META_FILE: &str = "sim_meta.json";

fn sim_config(model: Model, s: &SimArgs) -> Result<SimConfig, CliError> {
    let d = SimConfig::default();
    let cfg = SimConfig {
        n_sims: s.sims.unwrap_or(d.n_sims),
        base_seed: s.seed.unwrap_or(d.base_seed),
        min_resampled_obs: s.min_resampled_obs.unwrap_or(d.min_resampled_obs),
        model,
        pct_grid: DEFAULT_PCT_GRID.to_vec(),
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(usage(anyhow!("--threads must be at least 1"))),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Runtime(e.into()))?;
            Ok(pool.install(f))
        }
    }
}

/// Screens, fits and simulates; shared by `simulate` and `report`.
fn simulate_raw(
    input: &InputArgs,
    screen: &ScreenArgs,
    m: &ModelArgs,
    s: &SimArgs,
) -> Result<(Prepared, SimConfig, SimulationOutput), CliError> {
    let model = required(m.model, "model")?;
    let cfg = sim_config(model, s)?;
    let (p, out) = with_threads(s.threads, || -> Result<_, CliError> {
        let p = prepare(input, screen, m)?;
        let out = run_simulation(&p.boot, &p.inputs.panel, &cfg).context("bootstrap simulation")?;
        Ok((p, out))
    })??;
    if out.empty_runs > 0 {
        eprintln!(
            "warning: {} of {} runs had no usable funds",
            out.empty_runs, cfg.n_sims
        );
    }
    Ok((p, cfg, out))
}

fn simulate(
    input: InputArgs,
    screen: ScreenArgs,
    m: ModelArgs,
    s: SimArgs,
    dir: SimDirArgs,
) -> Result<(), CliError> {
    let out_dir = required(dir.out_dir, "out-dir")?;
    let (p, cfg, out) = simulate_raw(&input, &screen, &m, &s)?;
    write_simulation_artifacts(&out, &out_dir).context("writing simulation artifacts")?;
    let meta = SimMeta {
        group: p.group,
        model: p.model,
        period: p.inputs.period,
        seed: cfg.base_seed,
        n_sims: cfg.n_sims,
        min_resampled_obs: cfg.min_resampled_obs,
        fund_count: out.actual.fund_count(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Runtime(e.into()))?;
    fs::write(out_dir.join(SIM_META_FILE), json + "\n").context("writing sim_meta.json")?;
    println!(
        "{} runs over {} funds written to {}",
        cfg.n_sims,
        out.actual.fund_count(),
        out_dir.display()
    );
    Ok(())
}

fn report(
    input: InputArgs,
    screen: ScreenArgs,
    m: ModelArgs,
    s: SimArgs,
    dir: DirArgs,
) -> Result<(), CliError> {
    let out_dir = required(dir.out_dir.clone(), "out-dir")?;
    let mode = dir.pct_below_mode.unwrap_or_default();

    let (meta, out, summary) = match &dir.from_sim {
        Some(sim_dir) => {
            let text = fs::read_to_string(sim_dir.join(SIM_META_FILE)).map_err(|e| {
                usage(anyhow!(
                    "cannot read {}: {e}",
                    sim_dir.join(SIM_META_FILE).display()
                ))
            })?;
            let sm: SimMeta = serde_json::from_str(&text).context("parsing sim_meta.json")?;
            let out = read_simulation_artifacts(sim_dir).context("reading simulation artifacts")?;
            (sm, out, None)
        }
        None => {
            let (p, cfg, out) = simulate_raw(&input, &screen, &m, &s)?;
            let ok: Vec<RegressionResult> = p.boot.iter().map(|b| b.fit().clone()).collect();
            let summary = build_coefficient_summary(&ok, p.model, &p.group).ok();
            let sm = SimMeta {
                group: p.group,
                model: p.model,
                period: p.inputs.period,
                seed: cfg.base_seed,
                n_sims: cfg.n_sims,
                min_resampled_obs: cfg.min_resampled_obs,
                fund_count: out.actual.fund_count(),
            };
            (sm, out, summary)
        }
    };

    let labels = ReportLabels {
        group: meta.group.clone(),
        model: meta.model.to_string(),
        period: meta.period.clone(),
    };
    let table =
        build_percentile_report(&out, labels, mode).context("building percentile report")?;
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    table
        .write_csv(create(&out_dir.join("report.csv"))?)
        .context("writing report.csv")?;
    let sidecar = ReportMeta {
        group: meta.group,
        model: meta.model.to_string(),
        period: meta.period,
        fund_count: table.fund_count,
        seed: meta.seed,
        n_sims: meta.n_sims,
        min_resampled_obs: meta.min_resampled_obs,
        successful_runs: table.successful_runs,
        empty_runs: table.empty_runs,
        pct_below_mode: mode,
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| CliError::Runtime(e.into()))?;
    fs::write(out_dir.join("report.json"), json + "\n").context("writing report.json")?;
    let rendered = table.render_table();
    fs::write(out_dir.join("table.txt"), &rendered).context("writing table.txt")?;
    emit_cdf(&out.actual, &out.pooled_sim, &out_dir.join("cdf.csv")).context("writing cdf.csv")?;
    if let Some(summary) = summary {
        summary
            .write_csv(create(&out_dir.join("coefficients.csv"))?)
            .context("writing coefficients.csv")?;
        fs::write(out_dir.join("coefficients.txt"), summary.render_table())
            .context("writing coefficients.txt")?;
    }
    print!("{rendered}");
    Ok(())
}
