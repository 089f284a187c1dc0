//! Command-line front end. `main.rs` only forwards `argv` to [`dispatch`].
//!
//! Every failure ends with one JSON line on stderr,
//! `{"error":"<kind>","message":"..."}`, and a nonzero exit status.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dac::{EstimateReport, Estimator};
use crate::data::{SiteDataset, SiteId};
use crate::fedproto::{
    coordinator_run, parse_report_csv, render_table, run_directory, run_local, run_site, run_tcp, run_threaded,
    transport::{DirectoryCoordinator, DirectorySite, TcpCoordinator, TcpSite},
    Mode, ProtoError, SessionConfig, SessionOutcome,
};
use crate::outcome::BasisSpec;
use crate::simlab::{
    render_summary, verify_lossless, write_study_outputs, CellSpec, Scenario, SimError, StudyConfig, TruthCache,
    DEFAULT_LOSSLESS_TOLERANCE,
};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "FEDCMP_OUT";
pub const DEFAULT_OUT: &str = "fedcmp-out";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Protocol(#[from] ProtoError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Protocol(ProtoError::SessionAborted(_)) => "session-aborted",
            CliError::Protocol(_) => "protocol",
            CliError::Simulation(_) => "simulation",
            CliError::Verification(_) => "verification",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
            _ => 1,
        }
    }

    /// The machine-readable error line.
    pub fn json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "fedcmp", version, about = "Federated pairwise treatment comparisons from aggregated site data")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = DEFAULT_OUT)]
    pub out: PathBuf,
    /// More progress output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only errors on stderr and nothing but results on stdout.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a replication study and write metrics.csv and plots.
    Simulate(SimulateArgs),
    /// Run the two-round protocol on per-site CSV files and write report.csv.
    Estimate(EstimateArgs),
    /// Check distributed estimates against the pooled-data computation on random networks.
    VerifyLossless(VerifyArgs),
    /// Host the coordinator of a networked session.
    Coordinate(CoordinateArgs),
    /// Run one site of a networked session.
    ServeSite(ServeSiteArgs),
    /// Render a report.csv as a table, CSV or JSON.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenarios to run (i, ii, iii, iv).
    #[arg(long, value_delimiter = ',')]
    pub scenario: Vec<Scenario>,
    /// Total sample sizes.
    #[arg(long = "n", value_delimiter = ',')]
    pub n_total: Vec<usize>,
    /// Replicates per scenario and sample size [default: 200].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Base seed; replicate r uses seed + r [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo draws for the true values.
    #[arg(long)]
    pub truth_draws: Option<u64>,
    /// Score only the 4-vs-1 contrast over all sites instead of every cell.
    #[arg(long)]
    pub headline_only: bool,
    /// Compare every replicate with the pooled-data reference.
    #[arg(long)]
    pub verify_lossless: bool,
    /// Truth cache directory [default: <out>/truth-cache].
    #[arg(long)]
    pub truth_cache: Option<PathBuf>,
    /// Recompute true values instead of reading or writing the cache.
    #[arg(long, conflicts_with = "truth_cache")]
    pub no_truth_cache: bool,
    /// Skip bias.svg and coverage.svg.
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LocalTransport {
    /// Single thread; messages still pass through the encoder.
    Memory,
    /// One thread per site over in-process channels.
    Threads,
    /// One thread per site exchanging files under <out>/exchange.
    Directory,
    /// One thread per site over loopback TCP.
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CliMode {
    Nonparametric,
    BiasReduced,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Nonparametric => Mode::DacNonparametric,
            CliMode::BiasReduced => Mode::DacBr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CliBasis {
    Linear,
    Spline,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Network config JSON (session settings and site files).
    #[arg(long, conflicts_with_all = ["sites", "session", "mode", "basis"])]
    pub config: Option<PathBuf>,
    /// Site CSV files in site order (header `y,x1,...,xp`).
    pub sites: Vec<PathBuf>,
    /// Session id [default: fedcmp].
    #[arg(long)]
    pub session: Option<String>,
    /// Estimator family [default: nonparametric].
    #[arg(long, value_enum)]
    pub mode: Option<CliMode>,
    /// Outcome-model basis [default: linear].
    #[arg(long, value_enum)]
    pub basis: Option<CliBasis>,
    #[arg(long, value_enum, default_value = "memory")]
    pub transport: LocalTransport,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_LOSSLESS_TOLERANCE)]
    pub tolerance: f64,
    /// Also write lossless-summary.json to the output directory.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NetTransport {
    Tcp,
    Directory,
}

#[derive(Debug, Args)]
pub struct CoordinateArgs {
    /// Network config JSON shared by the coordinator and every site.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "tcp")]
    pub transport: NetTransport,
    /// TCP listen address.
    #[arg(long, default_value = DEFAULT_LISTEN)]
    pub listen: String,
    /// Shared exchange directory [default: <out>/exchange].
    #[arg(long)]
    pub exchange: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeSiteArgs {
    /// Network config JSON shared by the coordinator and every site.
    #[arg(long)]
    pub config: PathBuf,
    /// One-based site label.
    #[arg(long)]
    pub site: usize,
    /// Site CSV [default: the config's entry for this site].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tcp")]
    pub transport: NetTransport,
    /// Coordinator address.
    #[arg(long, default_value = DEFAULT_LISTEN)]
    pub connect: String,
    /// Shared exchange directory [default: <out>/exchange].
    #[arg(long)]
    pub exchange: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.csv [default: <out>/report.csv].
    pub path: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
    /// Keep only these methods (DAC, DOR, DCW).
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<Estimator>,
}

/// Session settings plus the site files, in site order. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_session")]
    pub session: String,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_basis")]
    pub basis: BasisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_columns: Option<Vec<usize>>,
    #[serde(default = "default_timeout")]
    pub round_timeout_secs: f64,
    pub sites: Vec<PathBuf>,
}

fn default_session() -> String {
    "fedcmp".into()
}
fn default_mode() -> Mode {
    Mode::DacNonparametric
}
fn default_basis() -> BasisSpec {
    BasisSpec::Linear
}
fn default_timeout() -> f64 {
    60.0
}

impl NetworkConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg: NetworkConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.sites {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn session_config(&self) -> Result<SessionConfig, CliError> {
        let cfg = SessionConfig {
            session: self.session.clone(),
            sites: self.sites.len(),
            mode: self.mode,
            basis: self.basis.clone(),
            calibration_columns: self.calibration_columns.clone(),
            round_timeout_secs: self.round_timeout_secs,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a site file with header `y,x1,...,xp`.
pub fn read_site_csv(path: &Path) -> Result<SiteDataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| io_err(path, e))?.iter().map(str::to_string).collect();
    let expected: Vec<String> = std::iter::once("y".to_string()).chain((1..header.len()).map(|j| format!("x{j}"))).collect();
    if header.len() < 2 || header != expected {
        return Err(CliError::Config(format!(
            "{}: header must be y,x1,...,xp (got {})",
            path.display(),
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let vals: Vec<f64> = rec
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    CliError::Config(format!("{}: row {}, column {}: bad value {v:?}", path.display(), i + 1, header[j]))
                })
            })
            .collect::<Result<_, _>>()?;
        rows.push((vals[0], vals[1..].to_vec()));
    }
    SiteDataset::from_rows(&rows).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn read_sites(paths: &[PathBuf]) -> Result<Vec<SiteDataset>, CliError> {
    let sites: Vec<SiteDataset> = paths.iter().map(|p| read_site_csv(p)).collect::<Result<_, _>>()?;
    if let Some(first) = sites.first() {
        if let Some((s, d)) = sites.iter().enumerate().find(|(_, d)| d.covariate_count() != first.covariate_count()) {
            return Err(CliError::Config(format!(
                "{} has {} covariates but {} has {}",
                paths[s].display(),
                d.covariate_count(),
                paths[0].display(),
                first.covariate_count()
            )));
        }
    }
    Ok(sites)
}

/// Fewer replicates still run, with a warning.
const MIN_ADVISED_REPS: usize = 50;

struct Ui {
    verbose: u8,
    quiet: bool,
}

impl Ui {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 && !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let err = CliError::Usage(e.kind().to_string());
            eprintln!("{}", err.json_line());
            return err.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.json_line());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ui = Ui { verbose: cli.verbose, quiet: cli.quiet };
    let out = cli.out;
    match cli.command {
        Command::Simulate(a) => simulate(a, &out, &ui),
        Command::Estimate(a) => estimate(a, &out, &ui),
        Command::VerifyLossless(a) => verify(a, &out, &ui),
        Command::Coordinate(a) => coordinate(a, &out, &ui),
        Command::ServeSite(a) => serve_site(a, &out, &ui),
        Command::Report(a) => report(a, &out),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn simulate(a: SimulateArgs, out: &Path, ui: &Ui) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str::<StudyConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None if a.scenario.is_empty() => {
            return Err(CliError::Usage("simulate needs --config or at least one --scenario".into()));
        }
        None => StudyConfig::new(Vec::new(), 2400, 200, DEFAULT_SEED),
    };
    if !a.scenario.is_empty() {
        cfg.scenarios = a.scenario;
    }
    if !a.n_total.is_empty() {
        cfg.n_total = a.n_total;
    }
    cfg.reps = a.reps.unwrap_or(cfg.reps);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.truth_draws = a.truth_draws.unwrap_or(cfg.truth_draws);
    if a.headline_only {
        cfg.cells = Some(vec![CellSpec::headline()]);
    }
    cfg.verify_lossless |= a.verify_lossless;
    if cfg.scenarios.is_empty() || cfg.n_total.is_empty() {
        return Err(CliError::Config("study needs at least one scenario and one sample size".into()));
    }

    if cfg.reps < MIN_ADVISED_REPS {
        ui.info(format!("warning: {} replicates; bias, SD and coverage are noisy below {MIN_ADVISED_REPS}", cfg.reps));
    }

    let cache = if a.no_truth_cache {
        TruthCache::in_memory()
    } else {
        TruthCache::on_disk(a.truth_cache.unwrap_or_else(|| out.join("truth-cache")))
    };
    ui.info(format!(
        "simulating scenario(s) {} with N = {:?}, {} replicates, seed {}",
        cfg.scenarios.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        cfg.n_total,
        cfg.reps,
        cfg.seed
    ));
    let started = std::time::Instant::now();
    let rows = cfg.run(cache)?;
    ui.debug(format!("study finished in {:.1} s", started.elapsed().as_secs_f64()));
    let written = write_study_outputs(out, &cfg, &rows, !a.no_plots)?;
    print!("{}", render_summary(&rows));
    for p in written {
        ui.info(format!("wrote {}", p.display()));
    }
    Ok(())
}

fn estimate(a: EstimateArgs, out: &Path, ui: &Ui) -> Result<(), CliError> {
    let net = match &a.config {
        Some(p) => NetworkConfig::load(p)?,
        None => {
            if a.sites.len() < 2 {
                return Err(CliError::Usage("estimate needs --config or at least two site files".into()));
            }
            NetworkConfig {
                session: a.session.unwrap_or_else(default_session),
                mode: a.mode.map_or(Mode::DacNonparametric, Mode::from),
                basis: BasisSpec::Linear,
                calibration_columns: None,
                round_timeout_secs: default_timeout(),
                sites: a.sites.clone(),
            }
        }
    };
    let data = read_sites(&net.sites)?;
    let mut net = net;
    if a.basis == Some(CliBasis::Spline) {
        net.basis = BasisSpec::cubic_spline(data[0].covariate_count());
    }
    let cfg = net.session_config()?;
    ui.debug(format!("session {} with {} sites over {:?} transport", cfg.session, cfg.sites, a.transport));
    create_dir(out)?;
    let outcome = match a.transport {
        LocalTransport::Memory => run_local(&cfg, &data)?,
        LocalTransport::Threads => run_threaded(&cfg, &data)?,
        LocalTransport::Directory => run_directory(&cfg, &data, &out.join("exchange"))?,
        LocalTransport::Tcp => run_tcp(&cfg, &data)?,
    };
    finish_session(&outcome, out, ui)
}

fn finish_session(outcome: &SessionOutcome, out: &Path, ui: &Ui) -> Result<(), CliError> {
    create_dir(out)?;
    let path = out.join("report.csv");
    write_file(&path, &outcome.report_csv()?)?;
    print!("{}", render_table(&outcome.reports));
    ui.debug(format!("{} message(s), {} bytes on the wire", outcome.log.entries.len(), outcome.log.total_bytes()));
    ui.info(format!("wrote {}", path.display()));
    Ok(())
}

fn verify(a: VerifyArgs, out: &Path, ui: &Ui) -> Result<(), CliError> {
    if a.instances == 0 {
        return Err(CliError::Usage("--instances must be positive".into()));
    }
    let started = std::time::Instant::now();
    let summary = verify_lossless(a.instances, a.seed, a.tolerance)?;
    ui.debug(format!(
        "{} comparisons, {} calibration solves, max relative differences {:e} (estimate) / {:e} (variance), \
         max balance residual {:e}, min weight {:e}, {:.1} s",
        summary.comparisons,
        summary.calibration_solves,
        summary.max_tau_rel_diff,
        summary.max_var_rel_diff,
        summary.max_balance_residual,
        summary.min_weight,
        started.elapsed().as_secs_f64()
    ));
    if a.json {
        create_dir(out)?;
        let path = out.join("lossless-summary.json");
        let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
        write_file(&path, &(text + "\n"))?;
        ui.info(format!("wrote {}", path.display()));
    }
    println!("{}", summary.headline());
    if summary.all_passed() {
        Ok(())
    } else {
        for f in &summary.failures {
            ui.info(f);
        }
        Err(CliError::Verification(format!("{} of {} instances failed", a.instances - summary.passed, a.instances)))
    }
}

fn coordinate(a: CoordinateArgs, out: &Path, ui: &Ui) -> Result<(), CliError> {
    let cfg = NetworkConfig::load(&a.config)?.session_config()?;
    let outcome = match a.transport {
        NetTransport::Tcp => {
            let mut link = TcpCoordinator::bind(a.listen.as_str())?;
            ui.info(format!("coordinator for session {} listening on {}", cfg.session, link.local_addr()));
            coordinator_run(&cfg, &mut link)?
        }
        NetTransport::Directory => {
            let base = a.exchange.unwrap_or_else(|| out.join("exchange"));
            let mut link = DirectoryCoordinator::new(&base, &cfg.session, cfg.sites)?;
            ui.info(format!("coordinator for session {} watching {}", cfg.session, link.root().display()));
            coordinator_run(&cfg, &mut link)?
        }
    };
    finish_session(&outcome, out, ui)
}

fn serve_site(a: ServeSiteArgs, out: &Path, ui: &Ui) -> Result<(), CliError> {
    let net = NetworkConfig::load(&a.config)?;
    let cfg = net.session_config()?;
    if !(1..=cfg.sites).contains(&a.site) {
        return Err(CliError::Config(format!("site label {} outside 1..={}", a.site, cfg.sites)));
    }
    let site = SiteId(a.site - 1);
    let path = a.data.unwrap_or_else(|| net.sites[site.index()].clone());
    let data = read_site_csv(&path)?;
    ui.debug(format!("site {site}: {} records from {}", data.n(), path.display()));
    match a.transport {
        NetTransport::Tcp => {
            let mut link = TcpSite::connect(a.connect.as_str(), cfg.round_timeout().max(Duration::from_secs(1)))?;
            run_site(&data, site, &cfg, &mut link)?;
        }
        NetTransport::Directory => {
            let base = a.exchange.unwrap_or_else(|| out.join("exchange"));
            run_site(&data, site, &cfg, &mut DirectorySite::new(&base, &cfg.session, site))?;
        }
    }
    ui.info(format!("site {site}: both rounds delivered"));
    Ok(())
}

fn report(a: ReportArgs, out: &Path) -> Result<(), CliError> {
    let path = a.path.unwrap_or_else(|| out.join("report.csv"));
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut reports = parse_report_csv(&text)?;
    if !a.method.is_empty() {
        reports.retain(|r| a.method.contains(&r.method));
    }
    match a.format {
        ReportFormat::Table => print!("{}", render_table(&reports)),
        ReportFormat::Csv => print!("{}", crate::fedproto::write_report_csv(&reports)?),
        ReportFormat::Json => {
            for r in &reports {
                println!("{}", report_json(r));
            }
        }
    }
    Ok(())
}

fn report_json(r: &EstimateReport) -> serde_json::Value {
    let inf = r.inference.as_ref();
    serde_json::json!({
        "method": r.method.to_string(),
        "k": r.k.label(),
        "k_prime": r.k_prime.label(),
        "subset": r.subset.iter().map(SiteId::label).collect::<Vec<_>>(),
        "tau_hat": r.tau_hat,
        "mu_k": r.mu_k,
        "mu_k_prime": r.mu_k_prime,
        "variance": inf.map(|i| i.variance),
        "std_error": inf.map(|i| i.std_error),
        "ci_low": inf.map(|i| i.ci_low),
        "ci_high": inf.map(|i| i.ci_high),
        "p_value": inf.map(|i| i.p_value),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn site_csv_header_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write(dir.path(), "a.csv", "y,x1,x2\n1,2,3\n4, 5 ,6\n");
        let d = read_site_csv(&ok).unwrap();
        assert_eq!((d.n(), d.covariate_count()), (2, 2));
        assert_eq!(d.y(), &[1.0, 4.0]);
        let bad = write(dir.path(), "b.csv", "y,x2\n1,2\n");
        assert!(matches!(read_site_csv(&bad), Err(CliError::Config(_))));
        let nan = write(dir.path(), "c.csv", "y,x1\n1,NaN\n");
        assert!(matches!(read_site_csv(&nan), Err(CliError::Config(m)) if m.contains("row 1, column x1")));
    }

    #[test]
    fn network_config_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "net.json", r#"{"session":"s","sites":["a.csv","b.csv"]}"#);
        let net = NetworkConfig::load(&p).unwrap();
        assert_eq!(net.sites[0], dir.path().join("a.csv"));
        let cfg = net.session_config().unwrap();
        assert_eq!((cfg.sites, cfg.mode, cfg.round_timeout_secs), (2, Mode::DacNonparametric, 60.0));
        let bad = write(dir.path(), "bad.json", r#"{"sites":["a.csv"],"colour":1}"#);
        assert!(matches!(NetworkConfig::load(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn error_lines_are_json() {
        let e = CliError::Protocol(ProtoError::SessionAborted("site 2 disconnected".into()));
        let v: serde_json::Value = serde_json::from_str(&e.json_line()).unwrap();
        assert_eq!(v["error"], "session-aborted");
        assert_eq!(e.exit_code(), 1);
        assert_eq!(dispatch(["fedcmp", "no-such-command"]), 2);
    }
}
