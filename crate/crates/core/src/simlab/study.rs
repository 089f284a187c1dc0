//! Replication harness: simulate, run the protocol, score against the truth.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plot::{bar_chart_svg, Series};
use super::scenario::{gen_scenario, Scenario, ScenarioSpec, SITES};
use super::truth::{TruthCache, DEFAULT_TRUTH_DRAWS};
use super::SimError;
use crate::brdac::{br_fit_site, BRNuisanceFit, BRSiteInput};
use crate::calib::CalibrationResult;
use crate::dac::{pooled_eif_variance, pooled_oracle, EstimateReport, Estimator, PooledInputs};
use crate::data::{SiteDataset, SiteId, SiteSet};
use crate::fedproto::{format_significant, run_local, Mode, SessionConfig};
use crate::numlin::NewtonConfig;
use crate::outcome::{expand_basis, BasisSpec, FittedOutcomeModel};

/// Relative tolerance for the in-replicate lossless check.
pub const LOSSLESS_TOLERANCE: f64 = 1e-10;

/// One estimand, with one-based site labels as written in configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub k: usize,
    pub k_prime: usize,
    pub subset: Vec<usize>,
}

impl CellSpec {
    pub fn headline() -> Self {
        CellSpec { k: 1, k_prime: 4, subset: vec![1, 2, 3, 4] }
    }

    fn resolve(&self) -> Result<Cell, SimError> {
        let site = |l: usize| {
            if (1..=SITES).contains(&l) {
                Ok(SiteId(l - 1))
            } else {
                Err(SimError::Config(format!("site label {l} outside 1..={SITES}")))
            }
        };
        if self.subset.is_empty() || self.subset.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::Config("cell subsets must be nonempty and strictly ascending".into()));
        }
        let members: Vec<SiteId> = self.subset.iter().map(|&l| site(l)).collect::<Result<_, _>>()?;
        Ok(Cell { subset: SiteSet::from_sites(members.iter().map(|s| s.index())), k: site(self.k)?, k_prime: site(self.k_prime)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub subset: SiteSet,
    pub k: SiteId,
    pub k_prime: SiteId,
}

fn all_cells() -> Vec<Cell> {
    SiteSet::nonempty_subsets(SITES)
        .flat_map(|subset| {
            (0..SITES).flat_map(move |a| {
                (0..SITES).filter(move |&b| b != a).map(move |b| Cell { subset, k: SiteId(a), k_prime: SiteId(b) })
            })
        })
        .collect()
}

fn default_sizes() -> Vec<usize> {
    vec![2400]
}
fn default_reps() -> usize {
    200
}
fn default_seed() -> u64 {
    1
}
fn default_methods() -> Vec<Estimator> {
    vec![Estimator::Dor, Estimator::Dac]
}
fn default_draws() -> u64 {
    DEFAULT_TRUTH_DRAWS
}

/// Study description as read from JSON. Every field but `scenarios` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_sizes")]
    pub n_total: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Estimator>,
    #[serde(default = "default_draws")]
    pub truth_draws: u64,
    /// Estimands to score; every ordered pair and subset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<CellSpec>>,
    /// Compare every distributed estimate with the pooled-data reference.
    #[serde(default)]
    pub verify_lossless: bool,
}

impl StudyConfig {
    pub fn new(scenarios: Vec<Scenario>, n_total: usize, reps: usize, seed: u64) -> Self {
        StudyConfig {
            scenarios,
            n_total: vec![n_total],
            reps,
            seed,
            methods: default_methods(),
            truth_draws: default_draws(),
            cells: None,
            verify_lossless: false,
        }
    }

    pub fn specs(&self) -> Vec<ScenarioSpec> {
        self.scenarios.iter().flat_map(|&s| self.n_total.iter().map(move |&n| ScenarioSpec::new(s, n))).collect()
    }

    pub fn options(&self, truth_cache: TruthCache) -> Result<StudyOptions, SimError> {
        let cells = match &self.cells {
            None => None,
            Some(c) => Some(c.iter().map(CellSpec::resolve).collect::<Result<Vec<_>, _>>()?),
        };
        Ok(StudyOptions { cells, truth_draws: self.truth_draws, truth_cache, verify_lossless: self.verify_lossless })
    }

    pub fn run(&self, truth_cache: TruthCache) -> Result<Vec<MetricsRow>, SimError> {
        run_study(&self.specs(), self.reps, &self.methods, self.seed, &self.options(truth_cache)?)
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub cells: Option<Vec<Cell>>,
    pub truth_draws: u64,
    pub truth_cache: TruthCache,
    pub verify_lossless: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions { cells: None, truth_draws: DEFAULT_TRUTH_DRAWS, truth_cache: TruthCache::in_memory(), verify_lossless: false }
    }
}

/// Monte Carlo summary for one (scenario, N, method, cell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: Scenario,
    pub n_total: usize,
    pub method: Estimator,
    pub k: SiteId,
    pub k_prime: SiteId,
    pub subset: SiteSet,
    pub truth: f64,
    /// Monte Carlo standard error of `truth`.
    pub truth_se: f64,
    /// Mean estimate minus truth.
    pub bias: f64,
    /// Standard deviation of the estimates across replicates.
    pub sd: f64,
    /// Mean estimated standard error.
    pub ese: f64,
    /// Percentage of 95% intervals covering the truth.
    pub cp: f64,
    pub reps: usize,
}

/// Point estimate and standard error for every scored (method, cell).
type Draw = Vec<(f64, f64)>;

fn replicate(
    spec: &ScenarioSpec,
    seed: u64,
    keys: &[(Estimator, Cell)],
    verify_lossless: bool,
) -> Result<Draw, String> {
    let data = gen_scenario(spec, seed).map_err(|e| e.to_string())?;
    let cfg = SessionConfig::new(format!("sim-{seed}"), SITES, Mode::DacBr, BasisSpec::Linear);
    let reports = run_local(&cfg, &data).map_err(|e| e.to_string())?.reports;
    let index: HashMap<(Estimator, Cell), &EstimateReport> = reports
        .iter()
        .map(|r| ((r.method, Cell { subset: r.subset, k: r.k, k_prime: r.k_prime }), r))
        .collect();
    if verify_lossless {
        check_lossless(&data, &index)?;
    }
    keys.iter()
        .map(|key| {
            let r = index.get(key).ok_or_else(|| format!("protocol produced no {} estimate for {:?}", key.0, key.1))?;
            let se = r.inference.map(|i| i.std_error).ok_or_else(|| format!("{} carries no standard error", key.0))?;
            Ok((r.tau_hat, se))
        })
        .collect()
}

/// Recomputes the bias-reduced nuisances from the raw rows and compares every
/// DAC report with the pooled-data influence-function formulas.
fn check_lossless(data: &[SiteDataset], index: &HashMap<(Estimator, Cell), &EstimateReport>) -> Result<(), String> {
    let canon: Vec<SiteDataset> = data.iter().map(SiteDataset::canonical).collect();
    let sizes: Vec<usize> = canon.iter().map(SiteDataset::n).collect();
    let designs = canon.iter().map(|d| expand_basis(d.x(), &BasisSpec::Linear)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let columns: Vec<usize> = (0..super::scenario::COVARIATES).collect();
    let targets: Vec<Vec<f64>> =
        canon.iter().map(|d| std::iter::once(1.0).chain(d.covariate_means(&columns)).collect()).collect();
    let fits: Vec<BRNuisanceFit> = (0..SITES)
        .map(|s| {
            let input = BRSiteInput { site: SiteId(s), design: &designs[s], y: canon[s].y(), targets: &targets, sizes: &sizes };
            br_fit_site(&input, &NewtonConfig::default())
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let weights: Vec<Vec<CalibrationResult>> = fits.iter().map(BRNuisanceFit::calibration_weights).collect();
    for subset in SiteSet::nonempty_subsets(SITES) {
        let models: Vec<FittedOutcomeModel> =
            fits.iter().map(|f| f.outcome_model(subset).ok_or("missing subset fit")).collect::<Result<_, _>>()?;
        let pooled = PooledInputs { sites: &canon, models: &models, weights: &weights };
        for (&(method, cell), r) in index.iter().filter(|((m, c), _)| *m == Estimator::Dac && c.subset == subset) {
            debug_assert_eq!(method, Estimator::Dac);
            let tau = pooled_oracle(&pooled, subset, cell.k, cell.k_prime).map_err(|e| e.to_string())?;
            let var = pooled_eif_variance(&pooled, subset, cell.k, cell.k_prime, tau).map_err(|e| e.to_string())?;
            let got_var = r.inference.map(|i| i.variance).unwrap_or(f64::NAN);
            for (what, a, b) in [("estimate", r.tau_hat, tau), ("variance", got_var, var)] {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                if !(rel <= LOSSLESS_TOLERANCE) {
                    return Err(format!(
                        "{what} for ({}, {}) on {subset} differs from the pooled reference: {a} vs {b}",
                        cell.k, cell.k_prime
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Runs `reps` replicates of every spec. Replicate `r` uses seed `seed + r`,
/// so results do not depend on scheduling. Any failed replicate aborts the study.
pub fn run_study(
    specs: &[ScenarioSpec],
    reps: usize,
    methods: &[Estimator],
    seed: u64,
    options: &StudyOptions,
) -> Result<Vec<MetricsRow>, SimError> {
    if reps < 2 {
        return Err(SimError::Config("at least two replicates are required".into()));
    }
    if methods.is_empty() || methods.contains(&Estimator::Dcw) {
        return Err(SimError::Config("methods must be a nonempty selection of DOR and DAC".into()));
    }
    let cells = options.cells.clone().unwrap_or_else(all_cells);
    let keys: Vec<(Estimator, Cell)> = cells.iter().flat_map(|&c| methods.iter().map(move |&m| (m, c))).collect();
    let mut rows = Vec::new();
    for spec in specs {
        spec.validate()?;
        let truth = options.truth_cache.get(spec, options.truth_draws)?;
        let draws: Vec<Result<Draw, String>> = (0..reps)
            .into_par_iter()
            .map(|r| replicate(spec, seed.wrapping_add(r as u64), &keys, options.verify_lossless))
            .collect();
        let mut ok = Vec::with_capacity(reps);
        for (r, d) in draws.into_iter().enumerate() {
            ok.push(d.map_err(|reason| SimError::Replicate { scenario: spec.scenario, replicate: r, reason })?);
        }
        for (j, &(method, cell)) in keys.iter().enumerate() {
            let t = truth.tau(cell.subset, cell.k, cell.k_prime)?;
            let est: Vec<f64> = ok.iter().map(|d| d[j].0).collect();
            let se: Vec<f64> = ok.iter().map(|d| d[j].1).collect();
            let n = reps as f64;
            let mean = est.iter().sum::<f64>() / n;
            let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let covered = est
                .iter()
                .zip(&se)
                .filter(|(e, s)| (*e - t.value).abs() <= crate::dac::NORMAL_QUANTILE_975 * **s)
                .count();
            rows.push(MetricsRow {
                scenario: spec.scenario,
                n_total: spec.n_total,
                method,
                k: cell.k,
                k_prime: cell.k_prime,
                subset: cell.subset,
                truth: t.value,
                truth_se: t.std_error,
                bias: mean - t.value,
                sd,
                ese: se.iter().sum::<f64>() / n,
                cp: 100.0 * covered as f64 / n,
                reps,
            });
        }
    }
    Ok(rows)
}

const METRICS_HEADER: [&str; 14] =
    ["scenario", "N", "method", "k", "k_prime", "subset", "truth", "truth_se", "bias", "bias_x1000", "sd", "ese", "cp", "reps"];

pub fn write_metrics_csv(rows: &[MetricsRow]) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| SimError::Io(e.to_string());
    w.write_record(METRICS_HEADER).map_err(err)?;
    let real = |x: f64| format!("{x:.16e}");
    for r in rows {
        w.write_record([
            r.scenario.name().to_string(),
            r.n_total.to_string(),
            r.method.to_string(),
            r.k.label().to_string(),
            r.k_prime.label().to_string(),
            r.subset.to_string(),
            real(r.truth),
            real(r.truth_se),
            real(r.bias),
            real(1000.0 * r.bias),
            real(r.sd),
            real(r.ese),
            real(r.cp),
            r.reps.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn is_headline(r: &MetricsRow) -> bool {
    r.k == SiteId(0) && r.k_prime == SiteId(3) && r.subset == SiteSet::all(SITES)
}

/// Headline rows (treatment 4 vs 1, all four populations) in the familiar layout.
pub fn render_summary(rows: &[MetricsRow]) -> String {
    let g = |x: f64| format_significant(x, 4);
    let mut out = format!("{:<9}{:>6}  {:<7}{:>8}{:>12}{:>9}{:>9}{:>8}\n", "scenario", "N", "method", "truth", "bias×1e3", "SD", "ESE", "CP");
    for r in rows.iter().filter(|r| is_headline(r)) {
        out += &format!(
            "{:<9}{:>6}  {:<7}{:>8}{:>12}{:>9}{:>9}{:>8}\n",
            r.scenario.name(),
            r.n_total,
            r.method.to_string(),
            g(r.truth),
            g(1000.0 * r.bias),
            g(r.sd),
            g(r.ese),
            g(r.cp)
        );
    }
    out
}

/// Writes `metrics.csv`, `study-config.json` and, when headline rows exist,
/// `bias.svg` and `coverage.svg`. Returns the written paths.
pub fn write_study_outputs(dir: &Path, config: &StudyConfig, rows: &[MetricsRow], plots: bool) -> Result<Vec<PathBuf>, SimError> {
    let io = |p: &Path, e: std::io::Error| SimError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<(), SimError> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| io(&p, e))?;
        written.push(p);
        Ok(())
    };
    put("metrics.csv", write_metrics_csv(rows)?)?;
    put("study-config.json", serde_json::to_string_pretty(config).map_err(|e| SimError::Io(e.to_string()))? + "\n")?;
    let headline: Vec<&MetricsRow> = rows.iter().filter(|r| is_headline(r)).collect();
    if plots && !headline.is_empty() {
        let mut groups: Vec<(Scenario, usize)> = headline.iter().map(|r| (r.scenario, r.n_total)).collect();
        groups.dedup();
        let categories: Vec<String> = groups.iter().map(|(s, n)| format!("({s}) N={n}")).collect();
        let names: Vec<String> = config.methods.iter().map(ToString::to_string).collect();
        let series = |f: fn(&MetricsRow) -> f64| -> Vec<Series<'_>> {
            config
                .methods
                .iter()
                .zip(&names)
                .map(|(m, name)| Series {
                    name,
                    values: groups
                        .iter()
                        .map(|g| {
                            headline.iter().find(|r| (r.scenario, r.n_total) == *g && r.method == *m).map_or(f64::NAN, |r| f(r))
                        })
                        .collect(),
                })
                .collect()
        };
        let bias = bar_chart_svg("Bias, treatment 4 vs 1, all populations", "bias", &categories, &series(|r| r.bias), None);
        let cp = bar_chart_svg("Coverage of 95% intervals", "CP (%)", &categories, &series(|r| r.cp), Some(95.0));
        put("bias.svg", bias)?;
        put("coverage.svg", cp)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(verify: bool) -> (StudyConfig, Vec<MetricsRow>) {
        let mut cfg = StudyConfig::new(vec![Scenario::I], 400, 6, 3);
        cfg.truth_draws = 1_000_000;
        cfg.cells = Some(vec![CellSpec::headline(), CellSpec { k: 2, k_prime: 3, subset: vec![1, 3] }]);
        cfg.verify_lossless = verify;
        let rows = cfg.run(TruthCache::in_memory()).unwrap();
        (cfg, rows)
    }

    #[test]
    fn small_study_shapes_and_determinism() {
        let (_, a) = quick(true);
        assert_eq!(a.len(), 2 * 2);
        for r in &a {
            assert!((0.0..=100.0).contains(&r.cp) && r.sd >= 0.0 && r.ese >= 0.0);
            assert_eq!(r.reps, 6);
        }
        let (_, b) = quick(false);
        assert_eq!(a, b);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: StudyConfig = serde_json::from_str(r#"{"scenarios":["ii"]}"#).unwrap();
        assert_eq!((cfg.n_total.clone(), cfg.reps, cfg.seed), (vec![2400], 200, 1));
        assert_eq!(cfg.methods, vec![Estimator::Dor, Estimator::Dac]);
        let bad = CellSpec { k: 0, k_prime: 4, subset: vec![1] };
        assert!(bad.resolve().is_err());
        let mut c = StudyConfig::new(vec![Scenario::I], 400, 3, 1);
        c.methods = vec![Estimator::Dcw];
        assert!(c.run(TruthCache::in_memory()).is_err());
    }

    #[test]
    fn outputs_written() {
        let (cfg, rows) = quick(false);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_study_outputs(dir.path(), &cfg, &rows, true).unwrap();
        assert_eq!(paths.len(), 4);
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with("scenario,N,method,k,k_prime,subset,truth"));
        assert_eq!(csv.lines().count(), 1 + rows.len());
        assert!(render_summary(&rows).lines().count() == 3);
    }
}
