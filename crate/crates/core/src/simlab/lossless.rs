//! Randomized check that the distributed estimates reproduce the pooled
//! individual-level computation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::SimError;
use crate::calib::{balance_residual, calibrate_to_targets, CalibrationResult};
use crate::dac::{pooled_eif_variance, pooled_oracle, Estimator, PooledInputs};
use crate::data::{SiteDataset, SiteId};
use crate::fedproto::{run_local, Mode, SessionConfig};
use crate::numlin::{inf_norm, NewtonConfig};
use crate::outcome::{BasisSpec, FittedOutcomeModel};

pub const DEFAULT_LOSSLESS_TOLERANCE: f64 = 1e-10;

/// A random network: 2–4 sites, 40–200 subjects each, 1–3 covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct LosslessInstance {
    pub sites: Vec<SiteDataset>,
    pub basis: BasisSpec,
}

pub fn random_lossless_instance(seed: u64) -> LosslessInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=4usize);
    let p = rng.random_range(1..=3usize);
    let spline = rng.random_bool(0.5);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let sites = (0..k)
        .map(|s| {
            let n = rng.random_range(40..=200usize);
            let rows: Vec<(f64, Vec<f64>)> = (0..n)
                .map(|_| {
                    let x: Vec<f64> = (0..p).map(|j| 0.25 * s as f64 * if j % 2 == 0 { 1.0 } else { -1.0 } + noise.sample(&mut rng) * 2.0).collect();
                    let x2 = x.get(1).copied().unwrap_or(0.0);
                    let y = s as f64 + x[0] - 0.5 * x2 * x2 + (x[0] * x2).sin() + noise.sample(&mut rng);
                    (y, x)
                })
                .collect();
            SiteDataset::from_rows(&rows).expect("finite rows")
        })
        .collect();
    let basis = if spline { BasisSpec::cubic_spline(p) } else { BasisSpec::Linear };
    LosslessInstance { sites, basis }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LosslessSummary {
    pub instances: usize,
    pub passed: usize,
    pub tolerance: f64,
    /// Estimates compared (every subset and ordered pair of every instance).
    pub comparisons: usize,
    pub max_tau_rel_diff: f64,
    pub max_var_rel_diff: f64,
    /// Cross-site calibration solves performed.
    pub calibration_solves: usize,
    /// Largest balance-residual ∞-norm, recomputed from the returned weights.
    pub max_balance_residual: f64,
    pub min_weight: f64,
    pub failures: Vec<String>,
}

impl LosslessSummary {
    pub fn all_passed(&self) -> bool {
        self.passed == self.instances
    }

    pub fn headline(&self) -> String {
        format!("{}/{} within {:e}", self.passed, self.instances, self.tolerance)
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

struct InstanceCheck {
    tau: f64,
    var: f64,
    comparisons: usize,
    solves: usize,
    balance: f64,
    min_weight: f64,
}

fn check_instance(inst: &LosslessInstance, tag: &str) -> Result<InstanceCheck, SimError> {
    let k = inst.sites.len();
    let cfg = SessionConfig::new(tag, k, Mode::DacNonparametric, inst.basis.clone());
    let proto = |e: crate::fedproto::ProtoError| SimError::Data(format!("{tag}: {e}"));
    let out = run_local(&cfg, &inst.sites).map_err(proto)?;

    // Independent reconstruction of every nuisance from the raw rows.
    let canon: Vec<SiteDataset> = inst.sites.iter().map(SiteDataset::canonical).collect();
    let p = canon[0].covariate_count();
    let columns: Vec<usize> = (0..p).collect();
    let models: Vec<FittedOutcomeModel> = canon
        .iter()
        .enumerate()
        .map(|(s, d)| FittedOutcomeModel::fit(&inst.basis, d, SiteId(s)))
        .collect::<Result<_, _>>()
        .map_err(|e| SimError::Data(format!("{tag}: {e}")))?;
    let gbars: Vec<Vec<f64>> = canon.iter().map(|d| d.covariate_means(&columns)).collect();
    let weights: Vec<Vec<CalibrationResult>> = canon
        .iter()
        .enumerate()
        .map(|(s, d)| calibrate_to_targets(d.x(), SiteId(s), &gbars, &NewtonConfig::default()))
        .collect::<Result<_, _>>()
        .map_err(|e| SimError::Data(format!("{tag}: {e}")))?;

    let mut check = InstanceCheck { tau: 0.0, var: 0.0, comparisons: 0, solves: 0, balance: 0.0, min_weight: f64::INFINITY };
    for (s, row) in weights.iter().enumerate() {
        for (j, w) in row.iter().enumerate().filter(|(j, _)| *j != s) {
            let r = balance_residual(&w.weights, canon[s].x(), &gbars[j]).map_err(|e| SimError::Data(e.to_string()))?;
            check.balance = check.balance.max(inf_norm(&r));
            check.min_weight = w.weights.iter().copied().fold(check.min_weight, f64::min);
            check.solves += 1;
        }
    }
    let pooled = PooledInputs { sites: &canon, models: &models, weights: &weights };
    for r in out.reports.iter().filter(|r| r.method == Estimator::Dac) {
        let e = |e: crate::dac::DacError| SimError::Data(format!("{tag}: {e}"));
        let tau = pooled_oracle(&pooled, r.subset, r.k, r.k_prime).map_err(e)?;
        let var = pooled_eif_variance(&pooled, r.subset, r.k, r.k_prime, tau).map_err(e)?;
        check.tau = check.tau.max(rel_diff(r.tau_hat, tau));
        check.var = check.var.max(rel_diff(r.inference.map_or(f64::NAN, |i| i.variance), var));
        check.comparisons += 1;
    }
    Ok(check)
}

/// Instance `i` is drawn from seed `seed + i`.
pub fn verify_lossless(instances: usize, seed: u64, tolerance: f64) -> Result<LosslessSummary, SimError> {
    let mut summary = LosslessSummary {
        instances,
        passed: 0,
        tolerance,
        comparisons: 0,
        max_tau_rel_diff: 0.0,
        max_var_rel_diff: 0.0,
        calibration_solves: 0,
        max_balance_residual: 0.0,
        min_weight: f64::INFINITY,
        failures: Vec::new(),
    };
    for i in 0..instances {
        let s = seed.wrapping_add(i as u64);
        let inst = random_lossless_instance(s);
        let c = match check_instance(&inst, &format!("lossless-{s}")) {
            Ok(c) => c,
            Err(e) => {
                summary.failures.push(format!("instance {i}: {e}"));
                continue;
            }
        };
        summary.comparisons += c.comparisons;
        summary.calibration_solves += c.solves;
        summary.max_tau_rel_diff = summary.max_tau_rel_diff.max(c.tau);
        summary.max_var_rel_diff = summary.max_var_rel_diff.max(c.var);
        summary.max_balance_residual = summary.max_balance_residual.max(c.balance);
        summary.min_weight = summary.min_weight.min(c.min_weight);
        if c.tau <= tolerance && c.var <= tolerance {
            summary.passed += 1;
        } else {
            summary.failures.push(format!("instance {i}: estimate diff {:e}, variance diff {:e}", c.tau, c.var));
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_deterministic_and_in_range() {
        assert_eq!(random_lossless_instance(5), random_lossless_instance(5));
        for seed in 0..20 {
            let inst = random_lossless_instance(seed);
            assert!((2..=4).contains(&inst.sites.len()));
            assert!(inst.sites.iter().all(|s| (40..=200).contains(&s.n())));
        }
    }

    #[test]
    fn a_few_instances_pass() {
        let s = verify_lossless(4, 7, DEFAULT_LOSSLESS_TOLERANCE).unwrap();
        assert!(s.all_passed(), "{:?}", s.failures);
        assert!(s.max_balance_residual <= 1e-8 && s.min_weight > 0.0);
        assert_eq!(s.headline(), "4/4 within 1e-10");
    }
}
