//! Invariant checks shared by the property suite and the acceptance run.
//! Each check returns a description of the first violation.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fedcmp::brdac::{
    br_aggregates, br_fit_site, br_tau, outcome_equation_residual, weight_equation_residual, BRNuisanceFit, BRSiteInput,
};
use fedcmp::calib::{balance_residual, calibrate_to_targets, entropy_balance, CalibrationProblem, CalibrationResult};
use fedcmp::dac::{dac_tau, dcw_tau, site_aggregates, EstimateReport, Estimator};
use fedcmp::data::{SiteDataset, SiteId, SiteSet};
use fedcmp::fedproto::{run_local, Mode, SessionConfig};
use fedcmp::numlin::{inf_norm, Matrix, NewtonConfig};
use fedcmp::outcome::{expand_basis, BasisSpec, FittedOutcomeModel};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

#[derive(Debug, Clone)]
pub struct Net {
    pub sites: Vec<SiteDataset>,
    pub basis: BasisSpec,
}

/// Overlapping sites with shifted covariates and a nonlinear outcome.
pub fn network(seed: u64, k: usize, p: usize, spline: bool) -> Net {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let sites = (0..k)
        .map(|s| {
            let n = rng.random_range(40..=90);
            let rows: Vec<(f64, Vec<f64>)> = (0..n)
                .map(|_| {
                    let x: Vec<f64> = (0..p).map(|j| 0.15 * s as f64 * (1.0 - j as f64) + z.sample(&mut rng)).collect();
                    let y = s as f64 + x[0] + 0.4 * x[p - 1] * x[p - 1] + 0.5 * z.sample(&mut rng);
                    (y, x)
                })
                .collect();
            SiteDataset::from_rows(&rows).unwrap()
        })
        .collect();
    Net { sites, basis: if spline { BasisSpec::cubic_spline(p) } else { BasisSpec::Linear } }
}

pub fn reports(net: &Net) -> Result<Vec<EstimateReport>, String> {
    let cfg = SessionConfig::new("prop", net.sites.len(), Mode::DacNonparametric, net.basis.clone());
    run_local(&cfg, &net.sites).map(|o| o.reports).map_err(|e| e.to_string())
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn find(rs: &[EstimateReport], m: Estimator, subset: SiteSet, k: SiteId, kp: SiteId) -> Result<&EstimateReport, String> {
    rs.iter()
        .find(|r| r.method == m && r.subset == subset && r.k == k && r.k_prime == kp)
        .ok_or_else(|| format!("no {m} report for {k} vs {kp} on {subset}"))
}

pub fn antisymmetry(net: &Net) -> Check {
    let rs = reports(net)?;
    for r in &rs {
        let back = find(&rs, r.method, r.subset, r.k_prime, r.k)?;
        ensure!(close(r.tau_hat, -back.tau_hat, 1e-12), "{} {}: {} vs {}", r.method, r.subset, r.tau_hat, back.tau_hat);
        ensure!(r.inference.is_some() == back.inference.is_some(), "inference present on one side only");
        if let (Some(a), Some(b)) = (r.inference, back.inference) {
            ensure!(close(a.variance, b.variance, 1e-12), "variance {} vs {}", a.variance, b.variance);
        }
    }
    Ok(())
}

pub fn subset_aggregation(net: &Net) -> Check {
    let rs = reports(net)?;
    let k = net.sites.len();
    let sizes: Vec<f64> = net.sites.iter().map(|d| d.n() as f64).collect();
    let (a, b) = (SiteId(0), SiteId(1));
    for method in [Estimator::Dac, Estimator::Dor, Estimator::Dcw] {
        for subset in SiteSet::nonempty_subsets(k) {
            let whole = find(&rs, method, subset, a, b)?;
            let n: f64 = subset.iter().map(|j| sizes[j.index()]).sum();
            let parts: Vec<&EstimateReport> =
                subset.iter().map(|j| find(&rs, method, SiteSet::singleton(j), a, b)).collect::<Result<_, _>>()?;
            let mix = |f: fn(&EstimateReport) -> f64| -> f64 {
                subset.iter().zip(&parts).map(|(j, r)| sizes[j.index()] * f(r)).sum::<f64>() / n
            };
            ensure!(close(whole.mu_k, mix(|r| r.mu_k), 1e-12), "{method} {subset}: mu_k");
            ensure!(close(whole.mu_k_prime, mix(|r| r.mu_k_prime), 1e-12), "{method} {subset}: mu_k'");
            ensure!(close(whole.tau_hat, mix(|r| r.tau_hat), 1e-12), "{method} {subset}: tau");
        }
    }
    Ok(())
}

/// Weights are unchanged when rows and target go through the same invertible
/// affine map `x ↦ A x + c` (A lower bidiagonal).
pub fn affine_invariance(seed: u64, p: usize, scale: &[f64], mix: f64, shift: &[f64]) -> Check {
    let net = network(seed, 2, p, false);
    let (src, tgt) = (&net.sites[0], &net.sites[1]);
    let cols: Vec<usize> = (0..p).collect();
    let target = tgt.covariate_means(&cols);
    let solve = |features: &Matrix, target: &[f64]| {
        entropy_balance(&CalibrationProblem { features, target_mean: target, source_site: SiteId(0), target_site: SiteId(1) })
            .map_err(|e| e.to_string())
    };
    let base = solve(src.x(), &target)?;
    let map = |x: &[f64]| -> Vec<f64> {
        (0..p).map(|i| scale[i] * x[i] + if i > 0 { mix * x[i - 1] } else { 0.0 } + shift[i]).collect()
    };
    let rows: Vec<Vec<f64>> = src.x().row_iter().map(map).collect();
    let again = solve(&Matrix::from_rows(&rows).unwrap(), &map(&target))?;
    for (a, b) in base.weights.iter().zip(&again.weights) {
        ensure!((a - b).abs() <= 1e-8 * a.max(*b), "weight {a} vs {b}");
    }
    Ok(())
}

pub fn self_weights_uniform(net: &Net) -> Check {
    let p = net.sites[0].covariate_count();
    let cols: Vec<usize> = (0..p).collect();
    let gbars: Vec<Vec<f64>> = net.sites.iter().map(|d| d.covariate_means(&cols)).collect();
    for (s, d) in net.sites.iter().enumerate() {
        let ws = calibrate_to_targets(d.x(), SiteId(s), &gbars, &NewtonConfig::default()).map_err(|e| e.to_string())?;
        let u = 1.0 / d.n() as f64;
        ensure!(ws[s].weights.iter().all(|&w| w == u), "site {s}: own-slot weights not uniform");
        ensure!(ws[s].gamma.iter().all(|&g| g == 0.0), "site {s}: own-slot gamma not zero");
        // Solving toward one's own mean also lands on γ = 0.
        let own = entropy_balance(&CalibrationProblem {
            features: d.x(),
            target_mean: &gbars[s],
            source_site: SiteId(s),
            target_site: SiteId(s),
        })
        .map_err(|e| e.to_string())?;
        ensure!(own.gamma.iter().all(|&g| g == 0.0), "site {s}: gamma {:?}", own.gamma);
        ensure!(own.weights.iter().all(|&w| close(w, u, 1e-12)), "site {s}: weights not uniform");
    }
    Ok(())
}

struct BrNet {
    designs: Vec<Matrix>,
    targets: Vec<Vec<f64>>,
    sizes: Vec<usize>,
    fits: Vec<BRNuisanceFit>,
}

fn br_network(net: &Net) -> Result<BrNet, String> {
    let designs: Vec<Matrix> = net.sites.iter().map(|d| expand_basis(d.x(), &BasisSpec::Linear).unwrap()).collect();
    let p = net.sites[0].covariate_count();
    let cols: Vec<usize> = (0..p).collect();
    let targets: Vec<Vec<f64>> =
        net.sites.iter().map(|d| std::iter::once(1.0).chain(d.covariate_means(&cols)).collect()).collect();
    let sizes: Vec<usize> = net.sites.iter().map(SiteDataset::n).collect();
    let fits = (0..net.sites.len())
        .map(|s| {
            let input = BRSiteInput { site: SiteId(s), design: &designs[s], y: net.sites[s].y(), targets: &targets, sizes: &sizes };
            br_fit_site(&input, &NewtonConfig::default()).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(BrNet { designs, targets, sizes, fits })
}

/// With a shared linear basis the bias-reduced, calibration-weighted and
/// augmented estimators coincide.
pub fn triple_identity(net: &Net) -> Check {
    let k = net.sites.len();
    let br = br_network(net)?;
    let brads: Vec<_> = (0..k)
        .map(|s| br_aggregates(&br.designs[s], net.sites[s].y(), &br.fits[s]).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let weights: Vec<Vec<CalibrationResult>> = br.fits.iter().map(BRNuisanceFit::calibration_weights).collect();
    for subset in SiteSet::nonempty_subsets(k) {
        let models: Vec<FittedOutcomeModel> = br.fits.iter().map(|f| f.outcome_model(subset).unwrap()).collect();
        let ads: Vec<_> = (0..k)
            .map(|s| site_aggregates(SiteId(s), &net.sites[s], &models, &weights[s], &br.sizes).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        for (a, b) in [(k - 1, 0), (0, 1)] {
            let (a, b) = (SiteId(a), SiteId(b));
            let t_br = br_tau(&brads, subset, a, b).map_err(|e| e.to_string())?.tau_hat;
            let t_dac = dac_tau(&ads, subset, a, b).map_err(|e| e.to_string())?.tau_hat;
            let t_dcw = dcw_tau(&ads, subset, a, b).map_err(|e| e.to_string())?.tau_hat;
            ensure!(close(t_br, t_dac, 1e-9) && close(t_br, t_dcw, 1e-9), "{subset}: br {t_br} dac {t_dac} dcw {t_dcw}");
        }
    }
    Ok(())
}

/// Balance equations and both bias-reduced estimating equations hold to 1e-8.
pub fn equation_residuals(net: &Net) -> Check {
    let p = net.sites[0].covariate_count();
    let cols: Vec<usize> = (0..p).collect();
    let gbars: Vec<Vec<f64>> = net.sites.iter().map(|d| d.covariate_means(&cols)).collect();
    for (s, d) in net.sites.iter().enumerate() {
        let ws = calibrate_to_targets(d.x(), SiteId(s), &gbars, &NewtonConfig::default()).map_err(|e| e.to_string())?;
        for (j, w) in ws.iter().enumerate() {
            let r = balance_residual(&w.weights, d.x(), &gbars[j]).map_err(|e| e.to_string())?;
            ensure!(inf_norm(&r) <= 1e-8, "site {s} toward {j}: balance residual {r:?}");
            ensure!(w.weights.iter().all(|&v| v > 0.0), "site {s} toward {j}: nonpositive weight");
        }
    }
    let br = br_network(net)?;
    for s in 0..net.sites.len() {
        let input = BRSiteInput { site: SiteId(s), design: &br.designs[s], y: net.sites[s].y(), targets: &br.targets, sizes: &br.sizes };
        let (rw, ro) = (weight_equation_residual(&input, &br.fits[s]), outcome_equation_residual(&input, &br.designs[s], &br.fits[s]));
        ensure!(rw <= 1e-8 && ro <= 1e-8, "site {s}: weight residual {rw:e}, outcome residual {ro:e}");
    }
    Ok(())
}

/// Shuffling records within sites leaves every report bit-identical.
pub fn permutation_invariance(net: &Net, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = net
        .sites
        .iter()
        .map(|d| {
            let mut rows: Vec<usize> = (0..d.n()).collect();
            for i in (1..rows.len()).rev() {
                rows.swap(i, rng.random_range(0..=i));
            }
            d.select_rows(&rows)
        })
        .collect();
    let other = Net { sites, basis: net.basis.clone() };
    ensure!(reports(net)? == reports(&other)?, "reports changed under a record shuffle");
    Ok(())
}
