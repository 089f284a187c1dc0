//! Bias-reduced DAC for log-linear weights and linear outcome models.
//!
//! With the weighting basis equal to the outcome basis `g = (1, x_S)`, the
//! weight equations are entropy balancing and the outcome equations are a
//! weighted least-squares fit per target subset, with weights
//! `W_i = Σ_{j∈𝓘} exp(γ_jℓᵀ g(X_i))`. Sites then ship moment sums (O¹–O⁵)
//! instead of predictions so that everything fits in two rounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{entropy_balance_with, CalibError, CalibrationProblem, CalibrationResult, BALANCE_TOLERANCE};
use crate::dac::{check_query, DacError, EstimateReport, Estimator, Inference};
use crate::data::{SiteId, SiteSet};
use crate::numlin::{self, Matrix, NewtonConfig, NumError};
use crate::outcome::{fit_wls, Basis, FittedOutcomeModel, LinearFit, OutcomeError};

/// Tolerance on both families of estimating-equation residuals.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrError {
    #[error(transparent)]
    Calibration(#[from] CalibError),
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error(transparent)]
    Query(#[from] DacError),
    #[error("weight equations for site {source_site} toward site {target_site} did not converge: {reason}")]
    InfeasibleTarget { source_site: SiteId, target_site: SiteId, reason: String },
    #[error("weighted cross-moment matrix for subset {subset} is singular")]
    RankDeficient { subset: SiteSet },
    #[error("{equation} residual {residual:e} exceeds tolerance")]
    ResidualCheck { equation: &'static str, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `β̂_{ℓ|𝓘}` for one subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetBeta {
    pub subset: SiteSet,
    #[serde(with = "crate::wire_real::vec")]
    pub beta: Vec<f64>,
}

/// Local nuisance estimates at site ℓ.
#[derive(Debug, Clone, PartialEq)]
pub struct BRNuisanceFit {
    pub site: SiteId,
    /// `gammas[j]` on `a(X)` including the intercept; the own slot is zero.
    pub gammas: Vec<Vec<f64>>,
    /// One entry per nonempty subset, in increasing mask order.
    pub betas: Vec<SubsetBeta>,
    /// `tilts[j][i] = exp(γ_jℓᵀ a(X_i))`, summing to `n_j` over the rows.
    pub tilts: Vec<Vec<f64>>,
}

impl BRNuisanceFit {
    pub fn beta(&self, subset: SiteSet) -> Option<&[f64]> {
        self.betas.iter().find(|b| b.subset == subset).map(|b| b.beta.as_slice())
    }

    /// The linear model `β̂_{ℓ|𝓘}ᵀ(1, x)` as a transmissible outcome model.
    pub fn outcome_model(&self, subset: SiteSet) -> Option<FittedOutcomeModel> {
        let beta = self.beta(subset)?;
        Some(FittedOutcomeModel {
            site: self.site,
            basis: Basis::Linear { covariates: beta.len() - 1 },
            fit: LinearFit { coefficients: beta.to_vec(), dropped_columns: Vec::new(), columns: beta.len() },
            subset: Some(subset),
        })
    }

    /// Tilts as normalized calibration weights, one result per target.
    pub fn calibration_weights(&self) -> Vec<CalibrationResult> {
        self.tilts
            .iter()
            .zip(&self.gammas)
            .map(|(t, g)| {
                let total = numlin::sum(t.iter().copied());
                let weights: Vec<f64> = t.iter().map(|v| v / total).collect();
                let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
                CalibrationResult {
                    gamma: g[1..].to_vec(),
                    weights,
                    balance_residual: Vec::new(),
                    iterations: 0,
                    effective_sample_size: ess,
                    dropped_columns: Vec::new(),
                }
            })
            .collect()
    }
}

/// Site ℓ's data in the form the BR path needs.
#[derive(Debug, Clone, Copy)]
pub struct BRSiteInput<'a> {
    pub site: SiteId,
    /// `g(X)` with the intercept in column 0.
    pub design: &'a Matrix,
    pub y: &'a [f64],
    /// `ḡ_j` for every site, intercept entry included.
    pub targets: &'a [Vec<f64>],
    pub sizes: &'a [usize],
}

impl BRSiteInput<'_> {
    fn validate(&self) -> Result<(), BrError> {
        let k = self.sizes.len();
        let p = self.design.cols();
        if self.targets.len() != k {
            return Err(BrError::DimensionMismatch { expected: k, got: self.targets.len() });
        }
        if let Some(t) = self.targets.iter().find(|t| t.len() != p) {
            return Err(BrError::DimensionMismatch { expected: p, got: t.len() });
        }
        if self.y.len() != self.design.rows() {
            return Err(BrError::DimensionMismatch { expected: self.design.rows(), got: self.y.len() });
        }
        if self.site.index() >= k || self.sizes[self.site.index()] != self.y.len() {
            return Err(BrError::DimensionMismatch { expected: self.sizes.get(self.site.index()).copied().unwrap_or(0), got: self.y.len() });
        }
        if p == 0 || self.design.row_iter().any(|r| r[0] != 1.0) {
            return Err(BrError::Outcome(OutcomeError::DegenerateFeatures("design must start with an intercept column".into())));
        }
        Ok(())
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + numlin::sum(v.iter().map(|x| (x - max).exp())).ln()
}

/// Weighted least squares of `y` on `design` for every nonempty subset.
fn subset_betas(input: &BRSiteInput<'_>, tilts: &[Vec<f64>]) -> Result<Vec<SubsetBeta>, BrError> {
    let k = input.sizes.len();
    let n = input.y.len();
    SiteSet::nonempty_subsets(k)
        .map(|subset| {
            let w: Vec<f64> = (0..n).map(|i| numlin::sum(subset.iter().map(|j| tilts[j.index()][i]))).collect();
            let fit = fit_wls(input.design, input.y, &w)?;
            Ok(SubsetBeta { subset, beta: fit.full_coefficients() })
        })
        .collect()
}

/// Solves the weight and outcome equations at site ℓ with `a = g`.
pub fn br_fit_site(input: &BRSiteInput<'_>, cfg: &NewtonConfig) -> Result<BRNuisanceFit, BrError> {
    input.validate()?;
    let own = input.site.index();
    let n = input.y.len();
    let p = input.design.cols();
    let features = input.design.select_columns(&(1..p).collect::<Vec<_>>());
    let mut gammas = Vec::with_capacity(input.sizes.len());
    let mut tilts = Vec::with_capacity(input.sizes.len());
    for (j, target) in input.targets.iter().enumerate() {
        if j == own {
            gammas.push(vec![0.0; p]);
            tilts.push(vec![1.0; n]);
            continue;
        }
        let problem = CalibrationProblem {
            features: &features,
            target_mean: &target[1..],
            source_site: input.site,
            target_site: SiteId(j),
        };
        let result = entropy_balance_with(&problem, cfg)?;
        let nj = input.sizes[j] as f64;
        let lse = log_sum_exp(features.row_iter().map(|r| numlin::dot(r, &result.gamma)));
        let mut gamma = vec![nj.ln() - lse];
        gamma.extend_from_slice(&result.gamma);
        tilts.push(result.weights.iter().map(|w| w * nj).collect());
        gammas.push(gamma);
    }
    let betas = subset_betas(input, &tilts)?;
    let fit = BRNuisanceFit { site: input.site, gammas, betas, tilts };
    check_residuals(input, input.design, &fit)?;
    Ok(fit)
}

/// Experimental path for a weighting basis `a ≠ g` of equal dimension.
///
/// The weight equations `Σ_{D=ℓ} exp(γᵀa) g = n_j ḡ_j` are solved by damped
/// Newton on the residual norm with a general square solve; the outcome
/// equations `[Σ W a gᵀ] β = Σ W a Y` by one general solve per subset.
/// No regularization is attempted when a system is singular.
pub fn br_fit_site_general(input: &BRSiteInput<'_>, a_design: &Matrix) -> Result<BRNuisanceFit, BrError> {
    input.validate()?;
    let (n, p) = (input.y.len(), input.design.cols());
    if a_design.cols() != p || a_design.rows() != n {
        return Err(BrError::DimensionMismatch { expected: p, got: a_design.cols() });
    }
    let own = input.site.index();
    let mut gammas = Vec::new();
    let mut tilts = Vec::new();
    for (j, target) in input.targets.iter().enumerate() {
        if j == own {
            gammas.push(vec![0.0; p]);
            tilts.push(vec![1.0; n]);
            continue;
        }
        let nj = input.sizes[j] as f64;
        let infeasible = |reason: String| BrError::InfeasibleTarget { source_site: input.site, target_site: SiteId(j), reason };
        let residual = |gamma: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let e: Vec<f64> = a_design.row_iter().map(|r| numlin::dot(r, gamma).exp()).collect();
            let f = (0..p)
                .map(|c| numlin::sum((0..n).map(|i| e[i] * input.design.get(i, c))) / nj - target[c])
                .collect();
            (f, e)
        };
        let mut gamma = vec![0.0; p];
        gamma[0] = (nj / n as f64).ln();
        let (mut f, mut e) = residual(&gamma);
        let mut iterations = 0;
        while numlin::inf_norm(&f) > 1e-12 * (1.0 + numlin::inf_norm(target)) {
            iterations += 1;
            if iterations > 100 {
                return Err(infeasible(format!("residual {:e} after 100 iterations", numlin::inf_norm(&f))));
            }
            let mut jac = Matrix::zeros(p, p);
            for i in 0..n {
                for r in 0..p {
                    for c in 0..p {
                        jac.set(r, c, jac.get(r, c) + e[i] * input.design.get(i, r) * a_design.get(i, c) / nj);
                    }
                }
            }
            let step = numlin::solve_general(&jac, &f).map_err(|err| infeasible(err.to_string()))?;
            let current = numlin::inf_norm(&f);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = gamma.iter().zip(&step).map(|(g, s)| g - t * s).collect();
                let (tf, te) = residual(&trial);
                if tf.iter().all(|v| v.is_finite()) && numlin::inf_norm(&tf) < current {
                    gamma = trial;
                    f = tf;
                    e = te;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    return Err(infeasible("line search failed".into()));
                }
            }
            if numlin::inf_norm(&gamma) > 1e3 {
                return Err(infeasible("multiplier diverged".into()));
            }
        }
        gammas.push(gamma);
        tilts.push(e);
    }
    let k = input.sizes.len();
    let betas = SiteSet::nonempty_subsets(k)
        .map(|subset| {
            let w: Vec<f64> = (0..n).map(|i| numlin::sum(subset.iter().map(|j| tilts[j.index()][i]))).collect();
            let mut cross = Matrix::zeros(p, p);
            let mut rhs = vec![0.0; p];
            for i in 0..n {
                for r in 0..p {
                    rhs[r] += w[i] * a_design.get(i, r) * input.y[i];
                    for c in 0..p {
                        cross.set(r, c, cross.get(r, c) + w[i] * a_design.get(i, r) * input.design.get(i, c));
                    }
                }
            }
            let beta = numlin::solve_general(&cross, &rhs).map_err(|_| BrError::RankDeficient { subset })?;
            Ok(SubsetBeta { subset, beta })
        })
        .collect::<Result<Vec<_>, BrError>>()?;
    let fit = BRNuisanceFit { site: input.site, gammas, betas, tilts };
    check_residuals(input, a_design, &fit)?;
    Ok(fit)
}

/// `max_j ‖(1/n_j) Σ_{D=ℓ} exp(γ_jℓᵀa) g − ḡ_j‖∞`, scaled per column.
pub fn weight_equation_residual(input: &BRSiteInput<'_>, fit: &BRNuisanceFit) -> f64 {
    let (n, p) = (input.y.len(), input.design.cols());
    let mut worst: f64 = 0.0;
    for (j, tilt) in fit.tilts.iter().enumerate() {
        let nj = input.sizes[j] as f64;
        for c in 0..p {
            let col = input.design.column(c);
            let scale = col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let r = numlin::sum((0..n).map(|i| tilt[i] * col[i])) / nj - input.targets[j][c];
            worst = worst.max(r.abs() / scale);
        }
    }
    worst
}

/// `max_𝓘 ‖(1/n_ℓ) Σ W_i (Y_i − β̂ᵀg_i) a_i‖∞`, relative to the size of `W|Y|`.
pub fn outcome_equation_residual(input: &BRSiteInput<'_>, a_design: &Matrix, fit: &BRNuisanceFit) -> f64 {
    let n = input.y.len();
    let mut worst: f64 = 0.0;
    for b in &fit.betas {
        let w: Vec<f64> = (0..n).map(|i| numlin::sum(b.subset.iter().map(|j| fit.tilts[j.index()][i]))).collect();
        let resid: Vec<f64> = (0..n).map(|i| input.y[i] - numlin::dot(input.design.row(i), &b.beta)).collect();
        for c in 0..a_design.cols() {
            let col = a_design.column(c);
            let scale = (0..n).map(|i| w[i] * input.y[i].abs().max(1.0) * col[i].abs().max(1.0)).sum::<f64>() / n as f64;
            let r = numlin::sum((0..n).map(|i| w[i] * resid[i] * col[i])) / n as f64;
            worst = worst.max(r.abs() / scale.max(1.0));
        }
    }
    worst
}

fn check_residuals(input: &BRSiteInput<'_>, a_design: &Matrix, fit: &BRNuisanceFit) -> Result<(), BrError> {
    let r = weight_equation_residual(input, fit);
    if !(r <= RESIDUAL_TOLERANCE.max(BALANCE_TOLERANCE)) {
        return Err(BrError::ResidualCheck { equation: "weight", residual: r });
    }
    let r = outcome_equation_residual(input, a_design, fit);
    if !(r <= RESIDUAL_TOLERANCE) {
        return Err(BrError::ResidualCheck { equation: "outcome", residual: r });
    }
    Ok(())
}

/// Per-subset part of site j's round-two payload. Entries indexed by target
/// are restricted to members of the subset, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetBlock {
    pub subset: SiteSet,
    #[serde(with = "crate::wire_real::vec")]
    pub beta: Vec<f64>,
    /// `o2[l] = Σ exp(γ_ljᵀa)(Y − β̂ᵀg)`.
    #[serde(with = "crate::wire_real::vec")]
    pub o2: Vec<f64>,
    /// `o4[l][h] = Σ exp((γ_lj + γ_hj)ᵀa)(Y − β̂ᵀg)²`.
    #[serde(with = "crate::wire_real::nested")]
    pub o4: Vec<Vec<f64>>,
    /// `o5[l] = Σ exp(γ_ljᵀa)(Y − β̂ᵀg) g`.
    #[serde(with = "crate::wire_real::nested")]
    pub o5: Vec<Vec<f64>>,
}

/// Residual moments of the unweighted (single-site) fit, used for the
/// regression-only comparator's variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OlsMoments {
    /// `Σ r² g gᵀ`.
    pub s: Matrix,
    /// `Σ r g gᵀ`.
    pub t: Matrix,
    /// `Σ r g`.
    #[serde(with = "crate::wire_real::vec")]
    pub u: Vec<f64>,
}

/// Site j's round-two payload in bias-reduced mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BRAggregatedData {
    pub site: SiteId,
    pub n: usize,
    /// Number of sites in the network.
    pub sites: usize,
    /// `Σ g`.
    #[serde(with = "crate::wire_real::vec")]
    pub o1: Vec<f64>,
    /// `Σ g gᵀ`.
    pub o3: Matrix,
    /// One block per nonempty subset, in increasing mask order.
    pub blocks: Vec<SubsetBlock>,
    pub ols: OlsMoments,
}

impl BRAggregatedData {
    pub fn block(&self, subset: SiteSet) -> Option<&SubsetBlock> {
        let idx = subset.mask().checked_sub(1)? as usize;
        self.blocks.get(idx).filter(|b| b.subset == subset)
    }
}

/// Computes site j's O¹–O⁵ from its nuisance fit.
pub fn br_aggregates(design: &Matrix, y: &[f64], fit: &BRNuisanceFit) -> Result<BRAggregatedData, BrError> {
    let (n, p) = (design.rows(), design.cols());
    if y.len() != n {
        return Err(BrError::DimensionMismatch { expected: n, got: y.len() });
    }
    if fit.tilts.iter().any(|t| t.len() != n) || fit.betas.iter().any(|b| b.beta.len() != p) {
        return Err(BrError::DimensionMismatch { expected: n, got: fit.tilts.first().map_or(0, Vec::len) });
    }
    let col_sum = |f: &dyn Fn(usize) -> f64| numlin::sum((0..n).map(f));
    let o1: Vec<f64> = (0..p).map(|c| col_sum(&|i| design.get(i, c))).collect();
    let moment = |w: &dyn Fn(usize) -> f64| -> Matrix {
        let mut m = Matrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let v = col_sum(&|i| w(i) * design.get(i, a) * design.get(i, b));
                m.set(a, b, v);
                m.set(b, a, v);
            }
        }
        m
    };
    let o3 = moment(&|_| 1.0);

    let residuals = |beta: &[f64]| -> Vec<f64> { (0..n).map(|i| y[i] - numlin::dot(design.row(i), beta)).collect() };
    let blocks = fit
        .betas
        .iter()
        .map(|b| {
            let r = residuals(&b.beta);
            let members: Vec<usize> = b.subset.iter().map(SiteId::index).collect();
            let o2 = members.iter().map(|&l| col_sum(&|i| fit.tilts[l][i] * r[i])).collect();
            let o4 = members
                .iter()
                .map(|&l| members.iter().map(|&h| col_sum(&|i| fit.tilts[l][i] * fit.tilts[h][i] * r[i] * r[i])).collect())
                .collect();
            let o5 = members
                .iter()
                .map(|&l| (0..p).map(|c| col_sum(&|i| fit.tilts[l][i] * r[i] * design.get(i, c))).collect())
                .collect();
            SubsetBlock { subset: b.subset, beta: b.beta.clone(), o2, o4, o5 }
        })
        .collect();

    let own = fit.beta(SiteSet::singleton(fit.site)).ok_or(BrError::DimensionMismatch { expected: 1, got: 0 })?;
    let r = residuals(own);
    let ols = OlsMoments {
        s: moment(&|i| r[i] * r[i]),
        t: moment(&|i| r[i]),
        u: (0..p).map(|c| col_sum(&|i| r[i] * design.get(i, c))).collect(),
    };
    Ok(BRAggregatedData { site: fit.site, n, sites: fit.tilts.len(), o1, o3, blocks, ols })
}

/// Validated view of the payloads a `(k, k', 𝓘)` query needs.
struct BrQuery<'a> {
    subset: SiteSet,
    members: Vec<&'a BRAggregatedData>,
    k: &'a BRAggregatedData,
    kp: &'a BRAggregatedData,
    n_total: f64,
    /// `Σ_{j∈𝓘} O¹_j`.
    s1: Vec<f64>,
}

fn find(brads: &[BRAggregatedData], site: SiteId) -> Result<&BRAggregatedData, BrError> {
    brads.iter().find(|a| a.site == site).ok_or(BrError::Query(DacError::UnknownSite(site)))
}

impl<'a> BrQuery<'a> {
    fn new(brads: &'a [BRAggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<Self, BrError> {
        let sites = brads.first().map(|a| a.sites).ok_or(DacError::UnknownSite(k))?;
        check_query(k, k_prime, subset, sites)?;
        let members: Vec<&BRAggregatedData> = subset.iter().map(|s| find(brads, s)).collect::<Result<_, _>>()?;
        let (ka, kpa) = (find(brads, k)?, find(brads, k_prime)?);
        let p = ka.o1.len();
        for a in members.iter().chain([&ka, &kpa]) {
            if a.sites != sites || a.o1.len() != p || a.block(subset).is_none() {
                return Err(DacError::Inconsistent(format!("payload of site {} does not match the query", a.site)).into());
            }
        }
        let n_total = members.iter().map(|a| a.n).sum::<usize>() as f64;
        let s1 = (0..p).map(|c| numlin::sum(members.iter().map(|a| a.o1[c]))).collect();
        Ok(BrQuery { subset, members, k: ka, kp: kpa, n_total, s1 })
    }

    fn block(&self, arm: &BRAggregatedData) -> &'a SubsetBlock {
        let a: &'a BRAggregatedData = if arm.site == self.k.site { self.k } else { self.kp };
        a.block(self.subset).expect("checked in new")
    }

    fn delta_beta(&self) -> Vec<f64> {
        let (bk, bkp) = (&self.block(self.k).beta, &self.block(self.kp).beta);
        bkp.iter().zip(bk).map(|(a, b)| a - b).collect()
    }

    /// `Σ_{j∈𝓘} O²_{ℓj|𝓘}` for arm ℓ.
    fn o2_sum(&self, arm: &BRAggregatedData) -> f64 {
        numlin::sum(self.block(arm).o2.iter().copied())
    }

    fn o3_sum(&self) -> Matrix {
        let p = self.s1.len();
        let mut m = Matrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                m.set(a, b, numlin::sum(self.members.iter().map(|s| s.o3.get(a, b))));
            }
        }
        m
    }
}

fn quad(v: &[f64], m: &Matrix, w: &[f64]) -> f64 {
    numlin::dot(v, &m.mul_vec(w).expect("square moment matrix"))
}

fn br_report(method: Estimator, q: &BrQuery<'_>, tau_hat: f64, mus: (f64, f64)) -> EstimateReport {
    EstimateReport {
        method,
        k: q.k.site,
        k_prime: q.kp.site,
        subset: q.subset,
        tau_hat,
        mu_k: mus.0,
        mu_k_prime: mus.1,
        inference: None,
    }
}

/// Bias-reduced point estimate from O¹, O² and the subset-specific β̂.
pub fn br_tau(brads: &[BRAggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<EstimateReport, BrError> {
    let q = BrQuery::new(brads, subset, k, k_prime)?;
    let mu = |arm: &BRAggregatedData| (numlin::dot(&q.block(arm).beta, &q.s1) + q.o2_sum(arm)) / q.n_total;
    let tau = (numlin::dot(&q.delta_beta(), &q.s1) + (q.o2_sum(q.kp) - q.o2_sum(q.k))) / q.n_total;
    Ok(br_report(Estimator::Dac, &q, tau, (mu(q.k), mu(q.kp))))
}

/// Influence-function variance of the bias-reduced estimate.
pub fn br_var(brads: &[BRAggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId, tau_hat: f64) -> Result<f64, BrError> {
    let q = BrQuery::new(brads, subset, k, k_prime)?;
    let n2 = q.n_total * q.n_total;
    let db = q.delta_beta();
    let o4 = |arm: &BRAggregatedData| numlin::sum(q.block(arm).o4.iter().flatten().copied());
    let o5 = |arm: &BRAggregatedData| -> f64 {
        let p = db.len();
        let summed: Vec<f64> = (0..p).map(|c| numlin::sum(q.block(arm).o5.iter().map(|row| row[c]))).collect();
        numlin::dot(&db, &summed)
    };
    let mut v = -2.0 * tau_hat * numlin::dot(&db, &q.s1) / n2 + tau_hat * tau_hat / q.n_total;
    let mut o2_term = 0.0;
    if subset.contains(k) {
        o2_term += q.o2_sum(q.k);
    }
    if subset.contains(k_prime) {
        o2_term -= q.o2_sum(q.kp);
    }
    v += 2.0 * tau_hat * o2_term / n2;
    v += quad(&db, &q.o3_sum(), &db) / n2;
    v += (o4(q.kp) + o4(q.k)) / n2;
    let mut o5_term = 0.0;
    if subset.contains(k_prime) {
        o5_term += o5(q.kp);
    }
    if subset.contains(k) {
        o5_term -= o5(q.k);
    }
    v += 2.0 * o5_term / n2;
    Ok(v)
}

pub fn br_estimate(brads: &[BRAggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<EstimateReport, BrError> {
    let r = br_tau(brads, subset, k, k_prime)?;
    let v = br_var(brads, subset, k, k_prime, r.tau_hat)?;
    Ok(r.with_variance(v))
}

/// Regression-only comparator with each arm's model fitted by OLS on its own
/// site. Inference accounts for the estimation of both coefficient vectors.
pub fn br_dor_estimate(brads: &[BRAggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<EstimateReport, BrError> {
    let q = BrQuery::new(brads, subset, k, k_prime)?;
    let own_beta = |arm: &BRAggregatedData| -> Result<Vec<f64>, BrError> {
        arm.block(SiteSet::singleton(arm.site))
            .map(|b| b.beta.clone())
            .ok_or_else(|| DacError::Inconsistent(format!("site {} lacks its own-subset block", arm.site)).into())
    };
    let (bk, bkp) = (own_beta(q.k)?, own_beta(q.kp)?);
    let db: Vec<f64> = bkp.iter().zip(&bk).map(|(a, b)| a - b).collect();
    let tau = numlin::dot(&db, &q.s1) / q.n_total;
    let mus = (numlin::dot(&bk, &q.s1) / q.n_total, numlin::dot(&bkp, &q.s1) / q.n_total);

    // φ_i = I(D∈𝓘)(Δβᵀg − τ) + I(D=k') c_k'ᵀ g r − I(D=k) c_kᵀ g r with c_ℓ = O³_ℓ⁻¹ Σ_{j∈𝓘} O¹_j.
    let c = |arm: &BRAggregatedData| numlin::solve_spd(&arm.o3, &q.s1).map_err(|_| BrError::RankDeficient { subset: SiteSet::singleton(arm.site) });
    let (ck, ckp) = (c(q.k)?, c(q.kp)?);
    let mut m = quad(&db, &q.o3_sum(), &db) - 2.0 * tau * numlin::dot(&db, &q.s1) + q.n_total * tau * tau;
    m += quad(&ckp, &q.kp.ols.s, &ckp) + quad(&ck, &q.k.ols.s, &ck);
    if subset.contains(k_prime) {
        m += 2.0 * (quad(&db, &q.kp.ols.t, &ckp) - tau * numlin::dot(&q.kp.ols.u, &ckp));
    }
    if subset.contains(k) {
        m -= 2.0 * (quad(&db, &q.k.ols.t, &ck) - tau * numlin::dot(&q.k.ols.u, &ck));
    }
    let report = br_report(Estimator::Dor, &q, tau, mus);
    Ok(EstimateReport { inference: Some(Inference::from_variance(tau, m / (q.n_total * q.n_total))), ..report })
}

impl From<NumError> for BrError {
    fn from(e: NumError) -> Self {
        BrError::Outcome(OutcomeError::DegenerateFeatures(e.to_string()))
    }
}
