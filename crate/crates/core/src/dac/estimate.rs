use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{check_query, lookup, AggregatedData, DacError};
use crate::data::{SiteId, SiteSet};
use crate::numlin;

/// Two-sided 95% normal quantile.
pub const NORMAL_QUANTILE_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimator {
    /// Outcome regression plus calibration-weighted residual correction.
    Dac,
    /// Outcome regression alone.
    Dor,
    /// Calibration-weighted outcome means alone.
    Dcw,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Dac => "DAC",
            Estimator::Dor => "DOR",
            Estimator::Dcw => "DCW",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "DAC" => Ok(Estimator::Dac),
            "DOR" => Ok(Estimator::Dor),
            "DCW" => Ok(Estimator::Dcw),
            _ => Err(format!("unknown method {s:?}; expected DAC, DOR or DCW")),
        }
    }
}

/// Normal-approximation inference for one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    /// Variance estimate, clamped at zero.
    #[serde(with = "crate::wire_real::one")]
    pub variance: f64,
    #[serde(with = "crate::wire_real::one")]
    pub std_error: f64,
    #[serde(with = "crate::wire_real::one")]
    pub ci_low: f64,
    #[serde(with = "crate::wire_real::one")]
    pub ci_high: f64,
    #[serde(with = "crate::wire_real::one")]
    pub p_value: f64,
}

impl Inference {
    pub fn from_variance(tau: f64, variance: f64) -> Inference {
        let variance = variance.max(0.0);
        let std_error = variance.sqrt();
        let half = NORMAL_QUANTILE_975 * std_error;
        let p_value = if std_error > 0.0 {
            erfc((tau / std_error).abs() / std::f64::consts::SQRT_2)
        } else if tau == 0.0 {
            1.0
        } else {
            0.0
        };
        Inference { variance, std_error, ci_low: tau - half, ci_high: tau + half, p_value }
    }
}

/// `τ̂_{(k,k')|𝓘}` with the two arm means and optional inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Estimator,
    pub k: SiteId,
    pub k_prime: SiteId,
    pub subset: SiteSet,
    #[serde(with = "crate::wire_real::one")]
    pub tau_hat: f64,
    /// `μ̂_{k|𝓘}`.
    #[serde(with = "crate::wire_real::one")]
    pub mu_k: f64,
    /// `μ̂_{k'|𝓘}`.
    #[serde(with = "crate::wire_real::one")]
    pub mu_k_prime: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<Inference>,
}

impl EstimateReport {
    pub fn with_variance(mut self, variance: f64) -> Self {
        self.inference = Some(Inference::from_variance(self.tau_hat, variance));
        self
    }
}

/// Validated access to the payloads a `(k, k', 𝓘)` query touches.
struct Query<'a> {
    subset: Vec<&'a AggregatedData>,
    k: &'a AggregatedData,
    kp: &'a AggregatedData,
    n_total: f64,
}

impl<'a> Query<'a> {
    fn new(ads: &'a [AggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<Self, DacError> {
        let sites = ads.first().map(AggregatedData::sites).ok_or(DacError::UnknownSite(k))?;
        check_query(k, k_prime, subset, sites)?;
        let members: Vec<&AggregatedData> = subset.iter().map(|s| lookup(ads, s)).collect::<Result<_, _>>()?;
        let (ka, kpa) = (lookup(ads, k)?, lookup(ads, k_prime)?);
        if members.iter().chain([&ka, &kpa]).any(|a| a.sites() != sites) {
            return Err(DacError::Inconsistent("payloads disagree on the number of sites".into()));
        }
        let n_total = members.iter().map(|a| a.n).sum::<usize>() as f64;
        Ok(Query { subset: members, k: ka, kp: kpa, n_total })
    }

    fn sum_over_subset(&self, f: impl Fn(&AggregatedData) -> f64) -> f64 {
        numlin::sum(self.subset.iter().map(|a| f(a)))
    }
}

fn mu_from(q: &Query<'_>, arm: &AggregatedData) -> f64 {
    let k = arm.site.index();
    q.sum_over_subset(|a| a.n as f64 * (a.a1[k] + arm.a2[a.site.index()])) / q.n_total
}

/// `μ̂_{k|𝓘} = Σ_{j∈𝓘} n_j (A¹_{jk} + A²_{kj}) / n_𝓘`.
pub fn mu_hat(ads: &[AggregatedData], subset: SiteSet, k: SiteId) -> Result<f64, DacError> {
    let sites = ads.first().map(AggregatedData::sites).ok_or(DacError::UnknownSite(k))?;
    if subset.is_empty() {
        return Err(DacError::EmptySubset);
    }
    if k.index() >= sites {
        return Err(DacError::UnknownSite(k));
    }
    let members: Vec<&AggregatedData> = subset.iter().map(|s| lookup(ads, s)).collect::<Result<_, _>>()?;
    let arm = lookup(ads, k)?;
    let n_total = members.iter().map(|a| a.n).sum::<usize>() as f64;
    let q = Query { subset: members, k: arm, kp: arm, n_total };
    Ok(mu_from(&q, arm))
}

fn report(method: Estimator, q: &Query<'_>, subset: SiteSet, tau_hat: f64, mus: (f64, f64)) -> EstimateReport {
    EstimateReport {
        method,
        k: q.k.site,
        k_prime: q.kp.site,
        subset,
        tau_hat,
        mu_k: mus.0,
        mu_k_prime: mus.1,
        inference: None,
    }
}

fn dac_point(q: &Query<'_>) -> f64 {
    let (k, kp) = (q.k.site.index(), q.kp.site.index());
    q.sum_over_subset(|a| {
        let j = a.site.index();
        a.n as f64 * ((a.a1[kp] - a.a1[k]) + (q.kp.a2[j] - q.k.a2[j]))
    }) / q.n_total
}

/// DAC point estimate.
pub fn dac_tau(ads: &[AggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<EstimateReport, DacError> {
    let q = Query::new(ads, subset, k, k_prime)?;
    let mus = (mu_from(&q, q.k), mu_from(&q, q.kp));
    Ok(report(Estimator::Dac, &q, subset, dac_point(&q), mus))
}

/// Outcome-regression part of the second moment: `Σ A³ − 2τ Σ n ΔA¹ + n_𝓘 τ²`.
fn regression_moment(q: &Query<'_>, tau: f64) -> f64 {
    let (k, kp) = (q.k.site.index(), q.kp.site.index());
    let a3 = q.sum_over_subset(|a| a.a3[k][kp]);
    let da1 = q.sum_over_subset(|a| a.n as f64 * (a.a1[kp] - a.a1[k]));
    a3 - 2.0 * tau * da1 + q.n_total * tau * tau
}

/// Influence-function variance of the DAC estimate, assembled from A¹–A⁵.
pub fn dac_var(ads: &[AggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId, tau_hat: f64) -> Result<f64, DacError> {
    let q = Query::new(ads, subset, k, k_prime)?;
    let (ki, kpi) = (k.index(), k_prime.index());
    let members: Vec<usize> = subset.iter().map(SiteId::index).collect();
    let a4 = |arm: &AggregatedData| numlin::sum(members.iter().flat_map(|&l| members.iter().map(move |&h| arm.a4[l][h])));
    let a5 = |arm: &AggregatedData, other: usize| numlin::sum(members.iter().map(|&l| arm.a5[other][l]));
    let a2 = |arm: &AggregatedData| q.sum_over_subset(|a| a.n as f64 * arm.a2[a.site.index()]);

    let mut total = regression_moment(&q, tau_hat) + a4(q.kp) + a4(q.k);
    if subset.contains(k_prime) {
        total += 2.0 * a5(q.kp, ki) - 2.0 * tau_hat * a2(q.kp);
    }
    if subset.contains(k) {
        total += 2.0 * a5(q.k, kpi) + 2.0 * tau_hat * a2(q.k);
    }
    Ok(total / (q.n_total * q.n_total))
}

/// DAC estimate with influence-function inference.
pub fn dac_estimate(ads: &[AggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<EstimateReport, DacError> {
    let r = dac_tau(ads, subset, k, k_prime)?;
    let v = dac_var(ads, subset, k, k_prime, r.tau_hat)?;
    Ok(r.with_variance(v))
}

/// Outcome-regression-only point estimate.
pub fn dor_tau(ads: &[AggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<EstimateReport, DacError> {
    let q = Query::new(ads, subset, k, k_prime)?;
    let mean = |m: usize| q.sum_over_subset(|a| a.n as f64 * a.a1[m]) / q.n_total;
    let tau = q.sum_over_subset(|a| a.n as f64 * (a.a1[k_prime.index()] - a.a1[k.index()])) / q.n_total;
    Ok(report(Estimator::Dor, &q, subset, tau, (mean(k.index()), mean(k_prime.index()))))
}

/// Plug-in variance of the regression-only estimate, treating the fitted
/// models as fixed.
pub fn dor_var(ads: &[AggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId, tau_hat: f64) -> Result<f64, DacError> {
    let q = Query::new(ads, subset, k, k_prime)?;
    Ok(regression_moment(&q, tau_hat) / (q.n_total * q.n_total))
}

pub fn dor_estimate(ads: &[AggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<EstimateReport, DacError> {
    let r = dor_tau(ads, subset, k, k_prime)?;
    let v = dor_var(ads, subset, k, k_prime, r.tau_hat)?;
    Ok(r.with_variance(v))
}

/// Calibration-weighting-only point estimate from the B² entries.
pub fn dcw_tau(ads: &[AggregatedData], subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<EstimateReport, DacError> {
    let q = Query::new(ads, subset, k, k_prime)?;
    let mean = |arm: &AggregatedData| q.sum_over_subset(|a| a.n as f64 * arm.b2[a.site.index()]) / q.n_total;
    let tau = q.sum_over_subset(|a| {
        let j = a.site.index();
        a.n as f64 * (q.kp.b2[j] - q.k.b2[j])
    }) / q.n_total;
    Ok(report(Estimator::Dcw, &q, subset, tau, (mean(q.k), mean(q.kp))))
}
