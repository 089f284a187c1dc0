//! Reference computations on pooled individual-level data.
//!
//! These exist to check the aggregated path: they loop over every subject of
//! every site with no knowledge of the aggregated-data layout.

use super::DacError;
use crate::calib::CalibrationResult;
use crate::data::{SiteDataset, SiteId, SiteSet};
use crate::outcome::FittedOutcomeModel;

/// Individual data plus the nuisance fits that were used to build the aggregates.
#[derive(Debug, Clone, Copy)]
pub struct PooledInputs<'a> {
    pub sites: &'a [SiteDataset],
    pub models: &'a [FittedOutcomeModel],
    /// `weights[s][j]`: normalized weights of site s's rows toward site j.
    pub weights: &'a [Vec<CalibrationResult>],
}

/// Per-subject pieces of the influence function for `(k, k', 𝓘)`.
struct Subject {
    in_subset: bool,
    delta_m: f64,
    /// `I(D=k') r W_{k'} − I(D=k) r W_k`.
    correction: f64,
}

fn subjects(inp: &PooledInputs<'_>, subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<(Vec<Subject>, f64), DacError> {
    let sites = inp.sites.len();
    if subset.is_empty() {
        return Err(DacError::EmptySubset);
    }
    for s in [k, k_prime].into_iter().chain(subset.iter()) {
        if s.index() >= sites {
            return Err(DacError::UnknownSite(s));
        }
    }
    if inp.models.len() != sites {
        return Err(DacError::MissingModel(SiteId(inp.models.len().min(sites))));
    }
    if inp.weights.len() != sites || inp.weights.iter().any(|w| w.len() != sites) {
        return Err(DacError::MissingWeights(k));
    }
    let n_subset: f64 = subset.iter().map(|s| inp.sites[s.index()].n() as f64).sum();
    let mut out = Vec::new();
    for (s, data) in inp.sites.iter().enumerate() {
        let mk = inp.models[k.index()].predict(data.x())?;
        let mkp = inp.models[k_prime.index()].predict(data.x())?;
        for i in 0..data.n() {
            let mut correction = 0.0;
            for (arm, pred, sign) in [(k_prime, &mkp, 1.0), (k, &mk, -1.0)] {
                if s == arm.index() {
                    let r = data.y()[i] - pred[i];
                    let mut w = 0.0;
                    for j in subset.iter() {
                        w += inp.weights[s][j.index()].weights[i] * inp.sites[j.index()].n() as f64;
                    }
                    correction += sign * r * w;
                }
            }
            out.push(Subject { in_subset: subset.contains(SiteId(s)), delta_m: mkp[i] - mk[i], correction });
        }
    }
    Ok((out, n_subset))
}

/// `τ̂^pool = (1/n_𝓘) Σ_i {I(D∈𝓘)(m̂_{k'} − m̂_k) + I(D=k')(Y − m̂_{k'})W_{k'} − I(D=k)(Y − m̂_k)W_k}`.
pub fn pooled_oracle(inp: &PooledInputs<'_>, subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<f64, DacError> {
    let (subjects, n) = subjects(inp, subset, k, k_prime)?;
    let mut total = 0.0;
    for s in &subjects {
        if s.in_subset {
            total += s.delta_m;
        }
        total += s.correction;
    }
    Ok(total / n)
}

/// Sample second moment of the estimated influence function, divided by `n_𝓘²`.
pub fn pooled_eif_variance(
    inp: &PooledInputs<'_>,
    subset: SiteSet,
    k: SiteId,
    k_prime: SiteId,
    tau: f64,
) -> Result<f64, DacError> {
    let (subjects, n) = subjects(inp, subset, k, k_prime)?;
    let mut total = 0.0;
    for s in &subjects {
        let phi = if s.in_subset { s.delta_m - tau } else { 0.0 } + s.correction;
        total += phi * phi;
    }
    Ok(total / (n * n))
}
