//! The DAC estimator family built from per-site aggregated data.
//!
//! Index convention: an [`AggregatedData`] is produced by one site `j` from its
//! own rows. `a2[l]` is site j's residual correction toward target population
//! `l`; `a1[k]` is the mean of model `k` over site j's covariates.

mod estimate;
mod pooled;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use estimate::{
    dac_estimate, dac_tau, dac_var, dcw_tau, dor_estimate, dor_tau, dor_var, mu_hat, Estimator, EstimateReport,
    Inference, NORMAL_QUANTILE_975,
};
pub use pooled::{pooled_eif_variance, pooled_oracle, PooledInputs};

use crate::calib::CalibrationResult;
use crate::data::{SiteDataset, SiteId, SiteSet};
use crate::numlin;
use crate::outcome::{FittedOutcomeModel, OutcomeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DacError {
    #[error("site {0} is not covered by the aggregated data")]
    UnknownSite(SiteId),
    #[error("subset is empty")]
    EmptySubset,
    #[error("comparators must differ (got site {0} twice)")]
    SameComparators(SiteId),
    #[error("no fitted outcome model for site {0}")]
    MissingModel(SiteId),
    #[error("no calibration weights toward site {0}")]
    MissingWeights(SiteId),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
}

/// Everything site `j` sends in round two of the nonparametric protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatedData {
    pub site: SiteId,
    pub n: usize,
    /// `a1[k] = (1/n_j) Σ m̂_k(X_i)`.
    #[serde(with = "crate::wire_real::vec")]
    pub a1: Vec<f64>,
    /// `a2[l] = (1/n_l) Σ ŵ_lj(X_i)(Y_i − m̂_j(X_i))`.
    #[serde(with = "crate::wire_real::vec")]
    pub a2: Vec<f64>,
    /// `a3[k][k'] = Σ (m̂_k − m̂_k')²`.
    #[serde(with = "crate::wire_real::nested")]
    pub a3: Vec<Vec<f64>>,
    /// `a4[l][h] = Σ ŵ_lj ŵ_hj (Y − m̂_j)²`.
    #[serde(with = "crate::wire_real::nested")]
    pub a4: Vec<Vec<f64>>,
    /// `a5[k'][l] = Σ ŵ_lj (m̂_j − m̂_k')(Y − m̂_j)`.
    #[serde(with = "crate::wire_real::nested")]
    pub a5: Vec<Vec<f64>>,
    /// `b2[l] = (1/n_l) Σ ŵ_lj Y_i`, the calibration-weighted outcome mean.
    #[serde(with = "crate::wire_real::vec")]
    pub b2: Vec<f64>,
}

impl AggregatedData {
    /// Number of sites in the network.
    pub fn sites(&self) -> usize {
        self.a1.len()
    }

    pub(crate) fn validate(&self) -> Result<(), DacError> {
        let k = self.sites();
        let square = |m: &Vec<Vec<f64>>| m.len() == k && m.iter().all(|r| r.len() == k);
        if self.a2.len() != k || self.b2.len() != k || !square(&self.a3) || !square(&self.a4) || !square(&self.a5) {
            return Err(DacError::Inconsistent(format!("site {} payload has ragged dimensions", self.site)));
        }
        if self.site.index() >= k || self.n == 0 {
            return Err(DacError::Inconsistent(format!("site {} payload has invalid header", self.site)));
        }
        Ok(())
    }
}

/// Computes site `site`'s aggregated data.
///
/// `models[k]` is site k's fitted model, `weights[l]` the normalized weights of
/// this site's rows toward site l (uniform in the site's own slot), and
/// `sizes[l] = n_l`. Rows of `data` must be in the order the weights refer to.
pub fn site_aggregates(
    site: SiteId,
    data: &SiteDataset,
    models: &[FittedOutcomeModel],
    weights: &[CalibrationResult],
    sizes: &[usize],
) -> Result<AggregatedData, DacError> {
    let k = sizes.len();
    if site.index() >= k {
        return Err(DacError::UnknownSite(site));
    }
    if sizes[site.index()] != data.n() {
        return Err(DacError::Inconsistent(format!("n_{site} is {} but the data has {} rows", sizes[site.index()], data.n())));
    }
    for s in 0..k {
        match models.get(s) {
            Some(m) if m.site == SiteId(s) => {}
            _ => return Err(DacError::MissingModel(SiteId(s))),
        }
        match weights.get(s) {
            Some(w) if w.weights.len() == data.n() => {}
            _ => return Err(DacError::MissingWeights(SiteId(s))),
        }
    }
    if models.len() != k || weights.len() != k {
        return Err(DacError::Inconsistent("more models or weights than sites".into()));
    }

    let n = data.n();
    let preds: Vec<Vec<f64>> = models.iter().map(|m| m.predict(data.x())).collect::<Result<_, _>>()?;
    let own = &preds[site.index()];
    let resid: Vec<f64> = data.y().iter().zip(own).map(|(y, m)| y - m).collect();
    // Unnormalized weights: ŵ_lj(X_i) sums to n_l over the site's rows.
    let scaled: Vec<Vec<f64>> = (0..k).map(|l| weights[l].scaled(sizes[l])).collect();

    let a1 = preds.iter().map(|p| numlin::sum(p.iter().copied()) / n as f64).collect();
    let a2 = (0..k).map(|l| numlin::sum((0..n).map(|i| weights[l].weights[i] * resid[i]))).collect();
    let b2 = (0..k).map(|l| numlin::sum((0..n).map(|i| weights[l].weights[i] * data.y()[i]))).collect();
    let a3 = (0..k)
        .map(|a| (0..k).map(|b| numlin::sum((0..n).map(|i| (preds[a][i] - preds[b][i]).powi(2)))).collect())
        .collect();
    let a4 = (0..k)
        .map(|l| (0..k).map(|h| numlin::sum((0..n).map(|i| scaled[l][i] * scaled[h][i] * resid[i] * resid[i]))).collect())
        .collect();
    let a5 = (0..k)
        .map(|kp| (0..k).map(|l| numlin::sum((0..n).map(|i| scaled[l][i] * (own[i] - preds[kp][i]) * resid[i]))).collect())
        .collect();
    Ok(AggregatedData { site, n, a1, a2, a3, a4, a5, b2 })
}

/// Looks up the payload of `site`, checking that all payloads agree on `K`.
pub(crate) fn lookup<'a>(ads: &'a [AggregatedData], site: SiteId) -> Result<&'a AggregatedData, DacError> {
    let ad = ads.iter().find(|a| a.site == site).ok_or(DacError::UnknownSite(site))?;
    ad.validate()?;
    Ok(ad)
}

/// Shared precondition checks for every `(k, k', 𝓘)` query.
pub(crate) fn check_query(k: SiteId, k_prime: SiteId, subset: SiteSet, sites: usize) -> Result<(), DacError> {
    if subset.is_empty() {
        return Err(DacError::EmptySubset);
    }
    if k == k_prime {
        return Err(DacError::SameComparators(k));
    }
    for s in [k, k_prime].into_iter().chain(subset.iter()) {
        if s.index() >= sites {
            return Err(DacError::UnknownSite(s));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testkit {
    //! Seeded multi-site instances shared by the estimator tests.

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use crate::calib::{calibrate_to_targets, CalibrationResult};
    use crate::data::{SiteDataset, SiteId};
    use crate::numlin::{Matrix, NewtonConfig};
    use crate::outcome::{BasisSpec, FittedOutcomeModel};

    use super::{site_aggregates, AggregatedData};

    pub struct Instance {
        pub sites: Vec<SiteDataset>,
        pub models: Vec<FittedOutcomeModel>,
        /// `weights[j][l]`: site j's rows toward target l.
        pub weights: Vec<Vec<CalibrationResult>>,
        pub ads: Vec<AggregatedData>,
    }

    impl Instance {
        pub fn sizes(&self) -> Vec<usize> {
            self.sites.iter().map(|s| s.n()).collect()
        }
    }

    pub fn instance(seed: u64, k: usize, n: usize, spline: bool) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let sites: Vec<SiteDataset> = (0..k)
            .map(|s| {
                let shift = 0.3 * s as f64;
                let rows: Vec<(f64, Vec<f64>)> = (0..n)
                    .map(|_| {
                        let a = shift + rng.random_range(-1.0..1.0);
                        let b = rng.random_range(-1.0..1.0) - 0.5 * shift;
                        let y = s as f64 + a - 0.5 * b * b + a * b + noise.sample(&mut rng);
                        (y, vec![a, b])
                    })
                    .collect();
                SiteDataset::from_rows(&rows).unwrap()
            })
            .collect();
        let spec = if spline { BasisSpec::cubic_spline(2) } else { BasisSpec::Linear };
        let models: Vec<FittedOutcomeModel> =
            sites.iter().enumerate().map(|(s, d)| FittedOutcomeModel::fit(&spec, d, SiteId(s)).unwrap()).collect();
        let gbars: Vec<Vec<f64>> = sites.iter().map(|d| d.covariate_means(&[0, 1])).collect();
        let weights: Vec<Vec<CalibrationResult>> = sites
            .iter()
            .enumerate()
            .map(|(s, d)| calibrate_to_targets(d.x(), SiteId(s), &gbars, &NewtonConfig::default()).unwrap())
            .collect();
        let sizes: Vec<usize> = sites.iter().map(|d| d.n()).collect();
        let ads = sites
            .iter()
            .enumerate()
            .map(|(s, d)| site_aggregates(SiteId(s), d, &models, &weights[s], &sizes).unwrap())
            .collect();
        Instance { sites, models, weights, ads }
    }

    /// Two sites, two rows each, identical covariates, `Y ≡ 1` and `Y ≡ 3`.
    pub fn constant_toy() -> Instance {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let sites = vec![
            SiteDataset::new(vec![1.0, 1.0], x.clone()).unwrap(),
            SiteDataset::new(vec![3.0, 3.0], x).unwrap(),
        ];
        let models: Vec<FittedOutcomeModel> = sites
            .iter()
            .enumerate()
            .map(|(s, d)| FittedOutcomeModel::fit(&BasisSpec::Linear, d, SiteId(s)).unwrap())
            .collect();
        let gbars: Vec<Vec<f64>> = sites.iter().map(|d| d.covariate_means(&[0])).collect();
        let weights: Vec<Vec<CalibrationResult>> = sites
            .iter()
            .enumerate()
            .map(|(s, d)| calibrate_to_targets(d.x(), SiteId(s), &gbars, &NewtonConfig::default()).unwrap())
            .collect();
        let ads = sites
            .iter()
            .enumerate()
            .map(|(s, d)| site_aggregates(SiteId(s), d, &models, &weights[s], &[2, 2]).unwrap())
            .collect();
        Instance { sites, models, weights, ads }
    }
}

#[cfg(test)]
mod tests {
    use super::testkit::*;
    use super::*;

    /// Straight loops over the raw definitions with unnormalized weights.
    fn loop_aggregates(inst: &Instance, j: usize) -> AggregatedData {
        let d = &inst.sites[j];
        let k = inst.sites.len();
        let sizes = inst.sizes();
        let m = |s: usize, i: usize| inst.models[s].predict(&d.x().select_rows(&[i])).unwrap()[0];
        let w = |l: usize, i: usize| inst.weights[j][l].weights[i] * sizes[l] as f64;
        let r = |i: usize| d.y()[i] - m(j, i);
        let mut out = AggregatedData {
            site: SiteId(j),
            n: d.n(),
            a1: vec![0.0; k],
            a2: vec![0.0; k],
            a3: vec![vec![0.0; k]; k],
            a4: vec![vec![0.0; k]; k],
            a5: vec![vec![0.0; k]; k],
            b2: vec![0.0; k],
        };
        for i in 0..d.n() {
            for a in 0..k {
                out.a1[a] += m(a, i) / d.n() as f64;
                out.a2[a] += w(a, i) * r(i) / sizes[a] as f64;
                out.b2[a] += w(a, i) * d.y()[i] / sizes[a] as f64;
                for b in 0..k {
                    out.a3[a][b] += (m(a, i) - m(b, i)).powi(2);
                    out.a4[a][b] += w(a, i) * w(b, i) * r(i) * r(i);
                    out.a5[a][b] += w(b, i) * (m(j, i) - m(a, i)) * r(i);
                }
            }
        }
        out
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn aggregates_match_straight_loops() {
        let inst = instance(21, 3, 60, false);
        for j in 0..3 {
            let want = loop_aggregates(&inst, j);
            let got = &inst.ads[j];
            let flat = |a: &AggregatedData| {
                let mut v = [a.a1.clone(), a.a2.clone(), a.b2.clone()].concat();
                for m in [&a.a3, &a.a4, &a.a5] {
                    v.extend(m.iter().flatten());
                }
                v
            };
            for (u, v) in flat(got).iter().zip(flat(&want).iter()) {
                assert!(close(*u, *v, 1e-12), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn constant_outcomes_give_zero_residual_terms() {
        let inst = constant_toy();
        for ad in &inst.ads {
            assert!(ad.a2.iter().all(|v| v.abs() < 1e-14), "{:?}", ad.a2);
            assert!(ad.a4.iter().flatten().all(|v| v.abs() < 1e-14), "{:?}", ad.a4);
            assert!(ad.a5.iter().flatten().all(|v| v.abs() < 1e-14), "{:?}", ad.a5);
        }
    }

    #[test]
    fn own_residual_mean_is_zero() {
        let inst = instance(22, 2, 50, true);
        for (j, ad) in inst.ads.iter().enumerate() {
            assert!(ad.a2[j].abs() < 1e-12);
        }
    }

    #[test]
    fn missing_inputs_are_typed() {
        let inst = instance(23, 2, 40, false);
        let sizes = inst.sizes();
        let err = site_aggregates(SiteId(0), &inst.sites[0], &inst.models[..1], &inst.weights[0], &sizes).unwrap_err();
        assert_eq!(err, DacError::MissingModel(SiteId(1)));
        let err = site_aggregates(SiteId(0), &inst.sites[0], &inst.models, &inst.weights[0][..1], &sizes).unwrap_err();
        assert_eq!(err, DacError::MissingWeights(SiteId(1)));
    }

    #[test]
    fn payload_round_trips_through_json() {
        let inst = instance(24, 3, 40, false);
        let text = serde_json::to_string(&inst.ads[1]).unwrap();
        let back: AggregatedData = serde_json::from_str(&text).unwrap();
        assert_eq!(back, inst.ads[1]);
    }
}
