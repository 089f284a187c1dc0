//! Four-site data-generating processes.
//!
//! Covariates are trivariate normal. Site membership follows a multinomial
//! logit that is linear in `X` (first strategy) or in `X²` (second strategy);
//! outcomes are normal with a mean linear in `X` (first) or in `X²` (second)
//! and variance `0.04·|X₂|^0.4`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::data::SiteDataset;
use crate::numlin::Matrix;

pub const SITES: usize = 4;
pub const COVARIATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    I,
    Ii,
    Iii,
    Iv,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::I, Scenario::Ii, Scenario::Iii, Scenario::Iv];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::I => "i",
            Scenario::Ii => "ii",
            Scenario::Iii => "iii",
            Scenario::Iv => "iv",
        }
    }

    /// Site membership uses squared covariates.
    pub fn quadratic_membership(self) -> bool {
        matches!(self, Scenario::Iii | Scenario::Iv)
    }

    /// Outcome means use squared covariates.
    pub fn quadratic_outcome(self) -> bool {
        matches!(self, Scenario::Ii | Scenario::Iv)
    }
}

impl std::str::FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SimError::Config(format!("unknown scenario {s:?}; expected i, ii, iii or iv")))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full DGP description. Every coefficient is explicit so that a study
/// config records exactly what was simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Total sample size across the four sites.
    pub n_total: usize,
    /// Linear membership logit coefficients, `zeta[k] = (ζ_k1, ζ_k2, ζ_k3)`.
    pub zeta: [[f64; 3]; SITES],
    /// Quadratic membership logit, `nu[k] = (ν_k0, ν_k1, ν_k2, ν_k3)`.
    pub nu: [[f64; 4]; SITES],
    /// Linear outcome means, `theta[k] = (θ_k0, …, θ_k3)`.
    pub theta: [[f64; 4]; SITES],
    /// Quadratic outcome means, `psi[k] = (ψ_k0, …, ψ_k3)`.
    pub psi: [[f64; 4]; SITES],
    pub covariate_mean: [f64; COVARIATES],
    pub covariate_variance: [f64; COVARIATES],
    /// Correlations `(ρ_12, ρ_13, ρ_23)`.
    pub correlation: [f64; 3],
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, n_total: usize) -> Self {
        ScenarioSpec {
            scenario,
            n_total,
            zeta: [[0.2, -0.2, -0.1], [0.36, -0.28, -0.16], [0.5, -0.4, -0.2], [0.65, -0.5, -0.25]],
            nu: [[-0.4, 1.6, 1.0, 0.25], [-0.3, 1.4, 0.7, 0.5], [-0.5, 1.55, 1.1, 0.3], [-0.1, 1.5, 0.6, 0.4]],
            theta: [[1.0, 0.3, 0.2, 0.2], [4.0, 0.5, 0.5, 0.6], [7.0, 0.7, 0.8, 1.0], [10.0, 0.9, 1.1, 1.5]],
            psi: [[-0.5, -1.0, -1.0, -0.5], [0.2, 0.5, 1.0, 0.5], [1.5, 1.0, 2.0, 1.0], [3.0, 1.5, 2.5, 2.0]],
            covariate_mean: [0.6; 3],
            covariate_variance: [0.64, 1.0, 1.44],
            correlation: [0.001, 0.0, 0.001],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_total < 100 {
            return Err(SimError::Config(format!("total sample size {} below 100", self.n_total)));
        }
        self.cholesky().map(|_| ())
    }

    /// Lower Cholesky factor of the covariate covariance.
    pub(crate) fn cholesky(&self) -> Result<[[f64; 3]; 3], SimError> {
        let sd = self.covariate_variance.map(f64::sqrt);
        let [r12, r13, r23] = self.correlation;
        let corr = [[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]];
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let cov = corr[i][j] * sd[i] * sd[j];
                let s = cov - (0..j).map(|m| l[i][m] * l[j][m]).sum::<f64>();
                if i == j {
                    if !(s > 0.0) {
                        return Err(SimError::Config("covariate covariance is not positive definite".into()));
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Ok(l)
    }

    /// `P(D = k | x)` for every site.
    pub fn membership_probabilities(&self, x: &[f64; 3]) -> [f64; SITES] {
        let logits: [f64; SITES] = std::array::from_fn(|k| {
            if self.scenario.quadratic_membership() {
                let v = &self.nu[k];
                v[0] + v[1] * x[0] * x[0] + v[2] * x[1] * x[1] + v[3] * x[2] * x[2]
            } else {
                let z = &self.zeta[k];
                z[0] * x[0] + z[1] * x[1] + z[2] * x[2]
            }
        });
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.map(|l| (l - max).exp());
        let total: f64 = e.iter().sum();
        e.map(|v| v / total)
    }

    /// `E[Y | X = x, D = k]`, which is also the potential-outcome mean under treatment `k`.
    pub fn outcome_mean(&self, k: usize, x: &[f64; 3]) -> f64 {
        if self.scenario.quadratic_outcome() {
            let c = &self.psi[k];
            c[0] + c[1] * x[0] * x[0] + c[2] * x[1] * x[1] + c[3] * x[2] * x[2]
        } else {
            let c = &self.theta[k];
            c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[2]
        }
    }

    pub fn outcome_sd(&self, x: &[f64; 3]) -> f64 {
        (0.04 * x[1].abs().powf(0.4)).sqrt()
    }

    /// 64-bit FNV-1a digest of the DGP parameters, excluding the sample size.
    pub fn dgp_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.scenario.name().as_bytes());
        let reals = self
            .zeta
            .iter()
            .flatten()
            .chain(self.nu.iter().flatten())
            .chain(self.theta.iter().flatten())
            .chain(self.psi.iter().flatten())
            .chain(&self.covariate_mean)
            .chain(&self.covariate_variance)
            .chain(&self.correlation);
        for x in reals {
            feed(&x.to_bits().to_le_bytes());
        }
        h
    }
}

pub(crate) fn draw_covariates(rng: &mut impl Rng, mean: &[f64; 3], chol: &[[f64; 3]; 3]) -> [f64; 3] {
    let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    std::array::from_fn(|i| mean[i] + (0..=i).map(|j| chol[i][j] * z[j]).sum::<f64>())
}

/// Index drawn from a categorical distribution by inversion.
pub(crate) fn draw_site(rng: &mut impl Rng, probs: &[f64; SITES]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    SITES - 1
}

/// Draws `n_total` subjects and splits them by site. Deterministic in `seed`.
pub fn gen_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Vec<SiteDataset>, SimError> {
    spec.validate()?;
    let chol = spec.cholesky()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); SITES];
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); SITES];
    for _ in 0..spec.n_total {
        let x = draw_covariates(&mut rng, &spec.covariate_mean, &chol);
        let d = draw_site(&mut rng, &spec.membership_probabilities(&x));
        let z: f64 = rng.sample(StandardNormal);
        ys[d].push(spec.outcome_mean(d, &x) + spec.outcome_sd(&x) * z);
        xs[d].extend_from_slice(&x);
    }
    ys.into_iter()
        .zip(xs)
        .enumerate()
        .map(|(k, (y, x))| {
            if y.len() <= COVARIATES + 1 {
                return Err(SimError::Data(format!("site {} drew only {} subjects", k + 1, y.len())));
            }
            let m = Matrix::from_row_major(y.len(), COVARIATES, x).map_err(|e| SimError::Data(e.to_string()))?;
            SiteDataset::new(y, m).map_err(|e| SimError::Data(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let spec = ScenarioSpec::new(Scenario::Iii, 400);
        assert_eq!(gen_scenario(&spec, 11).unwrap(), gen_scenario(&spec, 11).unwrap());
        assert_ne!(gen_scenario(&spec, 11).unwrap(), gen_scenario(&spec, 12).unwrap());
    }

    /// Expected membership shares by Monte Carlo over `X`.
    fn expected_shares(spec: &ScenarioSpec) -> [f64; SITES] {
        let chol = spec.cholesky().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut acc = [0.0; SITES];
        let m = 400_000;
        for _ in 0..m {
            let p = spec.membership_probabilities(&draw_covariates(&mut rng, &spec.covariate_mean, &chol));
            for k in 0..SITES {
                acc[k] += p[k] / m as f64;
            }
        }
        acc
    }

    #[test]
    fn site_shares_and_covariate_means() {
        for scenario in Scenario::ALL {
            let spec = ScenarioSpec::new(scenario, 4000);
            let expected = expected_shares(&spec);
            for seed in 0..3 {
                let sites = gen_scenario(&spec, seed).unwrap();
                let total: usize = sites.iter().map(SiteDataset::n).sum();
                assert_eq!(total, 4000);
                for (k, s) in sites.iter().enumerate() {
                    let share = s.n() as f64 / 4000.0;
                    // Four binomial standard deviations around the model share.
                    let sd = (expected[k] * (1.0 - expected[k]) / 4000.0).sqrt();
                    assert!((share - expected[k]).abs() < 4.0 * sd, "{scenario}: share {share} vs {}", expected[k]);
                    if !scenario.quadratic_membership() {
                        assert!((0.23..=0.27).contains(&share), "{scenario}: share {share}");
                    }
                }
                for c in 0..3 {
                    let sum: f64 = sites.iter().map(|s| s.x().column(c).iter().sum::<f64>()).sum();
                    assert!((sum / 4000.0 - 0.6).abs() < 0.05);
                }
            }
        }
    }

    #[test]
    fn model_shares_are_near_a_quarter() {
        for scenario in [Scenario::I, Scenario::Iii] {
            let e = expected_shares(&ScenarioSpec::new(scenario, 4000));
            assert!(e.iter().all(|p| (0.235..=0.275).contains(p)), "{scenario}: {e:?}");
        }
    }

    #[test]
    fn cholesky_reproduces_covariance() {
        let spec = ScenarioSpec::new(Scenario::I, 100);
        let l = spec.cholesky().unwrap();
        let cov = |i: usize, j: usize| (0..3).map(|m| l[i][m] * l[j][m]).sum::<f64>();
        assert!((cov(0, 0) - 0.64).abs() < 1e-15);
        assert!((cov(2, 2) - 1.44).abs() < 1e-14);
        assert!((cov(0, 1) - 0.001 * 0.8).abs() < 1e-15);
        assert!(cov(0, 2).abs() < 1e-15);
    }

    #[test]
    fn rejects_small_samples() {
        assert!(ScenarioSpec::new(Scenario::I, 99).validate().is_err());
    }

    #[test]
    fn hash_ignores_sample_size_only() {
        let a = ScenarioSpec::new(Scenario::I, 800);
        assert_eq!(a.dgp_hash(), ScenarioSpec::new(Scenario::I, 4000).dgp_hash());
        assert_ne!(a.dgp_hash(), ScenarioSpec::new(Scenario::Iii, 800).dgp_hash());
    }
}
