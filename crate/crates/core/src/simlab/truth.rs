//! Monte Carlo truth for `τ_{(k,k')|𝓘} = E[Y(k') − Y(k) | D ∈ 𝓘]`.
//!
//! Both potential-outcome means are known functions of `X`, and membership
//! probabilities are known too, so each draw of `X` contributes
//! `P(D∈𝓘|X)·m_k(X)` rather than a sampled `D` (same expectation, smaller
//! error). One pass yields every subset and arm.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{draw_covariates, ScenarioSpec, SITES};
use super::SimError;
use crate::data::{SiteId, SiteSet};

/// Default number of covariate draws.
pub const DEFAULT_TRUTH_DRAWS: u64 = 10_000_000;
/// Seed of the oracle's random stream; independent of any study seed.
pub const ORACLE_SEED: u64 = 0x7275_7468;
const BATCHES: u64 = 100;
const CHUNK: u64 = 1 << 13;

/// Every `E[m_k(X) | D∈𝓘]`, with batch-means standard errors for each contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub dgp_hash: String,
    pub draws: u64,
    /// `arm_means[mask − 1][k]`.
    pub arm_means: Vec<Vec<f64>>,
    /// Per-batch arm means, kept for standard errors.
    batch_means: Vec<Vec<Vec<f64>>>,
}

/// A truth value and its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl TruthTable {
    pub fn tau(&self, subset: SiteSet, k: SiteId, k_prime: SiteId) -> Result<TruthEstimate, SimError> {
        let idx = (subset.mask() as usize).checked_sub(1).filter(|&i| i < self.arm_means.len());
        let idx = idx.ok_or_else(|| SimError::Config(format!("subset {subset} outside a {SITES}-site network")))?;
        if k.index() >= SITES || k_prime.index() >= SITES {
            return Err(SimError::Config("comparator outside the network".into()));
        }
        let means = &self.arm_means[idx];
        let value = means[k_prime.index()] - means[k.index()];
        let b = self.batch_means.len() as f64;
        let diffs: Vec<f64> = self.batch_means.iter().map(|m| m[idx][k_prime.index()] - m[idx][k.index()]).collect();
        let mean = diffs.iter().sum::<f64>() / b;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (b - 1.0);
        Ok(TruthEstimate { value, std_error: (var / b).sqrt() })
    }
}

/// Sums for one chunk: `Σ π_𝓘` and `Σ π_𝓘 m_k` for every subset.
#[derive(Clone)]
struct Sums {
    weight: Vec<f64>,
    weighted: Vec<Vec<f64>>,
}

impl Sums {
    fn zero() -> Self {
        let subsets = (1 << SITES) - 1;
        Sums { weight: vec![0.0; subsets], weighted: vec![vec![0.0; SITES]; subsets] }
    }

    fn add(&mut self, other: &Sums) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (ra, rb) in self.weighted.iter_mut().zip(&other.weighted) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
    }

    fn means(&self) -> Vec<Vec<f64>> {
        self.weighted.iter().zip(&self.weight).map(|(row, w)| row.iter().map(|v| v / w).collect()).collect()
    }
}

fn chunk_sums(spec: &ScenarioSpec, chol: &[[f64; 3]; 3], chunk: u64, draws: u64) -> Sums {
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    rng.set_stream(chunk);
    let mut sums = Sums::zero();
    for _ in 0..draws {
        let x = draw_covariates(&mut rng, &spec.covariate_mean, chol);
        let p = spec.membership_probabilities(&x);
        let m: [f64; SITES] = std::array::from_fn(|k| spec.outcome_mean(k, &x));
        for mask in 1..(1usize << SITES) {
            let pi: f64 = (0..SITES).filter(|s| mask >> s & 1 == 1).map(|s| p[s]).sum();
            sums.weight[mask - 1] += pi;
            for k in 0..SITES {
                sums.weighted[mask - 1][k] += pi * m[k];
            }
        }
    }
    sums
}

/// Computes the table from scratch. Chunks run in parallel; each has its own
/// random stream and results are combined in chunk order, so the output does
/// not depend on the number of workers.
pub fn compute_truth_table(spec: &ScenarioSpec, draws: u64) -> Result<TruthTable, SimError> {
    if draws < BATCHES * CHUNK {
        return Err(SimError::Config(format!("at least {} truth draws are required", BATCHES * CHUNK)));
    }
    let chol = spec.cholesky()?;
    let chunks = draws.div_ceil(CHUNK);
    let per_chunk: Vec<Sums> = (0..chunks)
        .into_par_iter()
        .map(|c| chunk_sums(spec, &chol, c, CHUNK.min(draws - c * CHUNK)))
        .collect();
    let per_batch = chunks.div_ceil(BATCHES) as usize;
    let mut total = Sums::zero();
    let mut batch_means = Vec::new();
    for batch in per_chunk.chunks(per_batch) {
        let mut b = Sums::zero();
        for s in batch {
            b.add(s);
        }
        total.add(&b);
        batch_means.push(b.means());
    }
    Ok(TruthTable { dgp_hash: format!("{:016x}", spec.dgp_hash()), draws, arm_means: total.means(), batch_means })
}

type CacheKey = (u64, u64);

fn memory_cache() -> &'static Mutex<HashMap<CacheKey, Arc<TruthTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<TruthTable>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Truth tables keyed by the DGP hash and draw count, held in memory and
/// optionally persisted as `truth-<hash>-<draws>.json` under a directory.
#[derive(Debug, Clone, Default)]
pub struct TruthCache {
    dir: Option<PathBuf>,
}

impl TruthCache {
    pub fn in_memory() -> Self {
        TruthCache { dir: None }
    }

    pub fn on_disk(dir: impl AsRef<Path>) -> Self {
        TruthCache { dir: Some(dir.as_ref().to_path_buf()) }
    }

    fn path(&self, spec: &ScenarioSpec, draws: u64) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("truth-{:016x}-{draws}.json", spec.dgp_hash())))
    }

    pub fn get(&self, spec: &ScenarioSpec, draws: u64) -> Result<Arc<TruthTable>, SimError> {
        let key = (spec.dgp_hash(), draws);
        let path = self.path(spec, draws);
        let cached = memory_cache().lock().expect("truth cache poisoned").get(&key).cloned();
        let table = match cached {
            Some(t) => t,
            None => {
                let from_disk = path
                    .as_ref()
                    .and_then(|p| std::fs::read(p).ok())
                    .and_then(|bytes| serde_json::from_slice::<TruthTable>(&bytes).ok())
                    .filter(|t| t.dgp_hash == format!("{:016x}", key.0) && t.draws == draws);
                let t = Arc::new(match from_disk {
                    Some(t) => t,
                    None => compute_truth_table(spec, draws)?,
                });
                memory_cache().lock().expect("truth cache poisoned").insert(key, t.clone());
                t
            }
        };
        if let Some(p) = path.filter(|p| !p.exists()) {
            Self::persist(&p, &table)?;
        }
        Ok(table)
    }

    fn persist(path: &Path, table: &TruthTable) -> Result<(), SimError> {
        let io = |e: std::io::Error| SimError::Io(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let json = serde_json::to_vec(table).map_err(|e| SimError::Io(e.to_string()))?;
        std::fs::write(path, json).map_err(io)
    }
}

/// `τ_{(k,k')|𝓘}` for one cell, via the in-memory cache.
pub fn true_value_oracle(
    spec: &ScenarioSpec,
    subset: SiteSet,
    k: SiteId,
    k_prime: SiteId,
    draws: u64,
) -> Result<TruthEstimate, SimError> {
    if draws < 1_000_000 {
        return Err(SimError::Config("the truth oracle needs at least 10^6 draws".into()));
    }
    TruthCache::in_memory().get(spec, draws)?.tau(subset, k, k_prime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::Scenario;

    #[test]
    fn linear_overall_truth_is_closed_form() {
        // With linear means, the overall contrast is the mean difference at E[X].
        let spec = ScenarioSpec::new(Scenario::I, 2400);
        let t = true_value_oracle(&spec, SiteSet::all(4), SiteId(0), SiteId(3), 1_000_000).unwrap();
        let exact = 9.0 + 0.6 * (0.6 + 0.9 + 1.3);
        assert!((t.value - exact).abs() < 5.0 * t.std_error + 1e-3, "{} vs {exact}", t.value);
        assert!(t.std_error < 0.01);
        let zero = true_value_oracle(&spec, SiteSet::from_sites([1, 2]), SiteId(2), SiteId(2), 1_000_000).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn quadratic_overall_truth_is_closed_form() {
        // E[X_j²] = var_j + 0.36.
        let spec = ScenarioSpec::new(Scenario::Ii, 2400);
        let t = true_value_oracle(&spec, SiteSet::all(4), SiteId(0), SiteId(3), 1_000_000).unwrap();
        let exact = 3.5 + 2.5 * 1.0 + 3.5 * 1.36 + 2.5 * 1.8;
        assert!((t.value - exact).abs() < 5.0 * t.std_error + 1e-3, "{} vs {exact}", t.value);
    }

    #[test]
    fn disk_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ScenarioSpec::new(Scenario::Iii, 800);
        let draws = 1_000_000;
        let cache = TruthCache::on_disk(dir.path());
        let a = cache.get(&spec, draws).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let reread: TruthTable = serde_json::from_slice(&std::fs::read(files[0].as_ref().unwrap().path()).unwrap()).unwrap();
        assert_eq!(&reread, a.as_ref());
    }
}
