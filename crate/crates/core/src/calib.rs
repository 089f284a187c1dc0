//! Entropy-balancing calibration weights.
//!
//! Given the features of the source site and the target site's feature
//! means, find exponential-tilt weights `exp(γᵀg_i) / Σ exp(γᵀg_i)` whose
//! weighted feature mean equals the target. The multiplier γ minimizes the
//! convex dual `log Σ_i exp(γᵀ(g_i − ḡ_target))`, whose gradient is exactly
//! the balance residual of the normalized weights.

use thiserror::Error;

use crate::data::SiteId;
use crate::numlin::{self, Matrix, NewtonConfig, NumError, SmoothObjective};

/// Largest admissible balance residual, in the units of each feature.
pub const BALANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature or target value")]
    NonFinite,
    #[error("target mean of site {target} is outside the feature hull of site {source_site} ({reason})")]
    InfeasibleTarget { source_site: SiteId, target: SiteId, reason: String },
    #[error("features of site {source_site} are degenerate: {reason}")]
    DegenerateFeatures { source_site: SiteId, reason: String },
    #[error("weights sum to {sum}, expected 1")]
    WeightsNotNormalized { sum: f64 },
}

/// A calibration solve of `source` toward `target`.
///
/// `features` holds `g(X_i)` for the source rows, without a constant column.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationProblem<'a> {
    pub features: &'a Matrix,
    pub target_mean: &'a [f64],
    pub source_site: SiteId,
    pub target_site: SiteId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Multiplier on the original feature scale; dropped columns carry 0.
    pub gamma: Vec<f64>,
    /// Normalized weights, summing to one over the source rows.
    pub weights: Vec<f64>,
    /// `Σ_i w_i g(X_i) − ḡ_target` per feature.
    pub balance_residual: Vec<f64>,
    pub iterations: usize,
    /// `(Σw)² / Σw²`.
    pub effective_sample_size: f64,
    /// Feature columns removed as constant or collinear.
    pub dropped_columns: Vec<usize>,
}

impl CalibrationResult {
    /// Uniform self-weights with γ = 0.
    pub fn uniform(n: usize, p: usize) -> Self {
        CalibrationResult {
            gamma: vec![0.0; p],
            weights: vec![1.0 / n as f64; n],
            balance_residual: vec![0.0; p],
            iterations: 0,
            effective_sample_size: n as f64,
            dropped_columns: Vec::new(),
        }
    }

    /// Weights rescaled to sum to `target_n`, i.e. `ŵ(X_i)` rather than `ŵ(X_i)/n`.
    pub fn scaled(&self, target_n: usize) -> Vec<f64> {
        self.weights.iter().map(|w| w * target_n as f64).collect()
    }
}

/// Dual objective on standardized, centered-at-target features.
struct EntropyDual {
    centered: Matrix,
}

impl EntropyDual {
    fn log_weights(&self, gamma: &[f64]) -> Vec<f64> {
        self.centered.row_iter().map(|r| numlin::dot(r, gamma)).collect()
    }

    fn probabilities(&self, gamma: &[f64]) -> (Vec<f64>, f64) {
        let s = self.log_weights(gamma);
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        (e.into_iter().map(|v| v / total).collect(), max + total.ln())
    }
}

impl SmoothObjective for EntropyDual {
    fn value(&self, gamma: &[f64]) -> f64 {
        self.probabilities(gamma).1
    }

    fn gradient(&self, gamma: &[f64]) -> Vec<f64> {
        let (p, _) = self.probabilities(gamma);
        let q = self.centered.cols();
        let mut g = vec![0.0; q];
        for (r, pr) in self.centered.row_iter().zip(&p) {
            for c in 0..q {
                g[c] += pr * r[c];
            }
        }
        g
    }

    fn hessian(&self, gamma: &[f64]) -> Matrix {
        let (p, _) = self.probabilities(gamma);
        let grad = self.gradient(gamma);
        let mut h = self.centered.weighted_gram(Some(&p));
        let q = grad.len();
        for a in 0..q {
            for b in 0..q {
                h.set(a, b, h.get(a, b) - grad[a] * grad[b]);
            }
        }
        h
    }
}

pub fn entropy_balance(problem: &CalibrationProblem<'_>) -> Result<CalibrationResult, CalibError> {
    entropy_balance_with(problem, &NewtonConfig::default())
}

pub fn entropy_balance_with(
    problem: &CalibrationProblem<'_>,
    cfg: &NewtonConfig,
) -> Result<CalibrationResult, CalibError> {
    let x = problem.features;
    let (n, p) = (x.rows(), x.cols());
    if problem.target_mean.len() != p {
        return Err(CalibError::DimensionMismatch { expected: p, got: problem.target_mean.len() });
    }
    if problem.target_mean.iter().any(|v| !v.is_finite()) {
        return Err(CalibError::NonFinite);
    }
    if n < p + 1 {
        return Err(CalibError::DegenerateFeatures {
            source_site: problem.source_site,
            reason: format!("{n} rows for {p} features"),
        });
    }

    // Standardize by source mean and SD; constant columns are dropped here,
    // collinear ones by the shared rank policy below.
    let nf = n as f64;
    let means: Vec<f64> = (0..p).map(|c| numlin::sum((0..n).map(|r| x.get(r, c))) / nf).collect();
    let sds: Vec<f64> = (0..p)
        .map(|c| (numlin::sum((0..n).map(|r| (x.get(r, c) - means[c]).powi(2))) / nf).sqrt())
        .collect();
    let varying: Vec<usize> =
        (0..p).filter(|&c| sds[c] > numlin::RANK_TOLERANCE * means[c].abs().max(f64::MIN_POSITIVE)).collect();
    let mut z = Matrix::zeros(n, varying.len());
    for r in 0..n {
        for (j, &c) in varying.iter().enumerate() {
            z.set(r, j, (x.get(r, c) - means[c]) / sds[c]);
        }
    }
    let kept_local = numlin::independent_columns(&z, numlin::RANK_TOLERANCE);
    let kept: Vec<usize> = kept_local.iter().map(|&j| varying[j]).collect();
    let dropped: Vec<usize> = (0..p).filter(|c| !kept.contains(c)).collect();

    let mut centered = Matrix::zeros(n, kept.len());
    for r in 0..n {
        for (j, &c) in kept.iter().enumerate() {
            let t = (problem.target_mean[c] - means[c]) / sds[c];
            centered.set(r, j, (x.get(r, c) - means[c]) / sds[c] - t);
        }
    }
    let dual = EntropyDual { centered };
    let infeasible = |reason: String| CalibError::InfeasibleTarget {
        source_site: problem.source_site,
        target: problem.target_site,
        reason,
    };
    let solution = numlin::newton_minimize(&dual, &vec![0.0; kept.len()], cfg).map_err(|e| match e {
        NumError::Diverged { .. } | NumError::DidNotConverge { .. } => infeasible(e.to_string()),
        other => CalibError::DegenerateFeatures { source_site: problem.source_site, reason: other.to_string() },
    })?;

    let (weights, _) = dual.probabilities(&solution.x);
    let mut gamma = vec![0.0; p];
    for (j, &c) in kept.iter().enumerate() {
        gamma[c] = solution.x[j] / sds[c];
    }
    let balance_residual = balance_residual(&weights, x, problem.target_mean)?;
    for (c, res) in balance_residual.iter().enumerate() {
        if res.abs() > BALANCE_TOLERANCE * sds[c].max(1.0) {
            return Err(infeasible(format!("feature {} residual {res:e}", c + 1)));
        }
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(infeasible("a weight underflowed to zero".into()));
    }
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok(CalibrationResult {
        gamma,
        effective_sample_size: 1.0 / sum_sq,
        weights,
        balance_residual,
        iterations: solution.iterations,
        dropped_columns: dropped,
    })
}

/// Solves toward every target mean; the source's own slot gets exact uniform weights.
pub fn calibrate_to_targets(
    features: &Matrix,
    source_site: SiteId,
    target_means: &[Vec<f64>],
    cfg: &NewtonConfig,
) -> Result<Vec<CalibrationResult>, CalibError> {
    target_means
        .iter()
        .enumerate()
        .map(|(j, target)| {
            if j == source_site.index() {
                if target.len() != features.cols() {
                    return Err(CalibError::DimensionMismatch { expected: features.cols(), got: target.len() });
                }
                Ok(CalibrationResult::uniform(features.rows(), features.cols()))
            } else {
                entropy_balance_with(
                    &CalibrationProblem { features, target_mean: target, source_site, target_site: SiteId(j) },
                    cfg,
                )
            }
        })
        .collect()
}

/// `Σ_i w_i g(X_i) − ḡ` for normalized weights.
pub fn balance_residual(weights: &[f64], features: &Matrix, target_mean: &[f64]) -> Result<Vec<f64>, CalibError> {
    if weights.len() != features.rows() {
        return Err(CalibError::DimensionMismatch { expected: features.rows(), got: weights.len() });
    }
    if target_mean.len() != features.cols() {
        return Err(CalibError::DimensionMismatch { expected: features.cols(), got: target_mean.len() });
    }
    let total = numlin::sum(weights.iter().copied());
    if (total - 1.0).abs() > 1e-10 {
        return Err(CalibError::WeightsNotNormalized { sum: total });
    }
    Ok((0..features.cols())
        .map(|c| numlin::sum((0..features.rows()).map(|r| weights[r] * features.get(r, c))) - target_mean[c])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> Matrix {
        Matrix::from_rows(&[[0.0], [2.0]]).unwrap()
    }

    fn solve(features: &Matrix, target: &[f64]) -> Result<CalibrationResult, CalibError> {
        entropy_balance(&CalibrationProblem { features, target_mean: target, source_site: SiteId(0), target_site: SiteId(1) })
    }

    #[test]
    fn target_at_sample_mean_gives_zero_gamma() {
        let r = solve(&two_points(), &[1.0]).unwrap();
        assert_eq!(r.gamma, vec![0.0]);
        assert_eq!(r.weights, vec![0.5, 0.5]);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn two_point_tilt_matches_closed_form() {
        // exp(2γ) = 3 balances the mean at 1.5.
        let r = solve(&two_points(), &[1.5]).unwrap();
        assert!((r.gamma[0] - 3f64.ln() / 2.0).abs() < 1e-10);
        assert!((r.weights[0] - 0.25).abs() < 1e-12);
        assert!((r.weights[1] - 0.75).abs() < 1e-12);
        assert!(r.balance_residual[0].abs() <= 1e-8);
    }

    #[test]
    fn outside_hull_is_infeasible() {
        let err = solve(&two_points(), &[2.5]).unwrap_err();
        assert!(matches!(err, CalibError::InfeasibleTarget { source_site: SiteId(0), target: SiteId(1), .. }));
    }

    #[test]
    fn residual_examples() {
        let f = two_points();
        assert_eq!(balance_residual(&[0.5, 0.5], &f, &[1.0]).unwrap(), vec![0.0]);
        assert_eq!(balance_residual(&[0.25, 0.75], &f, &[1.5]).unwrap(), vec![0.0]);
        assert_eq!(balance_residual(&[0.5, 0.5], &f, &[1.5]).unwrap(), vec![-0.5]);
        assert!(matches!(
            balance_residual(&[0.5], &f, &[1.0]),
            Err(CalibError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            balance_residual(&[0.5, 0.6], &f, &[1.0]),
            Err(CalibError::WeightsNotNormalized { .. })
        ));
    }

    #[test]
    fn constant_and_duplicate_columns_are_dropped() {
        let f = Matrix::from_rows(&[[0.0, 5.0, 0.0], [1.0, 5.0, 2.0], [2.0, 5.0, 4.0], [4.0, 5.0, 8.0]]).unwrap();
        let r = solve(&f, &[2.0, 5.0, 4.0]).unwrap();
        assert_eq!(r.dropped_columns, vec![1, 2]);
        assert!(numlin::inf_norm(&r.balance_residual) <= 1e-8);
        // A target inconsistent with the constant column cannot be met.
        assert!(matches!(solve(&f, &[2.0, 6.0, 4.0]), Err(CalibError::InfeasibleTarget { .. })));
    }

    #[test]
    fn too_few_rows_is_degenerate() {
        let f = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(solve(&f, &[0.5, 0.5]), Err(CalibError::DegenerateFeatures { .. })));
    }
}
