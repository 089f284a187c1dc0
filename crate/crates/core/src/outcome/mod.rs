//! Basis expansion and (weighted) linear outcome models.
//!
//! A fitted model is its basis structure plus coefficients. That pair is
//! everything another site needs to evaluate `m̂_k(x)`, so it is also exactly
//! what crosses the wire.

mod basis;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use basis::{expand_basis, Basis, BasisSpec, SplineAxis, DEFAULT_INTERIOR_KNOTS};

use crate::data::{SiteDataset, SiteId, SiteSet};
use crate::numlin::{self, Matrix, NumError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OutcomeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariate {} is constant; a spline basis cannot be placed", covariate + 1)]
    DegenerateCovariate { covariate: usize },
    #[error("degenerate design: {0}")]
    DegenerateFeatures(String),
    #[error("non-finite value in design or outcome")]
    NonFinite,
    #[error("no rows to fit")]
    Empty,
    #[error("weights must be finite, nonnegative and not all zero")]
    InvalidWeights,
}

/// Coefficients on the retained design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearFit {
    /// One entry per retained column, in column order.
    #[serde(with = "crate::wire_real::vec")]
    pub coefficients: Vec<f64>,
    /// Design columns removed by the rank policy.
    pub dropped_columns: Vec<usize>,
    /// Total number of design columns.
    pub columns: usize,
}

impl LinearFit {
    /// Coefficients expanded to every design column, 0 where dropped.
    pub fn full_coefficients(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.columns];
        let mut it = self.coefficients.iter();
        for (c, slot) in out.iter_mut().enumerate() {
            if !self.dropped_columns.contains(&c) {
                *slot = *it.next().expect("coefficient count matches retained columns");
            }
        }
        out
    }

    pub fn predict_design(&self, design: &Matrix) -> Result<Vec<f64>, OutcomeError> {
        if design.cols() != self.columns {
            return Err(OutcomeError::DimensionMismatch { expected: self.columns, got: design.cols() });
        }
        let beta = self.full_coefficients();
        Ok(design.row_iter().map(|r| numlin::dot(r, &beta)).collect())
    }
}

fn check_fit_inputs(design: &Matrix, y: &[f64]) -> Result<(), OutcomeError> {
    if design.rows() != y.len() {
        return Err(OutcomeError::DimensionMismatch { expected: design.rows(), got: y.len() });
    }
    if y.is_empty() {
        return Err(OutcomeError::Empty);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OutcomeError::NonFinite);
    }
    Ok(())
}

fn finish(ls: numlin::LeastSquares, rows: usize) -> Result<LinearFit, OutcomeError> {
    if ls.retained.is_empty() {
        return Err(OutcomeError::DegenerateFeatures("no column survives the rank policy".into()));
    }
    if rows < ls.retained.len() {
        return Err(OutcomeError::DegenerateFeatures(format!(
            "{rows} rows for {} retained columns",
            ls.retained.len()
        )));
    }
    let columns = ls.coefficients.len();
    Ok(LinearFit {
        coefficients: ls.retained.iter().map(|&c| ls.coefficients[c]).collect(),
        dropped_columns: ls.dropped,
        columns,
    })
}

fn map_num(e: NumError) -> OutcomeError {
    match e {
        NumError::DimensionMismatch { expected, got } => OutcomeError::DimensionMismatch { expected, got },
        other => OutcomeError::DegenerateFeatures(other.to_string()),
    }
}

/// Ordinary least squares with collinear columns dropped.
pub fn fit_ols(design: &Matrix, y: &[f64]) -> Result<LinearFit, OutcomeError> {
    check_fit_inputs(design, y)?;
    let ls = numlin::least_squares(design, y, None).map_err(map_num)?;
    finish(ls, design.rows())
}

/// Weighted least squares; zero weights exclude rows.
pub fn fit_wls(design: &Matrix, y: &[f64], weights: &[f64]) -> Result<LinearFit, OutcomeError> {
    check_fit_inputs(design, y)?;
    if weights.len() != y.len() {
        return Err(OutcomeError::DimensionMismatch { expected: y.len(), got: weights.len() });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().all(|w| *w == 0.0) {
        return Err(OutcomeError::InvalidWeights);
    }
    let ls = numlin::least_squares(design, y, Some(weights)).map_err(map_num)?;
    let effective_rows = weights.iter().filter(|w| **w > 0.0).count();
    finish(ls, effective_rows)
}

/// `m̂_k(x) = β̂ᵀ g(x)` with the structure needed to evaluate it anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedOutcomeModel {
    pub site: SiteId,
    pub basis: Basis,
    pub fit: LinearFit,
    /// Target subset, for bias-reduced fits that depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<SiteSet>,
}

impl FittedOutcomeModel {
    /// Places the basis on the local covariates and fits by OLS.
    pub fn fit(spec: &BasisSpec, data: &SiteDataset, site: SiteId) -> Result<Self, OutcomeError> {
        let basis = Basis::from_spec(spec, data.x())?;
        let design = basis.expand(data.x())?;
        let fit = fit_ols(&design, data.y())?;
        Ok(FittedOutcomeModel { site, basis, fit, subset: None })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, OutcomeError> {
        let design = self.basis.expand(x)?;
        self.fit.predict_design(&design)
    }
}

/// Predictions of `model` on the rows of `x`.
pub fn predict(model: &FittedOutcomeModel, x: &Matrix) -> Result<Vec<f64>, OutcomeError> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_data() -> (Matrix, Vec<f64>) {
        let xs: Vec<[f64; 1]> = (0..10).map(|i| [i as f64 * 0.5 - 1.0]).collect();
        let x = Matrix::from_rows(&xs).unwrap();
        let y = xs.iter().map(|r| 2.0 + 3.0 * r[0]).collect();
        (x, y)
    }

    /// Independent route: solve the (weighted) normal equations directly.
    fn normal_equation_oracle(design: &Matrix, y: &[f64], w: &[f64]) -> Vec<f64> {
        let p = design.cols();
        let mut a = vec![vec![0.0; p]; p];
        let mut b = vec![0.0; p];
        for r in 0..design.rows() {
            for i in 0..p {
                b[i] += w[r] * design.get(r, i) * y[r];
                for j in 0..p {
                    a[i][j] += w[r] * design.get(r, i) * design.get(r, j);
                }
            }
        }
        // Gauss-Jordan elimination.
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in 0..p {
                        a[r][k] -= f * a[c][k];
                    }
                    b[r] -= f * b[c];
                }
            }
        }
        (0..p).map(|i| b[i] / a[i][i]).collect()
    }

    fn seeded_design(seed: u64, n: usize) -> (Matrix, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 3]> = (0..n).map(|_| [1.0, rng.random_range(-2.0..2.0), rng.random_range(0.0..3.0)]).collect();
        let y = rows.iter().map(|r| 1.0 - r[1] + 0.5 * r[2] + rng.random_range(-0.3..0.3)).collect();
        let w = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        (Matrix::from_rows(&rows).unwrap(), y, w)
    }

    #[test]
    fn intercept_only_constant() {
        let design = Matrix::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        let fit = fit_ols(&design, &[4.0, 4.0, 4.0]).unwrap();
        assert!((fit.coefficients[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn noiseless_line() {
        let (x, y) = line_data();
        let model = FittedOutcomeModel::fit(&BasisSpec::Linear, &SiteDataset::new(y.clone(), x.clone()).unwrap(), SiteId(0)).unwrap();
        assert!((model.fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((model.fit.coefficients[1] - 3.0).abs() < 1e-12);
        for (p, t) in model.predict(&x).unwrap().iter().zip(&y) {
            assert!((p - t).abs() < 1e-12);
        }
    }

    #[test]
    fn ols_matches_normal_equations() {
        let (design, y, _) = seeded_design(11, 50);
        let fit = fit_ols(&design, &y).unwrap();
        let oracle = normal_equation_oracle(&design, &y, &vec![1.0; 50]);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn wls_matches_weighted_normal_equations() {
        let (design, y, w) = seeded_design(12, 60);
        let fit = fit_wls(&design, &y, &w).unwrap();
        let oracle = normal_equation_oracle(&design, &y, &w);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
        // Weighted residuals are orthogonal to every column.
        let r: Vec<f64> = fit.predict_design(&design).unwrap().iter().zip(&y).map(|(p, t)| t - p).collect();
        for c in 0..3 {
            let s: f64 = (0..60).map(|i| w[i] * r[i] * design.get(i, c)).sum();
            assert!(s.abs() < 1e-8);
        }
    }

    #[test]
    fn uniform_weights_reduce_to_ols() {
        let (design, y, _) = seeded_design(13, 30);
        let a = fit_ols(&design, &y).unwrap();
        let b = fit_wls(&design, &y, &vec![2.5; 30]).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_weights_exclude_rows() {
        let (design, y, _) = seeded_design(14, 20);
        let mut w = vec![0.0; 20];
        w[..4].iter_mut().for_each(|v| *v = 1.0);
        let a = fit_wls(&design, &y, &w).unwrap();
        let b = fit_ols(&design.select_rows(&[0, 1, 2, 3]), &y[..4]).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn all_zero_covariates_leave_intercept() {
        let x = Matrix::zeros(5, 2);
        let design = expand_basis(&x, &BasisSpec::Linear).unwrap();
        let fit = fit_ols(&design, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(fit.dropped_columns, vec![1, 2]);
        assert_eq!(fit.coefficients.len(), 1);
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn spline_reproduces_cubic() {
        let xs: Vec<[f64; 1]> = (0..41).map(|i| [-2.0 + 0.1 * i as f64]).collect();
        let x = Matrix::from_rows(&xs).unwrap();
        let cubic = |t: f64| 0.5 - t + 0.25 * t * t - 0.7 * t * t * t;
        let y: Vec<f64> = xs.iter().map(|r| cubic(r[0])).collect();
        let data = SiteDataset::new(y, x).unwrap();
        let model = FittedOutcomeModel::fit(&BasisSpec::cubic_spline(1), &data, SiteId(0)).unwrap();
        let grid = Matrix::from_rows(&(0..81).map(|i| [-2.5 + i as f64 * 0.0625]).collect::<Vec<_>>()).unwrap();
        for (p, r) in model.predict(&grid).unwrap().iter().zip(grid.row_iter()) {
            assert!((p - cubic(r[0])).abs() <= 1e-6, "x={} p={p}", r[0]);
        }
    }

    #[test]
    fn intercept_model_predicts_constant() {
        let model = FittedOutcomeModel {
            site: SiteId(0),
            basis: Basis::Linear { covariates: 1 },
            fit: LinearFit { coefficients: vec![3.0], dropped_columns: vec![1], columns: 2 },
            subset: None,
        };
        let x = Matrix::from_rows(&[[1.0], [-7.0]]).unwrap();
        assert_eq!(predict(&model, &x).unwrap(), vec![3.0, 3.0]);
        let wrong = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(predict(&model, &wrong), Err(OutcomeError::DimensionMismatch { .. })));
    }

    #[test]
    fn serialized_model_predicts_bit_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<(f64, Vec<f64>)> = (0..80)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..2.0);
                let b: f64 = rng.random_range(0.0..1.0);
                ((a * 3.0).sin() + b * b + rng.random_range(-0.1..0.1), vec![a, b])
            })
            .collect();
        let data = SiteDataset::from_rows(&rows).unwrap();
        let model = FittedOutcomeModel::fit(&BasisSpec::cubic_spline(2), &data, SiteId(2)).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: FittedOutcomeModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
        let a = model.predict(data.x()).unwrap();
        let b = back.predict(data.x()).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
