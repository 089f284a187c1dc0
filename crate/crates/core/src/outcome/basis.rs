use serde::{Deserialize, Serialize};

use super::OutcomeError;
use crate::numlin::Matrix;

pub const DEFAULT_INTERIOR_KNOTS: usize = 3;
const DEGREE: usize = 3;

/// Requested structure of `g(X)`. The intercept column is always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisSpec {
    /// `(1, x_1, …, x_d)`.
    Linear,
    /// Intercept plus an additive cubic B-spline expansion of every covariate,
    /// with the given number of interior knots per covariate.
    CubicSpline { interior_knots: Vec<usize> },
}

impl BasisSpec {
    pub fn cubic_spline(covariates: usize) -> Self {
        BasisSpec::CubicSpline { interior_knots: vec![DEFAULT_INTERIOR_KNOTS; covariates] }
    }
}

/// Knot vector of one covariate: boundary and strictly interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineAxis {
    #[serde(with = "crate::wire_real::one")]
    pub lower: f64,
    #[serde(with = "crate::wire_real::one")]
    pub upper: f64,
    #[serde(with = "crate::wire_real::vec")]
    pub interior: Vec<f64>,
}

impl SplineAxis {
    fn from_sample(values: &mut [f64], interior_knots: usize, covariate: usize) -> Result<Self, OutcomeError> {
        values.sort_by(f64::total_cmp);
        let lower = values[0];
        let upper = values[values.len() - 1];
        if !(upper > lower) {
            return Err(OutcomeError::DegenerateCovariate { covariate });
        }
        let mut interior: Vec<f64> = (1..=interior_knots)
            .map(|m| quantile_sorted(values, m as f64 / (interior_knots + 1) as f64))
            .filter(|&t| t > lower && t < upper)
            .collect();
        interior.dedup();
        Ok(SplineAxis { lower, upper, interior })
    }

    /// Number of B-spline functions, before the first is dropped.
    fn basis_count(&self) -> usize {
        self.interior.len() + DEGREE + 1
    }

    fn knots(&self) -> Vec<f64> {
        let mut t = vec![self.lower; DEGREE + 1];
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat(self.upper).take(DEGREE + 1));
        t
    }

    /// Values of all B-spline functions at `x`. Outside `[lower, upper]` the
    /// end polynomial pieces are continued.
    fn evaluate(&self, x: f64, out: &mut Vec<f64>) {
        let t = self.knots();
        let nb = self.basis_count();
        // Span index: t[span] <= x < t[span + 1], clamped to the valid range.
        let span = if x < self.interior.first().copied().unwrap_or(self.upper) {
            DEGREE
        } else {
            let mut s = DEGREE;
            while s + 1 < nb && x >= t[s + 1] {
                s += 1;
            }
            s
        };
        let mut n = [0.0f64; DEGREE + 1];
        let mut left = [0.0f64; DEGREE + 1];
        let mut right = [0.0f64; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let start = out.len();
        out.resize(start + nb, 0.0);
        for (r, v) in n.iter().enumerate() {
            out[start + span - DEGREE + r] = *v;
        }
    }
}

/// Linear-interpolation quantile (type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Realized basis: the structure transmitted with a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Basis {
    Linear { covariates: usize },
    CubicSpline { axes: Vec<SplineAxis> },
}

impl Basis {
    /// Fixes knots (for splines) from the local covariate sample.
    pub fn from_spec(spec: &BasisSpec, x: &Matrix) -> Result<Basis, OutcomeError> {
        if x.rows() == 0 {
            return Err(OutcomeError::Empty);
        }
        match spec {
            BasisSpec::Linear => Ok(Basis::Linear { covariates: x.cols() }),
            BasisSpec::CubicSpline { interior_knots } => {
                if interior_knots.len() != x.cols() {
                    return Err(OutcomeError::DimensionMismatch { expected: x.cols(), got: interior_knots.len() });
                }
                let axes = (0..x.cols())
                    .map(|c| SplineAxis::from_sample(&mut x.column(c), interior_knots[c], c))
                    .collect::<Result<_, _>>()?;
                Ok(Basis::CubicSpline { axes })
            }
        }
    }

    pub fn covariates(&self) -> usize {
        match self {
            Basis::Linear { covariates } => *covariates,
            Basis::CubicSpline { axes } => axes.len(),
        }
    }

    /// Number of design columns, intercept included.
    pub fn dimension(&self) -> usize {
        match self {
            Basis::Linear { covariates } => 1 + covariates,
            Basis::CubicSpline { axes } => 1 + axes.iter().map(|a| a.basis_count() - 1).sum::<usize>(),
        }
    }

    pub fn expand_row(&self, x: &[f64], out: &mut Vec<f64>) {
        out.push(1.0);
        match self {
            Basis::Linear { .. } => out.extend_from_slice(x),
            Basis::CubicSpline { axes } => {
                let mut buf = Vec::new();
                for (axis, &v) in axes.iter().zip(x) {
                    buf.clear();
                    axis.evaluate(v, &mut buf);
                    // B-splines sum to one; the first is implied by the intercept.
                    out.extend_from_slice(&buf[1..]);
                }
            }
        }
    }

    pub fn expand(&self, x: &Matrix) -> Result<Matrix, OutcomeError> {
        if x.cols() != self.covariates() {
            return Err(OutcomeError::DimensionMismatch { expected: self.covariates(), got: x.cols() });
        }
        let dim = self.dimension();
        let mut data = Vec::with_capacity(x.rows() * dim);
        for row in x.row_iter() {
            self.expand_row(row, &mut data);
        }
        Matrix::from_row_major(x.rows(), dim, data).map_err(|_| OutcomeError::NonFinite)
    }
}

/// Design matrix `g(X)` for the given rows, with knots placed from those rows.
pub fn expand_basis(x: &Matrix, spec: &BasisSpec) -> Result<Matrix, OutcomeError> {
    Basis::from_spec(spec, x)?.expand(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_row() {
        let x = Matrix::from_rows(&[[1.5, -2.0]]).unwrap();
        let g = expand_basis(&x, &BasisSpec::Linear).unwrap();
        assert_eq!(g.row(0), &[1.0, 1.5, -2.0]);
    }

    #[test]
    fn bsplines_form_partition_of_unity() {
        let axis = SplineAxis { lower: 0.0, upper: 4.0, interior: vec![1.0, 2.5] };
        for x in [-1.0, 0.0, 0.3, 1.0, 2.0, 3.99, 4.0, 5.0] {
            let mut out = Vec::new();
            axis.evaluate(x, &mut out);
            assert_eq!(out.len(), 6);
            let s: f64 = out.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "x={x} sum={s}");
            if (0.0..=4.0).contains(&x) {
                assert!(out.iter().all(|v| *v >= -1e-15));
            }
        }
    }

    #[test]
    fn knots_at_quantiles() {
        let x = Matrix::from_rows(&(0..=8).map(|i| [i as f64]).collect::<Vec<_>>()).unwrap();
        let basis = Basis::from_spec(&BasisSpec::cubic_spline(1), &x).unwrap();
        match &basis {
            Basis::CubicSpline { axes } => assert_eq!(axes[0].interior, vec![2.0, 4.0, 6.0]),
            _ => unreachable!(),
        }
        assert_eq!(basis.dimension(), 1 + 6);
    }

    #[test]
    fn constant_covariate_rejected_for_splines() {
        let x = Matrix::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        assert!(matches!(
            expand_basis(&x, &BasisSpec::cubic_spline(1)),
            Err(OutcomeError::DegenerateCovariate { covariate: 0 })
        ));
    }
}
