//! Dense linear algebra and a damped Newton minimizer.
//!
//! Everything here works on small systems (tens of columns, a few thousand
//! rows), so the routines are plain row-major loops with a fixed summation
//! order. Results are bit-stable for identical inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("Newton iterations exhausted after {iterations} steps (gradient norm {gradient_norm:e})")]
    DidNotConverge { iterations: usize, gradient_norm: f64 },
    #[error("Newton iterate diverged (|x|_inf = {norm:e})")]
    Diverged { norm: f64 },
}

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    #[serde(with = "crate::wire_real::vec")]
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = NumError;

    fn try_from(raw: RawMatrix) -> Result<Self, NumError> {
        Matrix::from_row_major(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { row: pos / cols.max(1), col: pos % cols.max(1) });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumError::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_row_major(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Matrix { rows: self.rows, cols: cols.len(), data }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix { rows: rows.len(), cols: self.cols, data }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, NumError> {
        if x.len() != self.cols {
            return Err(NumError::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        Ok(self.row_iter().map(|row| dot(row, x)).collect())
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix, NumError> {
        if other.rows != self.cols {
            return Err(NumError::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let s: f64 = (0..self.cols).map(|k| self.get(r, k) * other.get(k, c)).sum();
                out.set(r, c, s);
            }
        }
        Ok(out)
    }

    /// `Xᵀ diag(w) X`, or `XᵀX` when `weights` is `None`.
    pub fn weighted_gram(&self, weights: Option<&[f64]>) -> Matrix {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for r in 0..self.rows {
            let w = weights.map_or(1.0, |w| w[r]);
            let row = self.row(r);
            for a in 0..p {
                let wa = w * row[a];
                for b in a..p {
                    g.data[a * p + b] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g.data[a * p + b] = g.data[b * p + a];
            }
        }
        g
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        (0..self.rows).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= rel_tol * scale))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Neumaier-compensated sum, evaluated in iteration order.
pub fn sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows;
    let max_diag = (0..n).fold(0.0f64, |m, i| m.max(a.get(i, i).abs()));
    let floor = 1e-14 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > floor) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

/// Solves `A x = b` for symmetric positive definite `A` with the default ridge.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumError> {
    solve_spd_with_ridge(a, b, NewtonConfig::default().ridge)
}

/// Cholesky solve. If the factorization fails, `ridge · max(1, max|A_ii|) · I`
/// is added and the factorization is retried once.
pub fn solve_spd_with_ridge(a: &Matrix, b: &[f64], ridge: f64) -> Result<Vec<f64>, NumError> {
    if a.rows != a.cols {
        return Err(NumError::DimensionMismatch { expected: a.rows, got: a.cols });
    }
    if b.len() != a.rows {
        return Err(NumError::DimensionMismatch { expected: a.rows, got: b.len() });
    }
    if !a.is_symmetric(1e-10) {
        return Err(NumError::NotSymmetric);
    }
    if let Some(l) = cholesky(a) {
        return Ok(cholesky_solve(&l, b));
    }
    let n = a.rows;
    let max_diag = (0..n).fold(1.0f64, |m, i| m.max(a.get(i, i).abs()));
    let mut shifted = a.clone();
    for i in 0..n {
        shifted.set(i, i, a.get(i, i) + ridge * max_diag);
    }
    cholesky(&shifted).map(|l| cholesky_solve(&l, b)).ok_or(NumError::SingularSystem)
}

/// LU with partial pivoting for general square systems.
pub fn solve_general(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumError> {
    let n = a.rows;
    if a.cols != n {
        return Err(NumError::DimensionMismatch { expected: n, got: a.cols });
    }
    if b.len() != n {
        return Err(NumError::DimensionMismatch { expected: n, got: b.len() });
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .unwrap_or(col);
        if m.get(pivot, col).abs() <= 1e-13 * scale {
            return Err(NumError::SingularSystem);
        }
        if pivot != col {
            for c in 0..n {
                let t = m.get(col, c);
                m.set(col, c, m.get(pivot, c));
                m.set(pivot, c, t);
            }
            x.swap(col, pivot);
        }
        let d = m.get(col, col);
        for r in col + 1..n {
            let f = m.get(r, col) / d;
            if f != 0.0 {
                for c in col..n {
                    m.set(r, c, m.get(r, c) - f * m.get(col, c));
                }
                x[r] -= f * x[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s -= m.get(r, c) * x[c];
        }
        x[r] = s / m.get(r, r);
    }
    Ok(x)
}

/// Weighted least-squares solution with column dropping.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    /// One entry per design column; dropped columns carry 0.
    pub coefficients: Vec<f64>,
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Relative tolerance of the column rank policy shared by calibration and
/// outcome fitting.
pub const RANK_TOLERANCE: f64 = 1e-8;

struct Reflector {
    start: usize,
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    fn apply(&self, x: &mut [f64]) {
        let s: f64 = self.v.iter().zip(&x[self.start..]).map(|(a, b)| a * b).sum();
        let f = self.beta * s;
        for (xi, vi) in x[self.start..].iter_mut().zip(&self.v) {
            *xi -= f * vi;
        }
    }
}

/// Householder QR that visits columns left to right and drops any column
/// whose component orthogonal to the already retained columns is at most
/// `tol` times its own norm. Returns (retained, dropped, reflectors, R).
fn column_ordered_qr(x: &Matrix, tol: f64) -> (Vec<usize>, Vec<usize>, Vec<Reflector>, Vec<Vec<f64>>) {
    let m = x.rows;
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    let mut reflectors: Vec<Reflector> = Vec::new();
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    for c in 0..x.cols {
        let mut col = x.column(c);
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for h in &reflectors {
            h.apply(&mut col);
        }
        let k = reflectors.len();
        let tail = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 || k >= m || tail <= tol * norm0 {
            dropped.push(c);
            continue;
        }
        let alpha = if col[k] >= 0.0 { -tail } else { tail };
        let mut v: Vec<f64> = col[k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|a| a * a).sum();
        let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
        let mut rc = col[..k].to_vec();
        rc.push(alpha);
        r_cols.push(rc);
        reflectors.push(Reflector { start: k, v, beta });
        retained.push(c);
    }
    (retained, dropped, reflectors, r_cols)
}

/// Indices of columns kept by the rank policy, in column order.
pub fn independent_columns(x: &Matrix, tol: f64) -> Vec<usize> {
    column_ordered_qr(x, tol).0
}

/// Minimizes `Σ w_i (y_i − x_iᵀβ)²` over the retained columns.
pub fn least_squares(x: &Matrix, y: &[f64], weights: Option<&[f64]>) -> Result<LeastSquares, NumError> {
    if y.len() != x.rows {
        return Err(NumError::DimensionMismatch { expected: x.rows, got: y.len() });
    }
    if let Some(w) = weights {
        if w.len() != x.rows {
            return Err(NumError::DimensionMismatch { expected: x.rows, got: w.len() });
        }
    }
    let (xs, ys) = match weights {
        None => (x.clone(), y.to_vec()),
        Some(w) => {
            let mut xs = x.clone();
            let mut ys = y.to_vec();
            for r in 0..x.rows {
                let s = w[r].sqrt();
                for c in 0..x.cols {
                    xs.set(r, c, x.get(r, c) * s);
                }
                ys[r] *= s;
            }
            (xs, ys)
        }
    };
    let (retained, dropped, reflectors, r_cols) = column_ordered_qr(&xs, RANK_TOLERANCE);
    let mut qty = ys;
    for h in &reflectors {
        h.apply(&mut qty);
    }
    let k = retained.len();
    let mut beta_r = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = qty[i];
        for j in i + 1..k {
            s -= r_cols[j][i] * beta_r[j];
        }
        beta_r[i] = s / r_cols[i][i];
    }
    let mut coefficients = vec![0.0; x.cols];
    for (j, &c) in retained.iter().enumerate() {
        coefficients[c] = beta_r[j];
    }
    Ok(LeastSquares { coefficients, retained, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Stop once the gradient ∞-norm falls to this value.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub ridge: f64,
    pub backtracking_shrink: f64,
    pub armijo_constant: f64,
    /// Iterates with ∞-norm above this bound are reported as divergence.
    pub divergence_bound: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            gradient_tolerance: 1e-10,
            max_iterations: 100,
            ridge: 1e-10,
            backtracking_shrink: 0.5,
            armijo_constant: 1e-4,
            divergence_bound: 1e3,
        }
    }
}

pub trait SmoothObjective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> Matrix;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Objective value at every accepted iterate, starting with `x0`.
    pub trace: Vec<f64>,
}

const MAX_BACKTRACKS: usize = 60;

/// Damped Newton with Armijo backtracking.
///
/// Near the optimum the objective stops resolving further decrease before the
/// gradient reaches `gradient_tolerance`; a full step whose objective change
/// is at rounding level is then accepted when it shrinks the gradient.
pub fn newton_minimize<F: SmoothObjective + ?Sized>(
    objective: &F,
    x0: &[f64],
    cfg: &NewtonConfig,
) -> Result<NewtonSolution, NumError> {
    let mut x = x0.to_vec();
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(NumError::NonFinite { row: pos, col: 0 });
    }
    let mut f = objective.value(&x);
    let mut g = objective.gradient(&x);
    let mut gnorm = inf_norm(&g);
    let mut trace = vec![f];
    let mut iterations = 0;
    while gnorm > cfg.gradient_tolerance {
        if iterations == cfg.max_iterations {
            return Err(NumError::DidNotConverge { iterations, gradient_norm: gnorm });
        }
        iterations += 1;
        let h = objective.hessian(&x);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut d = solve_spd_with_ridge(&h, &neg_g, cfg.ridge).unwrap_or_else(|_| neg_g.clone());
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
            d = neg_g;
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for attempt in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let ft = objective.value(&trial);
            if ft.is_finite() && ft <= f + cfg.armijo_constant * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            if attempt == 0 && ft.is_finite() && (ft - f).abs() <= 8.0 * f64::EPSILON * f.abs().max(1.0) {
                let gt = objective.gradient(&trial);
                if inf_norm(&gt) < gnorm {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= cfg.backtracking_shrink;
        }
        let Some((xn, fnew)) = accepted else {
            return Err(NumError::DidNotConverge { iterations, gradient_norm: gnorm });
        };
        x = xn;
        f = fnew;
        let norm = inf_norm(&x);
        if norm > cfg.divergence_bound {
            return Err(NumError::Diverged { norm });
        }
        g = objective.gradient(&x);
        gnorm = inf_norm(&g);
        trace.push(f);
    }
    Ok(NewtonSolution { x, value: f, gradient_norm: gnorm, iterations, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let b = Matrix::from_row_major(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut a = b.transpose().mul(&b).unwrap();
        for i in 0..n {
            a.set(i, i, a.get(i, i) + n as f64 * 0.1);
        }
        a
    }

    #[test]
    fn identity_solve() {
        let x = solve_spd(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap();
        let x = solve_spd(&a, &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() <= 4.0 * f64::EPSILON && (x[1] - 2.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn recovers_constructed_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(6, &mut rng);
        let xstar: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b = a.mul_vec(&xstar).unwrap();
        let x = solve_spd(&a, &b).unwrap();
        for (u, v) in x.iter().zip(&xstar) {
            assert!((u - v).abs() < 1e-8);
        }
        let r = a.mul_vec(&x).unwrap();
        let res = inf_norm(&r.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
        assert!(res <= 1e-8 * (1.0 + inf_norm(&b)));
    }

    #[test]
    fn singular_system_gets_ridge_then_fails() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        // The ridge makes this semidefinite matrix factorable.
        assert!(solve_spd(&a, &[1.0, 1.0]).is_ok());
        let neg = Matrix::from_rows(&[[-1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert_eq!(solve_spd(&neg, &[1.0, 1.0]), Err(NumError::SingularSystem));
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert_eq!(solve_spd(&a, &[1.0, 1.0]), Err(NumError::NotSymmetric));
    }

    #[test]
    fn general_solve_matches_product() {
        let a = Matrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]]).unwrap();
        let x = solve_general(&a, &[5.0, 3.0, 6.0]).unwrap();
        let b = a.mul_vec(&x).unwrap();
        assert!((b[0] - 5.0).abs() < 1e-12 && (b[1] - 3.0).abs() < 1e-12 && (b[2] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rank_policy_drops_duplicate_and_zero_columns() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 4.0, 0.0], [1.0, 3.0, 6.0, 0.0], [1.0, 5.0, 10.0, 0.0]]).unwrap();
        assert_eq!(independent_columns(&x, RANK_TOLERANCE), vec![0, 1]);
    }

    #[test]
    fn least_squares_line() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]).unwrap();
        let y = [2.0, 5.0, 8.0, 11.0];
        let ls = least_squares(&x, &y, None).unwrap();
        assert!((ls.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((ls.coefficients[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(v), 2.0);
    }

    struct Bowl;
    impl SmoothObjective for Bowl {
        fn value(&self, x: &[f64]) -> f64 {
            0.5 * dot(x, x)
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
        fn hessian(&self, x: &[f64]) -> Matrix {
            Matrix::identity(x.len())
        }
    }

    struct LogCosh;
    impl SmoothObjective for LogCosh {
        fn value(&self, x: &[f64]) -> f64 {
            (x[0].exp() + (-x[0]).exp()).ln()
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0].tanh()]
        }
        fn hessian(&self, x: &[f64]) -> Matrix {
            let t = x[0].tanh();
            Matrix::from_rows(&[[1.0 - t * t]]).unwrap()
        }
    }

    /// Entropy dual for support points {0, 2} and target 1.5.
    struct TwoPointDual;
    impl SmoothObjective for TwoPointDual {
        fn value(&self, x: &[f64]) -> f64 {
            ((-1.5 * x[0]).exp() + (0.5 * x[0]).exp()).ln()
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            let a = (-1.5 * x[0]).exp();
            let b = (0.5 * x[0]).exp();
            vec![(-1.5 * a + 0.5 * b) / (a + b)]
        }
        fn hessian(&self, x: &[f64]) -> Matrix {
            let a = (-1.5 * x[0]).exp();
            let b = (0.5 * x[0]).exp();
            let m = (-1.5 * a + 0.5 * b) / (a + b);
            let s = (2.25 * a + 0.25 * b) / (a + b);
            Matrix::from_rows(&[[s - m * m]]).unwrap()
        }
    }

    #[test]
    fn newton_quadratic_bowl() {
        let sol = newton_minimize(&Bowl, &[5.0, -5.0], &NewtonConfig::default()).unwrap();
        assert_eq!(sol.x, vec![0.0, 0.0]);
    }

    #[test]
    fn newton_log_cosh() {
        let sol = newton_minimize(&LogCosh, &[3.0], &NewtonConfig::default()).unwrap();
        assert!(sol.x[0].abs() <= 1e-10);
        assert!(sol.gradient_norm <= 1e-10);
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn newton_two_point_dual_closed_form() {
        let sol = newton_minimize(&TwoPointDual, &[0.0], &NewtonConfig::default()).unwrap();
        assert!((sol.x[0] - 3f64.ln() / 2.0).abs() < 1e-10);
    }

    struct Unbounded;
    impl SmoothObjective for Unbounded {
        fn value(&self, x: &[f64]) -> f64 {
            // log(e^{-0.5x} + e^{-2.5x}) decreases without bound.
            ((-0.5 * x[0]).exp() + (-2.5 * x[0]).exp()).ln()
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            let a = (-0.5 * x[0]).exp();
            let b = (-2.5 * x[0]).exp();
            vec![(-0.5 * a - 2.5 * b) / (a + b)]
        }
        fn hessian(&self, x: &[f64]) -> Matrix {
            let a = (-0.5 * x[0]).exp();
            let b = (-2.5 * x[0]).exp();
            let m = (-0.5 * a - 2.5 * b) / (a + b);
            let s = (0.25 * a + 6.25 * b) / (a + b);
            Matrix::from_rows(&[[s - m * m]]).unwrap()
        }
    }

    #[test]
    fn newton_reports_divergence() {
        let err = newton_minimize(&Unbounded, &[0.0], &NewtonConfig::default()).unwrap_err();
        assert!(matches!(err, NumError::Diverged { .. } | NumError::DidNotConverge { .. }));
    }
}
