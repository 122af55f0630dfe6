//! Least squares, logistic, Huber and Tobit linear models.

mod huber;
mod logistic;
mod tobit;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use huber::{huber_fit, huber_loss, huber_objective, HuberDelta};
pub use logistic::{logistic_fit, logistic_objective};
pub use tobit::{log_normal_cdf, tobit_fit, tobit_fit_traced, tobit_objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearFamily {
    Ols,
    Logistic,
    Huber,
    Tobit,
}

/// Censoring limits; `None` means unbounded on that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TobitLimits {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl TobitLimits {
    pub fn unbounded() -> Self {
        TobitLimits::default()
    }

    pub fn below(lower: f64) -> Self {
        TobitLimits {
            lower: Some(lower),
            upper: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let (Some(l), Some(u)) = (self.lower, self.upper) {
            if !(l < u) {
                return Err(Error::invalid(format!("tobit limits need lower < upper, got {l} and {u}")));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, v: f64) -> f64 {
        let v = self.lower.map_or(v, |l| v.max(l));
        self.upper.map_or(v, |u| v.min(u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub schema: Vec<String>,
    pub family: LinearFamily,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Tobit only.
    pub scale_sigma: Option<f64>,
    /// Huber only: the threshold in effect at convergence.
    pub delta: Option<f64>,
    /// Tobit only.
    pub limits: Option<TobitLimits>,
    /// Logistic only: the data looked perfectly separable.
    pub separable: bool,
    pub iterations: usize,
}

impl LinearModel {
    fn basic(schema: Vec<String>, family: LinearFamily, weights: Vec<f64>, intercept: f64) -> Self {
        LinearModel {
            schema,
            family,
            weights,
            intercept,
            scale_sigma: None,
            delta: None,
            limits: None,
            separable: false,
            iterations: 0,
        }
    }

    pub fn linear_predictor(&self, m: &Matrix) -> Vec<f64> {
        m.rows()
            .map(|row| self.intercept + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>())
            .collect()
    }

    /// `Xw + b`, or sigmoid probabilities of the positive class for logistic models.
    /// Tobit models return the latent mean.
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        matrix.check_schema(&self.schema)?;
        Ok(self.predict_matrix(matrix.matrix()))
    }

    pub(crate) fn predict_matrix(&self, m: &Matrix) -> Vec<f64> {
        let f = self.linear_predictor(m);
        match self.family {
            LinearFamily::Logistic => f.into_iter().map(logistic::probability).collect(),
            _ => f,
        }
    }

    /// Tobit prediction clamped to the censoring limits; other families as `predict`.
    pub fn predict_observed(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        let p = self.predict(matrix)?;
        Ok(match (self.family, self.limits) {
            (LinearFamily::Tobit, Some(l)) => p.into_iter().map(|v| l.clamp(v)).collect(),
            _ => p,
        })
    }
}

/// Column means and scales (1 for constant columns).
#[derive(Debug, Clone)]
pub(crate) struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(m: &Matrix) -> Self {
        let n = m.n_rows() as f64;
        let p = m.n_cols();
        let mut mean = vec![0.0; p];
        for row in m.rows() {
            for (a, x) in mean.iter_mut().zip(row) {
                *a += x;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n);
        let mut var = vec![0.0; p];
        for row in m.rows() {
            for j in 0..p {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..out.n_rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    /// Maps standardized-scale `(beta, b)` back to the original scale.
    pub fn unscale(&self, beta: &[f64], b: f64) -> (Vec<f64>, f64) {
        let w: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        let intercept = b - w.iter().zip(&self.mean).map(|(w, m)| w * m).sum::<f64>();
        (w, intercept)
    }

    /// Maps original-scale `(w, b)` to the standardized scale.
    #[cfg(test)]
    pub fn scale_params(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let beta: Vec<f64> = w.iter().zip(&self.scale).map(|(w, s)| w * s).collect();
        (beta, b + w.iter().zip(&self.mean).map(|(w, m)| w * m).sum::<f64>())
    }
}

const RIDGE_FACTOR: f64 = 1e-8;

/// Solves the symmetric positive semi-definite system `a x = b`, adding a ridge of
/// `1e-8 * trace(a) / p` when `a` is singular or badly conditioned.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = a.nrows();
    if p == 0 {
        return DVector::zeros(0);
    }
    let max_diag = (0..p).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    if let Some(ch) = Cholesky::new(a.clone()) {
        let l = ch.l_dirty();
        let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if max_diag > 0.0 && min_pivot > 1e-10 * max_diag {
            return ch.solve(b);
        }
    }
    let trace: f64 = (0..p).map(|i| a[(i, i)]).sum();
    let ridge = if trace > 0.0 { RIDGE_FACTOR * trace / p as f64 } else { RIDGE_FACTOR };
    let mut reg = a.clone();
    for i in 0..p {
        reg[(i, i)] += ridge;
    }
    match Cholesky::new(reg) {
        Some(ch) => ch.solve(b),
        None => DVector::zeros(p),
    }
}

/// Weighted least squares with intercept: returns `(w, b)`.
pub(crate) fn weighted_least_squares(m: &Matrix, y: &[f64], weights: Option<&[f64]>) -> (Vec<f64>, f64) {
    let p = m.n_cols();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..m.n_rows()).map(w).sum();
    let mut xbar = vec![0.0; p];
    let mut ybar = 0.0;
    for (i, row) in m.rows().enumerate() {
        let wi = w(i);
        for (a, x) in xbar.iter_mut().zip(row) {
            *a += wi * x;
        }
        ybar += wi * y[i];
    }
    xbar.iter_mut().for_each(|a| *a /= total);
    ybar /= total;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut xc = vec![0.0; p];
    for (i, row) in m.rows().enumerate() {
        let wi = w(i);
        for j in 0..p {
            xc[j] = row[j] - xbar[j];
        }
        let yc = y[i] - ybar;
        for j in 0..p {
            let wx = wi * xc[j];
            rhs[j] += wx * yc;
            for k in 0..=j {
                a[(j, k)] += wx * xc[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[(k, j)] = a[(j, k)];
        }
    }
    let beta = solve_spd(&a, &rhs);
    let beta: Vec<f64> = beta.iter().copied().collect();
    let b = ybar - beta.iter().zip(&xbar).map(|(b, x)| b * x).sum::<f64>();
    (beta, b)
}

fn check_xy(matrix: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if y.len() != matrix.n_rows() {
        return Err(Error::invalid(format!(
            "target has {} values but the matrix has {} rows",
            y.len(),
            matrix.n_rows()
        )));
    }
    if matrix.n_rows() <= matrix.n_cols() {
        return Err(Error::invalid(format!(
            "need more rows than columns, got {} rows and {} columns",
            matrix.n_rows(),
            matrix.n_cols()
        )));
    }
    if y.iter().chain(matrix.matrix().as_slice()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("inputs contain missing or non-finite values"));
    }
    Ok(())
}

/// Ordinary least squares with intercept.
pub fn ols_fit(matrix: &FeatureMatrix, y: &[f64]) -> Result<LinearModel> {
    check_xy(matrix, y)?;
    let (w, b) = weighted_least_squares(matrix.matrix(), y, None);
    Ok(LinearModel::basic(matrix.column_names(), LinearFamily::Ols, w, b))
}

/// Sum of squared errors and its gradient in `(w, b)`.
pub fn sse_objective(m: &Matrix, y: &[f64], params: &[f64]) -> (f64, Vec<f64>) {
    let p = m.n_cols();
    let mut g = vec![0.0; p + 1];
    let mut f = 0.0;
    for (i, row) in m.rows().enumerate() {
        let r = y[i] - params[p] - row.iter().zip(params).map(|(x, w)| x * w).sum::<f64>();
        f += r * r;
        for j in 0..p {
            g[j] -= 2.0 * r * row[j];
        }
        g[p] -= 2.0 * r;
    }
    (f, g)
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::testutil::{random_matrix, rng};
    use rand::Rng;

    #[test]
    fn ols_exact_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let m = ols_fit(&FeatureMatrix::from_numeric(line_data(&xs)), &y).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-9);
        assert!((m.intercept - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ols_constant_target() {
        let mut r = rng(1);
        let x = FeatureMatrix::from_numeric(random_matrix(&mut r, 30, 3));
        let m = ols_fit(&x, &[5.0; 30]).unwrap();
        assert!(m.weights.iter().all(|w| *w == 0.0));
        assert_eq!(m.intercept, 5.0);
    }

    #[test]
    fn ols_gradient_vanishes_at_solution() {
        let mut r = rng(2);
        let x = random_matrix(&mut r, 200, 5);
        let y: Vec<f64> = x.rows().map(|row| row[0] - 3.0 * row[4] + r.random::<f64>()).collect();
        let m = ols_fit(&FeatureMatrix::from_numeric(x.clone()), &y).unwrap();
        let mut params = m.weights.clone();
        params.push(m.intercept);
        // Oracle: finite-difference gradient of the SSE at the fitted point.
        let g = numeric_gradient(|p| sse_objective(&x, &y, p).0, &params, 1e-6);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6 * 200.0);
        let (_, ga) = sse_objective(&x, &y, &params);
        assert!(ga.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn ols_needs_more_rows_than_columns() {
        let mut r = rng(3);
        let x = FeatureMatrix::from_numeric(random_matrix(&mut r, 3, 3));
        assert!(ols_fit(&x, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn duplicate_columns_share_weight() {
        let mut r = rng(4);
        let base: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        let rows: Vec<Vec<f64>> = base.iter().map(|&v| vec![v, v]).collect();
        let y: Vec<f64> = base.iter().map(|v| 3.0 * v + 0.5).collect();
        let m = ols_fit(&FeatureMatrix::from_numeric(Matrix::from_rows(&rows).unwrap()), &y).unwrap();
        assert!((m.weights[0] - m.weights[1]).abs() < 1e-6);
        assert!((m.weights[0] + m.weights[1] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn zero_weights_predict_intercept() {
        let x = FeatureMatrix::from_numeric(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let mut m = LinearModel::basic(x.column_names(), LinearFamily::Ols, vec![0.0, 0.0], 2.5);
        assert_eq!(m.predict(&x).unwrap(), vec![2.5, 2.5]);
        m.family = LinearFamily::Logistic;
        m.intercept = 0.0;
        assert_eq!(m.predict(&x).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn standardizer_round_trip() {
        let mut r = rng(5);
        let x = random_matrix(&mut r, 20, 3);
        let s = Standardizer::fit(&x);
        let (beta, b) = s.scale_params(&[1.0, -2.0, 0.5], 3.0);
        let (w, c) = s.unscale(&beta, b);
        assert!((w[1] + 2.0).abs() < 1e-12 && (c - 3.0).abs() < 1e-12);
    }
}
