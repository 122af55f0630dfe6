use serde::{Deserialize, Serialize};

use super::{check_xy, weighted_least_squares, LinearFamily, LinearModel, Standardizer};
use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::{median, Matrix};

const MAX_ITER: usize = 200;
const STEP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HuberDelta {
    Fixed(f64),
    /// `1.35 * MAD / 0.6745` of the current residuals, recomputed every iteration.
    Adaptive,
}

/// Huber loss of one residual.
pub fn huber_loss(a: f64, delta: f64) -> f64 {
    if a.abs() <= delta {
        0.5 * a * a
    } else {
        delta * (a.abs() - 0.5 * delta)
    }
}

/// Summed Huber loss and its gradient in `(w, b)`.
pub fn huber_objective(m: &Matrix, y: &[f64], params: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let p = m.n_cols();
    let mut g = vec![0.0; p + 1];
    let mut f = 0.0;
    for (i, row) in m.rows().enumerate() {
        let r = y[i] - params[p] - row.iter().zip(params).map(|(x, w)| x * w).sum::<f64>();
        f += huber_loss(r, delta);
        let psi = r.clamp(-delta, delta);
        for j in 0..p {
            g[j] -= psi * row[j];
        }
        g[p] -= psi;
    }
    (f, g)
}

fn robust_delta(resid: &[f64], floor: f64) -> f64 {
    let med = median(resid);
    let dev: Vec<f64> = resid.iter().map(|r| (r - med).abs()).collect();
    (1.35 * median(&dev) / 0.6745).max(floor)
}

/// Huber regression by iteratively reweighted least squares.
pub fn huber_fit(matrix: &FeatureMatrix, y: &[f64], delta: HuberDelta) -> Result<LinearModel> {
    check_xy(matrix, y)?;
    if let HuberDelta::Fixed(d) = delta {
        if !(d > 0.0) {
            return Err(Error::invalid(format!("huber delta must be positive, got {d}")));
        }
    }
    let std = Standardizer::fit(matrix.matrix());
    let z = std.apply(matrix.matrix());
    let p = z.n_cols();
    let floor = 1e-8 * y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let residuals = |beta: &[f64], b: f64| -> Vec<f64> {
        z.rows()
            .zip(y)
            .map(|(row, yi)| yi - b - row.iter().zip(beta).map(|(x, w)| x * w).sum::<f64>())
            .collect()
    };
    let (mut beta, mut b) = weighted_least_squares(&z, y, None);
    let mut d = match delta {
        HuberDelta::Fixed(d) => d,
        HuberDelta::Adaptive => robust_delta(&residuals(&beta, b), floor),
    };
    for iter in 1..=MAX_ITER {
        let r = residuals(&beta, b);
        if let HuberDelta::Adaptive = delta {
            d = robust_delta(&r, floor);
        }
        let w: Vec<f64> = r.iter().map(|a| if a.abs() <= d { 1.0 } else { d / a.abs() }).collect();
        let (nb, nc) = weighted_least_squares(&z, y, Some(&w));
        let change = nb
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold((nc - b).abs(), f64::max);
        beta = nb;
        b = nc;
        if change < STEP_TOL {
            let (w, c) = std.unscale(&beta, b);
            let mut model = LinearModel::basic(matrix.column_names(), LinearFamily::Huber, w, c);
            model.delta = Some(d);
            model.iterations = iter;
            return Ok(model);
        }
    }
    let (w, c) = std.unscale(&beta, b);
    let mut last = w;
    last.push(c);
    debug_assert_eq!(last.len(), p + 1);
    Err(Error::NotConverged {
        solver: "huber",
        iterations: MAX_ITER,
        last_iterate: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::ols_fit;
    use crate::linear::testing::*;
    use crate::testutil::{random_matrix, rng};
    use rand::Rng;

    #[test]
    fn loss_values() {
        assert_eq!(huber_loss(1.0, 2.0), 0.5);
        assert_eq!(huber_loss(0.0, 2.0), 0.0);
        assert_eq!(huber_loss(-3.0, 2.0), 4.0);
        assert_eq!(huber_loss(2.0, 2.0), 2.0);
    }

    #[test]
    fn resists_gross_outlier() {
        let xs: Vec<f64> = (0..50).map(|i| f64::from(i) / 5.0).collect();
        let mut y: Vec<f64> = xs.iter().map(|x| 3.0 * x).collect();
        y[45] += 500.0;
        let x = FeatureMatrix::from_numeric(line_data(&xs));
        let h = huber_fit(&x, &y, HuberDelta::Fixed(1.0)).unwrap();
        let o = ols_fit(&x, &y).unwrap();
        assert!((h.weights[0] - 3.0).abs() < 0.05, "{}", h.weights[0]);
        assert!((o.weights[0] - 3.0).abs() > 0.2);
    }

    #[test]
    fn huge_delta_is_ols() {
        let mut r = rng(1);
        let m = random_matrix(&mut r, 100, 3);
        let y: Vec<f64> = m.rows().map(|row| row[0] * 2.0 - row[2] + r.random::<f64>()).collect();
        let x = FeatureMatrix::from_numeric(m);
        let h = huber_fit(&x, &y, HuberDelta::Fixed(1e9)).unwrap();
        let o = ols_fit(&x, &y).unwrap();
        for (a, b) in h.weights.iter().zip(&o.weights) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((h.intercept - o.intercept).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(2);
        let m = random_matrix(&mut r, 60, 3);
        let y: Vec<f64> = m.rows().map(|row| row[1] * 4.0 + r.random_range(-2.0..2.0)).collect();
        for _ in 0..20 {
            let params: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let (_, g) = huber_objective(&m, &y, &params, 0.7);
            let fd = numeric_gradient(|p| huber_objective(&m, &y, p, 0.7).0, &params, 1e-6);
            assert!(relative_error(&fd, &g) < 1e-5);
        }
    }

    #[test]
    fn adaptive_delta_converges_on_noisy_data() {
        let mut r = rng(3);
        let m = random_matrix(&mut r, 400, 4);
        let y: Vec<f64> = m.rows().map(|row| row[0] + row[3] + r.random_range(-1.0..1.0)).collect();
        let h = huber_fit(&FeatureMatrix::from_numeric(m), &y, HuberDelta::Adaptive).unwrap();
        assert!(h.delta.unwrap() > 0.0);
    }
}
