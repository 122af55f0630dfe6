use nalgebra::{DMatrix, DVector};

use super::{solve_spd, LinearFamily, LinearModel, Standardizer};
use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;

/// Sigmoid clamped to the open interval (0, 1).
pub(crate) fn probability(f: f64) -> f64 {
    (1.0 / (1.0 + (-f).exp())).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

fn log1p_exp(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

/// Mean negative Bernoulli log-likelihood and its gradient in `(w, b)`.
pub fn logistic_objective(m: &Matrix, y: &[f64], params: &[f64]) -> (f64, Vec<f64>) {
    let p = m.n_cols();
    let n = m.n_rows() as f64;
    let mut g = vec![0.0; p + 1];
    let mut f = 0.0;
    for (i, row) in m.rows().enumerate() {
        let z = params[p] + row.iter().zip(params).map(|(x, w)| x * w).sum::<f64>();
        f += log1p_exp(z) - y[i] * z;
        let r = 1.0 / (1.0 + (-z).exp()) - y[i];
        for j in 0..p {
            g[j] += r * row[j];
        }
        g[p] += r;
    }
    g.iter_mut().for_each(|v| *v /= n);
    (f / n, g)
}

/// Damped Newton fit of a logistic regression on 0/1 labels.
pub fn logistic_fit(matrix: &FeatureMatrix, labels: &[f64]) -> Result<LinearModel> {
    if labels.len() != matrix.n_rows() {
        return Err(Error::invalid("label count does not match matrix rows"));
    }
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(Error::invalid("logistic labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&l| l == 1.0).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid("logistic regression needs both classes present"));
    }
    if matrix.matrix().as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("inputs contain missing or non-finite values"));
    }
    let std = Standardizer::fit(matrix.matrix());
    let z = std.apply(matrix.matrix());
    let p = z.n_cols();
    let mut theta = vec![0.0; p + 1];
    let (mut f, mut g) = logistic_objective(&z, labels, &theta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        if g.iter().all(|v| v.abs() < GRAD_TOL) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(p + 1, p + 1);
        for row in z.rows() {
            let eta = theta[p] + row.iter().zip(&theta).map(|(x, w)| x * w).sum::<f64>();
            let pr = 1.0 / (1.0 + (-eta).exp());
            let w = pr * (1.0 - pr);
            for j in 0..=p {
                let xj = if j < p { row[j] } else { 1.0 };
                for k in 0..=j {
                    let xk = if k < p { row[k] } else { 1.0 };
                    h[(j, k)] += w * xj * xk;
                }
            }
        }
        let n = z.n_rows() as f64;
        for j in 0..=p {
            for k in 0..=j {
                h[(j, k)] /= n;
                h[(k, j)] = h[(j, k)];
            }
        }
        let step = solve_spd(&h, &DVector::from_column_slice(&g));
        let slope: f64 = step.iter().zip(&g).map(|(s, g)| s * g).sum();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t - alpha * s).collect();
            let (ft, gt) = logistic_objective(&z, labels, &trial);
            if ft <= f - 1e-4 * alpha * slope {
                theta = trial;
                f = ft;
                g = gt;
                accepted = true;
                break;
            }
            alpha /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    let (w, b) = std.unscale(&theta[..p], theta[p]);
    let mut model = LinearModel::basic(matrix.column_names(), LinearFamily::Logistic, w, b);
    model.iterations = iterations;
    let fitted = model.predict_matrix(matrix.matrix());
    let perfectly_split = fitted
        .iter()
        .zip(labels)
        .all(|(p, &y)| (y == 1.0 && *p > 1.0 - 1e-6) || (y == 0.0 && *p < 1e-6));
    model.separable = !converged || perfectly_split;
    Ok(model)
}
