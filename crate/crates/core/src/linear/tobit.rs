use std::f64::consts::PI;

use statrs::function::erf::erfc;

use super::{check_xy, weighted_least_squares, LinearFamily, LinearModel, Standardizer, TobitLimits};
use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_ITER: usize = 500;
const GRAD_TOL: f64 = 1e-6;

/// `ln Phi(z)` for the standard normal CDF, accurate far into the lower tail.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

fn log_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// `phi(z) / Phi(z)`.
fn mills(z: f64) -> f64 {
    (log_normal_pdf(z) - log_normal_cdf(z)).exp()
}

#[derive(Clone, Copy)]
enum Obs {
    Interior,
    Lower(f64),
    Upper(f64),
}

fn classify(y: f64, limits: &TobitLimits) -> Obs {
    match (limits.lower, limits.upper) {
        (Some(l), _) if y <= l => Obs::Lower(l),
        (_, Some(u)) if y >= u => Obs::Upper(u),
        _ => Obs::Interior,
    }
}

/// Mean censored-Gaussian log-likelihood and its gradient in `(w, b, ln sigma)`.
pub fn tobit_objective(m: &Matrix, y: &[f64], limits: &TobitLimits, params: &[f64]) -> (f64, Vec<f64>) {
    let p = m.n_cols();
    let n = m.n_rows() as f64;
    let log_sigma = params[p + 1];
    let sigma = log_sigma.exp();
    let mut g = vec![0.0; p + 2];
    let mut ll = 0.0;
    for (i, row) in m.rows().enumerate() {
        let mu = params[p] + row.iter().zip(params).map(|(x, w)| x * w).sum::<f64>();
        // d ll / d mu and d ll / d ln sigma for this observation.
        let (d_mu, d_s) = match classify(y[i], limits) {
            Obs::Interior => {
                let z = (y[i] - mu) / sigma;
                ll += log_normal_pdf(z) - log_sigma;
                (z / sigma, z * z - 1.0)
            }
            Obs::Lower(l) => {
                let z = (l - mu) / sigma;
                ll += log_normal_cdf(z);
                let lam = mills(z);
                (-lam / sigma, -lam * z)
            }
            Obs::Upper(u) => {
                let z = (mu - u) / sigma;
                ll += log_normal_cdf(z);
                let lam = mills(z);
                (lam / sigma, -lam * z)
            }
        };
        for j in 0..p {
            g[j] += d_mu * row[j];
        }
        g[p] += d_mu;
        g[p + 1] += d_s;
    }
    g.iter_mut().for_each(|v| *v /= n);
    (ll / n, g)
}

/// Fits a Tobit model; returns the model and the log-likelihood after every accepted step.
pub fn tobit_fit_traced(matrix: &FeatureMatrix, y: &[f64], limits: TobitLimits) -> Result<(LinearModel, Vec<f64>)> {
    check_xy(matrix, y)?;
    limits.validate()?;
    let uncensored = y.iter().filter(|&&v| matches!(classify(v, &limits), Obs::Interior)).count();
    if uncensored == 0 {
        return Err(Error::invalid("tobit needs at least one uncensored observation"));
    }
    let std = Standardizer::fit(matrix.matrix());
    let z = std.apply(matrix.matrix());
    let p = z.n_cols();
    let dim = p + 2;

    let (beta, b) = weighted_least_squares(&z, y, None);
    let sse: f64 = z
        .rows()
        .zip(y)
        .map(|(row, yi)| {
            let r = yi - b - row.iter().zip(&beta).map(|(x, w)| x * w).sum::<f64>();
            r * r
        })
        .sum();
    let sigma0 = (sse / y.len() as f64).sqrt();
    let mut theta = beta;
    theta.push(b);
    theta.push(if sigma0 > 0.0 { sigma0.ln() } else { 0.0 });

    // Minimize the negative mean log-likelihood with BFGS and Armijo backtracking.
    let eval = |t: &[f64]| {
        let (ll, g) = tobit_objective(&z, y, &limits, t);
        (-ll, g.into_iter().map(|v| -v).collect::<Vec<f64>>())
    };
    let (mut f, mut g) = eval(&theta);
    let mut hinv = identity(dim);
    let mut trace = vec![-f];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        if g.iter().all(|v| v.abs() < GRAD_TOL) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = mat_vec(&hinv, &g);
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            hinv = identity(dim);
            d = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut alpha = 1.0;
        let mut step = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&d).map(|(t, d)| t + alpha * d).collect();
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * alpha * slope {
                step = Some((trial, ft, gt));
                break;
            }
            alpha /= 2.0;
        }
        let Some((next, fnext, gnext)) = step else {
            break;
        };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            bfgs_update(&mut hinv, &s, &yv, sy);
        }
        theta = next;
        f = fnext;
        g = gnext;
        trace.push(-f);
    }
    let (w, c) = std.unscale(&theta[..p], theta[p]);
    if !converged {
        let mut last = w;
        last.push(c);
        last.push(theta[p + 1].exp());
        return Err(Error::NotConverged {
            solver: "tobit",
            iterations,
            last_iterate: last,
        });
    }
    let mut model = LinearModel::basic(matrix.column_names(), LinearFamily::Tobit, w, c);
    model.scale_sigma = Some(theta[p + 1].exp());
    model.limits = Some(limits);
    model.iterations = iterations;
    Ok((model, trace))
}

/// Censored Gaussian regression by maximum likelihood.
pub fn tobit_fit(matrix: &FeatureMatrix, y: &[f64], limits: TobitLimits) -> Result<LinearModel> {
    tobit_fit_traced(matrix, y, limits).map(|(m, _)| m)
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect()
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::ols_fit;
    use crate::linear::testing::*;
    use crate::testutil::{random_matrix, rng};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn log_cdf_matches_direct_formula_and_tail() {
        for z in [-5.0, -1.0, 0.0, 0.5, 3.0] {
            let direct = (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln();
            assert!((log_normal_cdf(z) - direct).abs() < 1e-14);
        }
        // Continuity across the asymptotic switch.
        assert!((log_normal_cdf(-30.0 + 1e-9) - log_normal_cdf(-30.0 - 1e-9)).abs() < 1e-6);
        assert!(log_normal_cdf(-100.0).is_finite());
    }

    #[test]
    fn uncensored_reduces_to_ols() {
        let mut r = rng(1);
        let m = random_matrix(&mut r, 500, 3);
        let d = Normal::new(0.0, 0.5).unwrap();
        let y: Vec<f64> = m.rows().map(|row| 1.0 + 2.0 * row[0] - row[1] + d.sample(&mut r)).collect();
        let x = FeatureMatrix::from_numeric(m);
        let t = tobit_fit(&x, &y, TobitLimits::unbounded()).unwrap();
        let o = ols_fit(&x, &y).unwrap();
        for (a, b) in t.weights.iter().zip(&o.weights) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!((t.intercept - o.intercept).abs() < 1e-4);
        let fitted = o.predict(&x).unwrap();
        let mle_sigma = (fitted.iter().zip(&y).map(|(f, y)| (y - f) * (y - f)).sum::<f64>() / 500.0).sqrt();
        assert!((t.scale_sigma.unwrap() - mle_sigma).abs() < 1e-4);
    }

    #[test]
    fn recovers_slope_under_censoring() {
        let mut r = rng(2);
        let d = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..2000).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = xs.iter().map(|&x| (x + d.sample(&mut r)).max(0.0)).collect();
        let x = FeatureMatrix::from_numeric(line_data(&xs));
        let t = tobit_fit(&x, &y, TobitLimits::below(0.0)).unwrap();
        assert!((t.weights[0] - 1.0).abs() < 0.1, "{}", t.weights[0]);
        let o = ols_fit(&x, &y).unwrap();
        assert!((o.weights[0] - 1.0).abs() > (t.weights[0] - 1.0).abs());
        let pred = t.predict_observed(&x).unwrap();
        assert!(pred.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(3);
        let m = random_matrix(&mut r, 80, 3);
        let y: Vec<f64> = m.rows().map(|row| (row[0] + r.random_range(-1.0..1.0)).clamp(-0.5, 0.8)).collect();
        let limits = TobitLimits { lower: Some(-0.5), upper: Some(0.8) };
        for _ in 0..20 {
            let params: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            let (_, g) = tobit_objective(&m, &y, &limits, &params);
            let fd = numeric_gradient(|p| tobit_objective(&m, &y, &limits, p).0, &params, 1e-5);
            assert!(relative_error(&fd, &g) < 1e-5);
        }
    }

    #[test]
    fn likelihood_never_decreases() {
        let mut r = rng(4);
        let m = random_matrix(&mut r, 300, 2);
        let y: Vec<f64> = m.rows().map(|row| (2.0 * row[0] + r.random_range(-1.0..1.0)).max(-0.2)).collect();
        let (_, trace) = tobit_fit_traced(&FeatureMatrix::from_numeric(m), &y, TobitLimits::below(-0.2)).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn all_censored_is_an_error() {
        let mut r = rng(5);
        let m = FeatureMatrix::from_numeric(random_matrix(&mut r, 20, 1));
        assert!(tobit_fit(&m, &[0.0; 20], TobitLimits::below(0.0)).is_err());
        assert!(tobit_fit(&m, &[0.0; 20], TobitLimits { lower: Some(1.0), upper: Some(0.0) }).is_err());
    }
}
