//! Imputation, correlation filtering, box-cox target transform, SMOTE and
//! stratified splitting.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{band_of, ColumnKind, DurationBand, FeatureMatrix, IncidentRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Fill {
    Value { column: usize, value: f64 },
    /// Whole one-hot group set to the mode category.
    Group { columns: Vec<usize>, hot: usize },
}

/// Mean/mode imputation statistics learned from a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    columns: Vec<String>,
    fills: Vec<Fill>,
}

fn observed(m: &Matrix, j: usize) -> Vec<f64> {
    (0..m.n_rows())
        .map(|i| m.get(i, j))
        .filter(|v| !v.is_nan())
        .collect()
}

fn mode(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i < v.len() {
        let mut k = i;
        while k < v.len() && v[k] == v[i] {
            k += 1;
        }
        if best.is_none_or(|(_, c)| k - i > c) {
            best = Some((v[i], k - i));
        }
        i = k;
    }
    best.map(|(x, _)| x)
}

impl Imputer {
    pub fn fit(matrix: &FeatureMatrix) -> Result<Imputer> {
        let m = matrix.matrix();
        let mut fills = Vec::new();
        let cols = matrix.columns();
        for (j, c) in cols.iter().enumerate() {
            match c.kind {
                ColumnKind::OneHot => continue,
                ColumnKind::Numeric => {
                    let obs = observed(m, j);
                    if obs.is_empty() {
                        return Err(Error::Preprocess(format!(
                            "column `{}` has no observed values to impute from",
                            c.name
                        )));
                    }
                    fills.push(Fill::Value {
                        column: j,
                        value: obs.iter().sum::<f64>() / obs.len() as f64,
                    });
                }
                ColumnKind::Binary | ColumnKind::Ordinal => {
                    let value = mode(&observed(m, j)).ok_or_else(|| {
                        Error::Preprocess(format!(
                            "column `{}` has no observed values to impute from",
                            c.name
                        ))
                    })?;
                    fills.push(Fill::Value { column: j, value });
                }
            }
        }
        for (source, group) in matrix.onehot_groups() {
            let counts: Vec<f64> = group
                .iter()
                .map(|&j| observed(m, j).iter().sum::<f64>())
                .collect();
            let any_observed = group.iter().any(|&j| !observed(m, j).is_empty());
            if !any_observed {
                return Err(Error::Preprocess(format!(
                    "categorical `{source}` has no observed values to impute from"
                )));
            }
            let mut hot = 0;
            for (k, &c) in counts.iter().enumerate() {
                if c > counts[hot] {
                    hot = k;
                }
            }
            fills.push(Fill::Group {
                columns: group,
                hot,
            });
        }
        Ok(Imputer {
            columns: matrix.column_names(),
            fills,
        })
    }

    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        matrix.check_schema(&self.columns)?;
        let mut out = matrix.clone();
        let m = out.matrix_mut();
        for i in 0..m.n_rows() {
            for fill in &self.fills {
                match fill {
                    Fill::Value { column, value } => {
                        if m.get(i, *column).is_nan() {
                            m.set(i, *column, *value);
                        }
                    }
                    Fill::Group { columns, hot } => {
                        if columns.iter().any(|&j| m.get(i, j).is_nan()) {
                            for (k, &j) in columns.iter().enumerate() {
                                m.set(i, j, if k == *hot { 1.0 } else { 0.0 });
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Fits imputation statistics on `matrix` and fills its missing values.
pub fn impute(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    Imputer::fit(matrix)?.transform(matrix)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa.sqrt() * sbb.sqrt()))
    }
}

/// Columns retained by a pairwise correlation filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFilter {
    pub threshold: f64,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

impl CorrelationFilter {
    /// Scans columns in order; a column whose |r| with any already-kept
    /// non-constant column exceeds `threshold` is dropped.
    pub fn fit(matrix: &FeatureMatrix, threshold: f64) -> Result<CorrelationFilter> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "correlation threshold must be in (0, 1], got {threshold}"
            )));
        }
        if matrix.n_rows() < 2 {
            return Err(Error::invalid("correlation filter needs at least 2 rows"));
        }
        let m = matrix.matrix();
        let columns: Vec<Vec<f64>> = (0..m.n_cols()).map(|j| m.column(j)).collect();
        let constant: Vec<bool> = columns
            .iter()
            .map(|c| c.iter().all(|&v| v == c[0]))
            .collect();
        let mut kept_idx: Vec<usize> = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..columns.len() {
            let drop = !constant[j]
                && kept_idx.iter().any(|&i| {
                    !constant[i]
                        && pearson(&columns[i], &columns[j]).is_some_and(|r| r.abs() > threshold)
                });
            if drop {
                dropped.push(matrix.columns()[j].name.clone());
            } else {
                kept_idx.push(j);
            }
        }
        Ok(CorrelationFilter {
            threshold,
            kept: kept_idx
                .iter()
                .map(|&j| matrix.columns()[j].name.clone())
                .collect(),
            dropped,
        })
    }

    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        let names = matrix.column_names();
        let idx = self
            .kept
            .iter()
            .map(|k| names.iter().position(|n| n == k))
            .collect::<Option<Vec<usize>>>()
            .ok_or_else(|| crate::domain::schema_mismatch(&self.kept, &names))?;
        Ok(matrix.select_columns(&idx))
    }
}

/// Drops the later column of every pair with |Pearson r| above `threshold`.
pub fn correlation_filter(matrix: &FeatureMatrix, threshold: f64) -> Result<(FeatureMatrix, Vec<String>)> {
    let f = CorrelationFilter::fit(matrix, threshold)?;
    let out = f.transform(matrix)?;
    Ok((out, f.dropped))
}

/// Box-cox power transform `(y^lambda - 1) / lambda` (`ln y` at lambda = 0) applied to `y + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxTransform {
    pub lambda: f64,
    pub shift: f64,
}

impl BoxCoxTransform {
    pub fn new(lambda: f64, shift: f64) -> Self {
        BoxCoxTransform { lambda, shift }
    }

    pub fn apply_one(&self, y: f64) -> Result<f64> {
        let v = y + self.shift;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!(
                "box-cox needs positive input, got {y} with shift {}",
                self.shift
            )));
        }
        Ok(transform_value(v.ln(), self.lambda))
    }

    pub fn apply(&self, ys: &[f64]) -> Result<Vec<f64>> {
        ys.iter().map(|&y| self.apply_one(y)).collect()
    }

    pub fn inverse_one(&self, z: f64) -> f64 {
        let ln_v = if self.lambda == 0.0 {
            z
        } else {
            // Outside the transform's range the base would be <= 0; clamp to the edge.
            let base = (self.lambda * z).max(-1.0 + 1e-15);
            base.ln_1p() / self.lambda
        };
        ln_v.exp() - self.shift
    }

    pub fn inverse(&self, zs: &[f64]) -> Vec<f64> {
        zs.iter().map(|&z| self.inverse_one(z)).collect()
    }
}

#[inline]
fn transform_value(ln_v: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        ln_v
    } else {
        (lambda * ln_v).exp_m1() / lambda
    }
}

/// Profile log-likelihood of the box-cox model at `lambda`, up to a constant.
pub fn boxcox_log_likelihood(ln_y: &[f64], lambda: f64) -> f64 {
    let n = ln_y.len() as f64;
    let z: Vec<f64> = ln_y.iter().map(|&l| transform_value(l, lambda)).collect();
    let m = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    -0.5 * n * var.ln() + (lambda - 1.0) * ln_y.iter().sum::<f64>()
}

/// Grid search of lambda over [-2, 2] in steps of 0.01; ties go to the lambda closest to 0.
pub fn boxcox_fit(y: &[f64], shift: f64) -> Result<BoxCoxTransform> {
    if y.len() < 2 {
        return Err(Error::invalid("box-cox fit needs at least 2 values"));
    }
    let mut ln_y = Vec::with_capacity(y.len());
    for &v in y {
        let s = v + shift;
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!(
                "box-cox needs positive values after shift, got {v} (shift {shift})"
            )));
        }
        ln_y.push(s.ln());
    }
    let mut best = (f64::NEG_INFINITY, 0.0f64);
    for step in -200..=200 {
        let lambda = f64::from(step) / 100.0;
        let ll = boxcox_log_likelihood(&ln_y, lambda);
        if !ll.is_finite() {
            continue;
        }
        if ll > best.0 || (ll == best.0 && lambda.abs() < best.1.abs()) {
            best = (ll, lambda);
        }
    }
    Ok(BoxCoxTransform::new(best.1, shift))
}

/// Where a synthetic SMOTE row came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOrigin {
    pub row: usize,
    pub base: usize,
    pub neighbor: usize,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SmoteOutput {
    /// Original rows first, in order, followed by synthetic rows. Carries no target.
    pub matrix: FeatureMatrix,
    pub labels: Vec<usize>,
    pub synthetic: Vec<SyntheticOrigin>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k nearest neighbours of each member among `members` (excluding itself), ties by index.
fn class_neighbors(m: &Matrix, members: &[usize], k: usize) -> Vec<Vec<usize>> {
    members
        .par_iter()
        .map(|&i| {
            let mut d: Vec<(f64, usize)> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (sq_dist(m.row(i), m.row(j)), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Oversamples every class up to the majority count by interpolating between a
/// member and one of its `k` nearest same-class neighbours.
///
/// Indicator columns (one-hot groups and binaries) take the values of the nearer endpoint.
pub fn smote(matrix: &FeatureMatrix, labels: &[usize], k: usize, seed: u64) -> Result<SmoteOutput> {
    if labels.len() != matrix.n_rows() {
        return Err(Error::invalid("label count does not match matrix rows"));
    }
    if k == 0 {
        return Err(Error::invalid("SMOTE needs k >= 1"));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let majority = members.iter().map(Vec::len).max().unwrap_or(0);

    let m = matrix.matrix();
    let mut indicator_groups: Vec<Vec<usize>> = matrix.onehot_groups().into_iter().map(|(_, g)| g).collect();
    for (j, c) in matrix.columns().iter().enumerate() {
        if c.kind == ColumnKind::Binary {
            indicator_groups.push(vec![j]);
        }
    }
    let is_indicator: Vec<bool> = matrix.columns().iter().map(|c| c.kind.is_indicator()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = m.clone();
    let mut out_labels = labels.to_vec();
    let mut synthetic = Vec::new();
    for (class, rows) in members.iter().enumerate() {
        if rows.is_empty() || rows.len() == majority {
            continue;
        }
        if rows.len() < k + 1 {
            return Err(Error::invalid(format!(
                "class {class} has {} members but SMOTE with k = {k} needs at least {}; use a smaller k",
                rows.len(),
                k + 1
            )));
        }
        let neighbors = class_neighbors(m, rows, k);
        for _ in rows.len()..majority {
            let b = rng.random_range(0..rows.len());
            let base = rows[b];
            let neighbor = neighbors[b][rng.random_range(0..k)];
            let gap: f64 = rng.random();
            let x = m.row(base);
            let nn = m.row(neighbor);
            let mut new_row: Vec<f64> = x
                .iter()
                .zip(nn)
                .zip(&is_indicator)
                .map(|((&a, &b), &ind)| if ind { a } else { a + gap * (b - a) })
                .collect();
            if gap > 0.5 {
                for g in &indicator_groups {
                    for &j in g {
                        new_row[j] = nn[j];
                    }
                }
            }
            synthetic.push(SyntheticOrigin {
                row: out.n_rows(),
                base,
                neighbor,
                gap,
            });
            out.push_row(&new_row)?;
            out_labels.push(class);
        }
    }
    Ok(SmoteOutput {
        matrix: FeatureMatrix::new(matrix.columns().to_vec(), out, None)?,
        labels: out_labels,
        synthetic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.70,
            test_fraction: 0.15,
            validation_fraction: 0.15,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.test_fraction, self.validation_fraction];
        if f.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(Error::invalid(format!("split fractions must lie in (0, 1), got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("split fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }
}

/// Index lists of a three-way split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified split by band; every index list is sorted ascending.
pub fn split_indices(bands: &[DurationBand], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    if bands.len() < 10 {
        return Err(Error::invalid(format!("need at least 10 records to split, got {}", bands.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        test: Vec::new(),
        validation: Vec::new(),
    };
    for band in DurationBand::ALL {
        let mut idx: Vec<usize> = (0..bands.len()).filter(|&i| bands[i] == band).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * spec.train_fraction).round() as usize;
        let n_test = ((n as f64 * spec.test_fraction).round() as usize).min(n - n_train.min(n));
        let n_val = n.saturating_sub(n_train + n_test);
        if n_train == 0 || n_test == 0 || n_val == 0 {
            return Err(Error::invalid(format!(
                "band {band} with {n} records leaves an empty split ({n_train}/{n_test}/{n_val})"
            )));
        }
        out.train.extend_from_slice(&idx[..n_train]);
        out.test.extend_from_slice(&idx[n_train..n_train + n_test]);
        out.validation.extend_from_slice(&idx[n_train + n_test..]);
    }
    out.train.sort_unstable();
    out.test.sort_unstable();
    out.validation.sort_unstable();
    Ok(out)
}

/// Stratified train/test/validation split of labelled records.
pub fn split(
    records: &[IncidentRecord],
    spec: &SplitSpec,
) -> Result<(Vec<IncidentRecord>, Vec<IncidentRecord>, Vec<IncidentRecord>)> {
    let bands = records
        .iter()
        .map(|r| {
            r.duration_minutes
                .ok_or_else(|| Error::invalid(format!("record `{}` has no duration", r.id)))
                .and_then(band_of)
        })
        .collect::<Result<Vec<_>>>()?;
    let s = split_indices(&bands, spec)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&s.train), pick(&s.test), pick(&s.validation)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ColumnMeta;
    use crate::testutil::{random_matrix, rng};
    use rand_distr::{Distribution, Normal};

    fn fm(cols: Vec<ColumnMeta>, rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::new(cols, Matrix::from_rows(rows).unwrap(), None).unwrap()
    }

    #[test]
    fn numeric_mean_imputation() {
        let m = fm(vec![ColumnMeta::numeric("x")], &[vec![2.0], vec![f64::NAN], vec![4.0]]);
        let out = impute(&m).unwrap();
        assert_eq!(out.matrix().column(0), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn categorical_mode_imputation() {
        let cols = vec![
            ColumnMeta::new("c=A", ColumnKind::OneHot, "c"),
            ColumnMeta::new("c=B", ColumnKind::OneHot, "c"),
        ];
        let nan = f64::NAN;
        let m = fm(cols, &[vec![1.0, 0.0], vec![1.0, 0.0], vec![nan, nan], vec![0.0, 1.0]]);
        let out = impute(&m).unwrap();
        let decoded: Vec<_> = (0..4).map(|i| out.decode_onehot(i)[0].1.clone().unwrap()).collect();
        assert_eq!(decoded, vec!["A", "A", "A", "B"]);
    }

    #[test]
    fn all_missing_column_is_an_error() {
        let m = fm(vec![ColumnMeta::numeric("hourly_volume")], &[vec![f64::NAN], vec![f64::NAN]]);
        let err = impute(&m).unwrap_err().to_string();
        assert!(err.contains("hourly_volume"), "{err}");
    }

    #[test]
    fn imputer_reuses_training_statistics() {
        let train = fm(vec![ColumnMeta::numeric("x")], &[vec![10.0], vec![20.0]]);
        let other = fm(vec![ColumnMeta::numeric("x")], &[vec![f64::NAN], vec![100.0]]);
        let imp = Imputer::fit(&train).unwrap();
        assert_eq!(imp.transform(&other).unwrap().matrix().column(0), vec![15.0, 100.0]);
    }

    #[test]
    fn identical_and_negated_columns_dropped() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| {
            let x = (i as f64).sin();
            vec![x, x, -x]
        }).collect();
        let m = FeatureMatrix::from_numeric(Matrix::from_rows(&rows).unwrap());
        let (out, dropped) = correlation_filter(&m, 0.4).unwrap();
        assert_eq!(dropped, vec!["x1".to_string(), "x2".to_string()]);
        assert_eq!(out.n_cols(), 1);
    }

    #[test]
    fn constant_column_never_dropped() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 5.0, i as f64 * 2.0]).collect();
        let m = FeatureMatrix::from_numeric(Matrix::from_rows(&rows).unwrap());
        let (_, dropped) = correlation_filter(&m, 0.4).unwrap();
        assert_eq!(dropped, vec!["x2".to_string()]);
    }

    #[test]
    fn independent_columns_survive() {
        let mut r = rng(11);
        let m = FeatureMatrix::from_numeric(random_matrix(&mut r, 1000, 6));
        // Oracle: direct pairwise Pearson computation.
        let cols: Vec<Vec<f64>> = (0..6).map(|j| m.matrix().column(j)).collect();
        let max_r = (0..6)
            .flat_map(|i| (i + 1..6).map(move |j| (i, j)))
            .map(|(i, j)| pearson(&cols[i], &cols[j]).unwrap().abs())
            .fold(0.0, f64::max);
        assert!(max_r < 0.4);
        let (_, dropped) = correlation_filter(&m, 0.4).unwrap();
        assert!(dropped.is_empty());
    }

    #[test]
    fn correlation_filter_rejects_bad_threshold() {
        let m = FeatureMatrix::from_numeric(Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        assert!(correlation_filter(&m, 0.0).is_err());
        assert!(correlation_filter(&m, 1.5).is_err());
    }

    #[test]
    fn boxcox_known_values() {
        assert!((BoxCoxTransform::new(1.0, 0.0).apply_one(5.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((BoxCoxTransform::new(0.0, 0.0).apply_one(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!(BoxCoxTransform::new(0.5, 0.0).apply_one(0.0).is_err());
        assert!(boxcox_fit(&[1.0, -2.0, 3.0], 0.0).is_err());
    }

    #[test]
    fn boxcox_lognormal_sample() {
        let mut r = rng(3);
        let d = Normal::new(3.43, 0.87).unwrap();
        let y: Vec<f64> = (0..5000).map(|_| { let v: f64 = d.sample(&mut r); v.exp() }).collect();
        let t = boxcox_fit(&y, 0.0).unwrap();
        assert!(t.lambda.abs() <= 0.1, "lambda {}", t.lambda);
        let z = t.apply(&y).unwrap();
        assert!(crate::matrix::skewness(&z).abs() < 0.2);
        // Oracle: the chosen lambda beats its grid neighbours.
        let ln_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let ll = boxcox_log_likelihood(&ln_y, t.lambda);
        assert!(ll >= boxcox_log_likelihood(&ln_y, t.lambda + 0.01));
        assert!(ll >= boxcox_log_likelihood(&ln_y, t.lambda - 0.01));
    }

    #[test]
    fn smote_balanced_input_unchanged() {
        let m = FeatureMatrix::from_numeric(Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap());
        let out = smote(&m, &[0, 0, 1, 1], 1, 7).unwrap();
        assert_eq!(out.matrix, m);
        assert_eq!(out.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn smote_segment_two_points() {
        let rows = vec![vec![5.0, 5.0], vec![6.0, 5.0], vec![5.0, 6.0], vec![0.0, 0.0], vec![1.0, 1.0]];
        let m = FeatureMatrix::from_numeric(Matrix::from_rows(&rows).unwrap());
        let out = smote(&m, &[0, 0, 0, 1, 1], 1, 1).unwrap();
        assert_eq!(out.synthetic.len(), 1);
        let row = out.matrix.row(5);
        assert_eq!(row[0], row[1]);
        assert!((0.0..=1.0).contains(&row[0]));
    }

    #[test]
    fn smote_counts_and_error() {
        let mut r = rng(5);
        let m = FeatureMatrix::from_numeric(random_matrix(&mut r, 200, 3));
        let labels: Vec<usize> = (0..200).map(|i| if i < 100 { 0 } else if i < 180 { 1 } else { 2 }).collect();
        let out = smote(&m, &labels, 5, 9).unwrap();
        let mut counts = [0; 3];
        for l in &out.labels {
            counts[*l] += 1;
        }
        assert_eq!(counts, [100, 100, 100]);
        for i in 0..200 {
            assert_eq!(out.matrix.row(i), m.row(i));
        }
        let err = smote(&m, &labels, 20, 9).unwrap_err().to_string();
        assert!(err.contains("smaller k"), "{err}");
    }

    #[test]
    fn smote_snaps_indicators() {
        let cols = vec![
            ColumnMeta::numeric("x"),
            ColumnMeta::new("c=A", ColumnKind::OneHot, "c"),
            ColumnMeta::new("c=B", ColumnKind::OneHot, "c"),
            ColumnMeta::new("flag", ColumnKind::Binary, "flag"),
        ];
        let rows = vec![
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 1.0, 1.0],
            vec![2.0, 1.0, 0.0, 1.0],
            vec![9.0, 1.0, 0.0, 0.0],
            vec![9.5, 1.0, 0.0, 0.0],
            vec![9.7, 1.0, 0.0, 0.0],
            vec![9.9, 1.0, 0.0, 0.0],
            vec![9.1, 1.0, 0.0, 0.0],
        ];
        let m = fm(cols, &rows);
        let out = smote(&m, &[0, 0, 0, 1, 1, 1, 1, 1], 2, 4).unwrap();
        for s in &out.synthetic {
            let row = out.matrix.row(s.row);
            let end = if s.gap > 0.5 { m.row(s.neighbor) } else { m.row(s.base) };
            assert_eq!(&row[1..], &end[1..]);
            assert_eq!(row[1] + row[2], 1.0);
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let bands: Vec<DurationBand> = (0..100)
            .map(|i| DurationBand::ALL[i % 3])
            .collect();
        let spec = SplitSpec { train_fraction: 0.6, test_fraction: 0.2, validation_fraction: 0.2, seed: 1 };
        let s = split_indices(&bands, &spec).unwrap();
        assert!((s.train.len() as i64 - 60).abs() <= 3);
        assert!((s.test.len() as i64 - 20).abs() <= 3);
        assert_eq!(s.train.len() + s.test.len() + s.validation.len(), 100);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(&bands, &spec).unwrap(), s);
    }

    #[test]
    fn split_is_stratified() {
        let mut r = rng(8);
        let bands: Vec<DurationBand> = (0..1000)
            .map(|_| {
                let u: f64 = r.random();
                if u < 0.45 { DurationBand::Short } else if u < 0.85 { DurationBand::Medium } else { DurationBand::Long }
            })
            .collect();
        let s = split_indices(&bands, &SplitSpec::default()).unwrap();
        let share = |idx: &[usize], b: DurationBand| idx.iter().filter(|&&i| bands[i] == b).count() as f64 / idx.len() as f64;
        let all: Vec<usize> = (0..1000).collect();
        for b in DurationBand::ALL {
            for part in [&s.train, &s.test, &s.validation] {
                assert!((share(part, b) - share(&all, b)).abs() < 0.05);
            }
        }
    }

    #[test]
    fn split_errors() {
        let bands = vec![DurationBand::Short; 9];
        assert!(split_indices(&bands, &SplitSpec::default()).is_err());
        let mut bands = vec![DurationBand::Short; 50];
        bands.push(DurationBand::Long);
        assert!(split_indices(&bands, &SplitSpec::default()).is_err());
        let bad = SplitSpec { train_fraction: 0.5, test_fraction: 0.2, validation_fraction: 0.2, seed: 0 };
        assert!(bad.validate().is_err());
    }
}
