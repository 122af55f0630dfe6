//! Gradient-boosted trees with squared or logistic loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::builder::{grow, Columns, Criterion, GrowParams, Presorted, Signal, SplitMode};
use super::Tree;
use crate::domain::{ColumnKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Predictions, Target, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Growth {
    /// Depth-bounded, all nodes of a level expanded.
    LevelWise,
    /// Best-gain leaf expanded first, bounded by `max_leaves`.
    LeafWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GbmLoss {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoricalEncoding {
    OneHotPassthrough,
    /// Each one-hot group collapsed to a smoothed leave-one-out target mean.
    TargetStatistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub growth: Growth,
    pub max_leaves: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub loss: GbmLoss,
    pub categorical_encoding: CategoricalEncoding,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_rounds: 200,
            learning_rate: 0.1,
            growth: Growth::LeafWise,
            max_leaves: 31,
            max_depth: 8,
            min_samples_leaf: 5,
            lambda: 0.0,
            loss: GbmLoss::Squared,
            categorical_encoding: CategoricalEncoding::OneHotPassthrough,
            seed: 0,
        }
    }
}

impl GbmConfig {
    fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(Error::invalid("n_rounds must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!("learning_rate must be in (0, 1], got {}", self.learning_rate)));
        }
        if self.max_leaves < 2 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::invalid("max_leaves >= 2, max_depth >= 1 and min_samples_leaf >= 1 are required"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        Ok(())
    }

    fn grow_params(&self) -> GrowParams {
        let (max_depth, max_leaves) = match self.growth {
            Growth::LevelWise => (Some(self.max_depth), None),
            Growth::LeafWise => (None, Some(self.max_leaves)),
        };
        GrowParams {
            criterion: Criterion::Newton { lambda: self.lambda },
            max_depth,
            min_samples_leaf: self.min_samples_leaf,
            max_leaves,
            max_features: None,
            split_mode: SplitMode::Best,
        }
    }
}

pub const TARGET_STATISTIC_PRIOR_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TsGroup {
    columns: Vec<usize>,
    /// Per category, with a final slot for rows where no column is hot.
    sums: Vec<f64>,
    counts: Vec<f64>,
}

impl TsGroup {
    fn category(&self, row: &[f64]) -> usize {
        self.columns
            .iter()
            .position(|&j| row[j] == 1.0)
            .unwrap_or(self.columns.len())
    }
}

/// Replaces one-hot groups by smoothed target means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStatisticEncoder {
    passthrough: Vec<usize>,
    groups: Vec<TsGroup>,
    prior: f64,
    prior_weight: f64,
}

impl TargetStatisticEncoder {
    /// Fits the encoder and returns the leave-one-out encoding of the training rows.
    fn fit(matrix: &FeatureMatrix, y: &[f64]) -> (Self, Matrix) {
        let prior = y.iter().sum::<f64>() / y.len() as f64;
        let passthrough: Vec<usize> = matrix
            .columns()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind != ColumnKind::OneHot)
            .map(|(j, _)| j)
            .collect();
        let mut groups: Vec<TsGroup> = matrix
            .onehot_groups()
            .into_iter()
            .map(|(_, columns)| TsGroup {
                sums: vec![0.0; columns.len() + 1],
                counts: vec![0.0; columns.len() + 1],
                columns,
            })
            .collect();
        let m = matrix.matrix();
        for (i, row) in m.rows().enumerate() {
            for g in groups.iter_mut() {
                let c = g.category(row);
                g.sums[c] += y[i];
                g.counts[c] += 1.0;
            }
        }
        let enc = TargetStatisticEncoder {
            passthrough,
            groups,
            prior,
            prior_weight: TARGET_STATISTIC_PRIOR_WEIGHT,
        };
        let a = enc.prior_weight;
        let mut data = Vec::with_capacity(m.n_rows() * enc.width());
        for (i, row) in m.rows().enumerate() {
            data.extend(enc.passthrough.iter().map(|&j| row[j]));
            for g in &enc.groups {
                let c = g.category(row);
                data.push((g.sums[c] - y[i] + a * prior) / (g.counts[c] - 1.0 + a));
            }
        }
        let encoded = Matrix::new(m.n_rows(), enc.width(), data).expect("width matches");
        (enc, encoded)
    }

    fn width(&self) -> usize {
        self.passthrough.len() + self.groups.len()
    }

    fn transform(&self, m: &Matrix) -> Matrix {
        let a = self.prior_weight;
        let mut data = Vec::with_capacity(m.n_rows() * self.width());
        for row in m.rows() {
            data.extend(self.passthrough.iter().map(|&j| row[j]));
            for g in &self.groups {
                let c = g.category(row);
                data.push((g.sums[c] + a * self.prior) / (g.counts[c] + a));
            }
        }
        Matrix::new(m.n_rows(), self.width(), data).expect("width matches")
    }
}

/// One additive model: `init + learning_rate * sum(tree outputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub init: f64,
    pub trees: Vec<Tree>,
    encoder: Option<TargetStatisticEncoder>,
    /// Training loss after each round: SSE (squared) or summed log-loss (logistic).
    pub history: Vec<f64>,
}

impl Booster {
    fn raw_scores(&self, m: &Matrix, learning_rate: f64) -> Vec<f64> {
        let encoded;
        let m = match &self.encoder {
            Some(e) => {
                encoded = e.transform(m);
                &encoded
            }
            None => m,
        };
        m.rows()
            .map(|row| {
                let mut f = self.init;
                for t in &self.trees {
                    f += learning_rate * t.predict_row(row)[0];
                }
                f
            })
            .collect()
    }
}

fn sigmoid(f: f64) -> f64 {
    1.0 / (1.0 + (-f).exp())
}

fn fit_booster(matrix: &FeatureMatrix, y: &[f64], loss: GbmLoss, config: &GbmConfig) -> Result<Booster> {
    let (encoder, x) = match config.categorical_encoding {
        CategoricalEncoding::TargetStatistic => {
            let (e, x) = TargetStatisticEncoder::fit(matrix, y);
            (Some(e), x)
        }
        CategoricalEncoding::OneHotPassthrough => (None, matrix.matrix().clone()),
    };
    let n = y.len();
    let cols = Columns::from_matrix(&x);
    let rows: Vec<u32> = (0..n as u32).collect();
    let presorted = Presorted::new(&cols, &rows, None);
    let weights = vec![1u32; n];
    let params = config.grow_params();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let init = match loss {
        GbmLoss::Squared => y.iter().sum::<f64>() / n as f64,
        GbmLoss::Logistic => {
            let p = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };
    let mut f = vec![init; n];
    let mut t = vec![0.0; n];
    let mut h = vec![1.0; n];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut history = Vec::with_capacity(config.n_rounds);
    for round in 0..config.n_rounds {
        for i in 0..n {
            match loss {
                GbmLoss::Squared => t[i] = y[i] - f[i],
                GbmLoss::Logistic => {
                    let p = sigmoid(f[i]);
                    t[i] = y[i] - p;
                    h[i] = p * (1.0 - p);
                }
            }
        }
        if t.iter().chain(&h).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { round });
        }
        let order = Presorted {
            by_feature: presorted.by_feature.clone(),
            base: presorted.base.clone(),
        };
        let tree = grow(&cols, &Signal::Newton { t: &t, h: &h }, &weights, order, params, &mut rng);
        for (i, row) in x.rows().enumerate() {
            f[i] += config.learning_rate * tree.predict_row(row)[0];
        }
        trees.push(tree);
        history.push(match loss {
            GbmLoss::Squared => y.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum(),
            GbmLoss::Logistic => y
                .iter()
                .zip(&f)
                .map(|(&yi, &fi)| {
                    // log(1 + e^f) - y f, computed stably.
                    let softplus = if fi > 0.0 { fi + (-fi).exp().ln_1p() } else { fi.exp().ln_1p() };
                    softplus - yi * fi
                })
                .sum(),
        });
    }
    Ok(Booster {
        init,
        trees,
        encoder,
        history,
    })
}

/// Boosted model; classification keeps one booster per class (one booster for two classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub schema: Vec<String>,
    pub task: Task,
    pub config: GbmConfig,
    pub boosters: Vec<Booster>,
}

impl GbmModel {
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Predictions> {
        matrix.check_schema(&self.schema)?;
        let m = matrix.matrix();
        let lr = self.config.learning_rate;
        match self.task {
            Task::Regression => Ok(Predictions::Values(self.boosters[0].raw_scores(m, lr))),
            Task::Classification { n_classes } => {
                let mut out = Matrix::zeros(m.n_rows(), n_classes);
                if n_classes == 2 {
                    for (i, s) in self.boosters[0].raw_scores(m, lr).into_iter().enumerate() {
                        let p = sigmoid(s);
                        out.set(i, 0, 1.0 - p);
                        out.set(i, 1, p);
                    }
                } else {
                    for (k, b) in self.boosters.iter().enumerate() {
                        for (i, s) in b.raw_scores(m, lr).into_iter().enumerate() {
                            out.set(i, k, sigmoid(s));
                        }
                    }
                    for i in 0..m.n_rows() {
                        let row = out.row_mut(i);
                        let z: f64 = row.iter().sum();
                        row.iter_mut().for_each(|p| *p /= z);
                    }
                }
                Ok(Predictions::Probabilities(out))
            }
        }
    }

    /// Per-round training loss of the first booster.
    pub fn training_loss(&self) -> &[f64] {
        &self.boosters[0].history
    }
}

pub fn gbm_fit(matrix: &FeatureMatrix, target: Target<'_>, config: &GbmConfig) -> Result<GbmModel> {
    config.validate()?;
    target.check(matrix.n_rows())?;
    if matrix.n_rows() < 2 * config.min_samples_leaf {
        return Err(Error::invalid(format!(
            "{} rows is fewer than 2 x min_samples_leaf ({})",
            matrix.n_rows(),
            config.min_samples_leaf
        )));
    }
    if matrix.matrix().as_slice().iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("feature matrix contains missing values; impute first"));
    }
    let boosters = match target {
        Target::Values(y) => {
            if config.loss != GbmLoss::Squared {
                return Err(Error::invalid("regression targets need squared loss"));
            }
            vec![fit_booster(matrix, y, GbmLoss::Squared, config)?]
        }
        Target::Classes { labels, n_classes } => {
            if config.loss != GbmLoss::Logistic {
                return Err(Error::invalid("class targets need logistic loss"));
            }
            let one_vs_rest = |k: usize| -> Vec<f64> { labels.iter().map(|&l| f64::from(u8::from(l == k))).collect() };
            if n_classes == 2 {
                vec![fit_booster(matrix, &one_vs_rest(1), GbmLoss::Logistic, config)?]
            } else {
                (0..n_classes)
                    .map(|k| fit_booster(matrix, &one_vs_rest(k), GbmLoss::Logistic, config))
                    .collect::<Result<Vec<_>>>()?
            }
        }
    };
    Ok(GbmModel {
        schema: matrix.column_names(),
        task: target.task(),
        config: *config,
        boosters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ColumnMeta;
    use crate::testutil::{random_matrix, rng};
    use crate::trees::{cart_fit, ForestConfig};
    use rand::Rng;

    fn regression_set(seed: u64, n: usize) -> (FeatureMatrix, Vec<f64>) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, n, 5);
        let y = x
            .rows()
            .map(|row| 3.0 * row[0] + (4.0 * row[1]).sin() + row[2] * row[3] + 0.3 * (r.random::<f64>() - 0.5))
            .collect();
        (FeatureMatrix::from_numeric(x), y)
    }

    #[test]
    fn squared_loss_sse_never_increases() {
        let (x, y) = regression_set(1, 400);
        for growth in [Growth::LeafWise, Growth::LevelWise] {
            let cfg = GbmConfig { growth, ..Default::default() };
            let m = gbm_fit(&x, Target::Values(&y), &cfg).unwrap();
            let h = m.training_loss();
            assert_eq!(h.len(), 200);
            let sst: f64 = {
                let mean = y.iter().sum::<f64>() / y.len() as f64;
                y.iter().map(|v| (v - mean) * (v - mean)).sum()
            };
            assert!(h[0] <= sst);
            for w in h.windows(2) {
                assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
            }
        }
    }

    #[test]
    fn one_full_round_equals_cart() {
        let (x, y) = regression_set(2, 200);
        let cfg = GbmConfig {
            n_rounds: 1,
            learning_rate: 1.0,
            growth: Growth::LevelWise,
            max_depth: 6,
            min_samples_leaf: 3,
            ..Default::default()
        };
        let g = gbm_fit(&x, Target::Values(&y), &cfg).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let resid: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let tcfg = ForestConfig { max_depth: Some(6), min_samples_leaf: 3, ..Default::default() };
        let t = cart_fit(&x, Target::Values(&resid), &tcfg).unwrap();
        let gp = g.predict(&x).unwrap();
        let tp = t.predict(&x).unwrap();
        for ((a, b), yi) in gp.values().unwrap().iter().zip(tp.values().unwrap()).zip(&y) {
            assert!(((yi - a) - (yi - mean - b)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_target_gives_zero_leaves() {
        let (x, _) = regression_set(3, 60);
        let y = vec![4.5; 60];
        let m = gbm_fit(&x, Target::Values(&y), &GbmConfig { n_rounds: 5, ..Default::default() }).unwrap();
        assert_eq!(m.boosters[0].init, 4.5);
        for t in &m.boosters[0].trees {
            assert!(t.nodes.iter().all(|n| n.value == vec![0.0]));
        }
    }

    #[test]
    fn non_finite_target_reports_round() {
        let (x, mut y) = regression_set(4, 40);
        y[3] = f64::INFINITY;
        assert!(matches!(
            gbm_fit(&x, Target::Values(&y), &GbmConfig::default()),
            Err(Error::NonFiniteGradient { round: 0 })
        ));
    }

    #[test]
    fn leaf_wise_respects_max_leaves() {
        let (x, y) = regression_set(5, 300);
        let m = gbm_fit(&x, Target::Values(&y), &GbmConfig { n_rounds: 3, max_leaves: 7, ..Default::default() }).unwrap();
        assert!(m.boosters[0].trees.iter().all(|t| t.n_leaves() <= 7));
        let m = gbm_fit(&x, Target::Values(&y), &GbmConfig { n_rounds: 3, growth: Growth::LevelWise, max_depth: 2, ..Default::default() }).unwrap();
        assert!(m.boosters[0].trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn multiclass_probabilities_normalized() {
        let mut r = rng(6);
        let x = random_matrix(&mut r, 300, 3);
        let labels: Vec<usize> = x.rows().map(|row| if row[0] < -0.3 { 0 } else if row[1] < 0.2 { 1 } else { 2 }).collect();
        let x = FeatureMatrix::from_numeric(x);
        let cfg = GbmConfig { n_rounds: 30, loss: GbmLoss::Logistic, ..Default::default() };
        let m = gbm_fit(&x, Target::classes(&labels, 3), &cfg).unwrap();
        let p = m.predict(&x).unwrap();
        let pm = p.probabilities().unwrap();
        for row in pm.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let acc = p.labels().unwrap().iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert!(acc > 270);
        assert!(gbm_fit(&x, Target::classes(&labels, 3), &GbmConfig::default()).is_err());
    }

    #[test]
    fn target_statistic_is_leave_one_out() {
        let cols = vec![
            ColumnMeta::new("c=A", ColumnKind::OneHot, "c"),
            ColumnMeta::new("c=B", ColumnKind::OneHot, "c"),
            ColumnMeta::numeric("x"),
        ];
        let rows = vec![
            vec![1.0, 0.0, 0.1],
            vec![1.0, 0.0, 0.2],
            vec![0.0, 1.0, 0.3],
            vec![0.0, 0.0, 0.4],
        ];
        let m = FeatureMatrix::new(cols, Matrix::from_rows(&rows).unwrap(), None).unwrap();
        let y = [2.0, 4.0, 10.0, 0.0];
        let (enc, train) = TargetStatisticEncoder::fit(&m, &y);
        let prior = 4.0;
        // Row 0 sees only row 1 of its category.
        assert!((train.get(0, 1) - (4.0 + 10.0 * prior) / (1.0 + 10.0)).abs() < 1e-12);
        // Unseen-at-fit rows use the full-category statistic.
        let test = enc.transform(m.matrix());
        assert!((test.get(0, 1) - (6.0 + 10.0 * prior) / (2.0 + 10.0)).abs() < 1e-12);
        assert_eq!(train.get(2, 0), 0.3);
    }
}
