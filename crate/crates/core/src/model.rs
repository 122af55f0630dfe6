//! Shared learning-task types and the model registry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linear::{huber_fit, logistic_fit, ols_fit, tobit_fit, HuberDelta, LinearModel, TobitLimits};
use crate::matrix::Matrix;
use crate::trees::{
    cart_fit, forest_fit, gbm_fit, CategoricalEncoding, ForestConfig, ForestMode, ForestModel, GbmConfig,
    GbmLoss, GbmModel, Growth, TreeModel,
};

/// Training target: class labels `0..n_classes` or real values.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Classes { labels: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

impl<'a> Target<'a> {
    pub fn classes(labels: &'a [usize], n_classes: usize) -> Self {
        Target::Classes { labels, n_classes }
    }

    pub fn len(&self) -> usize {
        match self {
            Target::Classes { labels, .. } => labels.len(),
            Target::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Target::Classes { n_classes, .. } => Task::Classification {
                n_classes: *n_classes,
            },
            Target::Values(_) => Task::Regression,
        }
    }

    pub(crate) fn check(&self, n_rows: usize) -> Result<()> {
        if self.len() != n_rows {
            return Err(Error::invalid(format!(
                "target has {} values but the matrix has {n_rows} rows",
                self.len()
            )));
        }
        if let Target::Classes { labels, n_classes } = self {
            if *n_classes < 2 {
                return Err(Error::invalid("classification needs at least 2 classes"));
            }
            if let Some(l) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(Error::invalid(format!(
                    "label {l} out of range for {n_classes} classes"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification { n_classes: usize },
    Regression,
}

/// Model output: one probability vector per row, or one real per row.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Probabilities(Matrix),
    Values(Vec<f64>),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Probabilities(m) => m.n_rows(),
            Predictions::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of values per row (classes, or 1 for regression).
    pub fn width(&self) -> usize {
        match self {
            Predictions::Probabilities(m) => m.n_cols(),
            Predictions::Values(_) => 1,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Predictions::Values(v) => Some(v),
            Predictions::Probabilities(_) => None,
        }
    }

    pub fn probabilities(&self) -> Option<&Matrix> {
        match self {
            Predictions::Probabilities(m) => Some(m),
            Predictions::Values(_) => None,
        }
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.probabilities().map(|m| m.rows().map(argmax).collect())
    }

    /// Row values as a matrix (`n x width`).
    pub fn to_matrix(&self) -> Matrix {
        match self {
            Predictions::Probabilities(m) => m.clone(),
            Predictions::Values(v) => Matrix::from_column(v),
        }
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A model family with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Cart(ForestConfig),
    Forest { mode: ForestMode, config: ForestConfig },
    /// The loss is chosen from the target: logistic for classes, squared for values.
    Gbm(GbmConfig),
    Ols,
    /// One-vs-rest for more than two classes.
    Logistic,
    Huber(HuberDelta),
    Tobit(TobitLimits),
}

/// Short identifiers accepted by [`ModelSpec::from_id`].
pub const MODEL_IDS: &[&str] = &[
    "cart", "rf", "extra_trees", "gbm_leaf", "gbm_level", "gbm_ts", "ols", "logistic", "huber", "tobit",
];

impl ModelSpec {
    pub fn random_forest(seed: u64) -> Self {
        ModelSpec::Forest {
            mode: ForestMode::RandomForest,
            config: ForestConfig { seed, ..ForestConfig::for_mode(ForestMode::RandomForest) },
        }
    }

    pub fn extra_trees(seed: u64) -> Self {
        ModelSpec::Forest {
            mode: ForestMode::ExtraTrees,
            config: ForestConfig { seed, ..ForestConfig::for_mode(ForestMode::ExtraTrees) },
        }
    }

    /// Leaf-wise boosting.
    pub fn gbm_leaf_wise(seed: u64) -> Self {
        ModelSpec::Gbm(GbmConfig { seed, growth: Growth::LeafWise, ..Default::default() })
    }

    /// Level-wise boosting.
    pub fn gbm_level_wise(seed: u64) -> Self {
        ModelSpec::Gbm(GbmConfig { seed, growth: Growth::LevelWise, ..Default::default() })
    }

    /// Boosting with target-statistic encoding of categorical groups.
    pub fn gbm_target_statistic(seed: u64) -> Self {
        ModelSpec::Gbm(GbmConfig {
            seed,
            growth: Growth::LevelWise,
            categorical_encoding: CategoricalEncoding::TargetStatistic,
            ..Default::default()
        })
    }

    /// Builds a spec with default hyperparameters from one of [`MODEL_IDS`].
    /// `tobit` uses unbounded limits.
    pub fn from_id(id: &str, seed: u64) -> Result<Self> {
        Ok(match id {
            "cart" => ModelSpec::Cart(ForestConfig { seed, max_depth: Some(8), ..Default::default() }),
            "rf" => Self::random_forest(seed),
            "extra_trees" => Self::extra_trees(seed),
            "gbm_leaf" => Self::gbm_leaf_wise(seed),
            "gbm_level" => Self::gbm_level_wise(seed),
            "gbm_ts" => Self::gbm_target_statistic(seed),
            "ols" => ModelSpec::Ols,
            "logistic" => ModelSpec::Logistic,
            "huber" => ModelSpec::Huber(HuberDelta::Adaptive),
            "tobit" => ModelSpec::Tobit(TobitLimits::unbounded()),
            other => {
                return Err(Error::invalid(format!("unknown model `{other}`, expected one of {MODEL_IDS:?}")))
            }
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Cart(_) => "cart",
            ModelSpec::Forest { mode: ForestMode::RandomForest, .. } => "rf",
            ModelSpec::Forest { mode: ForestMode::ExtraTrees, .. } => "extra_trees",
            ModelSpec::Gbm(c) if c.categorical_encoding == CategoricalEncoding::TargetStatistic => "gbm_ts",
            ModelSpec::Gbm(c) if c.growth == Growth::LeafWise => "gbm_leaf",
            ModelSpec::Gbm(_) => "gbm_level",
            ModelSpec::Ols => "ols",
            ModelSpec::Logistic => "logistic",
            ModelSpec::Huber(_) => "huber",
            ModelSpec::Tobit(_) => "tobit",
        }
    }

    /// Copy of this spec with its random seed replaced (where it has one).
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            ModelSpec::Cart(c) | ModelSpec::Forest { config: c, .. } => c.seed = seed,
            ModelSpec::Gbm(c) => c.seed = seed,
            _ => {}
        }
        s
    }

    pub fn fit(&self, matrix: &FeatureMatrix, target: Target<'_>) -> Result<TrainedModel> {
        let need_values = |name: &str| -> Result<&[f64]> {
            match target {
                Target::Values(v) => Ok(v),
                Target::Classes { .. } => Err(Error::invalid(format!("{name} is a regression model"))),
            }
        };
        Ok(match self {
            ModelSpec::Cart(c) => TrainedModel::Tree(cart_fit(matrix, target, c)?),
            ModelSpec::Forest { mode, config } => TrainedModel::Forest(forest_fit(matrix, target, config, *mode)?),
            ModelSpec::Gbm(c) => {
                let loss = match target {
                    Target::Classes { .. } => GbmLoss::Logistic,
                    Target::Values(_) => GbmLoss::Squared,
                };
                TrainedModel::Gbm(gbm_fit(matrix, target, &GbmConfig { loss, ..*c })?)
            }
            ModelSpec::Ols => TrainedModel::Linear(ols_fit(matrix, need_values("ols")?)?),
            ModelSpec::Huber(d) => TrainedModel::Linear(huber_fit(matrix, need_values("huber")?, *d)?),
            ModelSpec::Tobit(l) => TrainedModel::Linear(tobit_fit(matrix, need_values("tobit")?, *l)?),
            ModelSpec::Logistic => match target {
                Target::Classes { labels, n_classes } => {
                    target.check(matrix.n_rows())?;
                    let classes: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };
                    let models = classes
                        .into_iter()
                        .map(|c| {
                            let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == c))).collect();
                            logistic_fit(matrix, &y)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    TrainedModel::LogisticOvr { n_classes, models }
                }
                Target::Values(_) => return Err(Error::invalid("logistic needs class labels")),
            },
        })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelSpec::from_id(s.trim(), 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    Tree(TreeModel),
    Forest(ForestModel),
    Gbm(GbmModel),
    Linear(LinearModel),
    /// One binary model for two classes, otherwise one per class (normalized).
    LogisticOvr { n_classes: usize, models: Vec<LinearModel> },
}

impl TrainedModel {
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Predictions> {
        match self {
            TrainedModel::Tree(m) => m.predict(matrix),
            TrainedModel::Forest(m) => m.predict(matrix),
            TrainedModel::Gbm(m) => m.predict(matrix),
            TrainedModel::Linear(m) => m.predict(matrix).map(Predictions::Values),
            TrainedModel::LogisticOvr { n_classes, models } => {
                let cols = models.iter().map(|m| m.predict(matrix)).collect::<Result<Vec<_>>>()?;
                let n = matrix.n_rows();
                let mut out = Matrix::zeros(n, *n_classes);
                for i in 0..n {
                    if *n_classes == 2 {
                        out.set(i, 0, 1.0 - cols[0][i]);
                        out.set(i, 1, cols[0][i]);
                    } else {
                        let z: f64 = cols.iter().map(|c| c[i]).sum();
                        for (k, c) in cols.iter().enumerate() {
                            out.set(i, k, c[i] / z);
                        }
                    }
                }
                Ok(Predictions::Probabilities(out))
            }
        }
    }

    pub fn task(&self) -> Task {
        match self {
            TrainedModel::Tree(m) => m.task,
            TrainedModel::Forest(m) => m.task,
            TrainedModel::Gbm(m) => m.task,
            TrainedModel::Linear(_) => Task::Regression,
            TrainedModel::LogisticOvr { n_classes, .. } => Task::Classification { n_classes: *n_classes },
        }
    }
}
