//! CART trees, random forests, extra trees and gradient-boosted trees.

mod builder;
mod gbm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Predictions, Target, Task};

use builder::{grow, Columns, Criterion, GrowParams, Presorted, Signal, SplitMode};
pub use gbm::{gbm_fit, CategoricalEncoding, GbmConfig, GbmLoss, GbmModel, Growth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

/// A node of a flat tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub split: Option<Split>,
    /// Class probabilities or a single real value.
    pub value: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        while let Some(s) = &self.nodes[i].split {
            i = if row[s.feature] <= s.threshold { s.left } else { s.right };
        }
        &self.nodes[i].value
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(s) = &n.split {
                depth[s.left] = depth[i] + 1;
                depth[s.right] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaxFeatures {
    All,
    Fraction(f64),
}

impl MaxFeatures {
    fn resolve(self, p: usize) -> Result<Option<usize>> {
        match self {
            MaxFeatures::All => Ok(None),
            MaxFeatures::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::invalid(format!("max_features fraction must be in (0, 1], got {f}")));
                }
                let k = (f * p as f64).floor() as usize;
                if k == 0 {
                    return Err(Error::invalid(format!(
                        "max_features {f} of {p} columns selects no columns"
                    )));
                }
                Ok(Some(k))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestMode {
    RandomForest,
    ExtraTrees,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            max_depth: Some(8),
            min_samples_leaf: 5,
            max_features: MaxFeatures::Fraction(0.3),
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// Defaults for a mode: extra trees do not bootstrap.
    pub fn for_mode(mode: ForestMode) -> Self {
        ForestConfig {
            bootstrap: mode == ForestMode::RandomForest,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::invalid("n_estimators must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::invalid("max_depth must be positive"));
        }
        Ok(())
    }
}

fn signal_parts(target: &Target<'_>) -> (Criterion, Option<Vec<f64>>) {
    match target {
        Target::Classes { n_classes, .. } => (Criterion::Gini { n_classes: *n_classes }, None),
        Target::Values(_) => (Criterion::Newton { lambda: 0.0 }, Some(vec![1.0; target.len()])),
    }
}

fn tie_key(target: &Target<'_>) -> Vec<f64> {
    match target {
        Target::Classes { labels, .. } => labels.iter().map(|&l| l as f64).collect(),
        Target::Values(v) => v.to_vec(),
    }
}

fn presort(cols: &Columns, target: &Target<'_>) -> Presorted {
    let rows: Vec<u32> = (0..cols.n_rows as u32).collect();
    Presorted::new(cols, &rows, Some(&tie_key(target)))
}

fn fit_tree(
    cols: &Columns,
    target: &Target<'_>,
    weights: &[u32],
    presorted: &Presorted,
    params: GrowParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let order = presorted.filtered(weights);
    let (_, hess) = signal_parts(target);
    let signal = match target {
        Target::Classes { labels, .. } => Signal::Classes(labels),
        Target::Values(v) => Signal::Newton {
            t: v,
            h: hess.as_deref().unwrap_or(&[]),
        },
    };
    grow(cols, &signal, weights, order, params, rng)
}

fn check_fit_inputs(matrix: &FeatureMatrix, target: &Target<'_>) -> Result<()> {
    target.check(matrix.n_rows())?;
    if matrix.n_rows() == 0 {
        return Err(Error::invalid("cannot fit a tree on zero rows"));
    }
    if matrix.matrix().as_slice().iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("feature matrix contains missing values; impute first"));
    }
    if let Target::Values(v) = target {
        if v.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("regression target contains non-finite values"));
        }
    }
    Ok(())
}

fn predict_trees(trees: &[Tree], task: Task, m: &Matrix) -> Predictions {
    let k = trees.len() as f64;
    match task {
        Task::Classification { n_classes } => {
            let mut out = Matrix::zeros(m.n_rows(), n_classes);
            for (i, row) in m.rows().enumerate() {
                let acc = out.row_mut(i);
                for t in trees {
                    for (a, v) in acc.iter_mut().zip(t.predict_row(row)) {
                        *a += v;
                    }
                }
                for a in acc.iter_mut() {
                    *a /= k;
                }
            }
            Predictions::Probabilities(out)
        }
        Task::Regression => Predictions::Values(
            m.rows()
                .map(|row| trees.iter().map(|t| t.predict_row(row)[0]).sum::<f64>() / k)
                .collect(),
        ),
    }
}

/// A single fitted CART tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub schema: Vec<String>,
    pub task: Task,
    pub tree: Tree,
}

impl TreeModel {
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Predictions> {
        matrix.check_schema(&self.schema)?;
        Ok(predict_trees(std::slice::from_ref(&self.tree), self.task, matrix.matrix()))
    }
}

/// Greedy CART on all rows and all columns, using the depth and leaf-size limits of `config`.
pub fn cart_fit(matrix: &FeatureMatrix, target: Target<'_>, config: &ForestConfig) -> Result<TreeModel> {
    config.validate()?;
    check_fit_inputs(matrix, &target)?;
    if matrix.n_rows() < 2 * config.min_samples_leaf {
        return Err(Error::invalid(format!(
            "{} rows is fewer than 2 x min_samples_leaf ({})",
            matrix.n_rows(),
            config.min_samples_leaf
        )));
    }
    let cols = Columns::from_matrix(matrix.matrix());
    let (criterion, _) = signal_parts(&target);
    let params = GrowParams {
        criterion,
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        max_leaves: None,
        max_features: None,
        split_mode: SplitMode::Best,
    };
    let weights = vec![1u32; matrix.n_rows()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(TreeModel {
        schema: matrix.column_names(),
        task: target.task(),
        tree: fit_tree(&cols, &target, &weights, &presort(&cols, &target), params, &mut rng),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub schema: Vec<String>,
    pub task: Task,
    pub mode: ForestMode,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Predictions> {
        matrix.check_schema(&self.schema)?;
        Ok(predict_trees(&self.trees, self.task, matrix.matrix()))
    }

    /// Predictions of tree `t` alone.
    pub fn predict_tree(&self, t: usize, matrix: &FeatureMatrix) -> Result<Predictions> {
        matrix.check_schema(&self.schema)?;
        Ok(predict_trees(&self.trees[t..=t], self.task, matrix.matrix()))
    }
}

/// RNG of tree `t`: one ChaCha stream per tree, so a tree does not depend on the forest size.
fn tree_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

pub fn forest_fit(
    matrix: &FeatureMatrix,
    target: Target<'_>,
    config: &ForestConfig,
    mode: ForestMode,
) -> Result<ForestModel> {
    config.validate()?;
    check_fit_inputs(matrix, &target)?;
    let n = matrix.n_rows();
    let max_features = config.max_features.resolve(matrix.n_cols())?;
    let cols = Columns::from_matrix(matrix.matrix());
    let (criterion, _) = signal_parts(&target);
    let params = GrowParams {
        criterion,
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        max_leaves: None,
        max_features,
        split_mode: match mode {
            ForestMode::RandomForest => SplitMode::Best,
            ForestMode::ExtraTrees => SplitMode::Random,
        },
    };
    let presorted = presort(&cols, &target);
    let trees = (0..config.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(config.seed, t);
            let mut weights = vec![0u32; n];
            if config.bootstrap {
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
            } else {
                weights.fill(1);
            }
            fit_tree(&cols, &target, &weights, &presorted, params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        schema: matrix.column_names(),
        task: target.task(),
        mode,
        config: *config,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, rng};
    use rand_distr::{Distribution, Normal};

    fn fm(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_numeric(Matrix::from_rows(rows).unwrap())
    }

    fn single_tree(min_leaf: usize) -> ForestConfig {
        ForestConfig {
            max_depth: None,
            min_samples_leaf: min_leaf,
            ..Default::default()
        }
    }

    /// Exhaustive split search on one feature: best Gini threshold by direct impurity evaluation.
    fn brute_force_gini_split(x: &[f64], y: &[usize], k: usize) -> (f64, f64) {
        let gini = |idx: &[usize]| {
            let n = idx.len() as f64;
            let mut c = vec![0.0; k];
            for &i in idx {
                c[y[i]] += 1.0;
            }
            1.0 - c.iter().map(|v| (v / n) * (v / n)).sum::<f64>()
        };
        let mut xs = x.to_vec();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut best = (f64::NAN, f64::INFINITY);
        for w in xs.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let l: Vec<usize> = (0..x.len()).filter(|&i| x[i] <= t).collect();
            let r: Vec<usize> = (0..x.len()).filter(|&i| x[i] > t).collect();
            let imp = (l.len() as f64 * gini(&l) + r.len() as f64 * gini(&r)) / x.len() as f64;
            if imp < best.1 - 1e-12 {
                best = (t, imp);
            }
        }
        best
    }

    #[test]
    fn one_dimensional_root_split() {
        let m = fm(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let y = [0, 0, 1, 1];
        let t = cart_fit(&m, Target::classes(&y, 2), &single_tree(1)).unwrap();
        let root = t.tree.nodes[0].split.unwrap();
        assert_eq!(root.threshold, 2.5);
        assert_eq!(brute_force_gini_split(&[1.0, 2.0, 3.0, 4.0], &y, 2), (2.5, 0.0));
        assert_eq!(t.tree.n_leaves(), 2);
        let p = t.predict(&m).unwrap();
        assert_eq!(p.labels().unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn root_split_matches_exhaustive_search() {
        let mut r = rng(21);
        for _ in 0..10 {
            let x: Vec<f64> = (0..40).map(|_| (r.random::<f64>() * 20.0).floor()).collect();
            let y: Vec<usize> = x.iter().map(|&v| usize::from(v + r.random::<f64>() * 8.0 > 12.0)).collect();
            if y.iter().all(|&l| l == y[0]) {
                continue;
            }
            let m = fm(&x.iter().map(|&v| vec![v]).collect::<Vec<_>>());
            let t = cart_fit(&m, Target::classes(&y, 2), &single_tree(1)).unwrap();
            let (bt, _) = brute_force_gini_split(&x, &y, 2);
            assert_eq!(t.tree.nodes[0].split.unwrap().threshold, bt);
        }
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let m = fm(&[vec![1.0], vec![5.0], vec![3.0]]);
        let t = cart_fit(&m, Target::Values(&[7.0, 7.0, 7.0]), &single_tree(1)).unwrap();
        assert_eq!(t.tree.nodes.len(), 1);
        assert_eq!(t.predict(&m).unwrap().values().unwrap(), &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn identical_rows_give_half_probabilities() {
        let m = fm(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        let t = cart_fit(&m, Target::classes(&[0, 1], 2), &single_tree(1)).unwrap();
        assert_eq!(t.tree.nodes.len(), 1);
        assert_eq!(t.tree.nodes[0].value, vec![0.5, 0.5]);
    }

    #[test]
    fn cart_needs_enough_rows() {
        let m = fm(&[vec![1.0], vec![2.0], vec![3.0]]);
        assert!(cart_fit(&m, Target::Values(&[1.0, 2.0, 3.0]), &single_tree(2)).is_err());
    }

    #[test]
    fn tree_node_invariants() {
        let mut r = rng(2);
        let x = random_matrix(&mut r, 300, 4);
        let y: Vec<f64> = x.rows().map(|row| row[0] * 3.0 + row[1].sin()).collect();
        let t = cart_fit(&FeatureMatrix::from_numeric(x), Target::Values(&y), &ForestConfig::default()).unwrap();
        for n in &t.tree.nodes {
            if let Some(s) = n.split {
                let (l, r) = (&t.tree.nodes[s.left], &t.tree.nodes[s.right]);
                assert_eq!(n.n_samples, l.n_samples + r.n_samples);
                assert!(l.n_samples >= 5 && r.n_samples >= 5);
            }
        }
        assert!(t.tree.depth() <= 8);
    }

    #[test]
    fn degenerate_forest_equals_cart() {
        let mut r = rng(4);
        let x = FeatureMatrix::from_numeric(random_matrix(&mut r, 120, 5));
        let y: Vec<f64> = x.matrix().rows().map(|row| row[0] - 2.0 * row[3]).collect();
        let cfg = ForestConfig {
            n_estimators: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Default::default()
        };
        let f = forest_fit(&x, Target::Values(&y), &cfg, ForestMode::RandomForest).unwrap();
        let t = cart_fit(&x, Target::Values(&y), &cfg).unwrap();
        assert_eq!(f.predict(&x).unwrap(), t.predict(&x).unwrap());
    }

    #[test]
    fn forest_is_mean_of_trees() {
        let mut r = rng(5);
        let x = FeatureMatrix::from_numeric(random_matrix(&mut r, 150, 4));
        let y: Vec<usize> = x.matrix().rows().map(|row| usize::from(row[0] + row[1] > 0.0) + usize::from(row[2] > 0.5)).collect();
        let cfg = ForestConfig { n_estimators: 7, ..Default::default() };
        let f = forest_fit(&x, Target::classes(&y, 3), &cfg, ForestMode::ExtraTrees).unwrap();
        let p = f.predict(&x).unwrap();
        let p = p.probabilities().unwrap();
        // Oracle: explicit per-tree loop.
        for i in 0..x.n_rows() {
            let mut acc = [0.0; 3];
            for t in 0..7 {
                let pt = f.predict_tree(t, &x).unwrap();
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += pt.probabilities().unwrap().get(i, c);
                }
            }
            for (c, a) in acc.iter().enumerate() {
                assert!((p.get(i, c) - a / 7.0).abs() < 1e-12);
            }
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forest_deterministic_and_prefix_stable() {
        let mut r = rng(6);
        let x = FeatureMatrix::from_numeric(random_matrix(&mut r, 100, 6));
        let y: Vec<f64> = x.matrix().rows().map(|row| row.iter().sum()).collect();
        let cfg = ForestConfig { n_estimators: 5, ..Default::default() };
        let a = forest_fit(&x, Target::Values(&y), &cfg, ForestMode::RandomForest).unwrap();
        let b = forest_fit(&x, Target::Values(&y), &cfg, ForestMode::RandomForest).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = forest_fit(&x, Target::Values(&y), &ForestConfig { n_estimators: 4, ..cfg }, ForestMode::RandomForest).unwrap();
        assert_eq!(&a.trees[..4], &c.trees[..]);
    }

    #[test]
    fn forest_beats_single_tree_on_training_accuracy() {
        let mut r = rng(7);
        let d = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..500 {
            let c = i % 2;
            let shift = if c == 0 { -0.8 } else { 0.8 };
            rows.push(vec![d.sample(&mut r) + shift, d.sample(&mut r) + shift]);
            y.push(c);
        }
        let x = fm(&rows);
        let acc = |p: Predictions| {
            p.labels().unwrap().iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 500.0
        };
        let cfg = ForestConfig { n_estimators: 50, max_features: MaxFeatures::All, ..Default::default() };
        let single = cart_fit(&x, Target::classes(&y, 2), &cfg).unwrap();
        let forest = forest_fit(&x, Target::classes(&y, 2), &cfg, ForestMode::RandomForest).unwrap();
        assert!(acc(forest.predict(&x).unwrap()) >= acc(single.predict(&x).unwrap()));
    }

    #[test]
    fn max_features_zero_is_an_error() {
        let x = fm(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 0.0]]);
        let cfg = ForestConfig { max_features: MaxFeatures::Fraction(0.3), min_samples_leaf: 1, ..Default::default() };
        let err = forest_fit(&x, Target::Values(&[1.0, 2.0, 3.0]), &cfg, ForestMode::RandomForest).unwrap_err();
        assert!(err.to_string().contains("selects no columns"));
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let x = fm(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let t = cart_fit(&x, Target::Values(&[1.0, 2.0]), &single_tree(1)).unwrap();
        let other = x.select_columns(&[0]);
        assert!(matches!(t.predict(&other), Err(Error::SchemaMismatch { .. })));
    }
}
