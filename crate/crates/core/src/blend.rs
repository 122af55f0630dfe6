//! Holdout blending: base models fit on a training split, a linear meta-learner
//! fit on their holdout predictions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linear::{logistic_fit, ols_fit, LinearModel};
use crate::matrix::Matrix;
use crate::metrics::{multiclass_auc, regression_metrics};
use crate::model::{ModelSpec, Predictions, Target, Task, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetaKind {
    /// One-vs-rest logistic over stacked class probabilities.
    Logistic,
    /// Least squares over predicted values.
    Ols,
}

impl MetaKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification { .. } => MetaKind::Logistic,
            Task::Regression => MetaKind::Ols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendSpec {
    pub bases: Vec<ModelSpec>,
    pub meta: MetaKind,
    pub retrain_on_union: bool,
}

impl BlendSpec {
    pub fn new(bases: Vec<ModelSpec>, meta: MetaKind) -> Self {
        BlendSpec { bases, meta, retrain_on_union: true }
    }

    /// Random forest, extra trees and leaf-wise boosting under a logistic meta.
    pub fn default_classifier(seed: u64) -> Self {
        BlendSpec::new(
            vec![
                ModelSpec::random_forest(seed),
                ModelSpec::extra_trees(seed.wrapping_add(1)),
                ModelSpec::gbm_leaf_wise(seed.wrapping_add(2)),
            ],
            MetaKind::Logistic,
        )
    }

    pub fn ids(&self) -> Vec<&'static str> {
        self.bases.iter().map(ModelSpec::id).collect()
    }

    fn validate(&self, task: Task) -> Result<()> {
        if self.bases.is_empty() {
            return Err(Error::invalid("a blend needs at least one base model"));
        }
        if self.meta != MetaKind::for_task(task) {
            return Err(Error::invalid(format!("meta {:?} does not fit a {task:?} target", self.meta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Meta {
    Ols(LinearModel),
    /// One model per class; outputs are renormalized to sum to 1.
    Logistic(Vec<LinearModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendedModel {
    pub schema: Vec<String>,
    pub task: Task,
    pub base_ids: Vec<String>,
    pub bases: Vec<TrainedModel>,
    pub meta: Meta,
}

impl BlendedModel {
    /// Number of meta inputs: the sum of base output widths.
    pub fn meta_width(&self) -> usize {
        match &self.meta {
            Meta::Ols(m) => m.weights.len(),
            Meta::Logistic(ms) => ms[0].weights.len(),
        }
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Predictions> {
        blend_predict(self, matrix)
    }

    /// Stacked base outputs for `matrix`.
    pub fn meta_features(&self, matrix: &FeatureMatrix) -> Result<Matrix> {
        matrix.check_schema(&self.schema)?;
        stack(&self.bases, matrix)
    }
}

fn stack(bases: &[TrainedModel], matrix: &FeatureMatrix) -> Result<Matrix> {
    let preds = bases.par_iter().map(|b| b.predict(matrix)).collect::<Result<Vec<_>>>()?;
    let mut out = preds[0].to_matrix();
    for p in &preds[1..] {
        out = out.hstack(&p.to_matrix())?;
    }
    Ok(out)
}

fn meta_names(bases: &[TrainedModel], ids: &[String]) -> Vec<String> {
    let mut names = Vec::new();
    for (b, id) in bases.iter().zip(ids) {
        match b.task() {
            Task::Classification { n_classes } => {
                names.extend((0..n_classes).map(|c| format!("{id}:p{c}")));
            }
            Task::Regression => names.push(id.clone()),
        }
    }
    // Duplicate base ids still need distinct column names.
    names.iter().enumerate().map(|(i, n)| format!("m{i}.{n}")).collect()
}

fn fit_bases(specs: &[ModelSpec], matrix: &FeatureMatrix, target: Target<'_>) -> Result<Vec<TrainedModel>> {
    specs.par_iter().map(|s| s.fit(matrix, target)).collect()
}

fn union_target<'a>(a: Target<'a>, b: Target<'a>, labels: &'a mut Vec<usize>, values: &'a mut Vec<f64>) -> Target<'a> {
    match (a, b) {
        (Target::Classes { labels: la, n_classes }, Target::Classes { labels: lb, .. }) => {
            labels.extend_from_slice(la);
            labels.extend_from_slice(lb);
            Target::Classes { labels, n_classes }
        }
        (Target::Values(va), Target::Values(vb)) => {
            values.extend_from_slice(va);
            values.extend_from_slice(vb);
            Target::Values(values)
        }
        _ => unreachable!("target kinds are checked before this point"),
    }
}

/// Fits a blend. Bases are fit on `train` (concurrently), the meta on their
/// `holdout` predictions; with `retrain_on_union` the bases are then refit on
/// both splits while the meta stays fixed.
pub fn blend_fit(
    train: &FeatureMatrix,
    train_target: Target<'_>,
    holdout: &FeatureMatrix,
    holdout_target: Target<'_>,
    spec: &BlendSpec,
) -> Result<BlendedModel> {
    let task = train_target.task();
    if holdout_target.task() != task {
        return Err(Error::invalid("train and holdout targets differ in kind"));
    }
    spec.validate(task)?;
    holdout.check_schema(&train.column_names())?;
    holdout_target.check(holdout.n_rows())?;
    let needed = 10 * spec.bases.len();
    if holdout.n_rows() < needed {
        return Err(Error::invalid(format!(
            "holdout has {} rows but {} base models need at least {needed}",
            holdout.n_rows(),
            spec.bases.len()
        )));
    }
    if let Target::Classes { labels, n_classes } = holdout_target {
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        let present = seen.iter().filter(|&&s| s).count();
        if present < 2 {
            return Err(Error::invalid("degenerate holdout: only one class present"));
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid(format!("holdout has no rows of class {c}")));
        }
    }

    let mut bases = fit_bases(&spec.bases, train, train_target)?;
    let base_ids: Vec<String> = spec.bases.iter().map(|s| s.id().to_string()).collect();
    let z = stack(&bases, holdout)?;
    let zm = FeatureMatrix::new(
        meta_names(&bases, &base_ids).into_iter().map(crate::domain::ColumnMeta::numeric).collect(),
        z,
        None,
    )?;
    let meta = match holdout_target {
        Target::Values(y) => Meta::Ols(ols_fit(&zm, y)?),
        Target::Classes { labels, n_classes } => Meta::Logistic(
            (0..n_classes)
                .map(|c| {
                    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == c))).collect();
                    logistic_fit(&zm, &y)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    if spec.retrain_on_union {
        let all = train.vstack(holdout)?;
        let (mut l, mut v) = (Vec::new(), Vec::new());
        let t = union_target(train_target, holdout_target, &mut l, &mut v);
        bases = fit_bases(&spec.bases, &all, t)?;
    }

    Ok(BlendedModel { schema: train.column_names(), task, base_ids, bases, meta })
}

pub fn blend_predict(model: &BlendedModel, matrix: &FeatureMatrix) -> Result<Predictions> {
    let z = model.meta_features(matrix)?;
    match &model.meta {
        Meta::Ols(m) => Ok(Predictions::Values(m.predict_matrix(&z))),
        Meta::Logistic(ms) => {
            let cols: Vec<Vec<f64>> = ms.iter().map(|m| m.predict_matrix(&z)).collect();
            let mut out = Matrix::zeros(z.n_rows(), ms.len());
            for i in 0..z.n_rows() {
                let s: f64 = cols.iter().map(|c| c[i]).sum();
                for (k, c) in cols.iter().enumerate() {
                    out.set(i, k, c[i] / s);
                }
            }
            Ok(Predictions::Probabilities(out))
        }
    }
}

/// A scored candidate in a top-k selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChoice {
    pub ids: Vec<&'static str>,
    /// Macro AUC for classification, MAE for regression.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Choice {
    Single(ModelSpec),
    Blend(BlendSpec),
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Single models, best first.
    pub ranking: Vec<ScoredChoice>,
    /// Blends of the top k, for each k tried.
    pub blends: Vec<ScoredChoice>,
    pub best: Choice,
    pub best_score: f64,
}

fn score(pred: &Predictions, target: Target<'_>) -> Result<f64> {
    match target {
        Target::Classes { labels, .. } => {
            let p = pred.probabilities().ok_or_else(|| Error::invalid("expected probabilities"))?;
            Ok(multiclass_auc(p, labels)?.macro_auc)
        }
        Target::Values(y) => {
            let v = pred.values().ok_or_else(|| Error::invalid("expected values"))?;
            Ok(regression_metrics(v, y)?.mae)
        }
    }
}

/// Ranks `candidates` by holdout score, blends the top k for each `k` in `ks`
/// (skipping k larger than the candidate count), and picks the best single or
/// blended model by the same holdout score. Ties favour fewer models.
pub fn select_top_k(
    train: &FeatureMatrix,
    train_target: Target<'_>,
    holdout: &FeatureMatrix,
    holdout_target: Target<'_>,
    candidates: &[ModelSpec],
    ks: &[usize],
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate models"));
    }
    let higher_better = matches!(holdout_target, Target::Classes { .. });
    let better = |a: f64, b: f64| if higher_better { a > b } else { a < b };
    let fitted = fit_bases(candidates, train, train_target)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for (i, m) in fitted.iter().enumerate() {
        scored.push((i, score(&m.predict(holdout)?, holdout_target)?));
    }
    // Stable sort keeps candidate order among equal scores.
    scored.sort_by(|a, b| {
        let o = a.1.total_cmp(&b.1);
        if higher_better { o.reverse() } else { o }
    });
    let ranking: Vec<ScoredChoice> =
        scored.iter().map(|&(i, s)| ScoredChoice { ids: vec![candidates[i].id()], score: s }).collect();
    let mut best = Choice::Single(candidates[scored[0].0].clone());
    let mut best_score = scored[0].1;

    let mut blends = Vec::new();
    for &k in ks {
        if k < 2 || k > candidates.len() {
            continue;
        }
        let spec = BlendSpec {
            bases: scored[..k].iter().map(|&(i, _)| candidates[i].clone()).collect(),
            meta: MetaKind::for_task(train_target.task()),
            retrain_on_union: false,
        };
        let model = blend_fit(train, train_target, holdout, holdout_target, &spec)?;
        let s = score(&blend_predict(&model, holdout)?, holdout_target)?;
        blends.push(ScoredChoice { ids: spec.ids(), score: s });
        if better(s, best_score) {
            best_score = s;
            best = Choice::Blend(BlendSpec { retrain_on_union: true, ..spec });
        }
    }
    Ok(Selection { ranking, blends, best, best_score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, rng};
    use crate::trees::ForestConfig;
    use rand::Rng;

    fn sse(p: &[f64], y: &[f64]) -> f64 {
        p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn regression_data(seed: u64, n: usize) -> (FeatureMatrix, Vec<f64>) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, n, 4);
        let y = x
            .rows()
            .map(|row| 2.0 * row[0] - row[1] + (3.0 * row[2]).sin() + 0.2 * r.random_range(-1.0..1.0))
            .collect();
        (FeatureMatrix::from_numeric(x), y)
    }

    fn small_forest(seed: u64) -> ModelSpec {
        small(ModelSpec::random_forest(seed))
    }

    fn small(mut s: ModelSpec) -> ModelSpec {
        if let ModelSpec::Forest { config, .. } = &mut s {
            *config = ForestConfig { n_estimators: 20, max_features: crate::trees::MaxFeatures::All, ..*config };
        }
        s
    }

    #[test]
    fn calibrated_single_base_gets_unit_weight() {
        // OLS as the base on data that is exactly linear: holdout predictions equal the truth.
        let mut r = rng(3);
        let x = random_matrix(&mut r, 300, 3);
        let y: Vec<f64> = x.rows().map(|row| 1.0 + row[0] - 2.0 * row[1] + 0.5 * row[2]).collect();
        let x = FeatureMatrix::from_numeric(x);
        let tr: Vec<usize> = (0..200).collect();
        let ho: Vec<usize> = (200..300).collect();
        let spec = BlendSpec { bases: vec![ModelSpec::Ols], meta: MetaKind::Ols, retrain_on_union: false };
        let m = blend_fit(
            &x.select_rows(&tr),
            Target::Values(&y[..200]),
            &x.select_rows(&ho),
            Target::Values(&y[200..]),
            &spec,
        )
        .unwrap();
        let Meta::Ols(meta) = &m.meta else { panic!() };
        assert!((meta.weights[0] - 1.0).abs() < 1e-9, "{:?}", meta.weights);
        assert!(meta.intercept.abs() < 1e-9);
    }

    #[test]
    fn duplicate_bases_share_weight() {
        let (x, y) = regression_data(5, 300);
        let tr: Vec<usize> = (0..200).collect();
        let ho: Vec<usize> = (200..300).collect();
        let spec = BlendSpec { bases: vec![small_forest(1), small_forest(1)], meta: MetaKind::Ols, retrain_on_union: false };
        let m = blend_fit(
            &x.select_rows(&tr),
            Target::Values(&y[..200]),
            &x.select_rows(&ho),
            Target::Values(&y[200..]),
            &spec,
        )
        .unwrap();
        let Meta::Ols(meta) = &m.meta else { panic!() };
        assert!((meta.weights[0] - meta.weights[1]).abs() < 1e-6, "{:?}", meta.weights);
        assert_eq!(m.meta_width(), 2);
    }

    #[test]
    fn blend_sse_is_no_worse_than_any_base() {
        let (x, y) = regression_data(8, 400);
        let tr: Vec<usize> = (0..250).collect();
        let ho: Vec<usize> = (250..400).collect();
        let (xt, xh) = (x.select_rows(&tr), x.select_rows(&ho));
        let bases = vec![small_forest(2), ModelSpec::Ols, ModelSpec::Huber(crate::linear::HuberDelta::Adaptive)];
        let spec = BlendSpec { bases: bases.clone(), meta: MetaKind::Ols, retrain_on_union: false };
        let m = blend_fit(&xt, Target::Values(&y[..250]), &xh, Target::Values(&y[250..]), &spec).unwrap();
        let blended = sse(blend_predict(&m, &xh).unwrap().values().unwrap(), &y[250..]);
        for b in &m.bases {
            let s = sse(b.predict(&xh).unwrap().values().unwrap(), &y[250..]);
            assert!(blended <= s * (1.0 + 1e-9), "{blended} > {s}");
        }
        // Refitting on the union must not change the meta.
        let refit = blend_fit(&xt, Target::Values(&y[..250]), &xh, Target::Values(&y[250..]), &BlendSpec { retrain_on_union: true, ..spec }).unwrap();
        assert_eq!(refit.meta, m.meta);
        assert_ne!(refit.bases, m.bases);
    }

    #[test]
    fn unit_meta_weight_passes_first_base_through() {
        let (x, y) = regression_data(9, 200);
        let tr: Vec<usize> = (0..150).collect();
        let ho: Vec<usize> = (150..200).collect();
        let spec = BlendSpec { bases: vec![ModelSpec::Ols, small_forest(4)], meta: MetaKind::Ols, retrain_on_union: false };
        let mut m =
            blend_fit(&x.select_rows(&tr), Target::Values(&y[..150]), &x.select_rows(&ho), Target::Values(&y[150..]), &spec)
                .unwrap();
        if let Meta::Ols(meta) = &mut m.meta {
            meta.weights = vec![1.0, 0.0];
            meta.intercept = 0.0;
        }
        let direct = m.bases[0].predict(&x).unwrap();
        assert_eq!(blend_predict(&m, &x).unwrap(), direct);
    }

    fn class_data(seed: u64, n: usize) -> (FeatureMatrix, Vec<usize>) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, n, 3);
        let labels = x
            .rows()
            .map(|row| {
                let s = row[0] + 0.5 * row[1] + 0.3 * r.random_range(-1.0..1.0);
                if s < -0.4 { 0 } else if s < 0.4 { 1 } else { 2 }
            })
            .collect();
        (FeatureMatrix::from_numeric(x), labels)
    }

    #[test]
    fn classification_blend_outputs_probabilities() {
        let (x, l) = class_data(11, 300);
        let tr: Vec<usize> = (0..200).collect();
        let ho: Vec<usize> = (200..300).collect();
        let spec = BlendSpec::new(vec![small_forest(1), ModelSpec::Logistic], MetaKind::Logistic);
        let m = blend_fit(&x.select_rows(&tr), Target::classes(&l[..200], 3), &x.select_rows(&ho), Target::classes(&l[200..], 3), &spec)
            .unwrap();
        assert_eq!(m.meta_width(), 6);
        let p = blend_predict(&m, &x).unwrap();
        for row in p.probabilities().unwrap().rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let auc = multiclass_auc(p.probabilities().unwrap(), &l).unwrap().macro_auc;
        assert!(auc > 0.8, "{auc}");
    }

    #[test]
    fn rejects_degenerate_holdouts() {
        let (x, l) = class_data(12, 100);
        let spec = BlendSpec::new(vec![ModelSpec::Logistic], MetaKind::Logistic);
        let single = vec![1usize; 40];
        let tr: Vec<usize> = (0..60).collect();
        let ho: Vec<usize> = (60..100).collect();
        let e = blend_fit(&x.select_rows(&tr), Target::classes(&l[..60], 3), &x.select_rows(&ho), Target::classes(&single, 3), &spec);
        assert!(e.unwrap_err().to_string().contains("one class"));
        let big = BlendSpec::new(vec![ModelSpec::Logistic; 5], MetaKind::Logistic);
        let e = blend_fit(&x.select_rows(&tr), Target::classes(&l[..60], 3), &x.select_rows(&ho), Target::classes(&l[60..], 3), &big);
        assert!(e.unwrap_err().to_string().contains("at least 50"));
        let wrong = BlendSpec::new(vec![ModelSpec::Logistic], MetaKind::Ols);
        assert!(blend_fit(&x.select_rows(&tr), Target::classes(&l[..60], 3), &x.select_rows(&ho), Target::classes(&l[60..], 3), &wrong).is_err());
    }

    #[test]
    fn blend_fit_is_deterministic() {
        let (x, l) = class_data(13, 240);
        let tr: Vec<usize> = (0..160).collect();
        let ho: Vec<usize> = (160..240).collect();
        let spec = BlendSpec::new(vec![small_forest(5), small(ModelSpec::extra_trees(6))], MetaKind::Logistic);
        let fit = || {
            blend_fit(&x.select_rows(&tr), Target::classes(&l[..160], 3), &x.select_rows(&ho), Target::classes(&l[160..], 3), &spec)
                .unwrap()
        };
        assert_eq!(fit(), fit());
    }

    #[test]
    fn top_k_selection_scores_singles_and_blends() {
        let (x, y) = regression_data(14, 400);
        let tr: Vec<usize> = (0..250).collect();
        let ho: Vec<usize> = (250..400).collect();
        let cands = vec![ModelSpec::Ols, small_forest(1), ModelSpec::Huber(crate::linear::HuberDelta::Adaptive)];
        let s = select_top_k(&x.select_rows(&tr), Target::Values(&y[..250]), &x.select_rows(&ho), Target::Values(&y[250..]), &cands, &[2, 3, 4, 5])
            .unwrap();
        assert_eq!(s.ranking.len(), 3);
        assert!(s.ranking.windows(2).all(|w| w[0].score <= w[1].score));
        assert_eq!(s.blends.len(), 2);
        let all: Vec<f64> = s.ranking.iter().chain(&s.blends).map(|c| c.score).collect();
        assert_eq!(s.best_score, all.iter().copied().fold(f64::INFINITY, f64::min));
    }
}
