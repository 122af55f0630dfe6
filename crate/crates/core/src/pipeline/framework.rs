//! Training and band-routed prediction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blend::{blend_fit, BlendSpec, BlendedModel, MetaKind};
use crate::domain::{band_of, DurationBand, Encoder, FeatureMatrix, FeatureSet, FeatureSetKind, IncidentRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{argmax, ModelSpec, Target, TrainedModel, MODEL_IDS};
use crate::pipeline::EnrichmentTable;
use crate::report::Report;
use crate::preprocess::{boxcox_fit, smote, split, BoxCoxTransform, CorrelationFilter, Imputer, SplitSpec};

/// Version string stamped into every trained model.
pub const MODEL_VERSION: &str = concat!("idur-", env!("CARGO_PKG_VERSION"));

/// Predicted durations are never below this many minutes.
pub const MIN_PREDICTED_MINUTES: f64 = 1.0;

/// Minimum number of training records.
pub const MIN_TRAINING_RECORDS: usize = 500;

const REGRESSION_ONLY: &[&str] = &["ols", "huber", "tobit"];

/// One model id, or several joined by `+` for a blend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub models: Vec<String>,
}

impl RegressorSpec {
    pub fn single(id: &str) -> Self {
        RegressorSpec { models: vec![id.to_string()] }
    }

    pub fn blend(ids: &[&str]) -> Self {
        RegressorSpec { models: ids.iter().map(|s| s.to_string()).collect() }
    }

    fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::invalid("a regressor needs at least one model"));
        }
        for id in &self.models {
            ModelSpec::from_id(id, 0)?;
            if id == "logistic" {
                return Err(Error::invalid("logistic cannot be used as a band regressor"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for RegressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.models.join("+"))
    }
}

impl FromStr for RegressorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = RegressorSpec { models: s.split('+').map(|p| p.trim().to_string()).collect() };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkConfig {
    /// Largest feature set used; `Full` also trains the basic phase for records
    /// whose responder details have not arrived.
    pub feature_set: FeatureSetKind,
    pub seed: u64,
    pub split: SplitSpec,
    pub correlation_threshold: f64,
    pub smote_k: usize,
    /// Base model ids of the blended band classifier.
    pub classifier: Vec<String>,
    /// Short, medium and long regressors.
    pub regressors: [RegressorSpec; 3],
    /// Refit every model on train and holdout before returning it.
    pub retrain_on_union: bool,
    /// Cluster count of the unsupervised comparison; `None` picks the elbow.
    pub unsup_k: Option<usize>,
}

impl Default for FrameworkConfig {
    fn default() -> Self {
        FrameworkConfig {
            feature_set: FeatureSetKind::Full,
            seed: 42,
            split: SplitSpec::default(),
            correlation_threshold: 0.4,
            smote_k: 5,
            classifier: vec!["rf".into(), "extra_trees".into(), "gbm_leaf".into()],
            regressors: [
                RegressorSpec::blend(&["rf", "gbm_ts"]),
                RegressorSpec::blend(&["rf", "huber"]),
                RegressorSpec::single("gbm_level"),
            ],
            retrain_on_union: true,
            unsup_k: Some(4),
        }
    }
}

impl FrameworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if !(self.correlation_threshold > 0.0 && self.correlation_threshold <= 1.0) {
            return Err(Error::invalid("correlation_threshold must be in (0, 1]"));
        }
        if self.smote_k == 0 {
            return Err(Error::invalid("smote_k must be at least 1"));
        }
        if self.classifier.is_empty() {
            return Err(Error::invalid("the classifier needs at least one base model"));
        }
        for id in &self.classifier {
            ModelSpec::from_id(id, 0)?;
            if REGRESSION_ONLY.contains(&id.as_str()) {
                return Err(Error::invalid(format!("`{id}` cannot classify; use one of {MODEL_IDS:?} except {REGRESSION_ONLY:?}")));
            }
        }
        for r in &self.regressors {
            r.validate()?;
        }
        if self.unsup_k == Some(0) {
            return Err(Error::invalid("unsup_k must be at least 1"));
        }
        Ok(())
    }

    pub(crate) fn phases(&self) -> Vec<FeatureSetKind> {
        match self.feature_set {
            FeatureSetKind::Basic => vec![FeatureSetKind::Basic],
            FeatureSetKind::Full => vec![FeatureSetKind::Basic, FeatureSetKind::Full],
        }
    }

    fn classifier_spec(&self) -> Result<BlendSpec> {
        let bases = self
            .classifier
            .iter()
            .enumerate()
            .map(|(i, id)| ModelSpec::from_id(id, self.seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlendSpec { bases, meta: MetaKind::Logistic, retrain_on_union: self.retrain_on_union })
    }

    fn regressor_specs(&self, band: DurationBand) -> Result<Vec<ModelSpec>> {
        let base = self.seed.wrapping_add(10 * (band.index() as u64 + 1));
        self.regressors[band.index()]
            .models
            .iter()
            .enumerate()
            .map(|(i, id)| ModelSpec::from_id(id, base.wrapping_add(i as u64)))
            .collect()
    }
}

/// Encoder, imputer and correlation filter for one feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub kind: FeatureSetKind,
    pub encoder: Encoder,
    pub imputer: Imputer,
    pub filter: CorrelationFilter,
}

impl Preprocessor {
    pub fn fit(records: &[IncidentRecord], kind: FeatureSetKind, threshold: f64) -> Result<Self> {
        let encoder = Encoder::fit(records, &FeatureSet::of(kind))?;
        let m = encoder.transform(records)?;
        let imputer = Imputer::fit(&m)?;
        let filter = CorrelationFilter::fit(&imputer.transform(&m)?, threshold)?;
        Ok(Preprocessor { kind, encoder, imputer, filter })
    }

    /// Encoded, imputed and filtered features without a target.
    pub fn transform(&self, records: &[IncidentRecord]) -> Result<FeatureMatrix> {
        let m = self.encoder.transform(records)?;
        Ok(self.filter.transform(&self.imputer.transform(&m)?)?.without_target())
    }

    pub fn columns(&self) -> &[String] {
        &self.filter.kept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BandModel {
    Single { id: String, model: TrainedModel },
    Blend(BlendedModel),
}

impl BandModel {
    /// Predictions on the box-cox scale.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let p = match self {
            BandModel::Single { model, .. } => model.predict(x)?,
            BandModel::Blend(b) => b.predict(x)?,
        };
        p.values().map(<[f64]>::to_vec).ok_or_else(|| Error::invalid("band regressor returned probabilities"))
    }

    pub fn ids(&self) -> Vec<String> {
        match self {
            BandModel::Single { id, .. } => vec![id.clone()],
            BandModel::Blend(b) => b.base_ids.clone(),
        }
    }
}

/// Everything needed to predict from one feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    pub preprocessor: Preprocessor,
    pub classifier: BlendedModel,
    /// Indexed by `DurationBand::index`.
    pub regressors: Vec<BandModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkModel {
    pub version: String,
    pub seed: u64,
    pub config: FrameworkConfig,
    pub boxcox: BoxCoxTransform,
    /// Basic phase first, then the full phase when configured.
    pub phases: Vec<PhaseModel>,
    pub enrichment: EnrichmentTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub band: DurationBand,
    /// Short, medium, long; sums to 1.
    pub band_probabilities: [f64; 3],
    pub duration_minutes: f64,
    pub model_version: String,
    pub feature_set_used: FeatureSetKind,
}

/// Sizes and choices made while training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub n_train: usize,
    pub n_holdout: usize,
    pub n_validation: usize,
    /// Training records per true band.
    pub band_partition: [usize; 3],
    pub phases: Vec<FeatureSetKind>,
    /// Class counts after oversampling, per phase.
    pub smote_counts: Vec<[usize; 3]>,
    /// Columns removed by the correlation filter, per phase.
    pub dropped_columns: Vec<Vec<String>>,
    pub boxcox_lambda: f64,
}

impl TrainingSummary {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.push("train.n_train", self.n_train);
        r.push("train.n_holdout", self.n_holdout);
        r.push("train.n_validation", self.n_validation);
        for b in DurationBand::ALL {
            r.push(format!("train.band.{}", b.label()), self.band_partition[b.index()]);
        }
        r.push_real("train.boxcox_lambda", self.boxcox_lambda);
        for (i, kind) in self.phases.iter().enumerate() {
            let p = kind.label().to_ascii_lowercase();
            for b in DurationBand::ALL {
                r.push(format!("train.{p}.smote.{}", b.label()), self.smote_counts[i][b.index()]);
            }
            r.push(format!("train.{p}.dropped"), self.dropped_columns[i].join(","));
        }
        r
    }
}

pub(crate) fn bands(records: &[IncidentRecord]) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            r.duration_minutes
                .ok_or_else(|| Error::invalid(format!("record `{}` has no duration", r.id)))
                .and_then(band_of)
                .map(DurationBand::index)
        })
        .collect()
}

pub(crate) fn durations(records: &[IncidentRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| r.duration_minutes.ok_or_else(|| Error::invalid(format!("record `{}` has no duration", r.id))))
        .collect()
}

fn rows_of_band(labels: &[usize], band: usize) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i] == band).collect()
}

/// Train, holdout and validation splits of enriched records.
pub(crate) struct Splits {
    pub train: Vec<IncidentRecord>,
    pub holdout: Vec<IncidentRecord>,
    pub validation: Vec<IncidentRecord>,
}

pub(crate) fn prepare_splits(records: &[IncidentRecord], enrichment: &EnrichmentTable, config: &FrameworkConfig) -> Result<Splits> {
    config.validate()?;
    if records.len() < MIN_TRAINING_RECORDS {
        return Err(Error::invalid(format!(
            "need at least {MIN_TRAINING_RECORDS} labelled records, got {}",
            records.len()
        )));
    }
    let labels = bands(records)?;
    for b in DurationBand::ALL {
        if !labels.contains(&b.index()) {
            return Err(Error::invalid(format!("no training records in the {b} band")));
        }
    }
    let enriched: Vec<IncidentRecord> = records.iter().map(|r| enrichment.enrich(r)).collect();
    let (train, holdout, validation) = split(&enriched, &config.split)?;
    Ok(Splits { train, holdout, validation })
}

fn fit_band_model(
    specs: &[ModelSpec],
    x_tr: &FeatureMatrix,
    z_tr: &[f64],
    x_ho: &FeatureMatrix,
    z_ho: &[f64],
    retrain: bool,
) -> Result<BandModel> {
    if let [spec] = specs {
        let model = if retrain {
            let all = x_tr.vstack(x_ho)?;
            let z: Vec<f64> = z_tr.iter().chain(z_ho).copied().collect();
            spec.fit(&all, Target::Values(&z))?
        } else {
            spec.fit(x_tr, Target::Values(z_tr))?
        };
        return Ok(BandModel::Single { id: spec.id().to_string(), model });
    }
    let spec = BlendSpec { bases: specs.to_vec(), meta: MetaKind::Ols, retrain_on_union: retrain };
    Ok(BandModel::Blend(blend_fit(x_tr, Target::Values(z_tr), x_ho, Target::Values(z_ho), &spec)?))
}

struct PhaseFit {
    model: PhaseModel,
    smote_counts: [usize; 3],
}

fn fit_phase(kind: FeatureSetKind, s: &Splits, boxcox: &BoxCoxTransform, config: &FrameworkConfig) -> Result<PhaseFit> {
    let pre = Preprocessor::fit(&s.train, kind, config.correlation_threshold)?;
    let x_tr = pre.transform(&s.train)?;
    let x_ho = pre.transform(&s.holdout)?;
    let y_tr = bands(&s.train)?;
    let y_ho = bands(&s.holdout)?;

    let balanced = smote(&x_tr, &y_tr, config.smote_k, config.seed)?;
    let mut smote_counts = [0usize; 3];
    balanced.labels.iter().for_each(|&l| smote_counts[l] += 1);
    let classifier = blend_fit(
        &balanced.matrix,
        Target::classes(&balanced.labels, 3),
        &x_ho,
        Target::classes(&y_ho, 3),
        &config.classifier_spec()?,
    )?;

    let z_tr = boxcox.apply(&durations(&s.train)?)?;
    let z_ho = boxcox.apply(&durations(&s.holdout)?)?;
    let mut regressors = Vec::with_capacity(3);
    for band in DurationBand::ALL {
        let (rt, rh) = (rows_of_band(&y_tr, band.index()), rows_of_band(&y_ho, band.index()));
        let pick = |z: &[f64], rows: &[usize]| rows.iter().map(|&i| z[i]).collect::<Vec<_>>();
        regressors.push(fit_band_model(
            &config.regressor_specs(band)?,
            &x_tr.select_rows(&rt),
            &pick(&z_tr, &rt),
            &x_ho.select_rows(&rh),
            &pick(&z_ho, &rh),
            config.retrain_on_union,
        )?);
    }
    Ok(PhaseFit { model: PhaseModel { preprocessor: pre, classifier, regressors }, smote_counts })
}

pub(crate) fn train_on_splits(
    s: &Splits,
    enrichment: &EnrichmentTable,
    config: &FrameworkConfig,
) -> Result<(FrameworkModel, TrainingSummary)> {
    let boxcox = boxcox_fit(&durations(&s.train)?, 0.0)?;
    let mut phases = Vec::new();
    let mut smote_counts = Vec::new();
    let mut dropped = Vec::new();
    for kind in config.phases() {
        let fit = fit_phase(kind, s, &boxcox, config)?;
        dropped.push(fit.model.preprocessor.filter.dropped.clone());
        smote_counts.push(fit.smote_counts);
        phases.push(fit.model);
    }
    let mut band_partition = [0usize; 3];
    bands(&s.train)?.into_iter().for_each(|b| band_partition[b] += 1);
    let summary = TrainingSummary {
        n_train: s.train.len(),
        n_holdout: s.holdout.len(),
        n_validation: s.validation.len(),
        band_partition,
        phases: config.phases(),
        smote_counts,
        dropped_columns: dropped,
        boxcox_lambda: boxcox.lambda,
    };
    let model = FrameworkModel {
        version: MODEL_VERSION.to_string(),
        seed: config.seed,
        config: config.clone(),
        boxcox,
        phases,
        enrichment: enrichment.clone(),
    };
    Ok((model, summary))
}

/// Splits `records`, fits preprocessing on the training split, the blended band
/// classifier on the oversampled training split (meta on the holdout) and one
/// regressor per band on box-cox durations.
pub fn train_framework(
    records: &[IncidentRecord],
    enrichment: &EnrichmentTable,
    config: &FrameworkConfig,
) -> Result<(FrameworkModel, TrainingSummary)> {
    let s = prepare_splits(records, enrichment, config)?;
    train_on_splits(&s, enrichment, config)
}

/// Per-record classifier output and every band regressor's answer in minutes.
pub(crate) struct BandOutputs {
    pub probabilities: Vec<[f64; 3]>,
    /// `minutes[i][b]`: band `b`'s regressor on record `i`.
    pub minutes: Vec<[f64; 3]>,
    pub phase: Vec<FeatureSetKind>,
}

impl FrameworkModel {
    pub fn phase(&self, kind: FeatureSetKind) -> Option<&PhaseModel> {
        self.phases.iter().find(|p| p.preprocessor.kind == kind)
    }

    /// The full phase when responder details are present and it was trained.
    pub fn phase_for(&self, record: &IncidentRecord) -> &PhaseModel {
        if record.has_full_features() {
            if let Some(p) = self.phase(FeatureSetKind::Full) {
                return p;
            }
        }
        &self.phases[0]
    }

    fn to_minutes(&self, z: f64) -> f64 {
        let m = self.boxcox.inverse_one(z);
        if m.is_nan() { MIN_PREDICTED_MINUTES } else { m.max(MIN_PREDICTED_MINUTES) }
    }

    /// Validates and enriches records, then groups their indices by phase.
    fn grouped(&self, records: &[IncidentRecord]) -> Result<(Vec<IncidentRecord>, Vec<(usize, Vec<usize>)>)> {
        for r in records {
            r.validate()?;
        }
        let enriched: Vec<IncidentRecord> = records.iter().map(|r| self.enrichment.enrich(r)).collect();
        let mut groups: Vec<(usize, Vec<usize>)> = (0..self.phases.len()).map(|p| (p, Vec::new())).collect();
        for (i, r) in enriched.iter().enumerate() {
            let kind = self.phase_for(r).preprocessor.kind;
            let p = self.phases.iter().position(|ph| ph.preprocessor.kind == kind).expect("phase exists");
            groups[p].1.push(i);
        }
        groups.retain(|g| !g.1.is_empty());
        Ok((enriched, groups))
    }

    /// Encoded features of `records` for the given phase.
    pub fn encode(&self, phase: &PhaseModel, records: &[IncidentRecord]) -> Result<FeatureMatrix> {
        let enriched: Vec<IncidentRecord> = records.iter().map(|r| self.enrichment.enrich(r)).collect();
        phase.preprocessor.transform(&enriched)
    }

    /// Band probabilities from one phase's classifier.
    fn classify(phase: &PhaseModel, x: &FeatureMatrix) -> Result<Matrix> {
        let p = phase.classifier.predict(x)?;
        p.probabilities().cloned().ok_or_else(|| Error::invalid("classifier returned values"))
    }

    /// Routes each record to the regressor of its predicted band.
    pub fn predict_batch(&self, records: &[IncidentRecord]) -> Result<Vec<Prediction>> {
        let (enriched, groups) = self.grouped(records)?;
        let mut out: Vec<Option<Prediction>> = vec![None; records.len()];
        for (p, idx) in groups {
            let phase = &self.phases[p];
            let subset: Vec<IncidentRecord> = idx.iter().map(|&i| enriched[i].clone()).collect();
            let x = phase.preprocessor.transform(&subset)?;
            let probs = Self::classify(phase, &x)?;
            let routed: Vec<usize> = probs.rows().map(argmax).collect();
            for band in DurationBand::ALL {
                let rows: Vec<usize> = (0..idx.len()).filter(|&j| routed[j] == band.index()).collect();
                if rows.is_empty() {
                    continue;
                }
                let z = phase.regressors[band.index()].predict(&x.select_rows(&rows))?;
                for (&j, z) in rows.iter().zip(z) {
                    let pr = probs.row(j);
                    out[idx[j]] = Some(Prediction {
                        band,
                        band_probabilities: [pr[0], pr[1], pr[2]],
                        duration_minutes: self.to_minutes(z),
                        model_version: self.version.clone(),
                        feature_set_used: phase.preprocessor.kind,
                    });
                }
            }
        }
        Ok(out.into_iter().map(|p| p.expect("every record is routed")).collect())
    }

    pub(crate) fn band_outputs(&self, records: &[IncidentRecord]) -> Result<BandOutputs> {
        let (enriched, groups) = self.grouped(records)?;
        let n = records.len();
        let mut out = BandOutputs {
            probabilities: vec![[0.0; 3]; n],
            minutes: vec![[0.0; 3]; n],
            phase: vec![FeatureSetKind::Basic; n],
        };
        for (p, idx) in groups {
            let phase = &self.phases[p];
            let subset: Vec<IncidentRecord> = idx.iter().map(|&i| enriched[i].clone()).collect();
            let x = phase.preprocessor.transform(&subset)?;
            let probs = Self::classify(phase, &x)?;
            for (j, &i) in idx.iter().enumerate() {
                let pr = probs.row(j);
                out.probabilities[i] = [pr[0], pr[1], pr[2]];
                out.phase[i] = phase.preprocessor.kind;
            }
            for band in DurationBand::ALL {
                let z = phase.regressors[band.index()].predict(&x)?;
                for (&i, z) in idx.iter().zip(z) {
                    out.minutes[i][band.index()] = self.to_minutes(z);
                }
            }
        }
        Ok(out)
    }
}

/// Predicts one incident: classify, route to the band regressor, invert box-cox.
pub fn predict_incident(model: &FrameworkModel, record: &IncidentRecord) -> Result<Prediction> {
    Ok(model.predict_batch(std::slice::from_ref(record))?.remove(0))
}
