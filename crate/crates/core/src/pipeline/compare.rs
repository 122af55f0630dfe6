//! Side-by-side errors of the two-stage framework and its alternatives.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_scan, elbow_point, silhouette_best, ClusterScaling, Clusterer, ScanEntry};
use crate::domain::{DurationBand, FeatureMatrix, IncidentRecord};
use crate::error::{Error, Result};
use crate::linear::{tobit_fit, LinearModel, TobitLimits};
use crate::matrix::Matrix;
use crate::metrics::multiclass_auc;
use crate::model::{argmax, ModelSpec, Target, TrainedModel};
use crate::pipeline::evaluate::BandErrors;
use crate::pipeline::framework::{bands, durations, prepare_splits, train_on_splits, FrameworkConfig, FrameworkModel, Preprocessor};
use crate::pipeline::EnrichmentTable;
use crate::preprocess::BoxCoxTransform;
use crate::report::{fmt_real, Report};

/// Clusters smaller than this fall back to the global regressor.
pub const MIN_CLUSTER_ROWS: usize = 20;

/// Rows used for silhouette scores.
pub const SILHOUETTE_SAMPLE: usize = 2000;

/// Cluster counts scanned for the elbow and silhouette tables.
pub const SCAN_KS: [usize; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Framework {
    /// K-means clusters, one regressor per cluster.
    Unsup,
    /// Blended classifier routing to the band regressors.
    SupMc,
    /// Same routing, per-band censored regression.
    TobitMc,
    /// Band regressors with the observed band.
    WithClass,
    /// One regressor for every record.
    WithoutClass,
    /// One censored regression for every record.
    TobitWithoutClass,
}

impl Framework {
    pub const ALL: [Framework; 6] = [
        Framework::Unsup,
        Framework::SupMc,
        Framework::TobitMc,
        Framework::WithClass,
        Framework::WithoutClass,
        Framework::TobitWithoutClass,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Framework::Unsup => "Unsup",
            Framework::SupMc => "Sup_MC",
            Framework::TobitMc => "Tobit_MC",
            Framework::WithClass => "With_class",
            Framework::WithoutClass => "Without_class",
            Framework::TobitWithoutClass => "Tobit_without_class",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalSplit {
    Test,
    Validation,
}

impl EvalSplit {
    pub fn label(self) -> &'static str {
        match self {
            EvalSplit::Test => "test",
            EvalSplit::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub split: EvalSplit,
    pub framework: Framework,
    pub errors: BandErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    /// k used by the `Unsup` row.
    pub k: usize,
    pub standardized: Vec<ScanEntry>,
    pub raw: Vec<ScanEntry>,
    pub elbow_k: Option<usize>,
    pub silhouette_k: Option<usize>,
    /// Training rows per cluster.
    pub cluster_sizes: Vec<usize>,
    /// Clusters that used the global regressor.
    pub fallback_clusters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub clusters: ClusterDiagnostics,
    pub n_train: usize,
    /// Macro AUC of the band classifier on the test and validation splits.
    pub class_auc: [Option<f64>; 2],
    /// Bands with too few training rows for their own censored regression;
    /// `Tobit_MC` uses the global one there.
    pub tobit_fallback_bands: Vec<DurationBand>,
}

impl ComparisonReport {
    pub fn row(&self, split: EvalSplit, framework: Framework) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.split == split && r.framework == framework)
    }

    pub fn mae(&self, split: EvalSplit, framework: Framework, band: Option<DurationBand>) -> Option<f64> {
        self.row(split, framework).and_then(|r| r.errors.mae(band))
    }

    /// Percent reduction of MAE from `Without_class` to `With_class`.
    pub fn reduction_pct(&self, split: EvalSplit, band: Option<DurationBand>) -> Option<f64> {
        let with = self.mae(split, Framework::WithClass, band)?;
        let without = self.mae(split, Framework::WithoutClass, band)?;
        (without > 0.0).then(|| 100.0 * (1.0 - with / without))
    }

    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.push("compare.n_train", self.n_train);
        r.push_opt_real("compare.test.class_auc", self.class_auc[0]);
        r.push_opt_real("compare.validation.class_auc", self.class_auc[1]);
        let bands: [Option<DurationBand>; 4] = [
            Some(DurationBand::Short),
            Some(DurationBand::Medium),
            Some(DurationBand::Long),
            None,
        ];
        let label = |b: Option<DurationBand>| b.map_or("all", DurationBand::label);
        for row in &self.rows {
            let prefix = format!("compare.{}.{}", row.split.label(), row.framework.label());
            for b in bands {
                let m = match b {
                    Some(b) => row.errors.per_band[b.index()],
                    None => Some(row.errors.overall),
                };
                r.push(format!("{prefix}.{}.n", label(b)), m.map_or(0, |m| m.n));
                r.push_opt_real(format!("{prefix}.{}.mae", label(b)), m.map(|m| m.mae));
            }
        }
        for split in [EvalSplit::Test, EvalSplit::Validation] {
            for b in bands {
                r.push_opt_real(format!("compare.{}.reduction_pct.{}", split.label(), label(b)), self.reduction_pct(split, b));
            }
        }
        let c = &self.clusters;
        r.push("cluster.k", c.k);
        r.push("cluster.elbow_k", c.elbow_k.map_or("na".into(), |k| k.to_string()));
        r.push("cluster.silhouette_k", c.silhouette_k.map_or("na".into(), |k| k.to_string()));
        for (space, scan) in [("standardized", &c.standardized), ("raw", &c.raw)] {
            for e in scan {
                r.push_real(format!("cluster.{space}.k{}.inertia", e.k), e.inertia);
                r.push_opt_real(format!("cluster.{space}.k{}.silhouette", e.k), e.silhouette);
            }
        }
        for (i, n) in c.cluster_sizes.iter().enumerate() {
            r.push(format!("cluster.size.{i}"), n);
        }
        r
    }

    /// MAE table, one line per split and framework.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<11} {:<20} {:>10} {:>10} {:>10} {:>10}", "split", "framework", "short", "medium", "long", "all");
        for row in &self.rows {
            let cell = |b: Option<DurationBand>| row.errors.mae(b).map_or("na".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "{:<11} {:<20} {:>10} {:>10} {:>10} {:>10}",
                row.split.label(),
                row.framework.label(),
                cell(Some(DurationBand::Short)),
                cell(Some(DurationBand::Medium)),
                cell(Some(DurationBand::Long)),
                cell(None)
            );
        }
        for split in [EvalSplit::Test, EvalSplit::Validation] {
            let cell = |b| self.reduction_pct(split, b).map_or("na".to_string(), |v| format!("{v:.1}%"));
            let _ = writeln!(
                s,
                "{:<11} {:<20} {:>10} {:>10} {:>10} {:>10}",
                split.label(),
                "reduction",
                cell(Some(DurationBand::Short)),
                cell(Some(DurationBand::Medium)),
                cell(Some(DurationBand::Long)),
                cell(None)
            );
        }
        let _ = writeln!(s, "\nk  inertia(std)  silhouette(std)  inertia(raw)  silhouette(raw)");
        for (a, b) in self.clusters.standardized.iter().zip(&self.clusters.raw) {
            let sil = |e: &ScanEntry| e.silhouette.map_or("na".to_string(), fmt_real);
            let _ = writeln!(s, "{}  {}  {}  {}  {}", a.k, fmt_real(a.inertia), sil(a), fmt_real(b.inertia), sil(b));
        }
        s
    }
}

/// Evenly spaced row indices, at most `max` of them.
fn sample_rows(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max).collect()
}

fn to_minutes(bc: &BoxCoxTransform, z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| bc.inverse_one(v)).map(|m| if m.is_nan() { 1.0 } else { m.max(1.0) }).collect()
}

fn values(m: &TrainedModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    m.predict(x)?.values().map(<[f64]>::to_vec).ok_or_else(|| Error::invalid("expected a regressor"))
}

struct UnsupModel {
    clusterer: Clusterer,
    per_cluster: Vec<Option<TrainedModel>>,
}

fn fit_unsup(x: &FeatureMatrix, z: &[f64], k: usize, seed: u64) -> Result<UnsupModel> {
    let clusterer = Clusterer::fit(x, k, seed)?;
    let assign = clusterer.assign(x)?;
    let mut per_cluster = Vec::with_capacity(k);
    for c in 0..k {
        let rows: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == c).collect();
        if rows.len() < MIN_CLUSTER_ROWS {
            per_cluster.push(None);
            continue;
        }
        let zc: Vec<f64> = rows.iter().map(|&i| z[i]).collect();
        let spec = ModelSpec::random_forest(seed.wrapping_add(200 + c as u64));
        per_cluster.push(Some(spec.fit(&x.select_rows(&rows), Target::Values(&zc))?));
    }
    Ok(UnsupModel { clusterer, per_cluster })
}

impl UnsupModel {
    fn predict(&self, x: &FeatureMatrix, global: &TrainedModel) -> Result<Vec<f64>> {
        let assign = self.clusterer.assign(x)?;
        let mut out = values(global, x)?;
        for (c, model) in self.per_cluster.iter().enumerate() {
            let Some(model) = model else { continue };
            let rows: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == c).collect();
            if rows.is_empty() {
                continue;
            }
            for (&i, v) in rows.iter().zip(values(model, &x.select_rows(&rows))?) {
                out[i] = v;
            }
        }
        Ok(out)
    }
}

struct Baselines {
    pre: Preprocessor,
    global: TrainedModel,
    tobit_global: LinearModel,
    tobit_band: Vec<LinearModel>,
    unsup: UnsupModel,
}

fn scan_clusters(x: &FeatureMatrix, seed: u64) -> Result<(Vec<ScanEntry>, Vec<ScanEntry>)> {
    let rows = sample_rows(x.n_rows(), SILHOUETTE_SAMPLE);
    let sample = x.select_rows(&rows);
    let scaled = ClusterScaling::fit(x).apply(&sample)?;
    let standardized = cluster_scan(&scaled, &SCAN_KS, seed)?;
    let raw = cluster_scan(sample.matrix(), &SCAN_KS, seed)?;
    Ok((standardized, raw))
}

/// Trains the two-stage framework and every alternative on the same split and
/// reports MAE in minutes on the test and validation splits.
///
/// Models are not refit on train and holdout here, so the test split stays
/// unseen by every base model.
pub fn compare_frameworks(
    records: &[IncidentRecord],
    enrichment: &EnrichmentTable,
    config: &FrameworkConfig,
) -> Result<ComparisonReport> {
    let config = FrameworkConfig { retrain_on_union: false, ..config.clone() };
    let s = prepare_splits(records, enrichment, &config)?;
    let (model, _) = train_on_splits(&s, enrichment, &config)?;
    let bc = model.boxcox;

    let pre = Preprocessor::fit(&s.train, config.feature_set, config.correlation_threshold)?;
    let x_tr = pre.transform(&s.train)?;
    let z_tr = bc.apply(&durations(&s.train)?)?;
    let y_tr = bands(&s.train)?;
    let global = ModelSpec::random_forest(config.seed.wrapping_add(300)).fit(&x_tr, Target::Values(&z_tr))?;
    let lower = TobitLimits::below(bc.apply_one(1.0)?);
    let tobit_global = tobit_fit(&x_tr, &z_tr, lower)?;
    let mut tobit_band = Vec::new();
    let mut tobit_fallback_bands = Vec::new();
    for b in DurationBand::ALL {
        let rows: Vec<usize> = (0..y_tr.len()).filter(|&i| y_tr[i] == b.index()).collect();
        if rows.len() <= x_tr.n_cols() + 1 {
            tobit_fallback_bands.push(b);
            tobit_band.push(tobit_global.clone());
            continue;
        }
        let zb: Vec<f64> = rows.iter().map(|&i| z_tr[i]).collect();
        tobit_band.push(tobit_fit(&x_tr.select_rows(&rows), &zb, lower)?);
    }

    let (standardized, raw) = scan_clusters(&x_tr, config.seed)?;
    let elbow_k = elbow_point(&standardized.iter().map(|e| (e.k, e.inertia)).collect::<Vec<_>>());
    let silhouette_k = silhouette_best(&standardized);
    let k = config.unsup_k.or(elbow_k).unwrap_or(4);
    let unsup = fit_unsup(&x_tr, &z_tr, k, config.seed)?;
    let train_assign = unsup.clusterer.assign(&x_tr)?;
    let cluster_sizes: Vec<usize> = (0..k).map(|c| train_assign.iter().filter(|&&a| a == c).count()).collect();
    let fallback_clusters = (0..k).filter(|&c| unsup.per_cluster[c].is_none()).collect();
    let base = Baselines { pre, global, tobit_global, tobit_band, unsup };

    let mut rows = Vec::new();
    let mut class_auc = [None; 2];
    for (i, (split, recs)) in [(EvalSplit::Test, &s.holdout), (EvalSplit::Validation, &s.validation)].into_iter().enumerate() {
        let (r, auc) = evaluate_split(&model, &base, split, recs)?;
        rows.extend(r);
        class_auc[i] = auc;
    }
    Ok(ComparisonReport {
        rows,
        clusters: ClusterDiagnostics { k, standardized, raw, elbow_k, silhouette_k, cluster_sizes, fallback_clusters },
        n_train: s.train.len(),
        class_auc,
        tobit_fallback_bands,
    })
}

fn evaluate_split(
    model: &FrameworkModel,
    base: &Baselines,
    split: EvalSplit,
    records: &[IncidentRecord],
) -> Result<(Vec<ComparisonRow>, Option<f64>)> {
    let bc = &model.boxcox;
    let truth = bands(records)?;
    let obs = durations(records)?;
    let out = model.band_outputs(records)?;
    let routed: Vec<usize> = out.probabilities.iter().map(|p| argmax(p)).collect();
    let sup: Vec<f64> = out.minutes.iter().zip(&routed).map(|(m, &b)| m[b]).collect();
    let with: Vec<f64> = out.minutes.iter().zip(&truth).map(|(m, &b)| m[b]).collect();

    // Enrichment happened before the split, so the records can be encoded directly.
    let x = base.pre.transform(records)?;
    let without = to_minutes(bc, &values(&base.global, &x)?);
    let tobit_without = to_minutes(bc, &base.tobit_global.predict_observed(&x)?);
    let unsup = to_minutes(bc, &base.unsup.predict(&x, &base.global)?);
    let mut tobit_mc = vec![0.0; records.len()];
    for b in DurationBand::ALL {
        let rows: Vec<usize> = (0..routed.len()).filter(|&i| routed[i] == b.index()).collect();
        if rows.is_empty() {
            continue;
        }
        let z = base.tobit_band[b.index()].predict_observed(&x.select_rows(&rows))?;
        for (&i, m) in rows.iter().zip(to_minutes(bc, &z)) {
            tobit_mc[i] = m;
        }
    }

    let preds = [
        (Framework::Unsup, unsup),
        (Framework::SupMc, sup),
        (Framework::TobitMc, tobit_mc),
        (Framework::WithClass, with),
        (Framework::WithoutClass, without),
        (Framework::TobitWithoutClass, tobit_without),
    ];
    let rows = preds
        .into_iter()
        .map(|(framework, p)| Ok(ComparisonRow { split, framework, errors: BandErrors::compute(&p, &obs, &truth)? }))
        .collect::<Result<Vec<_>>>()?;
    let probs = Matrix::from_rows(&out.probabilities.iter().map(|p| p.to_vec()).collect::<Vec<_>>())?;
    Ok((rows, multiclass_auc(&probs, &truth).ok().map(|a| a.macro_auc)))
}
