//! Held-out evaluation of a trained framework.

use serde::{Deserialize, Serialize};

use crate::domain::{DurationBand, FeatureSetKind, IncidentRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{
    confusion, multiclass_auc, precision_recall_accuracy, regression_metrics, ClassificationSummary, ConfusionMatrix,
    MulticlassAuc, RegressionMetrics,
};
use crate::model::argmax;
use crate::pipeline::framework::{bands, durations, FrameworkModel};
use crate::report::Report;

/// Errors split by the observed band, plus the overall figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandErrors {
    /// `None` when no record of that band was evaluated.
    pub per_band: [Option<RegressionMetrics>; 3],
    pub overall: RegressionMetrics,
}

impl BandErrors {
    /// `truth` holds observed band indices.
    pub fn compute(pred: &[f64], obs: &[f64], truth: &[usize]) -> Result<Self> {
        let mut per_band = [None; 3];
        for b in DurationBand::ALL {
            let rows: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == b.index()).collect();
            if rows.is_empty() {
                continue;
            }
            let p: Vec<f64> = rows.iter().map(|&i| pred[i]).collect();
            let o: Vec<f64> = rows.iter().map(|&i| obs[i]).collect();
            per_band[b.index()] = Some(regression_metrics(&p, &o)?);
        }
        Ok(BandErrors { per_band, overall: regression_metrics(pred, obs)? })
    }

    pub fn mae(&self, band: Option<DurationBand>) -> Option<f64> {
        match band {
            Some(b) => self.per_band[b.index()].map(|m| m.mae),
            None => Some(self.overall.mae),
        }
    }

    fn push(&self, report: &mut Report, prefix: &str) {
        let mut one = |label: &str, m: Option<&RegressionMetrics>| {
            report.push(format!("{prefix}.{label}.n"), m.map_or(0, |m| m.n));
            report.push_opt_real(format!("{prefix}.{label}.mae"), m.map(|m| m.mae));
            report.push_opt_real(format!("{prefix}.{label}.mape"), m.and_then(|m| m.mape));
            report.push_opt_real(format!("{prefix}.{label}.rmse"), m.map(|m| m.rmse));
        };
        for b in DurationBand::ALL {
            one(b.label(), self.per_band[b.index()].as_ref());
        }
        one("all", Some(&self.overall));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    /// Records scored by the basic and full phases.
    pub phase_counts: [usize; 2],
    pub confusion: ConfusionMatrix,
    pub classification: ClassificationSummary,
    /// `None` when fewer than two bands are present.
    pub auc: Option<MulticlassAuc>,
    /// Routed through the predicted band.
    pub routed: BandErrors,
    /// Routed through the observed band, i.e. with a perfect classifier.
    pub oracle: BandErrors,
}

impl EvaluationReport {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.push("n", self.n);
        r.push("phase.fs1", self.phase_counts[0]);
        r.push("phase.fs2", self.phase_counts[1]);
        r.push_real("class.accuracy", self.classification.accuracy);
        r.push_real("class.macro_precision", self.classification.macro_precision);
        r.push_real("class.macro_recall", self.classification.macro_recall);
        for b in DurationBand::ALL {
            let s = &self.classification.per_class[b.index()];
            r.push_real(format!("class.{}.precision", b.label()), s.precision);
            r.push_real(format!("class.{}.recall", b.label()), s.recall);
        }
        r.push_opt_real("class.auc.macro", self.auc.as_ref().map(|a| a.macro_auc));
        for b in DurationBand::ALL {
            let v = self.auc.as_ref().and_then(|a| a.per_class[b.index()]);
            r.push_opt_real(format!("class.auc.{}", b.label()), v);
        }
        for p in DurationBand::ALL {
            for o in DurationBand::ALL {
                r.push(
                    format!("class.confusion.{}.{}", p.label(), o.label()),
                    self.confusion.counts[p.index()][o.index()],
                );
            }
        }
        self.routed.push(&mut r, "sup_mc");
        self.oracle.push(&mut r, "oracle");
        r
    }
}

/// Classifier metrics plus routed and oracle-routed errors in minutes on labelled records.
pub fn evaluate_framework(model: &FrameworkModel, records: &[IncidentRecord]) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let truth = bands(records)?;
    let obs = durations(records)?;
    let out = model.band_outputs(records)?;
    let routed_band: Vec<usize> = out.probabilities.iter().map(|p| argmax(p)).collect();
    let routed: Vec<f64> = out.minutes.iter().zip(&routed_band).map(|(m, &b)| m[b]).collect();
    let oracle: Vec<f64> = out.minutes.iter().zip(&truth).map(|(m, &b)| m[b]).collect();

    let labels: Vec<&str> = DurationBand::ALL.iter().map(|b| b.label()).collect();
    let cm = confusion(&routed_band, &truth, &labels)?;
    let classification = precision_recall_accuracy(&cm)?;
    let probs = Matrix::from_rows(&out.probabilities.iter().map(|p| p.to_vec()).collect::<Vec<_>>())?;
    let auc = multiclass_auc(&probs, &truth).ok();
    let full = out.phase.iter().filter(|&&k| k == FeatureSetKind::Full).count();
    Ok(EvaluationReport {
        n: records.len(),
        phase_counts: [records.len() - full, full],
        confusion: cm,
        classification,
        auc,
        routed: BandErrors::compute(&routed, &obs, &truth)?,
        oracle: BandErrors::compute(&oracle, &obs, &truth)?,
    })
}
