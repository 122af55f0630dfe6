//! Run configuration: a `key = value` file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use incident_duration::domain::FeatureSetKind;
use incident_duration::pipeline::{FrameworkConfig, RegressorSpec};
use incident_duration::report::Report;
use idur_service::ActionPolicy;

use crate::CliError;

pub const KEYS: &[&str] = &[
    "data",
    "model",
    "out",
    "report",
    "enrichment",
    "features",
    "seed",
    "n",
    "train_fraction",
    "test_fraction",
    "validation_fraction",
    "correlation_threshold",
    "smote_k",
    "classifier",
    "regressor.short",
    "regressor.medium",
    "regressor.long",
    "retrain_on_union",
    "unsup_k",
    "bind",
    "detour_overhead_minutes",
];

/// Raw settings by key; later values override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: Vec<(String, String)>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn parse_features(s: &str) -> Result<FeatureSetKind, CliError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "fs1" | "basic" => Ok(FeatureSetKind::Basic),
        "fs2" | "full" => Ok(FeatureSetKind::Full),
        other => Err(usage(format!("features must be fs1 or fs2, got `{other}`"))),
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let report = Report::parse(text).map_err(|e| usage(format!("config: {e}")))?;
        let unknown: Vec<&str> = report.keys().filter(|k| !KEYS.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(usage(format!("config: unknown keys {unknown:?}")));
        }
        Ok(RunConfig { entries: report.entries().to_vec() })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Overrides `key` when the flag was given.
    pub fn set(&mut self, key: &str, value: Option<impl ToString>) {
        debug_assert!(KEYS.contains(&key), "{key}");
        if let Some(v) = value {
            self.entries.push((key.to_string(), v.to_string()));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key).ok_or_else(|| usage(format!("--{key} is required (flag or config key `{key}`)")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| usage(format!("`{key}` has an invalid value `{v}`"))))
            .transpose()
    }

    pub fn seed(&self) -> Result<Option<u64>, CliError> {
        self.parsed("seed")
    }

    pub fn n_records(&self) -> Result<Option<usize>, CliError> {
        self.parsed("n")
    }

    pub fn policy(&self) -> Result<ActionPolicy, CliError> {
        let mut p = ActionPolicy::default();
        if let Some(v) = self.parsed::<f64>("detour_overhead_minutes")? {
            if !(v.is_finite() && v >= 0.0) {
                return Err(usage("detour_overhead_minutes must be a non-negative number"));
            }
            p.detour_overhead_minutes = v;
        }
        Ok(p)
    }

    /// Framework settings, validated.
    pub fn framework(&self) -> Result<FrameworkConfig, CliError> {
        let mut c = FrameworkConfig::default();
        if let Some(f) = self.get("features") {
            c.feature_set = parse_features(f)?;
        }
        if let Some(s) = self.seed()? {
            c.seed = s;
        }
        if let Some(v) = self.parsed("train_fraction")? {
            c.split.train_fraction = v;
        }
        if let Some(v) = self.parsed("test_fraction")? {
            c.split.test_fraction = v;
        }
        if let Some(v) = self.parsed("validation_fraction")? {
            c.split.validation_fraction = v;
        }
        if let Some(v) = self.parsed("correlation_threshold")? {
            c.correlation_threshold = v;
        }
        if let Some(v) = self.parsed("smote_k")? {
            c.smote_k = v;
        }
        if let Some(v) = self.get("classifier") {
            c.classifier = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        for (i, band) in ["short", "medium", "long"].iter().enumerate() {
            if let Some(v) = self.get(&format!("regressor.{band}")) {
                c.regressors[i] = v.parse::<RegressorSpec>().map_err(|e| usage(format!("regressor.{band}: {e}")))?;
            }
        }
        if let Some(v) = self.parsed("retrain_on_union")? {
            c.retrain_on_union = v;
        }
        if let Some(v) = self.get("unsup_k") {
            c.unsup_k = match v.trim() {
                "auto" => None,
                k => Some(k.parse().map_err(|_| usage(format!("`unsup_k` must be a count or `auto`, got `{k}`")))?),
            };
        }
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}
