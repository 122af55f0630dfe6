use serde::{Deserialize, Serialize};

use super::record::{IncidentRecord, Responder};
use super::{derive_temporal, FeatureSet};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    OneHot,
    Binary,
    Ordinal,
}

impl ColumnKind {
    /// One-hot and binary columns only take the values 0 and 1.
    pub fn is_indicator(self) -> bool {
        matches!(self, ColumnKind::OneHot | ColumnKind::Binary)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub source: String,
}

impl ColumnMeta {
    pub fn new(name: impl Into<String>, kind: ColumnKind, source: impl Into<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            kind,
            source: source.into(),
        }
    }

    pub fn numeric(name: impl Into<String>) -> Self {
        let name = name.into();
        ColumnMeta {
            source: name.clone(),
            name,
            kind: ColumnKind::Numeric,
        }
    }
}

/// Encoded numeric design matrix with column metadata and an optional target.
///
/// Missing values are `NaN` until imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    columns: Vec<ColumnMeta>,
    rows: Matrix,
    target: Option<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<ColumnMeta>, rows: Matrix, target: Option<Vec<f64>>) -> Result<Self> {
        if columns.len() != rows.n_cols() {
            return Err(Error::invalid(format!(
                "{} column descriptors for {} matrix columns",
                columns.len(),
                rows.n_cols()
            )));
        }
        if let Some(t) = &target {
            if t.len() != rows.n_rows() {
                return Err(Error::invalid(format!(
                    "target has {} entries for {} rows",
                    t.len(),
                    rows.n_rows()
                )));
            }
        }
        Ok(FeatureMatrix {
            columns,
            rows,
            target,
        })
    }

    /// All-numeric matrix with generated column names `x0, x1, ...`.
    pub fn from_numeric(rows: Matrix) -> Self {
        let columns = (0..rows.n_cols())
            .map(|j| ColumnMeta::numeric(format!("x{j}")))
            .collect();
        FeatureMatrix {
            columns,
            rows,
            target: None,
        }
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.n_cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn target(&self) -> Option<&[f64]> {
        self.target.as_deref()
    }

    pub fn with_target(mut self, target: Vec<f64>) -> Result<Self> {
        if target.len() != self.n_rows() {
            return Err(Error::invalid(format!(
                "target has {} entries for {} rows",
                target.len(),
                self.n_rows()
            )));
        }
        self.target = Some(target);
        Ok(self)
    }

    pub fn without_target(mut self) -> Self {
        self.target = None;
        self
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            columns: self.columns.clone(),
            rows: self.rows.select_rows(idx),
            target: self
                .target
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }

    pub fn select_columns(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self.rows.select_cols(idx),
            target: self.target.clone(),
        }
    }

    /// Stacks rows of two matrices with identical schemas. Targets are kept only if both have one.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.columns != other.columns {
            return Err(schema_mismatch(
                &self.column_names(),
                &other.column_names(),
            ));
        }
        let target = match (&self.target, &other.target) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(FeatureMatrix {
            columns: self.columns.clone(),
            rows: self.rows.vstack(&other.rows)?,
            target,
        })
    }

    /// Column indices of each one-hot group, keyed by source feature, in column order.
    pub fn onehot_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (j, c) in self.columns.iter().enumerate() {
            if c.kind != ColumnKind::OneHot {
                continue;
            }
            match groups.iter_mut().find(|(s, _)| *s == c.source) {
                Some((_, v)) => v.push(j),
                None => groups.push((c.source.clone(), vec![j])),
            }
        }
        groups
    }

    /// Recovers the category of every one-hot group in row `i` (`None` if no column is hot).
    pub fn decode_onehot(&self, i: usize) -> Vec<(String, Option<String>)> {
        let row = self.row(i);
        self.onehot_groups()
            .into_iter()
            .map(|(source, cols)| {
                let hot = cols.iter().find(|&&j| row[j] == 1.0).map(|&j| {
                    let name = &self.columns[j].name;
                    name.split_once('=')
                        .map_or(name.clone(), |(_, label)| label.to_string())
                });
                (source, hot)
            })
            .collect()
    }

    /// Errors unless this matrix has exactly the `expected` columns in order.
    pub fn check_schema(&self, expected: &[String]) -> Result<()> {
        let names = self.column_names();
        if names == expected {
            Ok(())
        } else {
            Err(schema_mismatch(expected, &names))
        }
    }
}

pub(crate) fn schema_mismatch(expected: &[String], actual: &[String]) -> Error {
    let missing: Vec<String> = expected
        .iter()
        .filter(|c| !actual.contains(c))
        .cloned()
        .collect();
    let mut extra: Vec<String> = actual
        .iter()
        .filter(|c| !expected.contains(c))
        .cloned()
        .collect();
    if missing.is_empty() && extra.is_empty() {
        extra.push("<column order differs>".to_string());
    }
    Error::SchemaMismatch { missing, extra }
}

#[derive(Debug, Clone, PartialEq)]
enum RawValue {
    Category { key: i64, label: String },
    Number(f64),
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SourceKind {
    OneHot,
    Binary,
    Ordinal,
    Numeric,
    Responders,
}

fn source_kind(feature: &str) -> Option<SourceKind> {
    Some(match feature {
        "tod" | "direction" | "county_region" | "city_number" | "event_type"
        | "detection_method" | "surface_type" | "terrain" => SourceKind::OneHot,
        "only_shoulders_closed" | "injuries" | "fatalities" => SourceKind::Binary,
        "dow" | "season" | "vehicles" | "trucks" | "aadt_bin" => SourceKind::Ordinal,
        "year" | "lanes" | "hourly_volume" | "surface_width" => SourceKind::Numeric,
        "responders" => SourceKind::Responders,
        _ => return None,
    })
}

fn cat(key: usize, label: &str) -> RawValue {
    RawValue::Category {
        key: key as i64,
        label: label.to_string(),
    }
}

fn flag(b: bool) -> RawValue {
    RawValue::Number(if b { 1.0 } else { 0.0 })
}

fn raw_value(r: &IncidentRecord, feature: &str) -> RawValue {
    let t = derive_temporal(&r.start_time);
    match feature {
        "tod" => cat(t.tod.index(), t.tod.label()),
        "dow" => RawValue::Number(f64::from(t.dow)),
        "season" => RawValue::Number(f64::from(t.season)),
        "year" => RawValue::Number(f64::from(t.year)),
        "direction" => cat(r.direction.index(), r.direction.label()),
        "county_region" => cat(r.county_region.index(), r.county_region.label()),
        "city_number" => RawValue::Category {
            key: i64::from(r.city_number),
            label: r.city_number.to_string(),
        },
        "event_type" => cat(r.event_type.index(), r.event_type.label()),
        "lanes" => RawValue::Number(f64::from(r.lanes)),
        "only_shoulders_closed" => flag(r.only_shoulders_closed),
        "vehicles" => RawValue::Number(r.vehicles.index() as f64),
        "trucks" => RawValue::Number(r.trucks.index() as f64),
        "injuries" => flag(r.injuries),
        "fatalities" => flag(r.fatalities),
        "detection_method" => cat(r.detection_method.index(), r.detection_method.label()),
        "aadt_bin" => r
            .aadt_bin
            .map_or(RawValue::Missing, |b| RawValue::Number(f64::from(b))),
        "hourly_volume" => r
            .hourly_volume
            .map_or(RawValue::Missing, |v| RawValue::Number(f64::from(v))),
        "surface_width" => r.surface_width.map_or(RawValue::Missing, RawValue::Number),
        "surface_type" => r.surface_type.map_or(RawValue::Missing, |s| RawValue::Category {
            key: i64::from(s),
            label: s.to_string(),
        }),
        "terrain" => r
            .terrain
            .map_or(RawValue::Missing, |t| cat(t.index(), t.label())),
        _ => RawValue::Missing,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FeatureEncoding {
    OneHot { categories: Vec<(i64, String)> },
    Binary,
    Ordinal,
    Numeric,
    Responders,
}

/// Fitted record-to-matrix encoder.
///
/// One-hot groups hold the categories observed when fitting. A category that was
/// never observed encodes as missing, so the imputer later maps it to the training mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    feature_set: FeatureSet,
    features: Vec<(String, FeatureEncoding)>,
    columns: Vec<ColumnMeta>,
}

impl Encoder {
    pub fn fit(records: &[IncidentRecord], feature_set: &FeatureSet) -> Result<Encoder> {
        if records.is_empty() {
            return Err(Error::invalid("cannot fit an encoder on zero records"));
        }
        if feature_set.columns.is_empty() {
            return Err(Error::invalid("feature set has no columns"));
        }
        validate_all(records)?;

        let mut features = Vec::with_capacity(feature_set.columns.len());
        let mut columns = Vec::new();
        for feature in &feature_set.columns {
            let kind = source_kind(feature).ok_or_else(|| Error::Encoding {
                field: feature.clone(),
                row: 0,
                message: "unknown feature name".into(),
            })?;
            let enc = match kind {
                SourceKind::OneHot => {
                    let mut cats: Vec<(i64, String)> = records
                        .iter()
                        .filter_map(|r| match raw_value(r, feature) {
                            RawValue::Category { key, label } => Some((key, label)),
                            _ => None,
                        })
                        .collect();
                    cats.sort();
                    cats.dedup();
                    if cats.is_empty() {
                        return Err(Error::Encoding {
                            field: feature.clone(),
                            row: 0,
                            message: "no observed categories".into(),
                        });
                    }
                    for (_, label) in &cats {
                        columns.push(ColumnMeta::new(
                            format!("{feature}={label}"),
                            ColumnKind::OneHot,
                            feature.as_str(),
                        ));
                    }
                    FeatureEncoding::OneHot { categories: cats }
                }
                SourceKind::Binary => {
                    columns.push(ColumnMeta::new(feature.as_str(), ColumnKind::Binary, feature.as_str()));
                    FeatureEncoding::Binary
                }
                SourceKind::Ordinal => {
                    columns.push(ColumnMeta::new(feature.as_str(), ColumnKind::Ordinal, feature.as_str()));
                    FeatureEncoding::Ordinal
                }
                SourceKind::Numeric => {
                    columns.push(ColumnMeta::new(feature.as_str(), ColumnKind::Numeric, feature.as_str()));
                    FeatureEncoding::Numeric
                }
                SourceKind::Responders => {
                    for r in Responder::ALL {
                        columns.push(ColumnMeta::new(
                            format!("resp_{}", r.label()),
                            ColumnKind::Binary,
                            "responders",
                        ));
                    }
                    FeatureEncoding::Responders
                }
            };
            features.push((feature.clone(), enc));
        }
        Ok(Encoder {
            feature_set: feature_set.clone(),
            features,
            columns,
        })
    }

    pub fn feature_set(&self) -> &FeatureSet {
        &self.feature_set
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    /// Encodes records; the target is the duration column when every record has one.
    pub fn transform(&self, records: &[IncidentRecord]) -> Result<FeatureMatrix> {
        validate_all(records)?;
        let p = self.columns.len();
        let mut data = Vec::with_capacity(records.len() * p);
        for r in records {
            for (feature, enc) in &self.features {
                match enc {
                    FeatureEncoding::OneHot { categories } => match raw_value(r, feature) {
                        RawValue::Category { key, .. } => {
                            match categories.iter().position(|(k, _)| *k == key) {
                                Some(hot) => data.extend(
                                    (0..categories.len()).map(|c| if c == hot { 1.0 } else { 0.0 }),
                                ),
                                None => data.extend(std::iter::repeat_n(f64::NAN, categories.len())),
                            }
                        }
                        _ => data.extend(std::iter::repeat_n(f64::NAN, categories.len())),
                    },
                    FeatureEncoding::Binary | FeatureEncoding::Ordinal | FeatureEncoding::Numeric => {
                        data.push(match raw_value(r, feature) {
                            RawValue::Number(v) => v,
                            _ => f64::NAN,
                        });
                    }
                    FeatureEncoding::Responders => match r.responders {
                        Some(set) => {
                            data.extend(Responder::ALL.iter().map(|x| {
                                if set.contains(*x) {
                                    1.0
                                } else {
                                    0.0
                                }
                            }));
                        }
                        None => data.extend(std::iter::repeat_n(f64::NAN, Responder::ALL.len())),
                    },
                }
            }
        }
        let rows = Matrix::new(records.len(), p, data)?;
        let target = records
            .iter()
            .map(|r| r.duration_minutes)
            .collect::<Option<Vec<f64>>>();
        FeatureMatrix::new(self.columns.clone(), rows, target)
    }
}

fn validate_all(records: &[IncidentRecord]) -> Result<()> {
    for (row, r) in records.iter().enumerate() {
        if let Err(Error::Validation { fields, message }) = r.validate() {
            return Err(Error::Encoding {
                field: fields.join(","),
                row,
                message,
            });
        }
    }
    Ok(())
}

/// Fits an encoder on `records` and encodes them in one step.
pub fn encode(records: &[IncidentRecord], feature_set: &FeatureSet) -> Result<FeatureMatrix> {
    Encoder::fit(records, feature_set)?.transform(records)
}
