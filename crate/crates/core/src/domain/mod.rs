//! Incident schema, duration bands, feature sets and encoding.

mod csvio;
mod encode;
mod record;

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csvio::{parse_timestamp, read_records, read_records_from, record_from_fields, write_records, write_records_to, CSV_HEADER};
pub use encode::{encode, ColumnKind, ColumnMeta, Encoder, FeatureMatrix};
pub(crate) use encode::schema_mismatch;
pub use record::{
    CountBucket, CountyRegion, DetectionMethod, Direction, EventType, IncidentRecord, Responder,
    ResponderSet, Terrain, TimeOfDay, MAX_CITY_NUMBER, MAX_SURFACE_TYPE,
};

/// Upper bound (exclusive) of the short band, in minutes.
pub const SHORT_UPPER_MINUTES: f64 = 30.0;
/// Upper bound (inclusive) of the medium band, in minutes.
pub const MEDIUM_UPPER_MINUTES: f64 = 120.0;

/// Duration band: Short = [0, 30), Medium = [30, 120], Long = (120, inf).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DurationBand {
    Short,
    Medium,
    Long,
}

impl DurationBand {
    pub const ALL: [DurationBand; 3] = [DurationBand::Short, DurationBand::Medium, DurationBand::Long];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            DurationBand::Short => "short",
            DurationBand::Medium => "medium",
            DurationBand::Long => "long",
        }
    }

    pub fn short_code(self) -> &'static str {
        match self {
            DurationBand::Short => "S",
            DurationBand::Medium => "M",
            DurationBand::Long => "L",
        }
    }
}

impl fmt::Display for DurationBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn band_of(duration_minutes: f64) -> Result<DurationBand> {
    if !(duration_minutes.is_finite() && duration_minutes > 0.0) {
        return Err(Error::invalid(format!(
            "duration must be positive and finite, got {duration_minutes}"
        )));
    }
    Ok(if duration_minutes < SHORT_UPPER_MINUTES {
        DurationBand::Short
    } else if duration_minutes <= MEDIUM_UPPER_MINUTES {
        DurationBand::Medium
    } else {
        DurationBand::Long
    })
}

/// Calendar-derived features of an incident start time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Temporal {
    pub tod: TimeOfDay,
    /// 0 = Monday .. 6 = Sunday.
    pub dow: u8,
    /// 1 = Winter (Dec-Feb), 2 = Spring, 3 = Summer, 4 = Autumn (Sep-Nov).
    pub season: u8,
    pub year: i32,
}

pub fn derive_temporal(start_time: &NaiveDateTime) -> Temporal {
    let tod = match start_time.hour() {
        7..=9 => TimeOfDay::Morning,
        10..=12 => TimeOfDay::EarlyAfternoon,
        13..=15 => TimeOfDay::Afternoon,
        16..=18 => TimeOfDay::EveningRush,
        19..=21 => TimeOfDay::Evening,
        _ => TimeOfDay::Night,
    };
    let season = match start_time.month() {
        12 | 1 | 2 => 1,
        3..=5 => 2,
        6..=8 => 3,
        _ => 4,
    };
    Temporal {
        tod,
        dow: start_time.weekday().num_days_from_monday() as u8,
        season,
        year: start_time.year(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSetKind {
    /// Information available at the initial report.
    Basic,
    /// Basic features plus roadway enrichment and responder information.
    Full,
}

impl FeatureSetKind {
    pub fn label(self) -> &'static str {
        match self {
            FeatureSetKind::Basic => "FS1",
            FeatureSetKind::Full => "FS2",
        }
    }
}

impl fmt::Display for FeatureSetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FeatureSetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fs1" | "basic" => Ok(FeatureSetKind::Basic),
            "fs2" | "full" | "all" => Ok(FeatureSetKind::Full),
            other => Err(format!("unknown feature set `{other}`, expected fs1 or fs2")),
        }
    }
}

/// Source features of the basic set, in encoding order.
pub const BASIC_FEATURES: &[&str] = &[
    "tod",
    "dow",
    "season",
    "year",
    "direction",
    "county_region",
    "city_number",
    "event_type",
    "lanes",
    "only_shoulders_closed",
    "vehicles",
    "trucks",
    "injuries",
    "fatalities",
    "detection_method",
];

/// Features added by enrichment and responder reports.
pub const ENRICHMENT_FEATURES: &[&str] = &[
    "aadt_bin",
    "hourly_volume",
    "surface_width",
    "surface_type",
    "terrain",
    "responders",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub kind: FeatureSetKind,
    pub columns: Vec<String>,
}

impl FeatureSet {
    pub fn basic() -> Self {
        FeatureSet {
            kind: FeatureSetKind::Basic,
            columns: BASIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn full() -> Self {
        FeatureSet {
            kind: FeatureSetKind::Full,
            columns: BASIC_FEATURES
                .iter()
                .chain(ENRICHMENT_FEATURES)
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn of(kind: FeatureSetKind) -> Self {
        match kind {
            FeatureSetKind::Basic => Self::basic(),
            FeatureSetKind::Full => Self::full(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(h, min, 0)
            .unwrap()
    }

    #[test]
    fn band_boundaries() {
        assert_eq!(band_of(29.0).unwrap(), DurationBand::Short);
        assert_eq!(band_of(30.0).unwrap(), DurationBand::Medium);
        assert_eq!(band_of(120.0).unwrap(), DurationBand::Medium);
        assert_eq!(band_of(121.0).unwrap(), DurationBand::Long);
        assert_eq!(band_of(120.000_001).unwrap(), DurationBand::Long);
        assert!(band_of(0.0).is_err());
        assert!(band_of(-3.0).is_err());
        assert!(band_of(f64::NAN).is_err());
    }

    #[test]
    fn temporal_examples() {
        let t = derive_temporal(&at(2018, 1, 15, 8, 0));
        assert_eq!((t.tod, t.dow, t.season, t.year), (TimeOfDay::Morning, 0, 1, 2018));
        let t = derive_temporal(&at(2019, 7, 4, 23, 30));
        assert_eq!((t.tod, t.dow, t.season, t.year), (TimeOfDay::Night, 3, 3, 2019));
        let t = derive_temporal(&at(2017, 10, 1, 13, 0));
        assert_eq!((t.tod, t.dow, t.season, t.year), (TimeOfDay::Afternoon, 6, 4, 2017));
    }

    #[test]
    fn temporal_bin_edges() {
        let tod = |h| derive_temporal(&at(2018, 3, 1, h, 0)).tod;
        assert_eq!(tod(6), TimeOfDay::Night);
        assert_eq!(tod(7), TimeOfDay::Morning);
        assert_eq!(tod(9), TimeOfDay::Morning);
        assert_eq!(tod(10), TimeOfDay::EarlyAfternoon);
        assert_eq!(tod(12), TimeOfDay::EarlyAfternoon);
        assert_eq!(tod(16), TimeOfDay::EveningRush);
        assert_eq!(tod(21), TimeOfDay::Evening);
        assert_eq!(tod(22), TimeOfDay::Night);
        assert_eq!(tod(0), TimeOfDay::Night);
        assert_eq!(derive_temporal(&at(2018, 12, 1, 0, 0)).season, 1);
        assert_eq!(derive_temporal(&at(2018, 3, 1, 0, 0)).season, 2);
        assert_eq!(derive_temporal(&at(2018, 11, 30, 0, 0)).season, 4);
    }

    #[test]
    fn basic_is_subset_of_full() {
        let full = FeatureSet::full();
        for c in FeatureSet::basic().columns {
            assert!(full.columns.contains(&c));
        }
        assert!(full.columns.len() > BASIC_FEATURES.len());
    }
}
