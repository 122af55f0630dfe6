//! Field list served at `GET /v1/schema`.

use incident_duration::domain::{
    CountBucket, CountyRegion, DetectionMethod, Direction, EventType, Responder, Terrain, CSV_HEADER,
};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSpec {
    pub name: &'static str,
    /// `string`, `datetime`, `integer`, `number`, `boolean`, `enum` or `enum_set`.
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub required: bool,
    /// `FS1` fields are known at the first report; `FS2` fields arrive later or come from enrichment.
    pub phase: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<&'static str>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schema {
    pub fields: Vec<FieldSpec>,
}

fn field(name: &'static str, kind: &'static str, required: bool, phase: &'static str) -> FieldSpec {
    FieldSpec { name, kind, required, phase, values: None, min: None, max: None }
}

fn choice(name: &'static str, values: Vec<&'static str>, required: bool, phase: &'static str) -> FieldSpec {
    FieldSpec { values: Some(values), ..field(name, "enum", required, phase) }
}

fn ranged(mut f: FieldSpec, min: f64, max: Option<f64>) -> FieldSpec {
    f.min = Some(min);
    f.max = max;
    f
}

/// Request fields besides the incident columns.
pub const REQUEST_ID: &str = "request_id";

pub fn schema() -> Schema {
    let fields = vec![
        field(REQUEST_ID, "string", false, "FS1"),
        field("id", "string", false, "FS1"),
        field("start_time", "datetime", true, "FS1"),
        choice("direction", Direction::labels(), true, "FS1"),
        choice("county_region", CountyRegion::labels(), true, "FS1"),
        ranged(field("city_number", "integer", true, "FS1"), 0.0, Some(99.0)),
        choice("event_type", EventType::labels(), true, "FS1"),
        ranged(field("lanes", "integer", true, "FS1"), 1.0, None),
        field("only_shoulders_closed", "boolean", true, "FS1"),
        choice("vehicles", CountBucket::labels(), true, "FS1"),
        choice("trucks", CountBucket::labels(), true, "FS1"),
        field("injuries", "boolean", true, "FS1"),
        field("fatalities", "boolean", true, "FS1"),
        choice("detection_method", DetectionMethod::labels(), true, "FS1"),
        field("route_id", "string", true, "FS1"),
        ranged(field("measure", "number", true, "FS1"), 0.0, None),
        FieldSpec { values: Some(Responder::labels()), ..field("responders", "enum_set", false, "FS2") },
        ranged(field("aadt_bin", "integer", false, "FS2"), 1.0, Some(5.0)),
        ranged(field("hourly_volume", "integer", false, "FS2"), 0.0, None),
        ranged(field("surface_width", "number", false, "FS2"), 0.0, None),
        ranged(field("surface_type", "integer", false, "FS2"), 0.0, Some(20.0)),
        choice("terrain", Terrain::labels(), false, "FS2"),
    ];
    debug_assert!(fields.iter().skip(1).all(|f| CSV_HEADER.contains(&f.name)));
    Schema { fields }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_incident_column_but_the_target_is_listed() {
        let s = schema();
        let names: Vec<&str> = s.fields.iter().map(|f| f.name).collect();
        for col in CSV_HEADER.iter().filter(|c| **c != "duration_minutes") {
            assert!(names.contains(col), "{col}");
        }
        assert!(!names.contains(&"duration_minutes"));
    }
}
