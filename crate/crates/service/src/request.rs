//! Request body to incident record.

use incident_duration::domain::{record_from_fields, IncidentRecord};
use incident_duration::Error;
use serde_json::{Map, Value};

use crate::schema::REQUEST_ID;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub request_id: Option<String>,
    pub record: IncidentRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestError {
    pub fields: Vec<String>,
    pub message: String,
}

impl RequestError {
    fn new(fields: Vec<String>, message: impl Into<String>) -> Self {
        RequestError { fields, message: message.into() }
    }
}

fn text(key: &str, v: &Value) -> Result<Option<String>, String> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        Value::Number(n) => Ok(Some(n.to_string())),
        Value::Bool(b) => Ok(Some(if *b { "1" } else { "0" }.to_string())),
        Value::Array(items) if key == "responders" => {
            let parts = items
                .iter()
                .map(|i| i.as_str().map(str::to_string).ok_or_else(|| "responders must be strings".to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Some(if parts.is_empty() { "none".to_string() } else { parts.join("|") }))
        }
        _ => Err(format!("`{key}` has an unsupported value type")),
    }
}

/// Parses a JSON object. Unknown, missing or malformed fields are reported together;
/// a `duration_minutes` field is refused because it is what the service predicts.
pub fn parse_request(body: &[u8]) -> Result<PredictRequest, RequestError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| RequestError::new(Vec::new(), format!("body is not valid JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(RequestError::new(Vec::new(), "body must be a JSON object"));
    };
    from_map(map)
}

fn from_map(map: Map<String, Value>) -> Result<PredictRequest, RequestError> {
    let mut fields: Vec<(String, String)> = Vec::new();
    let mut bad = Vec::new();
    let mut problems = Vec::new();
    let mut request_id = None;
    for (k, v) in &map {
        if k == "duration_minutes" {
            bad.push(k.clone());
            problems.push("unknown field `duration_minutes`".to_string());
            continue;
        }
        match text(k, v) {
            Ok(Some(s)) if k == REQUEST_ID => request_id = Some(s),
            Ok(Some(s)) => fields.push((k.clone(), s)),
            Ok(None) => {}
            Err(e) => {
                bad.push(k.clone());
                problems.push(e);
            }
        }
    }
    if !bad.is_empty() {
        return Err(RequestError::new(bad, problems.join("; ")));
    }
    if !fields.iter().any(|(k, _)| k == "id") {
        fields.push(("id".into(), request_id.clone().unwrap_or_else(|| "request".into())));
    }
    match record_from_fields(&fields) {
        Ok(record) => Ok(PredictRequest { request_id, record }),
        Err(Error::Validation { fields, message }) => Err(RequestError::new(fields, message)),
        Err(e) => Err(RequestError::new(Vec::new(), e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        serde_json::json!({
            "request_id": "r-1",
            "start_time": "2019-03-04T07:30:00",
            "direction": "N",
            "county_region": "Central",
            "city_number": 3,
            "event_type": "crash2",
            "lanes": 2,
            "only_shoulders_closed": false,
            "vehicles": "2",
            "trucks": "0",
            "injuries": true,
            "fatalities": false,
            "detection_method": "cameras",
            "route_id": "I-80",
            "measure": 12.5
        })
    }

    #[test]
    fn typed_json_values_become_a_record() {
        let r = parse_request(base().to_string().as_bytes()).unwrap();
        assert_eq!(r.request_id.as_deref(), Some("r-1"));
        assert_eq!(r.record.id, "r-1");
        assert!(r.record.injuries && r.record.responders.is_none());
    }

    #[test]
    fn responders_accept_a_list() {
        let mut v = base();
        v["responders"] = serde_json::json!(["tow", "police"]);
        let r = parse_request(v.to_string().as_bytes()).unwrap();
        assert_eq!(r.record.responders.unwrap().to_string(), "police|tow");
    }

    #[test]
    fn unknown_and_target_fields_are_named() {
        let mut v = base();
        v["weather"] = "snow".into();
        v["duration_minutes"] = 30.into();
        let e = parse_request(v.to_string().as_bytes()).unwrap_err();
        assert_eq!(e.fields, vec!["duration_minutes"]);
        v.as_object_mut().unwrap().remove("duration_minutes");
        let e = parse_request(v.to_string().as_bytes()).unwrap_err();
        assert_eq!(e.fields, vec!["weather"]);
    }

    #[test]
    fn non_objects_are_rejected() {
        assert!(parse_request(b"[1,2]").is_err());
        assert!(parse_request(b"{").is_err());
    }
}
