use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;

use super::record::{CountBucket, IncidentRecord, ResponderSet};
use crate::error::{Error, Result};

/// Column order of the canonical incident CSV.
pub const CSV_HEADER: &[&str] = &[
    "id",
    "start_time",
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
    "responders",
    "route_id",
    "measure",
    "aadt_bin",
    "hourly_volume",
    "surface_width",
    "surface_type",
    "terrain",
    "duration_minutes",
];

const REQUIRED: &[&str] = &[
    "id",
    "start_time",
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
    "route_id",
    "measure",
];

pub fn parse_timestamp(s: &str) -> std::result::Result<NaiveDateTime, String> {
    let t = s.trim();
    const FORMATS: &[&str] = &[
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
        .ok_or_else(|| format!("`{t}` is not an ISO-8601 timestamp"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Ok(true),
        "0" | "false" | "no" | "n" => Ok(false),
        other => Err(format!("`{other}` is not a boolean (use 1/0)")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.trim()
        .parse::<T>()
        .map_err(|_| format!("`{}` is not a valid number", s.trim()))
}

/// Builds a record from `(field, value)` pairs. Empty values mean missing.
///
/// Unknown field names, missing required fields and unparsable values are all
/// reported together in one validation error.
pub fn record_from_fields<K: AsRef<str>, V: AsRef<str>>(fields: &[(K, V)]) -> Result<IncidentRecord> {
    let mut bad: Vec<String> = Vec::new();
    let mut problems: Vec<String> = Vec::new();
    for (k, _) in fields {
        if !CSV_HEADER.contains(&k.as_ref()) {
            bad.push(k.as_ref().to_string());
            problems.push(format!("unknown field `{}`", k.as_ref()));
        }
    }
    let get = |name: &str| -> Option<&str> {
        fields
            .iter()
            .rev()
            .find(|(k, _)| k.as_ref() == name)
            .map(|(_, v)| v.as_ref().trim())
            .filter(|v| !v.is_empty())
    };
    for name in REQUIRED {
        if get(name).is_none() {
            bad.push(name.to_string());
            problems.push(format!("missing required field `{name}`"));
        }
    }

    macro_rules! field {
        ($name:literal, $parse:expr) => {
            match get($name).map($parse) {
                Some(Ok(v)) => Some(v),
                Some(Err(e)) => {
                    bad.push($name.to_string());
                    problems.push(format!("{}: {}", $name, e));
                    None
                }
                None => None,
            }
        };
    }

    let id = get("id").map(str::to_string);
    let start_time = field!("start_time", parse_timestamp);
    let direction = field!("direction", str::parse);
    let county_region = field!("county_region", str::parse);
    let city_number = field!("city_number", parse_num::<u8>);
    let event_type = field!("event_type", str::parse);
    let lanes = field!("lanes", parse_num::<u32>);
    let only_shoulders_closed = field!("only_shoulders_closed", parse_bool);
    let vehicles = field!("vehicles", CountBucket::parse_lenient);
    let trucks = field!("trucks", CountBucket::parse_lenient);
    let injuries = field!("injuries", parse_bool);
    let fatalities = field!("fatalities", parse_bool);
    let detection_method = field!("detection_method", str::parse);
    let responders = field!("responders", str::parse::<ResponderSet>);
    let route_id = get("route_id").map(str::to_string);
    let measure = field!("measure", parse_num::<f64>);
    let aadt_bin = field!("aadt_bin", parse_num::<u8>);
    let hourly_volume = field!("hourly_volume", parse_num::<u32>);
    let surface_width = field!("surface_width", parse_num::<f64>);
    let surface_type = field!("surface_type", parse_num::<u8>);
    let terrain = field!("terrain", str::parse);
    let duration_minutes = field!("duration_minutes", parse_num::<f64>);

    if !bad.is_empty() {
        bad.dedup();
        return Err(Error::Validation {
            fields: bad,
            message: problems.join("; "),
        });
    }
    // Every required field parsed, so the unwraps below cannot fail.
    let record = IncidentRecord {
        id: id.unwrap(),
        start_time: start_time.unwrap(),
        direction: direction.unwrap(),
        county_region: county_region.unwrap(),
        city_number: city_number.unwrap(),
        event_type: event_type.unwrap(),
        lanes: lanes.unwrap(),
        only_shoulders_closed: only_shoulders_closed.unwrap(),
        vehicles: vehicles.unwrap(),
        trucks: trucks.unwrap(),
        injuries: injuries.unwrap(),
        fatalities: fatalities.unwrap(),
        detection_method: detection_method.unwrap(),
        responders,
        route_id: route_id.unwrap(),
        measure: measure.unwrap(),
        aadt_bin,
        hourly_volume,
        surface_width,
        surface_type,
        terrain,
        duration_minutes,
    };
    record.validate()?;
    Ok(record)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn bit(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn to_fields(r: &IncidentRecord) -> Vec<String> {
    vec![
        r.id.clone(),
        r.start_time.format("%Y-%m-%dT%H:%M:%S").to_string(),
        r.direction.to_string(),
        r.county_region.to_string(),
        r.city_number.to_string(),
        r.event_type.to_string(),
        r.lanes.to_string(),
        bit(r.only_shoulders_closed),
        r.vehicles.to_string(),
        r.trucks.to_string(),
        bit(r.injuries),
        bit(r.fatalities),
        r.detection_method.to_string(),
        opt(r.responders),
        r.route_id.clone(),
        r.measure.to_string(),
        opt(r.aadt_bin),
        opt(r.hourly_volume),
        opt(r.surface_width),
        opt(r.surface_type),
        opt(r.terrain),
        opt(r.duration_minutes),
    ]
}

pub fn read_records_from<R: Read>(reader: R) -> Result<Vec<IncidentRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let pairs: Vec<(&str, &str)> = headers.iter().map(String::as_str).zip(rec.iter()).collect();
        match record_from_fields(&pairs) {
            Ok(r) => out.push(r),
            Err(Error::Validation { fields, message }) => {
                return Err(Error::Encoding {
                    field: fields.join(","),
                    row,
                    message,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<IncidentRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records_from(f)
}

pub fn write_records_to<W: Write>(writer: W, records: &[IncidentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(to_fields(r))?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_records(path: impl AsRef<Path>, records: &[IncidentRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_to(std::io::BufWriter::new(f), records)
}
