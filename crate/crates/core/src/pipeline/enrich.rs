//! Roadway attribute lookup keyed by route and measure bucket.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{derive_temporal, IncidentRecord, Terrain, TimeOfDay};
use crate::error::{Error, Result};

/// Width of a measure bucket in route units.
pub const MEASURE_BUCKET: f64 = 0.5;

/// Route id of the fallback row in the CSV form.
pub const DEFAULT_ROUTE: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadAttributes {
    pub aadt_bin: u8,
    pub surface_width: f64,
    pub surface_type: u8,
    pub terrain: Terrain,
    /// Typical hourly volume for each time-of-day slot.
    pub hourly_volume: [u32; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRow {
    pub route_id: String,
    pub bucket: u32,
    pub attributes: RoadAttributes,
}

/// Sorted rows plus a default for keys that are not present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentTable {
    rows: Vec<EnrichmentRow>,
    default: RoadAttributes,
}

pub fn measure_bucket(measure: f64) -> u32 {
    if measure.is_finite() && measure > 0.0 {
        (measure / MEASURE_BUCKET).floor().min(f64::from(u32::MAX)) as u32
    } else {
        0
    }
}

fn median_u32(mut v: Vec<u32>) -> u32 {
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

fn mode<T: Copy + Ord>(v: impl Iterator<Item = T>) -> T {
    let mut v: Vec<T> = v.collect();
    v.sort_unstable();
    let mut best = (v[0], 0usize);
    let mut i = 0;
    while i < v.len() {
        let j = v[i..].iter().position(|x| *x != v[i]).map_or(v.len(), |p| i + p);
        if j - i > best.1 {
            best = (v[i], j - i);
        }
        i = j;
    }
    best.0
}

fn median_f64(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Summary attributes of `records`; fields with no observed value come from
/// `fallback`, or make the result `None` without one.
fn summarize<'a>(records: impl Iterator<Item = &'a IncidentRecord>, fallback: Option<&RoadAttributes>) -> Option<RoadAttributes> {
    let records: Vec<&IncidentRecord> = records.collect();
    let aadt: Vec<u8> = records.iter().filter_map(|r| r.aadt_bin).collect();
    let width: Vec<f64> = records.iter().filter_map(|r| r.surface_width).collect();
    let stype: Vec<u8> = records.iter().filter_map(|r| r.surface_type).collect();
    let terrain: Vec<Terrain> = records.iter().filter_map(|r| r.terrain).collect();
    let all_volume: Vec<u32> = records.iter().filter_map(|r| r.hourly_volume).collect();
    let mut hourly_volume = [0u32; 6];
    for &tod in TimeOfDay::ALL.iter() {
        let v: Vec<u32> = records
            .iter()
            .filter(|r| derive_temporal(&r.start_time).tod == tod)
            .filter_map(|r| r.hourly_volume)
            .collect();
        hourly_volume[tod.index()] = match (v.is_empty(), fallback) {
            (false, _) => median_u32(v),
            (true, Some(f)) => f.hourly_volume[tod.index()],
            (true, None) if !all_volume.is_empty() => median_u32(all_volume.clone()),
            (true, None) => return None,
        };
    }
    Some(RoadAttributes {
        aadt_bin: if aadt.is_empty() { fallback?.aadt_bin } else { mode(aadt.into_iter()) },
        surface_width: if width.is_empty() { fallback?.surface_width } else { median_f64(width) },
        surface_type: if stype.is_empty() { fallback?.surface_type } else { mode(stype.into_iter()) },
        terrain: if terrain.is_empty() { fallback?.terrain } else { mode(terrain.into_iter()) },
        hourly_volume,
    })
}

impl EnrichmentTable {
    /// Later duplicates of a key replace earlier ones.
    pub fn new(mut rows: Vec<EnrichmentRow>, default: RoadAttributes) -> Self {
        rows.reverse();
        rows.sort_by(|a, b| (&a.route_id, a.bucket).cmp(&(&b.route_id, b.bucket)));
        rows.dedup_by(|a, b| a.route_id == b.route_id && a.bucket == b.bucket);
        EnrichmentTable { rows, default }
    }

    /// Default row from per-field medians (numeric) and modes (codes).
    pub fn with_derived_default(rows: Vec<EnrichmentRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("enrichment table has no rows"));
        }
        let attrs = || rows.iter().map(|r| &r.attributes);
        let mut widths: Vec<f64> = attrs().map(|a| a.surface_width).collect();
        widths.sort_by(f64::total_cmp);
        let mut volume = [0u32; 6];
        for (slot, v) in volume.iter_mut().enumerate() {
            *v = median_u32(attrs().map(|a| a.hourly_volume[slot]).collect());
        }
        let default = RoadAttributes {
            aadt_bin: mode(attrs().map(|a| a.aadt_bin)),
            surface_width: widths[(widths.len() - 1) / 2],
            surface_type: mode(attrs().map(|a| a.surface_type)),
            terrain: mode(attrs().map(|a| a.terrain)),
            hourly_volume: volume,
        };
        Ok(Self::new(rows, default))
    }

    /// Builds a table from the roadway fields present on `records`: per key,
    /// medians of numeric fields and modes of codes; gaps take the overall value.
    pub fn from_records(records: &[IncidentRecord]) -> Result<Self> {
        let overall = summarize(records.iter(), None)
            .ok_or_else(|| Error::invalid("no record carries roadway attributes to build an enrichment table from"))?;
        let mut keyed: Vec<(&str, u32, usize)> =
            records.iter().enumerate().map(|(i, r)| (r.route_id.as_str(), measure_bucket(r.measure), i)).collect();
        keyed.sort_unstable();
        let mut rows = Vec::new();
        for group in keyed.chunk_by(|a, b| (a.0, a.1) == (b.0, b.1)) {
            let attributes = summarize(group.iter().map(|&(_, _, i)| &records[i]), Some(&overall)).expect("fallback given");
            rows.push(EnrichmentRow { route_id: group[0].0.to_string(), bucket: group[0].1, attributes });
        }
        Ok(Self::new(rows, overall))
    }

    pub fn rows(&self) -> &[EnrichmentRow] {
        &self.rows
    }

    pub fn default_row(&self) -> &RoadAttributes {
        &self.default
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lookup(&self, route_id: &str, measure: f64) -> &RoadAttributes {
        let key = (route_id, measure_bucket(measure));
        self.rows
            .binary_search_by(|r| (r.route_id.as_str(), r.bucket).cmp(&key))
            .map_or(&self.default, |i| &self.rows[i].attributes)
    }

    /// Fills the missing roadway fields of `record`; present values are kept.
    pub fn enrich(&self, record: &IncidentRecord) -> IncidentRecord {
        let a = self.lookup(&record.route_id, record.measure);
        let tod = derive_temporal(&record.start_time).tod;
        let mut r = record.clone();
        r.aadt_bin = r.aadt_bin.or(Some(a.aadt_bin));
        r.hourly_volume = r.hourly_volume.or(Some(a.hourly_volume[tod.index()]));
        r.surface_width = r.surface_width.or(Some(a.surface_width));
        r.surface_type = r.surface_type.or(Some(a.surface_type));
        r.terrain = r.terrain.or(Some(a.terrain));
        r
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["route_id", "bucket", "aadt_bin", "surface_width", "surface_type", "terrain"];
        let vol: Vec<String> = TimeOfDay::ALL.iter().map(|t| format!("volume_{}", t.label())).collect();
        header.extend(vol.iter().map(String::as_str));
        w.write_record(&header)?;
        let mut put = |route: &str, bucket: u32, a: &RoadAttributes| -> Result<()> {
            let mut f = vec![
                route.to_string(),
                bucket.to_string(),
                a.aadt_bin.to_string(),
                a.surface_width.to_string(),
                a.surface_type.to_string(),
                a.terrain.to_string(),
            ];
            f.extend(a.hourly_volume.iter().map(u32::to_string));
            w.write_record(&f)?;
            Ok(())
        };
        put(DEFAULT_ROUTE, 0, &self.default)?;
        for r in &self.rows {
            put(&r.route_id, r.bucket, &r.attributes)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(f))
    }

    /// Reads the CSV form. Without a `*` row the default is derived from the rows.
    pub fn read_csv_from<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        let mut default = None;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |field: &str, msg: String| Error::Encoding { field: field.to_string(), row: i, message: msg };
            if rec.len() != 12 {
                return Err(bad("*", format!("expected 12 fields, found {}", rec.len())));
            }
            let num = |j: usize, name: &str| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|e| bad(name, e.to_string()))
            };
            let mut volume = [0u32; 6];
            for (k, v) in volume.iter_mut().enumerate() {
                *v = rec[6 + k].parse().map_err(|e: std::num::ParseIntError| bad("volume", e.to_string()))?;
            }
            let aadt_bin = num(2, "aadt_bin")? as u8;
            if !(1..=5).contains(&aadt_bin) {
                return Err(bad("aadt_bin", format!("{aadt_bin} is outside 1..=5")));
            }
            let attributes = RoadAttributes {
                aadt_bin,
                surface_width: num(3, "surface_width")?,
                surface_type: rec[4].parse().map_err(|e: std::num::ParseIntError| bad("surface_type", e.to_string()))?,
                terrain: rec[5].parse().map_err(|e: String| bad("terrain", e))?,
                hourly_volume: volume,
            };
            if &rec[0] == DEFAULT_ROUTE {
                default = Some(attributes);
            } else {
                let bucket = rec[1].parse().map_err(|e: std::num::ParseIntError| bad("bucket", e.to_string()))?;
                rows.push(EnrichmentRow { route_id: rec[0].to_string(), bucket, attributes });
            }
        }
        match default {
            Some(d) => Ok(Self::new(rows, d)),
            None => Self::with_derived_default(rows),
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::sample_record;

    fn attrs(aadt: u8, width: f64) -> RoadAttributes {
        RoadAttributes {
            aadt_bin: aadt,
            surface_width: width,
            surface_type: 2,
            terrain: Terrain::Rolly,
            hourly_volume: [100, 200, 300, 400, 500, 60],
        }
    }

    fn table() -> EnrichmentTable {
        EnrichmentTable::with_derived_default(vec![
            EnrichmentRow { route_id: "I-80".into(), bucket: 24, attributes: attrs(5, 36.0) },
            EnrichmentRow { route_id: "I-80".into(), bucket: 25, attributes: attrs(4, 30.0) },
            EnrichmentRow { route_id: "US-30".into(), bucket: 0, attributes: attrs(4, 24.0) },
        ])
        .unwrap()
    }

    #[test]
    fn lookup_uses_half_unit_buckets() {
        let t = table();
        assert_eq!(measure_bucket(12.25), 24);
        assert_eq!(measure_bucket(12.5), 25);
        assert_eq!(t.lookup("I-80", 12.49).aadt_bin, 5);
        assert_eq!(t.lookup("I-80", 12.5).aadt_bin, 4);
        assert_eq!(t.lookup("IA-5", 3.0), t.default_row());
        assert_eq!(t.default_row().aadt_bin, 4);
        assert_eq!(t.default_row().surface_width, 30.0);
    }

    #[test]
    fn enrich_fills_only_missing_fields() {
        let t = table();
        let mut r = sample_record("x");
        r.aadt_bin = None;
        r.hourly_volume = None;
        r.surface_width = Some(11.0);
        let e = t.enrich(&r);
        assert_eq!(e.aadt_bin, Some(5));
        // 08:00 is the morning slot.
        assert_eq!(e.hourly_volume, Some(100));
        assert_eq!(e.surface_width, Some(11.0));
    }

    #[test]
    fn table_from_records_uses_key_values_then_overall() {
        let mut a = sample_record("a");
        a.aadt_bin = Some(5);
        let mut b = sample_record("b");
        b.route_id = "US-30".into();
        b.aadt_bin = None;
        b.surface_width = Some(30.0);
        let t = EnrichmentTable::from_records(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup("I-80", 12.25).aadt_bin, 5);
        // b has no aadt_bin; the overall mode over {5} fills it.
        assert_eq!(t.lookup("US-30", 12.25).aadt_bin, 5);
        assert_eq!(t.lookup("US-30", 12.25).surface_width, 30.0);
        assert_eq!(t.lookup("I-80", 12.25).hourly_volume[0], 1450);
        let mut bare = sample_record("c");
        (bare.aadt_bin, bare.surface_width, bare.surface_type, bare.terrain, bare.hourly_volume) = (None, None, None, None, None);
        assert!(EnrichmentTable::from_records(&[bare]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = table();
        let mut buf = Vec::new();
        t.write_csv_to(&mut buf).unwrap();
        let back = EnrichmentTable::read_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let text = String::from_utf8(buf).unwrap();
        let without_default: String = text.lines().filter(|l| !l.starts_with('*')).map(|l| format!("{l}\n")).collect();
        let derived = EnrichmentTable::read_csv_from(without_default.as_bytes()).unwrap();
        assert_eq!(derived, t);
        assert!(EnrichmentTable::read_csv_from("a,b\n1,2\n".as_bytes()).is_err());
    }
}
