//! Synthetic incident datasets with a known, documented feature to duration signal.
//!
//! Log duration is `mu + s * (f(x) - mean f) + noise`, where `f` sums the log-scale
//! effects in [`Effects`] and the noise variance is chosen so the total log-scale
//! variance stays `sigma^2` for any signal strength `s`.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    band_of, derive_temporal, write_records, CountBucket, CountyRegion, DetectionMethod, Direction, EventType,
    IncidentRecord, Responder, ResponderSet, Terrain,
};
use crate::error::{Error, Result};
use crate::matrix::{mean, median};
use crate::pipeline::{EnrichmentRow, EnrichmentTable, RoadAttributes};

pub const MIN_DURATION: f64 = 1.0;
pub const MAX_DURATION: f64 = 1358.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_records: usize,
    pub seed: u64,
    /// 0 makes duration independent of every feature.
    pub signal_strength: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Chance that each optional field is left blank.
    pub blank_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_records: 6832,
            seed: 42,
            signal_strength: 1.0,
            mu: 31f64.ln(),
            sigma: 0.868,
            blank_fraction: 0.05,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 {
            return Err(Error::invalid("n_records must be positive"));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::invalid("signal_strength must be in [0, 1]"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu must be finite and sigma positive"));
        }
        if !(0.0..1.0).contains(&self.blank_fraction) {
            return Err(Error::invalid("blank_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Additive effects on log duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    pub fatality: f64,
    pub injury: f64,
    pub tow: f64,
    pub dot: f64,
    pub ems: f64,
    pub police: f64,
    pub highway_helper: f64,
    pub dps: f64,
    /// Indexed by truck bucket 0, 1, 2, 3+.
    pub trucks: [f64; 4],
    /// Indexed by vehicle bucket 0, 1, 2, 3+.
    pub vehicles: [f64; 4],
    /// crash1, crash2, crash3, debris.
    pub event_type: [f64; 4],
    pub shoulders_only: f64,
    /// Per lane beyond the second.
    pub per_lane: f64,
    /// Time-of-day slots in `TimeOfDay` order.
    pub time_of_day: [f64; 6],
    /// AADT bins 1..=5; deliberately not monotone.
    pub aadt: [f64; 5],
    /// flat, rolly, hilly.
    pub terrain: [f64; 3],
    pub winter: f64,
    /// Detection methods in `DetectionMethod` order.
    pub detection: [f64; 6],
}

impl Default for Effects {
    fn default() -> Self {
        Effects {
            fatality: 1.0,
            injury: 0.3125,
            tow: 0.75,
            dot: 0.5625,
            ems: 0.4375,
            police: 0.4375,
            highway_helper: 0.1875,
            dps: 0.1875,
            trucks: [0.0, 0.3125, 0.5, 0.6875],
            vehicles: [-0.3125, 0.0, 0.1, 0.3125],
            event_type: [0.0, 0.1, 0.3125, -0.5625],
            shoulders_only: -0.3125,
            per_lane: 0.05,
            time_of_day: [-0.05, 0.0, 0.0, -0.1, 0.1, 0.25],
            aadt: [0.3125, -0.25, 0.275, -0.125, -0.1],
            terrain: [0.0, 0.05, 0.125],
            winter: 0.1,
            detection: [0.1, -0.1, -0.125, 0.05, -0.1, 0.0],
        }
    }
}

impl Effects {
    /// Every effect multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let m = |v: f64| v * factor;
        let arr = |a: &[f64]| a.iter().map(|&v| v * factor).collect::<Vec<_>>();
        Effects {
            fatality: m(self.fatality),
            injury: m(self.injury),
            tow: m(self.tow),
            dot: m(self.dot),
            ems: m(self.ems),
            police: m(self.police),
            highway_helper: m(self.highway_helper),
            dps: m(self.dps),
            trucks: arr(&self.trucks).try_into().expect("4"),
            vehicles: arr(&self.vehicles).try_into().expect("4"),
            event_type: arr(&self.event_type).try_into().expect("4"),
            shoulders_only: m(self.shoulders_only),
            per_lane: m(self.per_lane),
            time_of_day: arr(&self.time_of_day).try_into().expect("6"),
            aadt: arr(&self.aadt).try_into().expect("5"),
            terrain: arr(&self.terrain).try_into().expect("3"),
            winter: m(self.winter),
            detection: arr(&self.detection).try_into().expect("6"),
        }
    }

    /// Log-scale signal of a fully populated record.
    pub fn signal(&self, r: &IncidentRecord, attrs: &RoadAttributes, responders: ResponderSet) -> f64 {
        let t = derive_temporal(&r.start_time);
        let has = |x: Responder| if responders.contains(x) { 1.0 } else { 0.0 };
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        flag(r.fatalities) * self.fatality
            + flag(r.injuries) * self.injury
            + has(Responder::Tow) * self.tow
            + has(Responder::Dot) * self.dot
            + has(Responder::Ems) * self.ems
            + has(Responder::Police) * self.police
            + has(Responder::HighwayHelper) * self.highway_helper
            + has(Responder::Dps) * self.dps
            + self.trucks[r.trucks.index()]
            + self.vehicles[r.vehicles.index()]
            + self.event_type[r.event_type.index()]
            + flag(r.only_shoulders_closed) * self.shoulders_only
            + (f64::from(r.lanes) - 2.0) * self.per_lane
            + self.time_of_day[t.tod.index()]
            + self.aadt[usize::from(attrs.aadt_bin) - 1]
            + self.terrain[attrs.terrain.index()]
            + flag(t.season == 1) * self.winter
            + self.detection[r.detection_method.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GeneratorConfig,
    pub effects: Effects,
    pub signal_mean: f64,
    pub signal_variance: f64,
    pub noise_sigma: f64,
    /// short, medium, long.
    pub band_counts: [usize; 3],
    pub duration_median: f64,
    pub duration_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub records: Vec<IncidentRecord>,
    pub enrichment: EnrichmentTable,
    pub manifest: Manifest,
}

/// (route id, class: 0 interstate, 1 US highway, 2 state route, incident weight)
const ROUTES: &[(&str, usize, f64)] = &[
    ("I-80", 0, 4.0),
    ("I-35", 0, 3.5),
    ("I-29", 0, 2.0),
    ("I-380", 0, 2.0),
    ("I-235", 0, 2.5),
    ("US-30", 1, 1.5),
    ("US-20", 1, 1.5),
    ("US-65", 1, 1.0),
    ("US-218", 1, 1.0),
    ("IA-5", 2, 0.8),
    ("IA-163", 2, 0.8),
    ("IA-2", 2, 0.5),
];

/// Representative AADT per bin, used to scale hourly volume profiles.
const AADT_MID: [f64; 5] = [6000.0, 10000.0, 18000.0, 36000.0, 70000.0];
/// Share of daily traffic per hour in each time-of-day slot.
const TOD_SHARE: [f64; 6] = [0.075, 0.06, 0.065, 0.085, 0.05, 0.02];
/// Relative incident frequency by hour of day.
const HOUR_WEIGHT: [f64; 24] = [
    0.4, 0.3, 0.3, 0.3, 0.4, 0.7, 1.2, 1.8, 1.8, 1.4, 1.2, 1.2, 1.3, 1.3, 1.4, 1.6, 2.0, 2.0, 1.6, 1.1, 0.9,
    0.8, 0.6, 0.5,
];

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T], weights: &[f64]) -> T {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (x, &w) in items.iter().zip(weights) {
        if u < w {
            return *x;
        }
        u -= w;
    }
    *items.last().expect("non-empty choice")
}

fn chance(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p.clamp(0.0, 1.0)
}

fn build_enrichment(rng: &mut ChaCha8Rng) -> (EnrichmentTable, Vec<u32>) {
    let mut rows = Vec::new();
    let mut lengths = Vec::new();
    for &(route, class, _) in ROUTES {
        let buckets: u32 = rng.random_range(80..320);
        lengths.push(buckets);
        let (lo, hi): (u8, u8) = [(3, 5), (2, 4), (1, 3)][class];
        let mut aadt = rng.random_range(lo..=hi);
        let mut terrain = Terrain::Flat;
        let base_width = [36.0, 28.0, 24.0][class];
        for bucket in 0..buckets {
            // Attributes drift along the route in runs of a few buckets.
            if bucket % 8 == 0 {
                if chance(rng, 0.3) {
                    aadt = (aadt as i16 + if chance(rng, 0.5) { 1 } else { -1 }).clamp(lo as i16, hi as i16) as u8;
                }
                terrain = pick(rng, Terrain::ALL, &[0.6, 0.3, 0.1]);
            }
            let daily = AADT_MID[usize::from(aadt) - 1];
            let mut hourly_volume = [0u32; 6];
            for (v, share) in hourly_volume.iter_mut().zip(TOD_SHARE) {
                *v = (daily * share).round() as u32;
            }
            rows.push(EnrichmentRow {
                route_id: route.to_string(),
                bucket,
                attributes: RoadAttributes {
                    aadt_bin: aadt,
                    surface_width: base_width + f64::from(rng.random_range(0u8..5)) * 2.0,
                    surface_type: [[6, 7], [4, 6], [2, 4]][class][usize::from(chance(rng, 0.3))],
                    terrain,
                    hourly_volume,
                },
            });
        }
    }
    let table = EnrichmentTable::with_derived_default(rows).expect("routes produce rows");
    (table, lengths)
}

struct Draft {
    record: IncidentRecord,
    responders: ResponderSet,
    attrs: RoadAttributes,
}

fn draft_record(rng: &mut ChaCha8Rng, i: usize, table: &EnrichmentTable, lengths: &[u32]) -> Draft {
    let route_weights: Vec<f64> = ROUTES.iter().map(|r| r.2).collect();
    let route_idx = pick(rng, &(0..ROUTES.len()).collect::<Vec<_>>(), &route_weights);
    let measure = (rng.random::<f64>() * f64::from(lengths[route_idx]) * 0.5 * 100.0).floor() / 100.0;
    let route_id = ROUTES[route_idx].0.to_string();
    let attrs = table.lookup(&route_id, measure).clone();

    let day = rng.random_range(0..1095);
    let hour = pick(rng, &(0..24).collect::<Vec<i64>>(), &HOUR_WEIGHT);
    let minute = rng.random_range(0..60);
    let start_time = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
        + Duration::days(day)
        + Duration::hours(hour)
        + Duration::minutes(minute);

    let event_type = pick(rng, EventType::ALL, &[0.35, 0.40, 0.10, 0.15]);
    let vehicles = match event_type {
        EventType::Crash1 => pick(rng, CountBucket::ALL, &[0.0, 0.9, 0.1, 0.0]),
        EventType::Crash2 => pick(rng, CountBucket::ALL, &[0.0, 0.05, 0.85, 0.10]),
        EventType::Crash3 => pick(rng, CountBucket::ALL, &[0.0, 0.0, 0.15, 0.85]),
        EventType::Debris => pick(rng, CountBucket::ALL, &[0.85, 0.15, 0.0, 0.0]),
    };
    let trucks = pick(rng, CountBucket::ALL, &[0.80, 0.15, 0.04, 0.01]);
    let is_crash = event_type != EventType::Debris;
    let injuries = is_crash && chance(rng, 0.3);
    let fatalities = is_crash && chance(rng, 0.012);
    let lanes = pick(rng, &[1u32, 2, 3, 4], &[0.2, 0.5, 0.2, 0.1]);
    let only_shoulders_closed = chance(rng, 0.15);
    let detection_method = pick(rng, DetectionMethod::ALL, &[0.30, 0.20, 0.15, 0.10, 0.20, 0.05]);

    let mut responders = ResponderSet::empty();
    let trucked = trucks != CountBucket::Zero;
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    let p_tow = 0.14 + 0.12 * b(event_type == EventType::Crash2) + 0.3 * b(event_type == EventType::Crash3)
        + 0.2 * b(trucked)
        + 0.05 * b(injuries)
        - 0.1 * b(event_type == EventType::Debris);
    let probs = [
        (Responder::Police, 0.25 + 0.2 * b(injuries) + 0.05 * b(is_crash)),
        (Responder::Tow, p_tow),
        (Responder::Dot, 0.06 + 0.1 * b(trucked) + 0.05 * b(event_type == EventType::Debris)),
        (Responder::Dps, 0.05),
        (Responder::Ems, 0.04 + 0.3 * b(injuries) + 0.3 * b(fatalities)),
        (Responder::HighwayHelper, 0.49),
    ];
    for (r, p) in probs {
        if chance(rng, p) {
            responders.insert(r);
        }
    }
    let tod = derive_temporal(&start_time).tod;
    let volume_noise: f64 = Normal::new(0.0, 0.15).unwrap().sample(rng);
    let hourly_volume = (f64::from(attrs.hourly_volume[tod.index()]) * volume_noise.exp()).round() as u32;

    let record = IncidentRecord {
        id: format!("INC{:06}", i + 1),
        start_time,
        direction: pick(rng, Direction::ALL, &[1.0; 4]),
        county_region: pick(rng, CountyRegion::ALL, &[1.0, 0.8, 1.4, 1.0, 0.8]),
        city_number: rng.random_range(0..=40),
        event_type,
        lanes,
        only_shoulders_closed,
        vehicles,
        trucks,
        injuries,
        fatalities,
        detection_method,
        responders: Some(responders),
        route_id,
        measure,
        aadt_bin: Some(attrs.aadt_bin),
        hourly_volume: Some(hourly_volume),
        surface_width: Some(attrs.surface_width),
        surface_type: Some(attrs.surface_type),
        terrain: Some(attrs.terrain),
        duration_minutes: None,
    };
    Draft { record, responders, attrs }
}

fn blank_fields(rng: &mut ChaCha8Rng, r: &mut IncidentRecord, p: f64) {
    if chance(rng, p) {
        r.responders = None;
    }
    if chance(rng, p) {
        r.aadt_bin = None;
    }
    if chance(rng, p) {
        r.hourly_volume = None;
    }
    if chance(rng, p) {
        r.surface_width = None;
    }
    if chance(rng, p) {
        r.surface_type = None;
    }
    if chance(rng, p) {
        r.terrain = None;
    }
}

pub fn generate(config: &GeneratorConfig) -> Result<SyntheticDataset> {
    generate_with(config, &Effects::default())
}

/// Single-threaded and fully determined by `config` and `effects`.
pub fn generate_with(config: &GeneratorConfig, effects: &Effects) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (enrichment, lengths) = build_enrichment(&mut rng);
    let drafts: Vec<Draft> = (0..config.n_records).map(|i| draft_record(&mut rng, i, &enrichment, &lengths)).collect();

    let signal: Vec<f64> = drafts.iter().map(|d| effects.signal(&d.record, &d.attrs, d.responders)).collect();
    let signal_mean = mean(&signal);
    let signal_variance = signal.iter().map(|s| (s - signal_mean).powi(2)).sum::<f64>() / signal.len() as f64;
    let s = config.signal_strength;
    let explained = s * s * signal_variance;
    // Keep at least a tenth of the variance as noise if the effects are too strong.
    let noise_var = (config.sigma * config.sigma - explained).max(0.1 * config.sigma * config.sigma);
    let noise_sigma = noise_var.sqrt();
    let noise = Normal::new(0.0, noise_sigma).expect("positive sigma");

    let mut records = Vec::with_capacity(drafts.len());
    for (d, f) in drafts.into_iter().zip(&signal) {
        let mut r = d.record;
        let log_d = config.mu + s * (f - signal_mean) + noise.sample(&mut rng);
        r.duration_minutes = Some(log_d.exp().round().clamp(MIN_DURATION, MAX_DURATION));
        blank_fields(&mut rng, &mut r, config.blank_fraction);
        records.push(r);
    }

    let durations: Vec<f64> = records.iter().filter_map(|r| r.duration_minutes).collect();
    let mut band_counts = [0usize; 3];
    for &d in &durations {
        band_counts[band_of(d)?.index()] += 1;
    }
    let manifest = Manifest {
        config: config.clone(),
        effects: effects.clone(),
        signal_mean,
        signal_variance,
        noise_sigma,
        band_counts,
        duration_median: median(&durations),
        duration_mean: mean(&durations),
    };
    Ok(SyntheticDataset { records, enrichment, manifest })
}

/// `data.csv` -> (`data.manifest.json`, `data.enrichment.csv`).
pub fn sidecar_paths(csv_path: &Path) -> (PathBuf, PathBuf) {
    let stem = csv_path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    let dir = csv_path.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{stem}.manifest.json")), dir.join(format!("{stem}.enrichment.csv")))
}

/// Writes the incident CSV and its two sidecars.
pub fn write_dataset(ds: &SyntheticDataset, csv_path: &Path) -> Result<()> {
    write_records(csv_path, &ds.records)?;
    let (manifest, enrichment) = sidecar_paths(csv_path);
    let json = serde_json::to_string_pretty(&ds.manifest)?;
    std::fs::write(&manifest, json + "\n").map_err(|e| Error::io(&manifest, e))?;
    ds.enrichment.write_csv(&enrichment)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
