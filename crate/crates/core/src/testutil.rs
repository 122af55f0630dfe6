use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::*;
use crate::matrix::Matrix;

pub fn sample_record(id: &str) -> IncidentRecord {
    IncidentRecord {
        id: id.to_string(),
        start_time: NaiveDate::from_ymd_opt(2018, 1, 15)
            .unwrap()
            .and_hms_opt(8, 0, 0)
            .unwrap(),
        direction: Direction::North,
        county_region: CountyRegion::Central,
        city_number: 3,
        event_type: EventType::Crash2,
        lanes: 2,
        only_shoulders_closed: false,
        vehicles: CountBucket::Two,
        trucks: CountBucket::Zero,
        injuries: true,
        fatalities: false,
        detection_method: DetectionMethod::Cameras,
        responders: Some([Responder::Police].into_iter().collect()),
        route_id: "I-80".to_string(),
        measure: 12.25,
        aadt_bin: Some(3),
        hourly_volume: Some(1450),
        surface_width: Some(24.0),
        surface_type: Some(2),
        terrain: Some(Terrain::Flat),
        duration_minutes: Some(42.0),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix {
    let data = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(n, p, data).unwrap()
}
