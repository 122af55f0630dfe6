use std::sync::OnceLock;

use incident_duration::domain::{band_of, DurationBand, FeatureSetKind, IncidentRecord};
use incident_duration::pipeline::*;
use incident_duration::synthgen::{generate, GeneratorConfig, SyntheticDataset};
use incident_duration::Error;

fn data() -> &'static SyntheticDataset {
    static D: OnceLock<SyntheticDataset> = OnceLock::new();
    D.get_or_init(|| generate(&GeneratorConfig { n_records: 3000, seed: 7, ..Default::default() }).unwrap())
}

fn trained() -> &'static (FrameworkModel, TrainingSummary) {
    static M: OnceLock<(FrameworkModel, TrainingSummary)> = OnceLock::new();
    M.get_or_init(|| train_framework(&data().records, &data().enrichment, &FrameworkConfig::default()).unwrap())
}

fn cheap_config() -> FrameworkConfig {
    FrameworkConfig {
        feature_set: FeatureSetKind::Basic,
        classifier: vec!["rf".into(), "logistic".into()],
        regressors: [RegressorSpec::single("rf"), RegressorSpec::single("huber"), RegressorSpec::single("ols")],
        ..Default::default()
    }
}

#[test]
fn splits_and_band_partition_cover_the_data() {
    let (_, s) = trained();
    assert_eq!(s.n_train + s.n_holdout + s.n_validation, data().records.len());
    assert_eq!(s.band_partition.iter().sum::<usize>(), s.n_train);
    for counts in &s.smote_counts {
        assert!(counts.iter().all(|&c| c == counts[0]));
    }
}

#[test]
fn routed_prediction_equals_the_band_regressor() {
    let (m, _) = trained();
    let records = &data().records[..200];
    let preds = m.predict_batch(records).unwrap();
    for (r, p) in records.iter().zip(&preds) {
        let phase = m.phase_for(r);
        assert_eq!(phase.preprocessor.kind, p.feature_set_used);
        let x = m.encode(phase, std::slice::from_ref(r)).unwrap();
        let z = phase.regressors[p.band.index()].predict(&x).unwrap()[0];
        let direct = m.boxcox.inverse_one(z).max(MIN_PREDICTED_MINUTES);
        assert_eq!(p.duration_minutes.to_bits(), direct.to_bits());
        assert_eq!(predict_incident(m, r).unwrap(), *p);
    }
}

#[test]
fn predictions_are_floored_and_probabilities_normalized() {
    let (m, _) = trained();
    for p in m.predict_batch(&data().records).unwrap() {
        assert!(p.duration_minutes >= 1.0);
        assert!((p.band_probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let arg = (0..3).max_by(|&a, &b| p.band_probabilities[a].total_cmp(&p.band_probabilities[b]).then(b.cmp(&a))).unwrap();
        assert_eq!(p.band.index(), arg);
        assert_eq!(p.model_version, MODEL_VERSION);
    }
}

#[test]
fn phase_follows_responder_availability() {
    let (m, _) = trained();
    let mut r = data().records[0].clone();
    r.responders = None;
    assert_eq!(predict_incident(m, &r).unwrap().feature_set_used, FeatureSetKind::Basic);
    r.responders = Some(Default::default());
    assert_eq!(predict_incident(m, &r).unwrap().feature_set_used, FeatureSetKind::Full);
}

#[test]
fn unseen_categories_and_missing_roadway_fields_still_predict() {
    let (m, _) = trained();
    let mut r = data().records[1].clone();
    r.route_id = "NEVER-SEEN".into();
    r.city_number = 99;
    (r.aadt_bin, r.surface_width, r.surface_type, r.terrain, r.hourly_volume) = (None, None, None, None, None);
    let p = predict_incident(m, &r).unwrap();
    assert!(p.duration_minutes.is_finite());
}

#[test]
fn malformed_records_list_their_fields() {
    let (m, _) = trained();
    let mut r = data().records[2].clone();
    r.lanes = 0;
    r.measure = -1.0;
    match predict_incident(m, &r) {
        Err(Error::Validation { fields, .. }) => assert_eq!(fields, vec!["lanes", "measure"]),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn oracle_routed_error_beats_the_band_median() {
    let (m, _) = trained();
    // Records beyond the training rows are not guaranteed unseen, so use a fresh sample.
    let fresh = generate(&GeneratorConfig { n_records: 1500, seed: 8, ..Default::default() }).unwrap();
    let report = evaluate_framework(m, &fresh.records).unwrap();
    let train_bands: Vec<(usize, f64)> = data()
        .records
        .iter()
        .map(|r| {
            let d = r.duration_minutes.unwrap();
            (band_of(d).unwrap().index(), d)
        })
        .collect();
    for b in DurationBand::ALL {
        let mut v: Vec<f64> = train_bands.iter().filter(|x| x.0 == b.index()).map(|x| x.1).collect();
        v.sort_by(f64::total_cmp);
        let median = v[v.len() / 2];
        let obs: Vec<f64> = fresh
            .records
            .iter()
            .map(|r| r.duration_minutes.unwrap())
            .filter(|&d| band_of(d).unwrap() == b)
            .collect();
        let baseline = obs.iter().map(|o| (o - median).abs()).sum::<f64>() / obs.len() as f64;
        let mae = report.oracle.per_band[b.index()].unwrap().mae;
        assert!(mae < baseline, "{b}: model {mae} vs median baseline {baseline}");
    }
    assert!(report.routed.overall.mae >= report.oracle.overall.mae);
    assert_eq!(report.confusion.total() as usize, fresh.records.len());
    let keys = report.to_report();
    assert!(keys.get("class.auc.macro").is_some());
    assert!(keys.get("oracle.long.mae").is_some());
}

#[test]
fn artifact_round_trip_is_bit_identical() {
    let (m, _) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.idur");
    save_model(m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(&back, m);
    let fresh = generate(&GeneratorConfig { n_records: 1000, seed: 9, ..Default::default() }).unwrap();
    let a = m.predict_batch(&fresh.records).unwrap();
    let b = back.predict_batch(&fresh.records).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.band, y.band);
        assert_eq!(x.duration_minutes.to_bits(), y.duration_minutes.to_bits());
        for c in 0..3 {
            assert_eq!(x.band_probabilities[c].to_bits(), y.band_probabilities[c].to_bits());
        }
    }
}

#[test]
fn tampered_or_foreign_artifacts_are_rejected() {
    let (m, _) = trained();
    let bytes = to_bytes(m).unwrap();
    let mut flipped = bytes.clone();
    let i = bytes.len() / 2;
    flipped[i] ^= 0x01;
    assert!(matches!(from_bytes(&flipped), Err(Error::Checksum)));
    let mut old = bytes.clone();
    old[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(from_bytes(&old), Err(Error::UnsupportedVersion { found: 0, .. })));
    let mut foreign = bytes;
    foreign[0] = b'X';
    assert!(matches!(from_bytes(&foreign), Err(Error::BadMagic)));
}

#[test]
fn training_is_deterministic_down_to_the_bytes() {
    let d = &data().records;
    let (a, _) = train_framework(d, &data().enrichment, &cheap_config()).unwrap();
    let (b, _) = train_framework(d, &data().enrichment, &cheap_config()).unwrap();
    assert_eq!(to_bytes(&a).unwrap(), to_bytes(&b).unwrap());
    let (c, _) = train_framework(d, &data().enrichment, &FrameworkConfig { seed: 43, ..cheap_config() }).unwrap();
    assert_ne!(to_bytes(&a).unwrap(), to_bytes(&c).unwrap());
}

#[test]
fn training_rejects_bad_inputs() {
    let d = &data().records;
    let few: Vec<IncidentRecord> = d[..100].to_vec();
    assert!(train_framework(&few, &data().enrichment, &cheap_config()).is_err());
    let mut unlabelled = d.to_vec();
    unlabelled[5].duration_minutes = None;
    assert!(train_framework(&unlabelled, &data().enrichment, &cheap_config()).is_err());
    let bad = FrameworkConfig { classifier: vec!["huber".into()], ..cheap_config() };
    assert!(train_framework(d, &data().enrichment, &bad).is_err());
    assert!("rf+logistic".parse::<RegressorSpec>().is_err());
    assert_eq!("rf+huber".parse::<RegressorSpec>().unwrap().to_string(), "rf+huber");
}

#[test]
fn comparison_emits_every_framework_per_band_and_split() {
    let report = compare_frameworks(&data().records, &data().enrichment, &cheap_config()).unwrap();
    let keys = report.to_report();
    for split in ["test", "validation"] {
        for fw in Framework::ALL {
            for band in ["short", "medium", "long", "all"] {
                let k = format!("compare.{split}.{}.{band}.mae", fw.label());
                let v = keys.get_real(&k).unwrap_or_else(|| panic!("missing {k}"));
                assert!(v.is_finite() && v >= 0.0);
            }
        }
        assert!(keys.get_real(&format!("compare.{split}.class_auc")).is_some());
    }
    assert_eq!(report.clusters.standardized.len(), SCAN_KS.len());
    assert_eq!(report.clusters.cluster_sizes.iter().sum::<usize>(), report.n_train);
    for e in report.clusters.standardized.iter().chain(&report.clusters.raw) {
        if let Some(s) = e.silhouette {
            assert!((-1.0..=1.0).contains(&s));
        }
    }
    assert!(report.table().contains("Without_class"));
}

#[test]
fn enrichment_sidecar_and_derived_tables_agree_on_present_keys() {
    let derived = EnrichmentTable::from_records(&data().records).unwrap();
    assert!(!derived.is_empty());
    let r = &data().records[0];
    let filled = derived.enrich(r);
    assert!(filled.aadt_bin.is_some() && filled.hourly_volume.is_some() && filled.terrain.is_some());
}
