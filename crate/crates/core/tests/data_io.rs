use std::path::Path;

use relnet::data::{
    generate_dataset, generate_scenario, read_dataset, write_dataset, DatasetError, PedestrianSequence,
    ScenarioParams, MANIFEST_FILE,
};
use relnet::model::{param_manifest, ModelConfig, Variant};
use relnet::numeric::NtsrError;

fn small_params() -> ScenarioParams {
    ScenarioParams { width: 16, height: 16, seed: 3, ..ScenarioParams::default() }
}

fn assert_bit_identical(a: &[PedestrianSequence], b: &[PedestrianSequence]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!(x.frames.bit_eq(&y.frames), "{}", x.id);
        let bits = |s: &PedestrianSequence| -> Vec<u32> {
            s.trajectory
                .boxes
                .iter()
                .chain(s.vehicles.iter().flat_map(|v| v.boxes.iter()))
                .flat_map(|b| b.to_array().map(f32::to_bits))
                .collect()
        };
        assert_eq!(bits(x), bits(y));
        assert_eq!(
            (&x.id, x.crossing, x.event_frame, x.fps, x.vehicles.len()),
            (&y.id, y.crossing, y.event_frame, y.fps, y.vehicles.len())
        );
    }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = generate_dataset(&small_params(), 12);
    write_dataset(dir.path(), &seqs).unwrap();
    assert_bit_identical(&seqs, &read_dataset(dir.path()).unwrap());
}

#[test]
fn manifest_has_exactly_the_documented_keys() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &generate_dataset(&small_params(), 2)).unwrap();
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let entries: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_str(&text).unwrap();
    for e in entries {
        let mut keys: Vec<&str> = e.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["T", "crossing", "event_frame", "file", "fps", "id"]);
    }
}

#[test]
fn empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &[]).unwrap();
    assert!(read_dataset(dir.path()).unwrap().is_empty());
}

fn first_file(dir: &Path) -> std::path::PathBuf {
    let seqs = generate_dataset(&small_params(), 3);
    write_dataset(dir, &seqs).unwrap();
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap();
    let entries: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    dir.join(entries[0]["file"].as_str().unwrap())
}

#[test]
fn truncated_container_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let file = first_file(dir.path());
    let bytes = std::fs::read(&file).unwrap();
    std::fs::write(&file, &bytes[..bytes.len() - 7]).unwrap();
    match read_dataset(dir.path()) {
        Err(DatasetError::Container { source: NtsrError::Truncated(_), .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_magic_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let file = first_file(dir.path());
    let mut bytes = std::fs::read(&file).unwrap();
    bytes[..4].copy_from_slice(b"NOPE");
    std::fs::write(&file, bytes).unwrap();
    assert!(matches!(
        read_dataset(dir.path()),
        Err(DatasetError::Container { source: NtsrError::BadMagic(_), .. })
    ));
}

#[test]
fn missing_and_malformed_files_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DatasetError::MissingFile(_))));
    let file = first_file(dir.path());
    std::fs::remove_file(&file).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DatasetError::MissingFile(p)) if p == file));
    std::fs::write(dir.path().join(MANIFEST_FILE), "[{\"id\": 3}]").unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DatasetError::MalformedManifest { .. })));
}

/// Label recomputed from the stored boxes at the decision frame.
fn relabel(seq: &PedestrianSequence, params: &ScenarioParams) -> bool {
    let w = params.width as f64;
    let t = seq.event_frame;
    let ped = f64::from(seq.trajectory.boxes[t].u) / w;
    let mut nearest: Option<(f64, f64)> = None;
    for v in &seq.vehicles {
        let x = f64::from(v.boxes[t].u) / w;
        let gap = ped - x;
        if (0.0..=params.d_near).contains(&gap) && nearest.map_or(true, |(g, _)| gap < g) {
            nearest = Some((gap, (x - f64::from(v.boxes[t - 1].u) / w).abs()));
        }
    }
    nearest.map_or(true, |(_, speed)| speed < params.v_yield)
}

#[test]
fn labels_follow_from_the_kinematics_and_match_the_prior() {
    let params = ScenarioParams::default();
    let (mut crossing, n) = (0, 1000);
    for i in 0..n {
        let seq = generate_scenario(&params, i);
        assert_eq!(relabel(&seq, &params), seq.crossing, "{}", seq.id);
        crossing += usize::from(seq.crossing);
    }
    let fraction = crossing as f64 / n as f64;
    assert!((fraction - params.p_cross).abs() <= 0.05, "crossing fraction {fraction}");
}

#[test]
fn no_vehicles_always_cross() {
    let params = ScenarioParams { num_vehicles_min: 0, num_vehicles_max: 0, ..small_params() };
    for i in 0..20 {
        let seq = generate_scenario(&params, i);
        assert!(seq.vehicles.is_empty() && seq.crossing);
    }
}

fn manifest_text(config: &ModelConfig) -> String {
    param_manifest(config).iter().map(|s| format!("{} {:?}\n", s.name, s.shape)).collect()
}

/// Set `BLESS=1` to rewrite the golden files after an intended change.
#[test]
fn parameter_manifests_match_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for (file, config) in [
        ("manifest_miniature_relation.txt", ModelConfig::miniature()),
        ("manifest_miniature_no_relation.txt", ModelConfig::miniature().with_variant(Variant::NoRelation)),
        ("manifest_default_relation.txt", ModelConfig::default()),
        ("manifest_default_no_relation.txt", ModelConfig::default().with_variant(Variant::NoRelation)),
    ] {
        let path = golden.join(file);
        let text = manifest_text(&config);
        if std::env::var_os("BLESS").is_some() {
            std::fs::write(&path, &text).unwrap();
        }
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text, "{file}");
    }
}
