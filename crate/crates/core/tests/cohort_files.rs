use std::fs;

use pkcp_core::cohort::{load_manifest, parse_manifest, split_by_patient, write_phantom_cohort, PhantomSpec, Split, MANIFEST_FILE};
use pkcp_core::model::Phase;
use pkcp_core::pkcp::{enumerate_cohort, write_composites, ExpansionPolicy};
use pkcp_core::Execution;

fn spec() -> PhantomSpec {
    PhantomSpec {
        height: 16,
        width: 16,
        radius_min: 3.0,
        radius_max: 5.0,
        seed: 9,
        ..PhantomSpec::with_counts([3, 2, 2, 1])
    }
}

#[test]
fn written_cohort_loads_back_to_the_same_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = write_phantom_cohort(&spec(), dir.path(), Execution::Parallel).unwrap();
    let m = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.patients.len(), 8);
    assert_eq!(m.slice_count(), 8 * 12);
    let grids = m.load_grids(Execution::Sequential).unwrap();
    assert_eq!(grids, cohort.grids);
}

#[test]
fn manifest_json_uses_documented_keys() {
    let dir = tempfile::tempdir().unwrap();
    write_phantom_cohort(&spec(), dir.path(), Execution::Sequential).unwrap();
    let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["K"], 3);
    assert_eq!(v["phases"], serde_json::json!(["PC", "AP", "PVP", "DP"]));
    let report = &v["patients"][0]["reports"][0];
    assert!(report["class"].is_string());
    let slice = &report["slices"][0];
    assert!(slice["path"].is_string() && slice["k"].is_u64() && slice["box"].is_array());
}

#[test]
fn missing_image_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = write_phantom_cohort(&spec(), dir.path(), Execution::Sequential).unwrap();
    let victim = &cohort.manifest.patients[0].reports[0].slices[0].path;
    fs::remove_file(dir.path().join(victim)).unwrap();
    let err = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap_err().to_string();
    assert!(err.contains(victim.as_str()), "{err}");
    // structure alone still parses
    assert!(parse_manifest(dir.path().join(MANIFEST_FILE)).is_ok());
}

#[test]
fn unknown_manifest_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_phantom_cohort(&spec(), dir.path(), Execution::Sequential).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap().replacen("\"schema_version\"", "\"colour\": 1, \"schema_version\"", 1);
    fs::write(&path, text).unwrap();
    assert!(parse_manifest(&path).is_err());
}

#[test]
fn split_assignment_survives_a_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = write_phantom_cohort(&spec(), dir.path(), Execution::Sequential).unwrap();
    let split = split_by_patient(&cohort.manifest, 0.75, 4).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    pkcp_core::cohort::save_manifest(&split, &path).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back.splits, split.splits);
    assert_eq!(back.counts(Split::Train).patients, 6);
    assert_eq!(back.counts(Split::Val).patients, 2);
}

#[test]
fn enumerated_composites_match_their_index() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = write_phantom_cohort(&spec(), dir.path(), Execution::Sequential).unwrap();
    let comps = enumerate_cohort(&cohort.grids, &ExpansionPolicy::default(), Execution::Parallel).unwrap();
    // HH and HB majority (3 each), OBHT and OMHT minority (81 each)
    assert_eq!(comps.len(), 3 * 3 + 2 * 81 + 2 * 3 + 81);
    let out = dir.path().join("enum");
    let index = write_composites(&comps, &out).unwrap();
    for (entry, c) in index.iter().zip(&comps) {
        let bytes = fs::read(out.join(&entry.file)).unwrap();
        assert_eq!(bytes, c.channels.data());
        assert_eq!(entry.shape, [4, 16, 16]);
        assert_eq!(entry.phases, Phase::ALL.to_vec());
    }
    let sidecar: serde_json::Value = serde_json::from_slice(&fs::read(out.join("index.json")).unwrap()).unwrap();
    assert_eq!(sidecar.as_array().unwrap().len(), comps.len());
}
