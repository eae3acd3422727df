use std::path::PathBuf;

use lazymtl::scenario::{EventFile, Scenario};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn scenarios_survive_a_write_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in std::fs::read_dir(fixtures()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let s = Scenario::load(&path).unwrap();
            let copy = dir.path().join(path.file_name().unwrap());
            s.write(&copy).unwrap();
            assert_eq!(Scenario::load(&copy).unwrap(), s, "{}", path.display());
            seen += 1;
        }
    }
    assert_eq!(seen, 3);
}

#[test]
fn event_file_round_trip() {
    let path = fixtures().join("unsafe2_at_7.5s.json");
    let ev = EventFile::load(&path).unwrap();
    let back: EventFile = serde_json::from_str(&ev.to_json()).unwrap();
    assert_eq!(back, ev);
    let s = Scenario::load(fixtures().join("phi3.toml")).unwrap();
    let updates = s.updates::<f64>(&ev).unwrap();
    assert_eq!(updates.len(), 1);
    assert_eq!(updates[0].step, 15);
}
