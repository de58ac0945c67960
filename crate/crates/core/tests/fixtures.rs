use std::path::PathBuf;

use skinaug_core::fixture::table1_manifest;
use skinaug_core::manifest::load_manifest;

fn checked_in() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/table1_manifest.csv")
}

#[test]
fn checked_in_table1_csv_matches_generator() {
    let on_disk = std::fs::read_to_string(checked_in()).unwrap();
    assert_eq!(on_disk, table1_manifest().to_csv_string(), "regenerate with `skinaug fixture table1`");
}

#[test]
fn checked_in_table1_csv_loads() {
    let m = load_manifest(&checked_in(), None).unwrap();
    assert_eq!(m.len(), 2707);
    assert_eq!(m.count_by(None, None).unwrap().total(), 2707);
}
