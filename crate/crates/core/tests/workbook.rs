mod common;

use common::fixture;
use klafate::fmea::{load_workbook, save_workbook, FmeaError, SYSTEM_FILE};
use klafate::knowledge::KnowledgeModel;

#[test]
fn save_is_byte_identical_to_fixture() {
    let wb = load_workbook(fixture("bgs.fmea")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_workbook(&wb, dir.path()).unwrap();
    for entry in std::fs::read_dir(fixture("bgs.fmea")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(dir.path().join(name)).unwrap(),
            "{}",
            name.to_string_lossy()
        );
    }
    assert_eq!(load_workbook(dir.path()).unwrap(), wb);
}

#[test]
fn fixture_model_has_three_labels() {
    let wb = load_workbook(fixture("bgs.fmea")).unwrap();
    let m = KnowledgeModel::from_workbook(&wb).unwrap();
    assert_eq!(m.frame().labels(), ["LQ", "LP", "NP"]);
    assert_eq!(wb.component_fms_of("LQ").count(), 3);
}

#[test]
fn broken_link_is_reported_with_its_row() {
    match load_workbook(fixture("broken.fmea")) {
        Err(FmeaError::Link { fm_id, system_fm, line, .. }) => {
            assert_eq!((fm_id.as_str(), system_fm.as_str(), line), ("container_missing", "LX", 6));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn overlapping_system_rules_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let wb = load_workbook(fixture("bgs.fmea")).unwrap();
    save_workbook(&wb, dir.path()).unwrap();
    let path = dir.path().join(SYSTEM_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let edited = text.replace("C1 or not C2,", "C1 or not C2 or production_rate < LOWEST_PRODUCTION_RATE,");
    assert_ne!(edited, text);
    std::fs::write(&path, edited).unwrap();
    assert!(matches!(load_workbook(dir.path()), Err(FmeaError::NotExclusive { .. })));
}
