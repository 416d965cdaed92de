mod common;

use std::io::Write;

use common::{random_dataset, rng};
use svydb::features::{load_csv_reader, spec_for, write_csv};
use svydb::{expand_interactions, load_csv, ColumnSpec};

#[test]
fn write_then_load_round_trips() {
    let mut r = rng(41);
    for k in 0..10 {
        let d = random_dataset(&mut r, 30, 4, 2, 1.0).with_names("outcome", Some("wt".into()));
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let (back, summary) = load_csv_reader(buf.as_slice(), &spec_for(&d)).unwrap();
        assert_eq!(back, d, "instance {k}");
        assert_eq!(summary.rows_dropped, 0);
        let mut again = Vec::new();
        write_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }
}

#[test]
fn expanded_design_round_trips_with_parentage() {
    let mut r = rng(42);
    let d = random_dataset(&mut r, 40, 3, 3, 1.0);
    let (e, map) = expand_interactions(&d, 2).unwrap();
    assert_eq!(e.p(), 6);
    assert_eq!(map.output_columns.len(), 6);
    let mut buf = Vec::new();
    write_csv(&e, &mut buf).unwrap();
    let (back, _) = load_csv_reader(buf.as_slice(), &spec_for(&e)).unwrap();
    assert_eq!(back.expansion(), Some(&map));
    assert_eq!(back.x(), e.x());
    assert!(expand_interactions(&back, 2).is_err());
}

#[test]
fn load_from_file_with_mapping_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("d.csv");
    let mut f = std::fs::File::create(&csv_path).unwrap();
    writeln!(f, "y,w,size,region").unwrap();
    for (i, region) in ["A", "B", "C", "A", "C", "B"].iter().enumerate() {
        writeln!(f, "{},{},{},{}", i % 2, 1.0 + i as f64, i as f64 * 0.5, region).unwrap();
    }
    drop(f);
    let spec: ColumnSpec = serde_json::from_str(
        r#"{"outcome_column":"y","weight_column":"w","regressor_columns":["size","region"],
            "reference_levels":{"region":"A"}}"#,
    )
    .unwrap();
    let d = load_csv(&csv_path, &spec).unwrap();
    assert_eq!(d.n(), 6);
    assert_eq!(d.column_names(), ["size", "region:B", "region:C"]);
    assert_eq!(d.w().as_slice(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(d.x().column(2).as_slice(), [0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}
