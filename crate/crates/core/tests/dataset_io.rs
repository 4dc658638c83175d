use std::fs;
use std::path::Path;

use proptest::prelude::*;
use thermogyro::dataset::{
    load_acquisition, load_dataset, make_windows, write_acquisition, write_manifest, Acquisition, ManifestEntry,
    NormalizationSpec, Record, ThermalFrame, MANIFEST_FILE, PIXELS,
};
use thermogyro::Error;

fn header() -> String {
    let mut h = String::from("idx,label_deg_s,gyro_deg_s");
    for p in 0..PIXELS {
        h.push_str(&format!(",p{p:03}"));
    }
    h
}

fn row(idx: usize, label: f64, gyro: f64, pixel: &str) -> String {
    let mut r = format!("{idx},{label},{gyro}");
    for _ in 0..PIXELS {
        r.push(',');
        r.push_str(pixel);
    }
    r
}

fn acquisition(records: Vec<Record>) -> Acquisition {
    Acquisition {
        id: "run".into(),
        environment: "lab".into(),
        fps: 8.0,
        records,
    }
}

fn parse_line(path: &Path) -> u64 {
    match load_acquisition(path) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_files_name_the_offending_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");

    fs::write(&p, "").unwrap();
    assert_eq!(parse_line(&p), 1);

    let good = [row(0, 50.0, 51.0, "20"), row(1, 50.0, 50.5, "20")];
    let short = "2,50,50,1,2,3".to_string();
    fs::write(&p, [header(), good[0].clone(), good[1].clone(), short].join("\n")).unwrap();
    assert_eq!(parse_line(&p), 4);

    let backwards = row(0, 50.0, 50.0, "20");
    fs::write(&p, [header(), good[0].clone(), good[1].clone(), backwards].join("\n")).unwrap();
    assert_eq!(parse_line(&p), 4);

    let garbage = row(2, 50.0, 50.0, "warm");
    fs::write(&p, [header(), good[0].clone(), good[1].clone(), garbage].join("\n")).unwrap();
    assert_eq!(parse_line(&p), 4);

    let too_fast = row(1, 250.0, 250.0, "20");
    fs::write(&p, [header(), good[0].clone(), too_fast].join("\n")).unwrap();
    assert_eq!(parse_line(&p), 3);

    fs::write(&p, "idx,label,gyro\n").unwrap();
    assert_eq!(parse_line(&p), 1);

    assert!(matches!(load_acquisition(dir.path().join("missing.csv")), Err(Error::Io { .. })));
}

#[test]
fn single_record_file_has_no_windows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.csv");
    fs::write(&p, format!("{}\n{}\n", header(), row(0, -30.0, -29.0, "21.5"))).unwrap();
    let acq = load_acquisition(&p).unwrap();
    assert_eq!(acq.len(), 1);
    assert_eq!(acq.id, "one");
    for nf in 2..=6 {
        assert!(make_windows(&acq, nf, 1, &NormalizationSpec::default()).unwrap().is_empty());
    }
}

#[test]
fn garden_manifest_frame_counts() {
    // six files whose lengths sum to the published Garden total
    let lengths = [2532, 2532, 2532, 2532, 2532, 2533];
    assert_eq!(lengths.iter().sum::<usize>(), 15_193);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (k, &n) in lengths.iter().enumerate() {
        let name = format!("garden_{k:02}.csv");
        let mut text = header();
        text.push('\n');
        let body = row(0, 0.0, 0.0, "20");
        let pixels = body.splitn(4, ',').nth(3).unwrap().to_string();
        for i in 0..n {
            let label = if i < n / 2 { 40.0 } else { -120.0 };
            text.push_str(&format!("{i},{label},{label},{pixels}\n"));
        }
        fs::write(dir.path().join(&name), text).unwrap();
        files.push(name);
    }
    write_manifest(
        dir.path(),
        &[ManifestEntry {
            environment: "garden".into(),
            fps: 8.0,
            files,
        }],
    )
    .unwrap();
    let acqs = load_dataset(dir.path()).unwrap();
    assert_eq!(acqs.len(), 6);
    assert_eq!(acqs.iter().map(|a| a.len()).sum::<usize>(), 15_193);
    assert!(acqs.iter().all(|a| a.environment == "garden" && a.segments().len() == 2));
}

#[test]
fn manifest_may_be_a_single_object() {
    let dir = tempfile::tempdir().unwrap();
    let acq = acquisition(vec![Record {
        frame: ThermalFrame::filled(20.0),
        gyro: 1.0,
        label: 0.0,
    }]);
    write_acquisition(&acq, dir.path().join("run.csv")).unwrap();
    fs::write(
        dir.path().join(MANIFEST_FILE),
        r#"{"environment": "office", "fps": 9, "files": ["run.csv"]}"#,
    )
    .unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded[0].environment, "office");
    assert_eq!(loaded[0].fps, 9.0);

    fs::write(dir.path().join(MANIFEST_FILE), "{\n  \"files\": 3\n}").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { .. })));
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        Just(0.1 + 0.2),
        Just(f64::MIN_POSITIVE),
        Just(-0.0),
        Just(1e-300),
        Just(f64::MAX)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn csv_round_trip_is_bit_exact(
        pixels in prop::collection::vec(finite(), PIXELS),
        rows in prop::collection::vec((-200.0f64..200.0, finite()), 1..4),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<Record> = rows
            .iter()
            .enumerate()
            .map(|(i, &(label, gyro))| {
                let mut px = pixels.clone();
                px.rotate_left(i);
                Record { frame: ThermalFrame::new(px).unwrap(), gyro, label }
            })
            .collect();
        let acq = acquisition(records);
        let path = dir.path().join("run.csv");
        write_acquisition(&acq, &path).unwrap();
        let back = load_acquisition(&path).unwrap();
        prop_assert_eq!(back.len(), acq.len());
        for (a, b) in acq.records.iter().zip(&back.records) {
            prop_assert_eq!(a.label.to_bits(), b.label.to_bits());
            prop_assert_eq!(a.gyro.to_bits(), b.gyro.to_bits());
            let same = a.frame.pixels().iter().zip(b.frame.pixels()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
    }
}
