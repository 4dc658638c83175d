use std::fs;

use thermogyro::dataset::{gyro_average, load_acquisition, load_dataset, make_windows, NormalizationSpec, NATIVE_H, NATIVE_W};
use thermogyro::simulator::{generate_dataset, CameraSpec, DatasetConfig, GyroSpec};

fn config() -> DatasetConfig {
    DatasetConfig {
        n_acquisitions: 6,
        segments_per_acquisition: 10,
        segment_duration_s: 4.0,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn generates_six_files_of_320_frames() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate_dataset(&config(), dir.path()).unwrap();
    assert_eq!(files.len(), 6);
    assert!(files.iter().all(|f| f.frames == 320));

    let acqs = load_dataset(dir.path()).unwrap();
    assert_eq!(acqs.len(), 6);
    for (acq, file) in acqs.iter().zip(&files) {
        acq.validate().unwrap();
        assert_eq!(acq.len(), 320);
        assert_eq!(acq.environment, "garden");
        assert_eq!(acq.segments().len(), 10);
        assert!(acq.records.iter().all(|r| r.frame.pixels().len() == NATIVE_H * NATIVE_W));
        assert_eq!(load_acquisition(&file.path).unwrap().records, acq.records);
        // 10 segments of 32 frames give 30 windows each at N_f = 3
        assert_eq!(make_windows(acq, 3, 1, &NormalizationSpec::default()).unwrap().len(), 300);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        n_acquisitions: 2,
        segments_per_acquisition: 3,
        ..config()
    };
    generate_dataset(&cfg, a.path()).unwrap();
    generate_dataset(&cfg, b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
    }

    let other = tempfile::tempdir().unwrap();
    generate_dataset(&DatasetConfig { seed: 12, ..cfg }, other.path()).unwrap();
    assert_ne!(
        fs::read(a.path().join("garden_00.csv")).unwrap(),
        fs::read(other.path().join("garden_00.csv")).unwrap()
    );
}

#[test]
fn environments_share_one_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let small = DatasetConfig {
        n_acquisitions: 2,
        segments_per_acquisition: 2,
        segment_duration_s: 1.0,
        ..config()
    };
    generate_dataset(&small, dir.path()).unwrap();
    generate_dataset(
        &DatasetConfig {
            environment: "office".into(),
            n_acquisitions: 1,
            ..small.clone()
        },
        dir.path(),
    )
    .unwrap();
    // regenerating an environment replaces only its own entry
    generate_dataset(&small, dir.path()).unwrap();
    let acqs = load_dataset(dir.path()).unwrap();
    let envs: Vec<_> = acqs.iter().map(|a| a.environment.as_str()).collect();
    assert_eq!(envs, vec!["garden", "garden", "office"]);
}

#[test]
fn noiseless_unbiased_gyro_matches_labels_in_every_window() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        n_acquisitions: 1,
        segments_per_acquisition: 4,
        segment_duration_s: 2.0,
        gyro: GyroSpec {
            bias_deg_s: 0.0,
            noise_std_deg_s: 0.0,
        },
        camera: CameraSpec {
            noise_std_c: 0.0,
            ..CameraSpec::default()
        },
        ..config()
    };
    generate_dataset(&cfg, dir.path()).unwrap();
    let acq = &load_dataset(dir.path()).unwrap()[0];
    for seg in acq.segments() {
        for w in acq.records[seg].windows(3) {
            let g: Vec<f64> = w.iter().map(|r| r.gyro).collect();
            assert_eq!(gyro_average(&g).unwrap(), w[0].label);
        }
    }
}
