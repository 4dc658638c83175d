//! Acquisitions on disk and the preprocessing that turns them into samples.
//!
//! A dataset root holds a `manifest.json` and one CSV per acquisition:
//!
//! ```text
//! manifest.json   [{"environment": "garden", "fps": 8, "files": ["garden_00.csv", ...]}, ...]
//! garden_00.csv   idx,label_deg_s,gyro_deg_s,p000,...,p767
//! ```
//!
//! Pixels are the 24x32 frame in row-major order, in degrees Celsius. Values
//! are written with the shortest decimal form that parses back to the same
//! f64, so a write/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NATIVE_H: usize = 24;
pub const NATIVE_W: usize = 32;
pub const PIXELS: usize = NATIVE_H * NATIVE_W;
pub const DEFAULT_FPS: f64 = 8.0;
/// Largest commanded rotation speed magnitude, deg/s.
pub const MAX_SPEED_DEG_S: f64 = 200.0;
pub const MANIFEST_FILE: &str = "manifest.json";

const FIXED_COLUMNS: [&str; 3] = ["idx", "label_deg_s", "gyro_deg_s"];

/// One 24x32 frame of temperatures (°C), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFrame(Vec<f64>);

impl ThermalFrame {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::invalid(format!(
                "thermal frame needs {PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(ThermalFrame(pixels))
    }

    pub fn filled(value: f64) -> Self {
        ThermalFrame(vec![value; PIXELS])
    }

    pub fn pixels(&self) -> &[f64] {
        &self.0
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0[row * NATIVE_W + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub frame: ThermalFrame,
    /// Gyro rate reading, deg/s.
    pub gyro: f64,
    /// Ground-truth rotation speed, deg/s.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    /// File stem; unique within a dataset.
    pub id: String,
    pub environment: String,
    pub fps: f64,
    pub records: Vec<Record>,
}

impl Acquisition {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Maximal runs of records sharing one label (one commanded speed).
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].label != self.records[start].label {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid(format!("acquisition {}: fps must be positive", self.id)));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.frame.pixels().len() != PIXELS {
                return Err(Error::invalid(format!("acquisition {} record {i}: bad frame size", self.id)));
            }
            if !r.label.is_finite() || r.label.abs() > MAX_SPEED_DEG_S {
                return Err(Error::invalid(format!(
                    "acquisition {} record {i}: label {} outside [-{MAX_SPEED_DEG_S}, {MAX_SPEED_DEG_S}]",
                    self.id, r.label
                )));
            }
            if !r.gyro.is_finite() || r.frame.pixels().iter().any(|p| !p.is_finite()) {
                return Err(Error::invalid(format!("acquisition {} record {i}: non-finite value", self.id)));
            }
        }
        Ok(())
    }
}

fn csv_header() -> String {
    let mut h = FIXED_COLUMNS.join(",");
    for p in 0..PIXELS {
        write!(h, ",p{p:03}").expect("write to string");
    }
    h
}

pub fn write_acquisition(acq: &Acquisition, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    acq.validate()?;
    let mut out = String::with_capacity(acq.len() * PIXELS * 6 + 4096);
    out.push_str(&csv_header());
    out.push('\n');
    for (i, r) in acq.records.iter().enumerate() {
        write!(out, "{i},{},{}", r.label, r.gyro).expect("write to string");
        for p in r.frame.pixels() {
            write!(out, ",{p}").expect("write to string");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads one acquisition CSV. The environment is left empty and the frame
/// rate defaulted; [`load_dataset`] fills both from the manifest.
pub fn load_acquisition(path: impl AsRef<Path>) -> Result<Acquisition> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 0, format!("{other:?}")),
        })?;
    let mut rows = reader.records();

    let header = match rows.next() {
        None => return Err(parse_err(path, 1, "empty file")),
        Some(h) => h.map_err(|e| parse_err(path, 1, e.to_string()))?,
    };
    let expected = csv_header();
    if header.iter().collect::<Vec<_>>().join(",") != expected {
        return Err(parse_err(
            path,
            1,
            format!("header must be {},p000..p{:03}", FIXED_COLUMNS.join(","), PIXELS - 1),
        ));
    }

    let mut records = Vec::new();
    let mut last_idx: Option<u64> = None;
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != FIXED_COLUMNS.len() + PIXELS {
            return Err(parse_err(
                path,
                line,
                format!("expected {} pixel values, found {}", PIXELS, row.len().saturating_sub(3)),
            ));
        }
        let num = |col: usize| -> Result<f64> {
            let s = &row[col];
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("column {} is not a number: '{s}'", col + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {} is not finite", col + 1)));
            }
            Ok(v)
        };
        let idx: u64 = row[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("idx '{}' is not a non-negative integer", &row[0])))?;
        if let Some(prev) = last_idx {
            if idx <= prev {
                return Err(parse_err(path, line, format!("idx {idx} does not follow {prev}")));
            }
        }
        last_idx = Some(idx);
        let label = num(1)?;
        if label.abs() > MAX_SPEED_DEG_S {
            return Err(parse_err(
                path,
                line,
                format!("label {label} outside [-{MAX_SPEED_DEG_S}, {MAX_SPEED_DEG_S}] deg/s"),
            ));
        }
        let gyro = num(2)?;
        let pixels = (3..3 + PIXELS).map(num).collect::<Result<Vec<f64>>>()?;
        records.push(Record {
            frame: ThermalFrame(pixels),
            gyro,
            label,
        });
    }
    if records.is_empty() {
        return Err(parse_err(path, 2, "no records"));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Acquisition {
        id,
        environment: String::new(),
        fps: DEFAULT_FPS,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub environment: String,
    pub fps: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ManifestRepr {
    Many(Vec<ManifestEntry>),
    One(ManifestEntry),
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = root.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let repr: ManifestRepr = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    Ok(match repr {
        ManifestRepr::Many(v) => v,
        ManifestRepr::One(e) => vec![e],
    })
}

/// Writes entries sorted by environment name.
pub fn write_manifest(root: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = root.as_ref().join(MANIFEST_FILE);
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| a.environment.cmp(&b.environment));
    let mut text = serde_json::to_string_pretty(&sorted)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads every acquisition listed in a dataset root's manifest, in manifest order.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Acquisition>> {
    let root = root.as_ref();
    let mut out = Vec::new();
    for entry in read_manifest(root)? {
        for file in &entry.files {
            let mut acq = load_acquisition(root.join(file))?;
            acq.environment = entry.environment.clone();
            acq.fps = entry.fps;
            acq.validate()?;
            out.push(acq);
        }
    }
    Ok(out)
}

/// Where acquisitions come from. The canonical CSV layout is the only
/// implementation; other recordings plug in here.
pub trait AcquisitionSource {
    fn load(&self) -> Result<Vec<Acquisition>>;
}

#[derive(Debug, Clone)]
pub struct CanonicalDataset {
    pub root: PathBuf,
}

impl AcquisitionSource for CanonicalDataset {
    fn load(&self) -> Result<Vec<Acquisition>> {
        load_dataset(&self.root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    /// Speeds (labels and gyro) are divided by this, deg/s.
    pub speed_scale: f64,
    /// Lower bound on the per-frame standard deviation.
    pub std_floor: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            speed_scale: MAX_SPEED_DEG_S,
            std_floor: 1e-6,
        }
    }
}

impl NormalizationSpec {
    pub fn normalize_speed(&self, deg_s: f64) -> f64 {
        deg_s / self.speed_scale
    }

    pub fn denormalize_speed(&self, y_norm: f64) -> f64 {
        y_norm * self.speed_scale
    }
}

pub fn denormalize_speed(y_norm: f64, norm: &NormalizationSpec) -> f64 {
    norm.denormalize_speed(y_norm)
}

/// Non-overlapping `nr`x`nr` block means; rows and columns that do not fill
/// a whole block are dropped.
pub fn subsample_frame(frame: &ThermalFrame, nr: usize) -> Result<Tensor> {
    subsample_grid(frame.pixels(), NATIVE_H, NATIVE_W, nr)
}

pub fn subsample_grid(data: &[f64], h: usize, w: usize, nr: usize) -> Result<Tensor> {
    if !crate::model::SUBSAMPLE_FACTORS.contains(&nr) {
        return Err(Error::invalid(format!("unsupported subsampling factor {nr}")));
    }
    if data.len() != h * w || h < nr || w < nr {
        return Err(Error::invalid(format!("cannot subsample a {h}x{w} grid by {nr}")));
    }
    let (oh, ow) = (h / nr, w / nr);
    let area = (nr * nr) as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let mut s = 0.0;
            for r in i * nr..(i + 1) * nr {
                s += data[r * w + j * nr..r * w + (j + 1) * nr].iter().sum::<f64>();
            }
            out.push(s / area);
        }
    }
    Tensor::new(vec![oh, ow], out)
}

/// Per-frame standardization: zero mean, unit (population) standard deviation.
pub fn normalize_frame(frame: &Tensor, norm: &NormalizationSpec) -> Tensor {
    let n = frame.len() as f64;
    let mean = frame.data().iter().sum::<f64>() / n;
    let var = frame.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(norm.std_floor);
    frame.map(|x| (x - mean) / std)
}

/// Mean of the gyro readings over a window.
pub fn gyro_average(readings: &[f64]) -> Result<f64> {
    if readings.is_empty() {
        return Err(Error::invalid("gyro average over no readings"));
    }
    Ok(readings.iter().sum::<f64>() / readings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleSource {
    pub acquisition: String,
    pub start: usize,
}

/// One network input: `n_frames` preprocessed frames stacked as channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Tensor,
    /// Normalized gyro average over the window.
    pub y_gy: f64,
    /// Normalized ground-truth speed.
    pub y: f64,
    pub source: SampleSource,
}

pub fn preprocess_frame(frame: &ThermalFrame, nr: usize, norm: &NormalizationSpec) -> Result<Tensor> {
    Ok(normalize_frame(&subsample_frame(frame, nr)?, norm))
}

/// Stride-1 windows of `n_frames` consecutive records, never crossing a
/// change of commanded speed.
pub fn make_windows(acq: &Acquisition, n_frames: usize, nr: usize, norm: &NormalizationSpec) -> Result<Vec<Sample>> {
    if n_frames == 0 {
        return Err(Error::invalid("windows need at least one frame"));
    }
    let processed = acq
        .records
        .iter()
        .map(|r| preprocess_frame(&r.frame, nr, norm))
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = match processed.first() {
        Some(t) => (t.shape()[0], t.shape()[1]),
        None => return Ok(Vec::new()),
    };
    let mut out = Vec::new();
    for seg in acq.segments() {
        if seg.len() < n_frames {
            continue;
        }
        for start in seg.start..=seg.end - n_frames {
            let window = start..start + n_frames;
            let mut data = Vec::with_capacity(n_frames * h * w);
            for t in &processed[window.clone()] {
                data.extend_from_slice(t.data());
            }
            let gyro: Vec<f64> = acq.records[window].iter().map(|r| r.gyro).collect();
            out.push(Sample {
                frames: Tensor::new(vec![n_frames, h, w], data)?,
                y_gy: norm.normalize_speed(gyro_average(&gyro)?),
                y: norm.normalize_speed(acq.records[start].label),
                source: SampleSource {
                    acquisition: acq.id.clone(),
                    start,
                },
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn acq_with_segments(lengths: &[usize]) -> Acquisition {
        let mut records = Vec::new();
        for (s, &len) in lengths.iter().enumerate() {
            for k in 0..len {
                let mut px = vec![20.0; PIXELS];
                px[k % PIXELS] += 1.0 + s as f64;
                records.push(Record {
                    frame: ThermalFrame::new(px).unwrap(),
                    gyro: 30.0 + s as f64 + k as f64 * 0.01,
                    label: 30.0 + 10.0 * s as f64,
                });
            }
        }
        Acquisition {
            id: "t".into(),
            environment: "lab".into(),
            fps: 8.0,
            records,
        }
    }

    #[test]
    fn window_counts() {
        let norm = NormalizationSpec::default();
        assert_eq!(make_windows(&acq_with_segments(&[100]), 3, 1, &norm).unwrap().len(), 98);
        let two = make_windows(&acq_with_segments(&[50, 50]), 3, 1, &norm).unwrap();
        assert_eq!(two.len(), 96);
        assert_eq!(make_windows(&acq_with_segments(&[1]), 2, 1, &norm).unwrap().len(), 0);
        assert_eq!(make_windows(&acq_with_segments(&[2, 7, 1, 4]), 3, 2, &norm).unwrap().len(), 5 + 2);
    }

    #[test]
    fn windows_share_one_label() {
        let acq = acq_with_segments(&[5, 6, 3]);
        let norm = NormalizationSpec::default();
        for s in make_windows(&acq, 3, 1, &norm).unwrap() {
            let labels: Vec<f64> = acq.records[s.source.start..s.source.start + 3].iter().map(|r| r.label).collect();
            assert!(labels.iter().all(|&l| l == labels[0]));
            assert_eq!(s.y, labels[0] / 200.0);
            assert_eq!(s.frames.shape(), &[3, 24, 32]);
        }
    }

    #[test]
    fn label_normalization() {
        let norm = NormalizationSpec::default();
        assert_eq!(norm.normalize_speed(200.0), 1.0);
        assert_eq!(denormalize_speed(1.0, &norm), 200.0);
        assert_eq!(denormalize_speed(0.0, &norm), 0.0);
        assert_eq!(denormalize_speed(-0.5, &norm), -100.0);
    }

    #[test]
    fn subsampling() {
        let f = ThermalFrame::new((0..PIXELS).map(|i| i as f64).collect()).unwrap();
        assert_eq!(subsample_frame(&f, 1).unwrap().data(), f.pixels());
        let block = subsample_grid(&[1.0, 2.0, 3.0, 4.0], 2, 2, 2).unwrap();
        assert_eq!(block.data(), &[2.5]);
        assert_eq!(subsample_frame(&f, 3).unwrap().shape(), &[8, 10]);
        assert_eq!(subsample_frame(&f, 2).unwrap().shape(), &[12, 16]);
        assert!(subsample_frame(&f, 4).is_err());
    }

    #[test]
    fn normalization_examples() {
        let norm = NormalizationSpec::default();
        let c = normalize_frame(&Tensor::filled(&[24, 32], 20.0), &norm);
        assert!(c.data().iter().all(|&v| v == 0.0));
        let alt = Tensor::new(vec![2, 2], vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        assert_eq!(normalize_frame(&alt, &norm).data(), &[-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn gyro_average_examples() {
        assert_eq!(gyro_average(&[30.0, 32.0, 31.0]).unwrap(), 31.0);
        assert_eq!(gyro_average(&[4.5; 5]).unwrap(), 4.5);
        assert_eq!(gyro_average(&[-17.0]).unwrap(), -17.0);
        assert!(gyro_average(&[]).is_err());
    }

    #[test]
    fn segments_partition_records() {
        let acq = acq_with_segments(&[3, 1, 4]);
        assert_eq!(acq.segments(), vec![0..3, 3..4, 4..8]);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(px in proptest::collection::vec(-40.0f64..80.0, 12)) {
            let norm = NormalizationSpec::default();
            let t = Tensor::new(vec![3, 4], px).unwrap();
            let once = normalize_frame(&t, &norm);
            let twice = normalize_frame(&once, &norm);
            let mean = once.data().iter().sum::<f64>() / 12.0;
            prop_assert!(mean.abs() < 1e-9);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn subsampling_preserves_covered_mean(px in proptest::collection::vec(0.0f64..50.0, PIXELS), nr in 1usize..=3) {
            let f = ThermalFrame::new(px).unwrap();
            let s = subsample_frame(&f, nr).unwrap();
            let (oh, ow) = (24 / nr, 32 / nr);
            let mut covered = 0.0;
            for r in 0..oh * nr {
                for c in 0..ow * nr {
                    covered += f.at(r, c);
                }
            }
            let covered_mean = covered / (oh * nr * ow * nr) as f64;
            let block_mean = s.data().iter().sum::<f64>() / s.len() as f64;
            prop_assert!((covered_mean - block_mean).abs() < 1e-9);
        }

        #[test]
        fn gyro_average_shift_equivariant(g in proptest::collection::vec(-200.0f64..200.0, 1..7), b in -5.0f64..5.0) {
            let shifted: Vec<f64> = g.iter().map(|x| x + b).collect();
            let d = gyro_average(&shifted).unwrap() - gyro_average(&g).unwrap();
            prop_assert!((d - b).abs() < 1e-9);
        }

        #[test]
        fn window_count_formula(lens in proptest::collection::vec(1usize..12, 1..6), nf in 1usize..6) {
            let acq = acq_with_segments(&lens);
            let n = make_windows(&acq, nf, 3, &NormalizationSpec::default()).unwrap().len();
            let expect: usize = lens.iter().map(|&l| (l + 1).saturating_sub(nf)).sum();
            prop_assert_eq!(n, expect);
        }
    }
}
