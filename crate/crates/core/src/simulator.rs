//! Synthetic acquisitions: a rotating 24x32 thermal camera looking at a
//! panoramic temperature field, with a biased, noisy rate gyro alongside.
//!
//! The field is an ambient level plus Gaussian warm blobs. It is periodic in
//! azimuth, so a full turn of the camera sees the same image again. Each
//! acquisition follows a schedule of constant-speed segments; labels are the
//! commanded speeds.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    read_manifest, write_acquisition, write_manifest, Acquisition, ManifestEntry, Record, ThermalFrame,
    MANIFEST_FILE, MAX_SPEED_DEG_S, NATIVE_H, NATIVE_W, PIXELS,
};
use crate::error::{Error, Result};

pub const MIN_SPEED_DEG_S: f64 = 20.0;
const BLOB_WIDTH_DEG: (f64, f64) = (5.0, 40.0);
const BLOB_AMPLITUDE_C: (f64, f64) = (2.0, 15.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// Standard deviation of the Gaussian profile, degrees.
    pub width_deg: f64,
    pub amplitude_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ambient_c: f64,
    pub blobs: Vec<Blob>,
    pub seed: u64,
}

/// Wraps an angle difference into [-180, 180).
fn wrap_deg(d: f64) -> f64 {
    (d + 180.0).rem_euclid(360.0) - 180.0
}

impl Blob {
    /// Azimuth profile summed over the neighbouring periodic images so the
    /// field stays smooth across the +/-180 degree seam.
    fn azimuth_profile(&self, azimuth_deg: f64) -> f64 {
        let d = wrap_deg(azimuth_deg - self.azimuth_deg);
        let s2 = 2.0 * self.width_deg * self.width_deg;
        [d - 360.0, d, d + 360.0].iter().map(|x| (-x * x / s2).exp()).sum()
    }

    fn elevation_profile(&self, elevation_deg: f64) -> f64 {
        let d = elevation_deg - self.elevation_deg;
        (-d * d / (2.0 * self.width_deg * self.width_deg)).exp()
    }
}

impl Scene {
    pub fn temperature(&self, azimuth_deg: f64, elevation_deg: f64) -> f64 {
        self.ambient_c
            + self
                .blobs
                .iter()
                .map(|b| b.amplitude_c * b.azimuth_profile(azimuth_deg) * b.elevation_profile(elevation_deg))
                .sum::<f64>()
    }
}

/// Blob centers are uniform over the full turn and the default vertical field
/// of view; widths 5-40 degrees; amplitudes 2-15 °C.
pub fn build_scene(seed: u64, n_blobs: usize, ambient_c: f64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_v = CameraSpec::default().v_fov_deg / 2.0;
    let blobs = (0..n_blobs)
        .map(|_| Blob {
            azimuth_deg: rng.gen_range(0.0..360.0),
            elevation_deg: rng.gen_range(-half_v..half_v),
            width_deg: rng.gen_range(BLOB_WIDTH_DEG.0..BLOB_WIDTH_DEG.1),
            amplitude_c: rng.gen_range(BLOB_AMPLITUDE_C.0..BLOB_AMPLITUDE_C.1),
        })
        .collect();
    Scene {
        ambient_c,
        blobs,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub cols: usize,
    pub rows: usize,
    /// Gaussian pixel noise, °C.
    pub noise_std_c: f64,
    pub fps: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            h_fov_deg: 55.0,
            v_fov_deg: 35.0,
            cols: NATIVE_W,
            rows: NATIVE_H,
            noise_std_c: 0.3,
            fps: 8.0,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_fov_deg > 0.0 && self.v_fov_deg > 0.0) {
            return Err(Error::config("camera field of view must be positive"));
        }
        if !(self.noise_std_c >= 0.0 && self.noise_std_c.is_finite()) {
            return Err(Error::config("pixel noise must be a finite value >= 0"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::config("fps must be positive"));
        }
        if self.cols != NATIVE_W || self.rows != NATIVE_H {
            return Err(Error::config(format!("camera must be {NATIVE_H}x{NATIVE_W}")));
        }
        Ok(())
    }

    /// Azimuth offset of a pixel column's center from the optical axis.
    pub fn column_offset_deg(&self, col: usize) -> f64 {
        ((col as f64 + 0.5) / self.cols as f64 - 0.5) * self.h_fov_deg
    }

    /// Elevation of a pixel row's center; row 0 is the top.
    pub fn row_elevation_deg(&self, row: usize) -> f64 {
        (0.5 - (row as f64 + 0.5) / self.rows as f64) * self.v_fov_deg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GyroSpec {
    /// Constant rate offset, deg/s.
    pub bias_deg_s: f64,
    /// White noise per reading, deg/s.
    pub noise_std_deg_s: f64,
}

impl Default for GyroSpec {
    fn default() -> Self {
        GyroSpec {
            bias_deg_s: 2.0,
            noise_std_deg_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub speed_deg_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedSchedule {
    pub segments: Vec<Segment>,
}

impl SpeedSchedule {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        let s = SpeedSchedule {
            segments: segments
                .into_iter()
                .map(|(speed_deg_s, duration_s)| Segment {
                    speed_deg_s,
                    duration_s,
                })
                .collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("speed schedule is empty"));
        }
        for seg in &self.segments {
            if !(seg.duration_s > 0.0 && seg.duration_s.is_finite()) {
                return Err(Error::invalid(format!("segment duration {} must be positive", seg.duration_s)));
            }
            let a = seg.speed_deg_s.abs();
            if !(MIN_SPEED_DEG_S..=MAX_SPEED_DEG_S).contains(&a) {
                return Err(Error::invalid(format!(
                    "segment speed {} outside +/-[{MIN_SPEED_DEG_S}, {MAX_SPEED_DEG_S}] deg/s",
                    seg.speed_deg_s
                )));
            }
        }
        Ok(())
    }

    /// Integer speeds with random sign and magnitude in [20, 200] deg/s;
    /// consecutive segments always differ so each one is its own labelled run.
    pub fn random(rng: &mut impl Rng, n_segments: usize, duration_s: f64) -> Result<Self> {
        let mut segments: Vec<(f64, f64)> = Vec::with_capacity(n_segments);
        while segments.len() < n_segments {
            let mag = rng.gen_range(MIN_SPEED_DEG_S as i32..=MAX_SPEED_DEG_S as i32) as f64;
            let speed = if rng.gen_bool(0.5) { mag } else { -mag };
            if segments.last().map(|s| s.0) != Some(speed) {
                segments.push((speed, duration_s));
            }
        }
        SpeedSchedule::new(segments)
    }

    pub fn total_duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }
}

/// Renders the frame seen with the optical axis at azimuth `theta_deg`.
pub fn render_frame(scene: &Scene, camera: &CameraSpec, theta_deg: f64, rng: &mut impl Rng) -> ThermalFrame {
    // The field is separable per blob, so evaluate each profile once per
    // column and once per row.
    let az: Vec<Vec<f64>> = scene
        .blobs
        .iter()
        .map(|b| {
            (0..NATIVE_W)
                .map(|c| b.amplitude_c * b.azimuth_profile(theta_deg + camera.column_offset_deg(c)))
                .collect()
        })
        .collect();
    let el: Vec<Vec<f64>> = scene
        .blobs
        .iter()
        .map(|b| (0..NATIVE_H).map(|r| b.elevation_profile(camera.row_elevation_deg(r))).collect())
        .collect();
    let noise = (camera.noise_std_c > 0.0).then(|| Normal::new(0.0, camera.noise_std_c).expect("finite std"));
    let mut px = Vec::with_capacity(PIXELS);
    for r in 0..NATIVE_H {
        for c in 0..NATIVE_W {
            let mut t = scene.ambient_c;
            for (a, e) in az.iter().zip(&el) {
                t += a[c] * e[r];
            }
            if let Some(n) = &noise {
                t += n.sample(rng);
            }
            px.push(t);
        }
    }
    ThermalFrame::new(px).expect("frame has native size")
}

/// Simulates one acquisition. The camera starts at a seeded random heading and
/// advances by `speed / fps` degrees per frame. Segments of a schedule with
/// equal consecutive speeds merge into one labelled run.
pub fn simulate_acquisition(
    scene: &Scene,
    camera: &CameraSpec,
    gyro: &GyroSpec,
    schedule: &SpeedSchedule,
    seed: u64,
) -> Result<Acquisition> {
    camera.validate()?;
    schedule.validate()?;
    if !(gyro.bias_deg_s.is_finite() && gyro.noise_std_deg_s >= 0.0 && gyro.noise_std_deg_s.is_finite()) {
        return Err(Error::config("gyro bias and noise must be finite, noise >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gyro_noise = (gyro.noise_std_deg_s > 0.0).then(|| Normal::new(0.0, gyro.noise_std_deg_s).expect("finite std"));
    let mut theta = rng.gen_range(0.0..360.0);
    let mut records = Vec::new();
    for seg in &schedule.segments {
        let n = (seg.duration_s * camera.fps).round() as usize;
        if n == 0 {
            return Err(Error::invalid(format!(
                "segment of {} s yields no frames at {} fps",
                seg.duration_s, camera.fps
            )));
        }
        for _ in 0..n {
            let frame = render_frame(scene, camera, theta, &mut rng);
            let noise = gyro_noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            records.push(Record {
                frame,
                gyro: seg.speed_deg_s + gyro.bias_deg_s + noise,
                label: seg.speed_deg_s,
            });
            theta = (theta + seg.speed_deg_s / camera.fps).rem_euclid(360.0);
        }
    }
    Ok(Acquisition {
        id: "sim".into(),
        environment: "synthetic".into(),
        fps: camera.fps,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clutter {
    Low,
    Moderate,
    High,
}

impl Clutter {
    pub fn n_blobs(self) -> usize {
        match self {
            Clutter::Low => 4,
            Clutter::Moderate => 10,
            Clutter::High => 20,
        }
    }
}

impl std::str::FromStr for Clutter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Clutter::Low),
            "moderate" | "medium" => Ok(Clutter::Moderate),
            "high" => Ok(Clutter::High),
            other => Err(Error::config(format!("unknown clutter level '{other}'"))),
        }
    }
}

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub environment: String,
    pub n_acquisitions: usize,
    /// Index of the first generated acquisition. Acquisition `k` of an
    /// environment is the same for every value of this field, so a later
    /// index yields fresh runs through the same scene.
    pub first_index: usize,
    pub segments_per_acquisition: usize,
    pub segment_duration_s: f64,
    pub n_blobs: usize,
    pub ambient_c: f64,
    pub camera: CameraSpec,
    pub gyro: GyroSpec,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            environment: "garden".into(),
            n_acquisitions: 6,
            first_index: 0,
            segments_per_acquisition: 20,
            segment_duration_s: 4.0,
            n_blobs: Clutter::Moderate.n_blobs(),
            ambient_c: 20.0,
            camera: CameraSpec::default(),
            gyro: GyroSpec::default(),
            seed: 0,
        }
    }
}

/// Seed of the `k`-th acquisition of an environment.
pub fn acquisition_seed(base: u64, k: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1)
}

pub fn acquisition_file_name(environment: &str, k: usize) -> String {
    format!("{environment}_{k:02}.csv")
}

/// All acquisitions of one environment share its scene; each has its own
/// schedule, starting heading and noise stream.
pub fn simulate_environment(cfg: &DatasetConfig) -> Result<Vec<Acquisition>> {
    if cfg.n_acquisitions == 0 || cfg.segments_per_acquisition == 0 {
        return Err(Error::config("need at least one acquisition and one segment"));
    }
    if cfg.environment.is_empty() || cfg.environment.contains(['/', '\\']) {
        return Err(Error::config(format!("invalid environment name '{}'", cfg.environment)));
    }
    let scene = build_scene(cfg.seed, cfg.n_blobs, cfg.ambient_c);
    (cfg.first_index..cfg.first_index + cfg.n_acquisitions)
        .map(|k| {
            let seed = acquisition_seed(cfg.seed, k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let schedule = SpeedSchedule::random(&mut rng, cfg.segments_per_acquisition, cfg.segment_duration_s)?;
            let mut acq = simulate_acquisition(&scene, &cfg.camera, &cfg.gyro, &schedule, rng.gen())?;
            acq.id = acquisition_file_name(&cfg.environment, k).trim_end_matches(".csv").to_string();
            acq.environment = cfg.environment.clone();
            Ok(acq)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFile {
    pub path: PathBuf,
    pub frames: usize,
}

/// Writes one CSV per acquisition into `out_dir` and records them in the
/// manifest. An existing manifest keeps its other environments; this
/// environment's entry is replaced.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Vec<GeneratedFile>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let acquisitions = simulate_environment(cfg)?;
    let mut generated = Vec::new();
    let mut files = Vec::new();
    for (k, acq) in (cfg.first_index..).zip(&acquisitions) {
        let name = acquisition_file_name(&cfg.environment, k);
        let path = out_dir.join(&name);
        write_acquisition(acq, &path)?;
        generated.push(GeneratedFile {
            path,
            frames: acq.len(),
        });
        files.push(name);
    }
    let mut entries = if out_dir.join(MANIFEST_FILE).exists() {
        read_manifest(out_dir)?
    } else {
        Vec::new()
    };
    entries.retain(|e| e.environment != cfg.environment);
    entries.push(ManifestEntry {
        environment: cfg.environment.clone(),
        fps: cfg.camera.fps,
        files,
    });
    write_manifest(out_dir, &entries)?;
    Ok(generated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gyro_average, make_windows, NormalizationSpec};

    fn quiet_camera() -> CameraSpec {
        CameraSpec {
            noise_std_c: 0.0,
            ..CameraSpec::default()
        }
    }

    fn frame_variance(f: &ThermalFrame) -> f64 {
        let n = PIXELS as f64;
        let m = f.pixels().iter().sum::<f64>() / n;
        f.pixels().iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn empty_scene_is_ambient() {
        let s = build_scene(1, 0, 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = render_frame(&s, &quiet_camera(), 123.0, &mut rng);
        assert!(f.pixels().iter().all(|&p| p == 20.0));
    }

    #[test]
    fn scenes_are_seed_deterministic() {
        assert_eq!(build_scene(5, 7, 18.0), build_scene(5, 7, 18.0));
        assert_ne!(build_scene(5, 7, 18.0), build_scene(6, 7, 18.0));
    }

    #[test]
    fn more_blobs_more_variance() {
        let cam = quiet_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mean_var = |s: &Scene, rng: &mut ChaCha8Rng| {
            (0..36).map(|k| frame_variance(&render_frame(s, &cam, k as f64 * 10.0, rng))).sum::<f64>() / 36.0
        };
        let sparse = mean_var(&build_scene(3, 3, 20.0), &mut rng);
        let dense = mean_var(&build_scene(3, 20, 20.0), &mut rng);
        assert!(dense > sparse, "{dense} vs {sparse}");
    }

    #[test]
    fn frames_are_periodic_in_azimuth() {
        let s = build_scene(9, 12, 15.0);
        let cam = quiet_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for theta in [0.0, 17.3, 179.9, 333.0] {
            let a = render_frame(&s, &cam, theta, &mut rng);
            let b = render_frame(&s, &cam, theta + 360.0, &mut rng);
            let d = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn centered_blob_peaks_mid_frame() {
        let scene = Scene {
            ambient_c: 20.0,
            blobs: vec![Blob {
                azimuth_deg: 90.0,
                elevation_deg: 0.0,
                width_deg: 8.0,
                amplitude_c: 10.0,
            }],
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = render_frame(&scene, &quiet_camera(), 90.0, &mut rng);
        let col_max: Vec<f64> = (0..NATIVE_W)
            .map(|c| (0..NATIVE_H).map(|r| f.at(r, c)).fold(f64::MIN, f64::max))
            .collect();
        let best = col_max.iter().cloned().fold(f64::MIN, f64::max);
        // columns 15 and 16 straddle the optical axis symmetrically
        assert_eq!(col_max[15], best);
        assert_eq!(col_max[16], best);
        assert!(col_max[0] < best && col_max[31] < best);
    }

    #[test]
    fn constant_speed_shifts_columns() {
        // 27.5 deg/s at 8 fps with 55 degrees over 32 columns: exactly 2 columns per frame
        let scene = build_scene(4, 15, 20.0);
        let sched = SpeedSchedule::new(vec![(27.5, 1.0)]).unwrap();
        let gyro = GyroSpec {
            bias_deg_s: 0.0,
            noise_std_deg_s: 0.0,
        };
        let acq = simulate_acquisition(&scene, &quiet_camera(), &gyro, &sched, 3).unwrap();
        for pair in acq.records.windows(2) {
            let (a, b) = (&pair[0].frame, &pair[1].frame);
            let score = |s: usize| -> f64 {
                let mut acc = 0.0;
                for r in 0..NATIVE_H {
                    for c in 0..NATIVE_W - 4 {
                        acc -= (b.at(r, c) - a.at(r, c + s)).powi(2);
                    }
                }
                acc
            };
            let best = (0..=4).max_by(|&x, &y| score(x).total_cmp(&score(y))).unwrap();
            assert_eq!(best, 2);
            assert!(score(2).abs() < 1e-12);
        }
    }

    #[test]
    fn acquisition_examples() {
        let scene = build_scene(1, 3, 20.0);
        let cam = CameraSpec::default();
        let sched = SpeedSchedule::new(vec![(100.0, 10.0)]).unwrap();
        let acq = simulate_acquisition(&scene, &cam, &GyroSpec::default(), &sched, 1).unwrap();
        assert_eq!(acq.len(), 80);
        assert!(acq.records.iter().all(|r| r.label == 100.0));

        let biased = GyroSpec {
            bias_deg_s: 2.0,
            noise_std_deg_s: 0.0,
        };
        let sched = SpeedSchedule::new(vec![(50.0, 2.0), (-120.0, 1.0)]).unwrap();
        let acq = simulate_acquisition(&scene, &cam, &biased, &sched, 2).unwrap();
        assert!(acq.records[..16].iter().all(|r| r.gyro == 52.0));
        assert_eq!(acq.segments().len(), 2);
        acq.validate().unwrap();

        assert!(SpeedSchedule::new(vec![]).is_err());
        assert!(SpeedSchedule::new(vec![(250.0, 1.0)]).is_err());
        assert!(SpeedSchedule::new(vec![(50.0, 0.0)]).is_err());
    }

    #[test]
    fn noiseless_gyro_average_equals_label() {
        let scene = build_scene(2, 5, 20.0);
        let gyro = GyroSpec {
            bias_deg_s: 0.0,
            noise_std_deg_s: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sched = SpeedSchedule::random(&mut rng, 4, 1.0).unwrap();
        let acq = simulate_acquisition(&scene, &CameraSpec::default(), &gyro, &sched, 8).unwrap();
        for s in make_windows(&acq, 3, 1, &NormalizationSpec::default()).unwrap() {
            assert_eq!(s.y_gy, s.y);
        }
        assert_eq!(gyro_average(&[acq.records[0].gyro; 3]).unwrap(), acq.records[0].label);
    }

    #[test]
    fn random_schedules_stay_in_range_and_alternate() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let s = SpeedSchedule::random(&mut rng, 200, 4.0).unwrap();
        for w in s.segments.windows(2) {
            assert_ne!(w[0].speed_deg_s, w[1].speed_deg_s);
        }
        assert!(s.segments.iter().any(|x| x.speed_deg_s < 0.0));
        assert!(s.segments.iter().any(|x| x.speed_deg_s > 0.0));
    }

    #[test]
    fn later_indices_extend_an_environment() {
        let base = DatasetConfig {
            n_acquisitions: 3,
            segments_per_acquisition: 2,
            segment_duration_s: 1.0,
            ..Default::default()
        };
        let all = simulate_environment(&base).unwrap();
        let tail = simulate_environment(&DatasetConfig {
            n_acquisitions: 1,
            first_index: 2,
            ..base.clone()
        })
        .unwrap();
        assert_eq!(tail[0], all[2]);
        assert_eq!(tail[0].id, "garden_02");
    }
}
