//! Leave-one-acquisition-out evaluation, parameter sweeps, angle integration
//! and fusion-gain histograms.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::dataset::{gyro_average, make_windows, preprocess_frame, Acquisition, NormalizationSpec, Sample};
use crate::error::{Error, Result};
use crate::model::{count_flops, count_params, forward, FusionModel, ModelConfig, Variant};
use crate::tensor::Tensor;
use crate::train::{evaluate_with, train, GainMode, TrainConfig};

/// Which acquisitions a fold trains on besides the held-out one's siblings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingPool {
    /// Every acquisition except the held-out one, whatever its environment.
    #[default]
    AllEnvironments,
    /// Only the other acquisitions of the held-out environment.
    HeldOutEnvironmentOnly,
}

impl std::str::FromStr for TrainingPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all_environments" => Ok(TrainingPool::AllEnvironments),
            "held_out" | "held_out_environment_only" => Ok(TrainingPool::HeldOutEnvironmentOnly),
            other => Err(Error::config(format!("unknown training pool '{other}' (expected all or held_out)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KFoldConfig {
    pub train: TrainConfig,
    pub pool: TrainingPool,
    pub norm: NormalizationSpec,
    /// Folds trained concurrently; 0 uses every available core. Results do
    /// not depend on it.
    #[serde(default)]
    pub threads: usize,
}

impl KFoldConfig {
    fn workers(&self, jobs: usize) -> usize {
        let n = match self.threads {
            0 => thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        };
        n.clamp(1, jobs.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Id of the held-out (test) acquisition.
    pub acquisition: String,
    /// Normalized speed units.
    pub test_mse: f64,
    pub test_rmse_deg_s: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub n_frames: usize,
    pub subsample: usize,
    pub variant: Variant,
    pub held_out_environment: String,
    pub pool: TrainingPool,
    pub train: TrainConfig,
    pub folds: Vec<FoldResult>,
    pub median_mse: f64,
    pub iqr_mse: f64,
}

impl FoldReport {
    pub fn mses(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.test_mse).collect()
    }
}

/// Quantile by linear interpolation between order statistics at position
/// `p * (n - 1)`. `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range (Q3 - Q1).
pub fn median_iqr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("median of no values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("median over non-finite values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)))
}

/// Trains a fresh model for every acquisition of `held_out_env`, tests it on
/// that acquisition and aggregates the test MSEs. Fold `k` seeds both its
/// model and its shuffling with `cfg.train.seed + k`.
pub fn kfold(
    acquisitions: &[Acquisition],
    held_out_env: &str,
    model: ModelConfig,
    cfg: &KFoldConfig,
) -> Result<FoldReport> {
    kfold_with(acquisitions, held_out_env, model, cfg, |_, _| {}).map(|(r, _)| r)
}

/// [`kfold`] that calls `on_fold` for each fold in fold order as soon as it
/// and every earlier fold have finished, and also returns the trained models.
pub fn kfold_with(
    acquisitions: &[Acquisition],
    held_out_env: &str,
    model: ModelConfig,
    cfg: &KFoldConfig,
    mut on_fold: impl FnMut(&FoldResult, &FusionModel),
) -> Result<(FoldReport, Vec<FusionModel>)> {
    model.validate()?;
    cfg.train.validate()?;
    let mut ids = HashSet::new();
    if let Some(dup) = acquisitions.iter().find(|a| !ids.insert(a.id.as_str())) {
        return Err(Error::invalid(format!("acquisition id '{}' appears twice", dup.id)));
    }
    let held: Vec<usize> = (0..acquisitions.len())
        .filter(|&i| acquisitions[i].environment == held_out_env)
        .collect();
    if held.len() < 2 {
        return Err(Error::config(format!(
            "environment '{held_out_env}' has {} acquisition(s); k-fold needs at least 2",
            held.len()
        )));
    }
    let windows = acquisitions
        .iter()
        .map(|a| make_windows(a, model.n_frames, model.subsample, &cfg.norm))
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::with_capacity(held.len());
    for (fold, &test_idx) in held.iter().enumerate() {
        let test_id = &acquisitions[test_idx].id;
        let train_set: Vec<&Sample> = (0..acquisitions.len())
            .filter(|&i| {
                i != test_idx
                    && match cfg.pool {
                        TrainingPool::AllEnvironments => true,
                        TrainingPool::HeldOutEnvironmentOnly => acquisitions[i].environment == held_out_env,
                    }
            })
            .flat_map(|i| windows[i].iter())
            .collect();
        if train_set.iter().any(|s| &s.source.acquisition == test_id) {
            return Err(Error::invalid(format!("fold {fold}: test acquisition {test_id} leaked into training")));
        }
        let test_set = &windows[test_idx];
        if test_set.is_empty() || train_set.is_empty() {
            return Err(Error::invalid(format!(
                "fold {fold}: {} training and {} test windows",
                train_set.len(),
                test_set.len()
            )));
        }
        jobs.push((fold, test_id, train_set, test_set.as_slice()));
    }

    let run = |(fold, test_id, train_set, test_set): &(usize, &String, Vec<&Sample>, &[Sample])| {
        let seed = cfg.train.seed.wrapping_add(*fold as u64);
        let tc = TrainConfig { seed, ..cfg.train };
        let outcome = train(FusionModel::build(model, seed)?, train_set, &tc)?;
        let eval = evaluate_with(&outcome.model, test_set, GainMode::Learned, &cfg.norm)?;
        let result = FoldResult {
            fold: *fold,
            acquisition: (*test_id).clone(),
            test_mse: eval.mse,
            test_rmse_deg_s: eval.rmse_deg_s,
            n_train: train_set.len(),
            n_test: test_set.len(),
            final_train_loss: *outcome.history.last().expect("at least one epoch"),
        };
        Ok((result, outcome.model))
    };

    let mut done: Vec<Option<(FoldResult, FusionModel)>> = (0..jobs.len()).map(|_| None).collect();
    let mut first_err: Option<(usize, Error)> = None;
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..cfg.workers(jobs.len()) {
            let tx = tx.clone();
            let (jobs, next, failed, run) = (&jobs, &next, &failed, &run);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() || failed.load(Ordering::Relaxed) {
                    break;
                }
                let out: Result<(FoldResult, FusionModel)> = run(&jobs[i]);
                if out.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut emitted = 0;
        for (i, out) in rx {
            match out {
                Ok(fold) => done[i] = Some(fold),
                Err(e) => {
                    if first_err.as_ref().is_none_or(|(j, _)| i < *j) {
                        first_err = Some((i, e));
                    }
                }
            }
            while let Some(Some((result, m))) = done.get(emitted) {
                if first_err.is_none() {
                    on_fold(result, m);
                }
                emitted += 1;
            }
        }
    });
    if let Some((_, e)) = first_err {
        return Err(e);
    }
    let (folds, models): (Vec<_>, Vec<_>) = done
        .into_iter()
        .map(|d| d.expect("every fold ran"))
        .unzip();
    let (median_mse, iqr_mse) = median_iqr(&folds.iter().map(|f| f.test_mse).collect::<Vec<_>>())?;
    Ok((
        FoldReport {
            n_frames: model.n_frames,
            subsample: model.subsample,
            variant: model.variant,
            held_out_environment: held_out_env.to_string(),
            pool: cfg.pool,
            train: cfg.train,
            folds,
            median_mse,
            iqr_mse,
        },
        models,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Frames,
    Subsampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub params: usize,
    pub flops: u64,
    pub report: FoldReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
}

pub const NF_SWEEP: [usize; 5] = [2, 3, 4, 5, 6];
pub const VARIANTS: [Variant; 2] = [Variant::ThermalOnly, Variant::Fusion];

fn sweep(
    acquisitions: &[Acquisition],
    held_out_env: &str,
    kind: SweepKind,
    grid: impl IntoIterator<Item = (usize, usize)>,
    cfg: &KFoldConfig,
    mut on_point: impl FnMut(&SweepPoint),
) -> Result<SweepReport> {
    let mut points = Vec::new();
    for (nf, nr) in grid {
        for variant in VARIANTS {
            let mc = ModelConfig::new(nf, nr, variant)?;
            let report = kfold(acquisitions, held_out_env, mc, cfg)?;
            let point = SweepPoint {
                params: count_params(&mc)?.total,
                flops: count_flops(&mc)?.total_flops,
                report,
            };
            on_point(&point);
            points.push(point);
        }
    }
    Ok(SweepReport { kind, points })
}

/// One k-fold per (`N_f`, variant) at fixed subsampling.
pub fn sweep_nf(
    acquisitions: &[Acquisition],
    held_out_env: &str,
    nf_list: &[usize],
    nr: usize,
    cfg: &KFoldConfig,
    on_point: impl FnMut(&SweepPoint),
) -> Result<SweepReport> {
    let grid = nf_list.iter().map(|&nf| (nf, nr));
    sweep(acquisitions, held_out_env, SweepKind::Frames, grid, cfg, on_point)
}

/// One k-fold per (`N_r`, variant) at a fixed frame count.
pub fn sweep_nr(
    acquisitions: &[Acquisition],
    held_out_env: &str,
    nr_list: &[usize],
    nf: usize,
    cfg: &KFoldConfig,
    on_point: impl FnMut(&SweepPoint),
) -> Result<SweepReport> {
    let grid = nr_list.iter().map(|&nr| (nf, nr));
    sweep(acquisitions, held_out_env, SweepKind::Subsampling, grid, cfg, on_point)
}

/// Cumulative angle: `theta[0] = 0`, `theta[t+1] = theta[t] + speeds[t] * dt`.
pub fn integrate_angle(speeds_deg_s: &[f64], dt: f64) -> Vec<f64> {
    let mut theta = Vec::with_capacity(speeds_deg_s.len() + 1);
    let mut acc = 0.0;
    theta.push(acc);
    for &w in speeds_deg_s {
        acc += w * dt;
        theta.push(acc);
    }
    theta
}

/// Integrated heading from the ground truth, the raw gyro and the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleTrace {
    pub time_s: Vec<f64>,
    pub truth_deg: Vec<f64>,
    pub gyro_deg: Vec<f64>,
    pub fusion_deg: Vec<f64>,
}

impl AngleTrace {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn gyro_terminal_error(&self) -> f64 {
        (self.gyro_deg.last().unwrap_or(&0.0) - self.truth_deg.last().unwrap_or(&0.0)).abs()
    }

    pub fn fusion_terminal_error(&self) -> f64 {
        (self.fusion_deg.last().unwrap_or(&0.0) - self.truth_deg.last().unwrap_or(&0.0)).abs()
    }
}

/// Per-frame speed estimates of `model` over a whole acquisition, deg/s.
///
/// Frame `t` uses the window of frames ending at `t`. Unlike training windows
/// these may straddle a speed change, as they would in deployment. The first
/// `N_f - 1` frames have no full window and fall back to the gyro reading.
pub fn model_speeds(model: &FusionModel, acq: &Acquisition, norm: &NormalizationSpec) -> Result<Vec<f64>> {
    let cfg = model.config();
    let nf = cfg.n_frames;
    let processed = acq
        .records
        .iter()
        .map(|r| preprocess_frame(&r.frame, cfg.subsample, norm))
        .collect::<Result<Vec<_>>>()?;
    let plane = cfg.input_h() * cfg.input_w();
    let mut out = Vec::with_capacity(acq.len());
    for t in 0..acq.len() {
        if t + 1 < nf {
            out.push(acq.records[t].gyro);
            continue;
        }
        let window = t + 1 - nf..t + 1;
        let mut data = Vec::with_capacity(nf * plane);
        for p in &processed[window.clone()] {
            data.extend_from_slice(p.data());
        }
        let frames = Tensor::new(cfg.input_shape().to_vec(), data)?;
        let gyro: Vec<f64> = acq.records[window].iter().map(|r| r.gyro).collect();
        let y_gy = norm.normalize_speed(gyro_average(&gyro)?);
        out.push(norm.denormalize_speed(forward(model, &frames)?.output(y_gy)));
    }
    Ok(out)
}

pub fn drift_trace(model: &FusionModel, acq: &Acquisition, norm: &NormalizationSpec) -> Result<AngleTrace> {
    if acq.is_empty() {
        return Err(Error::invalid(format!("acquisition {} has no frames", acq.id)));
    }
    let dt = 1.0 / acq.fps;
    let truth: Vec<f64> = acq.records.iter().map(|r| r.label).collect();
    let gyro: Vec<f64> = acq.records.iter().map(|r| r.gyro).collect();
    let est = model_speeds(model, acq, norm)?;
    Ok(AngleTrace {
        time_s: (0..=acq.len()).map(|i| i as f64 * dt).collect(),
        truth_deg: integrate_angle(&truth, dt),
        gyro_deg: integrate_angle(&gyro, dt),
        fusion_deg: integrate_angle(&est, dt),
    })
}

pub const KG_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgHistogram {
    /// `counts.len() + 1` edges spanning [0, 1].
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
}

/// Bin index of a gain in [0, 1]; 1.0 falls in the last bin.
pub fn kg_bin(k: f64, n_bins: usize) -> usize {
    ((k * n_bins as f64).floor() as usize).min(n_bins - 1)
}

pub fn kg_histogram(model: &FusionModel, samples: &[Sample], n_bins: usize) -> Result<KgHistogram> {
    if !model.has_gain_head() {
        return Err(Error::invalid("gain histogram needs a fusion model"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("gain histogram over no samples"));
    }
    let mut counts = vec![0; n_bins];
    let mut sum = 0.0;
    for s in samples {
        let k = forward(model, &s.frames)?.k_g().expect("fusion model has a gain");
        counts[kg_bin(k, n_bins)] += 1;
        sum += k;
    }
    Ok(KgHistogram {
        edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
        counts,
        mean: sum / samples.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{build_scene, simulate_acquisition, CameraSpec, GyroSpec, SpeedSchedule};
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn median_iqr_examples() {
        assert_eq!(median_iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), (3.0, 2.0));
        let (m, iqr) = median_iqr(&[0.004, 0.005, 0.006, 0.007, 0.008, 0.009]).unwrap();
        assert!(close(m, 0.0065) && close(iqr, 0.0025), "{m} {iqr}");
        assert_eq!(median_iqr(&[0.3]).unwrap(), (0.3, 0.0));
        let (m, iqr) = median_iqr(&[0.02, 0.01]).unwrap();
        assert!(close(m, 0.015) && close(iqr, 0.005));
        assert!(median_iqr(&[]).is_err());
        assert!(median_iqr(&[1.0, f64::NAN]).is_err());
    }

    fn brute_quantile(v: &[f64], p: f64) -> f64 {
        // walk the sorted list to the two neighbours of p*(n-1)
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = (s.len() - 1) as f64 * p;
        let below = s.iter().enumerate().rfind(|(i, _)| (*i as f64) <= h).unwrap();
        let above = s.iter().enumerate().find(|(i, _)| (*i as f64) >= h).unwrap();
        let frac = h - below.0 as f64;
        below.1 * (1.0 - frac) + above.1 * frac
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn median_iqr_matches_brute_force(v in prop::collection::vec(0.0f64..1.0, 1..40)) {
            let (m, iqr) = median_iqr(&v).unwrap();
            prop_assert!((m - brute_quantile(&v, 0.5)).abs() < 1e-12);
            let q = brute_quantile(&v, 0.75) - brute_quantile(&v, 0.25);
            prop_assert!((iqr - q).abs() < 1e-12);
            prop_assert!(iqr >= 0.0);
        }

        #[test]
        fn integration_is_linear(w in -200.0f64..200.0, n in 1usize..200) {
            let th = integrate_angle(&vec![w; n], 0.125);
            prop_assert_eq!(th.len(), n + 1);
            prop_assert_eq!(th[0], 0.0);
            prop_assert!((th[n] - w * n as f64 * 0.125).abs() < 1e-9);
        }
    }

    #[test]
    fn integrate_examples() {
        for dt in [0.125, 0.5, 1.0, 2.5] {
            let n = (10.0 / dt) as usize;
            assert!((integrate_angle(&vec![100.0; n], dt)[n] - 1000.0).abs() < 1e-9);
        }
        assert!(integrate_angle(&[0.0; 16], 0.125).iter().all(|&x| x == 0.0));
        assert_eq!(integrate_angle(&[], 0.1), vec![0.0]);
    }

    #[test]
    fn bias_drift_is_linear() {
        let truth = vec![37.0; 480];
        let gyro: Vec<f64> = truth.iter().map(|w| w + 2.0).collect();
        let e = integrate_angle(&gyro, 0.125)[480] - integrate_angle(&truth, 0.125)[480];
        assert!((e - 120.0).abs() < 1e-9);
    }

    #[test]
    fn kg_bins() {
        assert_eq!(kg_bin(0.5, 20), 10);
        assert_eq!(kg_bin(0.0, 20), 0);
        assert_eq!(kg_bin(1.0, 20), 19);
        assert_eq!(kg_bin(0.049, 20), 0);
        assert_eq!(kg_bin(0.05, 20), 1);
    }

    fn small_acq(seed: u64, speeds: &[f64]) -> Acquisition {
        let scene = build_scene(seed, 8, 20.0);
        let sched = SpeedSchedule::new(speeds.iter().map(|&s| (s, 1.0)).collect()).unwrap();
        simulate_acquisition(&scene, &CameraSpec::default(), &GyroSpec::default(), &sched, seed).unwrap()
    }

    #[test]
    fn untrained_histogram_is_a_point_mass() {
        let cfg = ModelConfig::new(2, 3, Variant::Fusion).unwrap();
        let acq = small_acq(1, &[50.0, -80.0]);
        let samples = make_windows(&acq, 2, 3, &NormalizationSpec::default()).unwrap();
        let h = kg_histogram(&FusionModel::zeroed(cfg).unwrap(), &samples, KG_BINS).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), samples.len());
        assert_eq!(h.counts[10], samples.len());
        assert_eq!(h.edges.first(), Some(&0.0));
        assert_eq!(h.edges.last(), Some(&1.0));
        assert_eq!(h.mean, 0.5);

        let trained = FusionModel::build(cfg, 3).unwrap();
        let h = kg_histogram(&trained, &samples, KG_BINS).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), samples.len());

        let th = FusionModel::zeroed(ModelConfig::new(2, 3, Variant::ThermalOnly).unwrap()).unwrap();
        assert!(kg_histogram(&th, &samples, KG_BINS).is_err());
    }

    #[test]
    fn drift_trace_shapes() {
        let cfg = ModelConfig::new(3, 3, Variant::Fusion).unwrap();
        let acq = small_acq(2, &[40.0, 120.0]);
        let tr = drift_trace(&FusionModel::build(cfg, 1).unwrap(), &acq, &NormalizationSpec::default()).unwrap();
        assert_eq!(tr.len(), acq.len() + 1);
        assert_eq!(tr.truth_deg.len(), tr.fusion_deg.len());
        assert_eq!((tr.truth_deg[0], tr.gyro_deg[0], tr.fusion_deg[0]), (0.0, 0.0, 0.0));
        assert!((tr.truth_deg[16] - (40.0 * 8.0 + 120.0 * 8.0) / 8.0).abs() < 1e-9);

        // a zeroed fusion model returns half the gyro average
        let zero = FusionModel::zeroed(cfg).unwrap();
        let speeds = model_speeds(&zero, &acq, &NormalizationSpec::default()).unwrap();
        assert_eq!(speeds[0], acq.records[0].gyro);
        let avg = (acq.records[0].gyro + acq.records[1].gyro + acq.records[2].gyro) / 3.0;
        assert!((speeds[2] - avg / 2.0).abs() < 1e-9);
    }

    fn tagged(env: &str, id: &str, seed: u64) -> Acquisition {
        let mut a = small_acq(seed, &[30.0, -60.0]);
        a.environment = env.into();
        a.id = id.into();
        a
    }

    fn quick() -> KFoldConfig {
        KFoldConfig {
            train: TrainConfig {
                epochs: 1,
                batch: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn kfold_structure() {
        let acqs = vec![tagged("garden", "g0", 1), tagged("garden", "g1", 2), tagged("lab", "l0", 3)];
        let mc = ModelConfig::new(2, 3, Variant::Fusion).unwrap();
        let mut seen = Vec::new();
        let (r, models) = kfold_with(&acqs, "garden", mc, &quick(), |f, _| seen.push(f.acquisition.clone())).unwrap();
        assert_eq!(r.folds.len(), 2);
        assert_eq!(models.len(), 2);
        assert_eq!(seen, vec!["g0", "g1"]);
        let (m, iqr) = median_iqr(&r.mses()).unwrap();
        assert_eq!((m, iqr), (r.median_mse, r.iqr_mse));
        let (a, b) = (r.folds[0].test_mse, r.folds[1].test_mse);
        assert!(close(r.median_mse, (a + b) / 2.0) && close(r.iqr_mse, (a - b).abs() / 2.0));
        // all environments: each fold trains on the other garden run plus the lab run
        assert_eq!(r.folds[0].n_train, 2 * r.folds[1].n_test);

        let held = KFoldConfig {
            pool: TrainingPool::HeldOutEnvironmentOnly,
            ..quick()
        };
        let r2 = kfold(&acqs, "garden", mc, &held).unwrap();
        assert_eq!(r2.folds[0].n_train, r.folds[1].n_test);

        assert_eq!(kfold(&acqs, "garden", mc, &quick()).unwrap(), r);
        // thread count changes scheduling only
        for threads in [1, 3] {
            let mut order = Vec::new();
            let cfg = KFoldConfig { threads, ..quick() };
            let (again, again_models) =
                kfold_with(&acqs, "garden", mc, &cfg, |f, _| order.push(f.fold)).unwrap();
            assert_eq!((again, again_models), (r.clone(), models.clone()));
            assert_eq!(order, vec![0, 1]);
        }
        let blowup = KFoldConfig {
            train: TrainConfig { lr: 1e300, loss: crate::loss::LossKind::Mse, ..quick().train },
            threads: 2,
            ..quick()
        };
        let mut calls = 0;
        let err = kfold_with(&acqs, "garden", mc, &blowup, |_, _| calls += 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
        assert_eq!(calls, 0);
    }

    #[test]
    fn kfold_rejects_small_or_ambiguous_inputs() {
        let mc = ModelConfig::new(2, 3, Variant::ThermalOnly).unwrap();
        let one = vec![tagged("garden", "g0", 1), tagged("lab", "l0", 3)];
        assert!(matches!(kfold(&one, "garden", mc, &quick()), Err(Error::InvalidConfig(_))));
        let dup = vec![tagged("garden", "g0", 1), tagged("garden", "g0", 2)];
        assert!(kfold(&dup, "garden", mc, &quick()).is_err());
    }

    #[test]
    fn identical_folds_have_zero_iqr() {
        let acqs = vec![tagged("garden", "g0", 4), tagged("garden", "g1", 4)];
        let mc = ModelConfig::new(2, 3, Variant::ThermalOnly).unwrap();
        let cfg = KFoldConfig {
            train: TrainConfig { lr: 0.0, ..quick().train },
            ..quick()
        };
        let r = kfold(&acqs, "garden", mc, &cfg).unwrap();
        // lr = 0 leaves each fold at its seeded init, so compare identical seeds
        let same_seed = KFoldConfig {
            train: TrainConfig { seed: 0, ..cfg.train },
            ..cfg
        };
        assert_eq!(r, kfold(&acqs, "garden", mc, &same_seed).unwrap());
        let zero = FusionModel::zeroed(mc).unwrap();
        let w0 = make_windows(&acqs[0], 2, 3, &NormalizationSpec::default()).unwrap();
        let w1 = make_windows(&acqs[1], 2, 3, &NormalizationSpec::default()).unwrap();
        let e0 = evaluate_with(&zero, &w0, GainMode::Learned, &NormalizationSpec::default()).unwrap();
        let e1 = evaluate_with(&zero, &w1, GainMode::Learned, &NormalizationSpec::default()).unwrap();
        assert_eq!(median_iqr(&[e0.mse, e1.mse]).unwrap().1, 0.0);
    }

    #[test]
    fn sweep_grid_sizes() {
        let acqs = vec![tagged("garden", "g0", 1), tagged("garden", "g1", 2)];
        let r = sweep_nr(&acqs, "garden", &[2, 3], 2, &quick(), |_| {}).unwrap();
        assert_eq!(r.points.len(), 4);
        assert!(r.points[0].flops > r.points[2].flops);
        let r = sweep_nf(&acqs, "garden", &[2, 3], 3, &quick(), |_| {}).unwrap();
        assert_eq!(r.points.len(), 4);
        assert!(r.points[0].flops < r.points[2].flops);
    }
}
