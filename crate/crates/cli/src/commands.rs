use std::path::Path;

use serde::Serialize;
use thermogyro::dataset::{load_dataset, make_windows, Acquisition, NormalizationSpec, Sample};
use thermogyro::eval::{drift_trace, kfold_with, kg_histogram, sweep_nf, sweep_nr, KFoldConfig, SweepPoint};
use thermogyro::model::{load_weights, save_weights, FusionModel, ModelConfig};
use thermogyro::report::{
    complexity_csv, folds_csv, histogram_csv, sweep_summary_csv, trace_csv, write_json, write_text,
};
use thermogyro::simulator::{generate_dataset, CameraSpec, DatasetConfig, GyroSpec};
use thermogyro::train::{evaluate, train, TrainConfig};
use thermogyro::{Error, Result};

use crate::config::echo;
use crate::{
    Cmd, ComplexityArgs, DriftArgs, EvalArgs, KfoldArgs, KgHistArgs, ModelArgs, Optim, SimulateArgs, SweepNfArgs,
    SweepNrArgs, TrainArgs,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => EXIT_USAGE,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

pub fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Kfold(a) => kfold_cmd(a),
        Cmd::SweepNf(a) => sweep_nf_cmd(a),
        Cmd::SweepNr(a) => sweep_nr_cmd(a),
        Cmd::Complexity(a) => complexity(a),
        Cmd::Drift(a) => drift(a),
        Cmd::KgHist(a) => kg_hist(a),
    }
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_echo(dir: &Path, name: &str, args: &impl Serialize) -> Result<()> {
    write_text(dir.join(format!("{name}_config.txt")), &echo(args))
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.nf as usize, self.nr as usize, self.variant)
    }
}

impl Optim {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            shuffle: !self.no_shuffle,
            loss: self.loss,
        }
    }
}

impl EvalArgs {
    fn config(&self, optim: &Optim) -> KFoldConfig {
        KFoldConfig {
            train: optim.config(),
            pool: self.pool,
            norm: NormalizationSpec::default(),
            threads: self.threads,
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = DatasetConfig {
        environment: a.env.clone(),
        n_acquisitions: a.acquisitions,
        first_index: a.first_index,
        segments_per_acquisition: a.segments,
        segment_duration_s: a.duration,
        n_blobs: a.blobs.unwrap_or(a.clutter.n_blobs()),
        ambient_c: a.ambient,
        camera: CameraSpec {
            h_fov_deg: a.h_fov,
            v_fov_deg: a.v_fov,
            noise_std_c: a.pixel_noise,
            fps: a.fps,
            ..CameraSpec::default()
        },
        gyro: GyroSpec {
            bias_deg_s: a.gyro_bias,
            noise_std_deg_s: a.gyro_noise,
        },
        seed: a.seed,
    };
    let files = generate_dataset(&cfg, &a.out)?;
    for f in &files {
        let name = f.path.file_name().unwrap_or_default().to_string_lossy();
        println!("{name}: {} frames", f.frames);
    }
    println!("{} acquisitions, {} frames", files.len(), files.iter().map(|f| f.frames).sum::<usize>());
    write_echo(&a.out, "simulate", &a)
}

fn select<'a>(acqs: &'a [Acquisition], envs: &[String], exclude: &[String]) -> Result<Vec<&'a Acquisition>> {
    for id in exclude {
        if !acqs.iter().any(|a| &a.id == id) {
            return Err(Error::InvalidConfig(format!("no acquisition '{id}' to exclude")));
        }
    }
    let chosen: Vec<_> = acqs
        .iter()
        .filter(|a| envs.is_empty() || envs.contains(&a.environment))
        .filter(|a| !exclude.contains(&a.id))
        .collect();
    if chosen.is_empty() {
        return Err(Error::InvalidInput("no acquisitions selected".into()));
    }
    Ok(chosen)
}

fn windows(acqs: &[&Acquisition], mc: &ModelConfig) -> Result<Vec<Sample>> {
    let norm = NormalizationSpec::default();
    let mut out = Vec::new();
    for a in acqs {
        out.extend(make_windows(a, mc.n_frames, mc.subsample, &norm)?);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no {}-frame windows in the selected data", mc.n_frames)));
    }
    Ok(out)
}

#[derive(Serialize)]
struct TrainSummary {
    acquisitions: Vec<String>,
    samples: usize,
    steps: u64,
    final_loss: f64,
    train_mse: f64,
    train_rmse_deg_s: f64,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mc = a.model.config()?;
    let tc = a.optim.config();
    tc.validate()?;
    prepare(&a.out)?;
    let acqs = load_dataset(&a.data)?;
    let chosen = select(&acqs, &a.env, &a.exclude)?;
    let samples = windows(&chosen, &mc)?;
    let init = match a.init.as_str() {
        "zero" => FusionModel::zeroed(mc)?,
        _ => FusionModel::build(mc, tc.seed)?,
    };
    let outcome = train(init, &samples, &tc)?;
    let eval = evaluate(&outcome.model, &samples)?;

    save_weights(&outcome.model, a.out.join("model.weights"))?;
    let mut hist = String::from("epoch,loss\n");
    for (i, l) in outcome.history.iter().enumerate() {
        hist.push_str(&format!("{},{l}\n", i + 1));
    }
    write_text(a.out.join("history.csv"), &hist)?;
    let summary = TrainSummary {
        acquisitions: chosen.iter().map(|a| a.id.clone()).collect(),
        samples: samples.len(),
        steps: outcome.steps,
        final_loss: *outcome.history.last().expect("at least one epoch"),
        train_mse: eval.mse,
        train_rmse_deg_s: eval.rmse_deg_s,
    };
    write_json(a.out.join("train.json"), &summary)?;
    println!(
        "trained {} on {} samples: final loss {:.6}, train mse {:.6} ({:.2} deg/s rmse)",
        mc.variant, summary.samples, summary.final_loss, summary.train_mse, summary.train_rmse_deg_s
    );
    write_echo(&a.out, "train", &a)
}

fn kfold_cmd(a: KfoldArgs) -> Result<()> {
    let mc = a.model.config()?;
    let cfg = a.eval.config(&a.optim);
    prepare(&a.out)?;
    let acqs = load_dataset(&a.data)?;
    let (report, models) = kfold_with(&acqs, &a.eval.held_env, mc, &cfg, |f, _| {
        eprintln!(
            "fold {} ({}): test mse {:.6}, rmse {:.2} deg/s",
            f.fold, f.acquisition, f.test_mse, f.test_rmse_deg_s
        );
    })?;
    write_json(a.out.join("kfold.json"), &report)?;
    write_text(a.out.join("kfold_folds.csv"), &folds_csv([&report]))?;
    if a.save_models {
        for (f, m) in report.folds.iter().zip(&models) {
            save_weights(m, a.out.join(format!("fold_{}.weights", f.fold)))?;
        }
    }
    println!(
        "{} folds, N_f={} N_r={} {}: median mse {:.6}, iqr {:.6}",
        report.folds.len(),
        report.n_frames,
        report.subsample,
        report.variant,
        report.median_mse,
        report.iqr_mse
    );
    write_echo(&a.out, "kfold", &a)
}

fn print_point(p: &SweepPoint) {
    let r = &p.report;
    println!(
        "N_f={} N_r={} {}: median mse {:.6}, iqr {:.6}, {} params, {} flops",
        r.n_frames, r.subsample, r.variant, r.median_mse, r.iqr_mse, p.params, p.flops
    );
}

fn write_sweep(out: &Path, name: &str, sweep: &thermogyro::eval::SweepReport) -> Result<()> {
    write_json(out.join(format!("{name}.json")), sweep)?;
    write_text(
        out.join(format!("{name}_folds.csv")),
        &folds_csv(sweep.points.iter().map(|p| &p.report)),
    )?;
    write_text(out.join(format!("{name}_summary.csv")), &sweep_summary_csv(sweep))
}

fn sweep_nf_cmd(a: SweepNfArgs) -> Result<()> {
    let cfg = a.eval.config(&a.optim);
    prepare(&a.out)?;
    let acqs = load_dataset(&a.data)?;
    let sweep = sweep_nf(&acqs, &a.eval.held_env, &a.nf_list, a.nr as usize, &cfg, print_point)?;
    write_sweep(&a.out, "sweep_nf", &sweep)?;
    write_echo(&a.out, "sweep_nf", &a)
}

fn sweep_nr_cmd(a: SweepNrArgs) -> Result<()> {
    let cfg = a.eval.config(&a.optim);
    prepare(&a.out)?;
    let acqs = load_dataset(&a.data)?;
    let sweep = sweep_nr(&acqs, &a.eval.held_env, &a.nr_list, a.nf as usize, &cfg, print_point)?;
    write_sweep(&a.out, "sweep_nr", &sweep)?;
    write_echo(&a.out, "sweep_nr", &a)
}

fn complexity(a: ComplexityArgs) -> Result<()> {
    let mut configs = Vec::new();
    for &nf in &a.nf {
        for &nr in &a.nr {
            configs.push(ModelConfig::new(nf, nr, a.variant)?);
        }
    }
    let csv = complexity_csv(&configs)?;
    print!("{csv}");
    if let Some(out) = &a.out {
        write_text(out.join("complexity.csv"), &csv)?;
        write_echo(out, "complexity", &a)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DriftSummary {
    acquisition: String,
    frames: usize,
    duration_s: f64,
    gyro_terminal_error_deg: f64,
    fusion_terminal_error_deg: f64,
}

fn drift(a: DriftArgs) -> Result<()> {
    let model = load_weights(&a.model)?;
    let acqs = load_dataset(&a.data)?;
    let acq = match &a.acquisition {
        Some(id) => acqs
            .iter()
            .find(|x| &x.id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("no acquisition '{id}' in {}", a.data.display())))?,
        None => acqs
            .first()
            .ok_or_else(|| Error::InvalidInput("dataset lists no acquisitions".into()))?,
    };
    let trace = drift_trace(&model, acq, &NormalizationSpec::default())?;
    let summary = DriftSummary {
        acquisition: acq.id.clone(),
        frames: acq.len(),
        duration_s: *trace.time_s.last().expect("trace starts at 0"),
        gyro_terminal_error_deg: trace.gyro_terminal_error(),
        fusion_terminal_error_deg: trace.fusion_terminal_error(),
    };
    write_text(a.out.join("drift.csv"), &trace_csv(&trace))?;
    write_json(a.out.join("drift.json"), &summary)?;
    println!(
        "{} over {:.1} s: gyro-only error {:.2} deg, model error {:.2} deg",
        summary.acquisition, summary.duration_s, summary.gyro_terminal_error_deg, summary.fusion_terminal_error_deg
    );
    write_echo(&a.out, "drift", &a)
}

#[derive(Serialize)]
struct HistSummary {
    samples: usize,
    mean_k_g: f64,
    edges: Vec<f64>,
    counts: Vec<usize>,
}

fn kg_hist(a: KgHistArgs) -> Result<()> {
    let model = load_weights(&a.model)?;
    let acqs = load_dataset(&a.data)?;
    let chosen = select(&acqs, &a.env, &[])?;
    let samples = windows(&chosen, model.config())?;
    let hist = kg_histogram(&model, &samples, a.bins as usize)?;
    write_text(a.out.join("kg_hist.csv"), &histogram_csv(&hist))?;
    let summary = HistSummary {
        samples: samples.len(),
        mean_k_g: hist.mean,
        edges: hist.edges,
        counts: hist.counts,
    };
    write_json(a.out.join("kg_hist.json"), &summary)?;
    println!("{} samples, mean K_g {:.4}", summary.samples, summary.mean_k_g);
    write_echo(&a.out, "kg_hist", &a)
}
