//! CSV and JSON renderings of evaluation results. Outputs carry no timestamps
//! so reruns with the same seeds produce identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{AngleTrace, FoldReport, KgHistogram, SweepReport};
use crate::model::{count_flops, count_params, ModelConfig};

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// One row per fold, ready for a box plot grouped by configuration.
pub fn folds_csv<'a>(reports: impl IntoIterator<Item = &'a FoldReport>) -> String {
    let mut out = String::from("n_frames,subsample,variant,fold,acquisition,test_mse\n");
    for r in reports {
        for f in &r.folds {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.n_frames,
                r.subsample,
                r.variant.as_str(),
                f.fold,
                f.acquisition,
                f.test_mse
            )
            .unwrap();
        }
    }
    out
}

pub fn sweep_summary_csv(sweep: &SweepReport) -> String {
    let mut out = String::from("n_frames,subsample,variant,params,flops,median_mse,iqr_mse\n");
    for p in &sweep.points {
        let r = &p.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n_frames,
            r.subsample,
            r.variant.as_str(),
            p.params,
            p.flops,
            r.median_mse,
            r.iqr_mse
        )
        .unwrap();
    }
    out
}

pub fn complexity_csv(configs: &[ModelConfig]) -> Result<String> {
    let mut out = String::from("n_frames,subsample,variant,params,flops\n");
    for c in configs {
        let params = count_params(c)?.total;
        let flops = count_flops(c)?.total_flops;
        writeln!(out, "{},{},{},{},{}", c.n_frames, c.subsample, c.variant.as_str(), params, flops).unwrap();
    }
    Ok(out)
}

pub fn trace_csv(trace: &AngleTrace) -> String {
    let mut out = String::from("time_s,truth_deg,gyro_deg,fusion_deg\n");
    for i in 0..trace.len() {
        writeln!(
            out,
            "{},{},{},{}",
            trace.time_s[i], trace.truth_deg[i], trace.gyro_deg[i], trace.fusion_deg[i]
        )
        .unwrap();
    }
    out
}

pub fn histogram_csv(hist: &KgHistogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, c) in hist.counts.iter().enumerate() {
        writeln!(out, "{},{},{}", hist.edges[i], hist.edges[i + 1], c).unwrap();
    }
    out
}
