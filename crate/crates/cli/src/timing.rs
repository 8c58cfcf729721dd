use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::Args;
use ledclock_core::fit::{fit_time_model_with, retime as apply_model, FitError, FittedModel, RansacParams, StreamManifest};
use ledclock_core::outcome::DecodedLine;
use ledclock_core::{Sample, TimeModel};
use serde::{Deserialize, Serialize};

use crate::io::{output, parse_json, parse_json_lines, read_json, read_text, unusable, write_json_line, CmdResult};
use crate::DEFAULT_SEED;

#[derive(Args, Clone)]
pub struct FitArgs {
    /// Stream manifest JSON or decoded JSON lines.
    #[arg(long)]
    pub input: PathBuf,
    /// Stream id for decoded-lines input (defaults to the file stem).
    #[arg(long)]
    pub stream_id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// RANSAC inlier threshold (ms).
    #[arg(long, default_value_t = 2.0)]
    pub threshold_ms: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct RetimeArgs {
    /// Fitted-model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Decoded JSON lines, a stream manifest, or a JSON array of local timestamps.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One retimed frame, as written by `retime` and read by `eval rmse`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetimedLine {
    pub frame: usize,
    pub local_ts: f64,
    pub global_ts: f64,
}

/// Timing inputs accepted by `fit` and `retime`.
enum TimingInput {
    Manifest(StreamManifest),
    Decoded(Vec<DecodedLine>),
    Timestamps(Vec<f64>),
}

fn read_timing_input(path: &Path) -> anyhow::Result<TimingInput> {
    let text = read_text(path)?;
    let origin = path.display().to_string();
    // A single JSON value is either a manifest or a bare timestamp array;
    // anything else is treated as JSON lines.
    match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Object(o)) if o.contains_key("samples") => Ok(TimingInput::Manifest(parse_json(&text, &origin)?)),
        Ok(serde_json::Value::Array(_)) => Ok(TimingInput::Timestamps(parse_json(&text, &origin)?)),
        _ => Ok(TimingInput::Decoded(parse_json_lines(&text, &origin)?)),
    }
}

fn samples_from_lines(lines: &[DecodedLine]) -> anyhow::Result<Vec<Sample>> {
    lines
        .iter()
        .filter_map(|l| l.window.map(|w| (l, w)))
        .map(|(l, w)| {
            let ts = l.local_ts.ok_or_else(|| anyhow!("frame {} has no local_ts (decode with --fps)", l.frame))?;
            Ok(Sample::new(ts, w[0] as f64))
        })
        .collect()
}

pub fn fit(a: &FitArgs) -> CmdResult {
    let (stream_id, samples) = match read_timing_input(&a.input)? {
        TimingInput::Manifest(m) => (m.stream_id.clone(), m.samples()),
        TimingInput::Decoded(lines) => {
            let id = a.stream_id.clone().unwrap_or_else(|| a.input.file_stem().map_or("stream".into(), |s| s.to_string_lossy().into_owned()));
            (id, samples_from_lines(&lines)?)
        }
        TimingInput::Timestamps(_) => invalid!("{}: fit needs samples, not a bare timestamp list", a.input.display()),
    };
    if !(a.threshold_ms > 0.0) || a.iterations == 0 {
        invalid!("RANSAC needs a positive threshold and at least one iteration");
    }
    let params = RansacParams { iterations: a.iterations, threshold_ms: a.threshold_ms };
    let result = match fit_time_model_with(&samples, a.seed, &params) {
        Ok(r) => r,
        Err(e @ FitError::NonFinite) => return Err(anyhow!(e).into()),
        Err(e) => return Err(unusable(e)),
    };
    let model = FittedModel::new(stream_id, &result);
    let mut out = output(a.out.as_ref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&model).expect("model serializes"))?;
    out.flush()?;
    Ok(())
}

pub fn retime(a: &RetimeArgs) -> CmdResult {
    let fitted: FittedModel = read_json(&a.model)?;
    let model = TimeModel::new(fitted.alpha, fitted.beta)?;
    let frames: Vec<(usize, f64)> = match read_timing_input(&a.input)? {
        TimingInput::Manifest(m) => m.local_timestamps().into_iter().enumerate().collect(),
        TimingInput::Timestamps(ts) => ts.into_iter().enumerate().collect(),
        TimingInput::Decoded(lines) => lines.iter().filter_map(|l| l.local_ts.map(|t| (l.frame, t))).collect(),
    };
    if frames.is_empty() {
        return Err(unusable("no local timestamps to retime"));
    }
    let local: Vec<f64> = frames.iter().map(|f| f.1).collect();
    let mut out = output(a.out.as_ref())?;
    for (&(frame, local_ts), global_ts) in frames.iter().zip(apply_model(&model, &local)) {
        write_json_line(&mut out, &RetimedLine { frame, local_ts, global_ts })?;
    }
    out.flush()?;
    Ok(())
}
