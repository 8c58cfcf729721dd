use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use ledclock_core::align::{aligned_rows, AlignMode, TimedTrack, Track2D, TrackObservation};
use ledclock_core::fit::{retime, FittedModel};
use ledclock_core::TimeModel;

use crate::io::{output, read_csv, read_json, unusable, CmdResult};

#[derive(Args, Clone)]
pub struct AlignArgs {
    /// Track CSV (frame_index,point_id,x,y); repeat once per stream.
    #[arg(long = "stream", required = true)]
    pub streams: Vec<PathBuf>,
    /// Fitted-model JSON of each stream, in the same order.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Nominal frame rate: one value for all streams or one per stream.
    #[arg(long = "fps", default_value = "30")]
    pub fps: Vec<f64>,
    /// Stream whose frame times are the query times.
    #[arg(long, default_value_t = 0)]
    pub reference: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Interpolate)]
    pub mode: ModeArg,
    /// Output CSV (standard output when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Nearest,
    Interpolate,
}

impl From<ModeArg> for AlignMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nearest => AlignMode::Nearest,
            ModeArg::Interpolate => AlignMode::Interpolate,
        }
    }
}

pub fn run(a: &AlignArgs) -> CmdResult {
    let n = a.streams.len();
    if a.models.len() != n {
        invalid!("{} --stream values but {} --model values", n, a.models.len());
    }
    if !(a.fps.len() == 1 || a.fps.len() == n) {
        invalid!("give --fps once or once per stream");
    }
    if a.reference >= n {
        invalid!("--reference {} out of range for {} streams", a.reference, n);
    }
    let mut streams = Vec::with_capacity(n);
    for (i, (track_path, model_path)) in a.streams.iter().zip(&a.models).enumerate() {
        let fps = a.fps[if a.fps.len() == 1 { 0 } else { i }];
        if !(fps > 0.0 && fps.is_finite()) {
            invalid!("--fps must be positive");
        }
        let fitted: FittedModel = read_json(model_path)?;
        let model = TimeModel::new(fitted.alpha, fitted.beta).with_context(|| format!("{}", model_path.display()))?;
        let obs: Vec<TrackObservation> = read_csv(track_path)?;
        let track = Track2D::new(fitted.stream_id.clone(), &obs).with_context(|| format!("{}", track_path.display()))?;
        let frames = obs.iter().map(|o| o.frame_index + 1).max().unwrap_or(0);
        let local: Vec<f64> = (0..frames).map(|f| f as f64 * 1000.0 / fps).collect();
        streams.push(TimedTrack::new(track, retime(&model, &local))?);
    }

    let reference = &streams[a.reference];
    let queries: Vec<f64> = reference
        .global_ts
        .iter()
        .enumerate()
        .filter(|&(f, _)| reference.track.point_ids().iter().any(|&p| reference.track.get(f, p).is_some()))
        .map(|(_, &t)| t)
        .collect();
    let rows = aligned_rows(&streams, &queries, a.mode.into());
    if rows.is_empty() {
        return Err(unusable("no stream provides a point at any query time"));
    }
    let mut writer = csv::Writer::from_writer(output(a.out.as_ref())?);
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
