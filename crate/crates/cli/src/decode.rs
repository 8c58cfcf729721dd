use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use ledclock_core::decoder::{decode_frame, DecoderConfig, DecoderMode};
use ledclock_core::ftk::{decode_ftk_frame, parse_fiducial_lines, FtkConfig};
use ledclock_core::outcome::DecodedLine;
use ledclock_core::render::GroundTruthManifest;
use ledclock_core::GrayImage;
use rayon::prelude::*;

use crate::io::{load_board, output, read_text, unusable, write_json_line, CmdResult};
use crate::{Common, Mode};

#[derive(Args, Clone)]
pub struct DecodeArgs {
    /// Directory of PGM frames (image, ir) or a JSON-lines fiducial file (ftk).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Image)]
    pub mode: Mode,
    /// Nominal frame rate; sets local_ts = frame * 1000 / fps. Without it,
    /// image frames take local_ts from a manifest.json beside them.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Output file (standard output when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Absolute lit/unlit margin (gray levels).
    #[arg(long, default_value_t = 12.0)]
    pub k_abs: f64,
    /// Relative lit/unlit margin.
    #[arg(long, default_value_t = 0.2)]
    pub k_rel: f64,
    /// Ambiguity band as a fraction of the margin.
    #[arg(long, default_value_t = 0.25)]
    pub ambiguity: f64,
    /// Corner LED deviation tolerance (mm).
    #[arg(long, default_value_t = 10.0)]
    pub tol_mm: f64,
    /// Smallest marker area as a fraction of the image.
    #[arg(long, default_value_t = 0.002)]
    pub min_marker_fraction: f64,
    /// Tracker marker registration tolerance (mm).
    #[arg(long, default_value_t = 1.0)]
    pub rms_tol: f64,
    /// Distance from the board plane within which fiducials are kept (mm).
    #[arg(long, default_value_t = 3.0)]
    pub plane_tol: f64,
    /// Fiducial-to-LED matching distance (mm).
    #[arg(long, default_value_t = 2.0)]
    pub match_tol: f64,
    #[command(flatten)]
    pub common: Common,
}

/// Frame index encoded in `frame_NNNNNN.pgm`, if the name follows that form.
fn frame_index_from_name(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("frame_")?.parse().ok()
}

fn pgm_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")));
    files.sort();
    Ok(files)
}

pub fn run(a: &DecodeArgs) -> CmdResult {
    let board = load_board(a.common.geometry.as_deref())?;
    if let Some(fps) = a.fps {
        if !(fps > 0.0 && fps.is_finite()) {
            invalid!("--fps must be positive");
        }
    }
    let lines: Vec<DecodedLine> = match a.mode {
        Mode::Ftk => {
            let frames = parse_fiducial_lines(&read_text(&a.input)?).with_context(|| format!("in {}", a.input.display()))?;
            if frames.is_empty() {
                invalid!("no fiducial frames in {}", a.input.display());
            }
            let cfg = FtkConfig { rms_tol_mm: a.rms_tol, plane_tol_mm: a.plane_tol, match_tol_mm: a.match_tol };
            frames
                .par_iter()
                .enumerate()
                .map(|(i, f)| {
                    let local_ts = a.fps.map_or(f.local_ts, |fps| i as f64 * 1000.0 / fps);
                    decode_ftk_frame(i, f, &board, &cfg).0.to_line(Some(local_ts))
                })
                .collect()
        }
        Mode::Image | Mode::Ir => {
            let files = pgm_files(&a.input)?;
            if files.is_empty() {
                invalid!("no PGM frames in {}", a.input.display());
            }
            let manifest_path = a.input.join("manifest.json");
            let manifest_ts: HashMap<usize, f64> = if a.fps.is_none() && manifest_path.exists() {
                GroundTruthManifest::load(&manifest_path)
                    .with_context(|| format!("invalid {}", manifest_path.display()))?
                    .frames
                    .iter()
                    .map(|f| (f.frame_index, f.local_ts_ms))
                    .collect()
            } else {
                HashMap::new()
            };
            let cfg = DecoderConfig {
                mode: if a.mode == Mode::Ir { DecoderMode::Infrared } else { DecoderMode::Visible },
                tol_mm: a.tol_mm,
                k_abs: a.k_abs,
                k_rel: a.k_rel,
                ambiguity: a.ambiguity,
                min_marker_fraction: a.min_marker_fraction,
                ..Default::default()
            };
            files
                .par_iter()
                .enumerate()
                .map(|(ordinal, path)| {
                    let index = frame_index_from_name(path).unwrap_or(ordinal);
                    let image = GrayImage::load_pgm(path).with_context(|| format!("cannot read frame {}", path.display()))?;
                    let local_ts = a.fps.map(|fps| index as f64 * 1000.0 / fps).or_else(|| manifest_ts.get(&index).copied());
                    Ok(decode_frame(index, &image, &board, &cfg).to_line(local_ts))
                })
                .collect::<anyhow::Result<_>>()?
        }
    };

    let mut out = output(a.out.as_ref())?;
    for line in &lines {
        write_json_line(&mut out, line)?;
    }
    out.flush()?;
    let accepted = lines.iter().filter(|l| l.window.is_some()).count();
    eprintln!("decoded {} frames, {accepted} accepted", lines.len());
    if accepted == 0 {
        return Err(unusable("no frame could be decoded"));
    }
    Ok(())
}
