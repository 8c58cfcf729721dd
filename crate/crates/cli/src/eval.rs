use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use ledclock_core::fit::pairwise_rmse;
use ledclock_core::geometry::{ir_rgb_mre, observation_grid, stereo_mre_symmetric, Observation};
use ledclock_core::{CameraModel, RigidPose};
use nalgebra::{Point2, Point3};
use serde::Deserialize;
use serde_json::json;

use crate::io::{parse_json_lines, read_csv, read_json, read_text, unusable, write_json_line, CmdResult};
use crate::timing::RetimedLine;

#[derive(Args, Clone)]
pub struct EvalArgs {
    #[command(subcommand)]
    pub metric: Metric,
}

#[derive(Subcommand, Clone)]
pub enum Metric {
    /// RMSE between the global timestamps of two retimed streams.
    Rmse {
        /// Retimed JSON lines of the first stream.
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// CSV of frame pairs (a,b); defaults to equal frame numbers.
        #[arg(long)]
        pairing: Option<PathBuf>,
    },
    /// Symmetric stereo mean reprojection error.
    MreStereo {
        /// Scene JSON: left, right, extrinsics, board_points, board_poses.
        #[arg(long)]
        scene: PathBuf,
        /// Observation CSV (view,frame,point,x,y); view 0 is left, 1 right.
        #[arg(long)]
        obs: PathBuf,
    },
    /// Mean reprojection error of tracked marker points in a second camera.
    MreIr {
        /// Scene JSON: camera, extrinsics, marker_points, marker_poses.
        #[arg(long)]
        scene: PathBuf,
        /// Observation CSV (view,frame,point,x,y); view 0 is used.
        #[arg(long)]
        obs: PathBuf,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StereoScene {
    left: CameraModel,
    right: CameraModel,
    extrinsics: RigidPose,
    board_points: Vec<Point3<f64>>,
    board_poses: Vec<RigidPose>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IrScene {
    camera: CameraModel,
    extrinsics: RigidPose,
    marker_points: Vec<Point3<f64>>,
    marker_poses: Vec<RigidPose>,
}

#[derive(Deserialize)]
struct ObsRow {
    view: usize,
    frame: usize,
    point: usize,
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct PairRow {
    a: usize,
    b: usize,
}

fn read_observations(path: &Path) -> anyhow::Result<Vec<Observation>> {
    let rows: Vec<ObsRow> = read_csv(path)?;
    Ok(rows.into_iter().map(|r| Observation { view: r.view, frame: r.frame, point: r.point, pixel: Point2::new(r.x, r.y) }).collect())
}

fn read_retimed(path: &Path) -> anyhow::Result<BTreeMap<usize, f64>> {
    let lines: Vec<RetimedLine> = parse_json_lines(&read_text(path)?, &path.display().to_string())?;
    Ok(lines.into_iter().map(|l| (l.frame, l.global_ts)).collect())
}

pub fn run(args: &EvalArgs) -> CmdResult {
    let result = match &args.metric {
        Metric::Rmse { a, b, pairing } => {
            let (a, b) = (read_retimed(a)?, read_retimed(b)?);
            let pairs: Vec<(usize, usize)> = match pairing {
                Some(p) => read_csv::<PairRow>(p)?.into_iter().map(|r| (r.a, r.b)).collect(),
                None => a.keys().filter(|k| b.contains_key(k)).map(|&k| (k, k)).collect(),
            };
            if pairs.is_empty() {
                return Err(unusable("no frame pairs to compare"));
            }
            // Flatten the keyed timestamps so the pairing indexes vectors.
            let (ka, kb): (Vec<usize>, Vec<usize>) = (a.keys().copied().collect(), b.keys().copied().collect());
            let mut index = Vec::with_capacity(pairs.len());
            for &(fa, fb) in &pairs {
                match (ka.binary_search(&fa), kb.binary_search(&fb)) {
                    (Ok(i), Ok(j)) => index.push((i, j)),
                    _ => invalid!("pairing refers to frame {fa} or {fb}, which is missing"),
                }
            }
            let va: Vec<f64> = a.values().copied().collect();
            let vb: Vec<f64> = b.values().copied().collect();
            let value = pairwise_rmse(&va, &vb, &index)?;
            json!({ "metric": "rmse", "value_ms": value, "n_pairs": index.len() })
        }
        Metric::MreStereo { scene, obs } => {
            let s: StereoScene = read_json(scene)?;
            let obs = read_observations(obs)?;
            let (n, m) = (s.board_poses.len(), s.board_points.len());
            let left = observation_grid(&obs, 0, n, m);
            let right = observation_grid(&obs, 1, n, m);
            let value = stereo_mre_symmetric(&s.left, &s.right, &s.extrinsics, &s.board_points, &s.board_poses, &left, &right)?;
            json!({ "metric": "mre-stereo", "value_px": value, "n_views": n, "n_points": m })
        }
        Metric::MreIr { scene, obs } => {
            let s: IrScene = read_json(scene)?;
            let obs = read_observations(obs)?;
            let (n, m) = (s.marker_poses.len(), s.marker_points.len());
            let grid = observation_grid(&obs, 0, n, m);
            let value = ir_rgb_mre(&s.camera, &s.extrinsics, &s.marker_poses, &s.marker_points, &grid)?;
            json!({ "metric": "mre-ir", "value_px": value, "n_views": n, "n_points": m })
        }
    };
    write_json_line(&mut std::io::stdout().lock(), &result)?;
    Ok(())
}
