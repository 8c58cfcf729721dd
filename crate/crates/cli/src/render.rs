use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use ledclock_core::geometry::plane_homography;
use ledclock_core::render::{
    frame_seed, generate_ftk_sequence, random_board_pose, render_sequence, write_sequence, CaptureConfig, PoseSampler,
};
use ledclock_core::{CameraModel, RigidPose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::io::{load_board, output, write_json_line, CmdResult};
use crate::Common;

/// Keeps board placement draws independent of the image noise stream.
const POSE_SALT: u64 = 0x706f_7365;

#[derive(Args, Clone)]
pub struct RenderArgs {
    /// Output directory for frames (or fiducials) and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Exposure time in ms.
    #[arg(long, default_value_t = 8.33)]
    pub exposure: f64,
    /// Number of consecutive frames.
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Index of the first frame.
    #[arg(long, default_value_t = 0)]
    pub first_frame: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Rolling-shutter delay of the last row relative to the first (ms).
    #[arg(long, default_value_t = 0.0)]
    pub skew: f64,
    /// Gaussian image noise sigma (gray levels).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1920)]
    pub width: usize,
    #[arg(long, default_value_t = 1080)]
    pub height: usize,
    /// Focal length in pixels.
    #[arg(long, default_value_t = 1400.0)]
    pub focal: f64,
    /// Infrared rendering: no marker, orientation LED lit.
    #[arg(long)]
    pub ir: bool,
    /// Smallest board area as a fraction of the image.
    #[arg(long, default_value_t = 0.05)]
    pub min_area: f64,
    #[arg(long, default_value_t = 0.4)]
    pub max_area: f64,
    /// Largest angle between board normal and optical axis (degrees).
    #[arg(long, default_value_t = 60.0)]
    pub max_tilt: f64,
    /// Write tracker fiducials (fiducials.jsonl) instead of images.
    #[arg(long)]
    pub tracker: bool,
    /// Per-axis Gaussian noise on tracker fiducials (mm).
    #[arg(long, default_value_t = 0.0)]
    pub fiducial_noise: f64,
    #[command(flatten)]
    pub common: Common,
}

pub fn run(a: &RenderArgs) -> CmdResult {
    let board = load_board(a.common.geometry.as_deref())?;
    let config = CaptureConfig {
        fps: a.fps,
        exposure_ms: a.exposure,
        alpha_true: a.alpha,
        beta_true: a.beta,
        rolling_shutter_skew_ms: a.skew,
        noise_sigma: a.noise,
        infrared: a.ir,
        seed: a.common.seed,
        ..Default::default()
    };
    config.validate()?;
    if a.frames == 0 {
        invalid!("--frames must be at least 1");
    }
    if !(a.min_area > 0.0 && a.min_area <= a.max_area && a.max_area <= 0.5) {
        invalid!("board area range must satisfy 0 < min-area <= max-area <= 0.5");
    }
    if !(0.0..=80.0).contains(&a.max_tilt) {
        invalid!("--max-tilt must lie in [0, 80] degrees");
    }
    let camera = CameraModel::new(a.focal, a.focal, (a.width as f64 - 1.0) / 2.0, (a.height as f64 - 1.0) / 2.0, a.width, a.height)?;
    let sampler = PoseSampler { min_area: a.min_area, max_area: a.max_area, max_tilt: a.max_tilt.to_radians(), ..Default::default() };
    let seed = a.common.seed;
    let pose = |i: usize| -> RigidPose {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed ^ POSE_SALT, i));
        random_board_pose(&mut rng, &camera, &board, &sampler)
    };
    let frames: Vec<usize> = (a.first_frame..a.first_frame + a.frames).collect();
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let manifest_path = a.out.join("manifest.json");

    let (kind, data) = if a.tracker {
        let (fiducials, manifest) = generate_ftk_sequence(&board, &config, &frames, &pose, a.fiducial_noise)?;
        let path = a.out.join("fiducials.jsonl");
        let mut out = output(Some(&path))?;
        for f in &fiducials {
            writeln!(out, "{}", f.to_json()).context("writing fiducials")?;
        }
        out.flush().context("writing fiducials")?;
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
        ("tracker", path)
    } else {
        let trajectory = |i: usize| plane_homography(&camera, &pose(i)).expect("sampled poses face the camera");
        let (rendered, manifest) = render_sequence(&board, &camera, &config, &frames, &trajectory)?;
        write_sequence(&a.out, &rendered, &manifest)?;
        ("image", a.out.clone())
    };
    let summary = json!({
        "mode": kind,
        "frames": frames.len(),
        "output": data.display().to_string(),
        "manifest": manifest_path.display().to_string(),
    });
    write_json_line(&mut std::io::stdout().lock(), &summary)?;
    Ok(())
}
