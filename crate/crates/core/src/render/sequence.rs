use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{render_frame, CaptureConfig, RenderError, TimeInterval};
use crate::board::BoardGeometry;
use crate::geometry::{CameraModel, RigidPose};
use crate::homography::Homography;
use crate::image::GrayImage;

/// Board placement recorded in a manifest: a board-to-image homography
/// for camera frames, a rigid board-to-tracker pose for 3D sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoardPose {
    Homography(Homography),
    Rigid(RigidPose),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_index: usize,
    pub local_ts_ms: f64,
    pub true_window: TimeInterval,
    pub board_pose: BoardPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub alpha_true: f64,
    pub beta_true: f64,
    pub fps: f64,
    pub exposure_ms: f64,
    pub rolling_shutter_skew_ms: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub frames: Vec<FrameTruth>,
}

impl GroundTruthManifest {
    pub fn new(config: &CaptureConfig, frames: Vec<FrameTruth>) -> Self {
        Self {
            alpha_true: config.alpha_true,
            beta_true: config.beta_true,
            fps: config.fps,
            exposure_ms: config.exposure_ms,
            rolling_shutter_skew_ms: config.rolling_shutter_skew_ms,
            noise_sigma: config.noise_sigma,
            seed: config.seed,
            frames,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        let s = std::fs::read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| RenderError::InvalidConfig(format!("manifest: {e}")))
    }
}

pub struct RenderedFrame {
    pub image: GrayImage,
    pub truth: FrameTruth,
}

/// Renders the listed frames; frame `i` is exposed from
/// `alpha * i * 1000 / fps + beta` for `exposure_ms`.
///
/// `frames` must be strictly increasing. Rendering runs in parallel and the
/// output is identical for any thread count.
pub fn render_sequence(
    board: &BoardGeometry,
    camera: &CameraModel,
    config: &CaptureConfig,
    frames: &[usize],
    trajectory: &(dyn Fn(usize) -> Homography + Sync),
) -> Result<(Vec<RenderedFrame>, GroundTruthManifest), RenderError> {
    config.validate()?;
    if frames.is_empty() {
        return Err(RenderError::InvalidConfig("at least one frame is required".into()));
    }
    if frames.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RenderError::InvalidConfig("frame indices must be strictly increasing".into()));
    }
    let rendered = frames
        .par_iter()
        .map(|&i| {
            let pose = trajectory(i);
            let window = config.true_window(i);
            let image = render_frame(board, camera, &pose, window, config, i)?;
            let truth = FrameTruth { frame_index: i, local_ts_ms: config.local_ts(i), true_window: window, board_pose: BoardPose::Homography(pose) };
            Ok(RenderedFrame { image, truth })
        })
        .collect::<Result<Vec<_>, RenderError>>()?;
    let manifest = GroundTruthManifest::new(config, rendered.iter().map(|f| f.truth.clone()).collect());
    Ok((rendered, manifest))
}

pub fn frame_file_name(frame_index: usize) -> String {
    format!("frame_{frame_index:06}.pgm")
}

/// Writes `frame_NNNNNN.pgm` files and `manifest.json` into `dir`.
pub fn write_sequence(dir: impl AsRef<Path>, frames: &[RenderedFrame], manifest: &GroundTruthManifest) -> Result<(), RenderError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    frames
        .par_iter()
        .try_for_each(|f| f.image.save_pgm(dir.join(frame_file_name(f.truth.frame_index))))?;
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::frontal_pose;
    use crate::geometry::plane_homography;
    use nalgebra::Point2;

    fn setup() -> (BoardGeometry, CameraModel, Homography) {
        let board = BoardGeometry::default();
        let cam = CameraModel::centered(500.0, 320, 240);
        let pose = frontal_pose(&cam, &board, 0.4, 0.0, Point2::new(160.0, 120.0));
        let h = plane_homography(&cam, &pose).unwrap();
        (board, cam, h)
    }

    #[test]
    fn manifest_matches_time_model() {
        let (board, cam, h) = setup();
        let config = CaptureConfig::default();
        let frames: Vec<usize> = (0..10).collect();
        let (rendered, manifest) = render_sequence(&board, &cam, &config, &frames, &|_| h).unwrap();
        assert_eq!(rendered.len(), 10);
        assert_eq!(manifest.frames.len(), 10);
        for (i, f) in manifest.frames.iter().enumerate() {
            assert_eq!(f.frame_index, i);
            assert!((f.true_window.start - i as f64 * 1000.0 / 30.0).abs() < 1e-9);
            assert!((f.true_window.len() - 8.33).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_frame_lists() {
        let (board, cam, h) = setup();
        let config = CaptureConfig::default();
        assert!(render_sequence(&board, &cam, &config, &[], &|_| h).is_err());
        assert!(render_sequence(&board, &cam, &config, &[3, 2], &|_| h).is_err());
    }

    #[test]
    fn writes_frames_and_manifest() {
        let (board, cam, h) = setup();
        let config = CaptureConfig { noise_sigma: 3.0, ..Default::default() };
        let (rendered, manifest) = render_sequence(&board, &cam, &config, &[4, 5, 9], &|_| h).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), &rendered, &manifest).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, ["frame_000004.pgm", "frame_000005.pgm", "frame_000009.pgm", "manifest.json"]);
        let back = GroundTruthManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, manifest);
        let img = GrayImage::load_pgm(dir.path().join("frame_000005.pgm")).unwrap();
        assert_eq!(img, rendered[1].image);
    }
}
