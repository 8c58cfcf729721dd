use nalgebra::{Point2, Point3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::sequence::{BoardPose, FrameTruth, GroundTruthManifest};
use super::{counter_bit_lit, frame_seed, led_brightness, CaptureConfig, RenderError};
use crate::board::BoardGeometry;
use crate::ftk::FiducialFrame;
use crate::geometry::RigidPose;

/// Synthetic tracker output for the listed frames.
///
/// Each frame holds the four corner LEDs, the orientation LED, every ring
/// LED lit for at least half a millisecond and every lit counter LED, moved
/// by the frame's board-to-tracker pose, perturbed by isotropic Gaussian
/// noise of `noise_mm` per axis and shuffled.
pub fn generate_ftk_sequence(
    board: &BoardGeometry,
    config: &CaptureConfig,
    frames: &[usize],
    trajectory: &(dyn Fn(usize) -> RigidPose + Sync),
    noise_mm: f64,
) -> Result<(Vec<FiducialFrame>, GroundTruthManifest), RenderError> {
    config.validate()?;
    if !(noise_mm >= 0.0 && noise_mm.is_finite()) {
        return Err(RenderError::InvalidConfig("fiducial noise must be >= 0".into()));
    }
    if frames.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RenderError::InvalidConfig("frame indices must be strictly increasing".into()));
    }
    let normal = Normal::new(0.0, noise_mm).expect("finite noise");
    let mut out = Vec::with_capacity(frames.len());
    let mut truths = Vec::with_capacity(frames.len());
    for &i in frames {
        let window = config.true_window(i);
        let pose = trajectory(i);
        let mut local: Vec<Point2<f64>> = board.corners.to_vec();
        local.push(board.orientation_led);
        local.extend((0..board.ring.len()).filter(|&k| led_brightness(k, window) >= 0.5).map(|k| board.ring[k]));
        local.extend((0..board.counter.len()).filter(|&b| counter_bit_lit(b, window)).map(|b| board.counter[b]));

        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(config.seed, i));
        let mut points: Vec<Point3<f64>> = local
            .iter()
            .map(|p| {
                let q = pose.transform(&Point3::new(p.x, p.y, 0.0));
                if noise_mm > 0.0 {
                    q + nalgebra::Vector3::from_fn(|_, _| normal.sample(&mut rng))
                } else {
                    q
                }
            })
            .collect();
        points.shuffle(&mut rng);
        let local_ts = config.local_ts(i);
        out.push(FiducialFrame { local_ts, points, pose: Some(pose) });
        truths.push(FrameTruth { frame_index: i, local_ts_ms: local_ts, true_window: window, board_pose: BoardPose::Rigid(pose) });
    }
    Ok((out, GroundTruthManifest::new(config, truths)))
}
