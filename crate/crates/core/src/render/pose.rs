//! Board placements for synthetic captures.

use nalgebra::{Matrix3, Point2, Point3, Rotation3, Unit, Vector3};
use rand::Rng;

use crate::blob::polygon_area;
use crate::board::BoardGeometry;
use crate::geometry::{plane_homography, project, CameraModel, RigidPose};
use crate::homography::Homography;

/// Board-to-camera rotation of a board facing the camera squarely, upright
/// when `in_plane` is zero. The board's `y` axis points up in the image.
fn facing_rotation(in_plane: f64) -> Matrix3<f64> {
    let flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
    flip * Rotation3::from_axis_angle(&Vector3::z_axis(), in_plane).into_inner()
}

/// Pose placing the board centre on pixel `center` at the depth that makes
/// the frontal board cover `area_fraction` of the image.
pub fn frontal_pose(camera: &CameraModel, board: &BoardGeometry, area_fraction: f64, in_plane: f64, center: Point2<f64>) -> RigidPose {
    tilted_pose(camera, board, area_fraction, in_plane, 0.0, 0.0, center)
}

fn tilted_pose(
    camera: &CameraModel,
    board: &BoardGeometry,
    area_fraction: f64,
    in_plane: f64,
    tilt: f64,
    tilt_axis_angle: f64,
    center: Point2<f64>,
) -> RigidPose {
    let image_area = (camera.width * camera.height) as f64;
    let focal = (camera.fx * camera.fy).sqrt();
    let depth = focal * board.board_size_mm * tilt.cos().sqrt() / (area_fraction * image_area).sqrt();
    let axis = Unit::new_normalize(Vector3::new(tilt_axis_angle.cos(), tilt_axis_angle.sin(), 0.0));
    let r = Rotation3::from_axis_angle(&axis, tilt).into_inner() * facing_rotation(in_plane);
    let dir = Vector3::new((center.x - camera.cx) / camera.fx, (center.y - camera.cy) / camera.fy, 1.0);
    RigidPose::new(r, dir * depth).expect("product of rotations is a rotation")
}

/// Fraction of the image covered by the projected board outline.
pub fn board_area_fraction(pose: &Homography, board: &BoardGeometry, camera: &CameraModel) -> f64 {
    let half = board.board_size_mm / 2.0;
    let pts: Vec<_> = [(-half, half), (half, half), (half, -half), (-half, -half)]
        .iter()
        .map(|&(x, y)| pose.apply(Point2::new(x, y)))
        .collect();
    polygon_area(&pts).abs() / (camera.width * camera.height) as f64
}

/// Ranges for random board placements.
#[derive(Debug, Clone, Copy)]
pub struct PoseSampler {
    pub min_area: f64,
    pub max_area: f64,
    /// Maximum angle between the board normal and the optical axis (rad).
    pub max_tilt: f64,
    /// Margin kept between the board outline and the image border (px).
    pub margin_px: f64,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self { min_area: 0.05, max_area: 0.4, max_tilt: 60f64.to_radians(), margin_px: 4.0 }
    }
}

/// Draws a pose with the whole board inside the image, its area fraction
/// within the sampler's range and the tilt below its bound.
pub fn random_board_pose<R: Rng + ?Sized>(rng: &mut R, camera: &CameraModel, board: &BoardGeometry, sampler: &PoseSampler) -> RigidPose {
    let half = board.board_size_mm / 2.0;
    let outline = [(-half, half), (half, half), (half, -half), (-half, -half)].map(|(x, y)| Point3::new(x, y, 0.0));
    loop {
        let area = rng.random_range(sampler.min_area..=sampler.max_area);
        let tilt = rng.random_range(0.0..=sampler.max_tilt);
        let axis = rng.random_range(0.0..std::f64::consts::TAU);
        let in_plane = rng.random_range(0.0..std::f64::consts::TAU);
        for _ in 0..20 {
            let center = Point2::new(rng.random_range(0.0..camera.width as f64), rng.random_range(0.0..camera.height as f64));
            let pose = tilted_pose(camera, board, area, in_plane, tilt, axis, center);
            let inside = outline.iter().all(|p| {
                project(camera, &pose, p).is_ok_and(|px| {
                    px.x >= sampler.margin_px
                        && px.y >= sampler.margin_px
                        && px.x <= camera.width as f64 - 1.0 - sampler.margin_px
                        && px.y <= camera.height as f64 - 1.0 - sampler.margin_px
                })
            });
            if !inside {
                continue;
            }
            let Ok(h) = plane_homography(camera, &pose) else { continue };
            let a = board_area_fraction(&h, board, camera);
            if a >= sampler.min_area && a <= sampler.max_area {
                return pose;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn frontal_pose_hits_requested_area_and_orientation() {
        let cam = CameraModel::centered(1400.0, 1280, 720);
        let board = BoardGeometry::default();
        let pose = frontal_pose(&cam, &board, 0.2, 0.0, Point2::new(640.0, 360.0));
        let h = plane_homography(&cam, &pose).unwrap();
        assert!((board_area_fraction(&h, &board, &cam) - 0.2).abs() < 1e-9);
        // Board "up" is image "up" and the centre lands where requested.
        let c = h.apply(Point2::origin());
        assert!((c - Point2::new(640.0, 360.0)).norm() < 1e-9);
        assert!(h.apply(Point2::new(0.0, 100.0)).y < c.y);
        assert!(h.apply(Point2::new(100.0, 0.0)).x > c.x);
    }

    #[test]
    fn random_poses_respect_bounds() {
        let cam = CameraModel::centered(1400.0, 1280, 720);
        let board = BoardGeometry::default();
        let sampler = PoseSampler::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pose = random_board_pose(&mut rng, &cam, &board, &sampler);
            let normal = pose.rotation() * Vector3::z();
            let tilt = (-normal.z).acos();
            assert!(tilt <= sampler.max_tilt + 1e-9);
            let h = plane_homography(&cam, &pose).unwrap();
            let a = board_area_fraction(&h, &board, &cam);
            assert!(a >= sampler.min_area && a <= sampler.max_area);
        }
    }
}
