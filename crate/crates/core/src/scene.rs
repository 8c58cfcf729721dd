//! Synthetic moving-target scenes with known extrinsics, used to exercise
//! the geometry metrics and track alignment.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Point2, Point3, Rotation3, Vector3};

use crate::geometry::{project, CameraModel, GeometryError, RigidPose};

/// Inner corners of a planar checkerboard in its own frame (z = 0), centred
/// on the origin, row-major.
pub fn checkerboard(rows: usize, cols: usize, square_mm: f64) -> Vec<Point3<f64>> {
    let (ox, oy) = ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| Point3::new((c as f64 - ox) * square_mm, (r as f64 - oy) * square_mm, 0.0)))
        .collect()
}

/// World-to-camera pose of a camera at `eye` looking at `target`, with the
/// image y axis pointing along world `-up`.
pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> RigidPose {
    let z = (target - eye).normalize();
    let x = (-up).cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let r = Rotation3::from_matrix_unchecked(r);
    RigidPose::from_rotation(r, -(r * eye.coords))
}

/// Target moving on a horizontal circle in world coordinates while slowly
/// rocking about its vertical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularMotion {
    pub center: Point3<f64>,
    pub radius_mm: f64,
    pub period_ms: f64,
    /// Peak rocking angle, radians.
    pub rock: f64,
}

impl CircularMotion {
    /// Target-to-world pose at time `t_ms`.
    pub fn pose_at(&self, t_ms: f64) -> RigidPose {
        let phase = TAU * t_ms / self.period_ms;
        let offset = Vector3::new(self.radius_mm * phase.cos(), self.radius_mm * phase.sin(), 0.0);
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), self.rock * phase.sin());
        RigidPose::from_rotation(rot, self.center.coords + offset)
    }

    /// Peak linear speed in mm/ms (equivalently m/s).
    pub fn speed(&self) -> f64 {
        TAU * self.radius_mm / self.period_ms
    }

    pub fn points_at(&self, t_ms: f64, local: &[Point3<f64>]) -> Vec<Point3<f64>> {
        let pose = self.pose_at(t_ms);
        local.iter().map(|p| pose.transform(p)).collect()
    }
}

/// Projects world points into a camera given its world-to-camera pose.
pub fn observe(camera: &CameraModel, world_to_cam: &RigidPose, points: &[Point3<f64>]) -> Result<Vec<Point2<f64>>, GeometryError> {
    points.iter().map(|p| project(camera, world_to_cam, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_centres_the_target() {
        let cam = CameraModel::centered(1000.0, 640, 480);
        let pose = look_at(Point3::new(300.0, -200.0, -1500.0), Point3::new(0.0, 0.0, 0.0), Vector3::y());
        let px = project(&cam, &pose, &Point3::origin()).unwrap();
        assert!((px - Point2::new(cam.cx, cam.cy)).norm() < 1e-9);
        // World up appears towards smaller image y.
        let up = project(&cam, &pose, &Point3::new(0.0, 10.0, 0.0)).unwrap();
        assert!(up.y < cam.cy);
    }

    #[test]
    fn circle_speed_matches_finite_difference() {
        let m = CircularMotion { center: Point3::new(0.0, 0.0, 1000.0), radius_mm: 150.0, period_ms: 1000.0, rock: 0.0 };
        let d = (m.pose_at(0.5).transform(&Point3::origin()) - m.pose_at(0.0).transform(&Point3::origin())).norm() / 0.5;
        assert!((d - m.speed()).abs() < 1e-3);
        assert_eq!(checkerboard(3, 4, 10.0).len(), 12);
    }
}
