//! Pinhole projection, triangulation and the reprojection metrics used to
//! judge temporal alignment.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Point2, Point3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::homography::{Homography, HomographyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid camera model: {0}")]
    InvalidCamera(&'static str),
    #[error("rotation is not a proper orthonormal matrix")]
    InvalidRotation,
    #[error("need at least two views, got {0}")]
    TooFewViews(usize),
    #[error("view and pixel counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("rays are parallel or camera centres coincide")]
    Degenerate,
    #[error("missing observation for view {view}, point {point}")]
    MissingObservation { view: usize, point: usize },
    #[error("point sets differ in size ({0} vs {1})")]
    CardinalityMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}

/// Ideal pinhole camera without distortion. Pixel centres sit at integer
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with the principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera("principal point outside the image"));
        }
        Ok(())
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, p: &Point3<f64>) -> Result<Point2<f64>, GeometryError> {
        if !(p.z > 0.0) {
            return Err(GeometryError::BehindCamera(p.z));
        }
        Ok(Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Normalized image coordinates of a pixel.
    pub fn unproject(&self, px: &Point2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    pub fn contains(&self, px: &Point2<f64>) -> bool {
        px.x >= -0.5 && px.y >= -0.5 && px.x < self.width as f64 - 0.5 && px.y < self.height as f64 - 0.5
    }
}

/// Rigid transform `x' = R x + t` (translation in millimetres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseFile", into = "PoseFile")]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<PoseFile> for RigidPose {
    type Error = GeometryError;
    fn try_from(f: PoseFile) -> Result<Self, Self::Error> {
        // Serialized rotations are often rounded; accept the looser file tolerance.
        RigidPose::with_tolerance(Matrix3::from_row_slice(&f.rotation), Vector3::from(f.translation), 1e-6)
    }
}

impl From<RigidPose> for PoseFile {
    fn from(p: RigidPose) -> Self {
        let r = p.rotation;
        PoseFile {
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            translation: p.translation.into(),
        }
    }
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::with_tolerance(rotation, translation, 1e-9)
    }

    /// Like [`new`](Self::new) with a caller-chosen orthonormality tolerance.
    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho <= tol && (rotation.determinant() - 1.0).abs() <= tol) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rotation from an axis-angle vector (radians) plus translation.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: Rotation3::from_scaled_axis(axis_angle).into_inner(), translation }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: rotation.into_inner(), translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * inner`: apply `inner` first.
    pub fn compose(&self, inner: &RigidPose) -> Self {
        Self {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    /// Camera centre in the frame this pose maps from.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }
}

/// Projects world point `x` through `pose` (world to camera) and `camera`.
pub fn project(camera: &CameraModel, pose: &RigidPose, x: &Point3<f64>) -> Result<Point2<f64>, GeometryError> {
    camera.project_camera_point(&pose.transform(x))
}

/// Homography from board-plane millimetres (z = 0) to pixels.
pub fn plane_homography(camera: &CameraModel, pose: &RigidPose) -> Result<Homography, HomographyError> {
    let r = pose.rotation();
    let t = pose.translation();
    let m = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), *t]);
    Homography::from_matrix(camera.k() * m)
}

/// A single 2D measurement of a numbered point in a numbered frame of a
/// numbered camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub view: usize,
    pub frame: usize,
    pub point: usize,
    pub pixel: Point2<f64>,
}

/// Linear triangulation followed by Gauss-Newton refinement of the
/// reprojection error.
pub fn triangulate(views: &[(CameraModel, RigidPose)], pixels: &[Point2<f64>]) -> Result<Point3<f64>, GeometryError> {
    if views.len() != pixels.len() {
        return Err(GeometryError::LengthMismatch(views.len(), pixels.len()));
    }
    if views.len() < 2 {
        return Err(GeometryError::TooFewViews(views.len()));
    }
    let centers: Vec<_> = views.iter().map(|(_, p)| p.center()).collect();
    let baseline = centers.iter().map(|c| (c - centers[0]).norm()).fold(0.0, f64::max);
    if baseline < 1e-9 {
        return Err(GeometryError::Degenerate);
    }

    // Work around the centroid of the camera centres to keep the system well scaled.
    let origin = centers.iter().fold(Vector3::zeros(), |acc, c| acc + c.coords) / centers.len() as f64;
    let scale = baseline.max(1.0);
    let rows = (2 * views.len()).max(4);
    let mut a = DMatrix::<f64>::zeros(rows, 4);
    for (i, ((cam, pose), px)) in views.iter().zip(pixels).enumerate() {
        let n = cam.unproject(px);
        let r = pose.rotation();
        // Camera point = R (origin + scale * y) + t.
        let t = r * origin + pose.translation();
        let p = |row: usize| [r[(row, 0)] * scale, r[(row, 1)] * scale, r[(row, 2)] * scale, t[row]];
        let (p0, p1, p2) = (p(0), p(1), p(2));
        for c in 0..4 {
            a[(2 * i, c)] = n.x * p2[c] - p0[c];
            a[(2 * i + 1, c)] = n.y * p2[c] - p1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if sv(2) <= 1e-12 * sv(0) {
        return Err(GeometryError::Degenerate);
    }
    let h = v_t.row(order[3]);
    if h[3].abs() < 1e-15 {
        return Err(GeometryError::Degenerate);
    }
    let mut x = Point3::from(origin + Vector3::new(h[0], h[1], h[2]) * (scale / h[3]));

    for _ in 0..10 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for ((cam, pose), px) in views.iter().zip(pixels) {
            let pc = pose.transform(&x);
            if pc.z <= 0.0 {
                return Err(GeometryError::BehindCamera(pc.z));
            }
            let (iz, iz2) = (1.0 / pc.z, 1.0 / (pc.z * pc.z));
            let d = Matrix2x3::new(cam.fx * iz, 0.0, -cam.fx * pc.x * iz2, 0.0, cam.fy * iz, -cam.fy * pc.y * iz2);
            let j = d * pose.rotation();
            let proj = Vector2::new(cam.fx * pc.x * iz + cam.cx, cam.fy * pc.y * iz + cam.cy);
            let res = proj - px.coords;
            jtj += j.transpose() * j;
            jtr += j.transpose() * res;
        }
        let Some(step) = jtj.try_inverse().map(|inv| -(inv * jtr)) else { break };
        x += step;
        if step.norm() < 1e-10 {
            break;
        }
    }
    Ok(x)
}

fn get_obs(grid: &[Vec<Option<Point2<f64>>>], i: usize, j: usize) -> Result<Point2<f64>, GeometryError> {
    grid.get(i)
        .and_then(|row| row.get(j))
        .copied()
        .flatten()
        .ok_or(GeometryError::MissingObservation { view: i, point: j })
}

/// Symmetric two-camera mean reprojection error.
///
/// `board_poses[i]` maps board points into the left camera for image pair
/// `i`; `extrinsics` maps the left camera frame into the right one. The
/// observation grids are indexed `[pair][point]` and must be complete.
pub fn stereo_mre_symmetric(
    left: &CameraModel,
    right: &CameraModel,
    extrinsics: &RigidPose,
    board_points: &[Point3<f64>],
    board_poses: &[RigidPose],
    left_obs: &[Vec<Option<Point2<f64>>>],
    right_obs: &[Vec<Option<Point2<f64>>>],
) -> Result<f64, GeometryError> {
    let (n, m) = (board_poses.len(), board_points.len());
    if n == 0 || m == 0 {
        return Err(GeometryError::Empty);
    }
    let mut sum = 0.0;
    for (i, pose) in board_poses.iter().enumerate() {
        let right_pose = extrinsics.compose(pose);
        for (j, x) in board_points.iter().enumerate() {
            let x1 = get_obs(left_obs, i, j)?;
            let x2 = get_obs(right_obs, i, j)?;
            sum += (x1 - project(left, pose, x)?).norm();
            sum += (x2 - project(right, &right_pose, x)?).norm();
        }
    }
    Ok(sum / (2 * n * m) as f64)
}

/// Mean reprojection error of marker-frame points seen by a second camera:
/// each point is moved by the tracked marker pose, then by the tracker to
/// camera extrinsics, then projected.
pub fn ir_rgb_mre(
    camera: &CameraModel,
    extrinsics: &RigidPose,
    marker_poses: &[RigidPose],
    marker_points: &[Point3<f64>],
    observations: &[Vec<Option<Point2<f64>>>],
) -> Result<f64, GeometryError> {
    let (n, m) = (marker_poses.len(), marker_points.len());
    if n == 0 || m == 0 {
        return Err(GeometryError::Empty);
    }
    let mut sum = 0.0;
    for (i, pose) in marker_poses.iter().enumerate() {
        for (j, x) in marker_points.iter().enumerate() {
            let obs = get_obs(observations, i, j)?;
            let in_tracker = pose.transform(x);
            sum += (obs - project(camera, extrinsics, &in_tracker)?).norm();
        }
    }
    Ok(sum / (n * m) as f64)
}

/// Mean Euclidean distance between index-matched 3D point sets.
pub fn pose_set_distance(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64, GeometryError> {
    if a.len() != b.len() {
        return Err(GeometryError::CardinalityMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(GeometryError::Empty);
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64)
}

/// Arranges flat observations of one camera into a `[frame][point]` grid.
pub fn observation_grid(obs: &[Observation], view: usize, n_frames: usize, n_points: usize) -> Vec<Vec<Option<Point2<f64>>>> {
    let mut grid = vec![vec![None; n_points]; n_frames];
    for o in obs.iter().filter(|o| o.view == view) {
        if o.frame < n_frames && o.point < n_points {
            grid[o.frame][o.point] = Some(o.pixel);
        }
    }
    grid
}
