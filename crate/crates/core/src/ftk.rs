//! Timestamp decoding from 3D fiducial positions reported by an optical
//! tracker.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::BoardGeometry;
use crate::clock::{COUNTER_BITS, RING_LEDS};
use crate::geometry::RigidPose;
use crate::outcome::{step, window_from_reading, Decoded, DecodedFrame, LedReading, Rejected, Rejection};

/// One tracker frame: unlabelled 3D points in the tracker frame (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialFrame {
    pub local_ts: f64,
    pub points: Vec<Point3<f64>>,
    /// Board-to-tracker pose reported by the source, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<RigidPose>,
}

impl FiducialFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fiducial frame serializes")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FtkError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no subset of points matches the marker template")]
    NoMatch,
    #[error("{0} distinct point subsets match the marker template")]
    Ambiguous(usize),
    #[error("template points are collinear")]
    DegenerateTemplate,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Rigid arrangement of always-on fiducials in board coordinates (z = 0):
/// the four corner LEDs followed by the orientation LED.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerTemplate {
    pub points: Vec<Point3<f64>>,
}

impl MarkerTemplate {
    pub fn from_board(board: &BoardGeometry) -> Self {
        let lift = |p: &Point2<f64>| Point3::new(p.x, p.y, 0.0);
        let mut points: Vec<_> = board.corners.iter().map(lift).collect();
        points.push(lift(&board.orientation_led));
        Self { points }
    }

    pub fn validate(&self) -> Result<(), FtkError> {
        if self.points.len() < 3 {
            return Err(FtkError::TooFewPoints { needed: 3, got: self.points.len() });
        }
        let c = centroid(&self.points);
        let spread: Matrix3<f64> = self.points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
        let ev = spread.symmetric_eigenvalues();
        let mut ev: Vec<f64> = ev.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        if ev[1] <= 1e-9 * ev[2] {
            return Err(FtkError::DegenerateTemplate);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtkConfig {
    pub rms_tol_mm: f64,
    pub plane_tol_mm: f64,
    pub match_tol_mm: f64,
}

impl Default for FtkConfig {
    fn default() -> Self {
        Self { rms_tol_mm: 1.0, plane_tol_mm: 3.0, match_tol_mm: 2.0 }
    }
}

/// A template found in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerMatch {
    pub pose: RigidPose,
    /// Index into the frame's points for each template point.
    pub indices: Vec<usize>,
    /// Residual standard deviation of the fit (mm).
    pub rms_mm: f64,
}

fn centroid(pts: &[Point3<f64>]) -> Point3<f64> {
    Point3::from(pts.iter().map(|p| p.coords).sum::<Vector3<f64>>() / pts.len() as f64)
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Option<RigidPose> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let (cs, cd) = (centroid(src), centroid(dst));
    let cov: Matrix3<f64> = src.iter().zip(dst).map(|(s, d)| (d - cd) * (s - cs).transpose()).sum();
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let d = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
    let t = cd.coords - r * cs.coords;
    RigidPose::with_tolerance(r, t, 1e-6).ok()
}

fn residual_ss(pose: &RigidPose, src: &[Point3<f64>], dst: &[Point3<f64>]) -> f64 {
    src.iter().zip(dst).map(|(s, d)| (pose.transform(s) - d).norm_squared()).sum()
}

/// Finds the template among `points` and returns its board-to-tracker pose.
///
/// Candidate assignments are enumerated point by point, pruned whenever a
/// pairwise distance differs from the template's by more than
/// `4 * rms_tol_mm`. Each complete assignment is fitted with Kabsch and
/// accepted when its residual standard deviation, `sqrt(SSR / (3n - 6))`,
/// is at most `rms_tol_mm`.
///
/// A planar template also fits its own mirror image after a half turn out
/// of the plane, so candidates whose board normal points towards the
/// tracker (the LEDs would face away from it) are discarded.
pub fn detect_marker_3d(points: &[Point3<f64>], template: &MarkerTemplate, rms_tol_mm: f64) -> Result<MarkerMatch, FtkError> {
    let m = template.points.len();
    if points.len() < m.max(4) {
        return Err(FtkError::TooFewPoints { needed: m.max(4), got: points.len() });
    }
    let tpl = &template.points;
    let dist_tol = 4.0 * rms_tol_mm;
    let dof = (3 * m - 6).max(1) as f64;

    let mut found: Vec<MarkerMatch> = Vec::new();
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    fn extend(
        depth: usize,
        chosen: &mut Vec<usize>,
        points: &[Point3<f64>],
        tpl: &[Point3<f64>],
        dist_tol: f64,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if depth == tpl.len() {
            visit(chosen);
            return;
        }
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let fits = chosen
                .iter()
                .enumerate()
                .all(|(j, &c)| ((points[i] - points[c]).norm() - (tpl[depth] - tpl[j]).norm()).abs() <= dist_tol);
            if fits {
                chosen.push(i);
                extend(depth + 1, chosen, points, tpl, dist_tol, visit);
                chosen.pop();
            }
        }
    }
    extend(0, &mut chosen, points, tpl, dist_tol, &mut |idx| {
        let dst: Vec<_> = idx.iter().map(|&i| points[i]).collect();
        if let Some(pose) = kabsch(tpl, &dst).filter(faces_tracker) {
            let rms = (residual_ss(&pose, tpl, &dst) / dof).sqrt();
            if rms <= rms_tol_mm {
                found.push(MarkerMatch { pose, indices: idx.to_vec(), rms_mm: rms });
            }
        }
    });
    match found.len() {
        0 => Err(FtkError::NoMatch),
        1 => Ok(found.pop().expect("one match")),
        n => Err(FtkError::Ambiguous(n)),
    }
}

/// The tracker looks along +z and the LEDs face the board's +z side, as in
/// the image renderer, so a visible board has its normal pointing back at
/// the tracker.
fn faces_tracker(pose: &RigidPose) -> bool {
    pose.rotation().column(2).dot(pose.translation()) < 0.0
}

/// Marks each timestamp LED lit when a near-plane point lies within
/// `match_tol_mm` of it, after mapping points into board coordinates.
pub fn decode_fiducials(points: &[Point3<f64>], pose: &RigidPose, board: &BoardGeometry, plane_tol_mm: f64, match_tol_mm: f64) -> LedReading {
    let local = board_plane_points(points, pose, plane_tol_mm);
    let lit = |led: &Point2<f64>| local.iter().any(|p| (p - led).norm() <= match_tol_mm);
    let mut reading = LedReading::dark();
    for k in 0..RING_LEDS {
        reading.ring[k] = lit(&board.ring[k]);
    }
    for b in 0..COUNTER_BITS {
        reading.counter_bits[b] = lit(&board.counter[b]);
    }
    reading
}

fn board_plane_points(points: &[Point3<f64>], pose: &RigidPose, plane_tol_mm: f64) -> Vec<Point2<f64>> {
    let inv = pose.inverse();
    points
        .iter()
        .map(|p| inv.transform(p))
        .filter(|q| q.z.abs() <= plane_tol_mm)
        .map(|q| Point2::new(q.x, q.y))
        .collect()
}

/// Refits the pose using the template plus every point matched to an LED.
fn refine_pose(points: &[Point3<f64>], m: &MarkerMatch, template: &MarkerTemplate, board: &BoardGeometry, cfg: &FtkConfig) -> RigidPose {
    let inv = m.pose.inverse();
    let mut src = template.points.clone();
    let mut dst: Vec<_> = m.indices.iter().map(|&i| points[i]).collect();
    for (i, p) in points.iter().enumerate() {
        if m.indices.contains(&i) {
            continue;
        }
        let q = inv.transform(p);
        if q.z.abs() > cfg.plane_tol_mm {
            continue;
        }
        let q2 = Point2::new(q.x, q.y);
        if let Some(led) = board.timestamp_leds().find(|led| (q2 - led).norm() <= cfg.match_tol_mm) {
            src.push(Point3::new(led.x, led.y, 0.0));
            dst.push(*p);
        }
    }
    kabsch(&src, &dst).unwrap_or(m.pose)
}

/// Full 3D pipeline for one frame.
pub fn decode_ftk_frame(frame_index: usize, frame: &FiducialFrame, board: &BoardGeometry, cfg: &FtkConfig) -> (DecodedFrame, Option<RigidPose>) {
    let template = MarkerTemplate::from_board(board);
    let m = match detect_marker_3d(&frame.points, &template, cfg.rms_tol_mm) {
        Ok(m) => m,
        Err(_) => {
            let outcome = Err(Rejected::new(Rejection::NoMarker, step::DETECT_MARKER));
            return (DecodedFrame { frame_index, outcome }, None);
        }
    };
    let pose = refine_pose(&frame.points, &m, &template, board, cfg);
    let reading = decode_fiducials(&frame.points, &pose, board, cfg.plane_tol_mm, cfg.match_tol_mm);
    let outcome = window_from_reading(&reading)
        .map(|(window, counter, first_lit, last_lit)| Decoded { window, counter, first_lit, last_lit, homography: None })
        .map_err(|r| Rejected::new(r, step::DECODE_LEDS));
    (DecodedFrame { frame_index, outcome }, Some(pose))
}

/// Reads JSON-lines fiducial frames, skipping blank lines.
pub fn parse_fiducial_lines(text: &str) -> Result<Vec<FiducialFrame>, FtkError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: FiducialFrame = serde_json::from_str(l).map_err(|e| FtkError::Parse { line: i + 1, message: e.to_string() })?;
            if !f.local_ts.is_finite() || f.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
                return Err(FtkError::Parse { line: i + 1, message: "non-finite value".into() });
            }
            Ok(f)
        })
        .collect()
}
