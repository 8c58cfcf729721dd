//! Planar homographies and the normalized direct linear transform.

use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomographyError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("source and destination point counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("homography is singular")]
    Singular,
}

/// A projective map of the plane, stored with the bottom-right entry scaled to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    /// Normalizes `m` and checks that it is invertible.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, HomographyError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(HomographyError::Singular);
        }
        let scale = if m[(2, 2)].abs() > 1e-12 * m.norm() { m[(2, 2)] } else { m.norm() };
        if scale == 0.0 {
            return Err(HomographyError::Singular);
        }
        let n = m / scale;
        // Relative determinant: compare against the product of column norms.
        let denom: f64 = n.column_iter().map(|c| c.norm()).product();
        if denom == 0.0 || (n.determinant() / denom).abs() < 1e-12 {
            return Err(HomographyError::Singular);
        }
        Ok(Homography(n))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self, HomographyError> {
        Self::from_matrix(Matrix3::from_row_slice(&v))
    }

    pub fn apply(&self, p: Point2<f64>) -> Point2<f64> {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        Point2::new(v.x / v.z, v.y / v.z)
    }

    /// Like [`apply`](Self::apply) but `None` when the point maps to infinity
    /// or lands behind the projective horizon.
    pub fn try_apply(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        (v.z > 1e-12).then(|| Point2::new(v.x / v.z, v.y / v.z))
    }

    pub fn inverse(&self) -> Homography {
        let inv = self.0.try_inverse().expect("homography invariant: invertible");
        Homography::from_matrix(inv).expect("inverse of an invertible homography")
    }

    pub fn compose(&self, inner: &Homography) -> Result<Homography, HomographyError> {
        Homography::from_matrix(self.0 * inner.0)
    }

    /// Determinant of the Jacobian of the map at `p`: local area scale, with
    /// sign giving orientation.
    pub fn jacobian_det(&self, p: Point2<f64>) -> f64 {
        let m = &self.0;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        // For a projective map, det J = det(H) / w^3.
        self.0.determinant() / (w * w * w)
    }

    /// Largest distance from `p`'s image to the images of points `radius`
    /// away along the axes; a local estimate of how far `radius` reaches.
    pub fn projected_radius(&self, p: Point2<f64>, radius: f64) -> f64 {
        let c = self.apply(p);
        [(radius, 0.0), (-radius, 0.0), (0.0, radius), (0.0, -radius)]
            .iter()
            .map(|&(dx, dy)| (self.apply(Point2::new(p.x + dx, p.y + dy)) - c).norm())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = HomographyError;
    fn try_from(v: [f64; 9]) -> Result<Self, Self::Error> {
        Homography::from_row_major(v)
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_row_major()
    }
}

/// Similarity transform moving the centroid to the origin and the mean
/// distance from it to sqrt(2).
fn normalizing_transform(pts: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let mean_dist = pts.iter().map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn has_collinear_triple(pts: &[Point2<f64>]) -> bool {
    let scale = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a - b).norm()))
        .fold(0.0, f64::max);
    let tol = 1e-9 * scale * scale;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                if (pts[j] - pts[i]).perp(&(pts[k] - pts[i])).abs() <= tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Estimates `H` with `dst ~ H * src` by the normalized DLT.
///
/// Both point sets are normalized (Hartley), the stacked `2n x 9` system is
/// solved by SVD and the result de-normalized. With exactly four points no
/// three may be collinear; for more points a rank test on the design matrix
/// catches degenerate layouts.
pub fn estimate_homography(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Result<Homography, HomographyError> {
    let n = src.len();
    if n != dst.len() {
        return Err(HomographyError::LengthMismatch(n, dst.len()));
    }
    if n < 4 {
        return Err(HomographyError::TooFewPoints(n));
    }
    if n == 4 && (has_collinear_triple(src) || has_collinear_triple(dst)) {
        return Err(HomographyError::Degenerate);
    }
    let ts = normalizing_transform(src).ok_or(HomographyError::Degenerate)?;
    let td = normalizing_transform(dst).ok_or(HomographyError::Degenerate)?;

    // Pad with zero rows so the SVD always exposes the full right null space.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let sn = ts * Vector3::new(s.x, s.y, 1.0);
        let dn = td * Vector3::new(d.x, d.y, 1.0);
        let (x, y) = (sn.x / sn.z, sn.y / sn.z);
        let (u, v) = (dn.x / dn.z, dn.y / dn.z);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(HomographyError::Degenerate)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    // A well-posed problem has a one-dimensional null space: the second
    // smallest singular value must stay clear of zero.
    if sv(7) <= 1e-10 * sv(0) {
        return Err(HomographyError::Degenerate);
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(HomographyError::Degenerate)?;
    Homography::from_matrix(td_inv * hn * ts).map_err(|_| HomographyError::Degenerate)
}

/// Root-mean-square transfer error of `h` over the correspondences.
pub fn transfer_rms(h: &Homography, src: &[Point2<f64>], dst: &[Point2<f64>]) -> f64 {
    let sum: f64 = src.iter().zip(dst).map(|(s, d)| (h.apply(*s) - d).norm_squared()).sum();
    (sum / src.len().max(1) as f64).sqrt()
}
