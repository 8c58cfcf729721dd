//! Detection of the board's central square marker.

use nalgebra::{Point2, Vector2};
use thiserror::Error;

use crate::blob::{connected_components, convex_hull, fit_line, intersect_lines, polygon_area};
use crate::board::{BoardGeometry, MarkerCode};
use crate::homography::estimate_homography;
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedMarker {
    /// Image corners in the order of `BoardGeometry::marker_corners`.
    pub corners: [Point2<f64>; 4],
    /// Marker area over image area.
    pub area_fraction: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkerError {
    #[error("no candidate matches the marker code")]
    NotFound,
    #[error("{0} separate candidates match the marker code")]
    Ambiguous(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerParams {
    /// Threshold window side is `min(width, height) / window_divisor`, made odd.
    pub window_divisor: usize,
    /// A pixel is dark when it is this far below its local mean.
    pub offset: f64,
    /// Minimum light/dark difference between sampled modules.
    pub min_contrast: f64,
    /// Minimum quadrilateral area over hull area.
    pub min_fill: f64,
    /// Minimum side of a candidate in pixels.
    pub min_side_px: f64,
}

impl Default for MarkerParams {
    fn default() -> Self {
        Self { window_divisor: 16, offset: 7.0, min_contrast: 30.0, min_fill: 0.85, min_side_px: 8.0 }
    }
}

pub fn detect_marker(image: &GrayImage, board: &BoardGeometry) -> Option<DetectedMarker> {
    detect_marker_with(image, board, &MarkerParams::default()).ok()
}

pub fn detect_marker_with(image: &GrayImage, board: &BoardGeometry, params: &MarkerParams) -> Result<DetectedMarker, MarkerError> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(MarkerError::NotFound);
    }
    let blurred = image.box_blur3();
    let mask = adaptive_dark_mask(&blurred, params);
    let mut found: Vec<[Point2<f64>; 4]> = Vec::new();
    for comp in connected_components(&mask, w, h, 16) {
        let touches_border = comp.iter().any(|&i| {
            let (x, y) = (i % w, i / w);
            x == 0 || y == 0 || x == w - 1 || y == h - 1
        });
        if touches_border {
            continue;
        }
        let Some(quad) = quad_from_component(&comp, w, params) else { continue };
        let quad = refine_quad(&blurred, quad);
        let Some(corners) = match_code(image, board, quad, params) else { continue };
        let module = (corners[1] - corners[0]).norm() / 6.0;
        let duplicate = found.iter().any(|f| (0..4).all(|k| (f[k] - corners[k]).norm() < module));
        if !duplicate {
            found.push(corners);
        }
    }
    match found.len() {
        0 => Err(MarkerError::NotFound),
        1 => {
            let corners = found[0];
            let area_fraction = polygon_area(&corners).abs() / (w * h) as f64;
            Ok(DetectedMarker { corners, area_fraction })
        }
        n => Err(MarkerError::Ambiguous(n)),
    }
}

/// Pixels darker than the mean of their window minus `offset`.
fn adaptive_dark_mask(img: &GrayImage, params: &MarkerParams) -> Vec<bool> {
    let (w, h) = (img.width(), img.height());
    let win = (w.min(h) / params.window_divisor.max(1)) | 1;
    let r = win / 2;
    let stride = w + 1;
    let data = img.as_raw();
    let mut integral = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += data[y * w + x] as u64;
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let cols: Vec<(usize, usize)> = (0..w).map(|x| (x.saturating_sub(r), (x + r + 1).min(w))).collect();
    let mut mask = vec![false; w * h];
    for (y, out) in mask.chunks_exact_mut(w).enumerate() {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        let (top, bottom) = (&integral[y0 * stride..][..stride], &integral[y1 * stride..][..stride]);
        let src = &data[y * w..][..w];
        let rows = (y1 - y0) as f64;
        for ((o, &v), &(x0, x1)) in out.iter_mut().zip(src).zip(&cols) {
            let sum = bottom[x1] + top[x0] - top[x1] - bottom[x0];
            // value < sum / n - offset, without a division per pixel.
            *o = (v as f64 + params.offset) * (rows * (x1 - x0) as f64) < sum as f64;
        }
    }
    mask
}

/// Quadrilateral approximating the outline of a pixel set, in the
/// hull's winding order.
fn quad_from_component(comp: &[usize], w: usize, params: &MarkerParams) -> Option<[Point2<f64>; 4]> {
    let (y_min, y_max) = comp.iter().fold((usize::MAX, 0), |(a, b), &i| (a.min(i / w), b.max(i / w)));
    let mut rows = vec![(usize::MAX, 0usize); y_max - y_min + 1];
    for &i in comp {
        let (x, y) = (i % w, i / w);
        let e = &mut rows[y - y_min];
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
    }
    let mut pts = Vec::with_capacity(rows.len() * 4);
    for (dy, &(x0, x1)) in rows.iter().enumerate().filter(|(_, r)| r.0 != usize::MAX) {
        let (y, x0, x1) = ((y_min + dy) as f64, x0 as f64, x1 as f64);
        pts.extend([
            Point2::new(x0 - 0.5, y - 0.5),
            Point2::new(x0 - 0.5, y + 0.5),
            Point2::new(x1 + 0.5, y - 0.5),
            Point2::new(x1 + 0.5, y + 0.5),
        ]);
    }
    let hull = convex_hull(&pts);
    if hull.len() < 4 {
        return None;
    }
    let hull_area = polygon_area(&hull).abs();
    let c = Point2::from(hull.iter().map(|p| p.coords).sum::<Vector2<f64>>() / hull.len() as f64);
    let farthest_from = |q: Point2<f64>| (0..hull.len()).max_by(|&a, &b| (hull[a] - q).norm().total_cmp(&(hull[b] - q).norm())).unwrap();
    let i0 = farthest_from(c);
    let i1 = farthest_from(hull[i0]);
    let dir = hull[i1] - hull[i0];
    let side = |i: usize| dir.perp(&(hull[i] - hull[i0]));
    let i2 = (0..hull.len()).max_by(|&a, &b| side(a).total_cmp(&side(b)))?;
    let i3 = (0..hull.len()).min_by(|&a, &b| side(a).total_cmp(&side(b)))?;
    let mut idx = [i0, i1, i2, i3];
    idx.sort_unstable();
    if idx.windows(2).any(|p| p[0] == p[1]) {
        return None;
    }
    let quad = idx.map(|i| hull[i]);
    let area = polygon_area(&quad).abs();
    if area < params.min_fill * hull_area {
        return None;
    }
    if (0..4).any(|k| (quad[(k + 1) % 4] - quad[k]).norm() < params.min_side_px) {
        return None;
    }
    Some(quad)
}

/// Moves each side onto the dark-to-light transition at the marker's
/// outer border and re-intersects the sides.
fn refine_quad(img: &GrayImage, quad: [Point2<f64>; 4]) -> [Point2<f64>; 4] {
    let c = Point2::from(quad.iter().map(|p| p.coords).sum::<Vector2<f64>>() / 4.0);
    let mut lines = Vec::with_capacity(4);
    for k in 0..4 {
        let (a, b) = (quad[k], quad[(k + 1) % 4]);
        let len = (b - a).norm();
        let along = (b - a) / len;
        let mut normal = Vector2::new(-along.y, along.x);
        if normal.dot(&(a - c)) < 0.0 {
            normal = -normal;
        }
        let module = len / 6.0;
        let reach = 0.75 * module;
        let step = (module / 12.0).min(0.25);
        let n_steps = (2.0 * reach / step).ceil() as usize;
        let mut edge_pts = Vec::new();
        for s in 0..24 {
            let t = 0.2 + 0.6 * s as f64 / 23.0;
            let base = a + (b - a) * t;
            let profile: Option<Vec<f64>> = (0..=n_steps)
                .map(|i| {
                    let p = base + normal * (-reach + i as f64 * step);
                    img.sample(p.x, p.y)
                })
                .collect();
            let Some(profile) = profile else { continue };
            let dark = profile.iter().copied().fold(f64::INFINITY, f64::min);
            let light = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if light - dark < 20.0 {
                continue;
            }
            let mid = 0.5 * (dark + light);
            let i_dark = profile.iter().position(|&v| v == dark).unwrap_or(0);
            if let Some(i) = (i_dark..n_steps).find(|&i| profile[i] < mid && profile[i + 1] >= mid) {
                let frac = (mid - profile[i]) / (profile[i + 1] - profile[i]);
                let offset = -reach + (i as f64 + frac) * step;
                edge_pts.push(base + normal * offset);
            }
        }
        if edge_pts.len() < 6 {
            return quad;
        }
        match fit_line(&edge_pts) {
            Some(l) => lines.push(l),
            None => return quad,
        }
    }
    let mut out = quad;
    for k in 0..4 {
        match intersect_lines(lines[(k + 3) % 4], lines[k]) {
            Some(p) if (p - quad[k]).norm() < 0.5 * (quad[(k + 1) % 4] - quad[k]).norm() => out[k] = p,
            _ => return quad,
        }
    }
    out
}

/// Tries the four cyclic corner assignments and returns the corners for
/// the single one whose sampled modules reproduce the code.
fn match_code(img: &GrayImage, board: &BoardGeometry, quad: [Point2<f64>; 4], params: &MarkerParams) -> Option<[Point2<f64>; 4]> {
    // The board is seen from the front, which mirrors its y-up frame: image
    // winding must be opposite to the board's.
    let board_sign = polygon_area(&board.marker_corners).signum();
    let quad = if polygon_area(&quad).signum() == board_sign { [quad[0], quad[3], quad[2], quad[1]] } else { quad };
    let mut hit = None;
    let mut hits = 0;
    for r in 0..4 {
        let dst: [Point2<f64>; 4] = std::array::from_fn(|k| quad[(k + r) % 4]);
        let Ok(hm) = estimate_homography(&board.marker_corners, &dst) else { continue };
        let mut modules = [[0.0f64; 6]; 6];
        let mut ok = true;
        for (v, row) in modules.iter_mut().enumerate() {
            for (u, m) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for sy in 0..3 {
                    for sx in 0..3 {
                        let gu = u as f64 + 0.3 + 0.2 * sx as f64;
                        let gv = v as f64 + 0.3 + 0.2 * sy as f64;
                        let p = hm.apply(board.marker_grid_point(gu, gv));
                        match img.sample(p.x, p.y) {
                            Some(val) => acc += val,
                            None => ok = false,
                        }
                    }
                }
                *m = acc / 9.0;
            }
        }
        if !ok {
            return None;
        }
        let lo = modules.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = modules.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < params.min_contrast {
            return None;
        }
        let thr = 0.5 * (lo + hi);
        let light = |u: usize, v: usize| modules[v][u] > thr;
        let border_dark = (0..6).all(|i| !light(i, 0) && !light(i, 5) && !light(0, i) && !light(5, i));
        if !border_dark {
            return None;
        }
        let code: MarkerCode = std::array::from_fn(|v| std::array::from_fn(|u| light(u + 1, v + 1)));
        if code == board.marker_bits {
            hits += 1;
            hit = Some(dst);
        }
    }
    (hits == 1).then_some(hit).flatten()
}
