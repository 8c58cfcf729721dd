//! Connected components, convex hulls and related small planar helpers.

use nalgebra::Point2;

/// 8-connected components of the `true` pixels of a `w x h` mask, each as a
/// list of linear pixel indices. Components smaller than `min_pixels` are
/// dropped.
pub fn connected_components(mask: &[bool], w: usize, h: usize, min_pixels: usize) -> Vec<Vec<usize>> {
    assert_eq!(mask.len(), w * h);
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % w, i / w);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if comp.len() >= min_pixels {
            out.push(comp);
        }
    }
    out
}

/// Convex hull by the monotone chain, counter-clockwise in a y-up frame
/// (positive shoelace area), without collinear points.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>| (a - o).perp(&(b - o));
    let mut lower: Vec<Point2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Signed shoelace area.
pub fn polygon_area(pts: &[Point2<f64>]) -> f64 {
    let n = pts.len();
    0.5 * (0..n).map(|i| pts[i].coords.perp(&pts[(i + 1) % n].coords)).sum::<f64>()
}

/// Total-least-squares line through `pts` as `(point on line, unit direction)`.
pub fn fit_line(pts: &[Point2<f64>]) -> Option<(Point2<f64>, nalgebra::Vector2<f64>)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let c = Point2::from(pts.iter().map(|p| p.coords).sum::<nalgebra::Vector2<f64>>() / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = nalgebra::Vector2::new(theta.cos(), theta.sin());
    (sxx + syy > 0.0).then_some((c, dir))
}

/// Intersection of two lines given as point and direction.
pub fn intersect_lines(a: (Point2<f64>, nalgebra::Vector2<f64>), b: (Point2<f64>, nalgebra::Vector2<f64>)) -> Option<Point2<f64>> {
    let denom = a.1.perp(&b.1);
    if denom.abs() < 1e-9 {
        return None;
    }
    let t = (b.0 - a.0).perp(&b.1) / denom;
    Some(a.0 + a.1 * t)
}
