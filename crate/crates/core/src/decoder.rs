//! Per-frame decoding of the clock from a grayscale image.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::blob::{connected_components, convex_hull, polygon_area};
use crate::board::BoardGeometry;
use crate::clock::{COUNTER_BITS, RING_LEDS};
use crate::homography::{estimate_homography, Homography};
use crate::image::GrayImage;
use crate::marker::{detect_marker_with, MarkerParams};
use crate::outcome::{step, window_from_reading, Decoded, DecodedFrame, LedReading, Rejected, Rejection};

/// Minimum peak-over-background of a corner LED, in gray levels.
pub const CORNER_MIN_CONTRAST: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderMode {
    /// Visible-light frames: the marker gives position and orientation.
    #[default]
    Visible,
    /// Infrared frames: no marker; the orientation LED marks corner 0.
    Infrared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub mode: DecoderMode,
    /// Corner LED search half-width and allowed deviation (board mm).
    pub tol_mm: f64,
    /// Absolute part of the lit/unlit margin (gray levels).
    pub k_abs: f64,
    /// Relative part of the margin, a fraction of peak over surround.
    pub k_rel: f64,
    /// Half-width of the ambiguity band as a fraction of the margin.
    pub ambiguity: f64,
    /// Smallest accepted marker area as a fraction of the image.
    pub min_marker_fraction: f64,
    pub marker: MarkerParams,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            mode: DecoderMode::Visible,
            tol_mm: 10.0,
            k_abs: 12.0,
            k_rel: 0.2,
            ambiguity: 0.25,
            min_marker_fraction: 0.002,
            marker: MarkerParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CornerDeviation {
    pub corner: usize,
}

/// Pixels whose board coordinates under `inv` satisfy `keep`, visited
/// inside the image bounding box of `outline`.
fn for_pixels_near(
    image: &GrayImage,
    h: &Homography,
    inv: &Homography,
    outline: impl Iterator<Item = Point2<f64>>,
    mut visit: impl FnMut(usize, usize, Point2<f64>),
) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in outline {
        let Some(q) = h.try_apply(p) else { return };
        x0 = x0.min(q.x);
        x1 = x1.max(q.x);
        y0 = y0.min(q.y);
        y1 = y1.max(q.y);
    }
    let (w, hgt) = (image.width() as f64, image.height() as f64);
    let xa = x0.floor().max(0.0);
    let xb = x1.ceil().min(w - 1.0);
    let ya = y0.floor().max(0.0);
    let yb = y1.ceil().min(hgt - 1.0);
    if !(xa <= xb && ya <= yb) {
        return;
    }
    for y in ya as usize..=yb as usize {
        for x in xa as usize..=xb as usize {
            if let Some(b) = inv.try_apply(Point2::new(x as f64, y as f64)) {
                visit(x, y, b);
            }
        }
    }
}

fn square_outline(c: Point2<f64>, half: f64) -> impl Iterator<Item = Point2<f64>> {
    [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].into_iter().map(move |(sx, sy)| c + Vector2::new(sx, sy) * half)
}

/// Subpixel image positions of the four corner LEDs.
///
/// Each LED is searched in a `±tol_mm` board window around its coarse
/// prediction. The background is the window median, pixels above the
/// midpoint between background and peak are averaged with weights
/// `I - threshold`. A missing LED (peak below [`CORNER_MIN_CONTRAST`]) or a
/// centroid more than `tol_mm` from the prediction is a deviation.
pub fn locate_corner_leds(image: &GrayImage, coarse: &Homography, board: &BoardGeometry, tol_mm: f64) -> Result<[Point2<f64>; 4], CornerDeviation> {
    let inv = coarse.inverse();
    let half = board.board_size_mm / 2.0 - 0.5;
    let mut out = [Point2::origin(); 4];
    for (k, &c) in board.corners.iter().enumerate() {
        let mut px: Vec<(usize, usize, f64)> = Vec::new();
        for_pixels_near(image, coarse, &inv, square_outline(c, tol_mm), |x, y, b| {
            let d = b - c;
            if d.x.abs() <= tol_mm && d.y.abs() <= tol_mm && b.x.abs() <= half && b.y.abs() <= half {
                px.push((x, y, image.get(x, y) as f64));
            }
        });
        if px.len() < 4 {
            return Err(CornerDeviation { corner: k });
        }
        let mut values: Vec<f64> = px.iter().map(|p| p.2).collect();
        values.sort_by(f64::total_cmp);
        let bg = values[values.len() / 2];
        // Peak of the 3x3 local mean, robust to single noisy pixels.
        let local_mean = |x: usize, y: usize| {
            let mut acc = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(image.height() - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(image.width() - 1) {
                    acc += image.get(xx, yy) as f64;
                    n += 1.0;
                }
            }
            acc / n
        };
        let peak = px.iter().map(|&(x, y, _)| local_mean(x, y)).fold(f64::NEG_INFINITY, f64::max);
        if peak - bg < CORNER_MIN_CONTRAST {
            return Err(CornerDeviation { corner: k });
        }
        let thr = bg + 0.5 * (peak - bg);
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for &(x, y, v) in &px {
            if v > thr {
                let wgt = v - thr;
                sw += wgt;
                sx += wgt * x as f64;
                sy += wgt * y as f64;
            }
        }
        if sw <= 0.0 {
            return Err(CornerDeviation { corner: k });
        }
        let centroid = Point2::new(sx / sw, sy / sw);
        if (inv.apply(centroid) - c).norm() > tol_mm {
            return Err(CornerDeviation { corner: k });
        }
        out[k] = centroid;
    }
    Ok(out)
}

/// Disk and surround statistics of one LED.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedMeasurement {
    pub disk_mean: f64,
    pub disk_max: f64,
    pub annulus_mean: f64,
    /// `disk_mean - annulus_mean`.
    pub contrast: f64,
    /// Contrast required to call the LED lit.
    pub margin: f64,
    pub lit: bool,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub k_abs: f64,
    pub k_rel: f64,
    pub ambiguity: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let c = DecoderConfig::default();
        Self { k_abs: c.k_abs, k_rel: c.k_rel, ambiguity: c.ambiguity }
    }
}

impl From<&DecoderConfig> for Thresholds {
    fn from(c: &DecoderConfig) -> Self {
        Self { k_abs: c.k_abs, k_rel: c.k_rel, ambiguity: c.ambiguity }
    }
}

/// Measures the 116 timestamp LEDs (ring first, then counter).
///
/// The disk has radius `0.35 x pitch`. The annulus spans 1.5 to 2.5 disk
/// radii and keeps only pixels closer to this LED than to any other board
/// LED, so neighbours' glow stays out of the surround. The margin is
/// `max(k_abs, k_rel * (disk_max - annulus_mean))`.
pub fn measure_leds(image: &GrayImage, refined: &Homography, board: &BoardGeometry, t: &Thresholds) -> Vec<LedMeasurement> {
    let inv = refined.inverse();
    let r = board.led_radius_mm();
    let (r_in, r_out) = (1.5 * r, 2.5 * r);
    let others: Vec<Point2<f64>> = board.timestamp_leds().chain(board.corners).chain([board.orientation_led]).collect();
    board
        .timestamp_leds()
        .collect::<Vec<_>>()
        .iter()
        .map(|&p| {
            let neighbours: Vec<Point2<f64>> = others
                .iter()
                .copied()
                .filter(|o| {
                    let d = (o - p).norm();
                    d > 1e-9 && d < 2.0 * r_out + 1e-9
                })
                .collect();
            let (mut dn, mut ds, mut dmax, mut an, mut asum) = (0usize, 0.0, f64::NEG_INFINITY, 0usize, 0.0);
            for_pixels_near(image, refined, &inv, square_outline(p, r_out), |x, y, b| {
                let d = (b - p).norm();
                let v = image.get(x, y) as f64;
                if d <= r {
                    dn += 1;
                    ds += v;
                    dmax = dmax.max(v);
                } else if (r_in..=r_out).contains(&d) && neighbours.iter().all(|o| (b - o).norm() > d) {
                    an += 1;
                    asum += v;
                }
            });
            if dn == 0 || an == 0 {
                return LedMeasurement {
                    disk_mean: f64::NAN,
                    disk_max: f64::NAN,
                    annulus_mean: f64::NAN,
                    contrast: f64::NAN,
                    margin: t.k_abs,
                    lit: false,
                    ambiguous: true,
                };
            }
            let disk_mean = ds / dn as f64;
            let annulus_mean = asum / an as f64;
            let contrast = disk_mean - annulus_mean;
            let margin = t.k_abs.max(t.k_rel * (dmax - annulus_mean));
            LedMeasurement {
                disk_mean,
                disk_max: dmax,
                annulus_mean,
                contrast,
                margin,
                lit: contrast > margin,
                ambiguous: (contrast - margin).abs() < t.ambiguity * margin,
            }
        })
        .collect()
}

/// Lit/unlit state of every timestamp LED, or `ThresholdAmbiguous` when
/// any LED sits inside the ambiguity band around its margin.
pub fn decode_leds(image: &GrayImage, refined: &Homography, board: &BoardGeometry, t: &Thresholds) -> Result<LedReading, Rejection> {
    let m = measure_leds(image, refined, board, t);
    if m.iter().any(|l| l.ambiguous) {
        return Err(Rejection::ThresholdAmbiguous);
    }
    let mut reading = LedReading::dark();
    for k in 0..RING_LEDS {
        reading.ring[k] = m[k].lit;
    }
    for b in 0..COUNTER_BITS {
        reading.counter_bits[b] = m[RING_LEDS + b].lit;
    }
    Ok(reading)
}

/// Coarse homography and orientation-LED centroid of an infrared frame.
///
/// Bright blobs are thresholded halfway between the image median and
/// maximum. The corners are the largest quadrilateral on the blobs'
/// convex hull; corner 0 is the one whose predicted orientation LED
/// position holds a blob, which must be true for exactly one rotation.
pub fn infrared_bootstrap(image: &GrayImage, board: &BoardGeometry) -> Option<(Homography, Point2<f64>)> {
    let (w, h) = (image.width(), image.height());
    let blurred = image.box_blur3();
    let mut hist = [0usize; 256];
    for &v in blurred.as_raw() {
        hist[v as usize] += 1;
    }
    let mut acc = 0;
    let median = hist.iter().position(|&c| {
        acc += c;
        acc * 2 >= w * h
    })? as f64;
    let max = hist.iter().rposition(|&c| c > 0)? as f64;
    if max - median < CORNER_MIN_CONTRAST {
        return None;
    }
    let thr = median + 0.5 * (max - median);
    let mask: Vec<bool> = blurred.as_raw().iter().map(|&v| v as f64 > thr).collect();
    let blobs: Vec<Point2<f64>> = connected_components(&mask, w, h, 1)
        .iter()
        .map(|comp| {
            let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for &i in comp {
                let wgt = blurred.as_raw()[i] as f64 - thr;
                sw += wgt;
                sx += wgt * (i % w) as f64;
                sy += wgt * (i / w) as f64;
            }
            Point2::new(sx / sw, sy / sw)
        })
        .collect();
    if blobs.len() < 5 {
        return None;
    }
    let hull = convex_hull(&blobs);
    let n = hull.len();
    if n < 4 {
        return None;
    }
    let mut best: Option<([Point2<f64>; 4], f64)> = None;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let q = [hull[a], hull[b], hull[c], hull[d]];
                    let area = polygon_area(&q).abs();
                    if best.is_none_or(|(_, ba)| area > ba) {
                        best = Some((q, area));
                    }
                }
            }
        }
    }
    let (mut quad, _) = best?;
    if polygon_area(&quad).signum() == polygon_area(&board.corners).signum() {
        quad = [quad[0], quad[3], quad[2], quad[1]];
    }
    let tol = 0.25 * board.led_pitch_mm();
    let mut hits = Vec::new();
    for r in 0..4 {
        let dst: [Point2<f64>; 4] = std::array::from_fn(|k| quad[(k + r) % 4]);
        let Ok(hm) = estimate_homography(&board.corners, &dst) else { continue };
        let inv = hm.inverse();
        let found = blobs
            .iter()
            .filter(|b| !dst.iter().any(|q| (*b - q).norm() < 1e-9))
            .find(|b| inv.try_apply(**b).is_some_and(|p| (p - board.orientation_led).norm() <= tol));
        if let Some(b) = found {
            hits.push((hm, *b));
        }
    }
    (hits.len() == 1).then(|| hits[0])
}

/// Runs the full image pipeline on one frame.
pub fn decode_frame(frame_index: usize, image: &GrayImage, board: &BoardGeometry, cfg: &DecoderConfig) -> DecodedFrame {
    DecodedFrame { frame_index, outcome: decode_image(image, board, cfg) }
}

fn decode_image(image: &GrayImage, board: &BoardGeometry, cfg: &DecoderConfig) -> Result<Decoded, Rejected> {
    let reject = |r: Rejection, s: u8| Rejected::new(r, s);
    let image_area = image.area() as f64;
    let (coarse, extra_src, extra_dst): (Homography, Vec<Point2<f64>>, Vec<Point2<f64>>) = match cfg.mode {
        DecoderMode::Visible => {
            let m = detect_marker_with(image, board, &cfg.marker).map_err(|_| reject(Rejection::NoMarker, step::DETECT_MARKER))?;
            if m.area_fraction < cfg.min_marker_fraction {
                return Err(reject(Rejection::MarkerTooSmall, step::DETECT_MARKER));
            }
            let h = estimate_homography(&board.marker_corners, &m.corners).map_err(|_| reject(Rejection::NoMarker, step::COARSE_HOMOGRAPHY))?;
            (h, board.marker_corners.to_vec(), m.corners.to_vec())
        }
        DecoderMode::Infrared => {
            let (h, orientation) = infrared_bootstrap(image, board).ok_or(reject(Rejection::NoMarker, step::DETECT_MARKER))?;
            let marker_px = board.marker_corners.map(|c| h.apply(c));
            if polygon_area(&marker_px).abs() / image_area < cfg.min_marker_fraction {
                return Err(reject(Rejection::MarkerTooSmall, step::DETECT_MARKER));
            }
            (h, vec![board.orientation_led], vec![orientation])
        }
    };
    let corners = locate_corner_leds(image, &coarse, board, cfg.tol_mm).map_err(|_| reject(Rejection::CornerDeviation, step::CORNER_LEDS))?;
    let mut src = board.corners.to_vec();
    src.extend(extra_src);
    let mut dst = corners.to_vec();
    dst.extend(extra_dst);
    let refined = estimate_homography(&src, &dst).map_err(|_| reject(Rejection::CornerDeviation, step::REFINE_HOMOGRAPHY))?;
    let reading = decode_leds(image, &refined, board, &Thresholds::from(cfg)).map_err(|r| reject(r, step::DECODE_LEDS))?;
    let (window, counter, first_lit, last_lit) = window_from_reading(&reading).map_err(|r| reject(r, step::DECODE_LEDS))?;
    Ok(Decoded { window, counter, first_lit, last_lit, homography: Some(refined) })
}
