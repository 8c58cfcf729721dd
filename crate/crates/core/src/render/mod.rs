//! Synthetic LED-clock imagery with known ground truth.
//!
//! Frames are rendered from a board-to-image homography and a real-valued
//! exposure interval on the global timeline. Every LED is drawn as a
//! Gaussian spot whose peak scales linearly with the fraction of its
//! on-time that falls inside the exposure.

mod fiducial;
mod pose;
mod sequence;

pub use fiducial::generate_ftk_sequence;
pub use pose::{board_area_fraction, frontal_pose, random_board_pose, PoseSampler};
pub use sequence::{frame_file_name, render_sequence, write_sequence, BoardPose, FrameTruth, GroundTruthManifest, RenderedFrame};

use nalgebra::Point2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::BoardGeometry;
use crate::clock::{COUNTER_MODULUS, RING_LEDS, REVOLUTION_MS};
use crate::geometry::CameraModel;
use crate::homography::{estimate_homography, Homography};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid capture configuration: {0}")]
    InvalidConfig(String),
    #[error("board pose is degenerate: the board plane crosses the camera horizon")]
    DegeneratePose,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Real-valued exposure interval `[start, end)` on the global timeline (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn shifted(&self, dt: f64) -> Self {
        Self { start: self.start + dt, end: self.end + dt }
    }

    fn overlap(&self, a: f64, b: f64) -> f64 {
        (self.end.min(b) - self.start.max(a)).max(0.0)
    }
}

impl From<[f64; 2]> for TimeInterval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<TimeInterval> for [f64; 2] {
    fn from(w: TimeInterval) -> Self {
        [w.start, w.end]
    }
}

/// Acquisition parameters for synthetic captures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    pub fps: f64,
    pub exposure_ms: f64,
    pub alpha_true: f64,
    pub beta_true: f64,
    /// Extra exposure delay of the bottom image row relative to the top.
    pub rolling_shutter_skew_ms: f64,
    /// Standard deviation of additive Gaussian noise, in gray levels.
    pub noise_sigma: f64,
    /// Background gray level around the board.
    pub ambient: f64,
    /// Gray level of the (matte black) board surface.
    pub board_level: f64,
    /// Gray level of the light marker modules and the marker quiet zone.
    pub marker_light: f64,
    /// Multiplier on the default LED spot size (0.35 x ring pitch).
    pub led_radius_scale: f64,
    /// Infrared rendering: the marker is invisible and the orientation LED
    /// next to corner 0 is lit.
    pub infrared: bool,
    pub seed: u64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            exposure_ms: 8.33,
            alpha_true: 1.0,
            beta_true: 0.0,
            rolling_shutter_skew_ms: 0.0,
            noise_sigma: 0.0,
            ambient: 110.0,
            board_level: 18.0,
            marker_light: 200.0,
            led_radius_scale: 1.0,
            infrared: false,
            seed: 0x5eed,
        }
    }
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidConfig(m));
        if !(10.0..=1000.0).contains(&self.fps) {
            return bad(format!("fps {} outside [10, 1000]", self.fps));
        }
        if !(self.exposure_ms > 0.0 && self.exposure_ms < REVOLUTION_MS as f64) {
            return bad(format!("exposure {} ms outside (0, 100)", self.exposure_ms));
        }
        if self.exposure_ms > 1000.0 / self.fps + 1e-9 {
            return bad(format!("exposure {} ms longer than the frame period at {} fps", self.exposure_ms, self.fps));
        }
        if !(self.alpha_true.is_finite() && self.alpha_true > 0.0 && self.beta_true.is_finite()) {
            return bad("ground-truth time model must have finite alpha > 0".into());
        }
        if !(self.rolling_shutter_skew_ms >= 0.0 && self.rolling_shutter_skew_ms.is_finite()) {
            return bad("rolling shutter skew must be >= 0".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be >= 0".into());
        }
        for (name, v) in [("ambient", self.ambient), ("board_level", self.board_level), ("marker_light", self.marker_light)] {
            if !(0.0..=255.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 255]"));
            }
        }
        if !(self.led_radius_scale > 0.0) {
            return bad("led radius scale must be positive".into());
        }
        Ok(())
    }

    pub fn frame_period_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    pub fn local_ts(&self, frame_index: usize) -> f64 {
        frame_index as f64 * self.frame_period_ms()
    }

    /// Ground-truth exposure of a frame: starts at `alpha * local + beta`.
    pub fn true_window(&self, frame_index: usize) -> TimeInterval {
        let start = self.alpha_true * self.local_ts(frame_index) + self.beta_true;
        TimeInterval::new(start, start + self.exposure_ms)
    }
}

/// Fraction of a millisecond that ring LED `led_index` is lit inside
/// `window`, summed over revolutions and clamped to `[0, 1]`.
pub fn led_brightness(led_index: usize, window: TimeInterval) -> f64 {
    assert!(led_index < RING_LEDS, "ring index out of range");
    if window.is_empty() {
        return 0.0;
    }
    let period = REVOLUTION_MS as f64;
    let k = led_index as f64;
    let first = ((window.start - k - 1.0) / period).floor() as i64;
    let last = ((window.end - k) / period).floor() as i64;
    let lit: f64 = (first..=last)
        .map(|n| {
            let a = n as f64 * period + k;
            window.overlap(a, a + 1.0)
        })
        .sum();
    lit.clamp(0.0, 1.0)
}

/// Time during `window` that the counter shows a value with `bit` set.
fn counter_bit_on_time(bit: usize, window: TimeInterval) -> f64 {
    let period = REVOLUTION_MS as f64;
    let first = (window.start / period).floor() as i64;
    let last = (window.end / period).floor() as i64;
    (first..=last)
        .filter(|n| (n.rem_euclid(COUNTER_MODULUS as i64) >> bit) & 1 == 1)
        .map(|n| window.overlap(n as f64 * period, (n + 1) as f64 * period))
        .sum()
}

/// Counter LEDs are on or off for the whole frame: lit when the bit is set
/// for at least half of the exposure.
pub fn counter_bit_lit(bit: usize, window: TimeInterval) -> bool {
    !window.is_empty() && counter_bit_on_time(bit, window) >= 0.5 * window.len()
}

/// Counter value read off the board with the half-duty rule.
pub fn displayed_counter(window: TimeInterval) -> u16 {
    (0..16).filter(|&b| counter_bit_lit(b, window)).fold(0u16, |acc, b| acc | (1 << b))
}

/// What a board pixel shows before any LED light is added.
#[derive(Clone, Copy)]
enum Surface {
    Background,
    Board,
    MarkerDark,
    MarkerLight,
}

struct BoardPainter {
    to_grid: Homography,
    bits: [[bool; 4]; 4],
    half: f64,
    show_marker: bool,
}

impl BoardPainter {
    fn new(board: &BoardGeometry, show_marker: bool) -> Self {
        let grid = [Point2::new(0.0, 0.0), Point2::new(6.0, 0.0), Point2::new(6.0, 6.0), Point2::new(0.0, 6.0)];
        let to_grid = estimate_homography(&board.marker_corners, &grid).expect("marker corners are a valid quad");
        Self { to_grid, bits: board.marker_bits, half: board.board_size_mm / 2.0, show_marker }
    }

    fn surface(&self, p: Point2<f64>) -> Surface {
        if p.x.abs() > self.half || p.y.abs() > self.half {
            return Surface::Background;
        }
        if !self.show_marker {
            return Surface::Board;
        }
        let g = self.to_grid.apply(p);
        let (u, v) = (g.x, g.y);
        if !(-1.0..=7.0).contains(&u) || !(-1.0..=7.0).contains(&v) {
            return Surface::Board;
        }
        if !(0.0..6.0).contains(&u) || !(0.0..6.0).contains(&v) {
            return Surface::MarkerLight; // quiet zone
        }
        let (col, row) = (u as usize, v as usize);
        if col == 0 || row == 0 || col == 5 || row == 5 {
            return Surface::MarkerDark;
        }
        if self.bits[row - 1][col - 1] {
            Surface::MarkerLight
        } else {
            Surface::MarkerDark
        }
    }
}

/// A light source on the board and how bright it is for a given image row.
struct Spot {
    center: Point2<f64>,
    sigma_mm: f64,
    kind: SpotKind,
}

#[derive(Clone, Copy)]
enum SpotKind {
    Ring(usize),
    CounterBit(usize),
    Always,
}

impl Spot {
    fn brightness(&self, window: TimeInterval) -> f64 {
        match self.kind {
            SpotKind::Ring(k) => led_brightness(k, window),
            SpotKind::CounterBit(b) => counter_bit_lit(b, window) as u8 as f64,
            SpotKind::Always => 1.0,
        }
    }
}

const SUPERSAMPLE: usize = 3;

/// Renders one 8-bit frame.
///
/// `frame_index` only seeds the noise generator, so identical arguments
/// always give identical bytes.
pub fn render_frame(
    board: &BoardGeometry,
    camera: &CameraModel,
    pose: &Homography,
    window: TimeInterval,
    config: &CaptureConfig,
    frame_index: usize,
) -> Result<crate::image::GrayImage, RenderError> {
    let (w, h) = (camera.width, camera.height);
    let half = board.board_size_mm / 2.0;
    let board_corners = [
        Point2::new(-half, half),
        Point2::new(half, half),
        Point2::new(half, -half),
        Point2::new(-half, -half),
    ];
    let mut projected = Vec::with_capacity(4);
    for c in board_corners {
        projected.push(pose.try_apply(c).ok_or(RenderError::DegeneratePose)?);
    }
    let inv = pose.inverse();
    let painter = BoardPainter::new(board, !config.infrared);

    let (bx0, bx1, by0, by1) = pixel_bbox(&projected, w, h);
    let level = |s: Surface| match s {
        Surface::Background => config.ambient,
        Surface::Board | Surface::MarkerDark => config.board_level,
        Surface::MarkerLight => config.marker_light,
    };

    let mut canvas = vec![config.ambient as f32; w * h];
    canvas.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        if y < by0 || y > by1 {
            return;
        }
        for (x, px) in row.iter_mut().enumerate().take(bx1 + 1).skip(bx0) {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let ox = (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let oy = (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let s = match inv.try_apply(Point2::new(x as f64 + ox, y as f64 + oy)) {
                        Some(p) => painter.surface(p),
                        None => Surface::Background,
                    };
                    acc += level(s);
                }
            }
            *px = (acc / (SUPERSAMPLE * SUPERSAMPLE) as f64) as f32;
        }
    });

    let sigma_mm = board.led_radius_mm() * config.led_radius_scale;
    let mut spots: Vec<Spot> = Vec::with_capacity(RING_LEDS + 21);
    spots.extend(board.ring.iter().enumerate().map(|(k, &c)| Spot { center: c, sigma_mm, kind: SpotKind::Ring(k) }));
    spots.extend(board.counter.iter().enumerate().map(|(b, &c)| Spot { center: c, sigma_mm, kind: SpotKind::CounterBit(b) }));
    spots.extend(board.corners.iter().map(|&c| Spot { center: c, sigma_mm, kind: SpotKind::Always }));
    if config.infrared {
        spots.push(Spot { center: board.orientation_led, sigma_mm, kind: SpotKind::Always });
    }

    let gain = 255.0 - config.board_level;
    let skew = config.rolling_shutter_skew_ms;
    let row_window = |y: usize| window.shifted(skew * y as f64 / h as f64);
    let mut glow = vec![0.0f32; w * h];
    for spot in &spots {
        // Skip spots that stay dark for every row.
        let whole = TimeInterval::new(window.start, window.end + skew);
        let possibly_lit = match spot.kind {
            SpotKind::Ring(k) => led_brightness(k, whole) > 0.0,
            _ => true,
        };
        if !possibly_lit {
            continue;
        }
        let reach = 4.0 * spot.sigma_mm;
        let outline: Vec<_> = (0..16)
            .filter_map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 16.0;
                pose.try_apply(spot.center + nalgebra::Vector2::new(a.cos(), a.sin()) * reach * 1.1)
            })
            .collect();
        if outline.len() < 16 {
            continue;
        }
        let (x0, x1, y0, y1) = pixel_bbox(&outline, w, h);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let inv_two_var = 1.0 / (2.0 * spot.sigma_mm * spot.sigma_mm);
        for y in y0..=y1 {
            let b = spot.brightness(row_window(y));
            if b <= 0.0 {
                continue;
            }
            for x in x0..=x1 {
                let Some(p) = inv.try_apply(Point2::new(x as f64, y as f64)) else { continue };
                let d2 = (p - spot.center).norm_squared();
                if d2 > reach * reach {
                    continue;
                }
                glow[y * w + x] += (b * (-d2 * inv_two_var).exp()) as f32;
            }
        }
    }

    let sigma = config.noise_sigma;
    let seed = frame_seed(config.seed, frame_index);
    let mut out = crate::image::GrayImage::new(w, h, 0);
    out.rows_mut().enumerate().collect::<Vec<_>>().into_par_iter().for_each(|(y, row)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
        for (x, px) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let mut v = canvas[i] as f64 + gain * glow[i] as f64;
            if let Some(n) = &normal {
                v += n.sample(&mut rng);
            }
            *px = v.round().clamp(0.0, 255.0) as u8;
        }
    });
    Ok(out)
}

/// Per-frame noise seed derived from the global seed.
pub fn frame_seed(global_seed: u64, frame_index: usize) -> u64 {
    // SplitMix64 finalizer over the combined value.
    let mut z = global_seed ^ (frame_index as u64).wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inclusive pixel bounding box of `pts`, clipped to the image.
fn pixel_bbox(pts: &[Point2<f64>], w: usize, h: usize) -> (usize, usize, usize, usize) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let clip = |v: f64, hi: usize| v.max(0.0).min(hi as f64 - 1.0);
    let (x0, x1) = (clip(x0.floor() - 1.0, w), clip(x1.ceil() + 1.0, w));
    let (y0, y1) = (clip(y0.floor() - 1.0, h), clip(y1.ceil() + 1.0, h));
    if x1 < 0.0 || y1 < 0.0 {
        return (1, 0, 1, 0);
    }
    (x0 as usize, x1 as usize, y0 as usize, y1 as usize)
}
