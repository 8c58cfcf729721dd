//! Physical layout of the LED clock board.
//!
//! Coordinates are millimetres in the board plane, origin at the board
//! centre, `x` to the right and `y` up when the board is viewed from the
//! front. The renderer, the image decoder and the 3D decoder all read the
//! same [`BoardGeometry`], so the exact layout only has to be consistent,
//! not physically faithful.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{COUNTER_BITS, RING_LEDS};

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("{field}: expected {expected} points, found {found}")]
    Count { field: &'static str, expected: usize, found: usize },
    #[error("marker_bits must hold 16 values of 0 or 1")]
    MarkerBits,
    #[error("marker code is symmetric under a rotation or reflection")]
    SymmetricMarker,
    #[error("ring LEDs {0} and {1} coincide")]
    DuplicateRing(usize, usize),
    #[error("ring LEDs {0} and {1} are adjacent in time but not neighbours on the board")]
    RingOrder(usize, usize),
    #[error("{0} contains collinear points")]
    Collinear(&'static str),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A 4x4 marker code stored row-major, row 0 at the top of the marker.
/// `true` is a light module.
pub type MarkerCode = [[bool; 4]; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoardFile", into = "BoardFile")]
pub struct BoardGeometry {
    /// Ring LEDs; index `k` is lit during millisecond `k` of each revolution.
    pub ring: Vec<Point2<f64>>,
    /// Counter LEDs, least significant bit first.
    pub counter: Vec<Point2<f64>>,
    /// Corner LEDs in the order top-left, top-right, bottom-right, bottom-left.
    pub corners: [Point2<f64>; 4],
    /// Outer corners of the marker, same order as `corners`.
    pub marker_corners: [Point2<f64>; 4],
    pub marker_bits: MarkerCode,
    /// Extra always-on infrared LED next to corner 0. Only visible to IR
    /// sensors; it breaks the four-fold symmetry of the corner square.
    pub orientation_led: Point2<f64>,
    pub board_size_mm: f64,
}

/// On-disk layout of the board geometry JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoardFile {
    ring: Vec<[f64; 2]>,
    counter: Vec<[f64; 2]>,
    corners: Vec<[f64; 2]>,
    marker_corners: Vec<[f64; 2]>,
    marker_bits: Vec<u8>,
    board_size_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    orientation_led: Option<[f64; 2]>,
}

const DEFAULT_MARKER_CODE: MarkerCode = [
    [true, false, true, true],
    [false, true, false, false],
    [true, true, true, false],
    [false, false, true, false],
];

impl Default for BoardGeometry {
    fn default() -> Self {
        let ring_radius = 100.0;
        let ring = (0..RING_LEDS)
            .map(|k| {
                let theta = FRAC_PI_2 - TAU * k as f64 / RING_LEDS as f64;
                Point2::new(ring_radius * theta.cos(), ring_radius * theta.sin())
            })
            .collect();
        // Bit 0 sits at the right end so the most significant bit reads leftmost.
        let pitch = 187.5 / (COUNTER_BITS - 1) as f64;
        let counter = (0..COUNTER_BITS)
            .map(|i| Point2::new(93.75 - pitch * i as f64, -115.0))
            .collect();
        let c = 115.0;
        let m = 30.0;
        Self {
            ring,
            counter,
            corners: [Point2::new(-c, c), Point2::new(c, c), Point2::new(c, -c), Point2::new(-c, -c)],
            marker_corners: [Point2::new(-m, m), Point2::new(m, m), Point2::new(m, -m), Point2::new(-m, -m)],
            marker_bits: DEFAULT_MARKER_CODE,
            orientation_led: Point2::new(-c, c - 25.0),
            board_size_mm: 250.0,
        }
    }
}

impl BoardGeometry {
    pub fn from_json_str(s: &str) -> Result<Self, BoardError> {
        let file: BoardFile = serde_json::from_str(s)?;
        Self::try_from(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BoardError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("board geometry serializes")
    }

    /// Mean spacing between consecutive ring LEDs.
    pub fn led_pitch_mm(&self) -> f64 {
        let n = self.ring.len();
        let total: f64 = (0..n).map(|k| (self.ring[(k + 1) % n] - self.ring[k]).norm()).sum();
        total / n as f64
    }

    /// Radius of the disk sampled (and rendered) for each LED.
    pub fn led_radius_mm(&self) -> f64 {
        0.35 * self.led_pitch_mm()
    }

    /// Side length of one marker module (the marker is 6x6 modules
    /// including its dark border).
    pub fn marker_module_mm(&self) -> f64 {
        (self.marker_corners[1] - self.marker_corners[0]).norm() / 6.0
    }

    /// Maps marker grid coordinates to the board plane. `(u, v)` run from
    /// `(0, 0)` at the top-left marker corner to `(6, 6)` at the
    /// bottom-right; values outside that range address the quiet zone.
    pub fn marker_grid_point(&self, u: f64, v: f64) -> Point2<f64> {
        let [tl, tr, br, bl] = self.marker_corners;
        let (s, t) = (u / 6.0, v / 6.0);
        let top = tl.coords * (1.0 - s) + tr.coords * s;
        let bottom = bl.coords * (1.0 - s) + br.coords * s;
        Point2::from(top * (1.0 - t) + bottom * t)
    }

    /// All 116 timestamp LEDs: ring first, then counter.
    pub fn timestamp_leds(&self) -> impl Iterator<Item = Point2<f64>> + '_ {
        self.ring.iter().chain(self.counter.iter()).copied()
    }

    pub fn validate(&self) -> Result<(), BoardError> {
        check_count("ring", RING_LEDS, self.ring.len())?;
        check_count("counter", COUNTER_BITS, self.counter.len())?;
        let all = self
            .ring
            .iter()
            .chain(&self.counter)
            .chain(&self.corners)
            .chain(&self.marker_corners)
            .chain(std::iter::once(&self.orientation_led));
        if all.clone().any(|p| !p.x.is_finite() || !p.y.is_finite()) || !self.board_size_mm.is_finite() {
            return Err(BoardError::NonFinite("board geometry"));
        }
        let n = self.ring.len();
        let pitch = self.led_pitch_mm();
        for i in 0..n {
            let next = (i + 1) % n;
            if (self.ring[next] - self.ring[i]).norm() > 1.5 * pitch {
                return Err(BoardError::RingOrder(i, next));
            }
            for j in i + 1..n {
                if (self.ring[j] - self.ring[i]).norm() < 1e-6 {
                    return Err(BoardError::DuplicateRing(i, j));
                }
            }
        }
        if has_collinear_triple(&self.corners) {
            return Err(BoardError::Collinear("corners"));
        }
        if has_collinear_triple(&self.marker_corners) {
            return Err(BoardError::Collinear("marker_corners"));
        }
        if !is_chiral(&self.marker_bits) {
            return Err(BoardError::SymmetricMarker);
        }
        Ok(())
    }
}

fn check_count(field: &'static str, expected: usize, found: usize) -> Result<(), BoardError> {
    if expected == found {
        Ok(())
    } else {
        Err(BoardError::Count { field, expected, found })
    }
}

fn has_collinear_triple(pts: &[Point2<f64>; 4]) -> bool {
    let scale = pts.iter().map(|p| p.coords.norm()).fold(1.0, f64::max);
    (0..4).any(|skip| {
        let tri: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| pts[i]).collect();
        let cross = (tri[1] - tri[0]).perp(&(tri[2] - tri[0]));
        cross.abs() < 1e-9 * scale * scale
    })
}

/// Rotates a code by 90 degrees clockwise.
pub fn rotate_code(code: &MarkerCode) -> MarkerCode {
    let mut out = [[false; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = code[3 - c][r];
        }
    }
    out
}

fn mirror_code(code: &MarkerCode) -> MarkerCode {
    let mut out = *code;
    for row in out.iter_mut() {
        row.reverse();
    }
    out
}

/// True when no non-trivial rotation or reflection maps the code onto itself.
pub fn is_chiral(code: &MarkerCode) -> bool {
    let mut variant = *code;
    for r in 0..4 {
        if r > 0 && variant == *code {
            return false;
        }
        if mirror_code(&variant) == *code {
            return false;
        }
        variant = rotate_code(&variant);
    }
    true
}

impl TryFrom<BoardFile> for BoardGeometry {
    type Error = BoardError;

    fn try_from(f: BoardFile) -> Result<Self, Self::Error> {
        let to_pts = |v: &[[f64; 2]]| v.iter().map(|p| Point2::new(p[0], p[1])).collect::<Vec<_>>();
        check_count("corners", 4, f.corners.len())?;
        check_count("marker_corners", 4, f.marker_corners.len())?;
        if f.marker_bits.len() != 16 || f.marker_bits.iter().any(|&b| b > 1) {
            return Err(BoardError::MarkerBits);
        }
        let mut bits = [[false; 4]; 4];
        for (i, b) in f.marker_bits.iter().enumerate() {
            bits[i / 4][i % 4] = *b == 1;
        }
        let corners = to_pts(&f.corners);
        let marker_corners = to_pts(&f.marker_corners);
        let orientation_led = match f.orientation_led {
            Some(p) => Point2::new(p[0], p[1]),
            None => {
                // Default placement: 25 mm from corner 0 towards corner 3.
                let dir = (corners[3] - corners[0]).normalize();
                corners[0] + dir * 25.0
            }
        };
        let geometry = BoardGeometry {
            ring: to_pts(&f.ring),
            counter: to_pts(&f.counter),
            corners: [corners[0], corners[1], corners[2], corners[3]],
            marker_corners: [marker_corners[0], marker_corners[1], marker_corners[2], marker_corners[3]],
            marker_bits: bits,
            orientation_led,
            board_size_mm: f.board_size_mm,
        };
        geometry.validate()?;
        Ok(geometry)
    }
}

impl From<BoardGeometry> for BoardFile {
    fn from(b: BoardGeometry) -> Self {
        let to_arr = |v: &[Point2<f64>]| v.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>();
        BoardFile {
            ring: to_arr(&b.ring),
            counter: to_arr(&b.counter),
            corners: to_arr(&b.corners),
            marker_corners: to_arr(&b.marker_corners),
            marker_bits: b.marker_bits.iter().flatten().map(|&v| v as u8).collect(),
            board_size_mm: b.board_size_mm,
            orientation_led: Some([b.orientation_led.x, b.orientation_led.y]),
        }
    }
}
