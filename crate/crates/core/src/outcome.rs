//! Per-frame decode results shared by the image and 3D pipelines.

use serde::{Deserialize, Serialize};

use crate::clock::{decode_window, ExposureWindow, COUNTER_BITS, RING_LEDS};
use crate::homography::Homography;

/// Why a frame produced no timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rejection {
    NoMarker,
    MarkerTooSmall,
    CornerDeviation,
    NoSector,
    MultipleSectors,
    CounterBoundary,
    ThresholdAmbiguous,
}

impl Rejection {
    pub const ALL: [Rejection; 7] = [
        Rejection::NoMarker,
        Rejection::MarkerTooSmall,
        Rejection::CornerDeviation,
        Rejection::NoSector,
        Rejection::MultipleSectors,
        Rejection::CounterBoundary,
        Rejection::ThresholdAmbiguous,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Rejection::NoMarker => "NoMarker",
            Rejection::MarkerTooSmall => "MarkerTooSmall",
            Rejection::CornerDeviation => "CornerDeviation",
            Rejection::NoSector => "NoSector",
            Rejection::MultipleSectors => "MultipleSectors",
            Rejection::CounterBoundary => "CounterBoundary",
            Rejection::ThresholdAmbiguous => "ThresholdAmbiguous",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pipeline step numbers reported with rejections.
pub mod step {
    pub const DETECT_MARKER: u8 = 1;
    pub const COARSE_HOMOGRAPHY: u8 = 2;
    pub const CORNER_LEDS: u8 = 3;
    pub const REFINE_HOMOGRAPHY: u8 = 4;
    pub const DECODE_LEDS: u8 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rejected {
    pub reason: Rejection,
    pub step: u8,
}

impl Rejected {
    pub fn new(reason: Rejection, step: u8) -> Self {
        Self { reason, step }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub window: ExposureWindow,
    pub counter: u16,
    pub first_lit: u8,
    pub last_lit: u8,
    /// Refined board-to-image homography; absent for 3D input.
    pub homography: Option<Homography>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFrame {
    pub frame_index: usize,
    pub outcome: Result<Decoded, Rejected>,
}

impl DecodedFrame {
    pub fn window(&self) -> Option<ExposureWindow> {
        self.outcome.as_ref().ok().map(|d| d.window)
    }

    pub fn to_line(&self, local_ts: Option<f64>) -> DecodedLine {
        match &self.outcome {
            Ok(d) => DecodedLine {
                frame: self.frame_index,
                local_ts,
                window: Some([d.window.start_ms, d.window.end_ms]),
                reject: None,
                step: None,
            },
            Err(r) => DecodedLine {
                frame: self.frame_index,
                local_ts,
                window: None,
                reject: Some(r.reason.name().to_string()),
                step: Some(r.step),
            },
        }
    }
}

/// JSON-lines record of one decoded frame:
/// `{"frame": i, "window": [s, e]}` or `{"frame": i, "reject": "...", "step": n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodedLine {
    pub frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_ts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[u64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u8>,
}

impl DecodedLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decoded line serializes")
    }
}

/// Lit/unlit state of the 116 timestamp LEDs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedReading {
    pub ring: [bool; RING_LEDS],
    pub counter_bits: [bool; COUNTER_BITS],
}

impl LedReading {
    pub fn dark() -> Self {
        Self { ring: [false; RING_LEDS], counter_bits: [false; COUNTER_BITS] }
    }

    pub fn counter(&self) -> u16 {
        self.counter_bits.iter().enumerate().filter(|(_, &b)| b).fold(0, |acc, (i, _)| acc | (1 << i))
    }

    pub fn lit_ring(&self) -> Vec<u8> {
        (0..RING_LEDS).filter(|&k| self.ring[k]).map(|k| k as u8).collect()
    }
}

/// First and last LED of the single lit arc.
///
/// The arc must be one run in circular order that does not pass from
/// index 99 to index 0. A fully lit ring has no start and is `NoSector`.
pub fn find_sector(ring: &[bool; RING_LEDS]) -> Result<(u8, u8), Rejection> {
    let n = RING_LEDS;
    let starts: Vec<usize> = (0..n).filter(|&k| ring[k] && !ring[(k + n - 1) % n]).collect();
    match starts.len() {
        0 => Err(Rejection::NoSector),
        1 => {
            let first = starts[0];
            let mut last = first;
            while ring[(last + 1) % n] {
                last = (last + 1) % n;
            }
            if last < first {
                Err(Rejection::CounterBoundary)
            } else {
                Ok((first as u8, last as u8))
            }
        }
        _ => Err(Rejection::MultipleSectors),
    }
}

/// Turns an LED reading into a window or a sector rejection.
pub fn window_from_reading(reading: &LedReading) -> Result<(ExposureWindow, u16, u8, u8), Rejection> {
    let (first, last) = find_sector(&reading.ring)?;
    let counter = reading.counter();
    let window = decode_window(counter, first, last).map_err(|_| Rejection::CounterBoundary)?;
    Ok((window, counter, first, last))
}
