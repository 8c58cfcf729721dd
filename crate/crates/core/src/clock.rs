//! Time encoding of the LED clock and the local/global time model.
//!
//! The ring has 100 LEDs; exactly one is lit at a time and the lit position
//! advances every millisecond. A 16-bit binary counter increments each time
//! the ring completes a revolution, so a full clock state identifies a
//! millisecond within a span of 65536 x 100 ms (about 109.2 minutes).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of LEDs on the ring (one per millisecond).
pub const RING_LEDS: usize = 100;
/// Number of binary counter LEDs.
pub const COUNTER_BITS: usize = 16;
/// Duration of one ring revolution in milliseconds.
pub const REVOLUTION_MS: u64 = RING_LEDS as u64;
/// Number of distinct counter values.
pub const COUNTER_MODULUS: u64 = 1 << COUNTER_BITS;
/// Total encodable span before the clock wraps, in milliseconds.
pub const CLOCK_PERIOD_MS: u64 = COUNTER_MODULUS * REVOLUTION_MS;

/// Sanity bounds on fitted drift factors.
pub const MIN_FITTED_ALPHA: f64 = 0.9;
pub const MAX_FITTED_ALPHA: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClockError {
    #[error("lit run {first}..{last} wraps past the counter boundary")]
    CounterBoundary { first: u8, last: u8 },
    #[error("ring index {0} out of range")]
    RingIndex(u8),
    #[error("drift factor {0} must be positive and finite")]
    InvalidAlpha(f64),
    #[error("offset {0} must be finite")]
    InvalidBeta(f64),
}

/// Instantaneous LED state of the clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClockState {
    /// Completed 100 ms revolutions, modulo 2^16.
    pub counter: u16,
    /// Index of the currently lit ring LED, in `0..100`.
    pub ring_index: u8,
}

/// Encodes a global millisecond timestamp as the LED state shown at that time.
pub fn encode_clock_state(t_ms: u64) -> ClockState {
    ClockState {
        counter: ((t_ms / REVOLUTION_MS) % COUNTER_MODULUS) as u16,
        ring_index: (t_ms % REVOLUTION_MS) as u8,
    }
}

/// Decoded exposure interval of one frame on the global timeline.
///
/// Both endpoints are inclusive integer milliseconds: `start_ms` is the
/// millisecond of the first lit ring LED, `end_ms` that of the last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExposureWindow {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl ExposureWindow {
    pub fn new(start_ms: u64, end_ms: u64) -> Option<Self> {
        (start_ms <= end_ms && end_ms - start_ms < REVOLUTION_MS)
            .then_some(Self { start_ms, end_ms })
    }

    /// Number of lit ring LEDs minus one, i.e. the arc length in ms.
    pub fn span_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// Combines the counter reading with the first and last lit ring LEDs.
pub fn decode_window(counter: u16, first_lit: u8, last_lit: u8) -> Result<ExposureWindow, ClockError> {
    if first_lit as usize >= RING_LEDS {
        return Err(ClockError::RingIndex(first_lit));
    }
    if last_lit as usize >= RING_LEDS {
        return Err(ClockError::RingIndex(last_lit));
    }
    if last_lit < first_lit {
        return Err(ClockError::CounterBoundary { first: first_lit, last: last_lit });
    }
    let base = counter as u64 * REVOLUTION_MS;
    Ok(ExposureWindow { start_ms: base + first_lit as u64, end_ms: base + last_lit as u64 })
}

/// Linear map from a camera's local clock to the global clock:
/// `global = alpha * local + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    /// Drift factor (dimensionless).
    pub alpha: f64,
    /// Offset in milliseconds.
    pub beta: f64,
}

impl TimeModel {
    pub const IDENTITY: TimeModel = TimeModel { alpha: 1.0, beta: 0.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self, ClockError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ClockError::InvalidAlpha(alpha));
        }
        if !beta.is_finite() {
            return Err(ClockError::InvalidBeta(beta));
        }
        Ok(Self { alpha, beta })
    }

    pub fn local_to_global(&self, local_ms: f64) -> f64 {
        local_to_global(self, local_ms)
    }

    pub fn global_to_local(&self, global_ms: f64) -> f64 {
        (global_ms - self.beta) / self.alpha
    }

    /// Whether the drift lies inside the range accepted from fitting.
    pub fn is_plausible(&self) -> bool {
        (MIN_FITTED_ALPHA..=MAX_FITTED_ALPHA).contains(&self.alpha)
    }
}

pub fn local_to_global(model: &TimeModel, local_ms: f64) -> f64 {
    model.alpha * local_ms + model.beta
}

/// One clock observation: a frame's local timestamp paired with the decoded
/// start of its exposure on the global timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub local_ts: f64,
    pub global_start: f64,
}

impl Sample {
    pub fn new(local_ts: f64, global_start: f64) -> Self {
        Self { local_ts, global_start }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_counter_12_arc_40_57() {
        assert_eq!(encode_clock_state(1240), ClockState { counter: 12, ring_index: 40 });
        assert_eq!(encode_clock_state(0), ClockState { counter: 0, ring_index: 0 });
    }

    #[test]
    fn encode_wraps_after_full_counter_span() {
        assert_eq!(CLOCK_PERIOD_MS, 6_553_600);
        assert_eq!(encode_clock_state(6_553_600), ClockState { counter: 0, ring_index: 0 });
        assert_eq!(encode_clock_state(6_553_599), ClockState { counter: 65535, ring_index: 99 });
    }

    #[test]
    fn decode_window_examples() {
        assert_eq!(decode_window(12, 40, 57).unwrap(), ExposureWindow { start_ms: 1240, end_ms: 1257 });
        assert_eq!(decode_window(0, 0, 0).unwrap(), ExposureWindow { start_ms: 0, end_ms: 0 });
        assert_eq!(
            decode_window(5, 98, 2),
            Err(ClockError::CounterBoundary { first: 98, last: 2 })
        );
        assert!(decode_window(1, 100, 100).is_err());
    }

    #[test]
    fn local_to_global_examples() {
        let id = TimeModel::new(1.0, 0.0).unwrap();
        assert_eq!(id.local_to_global(500.0), 500.0);
        let offset = TimeModel::new(1.0, 5000.0).unwrap();
        assert_eq!(offset.local_to_global(1000.0), 6000.0);
        let drift = TimeModel::new(1.0001, 5000.0).unwrap();
        assert!((drift.local_to_global(600_000.0) - 605_060.0).abs() < 1e-6);
    }

    #[test]
    fn model_rejects_non_positive_alpha() {
        assert!(TimeModel::new(0.0, 0.0).is_err());
        assert!(TimeModel::new(-1.0, 0.0).is_err());
        assert!(TimeModel::new(f64::NAN, 0.0).is_err());
        assert!(TimeModel::new(1.0, f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn single_instant_round_trip(t in 0u64..CLOCK_PERIOD_MS) {
            let s = encode_clock_state(t);
            let w = decode_window(s.counter, s.ring_index, s.ring_index).unwrap();
            prop_assert_eq!(w, ExposureWindow { start_ms: t, end_ms: t });
        }

        #[test]
        fn local_to_global_is_increasing(alpha in 0.5f64..2.0, beta in -1e6f64..1e6, t in -1e7f64..1e7, dt in 1e-3f64..1e3) {
            let m = TimeModel::new(alpha, beta).unwrap();
            prop_assert!(m.local_to_global(t + dt) > m.local_to_global(t));
        }

        #[test]
        fn inverse_recovers_local(alpha in 0.9f64..1.1, beta in -1e6f64..1e6, t in -1e7f64..1e7) {
            let m = TimeModel::new(alpha, beta).unwrap();
            let back = m.global_to_local(m.local_to_global(t));
            prop_assert!((back - t).abs() <= 1e-9 * t.abs().max(1.0) + 1e-9 * beta.abs());
        }
    }
}
