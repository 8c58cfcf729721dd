//! Cross-stream alignment of 2D point tracks on the global timeline.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    /// Observation of the frame closest in time.
    Nearest,
    /// Linear blend of the two frames around the query.
    Interpolate,
}

impl AlignMode {
    pub fn name(&self) -> &'static str {
        match self {
            AlignMode::Nearest => "nearest",
            AlignMode::Interpolate => "interpolate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackObservation {
    pub frame_index: usize,
    pub point_id: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("duplicate observation of point {point_id} in frame {frame_index}")]
    Duplicate { frame_index: usize, point_id: u32 },
    #[error("non-finite coordinate for point {point_id} in frame {frame_index}")]
    NonFinite { frame_index: usize, point_id: u32 },
    #[error("global timestamps must be strictly increasing")]
    Unordered,
}

/// Observations of one stream indexed by frame and point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Track2D {
    pub stream_id: String,
    points: BTreeMap<(usize, u32), Point2<f64>>,
}

impl Track2D {
    pub fn new(stream_id: impl Into<String>, obs: &[TrackObservation]) -> Result<Self, TrackError> {
        let mut points = BTreeMap::new();
        for o in obs {
            if !(o.x.is_finite() && o.y.is_finite()) {
                return Err(TrackError::NonFinite { frame_index: o.frame_index, point_id: o.point_id });
            }
            if points.insert((o.frame_index, o.point_id), Point2::new(o.x, o.y)).is_some() {
                return Err(TrackError::Duplicate { frame_index: o.frame_index, point_id: o.point_id });
            }
        }
        Ok(Self { stream_id: stream_id.into(), points })
    }

    pub fn get(&self, frame_index: usize, point_id: u32) -> Option<Point2<f64>> {
        self.points.get(&(frame_index, point_id)).copied()
    }

    pub fn point_ids(&self) -> BTreeSet<u32> {
        self.points.keys().map(|&(_, p)| p).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A track together with the global timestamp of each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedTrack {
    pub track: Track2D,
    /// Global time of frame `i` at index `i`.
    pub global_ts: Vec<f64>,
}

impl TimedTrack {
    pub fn new(track: Track2D, global_ts: Vec<f64>) -> Result<Self, TrackError> {
        if global_ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TrackError::Unordered);
        }
        Ok(Self { track, global_ts })
    }

    /// Position of `point_id` at global time `t`, or `None` outside the
    /// stream's span or when a needed observation is missing.
    pub fn sample(&self, point_id: u32, t: f64, mode: AlignMode) -> Option<Point2<f64>> {
        let ts = &self.global_ts;
        let (first, last) = (*ts.first()?, *ts.last()?);
        if !(t >= first && t <= last) {
            return None;
        }
        // Index of the last frame at or before t.
        let i = ts.partition_point(|&g| g <= t) - 1;
        if ts[i] == t {
            return self.track.get(i, point_id);
        }
        let j = i + 1;
        match mode {
            AlignMode::Nearest => {
                let k = if t - ts[i] <= ts[j] - t { i } else { j };
                self.track.get(k, point_id)
            }
            AlignMode::Interpolate => {
                let (a, b) = (self.track.get(i, point_id)?, self.track.get(j, point_id)?);
                let w = (t - ts[i]) / (ts[j] - ts[i]);
                Some(Point2::from(a.coords * (1.0 - w) + b.coords * w))
            }
        }
    }
}

/// One output row: a stream's estimate of a point at a query time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPoint {
    pub query_ms: f64,
    pub stream_id: String,
    pub point_id: u32,
    pub x: f64,
    pub y: f64,
    pub mode: AlignMode,
}

/// Evaluates every stream at every query time.
///
/// The result is indexed `[stream][query]`; each entry maps point ids to
/// positions and omits points the stream cannot provide at that time.
pub fn align_tracks(streams: &[TimedTrack], query_times: &[f64], mode: AlignMode) -> Vec<Vec<BTreeMap<u32, Point2<f64>>>> {
    streams
        .iter()
        .map(|s| {
            let ids = s.track.point_ids();
            query_times
                .iter()
                .map(|&t| ids.iter().filter_map(|&id| s.sample(id, t, mode).map(|p| (id, p))).collect())
                .collect()
        })
        .collect()
}

/// Flattens [`align_tracks`] output into rows ordered by query, stream and point.
pub fn aligned_rows(streams: &[TimedTrack], query_times: &[f64], mode: AlignMode) -> Vec<AlignedPoint> {
    let grid = align_tracks(streams, query_times, mode);
    let mut rows = Vec::new();
    for (q, &t) in query_times.iter().enumerate() {
        for (s, stream) in streams.iter().enumerate() {
            for (&id, p) in &grid[s][q] {
                rows.push(AlignedPoint { query_ms: t, stream_id: stream.track.stream_id.clone(), point_id: id, x: p.x, y: p.y, mode });
            }
        }
    }
    rows
}
