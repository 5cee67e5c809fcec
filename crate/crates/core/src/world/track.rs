use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// meters
    pub length: f64,
    /// 1/meters, positive turns left
    pub curvature: f64,
}

/// Closed loop of constant-curvature segments.
///
/// A query at a segment boundary returns the curvature of the segment that
/// starts there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TrackWire", try_from = "TrackWire")]
pub struct Track {
    segments: Vec<Segment>,
    /// cumulative start position of each segment
    starts: Vec<f64>,
    total_length: f64,
    half_width: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackWire {
    segments: Vec<Segment>,
    half_width: f64,
}

impl From<Track> for TrackWire {
    fn from(t: Track) -> Self {
        Self { segments: t.segments, half_width: t.half_width }
    }
}

impl TryFrom<TrackWire> for Track {
    type Error = WorldError;

    fn try_from(w: TrackWire) -> Result<Self, WorldError> {
        Track::new(w.segments, w.half_width)
    }
}

impl Track {
    pub fn new(segments: Vec<Segment>, half_width: f64) -> Result<Self, WorldError> {
        if segments.is_empty() {
            return Err(WorldError::Config("track has no segments".into()));
        }
        if let Some(i) = segments.iter().position(|s| !(s.length > 0.0) || !s.curvature.is_finite()) {
            return Err(WorldError::Config(format!("segment {i} has nonpositive length")));
        }
        if !(half_width > 0.0) {
            return Err(WorldError::Config("track half-width must be positive".into()));
        }
        let turning: f64 = segments.iter().map(|s| s.length * s.curvature).sum();
        let laps = (turning / (2.0 * PI)).round();
        if (turning - laps * 2.0 * PI).abs() > 1e-6 || laps == 0.0 {
            return Err(WorldError::Config(format!(
                "curvature integrates to {turning:.6} rad, not a nonzero multiple of 2π"
            )));
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for s in &segments {
            starts.push(acc);
            acc += s.length;
        }
        Ok(Self { segments, starts, total_length: acc, half_width })
    }

    /// Rounded-rectangle loop with an S-bend on both long sides, about 28.4 m.
    pub fn default_loop() -> Self {
        let corner = Segment { length: 0.75 * PI, curvature: 2.0 / 3.0 };
        let s_side = [
            Segment { length: 1.5, curvature: 0.0 },
            Segment { length: 1.0, curvature: 0.5 },
            Segment { length: 2.0, curvature: -0.5 },
            Segment { length: 1.0, curvature: 0.5 },
            Segment { length: 1.5, curvature: 0.0 },
        ];
        let short = Segment { length: 2.5, curvature: 0.0 };
        let mut segs = Vec::new();
        for _ in 0..2 {
            segs.extend_from_slice(&s_side);
            segs.push(corner);
            segs.push(short);
            segs.push(corner);
        }
        Self::new(segs, 0.4).expect("default track is closed")
    }

    /// Single-segment circle of radius `radius`.
    pub fn circle(radius: f64, half_width: f64) -> Result<Self, WorldError> {
        Self::new(vec![Segment { length: 2.0 * PI * radius, curvature: 1.0 / radius }], half_width)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Wraps any real arc position into `[0, total_length)`.
    pub fn wrap(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.total_length);
        // rem_euclid can return total_length itself for tiny negative inputs
        if w >= self.total_length {
            0.0
        } else {
            w
        }
    }

    pub fn segment_index(&self, s: f64) -> usize {
        let s = self.wrap(s);
        // last start <= s
        match self.starts.binary_search_by(|st| st.partial_cmp(&s).expect("finite")) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Shortest signed arc distance from `b` to `a` on the loop.
    pub fn arc_distance(&self, a: f64, b: f64) -> f64 {
        let l = self.total_length;
        let d = (a - b).rem_euclid(l);
        if d > l / 2.0 {
            d - l
        } else {
            d
        }
    }

    /// Centerline pose `(x, y, heading)` at arc position `s`, integrating each
    /// constant-curvature segment in closed form from the origin.
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let s = self.wrap(s);
        let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
        for (seg, &start) in self.segments.iter().zip(&self.starts) {
            if start >= s {
                break;
            }
            let len = (s - start).min(seg.length);
            let k = seg.curvature;
            if k.abs() < 1e-12 {
                x += len * heading.cos();
                y += len * heading.sin();
            } else {
                let h1 = heading + k * len;
                x += (h1.sin() - heading.sin()) / k;
                y -= (h1.cos() - heading.cos()) / k;
                heading = h1;
            }
        }
        (x, y, heading)
    }

    /// Centerline polyline `(x, y)` sampled roughly every `step` meters,
    /// closing back on the start point.
    pub fn centerline(&self, step: f64) -> Vec<(f64, f64)> {
        let n = (self.total_length / step).ceil().max(1.0) as usize;
        let mut pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let (x, y, _) = self.pose_at(i as f64 * self.total_length / n as f64);
                (x, y)
            })
            .collect();
        let (x, y, _) = self.pose_at_end();
        pts.push((x, y));
        pts
    }

    fn pose_at_end(&self) -> (f64, f64, f64) {
        // pose_at wraps total_length to 0, so integrate the whole loop here
        let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
        for seg in &self.segments {
            let k = seg.curvature;
            if k.abs() < 1e-12 {
                x += seg.length * heading.cos();
                y += seg.length * heading.sin();
            } else {
                let h1 = heading + k * seg.length;
                x += (h1.sin() - heading.sin()) / k;
                y -= (h1.cos() - heading.cos()) / k;
                heading = h1;
            }
        }
        (x, y, heading)
    }

    /// World-frame position of a Frenet point `(s, e_s)`; `e_s > 0` is left.
    pub fn to_cartesian(&self, s: f64, e_s: f64) -> (f64, f64) {
        let (x, y, h) = self.pose_at(s);
        (x - e_s * h.sin(), y + e_s * h.cos())
    }
}

/// Piecewise-constant curvature at arc position `s` (taken modulo the loop).
pub fn curvature_at(track: &Track, s: f64) -> f64 {
    track.segments[track.segment_index(s)].curvature
}
