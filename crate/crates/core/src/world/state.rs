use serde::{Deserialize, Serialize};

use super::dynamics::SimState;
use super::track::{curvature_at, Track};
use super::WorldError;

pub const STATE_DIM: usize = 5;

/// `[e_psi, e_s, K(s + d0), K(s + d1), K(s + d2)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningState(pub [f64; STATE_DIM]);

impl ConditioningState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn e_psi(&self) -> f64 {
        self.0[0]
    }

    pub fn e_s(&self) -> f64 {
        self.0[1]
    }
}

impl AsRef<[f64]> for ConditioningState {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Three strictly increasing, nonnegative preview distances in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lookaheads([f64; 3]);

impl Lookaheads {
    pub fn new(d: [f64; 3]) -> Result<Self, WorldError> {
        if !(d[0] >= 0.0 && d[0] < d[1] && d[1] < d[2]) {
            return Err(WorldError::Config(format!(
                "lookaheads {d:?} must be nonnegative and strictly increasing"
            )));
        }
        Ok(Self(d))
    }

    pub fn distances(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for Lookaheads {
    fn default() -> Self {
        Self([0.2, 0.6, 1.2])
    }
}

impl<'de> Deserialize<'de> for Lookaheads {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = <[f64; 3]>::deserialize(d)?;
        Lookaheads::new(raw).map_err(serde::de::Error::custom)
    }
}

pub fn conditioning_state(state: &SimState, track: &Track, lookaheads: &Lookaheads) -> ConditioningState {
    let [d0, d1, d2] = lookaheads.0;
    ConditioningState([
        state.e_psi,
        state.e_s,
        curvature_at(track, state.s + d0),
        curvature_at(track, state.s + d1),
        curvature_at(track, state.s + d2),
    ])
}
