use serde::{Deserialize, Serialize};

use super::track::{curvature_at, Track};
use super::WorldError;

/// Frenet-frame vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub s: f64,
    pub e_s: f64,
    pub e_psi: f64,
    pub v_long: f64,
    /// Always zero under the kinematic model.
    pub v_tran: f64,
}

impl SimState {
    pub fn on_centerline(s: f64, v_long: f64) -> Self {
        Self { s, e_s: 0.0, e_psi: 0.0, v_long, v_tran: 0.0 }
    }

    pub fn on_track(&self, track: &Track) -> bool {
        self.e_s.abs() <= track.half_width()
            && 1.0 - self.e_s * curvature_at(track, self.s) > 0.0
            && self.e_psi.abs() < std::f64::consts::FRAC_PI_2
    }
}

/// Throttle and steering, both clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub u_a: f64,
    pub u_steer: f64,
}

impl Action {
    pub fn new(u_a: f64, u_steer: f64) -> Self {
        Self { u_a: u_a.clamp(-1.0, 1.0), u_steer: u_steer.clamp(-1.0, 1.0) }
    }

    pub fn zero() -> Self {
        Self { u_a: 0.0, u_steer: 0.0 }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.u_a, self.u_steer]
    }

    /// Squared Euclidean distance; at most 8 inside the action box.
    pub fn distance(self, other: Action) -> f64 {
        let da = self.u_a - other.u_a;
        let ds = self.u_steer - other.u_steer;
        da * da + ds * ds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// seconds
    pub dt: f64,
    /// meters
    pub wheelbase: f64,
    /// m/s²
    pub a_max: f64,
    /// 1/s
    pub c_drag: f64,
    /// radians
    pub delta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { dt: 0.05, wheelbase: 0.3, a_max: 2.0, c_drag: 0.1, delta_max: 0.35 }
    }
}

/// One explicit-Euler step of the kinematic bicycle in the Frenet frame.
pub fn step_dynamics(
    state: &SimState,
    action: Action,
    dt: f64,
    vehicle: &VehicleParams,
    track: &Track,
) -> Result<SimState, WorldError> {
    assert!(dt > 0.0, "dt must be positive");
    let action = Action::new(action.u_a, action.u_steer);
    let k = curvature_at(track, state.s);
    let denom = 1.0 - state.e_s * k;
    if denom <= 0.0 {
        return Err(WorldError::SingularGeometry { s: state.s, e_s: state.e_s, curvature: k });
    }
    let v = state.v_long;
    let s_dot = v * state.e_psi.cos() / denom;
    let e_s_dot = v * state.e_psi.sin();
    let e_psi_dot = v / vehicle.wheelbase * (vehicle.delta_max * action.u_steer).tan() - k * s_dot;
    let v_dot = vehicle.a_max * action.u_a - vehicle.c_drag * v;
    Ok(SimState {
        s: track.wrap(state.s + dt * s_dot),
        e_s: state.e_s + dt * e_s_dot,
        e_psi: state.e_psi + dt * e_psi_dot,
        v_long: v + dt * v_dot,
        v_tran: 0.0,
    })
}
