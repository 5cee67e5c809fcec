use serde::{Deserialize, Serialize};

use super::dynamics::{Action, SimState};
use super::track::{curvature_at, Track};

/// Hidden state of the PID expert: integrals and the previous lateral error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpertState {
    pub integral_e_s: f64,
    pub integral_v_err: f64,
    pub prev_e_s: f64,
    pub primed: bool,
}

/// Where a label request comes from. Experts ignore it; instrumented
/// experts in tests use it to audit which domains request labels.
#[derive(Debug, Clone, Copy)]
pub struct QueryContext<'a> {
    pub domain_id: &'a str,
}

/// Black-box expert: full state plus its own hidden history in, action out.
pub trait Expert: Sync {
    fn initial_state(&self) -> ExpertState {
        ExpertState::default()
    }

    fn act(
        &self,
        ctx: QueryContext<'_>,
        state: &SimState,
        hidden: &ExpertState,
        track: &Track,
    ) -> (Action, ExpertState);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub k_psi: f64,
    pub k_ff: f64,
    pub v_ref: f64,
    pub kp_v: f64,
    pub ki_v: f64,
    /// anti-windup bound on the lateral integral, m·s
    pub integral_limit: f64,
    /// anti-windup bound on the speed integral, m
    pub speed_integral_limit: f64,
    pub dt: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 2.2,
            ki: 0.2,
            kd: 0.3,
            k_psi: 2.2,
            k_ff: 0.86,
            v_ref: 1.5,
            kp_v: 1.0,
            ki_v: 0.3,
            integral_limit: 0.5,
            speed_integral_limit: 1.0,
            dt: 0.05,
        }
    }
}

/// Path-tracking PID on lateral error with heading damping and curvature
/// feedforward, plus a PI speed loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidExpert {
    pub gains: PidGains,
}

impl PidExpert {
    pub fn new(gains: PidGains) -> Self {
        Self { gains }
    }
}

impl Expert for PidExpert {
    fn act(
        &self,
        _ctx: QueryContext<'_>,
        state: &SimState,
        hidden: &ExpertState,
        track: &Track,
    ) -> (Action, ExpertState) {
        let g = &self.gains;
        let e_s_rate = if hidden.primed { (state.e_s - hidden.prev_e_s) / g.dt } else { 0.0 };
        let integral_e_s =
            (hidden.integral_e_s + state.e_s * g.dt).clamp(-g.integral_limit, g.integral_limit);
        let v_err = g.v_ref - state.v_long;
        let integral_v_err = (hidden.integral_v_err + v_err * g.dt)
            .clamp(-g.speed_integral_limit, g.speed_integral_limit);
        let k = curvature_at(track, state.s);
        let steer = -g.kp * state.e_s - g.ki * integral_e_s - g.kd * e_s_rate - g.k_psi * state.e_psi
            + g.k_ff * k;
        let throttle = g.kp_v * v_err + g.ki_v * integral_v_err;
        let next = ExpertState { integral_e_s, integral_v_err, prev_e_s: state.e_s, primed: true };
        (Action::new(throttle, steer), next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::dynamics::{step_dynamics, VehicleParams};
    use crate::world::track::Segment;
    use std::f64::consts::PI;

    const CTX: QueryContext<'static> = QueryContext { domain_id: "test" };

    fn long_straight() -> Track {
        Track::new(
            vec![
                Segment { length: 100.0, curvature: 0.0 },
                Segment { length: PI, curvature: 1.0 },
                Segment { length: 100.0, curvature: 0.0 },
                Segment { length: PI, curvature: 1.0 },
            ],
            0.4,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_gives_zero_action() {
        let e = PidExpert::default();
        let st = SimState::on_centerline(10.0, e.gains.v_ref);
        let (a, _) = e.act(CTX, &st, &e.initial_state(), &long_straight());
        assert!(a.u_steer.abs() < 1e-12);
        assert!(a.u_a.abs() < 1e-12);
    }

    #[test]
    fn positive_lateral_error_steers_back() {
        let e = PidExpert::default();
        let st = SimState { s: 10.0, e_s: 0.1, e_psi: 0.0, v_long: 1.5, v_tran: 0.0 };
        let (a, _) = e.act(CTX, &st, &e.initial_state(), &long_straight());
        assert!(a.u_steer < 0.0);
    }

    #[test]
    fn integrals_respect_anti_windup() {
        let e = PidExpert::default();
        let st = SimState { s: 10.0, e_s: 0.4, e_psi: 0.0, v_long: 0.0, v_tran: 0.0 };
        let mut h = e.initial_state();
        for _ in 0..1000 {
            h = e.act(CTX, &st, &h, &long_straight()).1;
        }
        assert_eq!(h.integral_e_s, e.gains.integral_limit);
        assert_eq!(h.integral_v_err, e.gains.speed_integral_limit);
    }

    fn closed_loop(track: &Track, start: SimState, steps: usize) -> Vec<SimState> {
        let e = PidExpert::default();
        let veh = VehicleParams::default();
        let mut st = start;
        let mut h = e.initial_state();
        let mut out = vec![st];
        for _ in 0..steps {
            let (a, nh) = e.act(CTX, &st, &h, track);
            h = nh;
            st = step_dynamics(&st, a, veh.dt, &veh, track).unwrap();
            out.push(st);
        }
        out
    }

    #[test]
    fn converges_from_small_perturbation() {
        let t = long_straight();
        let traj = closed_loop(&t, SimState { s: 1.0, e_s: 0.2, e_psi: 0.1, v_long: 1.5, v_tran: 0.0 }, 200);
        assert!(traj[200].e_s.abs() < 0.05, "final e_s {}", traj[200].e_s);
    }

    #[test]
    fn completes_five_laps_on_default_loop() {
        let t = Track::default_loop();
        let laps_steps = (5.5 * t.total_length() / 1.4 / 0.05) as usize;
        for s0 in [0.0, 3.3, 7.0, 12.5, 20.0] {
            let start = SimState { s: s0, e_s: 0.1, e_psi: -0.05, v_long: 1.2, v_tran: 0.0 };
            let traj = closed_loop(&t, start, laps_steps);
            let worst = traj.iter().map(|s| s.e_s.abs()).fold(0.0, f64::max);
            assert!(worst <= 0.3, "start {s0}: max |e_s| = {worst}");
        }
    }
}
