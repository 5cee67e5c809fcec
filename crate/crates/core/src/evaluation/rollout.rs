use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{act, PolicyParams};
use crate::numerics::NumericsError;
use crate::world::{Action, ConditioningState, Environment, Expert, QueryContext, SimState};

/// Who drives during a rollout. The expert is always queried for labels,
/// but its answer only steers the car under [`Pilot::Expert`].
#[derive(Debug, Clone, Copy)]
pub enum Pilot<'a> {
    Policy(&'a PolicyParams),
    Expert,
    Constant(Action),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    /// steps survived, at most the cap
    pub trajectory_length: usize,
    /// `Σ (1−γ)γ^k d_k`, renormalized by `1 − γ^T` over the realized horizon
    pub discounted_imitation_loss: f64,
    /// meters
    pub mean_abs_e_s: f64,
    pub completed_laps: f64,
}

/// Visited states in order, for visitation-weighted averages.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub states: Vec<(ConditioningState, f64)>,
}

#[allow(clippy::too_many_arguments)]
pub fn rollout_traced<R: Rng + ?Sized>(
    env: &Environment,
    pilot: Pilot<'_>,
    expert: &dyn Expert,
    start: SimState,
    max_steps: usize,
    gamma: f64,
    rng: &mut R,
    mut trace: Option<&mut Trace>,
) -> Result<RolloutReport, NumericsError> {
    assert!(max_steps >= 1, "rollout needs max_steps >= 1");
    let ctx = QueryContext { domain_id: env.domain_id() };
    let mut state = start;
    let mut hidden = expert.initial_state();
    let mut weight = 1.0 - gamma;
    let mut loss = 0.0;
    let mut abs_e = 0.0;
    let mut progress = 0.0;
    let mut steps = 0usize;
    while steps < max_steps {
        if !state.on_track(&env.track) {
            break;
        }
        let (y, x) = env.observe(&state, rng);
        if let Some(t) = trace.as_deref_mut() {
            t.states.push((x, state.v_long));
        }
        let (label, next_hidden) = expert.act(ctx, &state, &hidden, &env.track);
        hidden = next_hidden;
        let executed = match pilot {
            Pilot::Policy(p) => act(p, &y, state.v_long)?,
            Pilot::Expert => label,
            Pilot::Constant(a) => a,
        };
        loss += weight * executed.distance(label);
        weight *= gamma;
        abs_e += state.e_s.abs();
        steps += 1;
        match env.step(&state, executed) {
            Ok(next) => {
                progress += env.track.arc_distance(next.s, state.s);
                state = next;
            }
            Err(_) => break,
        }
    }
    // weight is now (1−γ)γ^T, so the realized mass is 1 − γ^T
    let mass = 1.0 - gamma.powi(steps as i32);
    Ok(RolloutReport {
        trajectory_length: steps,
        discounted_imitation_loss: if steps > 0 { loss / mass } else { 0.0 },
        mean_abs_e_s: if steps > 0 { abs_e / steps as f64 } else { 0.0 },
        completed_laps: progress / env.track.total_length(),
    })
}

pub fn rollout<R: Rng + ?Sized>(
    env: &Environment,
    pilot: Pilot<'_>,
    expert: &dyn Expert,
    start: SimState,
    max_steps: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<RolloutReport, NumericsError> {
    rollout_traced(env, pilot, expert, start, max_steps, gamma, rng, None)
}

/// Mean of several rollout reports.
pub fn mean_report(reports: &[RolloutReport]) -> RolloutReport {
    let n = reports.len().max(1) as f64;
    RolloutReport {
        trajectory_length: (reports.iter().map(|r| r.trajectory_length).sum::<usize>() as f64 / n)
            .round() as usize,
        discounted_imitation_loss: reports.iter().map(|r| r.discounted_imitation_loss).sum::<f64>() / n,
        mean_abs_e_s: reports.iter().map(|r| r.mean_abs_e_s).sum::<f64>() / n,
        completed_laps: reports.iter().map(|r| r.completed_laps).sum::<f64>() / n,
    }
}

/// Steps `policy` survives in `env` before departing the track, capped at
/// `max_steps`. No expert is consulted, so this is safe on target domains
/// while training.
pub fn survival_length<R: Rng + ?Sized>(
    env: &Environment,
    policy: &PolicyParams,
    start: SimState,
    max_steps: usize,
    rng: &mut R,
) -> Result<usize, NumericsError> {
    let mut state = start;
    let mut steps = 0usize;
    while steps < max_steps && state.on_track(&env.track) {
        let (y, _) = env.observe(&state, rng);
        let a = act(policy, &y, state.v_long)?;
        steps += 1;
        match env.step(&state, a) {
            Ok(next) => state = next,
            Err(_) => break,
        }
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::ExperimentConfig;
    use crate::rng::stream;
    use crate::world::PidExpert;

    fn setup() -> (Environment, PidExpert) {
        let c = ExperimentConfig::default();
        (c.source_env().unwrap(), PidExpert::new(c.expert))
    }

    #[test]
    fn expert_imitating_itself_has_zero_loss() {
        let (env, expert) = setup();
        let start = SimState::on_centerline(1.0, 1.0);
        let r = rollout(&env, Pilot::Expert, &expert, start, 800, 0.97, &mut stream(1, "r")).unwrap();
        assert_eq!(r.trajectory_length, 800);
        assert_eq!(r.discounted_imitation_loss, 0.0);
        assert!(r.completed_laps > 0.0);
    }

    #[test]
    fn full_throttle_full_lock_leaves_the_track() {
        let (env, expert) = setup();
        let start = SimState::on_centerline(0.0, 1.0);
        let pilot = Pilot::Constant(Action::new(1.0, 1.0));
        let r = rollout(&env, pilot, &expert, start, 2000, 0.97, &mut stream(1, "r")).unwrap();
        assert!(r.trajectory_length < 2000);
        assert!(r.discounted_imitation_loss > 0.0);
    }

    #[test]
    fn one_step_loss_is_the_raw_distance() {
        let (env, expert) = setup();
        let start = SimState::on_centerline(0.0, 1.0);
        let a = Action::new(-1.0, 0.0);
        let mut r1 = stream(2, "r");
        let one = rollout(&env, Pilot::Constant(a), &expert, start, 1, 0.9, &mut r1).unwrap();
        let (label, _) = expert.act(QueryContext { domain_id: "source" }, &start, &expert.initial_state(), &env.track);
        assert_eq!(one.trajectory_length, 1);
        assert!((one.discounted_imitation_loss - a.distance(label)).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_report() {
        let c = ExperimentConfig::default();
        let (env, expert) = setup();
        let p = PolicyParams::random(&c.agent, &mut stream(3, "p")).unwrap();
        let start = SimState::on_centerline(2.0, 1.0);
        let run = || rollout(&env, Pilot::Policy(&p), &expert, start, 300, 0.97, &mut stream(4, "r")).unwrap();
        assert_eq!(serde_json::to_string(&run()).unwrap(), serde_json::to_string(&run()).unwrap());
    }

    #[test]
    fn survival_matches_the_scored_rollout() {
        let c = ExperimentConfig::default();
        let (env, expert) = setup();
        let p = PolicyParams::random(&c.agent, &mut stream(5, "p")).unwrap();
        let start = SimState::on_centerline(2.0, 1.0);
        let scored = rollout(&env, Pilot::Policy(&p), &expert, start, 500, 0.97, &mut stream(6, "r")).unwrap();
        let free = survival_length(&env, &p, start, 500, &mut stream(6, "r")).unwrap();
        assert_eq!(scored.trajectory_length, free);
    }

    #[test]
    fn traced_rollout_records_every_visited_state() {
        let (env, expert) = setup();
        let mut trace = Trace::default();
        let start = SimState::on_centerline(0.5, 1.0);
        let r = rollout_traced(&env, Pilot::Expert, &expert, start, 40, 0.9, &mut stream(7, "r"), Some(&mut trace)).unwrap();
        assert_eq!(trace.states.len(), r.trajectory_length);
    }
}
