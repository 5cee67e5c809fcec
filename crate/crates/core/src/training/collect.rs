use rand::Rng;

use super::buffer::{SourceRecord, TargetRecord};
use super::distribution::StateDistribution;
use super::TrainingError;
use crate::agent::{act, PolicyParams};
use crate::world::{Environment, Expert, QueryContext};

/// Episode settings shared by every DAgger fill.
#[derive(Debug, Clone)]
pub struct EpisodeSettings<'a> {
    pub start: &'a StateDistribution,
    /// Steps before a forced reset even when the car stays on track.
    pub episode_cap: usize,
}

/// Rolls out the β-mixture of expert and policy in `env` and labels every
/// visited state with the expert action. Always returns exactly `n_steps`
/// records; episodes restart on track departure.
pub fn collect_source_dagger<R: Rng + ?Sized>(
    env: &Environment,
    expert: &dyn Expert,
    policy: &PolicyParams,
    beta: f64,
    n_steps: usize,
    episodes: &EpisodeSettings<'_>,
    rng: &mut R,
) -> Result<Vec<SourceRecord>, TrainingError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(TrainingError::Precondition(format!("beta {beta} outside [0, 1]")));
    }
    if episodes.episode_cap == 0 {
        return Err(TrainingError::Precondition("episode_cap must be positive".into()));
    }
    let ctx = QueryContext { domain_id: env.domain_id() };
    let mut out = Vec::with_capacity(n_steps);
    let mut state = episodes.start.sample(&env.track, rng)?;
    let mut hidden = expert.initial_state();
    let mut t = 0usize;
    let mut episodes_run = 1usize;
    let mut departures = 0usize;
    let mut last_departure = (0.0, 0.0);
    while out.len() < n_steps {
        let (y, x) = env.observe(&state, rng);
        let (u_star, next_hidden) = expert.act(ctx, &state, &hidden, &env.track);
        let use_expert = rng.random::<f64>() < beta;
        let executed = if use_expert { u_star } else { act(policy, &y, state.v_long)? };
        out.push(SourceRecord { y, x, v_long: state.v_long, u_star });
        hidden = next_hidden;
        t += 1;
        let next = env.step(&state, executed).ok().filter(|s| s.on_track(&env.track));
        match next {
            Some(s) if t < episodes.episode_cap => state = s,
            other => {
                if other.is_none() {
                    departures += 1;
                    last_departure = (state.s, state.e_s);
                }
                state = episodes.start.sample(&env.track, rng)?;
                hidden = expert.initial_state();
                t = 0;
                episodes_run += 1;
            }
        }
    }
    // an expert that cannot hold the track from most starts is misconfigured
    if beta >= 1.0 && departures * 2 > episodes_run {
        let (s, e_s) = last_departure;
        return Err(TrainingError::ExpertDiverged { s, e_s, departures, episodes: episodes_run });
    }
    Ok(out)
}

/// I.i.d. states from `dist`, each rendered once through `env`. No expert is
/// involved.
pub fn sample_target_buffer<R: Rng + ?Sized>(
    env: &Environment,
    dist: &StateDistribution,
    n: usize,
    rng: &mut R,
) -> Result<Vec<TargetRecord>, TrainingError> {
    if n == 0 {
        return Err(TrainingError::Precondition("target buffer size must be at least 1".into()));
    }
    let errs = dist.validate();
    if !errs.is_empty() {
        return Err(TrainingError::Config(errs));
    }
    (0..n)
        .map(|_| {
            let st = dist.sample(&env.track, rng)?;
            let (y, x) = env.observe(&st, rng);
            Ok(TargetRecord { y, x, v_long: st.v_long })
        })
        .collect()
}
