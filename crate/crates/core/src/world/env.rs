use rand::Rng;

use super::domain::{render_observation, DomainModel};
use super::dynamics::{step_dynamics, Action, SimState, VehicleParams};
use super::state::{conditioning_state, ConditioningState, Lookaheads};
use super::track::Track;
use super::WorldError;

/// Track, vehicle and observation domain bundled for rollouts.
#[derive(Debug, Clone)]
pub struct Environment {
    pub track: Track,
    pub vehicle: VehicleParams,
    pub lookaheads: Lookaheads,
    pub domain: DomainModel,
}

impl Environment {
    pub fn new(track: Track, vehicle: VehicleParams, lookaheads: Lookaheads, domain: DomainModel) -> Self {
        Self { track, vehicle, lookaheads, domain }
    }

    pub fn domain_id(&self) -> &str {
        self.domain.id()
    }

    pub fn condition(&self, state: &SimState) -> ConditioningState {
        conditioning_state(state, &self.track, &self.lookaheads)
    }

    /// Conditioning state and one rendered observation at `state`.
    pub fn observe<R: Rng + ?Sized>(&self, state: &SimState, rng: &mut R) -> (Vec<f64>, ConditioningState) {
        let x = self.condition(state);
        let y = render_observation(&self.domain, &x, state.v_long, rng);
        (y, x)
    }

    pub fn step(&self, state: &SimState, action: Action) -> Result<SimState, WorldError> {
        step_dynamics(state, action, self.vehicle.dt, &self.vehicle, &self.track)
    }

    /// Same world seen through another domain.
    pub fn with_domain(&self, domain: DomainModel) -> Self {
        Self { domain, ..self.clone() }
    }
}
