//! Frenet-frame driving world: track, kinematics, observation domains and
//! the PID expert.

mod domain;
mod dynamics;
mod env;
mod expert;
mod state;
mod track;

pub use domain::{
    analytic_obs_kl, feature_map, render_observation, DomainModel, DomainSpec, FEATURE_DIM,
    OBS_DIM,
};
pub use dynamics::{step_dynamics, Action, SimState, VehicleParams};
pub use env::Environment;
pub use expert::{Expert, ExpertState, PidExpert, PidGains, QueryContext};
pub use state::{conditioning_state, ConditioningState, Lookaheads, STATE_DIM};
pub use track::{curvature_at, Segment, Track};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("singular Frenet geometry at s={s}, e_s={e_s}, curvature={curvature}")]
    SingularGeometry { s: f64, e_s: f64, curvature: f64 },
}
