//! Rollout metrics, the off-policy-evaluation and distribution-shift
//! studies, and the transfer bound checker.

mod bound;
mod ope;
pub mod plot;
mod probe;
mod rollout;
mod shift;
pub mod stats;

pub use bound::{bound_check, bound_rhs, BoundReport, BoundSettings};
pub use ope::{ope_study, OpeAgent, OpeConfig, OpeReport, OpeRow};
pub use probe::{probe_conditional_kl, KlProbe};
pub use rollout::{mean_report, rollout, rollout_traced, survival_length, Pilot, RolloutReport, Trace};
pub use shift::{shift_study, CellSummary, NamedDistribution, ShiftCell, ShiftConfig, ShiftReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::PolicyParams;
use crate::alignment::AlignmentError;
use crate::numerics::NumericsError;
use crate::training::{StateDistribution, TrainingError};
use crate::world::{Environment, Expert, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("study failed: {0}")]
    StudyFailed(String),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// How on-policy performance is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub episodes: usize,
    pub max_steps: usize,
    pub gamma: f64,
    pub start: StateDistribution,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: 6,
            max_steps: 2000,
            gamma: 0.97,
            start: StateDistribution { e_s_std: 0.05, e_psi_std: 0.05, v_std: 0.1, ..StateDistribution::uniform() },
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.episodes == 0 {
            errs.push("eval.episodes must be positive".into());
        }
        if self.max_steps == 0 {
            errs.push("eval.max_steps must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            errs.push(format!("eval.gamma must lie in the open interval (0, 1) (got {})", self.gamma));
        }
        errs.extend(self.start.validate().into_iter().map(|e| format!("eval.start: {e}")));
        errs
    }
}

/// Mean rollout report over `settings.episodes` episodes. The expert only
/// scores the visited states.
pub fn evaluate_policy<R: Rng + ?Sized>(
    env: &Environment,
    pilot: Pilot<'_>,
    expert: &dyn Expert,
    settings: &EvalSettings,
    gamma: f64,
    rng: &mut R,
) -> Result<RolloutReport, EvalError> {
    let mut reports = Vec::with_capacity(settings.episodes);
    for _ in 0..settings.episodes {
        let s0 = settings.start.sample(&env.track, rng)?;
        reports.push(rollout(env, pilot, expert, s0, settings.max_steps, gamma, rng)?);
    }
    Ok(mean_report(&reports))
}

/// Mean survival length over `settings.episodes` episodes, expert-free.
pub fn mean_survival<R: Rng + ?Sized>(
    env: &Environment,
    policy: &PolicyParams,
    settings: &EvalSettings,
    rng: &mut R,
) -> Result<f64, EvalError> {
    let mut total = 0usize;
    for _ in 0..settings.episodes {
        let s0 = settings.start.sample(&env.track, rng)?;
        total += survival_length(env, policy, s0, settings.max_steps, rng)?;
    }
    Ok(total as f64 / settings.episodes as f64)
}
