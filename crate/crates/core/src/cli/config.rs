use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::agent::PolicyDims;
use crate::evaluation::{BoundSettings, EvalSettings, KlProbe, NamedDistribution, OpeAgent, OpeConfig, ShiftConfig};
use crate::training::{DistributionKind, ScalConfig, StateDistribution};
use crate::world::{DomainSpec, Environment, Lookaheads, PidGains, Track, VehicleParams, OBS_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetBufferConfig {
    pub size: usize,
    pub distribution: StateDistribution,
}

/// Everything a run needs. Serialized form is the artifact config copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub track: Track,
    pub vehicle: VehicleParams,
    pub lookaheads: Lookaheads,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub expert: PidGains,
    pub agent: PolicyDims,
    pub scal: ScalConfig,
    pub target_buffer: TargetBufferConfig,
    pub eval: EvalSettings,
    pub ope: OpeConfig,
    pub shift: ShiftConfig,
    pub bound: BoundSettings,
    pub output_dir: String,
}

/// Shift on the last 16 channels: a per-channel bias drawn from the target id.
pub fn standard_target(family_seed: u64) -> DomainSpec {
    DomainSpec { id: "target".into(), offset_shift: 1.0, shifted_channels: 16, ..DomainSpec::base(family_seed) }
}

/// Twelve agents whose sources blend the target observation model with a
/// random one, from the target itself (two controls) to a fully mixed model.
pub fn default_ope_agents(family_seed: u64) -> Vec<OpeAgent> {
    let target = standard_target(family_seed);
    let mixes = [0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    mixes
        .iter()
        .enumerate()
        .map(|(i, &m)| OpeAgent {
            label: format!("agent-{i:02}"),
            source: DomainSpec { mix: m, ..target.clone() },
        })
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let family = 7;
        let track = Track::default_loop();
        let mid = track.total_length() / 2.0;
        let spread = 2.5;
        let narrow = |arc| StateDistribution { arc, ..StateDistribution::uniform() };
        Self {
            seed: 1,
            vehicle: VehicleParams::default(),
            lookaheads: Lookaheads::default(),
            source: DomainSpec { id: "source".into(), ..DomainSpec::base(family) },
            target: standard_target(family),
            expert: PidGains::default(),
            agent: PolicyDims::default(),
            scal: ScalConfig::default(),
            target_buffer: TargetBufferConfig { size: 512, distribution: StateDistribution::uniform() },
            eval: EvalSettings::default(),
            ope: OpeConfig {
                agents: default_ope_agents(family),
                target_buffer: 1024,
                target_distribution: StateDistribution::uniform(),
                j_s_threshold: 0.1,
                min_agents: 10,
                probe: KlProbe::default(),
                eval: EvalSettings::default(),
            },
            shift: ShiftConfig {
                distributions: vec![
                    NamedDistribution { name: "uniform".into(), distribution: StateDistribution::uniform() },
                    NamedDistribution {
                        name: "start-biased".into(),
                        distribution: narrow(DistributionKind::GaussianArc { center_s: 0.0, spread }),
                    },
                    NamedDistribution {
                        name: "mid-biased".into(),
                        distribution: narrow(DistributionKind::GaussianArc { center_s: mid, spread }),
                    },
                ],
                buffer_sizes: vec![2048, 1024, 512, 256, 213, 170, 128],
                trials: 5,
                eval_every: 2,
                eval: EvalSettings { episodes: 4, ..EvalSettings::default() },
            },
            bound: BoundSettings::default(),
            track,
            output_dir: "runs".into(),
        }
    }
}

impl ExperimentConfig {
    /// Every violated invariant, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let v = &self.vehicle;
        for (name, x) in [
            ("vehicle.dt", v.dt),
            ("vehicle.wheelbase", v.wheelbase),
            ("vehicle.a_max", v.a_max),
            ("vehicle.delta_max", v.delta_max),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                errs.push(format!("{name} must be positive"));
            }
        }
        if !(v.c_drag >= 0.0) {
            errs.push("vehicle.c_drag must be >= 0".into());
        }
        if !(self.expert.dt > 0.0) {
            errs.push("expert.dt must be positive".into());
        }
        errs.extend(self.source.validate().into_iter().map(|e| format!("source: {e}")));
        errs.extend(self.target.validate().into_iter().map(|e| format!("target: {e}")));
        if self.agent.obs_dim != OBS_DIM {
            errs.push(format!("agent.obs_dim must equal the observation size {OBS_DIM}"));
        }
        for (name, x) in [
            ("agent.hidden_dim", self.agent.hidden_dim),
            ("agent.latent_dim", self.agent.latent_dim),
            ("agent.vel_proj_dim", self.agent.vel_proj_dim),
        ] {
            if x == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        errs.extend(self.scal.validate());
        if self.target_buffer.size == 0 {
            errs.push("target_buffer.size must be positive".into());
        }
        errs.extend(self.target_buffer.distribution.validate().into_iter().map(|e| format!("target_buffer.distribution: {e}")));
        errs.extend(self.eval.validate());
        errs.extend(self.ope.validate());
        errs.extend(self.shift.validate());
        errs.extend(self.bound.validate());
        if self.output_dir.is_empty() {
            errs.push("output_dir must not be empty".into());
        }
        errs
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn source_env(&self) -> Result<Environment, crate::world::WorldError> {
        Ok(Environment::new(self.track.clone(), self.vehicle, self.lookaheads, self.source.build()?))
    }

    pub fn target_env(&self) -> Result<Environment, crate::world::WorldError> {
        Ok(Environment::new(self.track.clone(), self.vehicle, self.lookaheads, self.target.build()?))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path} is not a valid config: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{path} failed validation:\n  {}", .errors.join("\n  "))]
    Invalid { path: String, errors: Vec<String> },
}

/// Strict load: unknown keys are rejected and every invariant is checked.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: p.clone(), source })?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: p.clone(), source })?;
    let errors = config.validate();
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid { path: p, errors })
    }
}
