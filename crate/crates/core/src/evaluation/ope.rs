use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::spearman;
use super::{evaluate_policy, probe_conditional_kl, EvalError, EvalSettings, KlProbe, Pilot};
use crate::agent::{PolicyDims, PolicyParams};
use crate::rng::{child_seed, stream};
use crate::training::{
    sample_target_buffer, train_dagger, Provenance, ScalConfig, StateDistribution,
};
use crate::world::{DomainSpec, Environment, Expert};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpeAgent {
    pub label: String,
    pub source: DomainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpeConfig {
    pub agents: Vec<OpeAgent>,
    pub target_buffer: usize,
    pub target_distribution: StateDistribution,
    /// Agents whose final training `J_s` exceeds this are excluded.
    pub j_s_threshold: f64,
    pub min_agents: usize,
    pub probe: KlProbe,
    pub eval: EvalSettings,
}

impl OpeConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.agents.len() < self.min_agents {
            errs.push(format!("ope.agents lists {} agents, fewer than min_agents {}", self.agents.len(), self.min_agents));
        }
        if self.min_agents < 2 {
            errs.push("ope.min_agents must be at least 2".into());
        }
        if self.target_buffer == 0 {
            errs.push("ope.target_buffer must be positive".into());
        }
        if !(self.j_s_threshold > 0.0) {
            errs.push("ope.j_s_threshold must be positive".into());
        }
        for a in &self.agents {
            errs.extend(a.source.validate().into_iter().map(|e| format!("ope.agents[{}]: {e}", a.label)));
        }
        errs.extend(self.target_distribution.validate().into_iter().map(|e| format!("ope.target_distribution: {e}")));
        errs.extend(self.probe.validate());
        errs.extend(self.eval.validate());
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeRow {
    pub agent: String,
    pub j_s_hat: f64,
    pub kl_hat: f64,
    pub target_loss: f64,
    pub target_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeReport {
    pub rows: Vec<OpeRow>,
    /// `(agent, reason)` for every agent left out of the correlation.
    pub excluded: Vec<(String, String)>,
    pub spearman_rho_loss: f64,
    /// Correlation between `L̂` and the negated trajectory length.
    pub spearman_rho_length: f64,
}

impl OpeReport {
    pub fn from_rows(rows: Vec<OpeRow>, excluded: Vec<(String, String)>) -> Self {
        let kl: Vec<f64> = rows.iter().map(|r| r.kl_hat).collect();
        let loss: Vec<f64> = rows.iter().map(|r| r.target_loss).collect();
        let neg_len: Vec<f64> = rows.iter().map(|r| -r.target_length).collect();
        Self {
            spearman_rho_loss: spearman(&kl, &loss),
            spearman_rho_length: spearman(&kl, &neg_len),
            rows,
            excluded,
        }
    }
}

enum AgentOutcome {
    Row(OpeRow),
    Excluded(String, String),
}

/// Trains one plain-DAgger agent per source domain, estimates `L̂` of each
/// frozen encoder against one shared target buffer and correlates it with
/// target on-policy metrics. Agents run in parallel on the current rayon
/// pool; each owns the streams of `child_seed(seed, "agent/<i>")`.
pub fn ope_study(
    config: &OpeConfig,
    scal: &ScalConfig,
    dims: &PolicyDims,
    env_t: &Environment,
    expert: &dyn Expert,
    seed: u64,
) -> Result<OpeReport, EvalError> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(EvalError::Precondition(errs.join("; ")));
    }
    let dagger = ScalConfig { lambda: 0.0, ..scal.clone() };
    let b_t = sample_target_buffer(env_t, &config.target_distribution, config.target_buffer, &mut stream(seed, "target-buffer"))?;

    let outcomes: Vec<Result<AgentOutcome, EvalError>> = config
        .agents
        .par_iter()
        .enumerate()
        .map(|(i, agent)| {
            let s = child_seed(seed, &format!("agent/{i}"));
            let env_s = env_t.with_domain(agent.source.build()?);
            let init = PolicyParams::random(dims, &mut stream(s, "policy-init"))?;
            let out = match train_dagger(&dagger, &env_s, expert, &init, s, Provenance::default()) {
                Ok(o) => o,
                Err(e) => return Ok(AgentOutcome::Excluded(agent.label.clone(), e.to_string())),
            };
            let j_s = out.history.last().map(|r| r.j_s).unwrap_or(f64::INFINITY);
            if !(j_s <= config.j_s_threshold) {
                log::warn!("agent {} excluded: J_s {j_s} above threshold", agent.label);
                return Ok(AgentOutcome::Excluded(
                    agent.label.clone(),
                    format!("J_s {j_s} above threshold {}", config.j_s_threshold),
                ));
            }
            let kl_hat = probe_conditional_kl(
                &out.policy,
                out.source_buffer.records(),
                &b_t,
                &config.probe,
                &mut stream(s, "kl-probe"),
            )?;
            let report = evaluate_policy(
                env_t,
                Pilot::Policy(&out.policy),
                expert,
                &config.eval,
                config.eval.gamma,
                &mut stream(s, "eval-target"),
            )?;
            log::info!("agent {}: J_s {j_s:.4} kl_hat {kl_hat:.3} length {}", agent.label, report.trajectory_length);
            log::debug!("agent {} target report {report:?}", agent.label);
            Ok(AgentOutcome::Row(OpeRow {
                agent: agent.label.clone(),
                j_s_hat: j_s,
                kl_hat,
                target_loss: report.discounted_imitation_loss,
                target_length: report.trajectory_length as f64,
            }))
        })
        .collect();

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for o in outcomes {
        match o? {
            AgentOutcome::Row(r) => rows.push(r),
            AgentOutcome::Excluded(a, why) => excluded.push((a, why)),
        }
    }
    if rows.len() < config.min_agents {
        return Err(EvalError::StudyFailed(format!(
            "only {} of {} agents met the J_s threshold (need {})",
            rows.len(),
            config.agents.len(),
            config.min_agents
        )));
    }
    Ok(OpeReport::from_rows(rows, excluded))
}
