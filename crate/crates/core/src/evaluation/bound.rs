use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{probe_conditional_kl, rollout_traced, EvalError, EvalSettings, KlProbe, Pilot, Trace};
use crate::agent::{PolicyParams, LOSS_BOUND_ALPHA};
use crate::rng::stream;
use crate::training::{SourceRecord, TargetRecord};
use crate::world::{analytic_obs_kl, Environment, Expert};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSettings {
    pub gammas: Vec<f64>,
    /// Visitation samples behind σ̂.
    pub sigma_samples: usize,
    pub probe: KlProbe,
    pub eval: EvalSettings,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self { gammas: vec![0.9, 0.95, 0.97], sigma_samples: 1000, probe: KlProbe::default(), eval: EvalSettings::default() }
    }
}

impl BoundSettings {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.gammas.is_empty() {
            errs.push("bound.gammas must not be empty".into());
        }
        for g in &self.gammas {
            if !(*g > 0.0 && *g < 1.0) {
                errs.push(format!("bound.gammas entries must lie in the open interval (0, 1) (got {g})"));
            }
        }
        if self.sigma_samples == 0 {
            errs.push("bound.sigma_samples must be positive".into());
        }
        errs.extend(self.probe.validate());
        errs.extend(self.eval.validate());
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(rename = "J_t_hat")]
    pub j_t_hat: f64,
    #[serde(rename = "J_s_hat")]
    pub j_s_hat: f64,
    pub kl_hat: f64,
    pub sigma_hat: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// `J_s + α·sqrt(2γ/(1−γ)·(L̂ + σ̂))`. A negative `L̂ + σ̂`, possible from
/// estimation error in `L̂`, is treated as zero.
pub fn bound_rhs(j_s: f64, kl_hat: f64, sigma_hat: f64, alpha: f64, gamma: f64) -> f64 {
    j_s + alpha * (2.0 * gamma / (1.0 - gamma) * (kl_hat + sigma_hat).max(0.0)).sqrt()
}

/// One report per discount factor. `Ĵ_s` and `Ĵ_t` come from rollouts in
/// each domain, `L̂` from a probe discriminator on the frozen encoder, and
/// `σ̂` from the closed-form observation KL averaged over states drawn from
/// the discounted source visitation distribution.
#[allow(clippy::too_many_arguments)]
pub fn bound_check(
    policy: &PolicyParams,
    env_s: &Environment,
    env_t: &Environment,
    expert: &dyn Expert,
    b_s: &[SourceRecord],
    b_t: &[TargetRecord],
    settings: &BoundSettings,
    seed: u64,
) -> Result<Vec<BoundReport>, EvalError> {
    let errs = settings.validate();
    if !errs.is_empty() {
        return Err(EvalError::Precondition(errs.join("; ")));
    }
    let kl_hat = probe_conditional_kl(policy, b_s, b_t, &settings.probe, &mut stream(seed, "kl-probe"))?;
    let mut out = Vec::with_capacity(settings.gammas.len());
    for &gamma in &settings.gammas {
        let mut traces = Vec::with_capacity(settings.eval.episodes);
        let mut j_s = 0.0;
        let mut j_t = 0.0;
        // the same streams for every γ, so rollouts differ only in weighting
        let mut rs = stream(seed, "bound-source");
        let mut rt = stream(seed, "bound-target");
        for _ in 0..settings.eval.episodes {
            let mut trace = Trace::default();
            let s0 = settings.eval.start.sample(&env_s.track, &mut rs)?;
            let rep = rollout_traced(env_s, Pilot::Policy(policy), expert, s0, settings.eval.max_steps, gamma, &mut rs, Some(&mut trace))?;
            j_s += rep.discounted_imitation_loss;
            traces.push(trace);
            let s0 = settings.eval.start.sample(&env_t.track, &mut rt)?;
            let rep = rollout_traced(env_t, Pilot::Policy(policy), expert, s0, settings.eval.max_steps, gamma, &mut rt, None)?;
            j_t += rep.discounted_imitation_loss;
        }
        let n = settings.eval.episodes as f64;
        let (j_s, j_t) = (j_s / n, j_t / n);
        let sigma_hat = visitation_sigma(env_s, env_t, &traces, gamma, settings.sigma_samples, &mut stream(seed, "sigma"))?;
        let rhs = bound_rhs(j_s, kl_hat, sigma_hat, LOSS_BOUND_ALPHA, gamma);
        out.push(BoundReport {
            j_t_hat: j_t,
            j_s_hat: j_s,
            kl_hat,
            sigma_hat,
            alpha: LOSS_BOUND_ALPHA,
            gamma,
            rhs,
            slack: rhs - j_t,
        });
    }
    Ok(out)
}

/// Mean `analytic_obs_kl` over `n` states: a uniformly chosen trace, then a
/// step drawn with probability proportional to `γ^k` over its length.
fn visitation_sigma<R: Rng + ?Sized>(
    env_s: &Environment,
    env_t: &Environment,
    traces: &[Trace],
    gamma: f64,
    n: usize,
    rng: &mut R,
) -> Result<f64, EvalError> {
    let traces: Vec<&Trace> = traces.iter().filter(|t| !t.states.is_empty()).collect();
    if traces.is_empty() {
        return Err(EvalError::Precondition("no visited source states".into()));
    }
    let mut total = 0.0;
    for _ in 0..n {
        let t = traces[rng.random_range(0..traces.len())];
        let len = t.states.len() as i32;
        // inverse CDF of the geometric law truncated to [0, len)
        let u: f64 = rng.random();
        let mass = 1.0 - gamma.powi(len);
        let k = ((1.0 - u * mass).ln() / gamma.ln()).floor() as usize;
        let (x, v) = &t.states[k.min(t.states.len() - 1)];
        total += analytic_obs_kl(&env_s.domain, &env_t.domain, x, *v)?;
    }
    Ok(total / n as f64)
}
