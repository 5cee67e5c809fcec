use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{mean, variance};
use super::{mean_survival, EvalError, EvalSettings};
use crate::agent::{PolicyDims, PolicyParams};
use crate::rng::{child_seed, stream};
use crate::training::{
    sample_target_buffer, scal_train_observed, train_dagger_observed, Buffer, Provenance, ScalConfig,
    StateDistribution,
};
use crate::world::{Environment, Expert};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedDistribution {
    pub name: String,
    pub distribution: StateDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub distributions: Vec<NamedDistribution>,
    pub buffer_sizes: Vec<usize>,
    pub trials: usize,
    /// Rounds between expert-free length probes; the last round is always probed.
    pub eval_every: usize,
    pub eval: EvalSettings,
}

impl ShiftConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.distributions.is_empty() {
            errs.push("shift.distributions must not be empty".into());
        }
        if self.buffer_sizes.is_empty() || self.buffer_sizes.contains(&0) {
            errs.push("shift.buffer_sizes must be a nonempty list of positive sizes".into());
        }
        if self.trials == 0 {
            errs.push("shift.trials must be positive".into());
        }
        if self.eval_every == 0 {
            errs.push("shift.eval_every must be positive".into());
        }
        let mut names: Vec<&str> = self.distributions.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            errs.push("shift.distributions names must be unique".into());
        }
        for d in &self.distributions {
            errs.extend(d.distribution.validate().into_iter().map(|e| format!("shift.distributions[{}]: {e}", d.name)));
        }
        errs.extend(self.eval.validate());
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCell {
    pub distribution: String,
    pub buffer_size: usize,
    pub trial: usize,
    /// Best probed mean trajectory length over training, `None` on failure.
    pub max_length: Option<f64>,
    pub final_length: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub distribution: String,
    pub buffer_size: usize,
    pub completed: usize,
    /// `None` when every trial of the cell failed.
    pub mean_max_length: Option<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub cells: Vec<ShiftCell>,
    pub summary: Vec<CellSummary>,
    /// Oracle DAgger max length per trial, trained directly on the target.
    pub oracle: Vec<f64>,
    pub oracle_mean: f64,
    pub oracle_variance: f64,
}

impl ShiftReport {
    pub fn summary_for(&self, distribution: &str, buffer_size: usize) -> Option<&CellSummary> {
        self.summary.iter().find(|s| s.distribution == distribution && s.buffer_size == buffer_size)
    }
}

/// Probes every `every` rounds and the last one; returns `(max, last)`.
struct Tracker<'a> {
    env: &'a Environment,
    settings: &'a EvalSettings,
    every: usize,
    rounds: usize,
    seed: u64,
    best: f64,
    last: f64,
    error: Option<EvalError>,
}

impl Tracker<'_> {
    fn observe(&mut self, round: usize, policy: &PolicyParams) {
        if self.error.is_some() || !((round + 1) % self.every == 0 || round + 1 == self.rounds) {
            return;
        }
        let mut r = stream(self.seed, &format!("probe/{round}"));
        match mean_survival(self.env, policy, self.settings, &mut r) {
            Ok(l) => {
                self.best = self.best.max(l);
                self.last = l;
            }
            Err(e) => self.error = Some(e),
        }
    }
}

fn summarize(cells: &[ShiftCell], config: &ShiftConfig) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for d in &config.distributions {
        for &n in &config.buffer_sizes {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|c| c.distribution == d.name && c.buffer_size == n)
                .filter_map(|c| c.max_length)
                .collect();
            out.push(CellSummary {
                distribution: d.name.clone(),
                buffer_size: n,
                completed: vals.len(),
                mean_max_length: (!vals.is_empty()).then(|| mean(&vals)),
                variance: variance(&vals),
            });
        }
    }
    out
}

/// The distribution × buffer-size × trial grid of SCAL runs plus the oracle
/// DAgger baseline. Failed runs are recorded and the grid continues.
/// During training only expert-free target probes are used.
#[allow(clippy::too_many_arguments)]
pub fn shift_study(
    config: &ShiftConfig,
    scal: &ScalConfig,
    dims: &PolicyDims,
    env_s: &Environment,
    env_t: &Environment,
    expert: &dyn Expert,
    seed: u64,
) -> Result<ShiftReport, EvalError> {
    let mut errs = config.validate();
    errs.extend(scal.validate());
    if !errs.is_empty() {
        return Err(EvalError::Precondition(errs.join("; ")));
    }
    let mut jobs = Vec::new();
    for d in &config.distributions {
        for &n in &config.buffer_sizes {
            for t in 0..config.trials {
                jobs.push((d, n, t));
            }
        }
    }
    let trial_seed = |t: usize| child_seed(seed, &format!("trial/{t}"));
    let cells: Vec<ShiftCell> = jobs
        .par_iter()
        .map(|&(d, n, t)| {
            let s = trial_seed(t);
            let mut tracker = Tracker {
                env: env_t,
                settings: &config.eval,
                every: config.eval_every,
                rounds: scal.rounds,
                seed: child_seed(s, "target-probe"),
                best: 0.0,
                last: 0.0,
                error: None,
            };
            let mut run = || -> Result<(), EvalError> {
                let buf_seed = child_seed(seed, &format!("{}/{n}/{t}", d.name));
                let b_t = sample_target_buffer(env_t, &d.distribution, n, &mut stream(buf_seed, "target-buffer"))?;
                let b_t = Buffer::from_records(b_t, Provenance { config_hash: String::new(), seed: buf_seed });
                let init = PolicyParams::random(dims, &mut stream(s, "policy-init"))?;
                scal_train_observed(scal, env_s, expert, &b_t, &init, s, Provenance::default(), &mut |r, p| {
                    tracker.observe(r, p)
                })?;
                Ok(())
            };
            let result = run().and_then(|_| tracker.error.take().map_or(Ok(()), Err));
            log::info!("shift cell {} |B_t|={n} trial {t}: {:?}", d.name, result.as_ref().map(|_| tracker.best));
            match result {
                Ok(()) => ShiftCell {
                    distribution: d.name.clone(),
                    buffer_size: n,
                    trial: t,
                    max_length: Some(tracker.best),
                    final_length: Some(tracker.last),
                    error: None,
                },
                Err(e) => ShiftCell {
                    distribution: d.name.clone(),
                    buffer_size: n,
                    trial: t,
                    max_length: None,
                    final_length: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let oracle: Vec<f64> = (0..config.trials)
        .into_par_iter()
        .map(|t| -> Result<f64, EvalError> {
            let s = trial_seed(t);
            let mut tracker = Tracker {
                env: env_t,
                settings: &config.eval,
                every: config.eval_every,
                rounds: scal.rounds,
                seed: child_seed(s, "oracle-probe"),
                best: 0.0,
                last: 0.0,
                error: None,
            };
            let init = PolicyParams::random(dims, &mut stream(s, "policy-init"))?;
            train_dagger_observed(scal, env_t, expert, &init, s, Provenance::default(), &mut |r, p| {
                tracker.observe(r, p)
            })?;
            match tracker.error {
                Some(e) => Err(e),
                None => Ok(tracker.best),
            }
        })
        .collect::<Result<_, _>>()?;

    let summary = summarize(&cells, config);
    Ok(ShiftReport { oracle_mean: mean(&oracle), oracle_variance: variance(&oracle), oracle, summary, cells })
}
