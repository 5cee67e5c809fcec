use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::buffer::{Buffer, Provenance, SourceRecord, TargetRecord};
use super::collect::{collect_source_dagger, EpisodeSettings};
use super::distribution::StateDistribution;
use super::history::{History, HistoryRow, Phase};
use super::TrainingError;
use crate::agent::{encode, imitation_loss_node, ImitationBatch, PolicyOptimizer, PolicyParams};
use crate::alignment::{
    density_ratio, discriminator_loss_and_grad, domain_confusion_node, fit_kde,
    weighted_logit_mean, DiscriminatorParams, KdeModel,
};
use crate::numerics::{AdamConfig, DenseArray, Graph, OptimizerState};
use crate::rng::stream;
use crate::world::{Environment, Expert, STATE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalConfig {
    pub lambda: f64,
    pub k_disc: usize,
    pub rounds: usize,
    /// Fraction of rounds over which β decays linearly from 1 to 0.
    pub warm_fraction: f64,
    pub steps_per_round: usize,
    /// Expert-only steps collected before the KDEs are fitted.
    pub warm_start_steps: usize,
    pub policy_steps: usize,
    pub policy_batch: usize,
    pub disc_batch: usize,
    pub policy_lr: f64,
    pub disc_lr: f64,
    pub disc_hidden: usize,
    pub gamma: f64,
    /// Trailing window of the source buffer used for the per-round estimate.
    pub kl_eval_records: usize,
    pub episode_cap: usize,
    pub dagger_start: StateDistribution,
    /// Divide each minibatch's density-ratio weights by their mean before
    /// they enter `J_adv`.
    pub self_normalize_weights: bool,
    pub record_wall_time: bool,
}

impl Default for ScalConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            k_disc: 5,
            rounds: 24,
            warm_fraction: 0.25,
            steps_per_round: 512,
            warm_start_steps: 2048,
            policy_steps: 100,
            policy_batch: 128,
            disc_batch: 128,
            policy_lr: 1e-3,
            disc_lr: 1e-3,
            disc_hidden: 64,
            gamma: 0.97,
            kl_eval_records: 1024,
            episode_cap: 30,
            dagger_start: StateDistribution {
                e_s_std: 0.12,
                e_psi_std: 0.12,
                v_std: 0.25,
                ..StateDistribution::uniform()
            },
            self_normalize_weights: true,
            record_wall_time: false,
        }
    }
}

impl ScalConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            errs.push(format!("scal.lambda must be >= 0 (got {})", self.lambda));
        }
        if self.k_disc < 1 {
            errs.push("scal.k_disc must be >= 1".into());
        }
        if self.rounds < 1 {
            errs.push("scal.rounds must be >= 1".into());
        }
        if !(self.warm_fraction > 0.0 && self.warm_fraction <= 1.0) {
            errs.push("scal.warm_fraction must lie in (0, 1]".into());
        }
        for (name, v) in [
            ("scal.steps_per_round", self.steps_per_round),
            ("scal.warm_start_steps", self.warm_start_steps),
            ("scal.policy_steps", self.policy_steps),
            ("scal.policy_batch", self.policy_batch),
            ("scal.disc_batch", self.disc_batch),
            ("scal.disc_hidden", self.disc_hidden),
            ("scal.kl_eval_records", self.kl_eval_records),
            ("scal.episode_cap", self.episode_cap),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("scal.policy_lr", self.policy_lr), ("scal.disc_lr", self.disc_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            errs.push(format!("scal.gamma must lie in the open interval (0, 1) (got {})", self.gamma));
        }
        errs.extend(self.dagger_start.validate().into_iter().map(|e| format!("scal.dagger_start: {e}")));
        errs
    }

    /// `β_r = max(0, 1 − r / R_warm)`.
    pub fn beta(&self, round: usize) -> f64 {
        let warm = (self.warm_fraction * self.rounds as f64).max(1.0);
        (1.0 - round as f64 / warm).max(0.0)
    }

    fn check(&self) -> Result<(), TrainingError> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(TrainingError::Config(errs))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScalOutcome {
    pub policy: PolicyParams,
    pub discriminator: DiscriminatorParams,
    pub kde_source: KdeModel,
    pub kde_target: KdeModel,
    pub source_buffer: Buffer<SourceRecord>,
    /// Density-ratio weight of each source record, frozen at append time.
    pub source_weights: Vec<f64>,
    pub history: History,
}

impl ScalOutcome {
    /// The trailing window of the source buffer the history estimates use.
    pub fn kl_window(&self, records: usize) -> &[SourceRecord] {
        let n = self.source_buffer.len();
        &self.source_buffer.records()[n.saturating_sub(records)..]
    }
}

#[derive(Debug, Clone)]
pub struct DaggerOutcome {
    pub policy: PolicyParams,
    pub source_buffer: Buffer<SourceRecord>,
    pub history: History,
}

struct Streams {
    dagger: crate::rng::StreamRng,
    policy_batch: crate::rng::StreamRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self { dagger: stream(seed, "dagger"), policy_batch: stream(seed, "policy-batch") }
    }
}

fn imitation_batch(records: &[&SourceRecord]) -> Result<ImitationBatch, TrainingError> {
    let n = records.len();
    let obs = records[0].y.len();
    let mut y = Vec::with_capacity(n * obs);
    let mut v = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(2 * n);
    for r in records {
        y.extend_from_slice(&r.y);
        v.push(r.v_long);
        u.extend_from_slice(&r.u_star.to_array());
    }
    Ok(ImitationBatch {
        y: DenseArray::matrix(n, obs, y)?,
        v: DenseArray::matrix(n, 1, v)?,
        u: DenseArray::matrix(n, 2, u)?,
    })
}

fn state_matrix<'a>(xs: impl Iterator<Item = &'a [f64]>, n: usize) -> Result<DenseArray, TrainingError> {
    let data: Vec<f64> = xs.flat_map(|x| x.iter().copied()).collect();
    Ok(DenseArray::matrix(n, STATE_DIM, data)?)
}

/// Adversarial context for one policy step.
struct Adversary<'a> {
    disc: &'a DiscriminatorParams,
    weights: &'a [f64],
    lambda: f64,
    self_normalize: bool,
}

/// One Adam step on `J_s + λ J_adv` over a fresh minibatch of `B_s`.
/// Returns `(J_s, J_adv)` on the minibatch before the step.
fn policy_step<R: Rng + ?Sized>(
    policy: &mut PolicyParams,
    opt: &mut PolicyOptimizer,
    buffer: &Buffer<SourceRecord>,
    batch_size: usize,
    adversary: Option<&Adversary<'_>>,
    rng: &mut R,
) -> Result<(f64, Option<f64>), TrainingError> {
    let n = buffer.len();
    let idx: Vec<usize> = (0..batch_size.min(n)).map(|_| rng.random_range(0..n)).collect();
    let recs: Vec<&SourceRecord> = idx.iter().map(|&i| &buffer.records()[i]).collect();
    let batch = imitation_batch(&recs)?;

    let mut g = Graph::new();
    let pv = policy.bind(&mut g);
    let (j_s, latents) = imitation_loss_node(&mut g, &pv, &batch)?;
    let mut loss = j_s;
    let mut j_adv = None;
    if let Some(a) = adversary {
        let dv = a.disc.net.bind(&mut g, false);
        let x = g.constant(&state_matrix(recs.iter().map(|r| r.x.as_slice()), recs.len())?);
        let mut wv: Vec<f64> = idx.iter().map(|&i| a.weights[i]).collect();
        if a.self_normalize {
            let m = mean(&wv);
            wv.iter_mut().for_each(|w| *w /= m);
        }
        let w = g.constant_matrix(recs.len(), 1, wv);
        let adv = domain_confusion_node(&mut g, &dv, latents, x, w)?;
        j_adv = Some(g.scalar(adv));
        if a.lambda != 0.0 {
            let scaled = g.scale_shift(adv, a.lambda, 0.0);
            loss = g.add(j_s, scaled)?;
        }
    }
    let js_value = g.scalar(j_s);
    let total = g.scalar(loss);
    if !total.is_finite() {
        return Err(TrainingError::NonFinite {
            round: 0,
            detail: format!("total loss {total}"),
            snapshot: Box::new(policy.clone()),
        });
    }
    let grads = g.backward(loss)?;
    let gp = pv.grads(policy, &grads);
    opt.step(policy, &gp)?;
    Ok((js_value, j_adv))
}

fn episodes(config: &ScalConfig) -> EpisodeSettings<'_> {
    EpisodeSettings { start: &config.dagger_start, episode_cap: config.episode_cap }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn elapsed_ms(t0: Option<Instant>) -> u64 {
    t0.map_or(0, |t| t.elapsed().as_millis() as u64)
}

fn encode_rows<'a>(
    policy: &PolicyParams,
    ys: impl Iterator<Item = &'a [f64]>,
) -> Result<Vec<Vec<f64>>, TrainingError> {
    Ok(ys.map(|y| encode(policy, y)).collect::<Result<Vec<_>, _>>()?)
}

/// Plain DAgger in `env`: β-mixture fills of the aggregated buffer followed
/// by imitation steps. Randomness comes from the `dagger` and
/// `policy-batch` streams of `seed`.
pub fn train_dagger(
    config: &ScalConfig,
    env: &Environment,
    expert: &dyn Expert,
    initial: &PolicyParams,
    seed: u64,
    provenance: Provenance,
) -> Result<DaggerOutcome, TrainingError> {
    train_dagger_observed(config, env, expert, initial, seed, provenance, &mut |_, _| {})
}

/// [`train_dagger`] with a per-round callback on the current policy.
pub fn train_dagger_observed(
    config: &ScalConfig,
    env: &Environment,
    expert: &dyn Expert,
    initial: &PolicyParams,
    seed: u64,
    provenance: Provenance,
    observer: &mut dyn FnMut(usize, &PolicyParams),
) -> Result<DaggerOutcome, TrainingError> {
    config.check()?;
    let mut streams = Streams::new(seed);
    let mut policy = initial.clone();
    let mut opt = PolicyOptimizer::new(&policy, AdamConfig::with_lr(config.policy_lr));
    let mut b_s = Buffer::new(None, provenance);
    let mut history = History::default();
    b_s.extend(collect_source_dagger(
        env,
        expert,
        &policy,
        1.0,
        config.warm_start_steps,
        &episodes(config),
        &mut streams.dagger,
    )?)?;
    history.phases.push(Phase::WarmStart);
    for round in 0..config.rounds {
        let t0 = config.record_wall_time.then(Instant::now);
        let beta = config.beta(round);
        b_s.extend(collect_source_dagger(
            env,
            expert,
            &policy,
            beta,
            config.steps_per_round,
            &episodes(config),
            &mut streams.dagger,
        )?)?;
        history.phases.push(Phase::Fill { round });
        let mut js = Vec::with_capacity(config.policy_steps);
        for _ in 0..config.policy_steps {
            let snapshot = policy.clone();
            let (j, _) = policy_step(&mut policy, &mut opt, &b_s, config.policy_batch, None, &mut streams.policy_batch)
                .map_err(|e| at_round(e, round, snapshot))?;
            js.push(j);
        }
        history.phases.push(Phase::Policy { round, steps: config.policy_steps });
        history.rows.push(HistoryRow {
            round,
            j_s: mean(&js),
            j_adv: None,
            kl_hat: None,
            disc_loss: None,
            beta,
            wall_ms: elapsed_ms(t0),
        });
        observer(round, &policy);
    }
    Ok(DaggerOutcome { policy, source_buffer: b_s, history })
}

/// Tags a failed policy step with its round and the pre-step parameters.
fn at_round(e: TrainingError, round: usize, snapshot: PolicyParams) -> TrainingError {
    match e {
        TrainingError::NonFinite { detail, .. } => {
            TrainingError::NonFinite { round, detail, snapshot: Box::new(snapshot) }
        }
        TrainingError::Numerics(n) => {
            TrainingError::NonFinite { round, detail: n.to_string(), snapshot: Box::new(snapshot) }
        }
        other => other,
    }
}

/// Fully supervised DAgger run directly in the target environment.
pub fn train_dagger_oracle(
    config: &ScalConfig,
    env_t: &Environment,
    expert: &dyn Expert,
    initial: &PolicyParams,
    seed: u64,
    provenance: Provenance,
) -> Result<DaggerOutcome, TrainingError> {
    train_dagger(config, env_t, expert, initial, seed, provenance)
}

/// The alternating SCAL loop. Only the source environment ever reaches the
/// expert; the target side is the fixed, label-free buffer `b_t`.
pub fn scal_train(
    config: &ScalConfig,
    env_s: &Environment,
    expert: &dyn Expert,
    b_t: &Buffer<TargetRecord>,
    initial: &PolicyParams,
    seed: u64,
    provenance: Provenance,
) -> Result<ScalOutcome, TrainingError> {
    scal_train_observed(config, env_s, expert, b_t, initial, seed, provenance, &mut |_, _| {})
}

/// [`scal_train`] with a callback invoked after every round on the current
/// policy. The callback sees the parameters only and cannot alter training.
#[allow(clippy::too_many_arguments)]
pub fn scal_train_observed(
    config: &ScalConfig,
    env_s: &Environment,
    expert: &dyn Expert,
    b_t: &Buffer<TargetRecord>,
    initial: &PolicyParams,
    seed: u64,
    provenance: Provenance,
    observer: &mut dyn FnMut(usize, &PolicyParams),
) -> Result<ScalOutcome, TrainingError> {
    config.check()?;
    if b_t.is_empty() {
        return Err(TrainingError::Precondition("target buffer is empty".into()));
    }
    let mut streams = Streams::new(seed);
    let mut disc_rng = stream(seed, "disc-batch");
    let mut policy = initial.clone();
    let mut opt = PolicyOptimizer::new(&policy, AdamConfig::with_lr(config.policy_lr));
    let mut disc = DiscriminatorParams::random(
        policy.latent_dim(),
        STATE_DIM,
        config.disc_hidden,
        &mut stream(seed, "disc-init"),
    )?;
    let mut disc_opt = OptimizerState::new("discriminator", &disc.net, AdamConfig::with_lr(config.disc_lr));

    let mut b_s = Buffer::new(None, provenance);
    let mut history = History::default();
    b_s.extend(collect_source_dagger(
        env_s,
        expert,
        &policy,
        1.0,
        config.warm_start_steps,
        &episodes(config),
        &mut streams.dagger,
    )?)?;
    history.phases.push(Phase::WarmStart);

    // fitted once, after the warm-start fill, then frozen
    let kde_s = fit_kde(&b_s.records().iter().map(|r| r.x).collect::<Vec<_>>())?;
    let kde_t = fit_kde(&b_t.records().iter().map(|r| r.x).collect::<Vec<_>>())?;
    let mut weights: Vec<f64> =
        b_s.records().iter().map(|r| density_ratio(&kde_s, &kde_t, r.x.as_slice())).collect();

    for round in 0..config.rounds {
        let t0 = config.record_wall_time.then(Instant::now);
        let beta = config.beta(round);

        let mut disc_losses = Vec::with_capacity(config.k_disc);
        for _ in 0..config.k_disc {
            let ns = b_s.len();
            let nt = b_t.len();
            let bs = config.disc_batch;
            let src: Vec<&SourceRecord> =
                (0..bs).map(|_| &b_s.records()[disc_rng.random_range(0..ns)]).collect();
            let tgt: Vec<&TargetRecord> =
                (0..bs).map(|_| &b_t.records()[disc_rng.random_range(0..nt)]).collect();
            let ls = encode_rows(&policy, src.iter().map(|r| r.y.as_slice()))?;
            let lt = encode_rows(&policy, tgt.iter().map(|r| r.y.as_slice()))?;
            let fs = crate::alignment::fuse(&ls, &src.iter().map(|r| r.x).collect::<Vec<_>>())?;
            let ft = crate::alignment::fuse(&lt, &tgt.iter().map(|r| r.x).collect::<Vec<_>>())?;
            let (loss, grads) = discriminator_loss_and_grad(&disc, &fs, &ft)?;
            disc_opt.step(&mut disc.net, &grads.net).map_err(|e| TrainingError::NonFinite {
                round,
                detail: e.to_string(),
                snapshot: Box::new(policy.clone()),
            })?;
            disc_losses.push(loss);
        }
        history.phases.push(Phase::Discriminator { round, steps: config.k_disc });

        let fresh = collect_source_dagger(
            env_s,
            expert,
            &policy,
            beta,
            config.steps_per_round,
            &episodes(config),
            &mut streams.dagger,
        )?;
        weights.extend(fresh.iter().map(|r| density_ratio(&kde_s, &kde_t, r.x.as_slice())));
        b_s.extend(fresh)?;
        history.phases.push(Phase::Fill { round });

        let mut js = Vec::with_capacity(config.policy_steps);
        let mut jadv = Vec::with_capacity(config.policy_steps);
        let adversary = Adversary {
            disc: &disc,
            weights: &weights,
            lambda: config.lambda,
            self_normalize: config.self_normalize_weights,
        };
        for _ in 0..config.policy_steps {
            let snapshot = policy.clone();
            let (j, a) = policy_step(
                &mut policy,
                &mut opt,
                &b_s,
                config.policy_batch,
                Some(&adversary),
                &mut streams.policy_batch,
            )
            .map_err(|e| at_round(e, round, snapshot))?;
            js.push(j);
            jadv.push(a.unwrap_or(0.0));
        }
        history.phases.push(Phase::Policy { round, steps: config.policy_steps });

        let window = b_s.len().saturating_sub(config.kl_eval_records);
        let recs = &b_s.records()[window..];
        let lat = encode_rows(&policy, recs.iter().map(|r| r.y.as_slice()))?;
        let xs: Vec<_> = recs.iter().map(|r| r.x).collect();
        let kl_hat = weighted_logit_mean(&disc, &lat, &xs, &weights[window..])?;
        let row = HistoryRow {
            round,
            j_s: mean(&js),
            j_adv: Some(mean(&jadv)),
            kl_hat: Some(kl_hat),
            disc_loss: Some(mean(&disc_losses)),
            beta,
            wall_ms: elapsed_ms(t0),
        };
        if ![row.j_s, kl_hat, row.disc_loss.unwrap(), row.j_adv.unwrap()].iter().all(|v| v.is_finite()) {
            return Err(TrainingError::NonFinite {
                round,
                detail: format!("history row {row:?}"),
                snapshot: Box::new(policy),
            });
        }
        history.rows.push(row);
        observer(round, &policy);
    }
    Ok(ScalOutcome {
        policy,
        discriminator: disc,
        kde_source: kde_s,
        kde_target: kde_t,
        source_buffer: b_s,
        source_weights: weights,
        history,
    })
}
