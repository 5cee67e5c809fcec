use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::agent::{encode, PolicyParams};
use crate::alignment::{
    estimate_conditional_kl_latents, fit_kde, fuse, train_discriminator, DiscriminatorOptimizer,
    DiscriminatorParams,
};
use crate::numerics::AdamConfig;
use crate::training::{SourceRecord, TargetRecord};
use crate::world::STATE_DIM;

/// Settings for an after-the-fact conditional-KL estimate: a fresh
/// discriminator is trained against the frozen encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlProbe {
    pub disc_hidden: usize,
    pub disc_steps: usize,
    pub disc_batch: usize,
    pub disc_lr: f64,
    /// Trailing source records used; the target buffer is used whole.
    pub max_source_records: usize,
}

impl Default for KlProbe {
    fn default() -> Self {
        Self { disc_hidden: 64, disc_steps: 1500, disc_batch: 256, disc_lr: 3e-3, max_source_records: 2048 }
    }
}

impl KlProbe {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("probe.disc_hidden", self.disc_hidden),
            ("probe.disc_steps", self.disc_steps),
            ("probe.disc_batch", self.disc_batch),
            ("probe.max_source_records", self.max_source_records),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if !(self.disc_lr > 0.0 && self.disc_lr.is_finite()) {
            errs.push("probe.disc_lr must be positive".into());
        }
        errs
    }
}

/// `L̂` for a frozen `policy` from labelled source records and the
/// label-free target buffer.
pub fn probe_conditional_kl<R: Rng + ?Sized>(
    policy: &PolicyParams,
    source: &[SourceRecord],
    target: &[TargetRecord],
    probe: &KlProbe,
    rng: &mut R,
) -> Result<f64, EvalError> {
    if source.is_empty() || target.is_empty() {
        return Err(EvalError::Precondition("KL probe needs nonempty source and target buffers".into()));
    }
    let source = &source[source.len().saturating_sub(probe.max_source_records)..];
    let ls = source.iter().map(|r| encode(policy, &r.y)).collect::<Result<Vec<_>, _>>()?;
    let lt = target.iter().map(|r| encode(policy, &r.y)).collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<_> = source.iter().map(|r| r.x).collect();
    let xt: Vec<_> = target.iter().map(|r| r.x).collect();
    let fs = fuse(&ls, &xs)?;
    let ft = fuse(&lt, &xt)?;
    let mut disc = DiscriminatorParams::random(policy.latent_dim(), STATE_DIM, probe.disc_hidden, rng)?;
    let mut opt = DiscriminatorOptimizer::new(&disc, AdamConfig::with_lr(probe.disc_lr));
    train_discriminator(&mut disc, &mut opt, &fs, &ft, probe.disc_steps, probe.disc_batch, rng)?;
    let kde_s = fit_kde(&xs)?;
    let kde_t = fit_kde(&xt)?;
    Ok(estimate_conditional_kl_latents(&disc, &kde_s, &kde_t, &ls, &xs)?)
}
