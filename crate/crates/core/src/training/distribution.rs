use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::world::{SimState, Track};

const RESAMPLE_CAP: usize = 1000;

/// Arc-position law of a single component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArcShape {
    UniformTrack,
    /// Wrapped normal around `center_s` with std `spread`, meters.
    GaussianArc { center_s: f64, spread: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub shape: ArcShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionKind {
    UniformTrack,
    GaussianArc { center_s: f64, spread: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

/// Off-policy state law: an arc-position law plus Gaussian perturbations of
/// lateral error, heading error and speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDistribution {
    pub arc: DistributionKind,
    pub e_s_std: f64,
    pub e_psi_std: f64,
    pub v_mean: f64,
    pub v_std: f64,
}

impl StateDistribution {
    pub fn uniform() -> Self {
        Self { arc: DistributionKind::UniformTrack, e_s_std: 0.08, e_psi_std: 0.08, v_mean: 1.5, v_std: 0.15 }
    }

    pub fn gaussian_arc(center_s: f64, spread: f64) -> Self {
        Self { arc: DistributionKind::GaussianArc { center_s, spread }, ..Self::uniform() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [("e_s_std", self.e_s_std), ("e_psi_std", self.e_psi_std), ("v_std", self.v_std)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be a finite nonnegative number"));
            }
        }
        if !(self.v_mean.is_finite()) {
            errs.push("v_mean must be finite".into());
        }
        let check_spread = |spread: f64, errs: &mut Vec<String>| {
            if !(spread > 0.0 && spread.is_finite()) {
                errs.push("gaussian_arc spread must be positive".into());
            }
        };
        match &self.arc {
            DistributionKind::UniformTrack => {}
            DistributionKind::GaussianArc { spread, .. } => check_spread(*spread, &mut errs),
            DistributionKind::Mixture { components } => {
                if components.is_empty() {
                    errs.push("mixture needs at least one component".into());
                }
                if components.iter().any(|c| !(c.weight > 0.0 && c.weight.is_finite())) {
                    errs.push("mixture weights must be positive".into());
                }
                for c in components {
                    if let ArcShape::GaussianArc { spread, .. } = c.shape {
                        check_spread(spread, &mut errs);
                    }
                }
            }
        }
        errs
    }

    fn arc_sample<R: Rng + ?Sized>(&self, track: &Track, rng: &mut R) -> f64 {
        let shape = match &self.arc {
            DistributionKind::UniformTrack => ArcShape::UniformTrack,
            DistributionKind::GaussianArc { center_s, spread } => {
                ArcShape::GaussianArc { center_s: *center_s, spread: *spread }
            }
            DistributionKind::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = &components[components.len() - 1].shape;
                for c in components {
                    if u < c.weight {
                        pick = &c.shape;
                        break;
                    }
                    u -= c.weight;
                }
                pick.clone()
            }
        };
        match shape {
            ArcShape::UniformTrack => rng.random::<f64>() * track.total_length(),
            ArcShape::GaussianArc { center_s, spread } => {
                let z: f64 = StandardNormal.sample(rng);
                track.wrap(center_s + spread * z)
            }
        }
    }

    /// One on-track state, resampling off-track draws up to a fixed cap.
    pub fn sample<R: Rng + ?Sized>(&self, track: &Track, rng: &mut R) -> Result<SimState, TrainingError> {
        for _ in 0..RESAMPLE_CAP {
            let s = self.arc_sample(track, rng);
            let n: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let st = SimState {
                s,
                e_s: self.e_s_std * n[0],
                e_psi: self.e_psi_std * n[1],
                v_long: (self.v_mean + self.v_std * n[2]).max(0.0),
                v_tran: 0.0,
            };
            if st.on_track(track) {
                return Ok(st);
            }
        }
        Err(TrainingError::Precondition(format!(
            "state distribution produced no on-track state in {RESAMPLE_CAP} draws"
        )))
    }
}
