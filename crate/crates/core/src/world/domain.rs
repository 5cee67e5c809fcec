//! Stochastic observation domains.
//!
//! An observation is `y = tanh(gain · (P · φ(x, v) + o)) + η` with
//! `η ~ N(0, noise_std² I)`. The lift `φ` reads only the conditioning state
//! and the longitudinal speed, never the raw arc position.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use super::state::ConditioningState;
use super::WorldError;
use crate::numerics::DenseArray;
use crate::rng;

pub const OBS_DIM: usize = 32;
pub const FEATURE_DIM: usize = 25;

/// Nominal ranges used to bring each state component to unit scale inside
/// the feature lift.
const STATE_SCALE: [f64; 5] = [0.3, 0.2, 0.7, 0.7, 0.7];
const SPEED_CENTER: f64 = 1.5;
const SPEED_SCALE: f64 = 0.5;

/// Fixed nonlinear lift of `(x, v_long)` into `FEATURE_DIM` features:
/// scaled state, speed, pairwise products, squares and four sinusoids.
pub fn feature_map(x: &ConditioningState, v_long: f64) -> [f64; FEATURE_DIM] {
    let mut z = [0.0; 5];
    for i in 0..5 {
        z[i] = x.0[i] / STATE_SCALE[i];
    }
    let mut f = [0.0; FEATURE_DIM];
    f[..5].copy_from_slice(&z);
    f[5] = (v_long - SPEED_CENTER) / SPEED_SCALE;
    let mut k = 6;
    for i in 0..5 {
        for j in (i + 1)..5 {
            f[k] = 0.5 * z[i] * z[j];
            k += 1;
        }
    }
    for zi in z {
        f[k] = 0.5 * zi * zi;
        k += 1;
    }
    f[k] = (z[0] + z[1]).sin();
    f[k + 1] = (z[0] - z[1]).cos();
    f[k + 2] = (z[2] - z[4]).sin();
    f[k + 3] = (z[2] + z[3]).cos();
    debug_assert_eq!(k + 4, FEATURE_DIM);
    f
}

/// Compact, seed-reproducible description of a domain.
///
/// The projection and offset are a rotation between a family-wide base draw
/// and an id-specific draw: `P = cos(θ)·P_base + sin(θ)·P_id` with
/// `θ = mix·π/2`, applied to the last `shifted_channels` observation
/// channels only; the others always use the base draw. Those channels also
/// receive an extra `offset_shift · o_id` bias. `mix = 0` with
/// `offset_shift = 0` gives the base domain regardless of `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub id: String,
    pub family_seed: u64,
    pub mix: f64,
    pub warp_gain: f64,
    pub noise_std: f64,
    pub offset_scale: f64,
    #[serde(default)]
    pub offset_shift: f64,
    pub shifted_channels: usize,
}

impl DomainSpec {
    pub fn base(family_seed: u64) -> Self {
        Self {
            id: "base".into(),
            family_seed,
            mix: 0.0,
            warp_gain: 1.0,
            noise_std: 0.05,
            offset_scale: 0.5,
            offset_shift: 0.0,
            shifted_channels: OBS_DIM,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.noise_std > 0.0) {
            errs.push(format!("domain {}: noise_std must be > 0", self.id));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            errs.push(format!("domain {}: mix must lie in [0, 1]", self.id));
        }
        if !(self.warp_gain > 0.0) {
            errs.push(format!("domain {}: warp_gain must be > 0", self.id));
        }
        if !(self.offset_scale >= 0.0) {
            errs.push(format!("domain {}: offset_scale must be >= 0", self.id));
        }
        if !self.offset_shift.is_finite() {
            errs.push(format!("domain {}: offset_shift must be finite", self.id));
        }
        if self.shifted_channels > OBS_DIM {
            errs.push(format!("domain {}: shifted_channels must be at most {OBS_DIM}", self.id));
        }
        errs
    }

    pub fn build(&self) -> Result<DomainModel, WorldError> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(WorldError::Config(errs.join("; ")));
        }
        let draw = |name: &str| {
            let mut r = rng::stream(self.family_seed, name);
            let p_scale = 1.0 / (FEATURE_DIM as f64).sqrt();
            let p: Vec<f64> = (0..OBS_DIM * FEATURE_DIM)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut r);
                    p_scale * v
                })
                .collect();
            let o: Vec<f64> = (0..OBS_DIM).map(|_| StandardNormal.sample(&mut r)).collect();
            (p, o)
        };
        let (pb, ob) = draw("domain-base");
        let (pi, oi) = draw(&format!("domain/{}", self.id));
        let theta = self.mix * FRAC_PI_2;
        let (c, s) = (theta.cos(), theta.sin());
        let first_shifted = OBS_DIM - self.shifted_channels;
        let blend = |row: usize, a: f64, b: f64| if row >= first_shifted { c * a + s * b } else { a };
        let projection: Vec<f64> = pb
            .iter()
            .zip(&pi)
            .enumerate()
            .map(|(k, (a, b))| blend(k / FEATURE_DIM, *a, *b))
            .collect();
        let offset: Vec<f64> = ob
            .iter()
            .zip(&oi)
            .enumerate()
            .map(|(r, (a, b))| {
                let extra = if r >= first_shifted { self.offset_shift * b } else { 0.0 };
                self.offset_scale * blend(r, *a, *b) + extra
            })
            .collect();
        DomainModel::new(
            self.id.clone(),
            DenseArray::matrix(OBS_DIM, FEATURE_DIM, projection).expect("projection shape"),
            DenseArray::vector(offset),
            self.warp_gain,
            self.noise_std,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainModel {
    id: String,
    projection: DenseArray,
    offset: DenseArray,
    warp_gain: f64,
    noise_std: f64,
}

impl DomainModel {
    pub fn new(
        id: String,
        projection: DenseArray,
        offset: DenseArray,
        warp_gain: f64,
        noise_std: f64,
    ) -> Result<Self, WorldError> {
        if !(noise_std > 0.0) {
            return Err(WorldError::Config(format!("domain {id}: noise_std must be > 0")));
        }
        if projection.cols() != FEATURE_DIM || projection.rows() != offset.len() {
            return Err(WorldError::Config(format!(
                "domain {id}: projection {:?} and offset {} do not fit the feature lift",
                projection.shape(),
                offset.len()
            )));
        }
        Ok(Self { id, projection, offset, warp_gain, noise_std })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn obs_dim(&self) -> usize {
        self.offset.len()
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Noise-free observation mean `tanh(gain · (P φ + o))`.
    pub fn mean(&self, x: &ConditioningState, v_long: f64) -> Vec<f64> {
        let f = feature_map(x, v_long);
        let p = self.projection.data();
        self.offset
            .data()
            .iter()
            .enumerate()
            .map(|(r, o)| {
                let row = &p[r * FEATURE_DIM..(r + 1) * FEATURE_DIM];
                let z: f64 = row.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + o;
                (self.warp_gain * z).tanh()
            })
            .collect()
    }
}

/// Draws one observation from `domain` at `(x, v_long)`.
pub fn render_observation<R: Rng + ?Sized>(
    domain: &DomainModel,
    x: &ConditioningState,
    v_long: f64,
    rng: &mut R,
) -> Vec<f64> {
    let noise = Normal::new(0.0, domain.noise_std).expect("validated noise std");
    domain.mean(x, v_long).into_iter().map(|m| m + noise.sample(rng)).collect()
}

/// Closed-form KL `d_KL(e_s(·|x) ‖ e_t(·|x))` between the two isotropic
/// Gaussian observation models at one state.
pub fn analytic_obs_kl(
    source: &DomainModel,
    target: &DomainModel,
    x: &ConditioningState,
    v_long: f64,
) -> Result<f64, WorldError> {
    if source.obs_dim() != target.obs_dim() {
        return Err(WorldError::Config("domains disagree on obs_dim".into()));
    }
    let (ss, st) = (source.noise_std, target.noise_std);
    if !(ss > 0.0 && st > 0.0) {
        return Err(WorldError::Config("noise_std must be > 0".into()));
    }
    let d = source.obs_dim() as f64;
    let ms = source.mean(x, v_long);
    let mt = target.mean(x, v_long);
    let gap: f64 = ms.iter().zip(&mt).map(|(a, b)| (a - b) * (a - b)).sum();
    let var_term = d * ((st / ss).ln() + ss * ss / (2.0 * st * st) - 0.5);
    Ok((var_term + gap / (2.0 * st * st)).max(0.0))
}
