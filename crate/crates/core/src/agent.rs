//! Observation-feedback policy: encoder, velocity projection and a single
//! linear decision head over the fused vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{
    forward_one, Activation, AdamConfig, DenseArray, Graph, MlpParams, MlpVars, NumericsError,
    OptimizerState, Var,
};
use crate::world::Action;

/// Uniform bound on the squared-distance imitation loss over the action box.
pub const LOSS_BOUND_ALPHA: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDims {
    pub obs_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub vel_proj_dim: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        Self { obs_dim: 32, hidden_dim: 64, latent_dim: 32, vel_proj_dim: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub encoder: MlpParams,
    pub head: MlpParams,
    pub vel_proj: MlpParams,
}

impl PolicyParams {
    pub fn random<R: Rng + ?Sized>(dims: &PolicyDims, rng: &mut R) -> Result<Self, NumericsError> {
        let encoder = MlpParams::random(
            &[dims.obs_dim, dims.hidden_dim, dims.latent_dim],
            &[Activation::Tanh, Activation::Tanh],
            rng,
        )?;
        let vel_proj = MlpParams::random(&[1, dims.vel_proj_dim], &[Activation::Identity], rng)?;
        // small head so the initial policy starts near the zero action
        let head = MlpParams::random(
            &[dims.latent_dim + dims.vel_proj_dim, 2],
            &[Activation::Identity],
            rng,
        )?
        .scaled(0.1);
        Self::new(encoder, head, vel_proj)
    }

    pub fn new(encoder: MlpParams, head: MlpParams, vel_proj: MlpParams) -> Result<Self, NumericsError> {
        if vel_proj.in_dim() != 1 {
            return Err(NumericsError::Dimension("velocity projection must take one input".into()));
        }
        if head.in_dim() != encoder.out_dim() + vel_proj.out_dim() || head.out_dim() != 2 {
            return Err(NumericsError::Dimension(format!(
                "head maps {} -> {}, expected {} -> 2",
                head.in_dim(),
                head.out_dim(),
                encoder.out_dim() + vel_proj.out_dim()
            )));
        }
        Ok(Self { encoder, head, vel_proj })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
            vel_proj: self.vel_proj.zeros_like(),
        }
    }

    pub fn nets(&self) -> [&MlpParams; 3] {
        [&self.encoder, &self.head, &self.vel_proj]
    }

    /// Binds all three nets as trainable graph parameters.
    pub fn bind(&self, g: &mut Graph) -> PolicyVars {
        PolicyVars {
            encoder: self.encoder.bind(g, true),
            head: self.head.bind(g, true),
            vel_proj: self.vel_proj.bind(g, true),
        }
    }
}

/// Latent code of one observation.
pub fn encode(policy: &PolicyParams, y: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if y.len() != policy.obs_dim() {
        return Err(NumericsError::Dimension(format!(
            "observation has {} entries, policy expects {}",
            y.len(),
            policy.obs_dim()
        )));
    }
    Ok(forward_one(&policy.encoder, y))
}

/// Head output before the action-box clamp.
pub fn act_unclamped(policy: &PolicyParams, latent: &[f64], v_long: f64) -> [f64; 2] {
    let mut fused = latent.to_vec();
    fused.extend(forward_one(&policy.vel_proj, &[v_long]));
    let out = forward_one(&policy.head, &fused);
    [out[0], out[1]]
}

pub fn act(policy: &PolicyParams, y: &[f64], v_long: f64) -> Result<Action, NumericsError> {
    let l = encode(policy, y)?;
    let [a, s] = act_unclamped(policy, &l, v_long);
    Ok(Action::new(a, s))
}

#[derive(Debug, Clone)]
pub struct PolicyVars {
    pub encoder: MlpVars,
    pub head: MlpVars,
    pub vel_proj: MlpVars,
}

impl PolicyVars {
    /// `[B, latent]` latents for a `[B, obs]` observation node.
    pub fn latents(&self, g: &mut Graph, y: Var) -> Result<Var, NumericsError> {
        self.encoder.forward(g, y)
    }

    /// Clamped `[B, 2]` actions from latents and a `[B, 1]` speed node.
    pub fn actions_from_latents(&self, g: &mut Graph, l: Var, v: Var) -> Result<Var, NumericsError> {
        let vp = self.vel_proj.forward(g, v)?;
        let fused = g.concat(l, vp)?;
        let raw = self.head.forward(g, fused)?;
        Ok(g.clamp(raw, -1.0, 1.0))
    }

    pub fn grads(&self, like: &PolicyParams, grads: &crate::numerics::Gradients) -> PolicyParams {
        PolicyParams {
            encoder: self.encoder.grads(&like.encoder, grads),
            head: self.head.grads(&like.head, grads),
            vel_proj: self.vel_proj.grads(&like.vel_proj, grads),
        }
    }
}

/// Matrices for one imitation minibatch.
#[derive(Debug, Clone)]
pub struct ImitationBatch {
    /// `[B, obs]`
    pub y: DenseArray,
    /// `[B, 1]`
    pub v: DenseArray,
    /// `[B, 2]`
    pub u: DenseArray,
}

impl ImitationBatch {
    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Graph node for the batch mean of `‖clamp(π(y)) − u*‖²`.
pub fn imitation_loss_node(
    g: &mut Graph,
    vars: &PolicyVars,
    batch: &ImitationBatch,
) -> Result<(Var, Var), NumericsError> {
    if batch.is_empty() {
        return Err(NumericsError::Dimension("imitation loss on an empty batch".into()));
    }
    let y = g.constant(&batch.y);
    let v = g.constant(&batch.v);
    let u = g.constant(&batch.u);
    let l = vars.latents(g, y)?;
    let pred = vars.actions_from_latents(g, l, v)?;
    let diff = g.sub(pred, u)?;
    let sq = g.square(diff);
    let per = g.sum_cols(sq);
    Ok((g.mean(per), l))
}

pub fn imitation_loss(policy: &PolicyParams, batch: &ImitationBatch) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let vars = policy.bind(&mut g);
    let (loss, _) = imitation_loss_node(&mut g, &vars, batch)?;
    Ok(g.scalar(loss))
}

/// Adam state for the three policy nets.
#[derive(Debug, Clone)]
pub struct PolicyOptimizer {
    encoder: OptimizerState,
    head: OptimizerState,
    vel_proj: OptimizerState,
}

impl PolicyOptimizer {
    pub fn new(policy: &PolicyParams, config: AdamConfig) -> Self {
        Self {
            encoder: OptimizerState::new("encoder", &policy.encoder, config),
            head: OptimizerState::new("head", &policy.head, config),
            vel_proj: OptimizerState::new("vel_proj", &policy.vel_proj, config),
        }
    }

    pub fn step(&mut self, policy: &mut PolicyParams, grads: &PolicyParams) -> Result<(), NumericsError> {
        // validate everything before mutating anything
        let mut p = policy.clone();
        let mut s = self.clone();
        s.encoder.step(&mut p.encoder, &grads.encoder)?;
        s.head.step(&mut p.head, &grads.head)?;
        s.vel_proj.step(&mut p.vel_proj, &grads.vel_proj)?;
        *policy = p;
        *self = s;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub encoder: MlpParams,
    pub head: MlpParams,
    pub vel_proj: MlpParams,
    pub config_hash: String,
}

impl PolicyCheckpoint {
    pub fn new(policy: &PolicyParams, config_hash: &str) -> Self {
        Self {
            encoder: policy.encoder.clone(),
            head: policy.head.clone(),
            vel_proj: policy.vel_proj.clone(),
            config_hash: config_hash.to_string(),
        }
    }

    pub fn into_policy(self) -> Result<PolicyParams, NumericsError> {
        PolicyParams::new(self.encoder, self.head, self.vel_proj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{forward_mlp, Layer};
    use crate::rng::stream;
    use rand::Rng;

    fn small_policy(seed: u64) -> PolicyParams {
        let dims = PolicyDims { obs_dim: 6, hidden_dim: 5, latent_dim: 4, vel_proj_dim: 2 };
        let mut p = PolicyParams::random(&dims, &mut stream(seed, "policy")).unwrap();
        p.head = p.head.scaled(10.0);
        p
    }

    #[test]
    fn zero_encoder_gives_tanh_of_bias() {
        let mut p = small_policy(1);
        p.encoder = p.encoder.zeros_like();
        let mut flat = p.encoder.flat();
        // set the final bias to known values; all weights stay zero
        let n = flat.len();
        let lat = p.latent_dim();
        for (k, v) in flat[n - lat..].iter_mut().enumerate() {
            *v = 0.1 * k as f64 - 0.2;
        }
        p.encoder.set_flat(&flat);
        let l1 = encode(&p, &[1.0, -2.0, 3.0, 0.0, 0.5, 9.0]).unwrap();
        let l2 = encode(&p, &[0.0; 6]).unwrap();
        assert_eq!(l1, l2);
        for (k, v) in l1.iter().enumerate() {
            assert!((v - (0.1 * k as f64 - 0.2).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_is_deterministic_and_matches_forward_mlp() {
        let p = small_policy(2);
        let mut r = stream(2, "y");
        let y: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = encode(&p, &y).unwrap();
        assert_eq!(a, encode(&p, &y).unwrap());
        let reference = forward_mlp(&p.encoder, &DenseArray::vector(y)).unwrap();
        assert_eq!(a, reference.data());
    }

    #[test]
    fn zero_policy_outputs_zero_action() {
        let p = small_policy(3).zeros_like();
        assert_eq!(act(&p, &[0.3; 6], 1.2).unwrap(), Action::zero());
    }

    #[test]
    fn head_output_is_clamped() {
        // head bias (3, -0.2), all weights zero
        let mut p = small_policy(4);
        p.head = MlpParams::new(vec![Layer {
            weight: DenseArray::zeros(vec![2, 6]),
            bias: DenseArray::vector(vec![3.0, -0.2]),
            activation: Activation::Identity,
        }])
        .unwrap();
        let a = act(&p, &[0.0; 6], 1.0).unwrap();
        assert_eq!(a, Action { u_a: 1.0, u_steer: -0.2 });
    }

    #[test]
    fn act_composes_encode_and_head() {
        let p = small_policy(5);
        let y = [0.2, -0.4, 0.1, 0.9, -0.3, 0.0];
        let l = encode(&p, &y).unwrap();
        let vp = forward_mlp(&p.vel_proj, &DenseArray::vector(vec![1.3])).unwrap();
        let mut fused = l.clone();
        fused.extend_from_slice(vp.data());
        let raw = forward_mlp(&p.head, &DenseArray::vector(fused)).unwrap();
        let a = act(&p, &y, 1.3).unwrap();
        assert_eq!(a, Action::new(raw.data()[0], raw.data()[1]));
    }

    #[test]
    fn loss_is_zero_on_own_predictions_and_two_on_unit_gap() {
        let p = small_policy(6);
        let ys = vec![vec![0.1; 6], vec![-0.3; 6]];
        let vs = [1.0, 1.4];
        let us: Vec<Vec<f64>> =
            ys.iter().zip(vs).map(|(y, v)| act(&p, y, v).unwrap().to_array().to_vec()).collect();
        let batch = ImitationBatch {
            y: DenseArray::from_rows(&ys).unwrap(),
            v: DenseArray::matrix(2, 1, vs.to_vec()).unwrap(),
            u: DenseArray::from_rows(&us).unwrap(),
        };
        assert!(imitation_loss(&p, &batch).unwrap().abs() < 1e-24);

        let z = p.zeros_like();
        let one = ImitationBatch {
            y: DenseArray::matrix(1, 6, vec![0.5; 6]).unwrap(),
            v: DenseArray::matrix(1, 1, vec![1.0]).unwrap(),
            u: DenseArray::matrix(1, 2, vec![1.0, 1.0]).unwrap(),
        };
        assert_eq!(imitation_loss(&z, &one).unwrap(), 2.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let p = small_policy(7);
        let batch = ImitationBatch {
            y: DenseArray::zeros(vec![0, 6]),
            v: DenseArray::zeros(vec![0, 1]),
            u: DenseArray::zeros(vec![0, 2]),
        };
        assert!(imitation_loss(&p, &batch).is_err());
    }

    #[test]
    fn checkpoint_round_trips() {
        let p = small_policy(8);
        let ck = PolicyCheckpoint::new(&p, "abc");
        let text = serde_json::to_string(&ck).unwrap();
        let back: PolicyCheckpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config_hash, "abc");
        assert_eq!(back.into_policy().unwrap(), p);
    }
}
