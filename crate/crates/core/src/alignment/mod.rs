//! State-conditional discriminator, KDE state marginals and the
//! conditional-KL estimator built from them.

mod discriminator;
mod kde;

pub use discriminator::{
    discriminator_loss, discriminator_loss_and_grad, discriminator_loss_node, fuse, logit,
    logit_node, logit_ratio, train_discriminator, DiscriminatorOptimizer, DiscriminatorParams,
    Q_CLAMP,
};
pub use kde::{fit_kde, kde_density, KdeModel, BANDWIDTH_FLOOR, DENSITY_FLOOR};

use crate::agent::{encode, PolicyParams, PolicyVars};
use crate::numerics::{DenseArray, Graph, MlpVars, NumericsError, Var};

pub const RATIO_CLAMP: (f64, f64) = (1e-3, 1e3);

#[derive(Debug, thiserror::Error)]
pub enum AlignmentError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `clamp(p̂_t(x) / p̂_s(x), 1e-3, 1e3)`.
pub fn density_ratio(kde_s: &KdeModel, kde_t: &KdeModel, x: &[f64]) -> f64 {
    (kde_density(kde_t, x) / kde_density(kde_s, x)).clamp(RATIO_CLAMP.0, RATIO_CLAMP.1)
}

/// Mean of `logit(Q(l, x)) · w` over paired rows.
pub fn weighted_logit_mean<L: AsRef<[f64]>, X: AsRef<[f64]>>(
    disc: &DiscriminatorParams,
    latents: &[L],
    states: &[X],
    weights: &[f64],
) -> Result<f64, AlignmentError> {
    if latents.is_empty() {
        return Err(AlignmentError::Precondition("estimator needs a nonempty buffer".into()));
    }
    if weights.len() != latents.len() {
        return Err(AlignmentError::Precondition("one weight per record required".into()));
    }
    let fused = fuse(latents, states)?;
    let q = disc.probabilities(&fused)?;
    let total: f64 = q.iter().zip(weights).map(|(&q, &w)| logit(q) * w).sum();
    Ok(total / latents.len() as f64)
}

/// Conditional-KL estimate from latents that are already encoded.
pub fn estimate_conditional_kl_latents<L: AsRef<[f64]>, X: AsRef<[f64]>>(
    disc: &DiscriminatorParams,
    kde_s: &KdeModel,
    kde_t: &KdeModel,
    latents: &[L],
    states: &[X],
) -> Result<f64, AlignmentError> {
    let weights: Vec<f64> =
        states.iter().map(|x| density_ratio(kde_s, kde_t, x.as_ref())).collect();
    weighted_logit_mean(disc, latents, states, &weights)
}

/// Conditional-KL estimate over source observations, encoded through the
/// policy encoder.
pub fn estimate_conditional_kl<Y: AsRef<[f64]>, X: AsRef<[f64]>>(
    disc: &DiscriminatorParams,
    kde_s: &KdeModel,
    kde_t: &KdeModel,
    observations: &[Y],
    states: &[X],
    policy: &PolicyParams,
) -> Result<f64, AlignmentError> {
    let latents = observations
        .iter()
        .map(|y| encode(policy, y.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    estimate_conditional_kl_latents(disc, kde_s, kde_t, &latents, states)
}

/// `J_adv` as a graph node over encoder latents `l` and constant states and
/// weights. `disc` must be bound with `trainable = false`.
pub fn domain_confusion_node(
    g: &mut Graph,
    disc: &MlpVars,
    latents: Var,
    states: Var,
    weights: Var,
) -> Result<Var, NumericsError> {
    let fused = g.concat(latents, states)?;
    let z = logit_node(g, disc, fused)?;
    let wz = g.mul(z, weights)?;
    Ok(g.mean(wz))
}

/// Source minibatch for the confusion loss.
#[derive(Debug, Clone)]
pub struct ConfusionBatch {
    /// `[B, obs]`
    pub y: DenseArray,
    /// `[B, state]`
    pub x: DenseArray,
    /// `[B, 1]` density-ratio weights
    pub w: DenseArray,
}

/// Value and encoder gradient of `J_adv`. The discriminator enters the graph
/// as constants, so it cannot receive a gradient.
pub fn domain_confusion_loss(
    disc: &DiscriminatorParams,
    batch: &ConfusionBatch,
    policy: &PolicyParams,
) -> Result<(f64, PolicyParams), AlignmentError> {
    if batch.y.rows() == 0 || batch.y.is_empty() {
        return Err(AlignmentError::Precondition("confusion loss on an empty minibatch".into()));
    }
    let mut g = Graph::new();
    let pv: PolicyVars = policy.bind(&mut g);
    let dv = disc.net.bind(&mut g, false);
    let y = g.constant(&batch.y);
    let x = g.constant(&batch.x);
    let w = g.constant(&batch.w);
    let l = pv.latents(&mut g, y)?;
    let j = domain_confusion_node(&mut g, &dv, l, x, w)?;
    let value = g.scalar(j);
    let grads = g.backward(j)?;
    debug_assert!(!dv.has_any_gradient(&grads));
    Ok((value, pv.grads(policy, &grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::PolicyDims;
    use crate::numerics::Layer;
    use crate::numerics::{Activation, MlpParams};
    use crate::rng::stream;

    fn half_disc(width: usize) -> DiscriminatorParams {
        DiscriminatorParams {
            net: MlpParams::new(vec![
                Layer {
                    weight: DenseArray::zeros(vec![2, width]),
                    bias: DenseArray::zeros(vec![2]),
                    activation: Activation::Relu,
                },
                Layer {
                    weight: DenseArray::zeros(vec![1, 2]),
                    bias: DenseArray::zeros(vec![1]),
                    activation: Activation::Sigmoid,
                },
            ])
            .unwrap(),
        }
    }

    fn small_policy() -> PolicyParams {
        let dims = PolicyDims { obs_dim: 4, hidden_dim: 6, latent_dim: 3, vel_proj_dim: 2 };
        PolicyParams::random(&dims, &mut stream(11, "p")).unwrap()
    }

    fn batch(n: usize, scale: f64) -> ConfusionBatch {
        let mut r = stream(12, "b");
        use rand::Rng;
        let y: Vec<f64> = (0..n * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n * 2).map(|_| r.random_range(-0.5..0.5)).collect();
        let w: Vec<f64> = (0..n).map(|_| scale * r.random_range(0.5..2.0)).collect();
        ConfusionBatch {
            y: DenseArray::matrix(n, 4, y).unwrap(),
            x: DenseArray::matrix(n, 2, x).unwrap(),
            w: DenseArray::matrix(n, 1, w).unwrap(),
        }
    }

    #[test]
    fn half_scoring_gives_zero_confusion() {
        let (v, _) = domain_confusion_loss(&half_disc(5), &batch(6, 1.0), &small_policy()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn confusion_is_linear_in_weights() {
        let mut r = stream(13, "d");
        let d = DiscriminatorParams::random(3, 2, 8, &mut r).unwrap();
        let p = small_policy();
        let (a, ga) = domain_confusion_loss(&d, &batch(6, 1.0), &p).unwrap();
        let (b, gb) = domain_confusion_loss(&d, &batch(6, 2.0), &p).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * a.abs().max(1.0));
        for (x, y) in ga.encoder.flat().iter().zip(gb.encoder.flat()) {
            assert!((y - 2.0 * x).abs() < 1e-12);
        }
        // head and velocity projection do not influence J_adv
        assert!(ga.head.flat().iter().all(|&v| v == 0.0));
        assert!(ga.vel_proj.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn estimator_equals_weighted_logit_mean() {
        let mut r = stream(14, "e");
        let d = DiscriminatorParams::random(3, 2, 8, &mut r).unwrap();
        let p = small_policy();
        let b = batch(10, 1.0);
        let ys: Vec<&[f64]> = (0..10).map(|i| b.y.row(i)).collect();
        let xs: Vec<&[f64]> = (0..10).map(|i| b.x.row(i)).collect();
        let kde_s = fit_kde(&xs).unwrap();
        let kde_t = KdeModel::from_parts(vec![vec![0.1, 0.1]], vec![0.3, 0.3]).unwrap();
        let est = estimate_conditional_kl(&d, &kde_s, &kde_t, &ys, &xs, &p).unwrap();
        let mut manual = 0.0;
        for i in 0..10 {
            let l = encode(&p, ys[i]).unwrap();
            let w = (kde_density(&kde_t, xs[i]) / kde_density(&kde_s, xs[i])).clamp(1e-3, 1e3);
            manual += logit_ratio(&d, &l, xs[i]).unwrap() * w;
        }
        assert!((est - manual / 10.0).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_rejected() {
        let d = half_disc(5);
        let k = KdeModel::from_parts(vec![vec![0.0, 0.0]], vec![1.0, 1.0]).unwrap();
        let none: Vec<Vec<f64>> = vec![];
        assert!(estimate_conditional_kl_latents(&d, &k, &k, &none, &none).is_err());
        assert!(domain_confusion_loss(&d, &batch(0, 1.0), &small_policy()).is_err());
    }
}
