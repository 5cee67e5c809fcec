use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AlignmentError;
use crate::numerics::{
    forward_mlp, loss_and_gradients, Activation, AdamConfig, DenseArray, Graph, MlpParams, MlpVars,
    NumericsError, OptimizerState, Var, SIGMOID_INPUT_CLAMP,
};

pub const Q_CLAMP: f64 = 1e-6;

/// `Q_ψ(l, x)`: probability that a fused `(latent, state)` row came from the
/// source buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscriminatorParams {
    pub net: MlpParams,
}

impl DiscriminatorParams {
    pub fn random<R: Rng + ?Sized>(
        latent_dim: usize,
        state_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AlignmentError> {
        let net = MlpParams::random(
            &[latent_dim + state_dim, hidden, 1],
            &[Activation::Relu, Activation::Sigmoid],
            rng,
        )?;
        Ok(Self { net })
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim()
    }

    /// `Q` for every row of a `[n, latent + state]` matrix.
    pub fn probabilities(&self, fused: &DenseArray) -> Result<Vec<f64>, AlignmentError> {
        Ok(forward_mlp(&self.net, fused)?.into_data())
    }
}

/// Row-wise `[l ‖ x]`.
pub fn fuse<L: AsRef<[f64]>, X: AsRef<[f64]>>(
    latents: &[L],
    states: &[X],
) -> Result<DenseArray, AlignmentError> {
    if latents.len() != states.len() {
        return Err(AlignmentError::Precondition(format!(
            "{} latents but {} states",
            latents.len(),
            states.len()
        )));
    }
    let rows: Vec<Vec<f64>> = latents
        .iter()
        .zip(states)
        .map(|(l, x)| l.as_ref().iter().chain(x.as_ref()).copied().collect())
        .collect();
    if rows.is_empty() {
        return Ok(DenseArray::zeros(vec![0, 0]));
    }
    Ok(DenseArray::from_rows(&rows)?)
}

/// `log Q − log(1 − Q)` with `Q` clamped to `[1e-6, 1 − 1e-6]`.
pub fn logit(q: f64) -> f64 {
    let q = q.clamp(Q_CLAMP, 1.0 - Q_CLAMP);
    q.ln() - (1.0 - q).ln()
}

pub fn logit_ratio(disc: &DiscriminatorParams, l: &[f64], x: &[f64]) -> Result<f64, AlignmentError> {
    let row: Vec<f64> = l.iter().chain(x).copied().collect();
    let q = disc.probabilities(&DenseArray::matrix(1, row.len(), row)?)?;
    Ok(logit(q[0]))
}

/// Graph node for the clamped logit of every row of `fused`. The logit of
/// a clamped sigmoid is the clamped pre-activation itself.
pub fn logit_node(
    g: &mut Graph,
    disc: &MlpVars,
    fused: Var,
) -> Result<Var, NumericsError> {
    let z = disc.forward_pre_activation(g, fused)?;
    Ok(g.clamp(z, -SIGMOID_INPUT_CLAMP, SIGMOID_INPUT_CLAMP))
}

/// `−mean_t log(1 − Q) − mean_s log Q` as a graph node.
pub fn discriminator_loss_node(
    g: &mut Graph,
    disc: &MlpVars,
    source: Var,
    target: Var,
) -> Result<Var, NumericsError> {
    let qs = disc.forward(g, source)?;
    let qt = disc.forward(g, target)?;
    let log_qs = g.log(qs)?;
    let one_minus = g.scale_shift(qt, -1.0, 1.0);
    let log_qt = g.log(one_minus)?;
    let ms = g.mean(log_qs);
    let mt = g.mean(log_qt);
    let sum = g.add(ms, mt)?;
    Ok(g.scale_shift(sum, -1.0, 0.0))
}

fn check_batches(source: &DenseArray, target: &DenseArray, width: usize) -> Result<(), AlignmentError> {
    if source.rows() == 0 || target.rows() == 0 || source.is_empty() || target.is_empty() {
        return Err(AlignmentError::Precondition("discriminator batches must be nonempty".into()));
    }
    if source.cols() != width || target.cols() != width {
        return Err(AlignmentError::Precondition(format!(
            "discriminator expects rows of width {width}"
        )));
    }
    Ok(())
}

pub fn discriminator_loss(
    disc: &DiscriminatorParams,
    source: &DenseArray,
    target: &DenseArray,
) -> Result<f64, AlignmentError> {
    Ok(discriminator_loss_and_grad(disc, source, target)?.0)
}

pub fn discriminator_loss_and_grad(
    disc: &DiscriminatorParams,
    source: &DenseArray,
    target: &DenseArray,
) -> Result<(f64, DiscriminatorParams), AlignmentError> {
    check_batches(source, target, disc.input_dim())?;
    let (v, mut grads) = loss_and_gradients(&[&disc.net], |g, vars| {
        let s = g.constant(source);
        let t = g.constant(target);
        discriminator_loss_node(g, &vars[0], s, t)
    })?;
    Ok((v, DiscriminatorParams { net: grads.remove(0) }))
}

#[derive(Debug, Clone)]
pub struct DiscriminatorOptimizer {
    state: OptimizerState,
}

impl DiscriminatorOptimizer {
    pub fn new(disc: &DiscriminatorParams, config: AdamConfig) -> Self {
        Self { state: OptimizerState::new("discriminator", &disc.net, config) }
    }
}

fn sample_rows<R: Rng + ?Sized>(data: &DenseArray, n: usize, rng: &mut R) -> DenseArray {
    if n >= data.rows() {
        return data.clone();
    }
    let cols = data.cols();
    let mut out = Vec::with_capacity(n * cols);
    for _ in 0..n {
        let i = rng.random_range(0..data.rows());
        out.extend_from_slice(data.row(i));
    }
    DenseArray::matrix(n, cols, out).expect("row sample")
}

/// `k_disc` Adam steps on fresh minibatches (with replacement) from the two
/// fused sample sets. Returns the loss of the last step.
#[allow(clippy::too_many_arguments)]
pub fn train_discriminator<R: Rng + ?Sized>(
    disc: &mut DiscriminatorParams,
    opt: &mut DiscriminatorOptimizer,
    source: &DenseArray,
    target: &DenseArray,
    k_disc: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64, AlignmentError> {
    if k_disc == 0 {
        return Err(AlignmentError::Precondition("K_disc must be at least 1".into()));
    }
    if batch_size == 0 {
        return Err(AlignmentError::Precondition("discriminator batch size must be positive".into()));
    }
    check_batches(source, target, disc.input_dim())?;
    let mut last = f64::NAN;
    for _ in 0..k_disc {
        let bs = sample_rows(source, batch_size, rng);
        let bt = sample_rows(target, batch_size, rng);
        let (loss, grads) = discriminator_loss_and_grad(disc, &bs, &bt)?;
        opt.state.step(&mut disc.net, &grads.net)?;
        last = loss;
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Layer;
    use crate::rng::stream;

    fn constant_disc(width: usize, z: f64) -> DiscriminatorParams {
        let net = MlpParams::new(vec![
            Layer {
                weight: DenseArray::zeros(vec![3, width]),
                bias: DenseArray::zeros(vec![3]),
                activation: Activation::Relu,
            },
            Layer {
                weight: DenseArray::zeros(vec![1, 3]),
                bias: DenseArray::vector(vec![z]),
                activation: Activation::Sigmoid,
            },
        ])
        .unwrap();
        DiscriminatorParams { net }
    }

    #[test]
    fn logit_values() {
        assert_eq!(logit(0.5), 0.0);
        let e = std::f64::consts::E;
        assert!((logit(e / (1.0 + e)) - 1.0).abs() < 1e-12);
        let cap = ((1.0 - 1e-6) / 1e-6f64).ln();
        assert!((cap - 13.8155).abs() < 1e-4);
        assert!((logit(1.0) - cap).abs() < 1e-9);
        assert!((logit(0.0) + cap).abs() < 1e-9);
    }

    #[test]
    fn logit_is_increasing() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..1000 {
            let v = logit(i as f64 / 1000.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn uninformative_discriminator_loss() {
        let d = constant_disc(4, 0.0);
        let s = DenseArray::filled(vec![5, 4], 0.3);
        let t = DenseArray::filled(vec![7, 4], -0.1);
        let l = discriminator_loss(&d, &s, &t).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(logit_ratio(&d, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn saturated_loss_sits_at_clamp_minimum() {
        // Q = 1 on source (feature 1), 0 on target (feature -1)
        let mut d = constant_disc(1, 0.0);
        d.net.layers_mut()[0].weight = DenseArray::matrix(3, 1, vec![100.0, 0.0, 0.0]).unwrap();
        d.net.layers_mut()[1].weight = DenseArray::matrix(1, 3, vec![100.0, 0.0, 0.0]).unwrap();
        d.net.layers_mut()[1].bias = DenseArray::vector(vec![-50.0]);
        let s = DenseArray::filled(vec![3, 1], 1.0);
        let t = DenseArray::filled(vec![3, 1], -1.0);
        let l = discriminator_loss(&d, &s, &t).unwrap();
        let floor = 2.0 * (1.0 + (-SIGMOID_INPUT_CLAMP).exp()).ln();
        assert!(l > 0.0);
        assert!((l - floor).abs() < 1e-12, "{l} vs {floor}");
    }

    #[test]
    fn zero_steps_and_empty_batches_rejected() {
        let mut d = constant_disc(2, 0.0);
        let mut opt = DiscriminatorOptimizer::new(&d, AdamConfig::default());
        let s = DenseArray::filled(vec![2, 2], 0.0);
        let mut r = stream(0, "t");
        assert!(train_discriminator(&mut d, &mut opt, &s, &s, 0, 8, &mut r).is_err());
        let empty = DenseArray::zeros(vec![0, 2]);
        assert!(discriminator_loss(&d, &s, &empty).is_err());
    }

    #[test]
    fn separable_data_is_learned() {
        let mut r = stream(3, "sep");
        let mut d = DiscriminatorParams::random(1, 1, 16, &mut r).unwrap();
        let mut opt = DiscriminatorOptimizer::new(&d, AdamConfig::with_lr(1e-2));
        let src: Vec<f64> = (0..200).flat_map(|i| [0.5 + i as f64 / 400.0, 0.0]).collect();
        let tgt: Vec<f64> = (0..200).flat_map(|i| [-1.0 + i as f64 / 400.0, 0.0]).collect();
        let s = DenseArray::matrix(200, 2, src).unwrap();
        let t = DenseArray::matrix(200, 2, tgt).unwrap();
        train_discriminator(&mut d, &mut opt, &s, &t, 300, 64, &mut r).unwrap();
        let qs = d.probabilities(&s).unwrap();
        let qt = d.probabilities(&t).unwrap();
        let correct = qs.iter().filter(|&&q| q > 0.5).count() + qt.iter().filter(|&&q| q < 0.5).count();
        assert!(correct as f64 / 400.0 > 0.95);
    }

    #[test]
    fn identical_data_stays_near_half() {
        let mut r = stream(4, "same");
        let mut d = DiscriminatorParams::random(2, 1, 16, &mut r).unwrap();
        let mut opt = DiscriminatorOptimizer::new(&d, AdamConfig::with_lr(3e-3));
        let data: Vec<f64> = (0..300)
            .flat_map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.2])
            .collect();
        let s = DenseArray::matrix(300, 3, data).unwrap();
        train_discriminator(&mut d, &mut opt, &s, &s, 300, 64, &mut r).unwrap();
        let q = d.probabilities(&s).unwrap();
        let dev = q.iter().map(|v| (v - 0.5).abs()).sum::<f64>() / q.len() as f64;
        assert!(dev < 0.1, "mean |Q - 0.5| = {dev}");
    }
}
