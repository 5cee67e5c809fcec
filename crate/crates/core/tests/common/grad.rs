use rand::Rng;
use rand_distr::StandardNormal;
use scal_core::agent::{imitation_loss_node, ImitationBatch, PolicyDims, PolicyParams, PolicyVars};
use scal_core::alignment::{discriminator_loss_and_grad, domain_confusion_node, DiscriminatorParams};
use scal_core::numerics::{loss_and_gradients, Activation, DenseArray, Graph, MlpParams, MlpVars, Var};
use scal_core::rng::stream;

use super::fd_max_rel_error;

pub const SEEDS: std::ops::Range<u64> = 0..10;
const DIMS: PolicyDims = PolicyDims { obs_dim: 6, hidden_dim: 5, latent_dim: 4, vel_proj_dim: 2 };
const STATE: usize = 5;
const B: usize = 5;

/// Worst relative error and number of parameters compared.
pub type Check = (f64, usize);

fn normal(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DenseArray {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    DenseArray::matrix(rows, cols, data).unwrap()
}

struct Case {
    policy: PolicyParams,
    disc: DiscriminatorParams,
    batch: ImitationBatch,
    x: DenseArray,
    w: DenseArray,
}

fn case(seed: u64) -> Case {
    let mut r = stream(seed, "gradcheck");
    let policy = PolicyParams::random(&DIMS, &mut r).unwrap();
    let disc = DiscriminatorParams::random(DIMS.latent_dim, STATE, 7, &mut r).unwrap();
    let batch = ImitationBatch {
        y: normal(&mut r, B, DIMS.obs_dim, 1.0),
        v: normal(&mut r, B, 1, 1.0),
        u: normal(&mut r, B, 2, 0.4),
    };
    let x = normal(&mut r, B, STATE, 1.0);
    let w = DenseArray::matrix(B, 1, (0..B).map(|_| r.random_range(0.2..3.0)).collect()).unwrap();
    Case { policy, disc, batch, x, w }
}

fn policy_from(nets: &[MlpParams]) -> PolicyParams {
    PolicyParams::new(nets[0].clone(), nets[1].clone(), nets[2].clone()).unwrap()
}

fn vars_from(v: &[MlpVars]) -> PolicyVars {
    PolicyVars { encoder: v[0].clone(), head: v[1].clone(), vel_proj: v[2].clone() }
}

/// `J_s + λ J_adv` with the discriminator frozen.
fn composite(g: &mut Graph, pv: &PolicyVars, c: &Case, disc: &MlpVars, lambda: f64) -> Var {
    let (j_s, l) = imitation_loss_node(g, pv, &c.batch).unwrap();
    let x = g.constant(&c.x);
    let w = g.constant(&c.w);
    let adv = domain_confusion_node(g, disc, l, x, w).unwrap();
    let scaled = g.scale_shift(adv, lambda, 0.0);
    g.add(j_s, scaled).unwrap()
}

fn composite_value(nets: &[MlpParams], c: &Case, lambda: f64) -> f64 {
    let p = policy_from(nets);
    let mut g = Graph::new();
    let pv = p.bind(&mut g);
    let dv = c.disc.net.bind(&mut g, false);
    let j = composite(&mut g, &pv, c, &dv, lambda);
    g.scalar(j)
}


pub fn mlp(seed: u64) -> Check {
    let mut r = stream(seed, "mlp");
    let net = MlpParams::random(&[4, 6, 3], &[Activation::Tanh, Activation::Sigmoid], &mut r).unwrap();
    let x = normal(&mut r, 3, 4, 1.0);
    let loss = |nets: &[MlpParams]| {
        loss_and_gradients(&[&nets[0]], |g, v| {
            let xi = g.constant(&x);
            let out = v[0].forward(g, xi)?;
            let sq = g.square(out);
            Ok(g.mean(sq))
        })
        .unwrap()
    };
    let (_, grads) = loss(std::slice::from_ref(&net));
    fd_max_rel_error(std::slice::from_ref(&net), &grads, |p| loss(p).0)
}

/// Imitation loss over encoder, head and speed projection.
pub fn imitation(seed: u64) -> Check {
    let c = case(seed);
    let nets: Vec<MlpParams> = c.policy.nets().into_iter().cloned().collect();
    let refs: Vec<&MlpParams> = nets.iter().collect();
    let build = |g: &mut Graph, v: &[MlpVars]| Ok(imitation_loss_node(g, &vars_from(v), &c.batch)?.0);
    let (_, grads) = loss_and_gradients(&refs, build).unwrap();
    fd_max_rel_error(&nets, &grads, |p| {
        let refs: Vec<&MlpParams> = p.iter().collect();
        loss_and_gradients(&refs, build).unwrap().0
    })
}

pub fn discriminator(seed: u64) -> Check {
    let c = case(seed);
    let mut r = stream(seed, "fused");
    let width = DIMS.latent_dim + STATE;
    let s = normal(&mut r, 6, width, 1.0);
    let t = normal(&mut r, 4, width, 1.0);
    let (_, g) = discriminator_loss_and_grad(&c.disc, &s, &t).unwrap();
    fd_max_rel_error(std::slice::from_ref(&c.disc.net), &[g.net], |p| {
        discriminator_loss_and_grad(&DiscriminatorParams { net: p[0].clone() }, &s, &t).unwrap().0
    })
}

/// `J_s + λ J_adv` over every policy net. Panics if the frozen
/// discriminator receives a gradient.
pub fn composite_objective(seed: u64, lambda: f64) -> Check {
    let c = case(seed);
    let mut g = Graph::new();
    let pv = c.policy.bind(&mut g);
    let dv = c.disc.net.bind(&mut g, false);
    let j = composite(&mut g, &pv, &c, &dv, lambda);
    let grads = g.backward(j).unwrap();
    assert!(!dv.has_any_gradient(&grads));
    let gp = pv.grads(&c.policy, &grads);
    let analytic: Vec<MlpParams> = gp.nets().into_iter().cloned().collect();
    let nets: Vec<MlpParams> = c.policy.nets().into_iter().cloned().collect();
    fd_max_rel_error(&nets, &analytic, |p| composite_value(p, &c, lambda))
}

fn confusion_value(c: &Case, encoder: &MlpParams) -> (f64, PolicyParams) {
    let q = PolicyParams::new(encoder.clone(), c.policy.head.clone(), c.policy.vel_proj.clone()).unwrap();
    let mut g = Graph::new();
    let pv = q.bind(&mut g);
    let dv = c.disc.net.bind(&mut g, false);
    let y = g.constant(&c.batch.y);
    let x = g.constant(&c.x);
    let w = g.constant(&c.w);
    let l = pv.latents(&mut g, y).unwrap();
    let adv = domain_confusion_node(&mut g, &dv, l, x, w).unwrap();
    let grads = g.backward(adv).unwrap();
    (g.scalar(adv), pv.grads(&q, &grads))
}

/// `J_adv` alone: encoder check plus the total head gradient magnitude.
pub fn confusion_encoder(seed: u64) -> (Check, f64) {
    let c = case(seed);
    let (_, gp) = confusion_value(&c, &c.policy.encoder);
    let head_mass = gp.head.flat().iter().map(|v| v.abs()).sum::<f64>();
    let check = fd_max_rel_error(std::slice::from_ref(&c.policy.encoder), &[gp.encoder.clone()], |p| {
        confusion_value(&c, &p[0]).0
    });
    (check, head_mass)
}
