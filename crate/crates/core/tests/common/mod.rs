#![allow(dead_code)]

pub mod grad;
pub mod kl;

use std::collections::BTreeMap;
use std::sync::Mutex;

use scal_core::cli::ExperimentConfig;
use scal_core::numerics::MlpParams;
use scal_core::world::{Action, Expert, ExpertState, PidExpert, QueryContext, SimState, Track};

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const GRAD_FLOOR: f64 = 1e-8;

/// Worst relative error between `analytic` and central differences of
/// `loss` over every parameter of `nets` whose gradient exceeds the floor.
pub fn fd_max_rel_error(
    nets: &[MlpParams],
    analytic: &[MlpParams],
    loss: impl Fn(&[MlpParams]) -> f64,
) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, net) in nets.iter().enumerate() {
        let base = net.flat();
        let grad = analytic[k].flat();
        for i in 0..base.len() {
            let a = grad[i];
            let eval = |delta: f64| {
                let mut probe = nets.to_vec();
                let mut p = base.clone();
                p[i] += delta;
                probe[k].set_flat(&p);
                loss(&probe)
            };
            let n = (eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS);
            if a.abs().max(n.abs()) <= GRAD_FLOOR {
                continue;
            }
            checked += 1;
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()));
        }
    }
    (worst, checked)
}

/// A PID expert that counts label requests per domain id.
pub struct SpyExpert {
    inner: PidExpert,
    queries: Mutex<BTreeMap<String, usize>>,
}

impl SpyExpert {
    pub fn new(inner: PidExpert) -> Self {
        Self { inner, queries: Mutex::new(BTreeMap::new()) }
    }

    pub fn queries(&self) -> BTreeMap<String, usize> {
        self.queries.lock().unwrap().clone()
    }
}

impl Expert for SpyExpert {
    fn initial_state(&self) -> ExpertState {
        self.inner.initial_state()
    }

    fn act(
        &self,
        ctx: QueryContext<'_>,
        state: &SimState,
        hidden: &ExpertState,
        track: &Track,
    ) -> (Action, ExpertState) {
        *self.queries.lock().unwrap().entry(ctx.domain_id.to_string()).or_default() += 1;
        self.inner.act(ctx, state, hidden, track)
    }
}

pub fn expert(config: &ExperimentConfig) -> PidExpert {
    PidExpert::new(config.expert)
}
