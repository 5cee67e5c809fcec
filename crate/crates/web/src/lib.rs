use wasm_bindgen::prelude::*;

use scal_core::agent::{act, PolicyParams};
use scal_core::cli::ExperimentConfig;
use scal_core::rng::stream;
use scal_core::training::{sample_target_buffer, scal_train, Buffer, Provenance, ScalConfig};
use scal_core::world::{
    analytic_obs_kl, DomainSpec, Environment, Expert, PidExpert, QueryContext, SimState,
};

const DRIVE_CAP: usize = 3000;

/// The default source/target pair plus whatever policy was trained last.
#[wasm_bindgen]
pub struct Lab {
    config: ExperimentConfig,
    source: Environment,
    target: Environment,
    policy: Option<PolicyParams>,
}

#[wasm_bindgen]
impl Lab {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Lab, JsError> {
        let config = ExperimentConfig::default();
        let source = config.source_env()?;
        let target = config.target_env()?;
        Ok(Lab { config, source, target, policy: None })
    }

    /// Centerline as interleaved `x, y` pairs.
    pub fn centerline(&self, step: f64) -> Vec<f64> {
        self.source.track.centerline(step).into_iter().flat_map(|(x, y)| [x, y]).collect()
    }

    #[wasm_bindgen(getter)]
    pub fn half_width(&self) -> f64 {
        self.source.track.half_width()
    }

    #[wasm_bindgen(getter)]
    pub fn track_length(&self) -> f64 {
        self.source.track.total_length()
    }

    #[wasm_bindgen(getter)]
    pub fn has_policy(&self) -> bool {
        self.policy.is_some()
    }

    /// Replaces the target domain. `Lab::gap` and target drives use it.
    pub fn set_target(&mut self, offset_shift: f64, mix: f64) -> Result<(), JsError> {
        let spec = DomainSpec { offset_shift, mix, ..self.config.target.clone() };
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(JsError::new(&errs.join("; ")));
        }
        self.config.target = spec;
        self.target = self.config.target_env()?;
        self.policy = None;
        Ok(())
    }

    /// `[σ, source means…, target means…]` at arc position `s` and lateral
    /// offset `e_s`, with the car aligned to the track at the reference speed.
    pub fn gap(&self, s: f64, e_s: f64) -> Result<Vec<f64>, JsError> {
        let st = SimState { e_s, ..SimState::on_centerline(s, self.config.expert.v_ref) };
        let x = self.source.condition(&st);
        let sigma = analytic_obs_kl(&self.source.domain, &self.target.domain, &x, st.v_long)?;
        let mut out = vec![sigma];
        out.extend(self.source.domain.mean(&x, st.v_long));
        out.extend(self.target.domain.mean(&x, st.v_long));
        Ok(out)
    }

    /// Trains a policy with SCAL on the source domain and an unlabeled
    /// target buffer. Returns the final source imitation loss.
    pub fn train(&mut self, rounds: usize, lambda: f64, seed: u64) -> Result<f64, JsError> {
        let cfg = ScalConfig { rounds, lambda, ..self.config.scal.clone() };
        let expert = PidExpert::new(self.config.expert);
        let tb = &self.config.target_buffer;
        let records = sample_target_buffer(&self.target, &tb.distribution, tb.size, &mut stream(seed, "target-buffer"))?;
        let prov = Provenance { config_hash: String::new(), seed };
        let b_t = Buffer::from_records(records, prov.clone());
        let init = PolicyParams::random(&self.config.agent, &mut stream(seed, "policy-init"))?;
        let o = scal_train(&cfg, &self.source, &expert, &b_t, &init, seed, prov)?;
        let j_s = o.history.last().map(|r| r.j_s).unwrap_or(f64::NAN);
        self.policy = Some(o.policy);
        Ok(j_s)
    }

    /// Drives from arc position `s0` and returns the path as `x, y` pairs.
    /// `pilot` is `"expert"` or `"policy"`; `domain` is `"source"` or `"target"`.
    pub fn drive(&self, pilot: &str, domain: &str, s0: f64, seed: u64) -> Result<Vec<f64>, JsError> {
        let env = match domain {
            "source" => &self.source,
            "target" => &self.target,
            other => return Err(JsError::new(&format!("unknown domain {other:?}"))),
        };
        let policy = match pilot {
            "expert" => None,
            "policy" => Some(self.policy.as_ref().ok_or_else(|| JsError::new("train a policy first"))?),
            other => return Err(JsError::new(&format!("unknown pilot {other:?}"))),
        };
        Ok(drive(env, &PidExpert::new(self.config.expert), policy, s0, self.config.expert.v_ref, seed)?)
    }
}

fn drive(
    env: &Environment,
    expert: &PidExpert,
    policy: Option<&PolicyParams>,
    s0: f64,
    v0: f64,
    seed: u64,
) -> Result<Vec<f64>, scal_core::world::WorldError> {
    let mut rng = stream(seed, "drive");
    let mut state = SimState::on_centerline(s0, v0);
    let mut hidden = expert.initial_state();
    let ctx = QueryContext { domain_id: env.domain_id() };
    let mut path = Vec::new();
    for _ in 0..DRIVE_CAP {
        if !state.on_track(&env.track) {
            break;
        }
        let (x, y) = env.track.to_cartesian(state.s, state.e_s);
        path.extend([x, y]);
        let action = match policy {
            Some(p) => {
                let (obs, _) = env.observe(&state, &mut rng);
                act(p, &obs, state.v_long).map_err(|e| scal_core::world::WorldError::Config(e.to_string()))?
            }
            None => {
                let (a, h) = expert.act(ctx, &state, &hidden, &env.track);
                hidden = h;
                a
            }
        };
        state = env.step(&state, action)?;
    }
    Ok(path)
}
