//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{grad, kl, SpyExpert, FD_TOL};
use scal_core::agent::{PolicyCheckpoint, PolicyParams};
use scal_core::cli::ExperimentConfig;
use scal_core::evaluation::{
    bound_check, bound_rhs, evaluate_policy, ope_study, shift_study, EvalSettings, Pilot,
};
use scal_core::rng::stream;
use scal_core::training::{
    sample_target_buffer, scal_train, train_dagger, Buffer, Provenance, ScalConfig, ScalOutcome,
};
use scal_core::world::{DomainSpec, Environment, PidExpert};

const IDENTICAL_REL_TOL: f64 = 0.10;
const IDENTICAL_KL_TOL: f64 = 0.15;
const IDENTICAL_EPISODES: usize = 24;
const BOUND_POLICIES: u64 = 5;
const BOUND_SLACK_FACTOR: f64 = -0.25;
const OPE_RHO_LOSS: f64 = 0.6;
const OPE_RHO_LENGTH: f64 = 0.5;
const SHIFT_SIZES: [usize; 3] = [2048, 512, 256];
const SHIFT_TRIALS: usize = 3;
const SHIFT_RATIO_SMALL: f64 = 0.6;
const SHIFT_RATIO_LARGE: f64 = 0.8;

fn provenance(config: &ExperimentConfig, seed: u64) -> Provenance {
    Provenance { config_hash: config.hash(), seed }
}

fn init(config: &ExperimentConfig, seed: u64) -> PolicyParams {
    PolicyParams::random(&config.agent, &mut stream(seed, "policy-init")).unwrap()
}

fn target_buffer(config: &ExperimentConfig, env_t: &Environment, seed: u64) -> Buffer<scal_core::training::TargetRecord> {
    let tb = &config.target_buffer;
    let records = sample_target_buffer(env_t, &tb.distribution, tb.size, &mut stream(seed, "target-buffer")).unwrap();
    Buffer::from_records(records, provenance(config, seed))
}

fn train(config: &ExperimentConfig, env_s: &Environment, env_t: &Environment, seed: u64) -> (ScalOutcome, Buffer<scal_core::training::TargetRecord>) {
    let b_t = target_buffer(config, env_t, seed);
    let expert = PidExpert::new(config.expert);
    let o = scal_train(&config.scal, env_s, &expert, &b_t, &init(config, seed), seed, provenance(config, seed)).unwrap();
    (o, b_t)
}

fn gradients() -> (bool, String) {
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for seed in grad::SEEDS {
        let mut checks = vec![grad::imitation(seed), grad::discriminator(seed), grad::confusion_encoder(seed).0];
        for lambda in [0.0, 1.0, 2.5] {
            checks.push(grad::composite_objective(seed, lambda));
        }
        for (e, n) in checks {
            worst = worst.max(e);
            compared += n;
        }
    }
    (worst < FD_TOL && compared > 0, format!("max rel err {worst:.2e} over {compared} partials (< {FD_TOL:e})"))
}

fn kl_oracle() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (mu, sd, truth, tol)) in kl::CASES.into_iter().enumerate() {
        let est = kl::gaussian_pair_estimate(mu, sd, 100 + i as u64);
        ok &= (est - truth).abs() <= tol;
        parts.push(format!("{truth:.3}->{est:.3}(±{tol})"));
    }
    (ok, parts.join(" "))
}

fn identical_domains() -> (bool, String) {
    let mut config = ExperimentConfig::default();
    config.target = DomainSpec { id: "target".into(), ..config.source.clone() };
    let env_s = config.source_env().unwrap();
    let env_t = config.target_env().unwrap();
    let (o, _) = train(&config, &env_s, &env_t, config.seed);
    let expert = PidExpert::new(config.expert);
    let settings = EvalSettings { episodes: IDENTICAL_EPISODES, ..config.eval.clone() };
    let eval = |env: &Environment, name: &str| {
        evaluate_policy(env, Pilot::Policy(&o.policy), &expert, &settings, settings.gamma, &mut stream(config.seed, name))
            .unwrap()
            .discounted_imitation_loss
    };
    let j_s = eval(&env_s, "identical-source");
    let j_t = eval(&env_t, "identical-target");
    let rel = (j_t - j_s).abs() / j_s;
    let kl_hat = o.history.last().and_then(|r| r.kl_hat).unwrap_or(f64::NAN);
    (
        rel <= IDENTICAL_REL_TOL && kl_hat.abs() <= IDENTICAL_KL_TOL,
        format!("J_s {j_s:.4} J_t {j_t:.4} rel {rel:.3} (<= {IDENTICAL_REL_TOL}); L_hat {kl_hat:.3} (|.| <= {IDENTICAL_KL_TOL})"),
    )
}

fn bound_holds() -> (bool, String) {
    let config = ExperimentConfig::default();
    let env_s = config.source_env().unwrap();
    let env_t = config.target_env().unwrap();
    let expert = PidExpert::new(config.expert);
    let mut min_slack = f64::INFINITY;
    let mut monotone = true;
    let mut reports = 0;
    for seed in 1..=BOUND_POLICIES {
        let (o, b_t) = train(&config, &env_s, &env_t, seed);
        let rs = bound_check(&o.policy, &env_s, &env_t, &expert, o.source_buffer.records(), b_t.records(), &config.bound, seed)
            .unwrap();
        for r in &rs {
            min_slack = min_slack.min(r.slack);
            let frozen: Vec<f64> = config
                .bound
                .gammas
                .iter()
                .map(|&g| bound_rhs(r.j_s_hat, r.kl_hat, r.sigma_hat, r.alpha, g))
                .collect();
            monotone &= frozen.windows(2).all(|w| w[1] >= w[0]);
        }
        reports += rs.len();
    }
    let alpha = scal_core::agent::LOSS_BOUND_ALPHA;
    let floor = BOUND_SLACK_FACTOR * alpha;
    (
        min_slack >= floor && monotone && reports >= 15,
        format!("{reports} reports, min slack {min_slack:.3} (>= {floor}), rhs nondecreasing in gamma: {monotone}"),
    )
}

fn lambda_zero_is_dagger() -> (bool, String) {
    let config = ExperimentConfig::default();
    let env_s = config.source_env().unwrap();
    let env_t = config.target_env().unwrap();
    let scal = ScalConfig { lambda: 0.0, ..config.scal.clone() };
    let b_t = target_buffer(&config, &env_t, config.seed);
    let expert = PidExpert::new(config.expert);
    let p0 = init(&config, config.seed);
    let a = scal_train(&scal, &env_s, &expert, &b_t, &p0, config.seed, provenance(&config, config.seed)).unwrap();
    let b = train_dagger(&scal, &env_s, &expert, &p0, config.seed, provenance(&config, config.seed)).unwrap();
    let csv = |h: &scal_core::training::History| {
        let mut v = Vec::new();
        h.write_policy_csv(&mut v).unwrap();
        v
    };
    let ckpt = |p: &PolicyParams| serde_json::to_vec(&PolicyCheckpoint::new(p, &config.hash())).unwrap();
    let same_csv = csv(&a.history) == csv(&b.history);
    let same_policy = ckpt(&a.policy) == ckpt(&b.policy);
    (same_csv && same_policy, format!("policy csv identical: {same_csv}, checkpoint bytes identical: {same_policy}"))
}

fn ope_correlation() -> (bool, String) {
    let config = ExperimentConfig::default();
    let env_t = config.target_env().unwrap();
    let expert = PidExpert::new(config.expert);
    let r = ope_study(&config.ope, &config.scal, &config.agent, &env_t, &expert, config.seed).unwrap();
    (
        r.spearman_rho_loss >= OPE_RHO_LOSS && r.spearman_rho_length >= OPE_RHO_LENGTH && r.rows.len() + r.excluded.len() == 12,
        format!(
            "{} agents kept of {}, rho(L_hat, loss) {:.3} (>= {OPE_RHO_LOSS}), rho(L_hat, -length) {:.3} (>= {OPE_RHO_LENGTH})",
            r.rows.len(),
            r.rows.len() + r.excluded.len(),
            r.spearman_rho_loss,
            r.spearman_rho_length
        ),
    )
}

fn shift_grid() -> (bool, String) {
    let mut config = ExperimentConfig::default();
    config.shift.buffer_sizes = SHIFT_SIZES.to_vec();
    config.shift.trials = SHIFT_TRIALS;
    let env_s = config.source_env().unwrap();
    let env_t = config.target_env().unwrap();
    let expert = PidExpert::new(config.expert);
    let r = shift_study(&config.shift, &config.scal, &config.agent, &env_s, &env_t, &expert, config.seed).unwrap();
    let mut ok = r.oracle_mean > 0.0;
    let mut parts = vec![format!("oracle {:.0}", r.oracle_mean)];
    for d in &config.shift.distributions {
        for (n, ratio) in [(256, SHIFT_RATIO_SMALL), (2048, SHIFT_RATIO_LARGE)] {
            let s = r.summary_for(&d.name, n).expect("summary cell");
            let frac = s.mean_max_length.unwrap_or(0.0) / r.oracle_mean;
            ok &= s.completed == SHIFT_TRIALS && frac >= ratio;
            parts.push(format!("{}/{n} {:.2} (>= {ratio})", d.name, frac));
        }
    }
    (ok, parts.join(", "))
}

fn expert_never_sees_target() -> (bool, String) {
    let config = ExperimentConfig::default();
    let env_s = config.source_env().unwrap();
    let env_t = config.target_env().unwrap();
    let spy = SpyExpert::new(PidExpert::new(config.expert));
    let records =
        sample_target_buffer(&env_t, &config.target_buffer.distribution, config.target_buffer.size, &mut stream(config.seed, "target-buffer"))
            .unwrap();
    let b_t = Buffer::from_records(records, provenance(&config, config.seed));
    let after_collection = spy.queries();
    scal_train(&config.scal, &env_s, &spy, &b_t, &init(&config, config.seed), config.seed, provenance(&config, config.seed)).unwrap();
    let q = spy.queries();
    let target = q.get(env_t.domain_id()).copied().unwrap_or(0);
    let source = q.get(env_s.domain_id()).copied().unwrap_or(0);
    let only_source = q.keys().all(|k| k == env_s.domain_id());
    (
        after_collection.is_empty() && target == 0 && source > 0 && only_source,
        format!("collection queries {}, target queries {target}, source queries {source}", after_collection.len()),
    )
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_scal")).args(args).status().unwrap();
    assert!(status.success(), "scal {args:?} exited with {status}");
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.scal.rounds = 4;
    config.shift.distributions.truncate(1);
    config.shift.buffer_sizes = vec![256, 128];
    config.shift.trials = 2;
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, config.to_json()).unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut compared = 0;
    let mut ok = true;
    for (command, jobs) in [("train-scal", ["1", "1"]), ("shift-study", ["1", "2"])] {
        let dirs: Vec<_> = jobs
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let out = tmp.path().join(format!("{command}-{i}"));
                run_cli(&[command, "--config", cfg, "--jobs", j, "--out", out.to_str().unwrap()]);
                read_dir_bytes(&out)
            })
            .collect();
        compared += dirs[0].len();
        ok &= !dirs[0].is_empty() && dirs[0] == dirs[1];
    }
    (ok, format!("{compared} artifacts byte-identical across repeated runs and job counts: {ok}"))
}

fn main() {
    let criteria: [(&str, fn() -> (bool, String)); 9] = [
        ("gradient correctness", gradients),
        ("conditional KL oracle", kl_oracle),
        ("identical domains give equal losses", identical_domains),
        ("bound holds", bound_holds),
        ("lambda = 0 reproduces DAgger", lambda_zero_is_dagger),
        ("off-policy evaluation correlation", ope_correlation),
        ("distribution shift grid", shift_grid),
        ("expert never queried on target domain", expert_never_sees_target),
        ("byte determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!(
            "criterion {} {name}: {} [{detail}] ({:.1}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
