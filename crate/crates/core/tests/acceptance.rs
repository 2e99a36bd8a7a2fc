//! Acceptance criteria. Every test prints one `criterion N: PASS|FAIL` line.
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! them; the sample-efficiency criterion takes well over an hour.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wimle_core::agent::{AgentConfig, SacAgent};
use wimle_core::buffers::{
    generate_rollouts, ReplayStore, RolloutOptions, RolloutPolicy, TransitionBatch, WeightedTransition,
};
use wimle_core::envs::{fork_modes, make_env, FORK_DRIFT};
use wimle_core::harness::{
    bootstrap_difference_ci, emit_report, gradcheck_suite, iqm, parse_long_table, run_experiment, ExperimentConfig,
    MetricBundle, RunManifest, EVAL_RETURN, GRADCHECK_TOLERANCE, LONG_CSV,
};
use wimle_core::numkit::DenseMatrix;
use wimle_core::theory::verify_all;
use wimle_core::worldmodel::{
    confidence_weight, decompose_uncertainty, ModelKind, PredictionSet, WorldModelConfig, WorldModelEnsemble,
};

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    println!(
        "\ncriterion {n}: {} {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
}

static SERIAL: Mutex<()> = Mutex::new(());

/// Runtime limits are wall-clock, so criteria run one at a time.
fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed < Duration::from_secs(limit_secs)
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> ExperimentConfig {
    ExperimentConfig::from_file(&workspace_root().join("configs/desk.cfg")).expect("desk profile")
}

/// Uniform random actions in `[low, high]`.
struct UniformPolicy {
    low: f64,
    high: f64,
    dim: usize,
}

impl RolloutPolicy for UniformPolicy {
    fn act_batch(&self, states: &DenseMatrix, rng: &mut dyn RngCore) -> DenseMatrix {
        DenseMatrix::from_fn(states.rows(), self.dim, |_, _| rng.random_range(self.low..=self.high))
    }
}

fn collect_random(env_name: &str, steps: usize, seed: u64) -> ReplayStore {
    let mut env = make_env(env_name).unwrap();
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ReplayStore::new(steps);
    let mut s = env.reset(&mut rng);
    for _ in 0..steps {
        let a: Vec<f64> = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| rng.random_range(*l..=*h))
            .collect();
        let r = env.step(&a, &mut rng).unwrap();
        store
            .push(WeightedTransition::real(s.clone(), a, r.reward, r.next_state.clone(), r.terminal))
            .unwrap();
        s = if r.terminal || r.truncated { env.reset(&mut rng) } else { r.next_state };
    }
    store
}

#[test]
fn criterion_01_gradient_correctness() {
    let _guard = serial();
    let t = Instant::now();
    let cases = gradcheck_suite(20, 2024).unwrap();
    let elapsed = t.elapsed();
    let worst = cases
        .iter()
        .map(|c| c.report.max_rel_error)
        .fold(0.0, f64::max);
    let networks = ["world-model-imle", "world-model-gaussian", "quantile-critic", "policy"];
    let per_network_ok = networks
        .iter()
        .all(|n| cases.iter().filter(|c| c.network == *n).count() >= 20);
    let pass = cases.iter().all(|c| c.passes()) && per_network_ok && within(elapsed, 60);
    report(
        1,
        pass,
        format!(
            "{} instances over {} networks, worst relative error {worst:.2e} (tol {GRADCHECK_TOLERANCE:e}), {:.1}s",
            cases.len(),
            networks.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_weights_keep_the_bellman_fixed_point() {
    let _guard = serial();
    let t = Instant::now();
    let r = verify_all(200, 0, 1000, 7).unwrap();
    let elapsed = t.elapsed();
    let pass = r.worst_weight_gap < 1e-8 && r.worst_oracle_gap < 1e-8 && within(elapsed, 60);
    report(
        2,
        pass,
        format!(
            "200 MDPs, weighted vs unweighted {:.2e}, unweighted vs oracle {:.2e} (tol 1e-8), {:.1}s",
            r.worst_weight_gap,
            r.worst_oracle_gap,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_inverse_variance_weights_minimize_covariance() {
    let _guard = serial();
    let t = Instant::now();
    let r = verify_all(0, 1000, 100_000, 11).unwrap();
    let elapsed = t.elapsed();
    let pass = r.dominance_ok() && r.worked_example_ok() && r.monte_carlo_ok() && within(elapsed, 300);
    report(
        3,
        pass,
        format!(
            "min eigenvalue {:.2e} (≥ -1e-10), worked example {:.15}/{:.15}, Monte Carlo {:.2} SE (< 5), {:.1}s",
            r.worst_min_eigenvalue,
            r.worked_gls_variance,
            r.worked_uniform_variance,
            r.mc_max_standard_errors,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn fork_model(kind: ModelKind) -> WorldModelConfig {
    WorldModelConfig {
        // the Gaussian variant draws its noise from the latent, one entry per output
        latent_dim: if kind == ModelKind::Imle { 1 } else { 2 },
        width: 32,
        blocks: 2,
        lr: 3e-4,
        kind,
        ..WorldModelConfig::new(1, 1)
    }
}

#[test]
fn criterion_04_imle_covers_both_modes_and_gaussian_averages_them() {
    let _guard = serial();
    let t = Instant::now();
    let store = collect_random("bimodal-fork", 20_000, 4);
    let (k, updates, batch, candidates) = (5, 12_000, 256, 8);

    let mut imle = WorldModelEnsemble::new(fork_model(ModelKind::Imle), k, 40).unwrap();
    imle.train_ensemble(&store, updates, candidates, batch).unwrap();
    let mut gauss = WorldModelEnsemble::new(fork_model(ModelKind::Gaussian), k, 41).unwrap();
    gauss.train_ensemble(&store, updates, candidates, batch).unwrap();

    let grid = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut worst_mode, mut worst_mid, mut worst_gauss) = (1.0f64, 0.0f64, 0.0f64);
    for &s in &grid {
        for &a in &grid {
            let sa = DenseMatrix::from_vec(1, 2, vec![s, a]).unwrap();
            let [lo, hi] = fork_modes(s, a);
            let mid = s + FORK_DRIFT * a;
            let set = imle.prediction_sets(&sa, 1000 / k, &mut rng).unwrap().remove(0);
            let n = set.len() as f64;
            let near = |c: f64| (0..set.len()).filter(|&i| (set.sample(i)[1] - c).abs() <= 0.1).count() as f64 / n;
            worst_mode = worst_mode.min(near(lo)).min(near(hi));
            worst_mid = worst_mid.max(near(mid));
            let mean = gauss
                .members()
                .iter()
                .map(|mem| mem.mean_prediction(&sa).unwrap().get(0, 1))
                .sum::<f64>()
                / k as f64;
            worst_gauss = worst_gauss.max((mean - mid).abs());
        }
    }
    let elapsed = t.elapsed();
    let pass = worst_mode >= 0.4 && worst_mid <= 0.05 && worst_gauss <= 0.05 && within(elapsed, 600);
    report(
        4,
        pass,
        format!(
            "min mass per mode {worst_mode:.3} (≥ 0.4), max mass at midpoint {worst_mid:.3} (≤ 0.05), \
             Gaussian mean off midpoint {worst_gauss:.3} (≤ 0.05), {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_uncertainty_algebra() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (k, m, d) = (rng.random_range(2..=7), rng.random_range(2..=6), rng.random_range(1..=4));
        let scale = rng.random_range(0.01..5.0);
        let normal = Normal::new(0.0, scale).unwrap();
        let data: Vec<f64> = (0..k * m * d).map(|_| normal.sample(&mut rng) + 1.0).collect();
        let set = PredictionSet::new(k, m, d, data.clone()).unwrap();
        let (epi, ale) = decompose_uncertainty(&set).unwrap();
        // direct two-pass population variance per dimension over all K·m samples
        let n = (k * m) as f64;
        let mut total = 0.0;
        for j in 0..d {
            let col: Vec<f64> = (0..k * m).map(|i| data[i * d + j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            total += col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        }
        worst = worst.max((epi + ale - total / d as f64).abs());
    }
    let sigmas: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.05).collect();
    let ws: Vec<f64> = sigmas.iter().map(|s| confidence_weight(*s)).collect();
    let in_range = ws.iter().all(|w| *w > 0.0 && *w <= 1.0) && ws[0] == 1.0;
    let decreasing = ws.windows(2).all(|p| p[1] < p[0]);
    let pass = worst <= 1e-12 && in_range && decreasing;
    report(
        5,
        pass,
        format!("max |epistemic + aleatoric - total| {worst:.2e} over 1000 sets (≤ 1e-12), w in (0,1] and decreasing: {}", in_range && decreasing),
    );
    assert!(pass);
}

#[test]
fn criterion_06_weights_fall_with_rollout_depth() {
    let _guard = serial();
    // ensemble, policy and replay data all come out of a short training run
    let mut config = desk_config();
    config.apply_text("total_steps = 6000\nseed = 6\n").unwrap();
    let out = run_experiment(&config).unwrap();
    let ens = out.ensemble.expect("model-based run");
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let batch = generate_rollouts(&ens, &out.agent, &out.env_store, 6, 400, 4, RolloutOptions::default(), &mut rng).unwrap();
    let w = batch.mean_weight_per_depth();
    let rises: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).filter(|d| *d > 0.0).collect();
    let pass = w.len() == 6 && rises.len() <= 1 && rises.iter().all(|d| *d < 0.01);
    let shown: Vec<String> = w.iter().map(|x| format!("{x:.4}")).collect();
    report(
        6,
        pass,
        format!("mean weight by depth 1..6 over 400 rollouts: [{}], inversions {:?}", shown.join(", "), rises),
    );
    assert!(pass);
}

fn neutrality_config() -> ExperimentConfig {
    let mut c = desk_config();
    c.apply_text(
        "total_steps = 1500\nwarmup_steps = 500\ntrain_freq = 500\neval_interval = 500\neval_episodes = 1\n\
         model_updates = 20\nrollouts = 50\nforce_zero_sigma = on\n",
    )
    .unwrap();
    c
}

fn report_files(bundle: &MetricBundle, config: &ExperimentConfig, dir: &Path) -> Vec<(String, Vec<u8>)> {
    let files = emit_report(bundle, dir, &RunManifest::new(config.to_text(), vec![config.seed])).unwrap();
    files
        .iter()
        .skip(1)
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_07_weighting_neutrality_and_linearity() {
    let _guard = serial();
    let on = neutrality_config();
    let mut off = on.clone();
    off.weighting = false;
    let a = run_experiment(&on).unwrap();
    let b = run_experiment(&off).unwrap();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let identical_csv = report_files(&a.bundle, &on, da.path()) == report_files(&b.bundle, &off, db.path());
    let identical_params = a.agent.policy().network().params() == b.agent.policy().network().params()
        && (0..2).all(|i| a.agent.critic().online(i).params() == b.agent.critic().online(i).params());

    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let config = AgentConfig {
        hidden_width: 32,
        quantiles: 25,
        ..AgentConfig::new(3, vec![-2.0], vec![2.0])
    };
    let mut agent = SacAgent::new(config, &mut rng).unwrap();
    let transitions: Vec<WeightedTransition> = (0..128)
        .map(|_| WeightedTransition {
            weight: rng.random_range(0.1..=1.0),
            ..WeightedTransition::real(
                (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                vec![rng.random_range(-2.0..2.0)],
                rng.random_range(-10.0..0.0),
                (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                false,
            )
        })
        .collect();
    let base = TransitionBatch::from_transitions(&transitions).unwrap();
    let targets = agent.critic_targets(&base, &mut rng).unwrap();
    let (l1, _) = agent.critic_loss(&base, &targets).unwrap();
    let mut exact = true;
    let mut worst_rel = 0.0f64;
    for c in [0.5, 0.25, 0.3, 0.77] {
        let mut scaled = base.clone();
        scaled.weights.iter_mut().for_each(|w| *w *= c);
        let (lc, _) = agent.critic_loss(&scaled, &targets).unwrap();
        if c == 0.5 || c == 0.25 {
            exact &= lc == c * l1;
        }
        worst_rel = worst_rel.max((lc - c * l1).abs() / (c * l1).abs());
    }
    let pass = identical_csv && identical_params && exact && worst_rel < 1e-14;
    report(
        7,
        pass,
        format!(
            "σ≡0 on/off identical CSV {identical_csv}, identical parameters {identical_params}; \
             loss(c·w) = c·loss(w) exact for c = 2^-k {exact}, worst relative gap {worst_rel:.1e}"
        ),
    );
    assert!(pass);
}

fn final_window(bundle: &MetricBundle, seed: u64) -> f64 {
    let v = bundle.get(EVAL_RETURN, seed).unwrap().last_values(5);
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_08_weighting_beats_both_ablations_on_pendulum() {
    let _guard = serial();
    let t = Instant::now();
    let base = desk_config();
    let seeds = [0u64, 1, 2, 3, 4];
    let mut variants: Vec<(&str, ExperimentConfig)> = Vec::new();
    variants.push(("wimle", base.clone()));
    let mut unweighted = base.clone();
    unweighted.weighting = false;
    variants.push(("unweighted", unweighted));
    let mut model_free = base.clone();
    model_free.real_fraction = 1.0;
    variants.push(("model-free", model_free));

    let out_dir = workspace_root().join("target/acceptance/criterion8");
    let mut finals: Vec<Vec<f64>> = Vec::new();
    for (name, config) in &variants {
        let mut bundle = MetricBundle::new();
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let mut c = config.clone();
            c.seed = seed;
            let out = run_experiment(&c).unwrap();
            per_seed.push(final_window(&out.bundle, seed));
            bundle.merge(out.bundle);
        }
        emit_report(&bundle, &out_dir.join(name), &RunManifest::new(config.to_text(), seeds.to_vec())).unwrap();
        finals.push(per_seed);
    }
    let elapsed = t.elapsed();
    let iqms: Vec<f64> = finals.iter().map(|f| iqm(f).unwrap()).collect();
    let (lo, hi) = bootstrap_difference_ci(&finals[0], &finals[2], 0.95, 10_000, 8).unwrap();
    let pass = iqms[0] >= iqms[1] && iqms[0] >= iqms[2] && (lo > 0.0 || hi < 0.0) && within(elapsed, 7200);
    report(
        8,
        pass,
        format!(
            "final-window IQM return wimle {:.1}, unweighted {:.1}, model-free {:.1}; \
             wimle - model-free 95% CI [{lo:.1}, {hi:.1}]; {:.0} min",
            iqms[0],
            iqms[1],
            iqms[2],
            elapsed.as_secs_f64() / 60.0
        ),
    );
    for ((name, _), f) in variants.iter().zip(&finals) {
        let shown: Vec<String> = f.iter().map(|x| format!("{x:.1}")).collect();
        println!("  {name}: per-seed final-window returns [{}]", shown.join(", "));
    }
    assert!(pass);
}

#[test]
fn criterion_09_one_transition_costs_k_times_m_forward_passes() {
    let _guard = serial();
    let (k, m) = (7, 4);
    let ens = WorldModelEnsemble::new(WorldModelConfig::new(3, 1), k, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    ens.reset_passes();
    ens.predict_with_uncertainty(&[1.0, 0.0, 0.5], &[0.3], m, &mut rng).unwrap();
    let single = ens.passes();

    let store = collect_random("pendulum", 300, 91);
    let policy = UniformPolicy {
        low: -2.0,
        high: 2.0,
        dim: 1,
    };
    let (b, h) = (20, 3);
    ens.reset_passes();
    generate_rollouts(&ens, &policy, &store, h, b, m, RolloutOptions::default(), &mut rng).unwrap();
    let rollout = ens.passes();
    let pass = single.forward_rows == (k * m) as u64
        && single.backward_rows == 0
        && rollout.forward_rows == (b * h * k * m) as u64
        && rollout.backward_rows == 0;
    report(
        9,
        pass,
        format!(
            "one transition: {} forward / {} backward (K·m = {}); {} rollout transitions: {} forward / {} backward",
            single.forward_rows,
            single.backward_rows,
            k * m,
            b * h,
            rollout.forward_rows,
            rollout.backward_rows
        ),
    );
    assert!(pass);
}

fn smoke_config() -> ExperimentConfig {
    let mut c = desk_config();
    c.apply_text("total_steps = 2000\neval_interval = 500\neval_episodes = 2\nseed = 10\n")
        .unwrap();
    c
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn criterion_10_reproducible_outputs_and_golden_smoke_run() {
    let _guard = serial();
    let config = smoke_config();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_experiment(&config).unwrap().bundle;
    let second = run_experiment(&config).unwrap().bundle;
    let f1 = report_files(&first, &config, d1.path());
    let identical = f1 == report_files(&second, &config, d2.path());

    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/smoke_2k.csv");
    let long = std::fs::read_to_string(d1.path().join(LONG_CSV)).unwrap();
    if std::env::var_os("WIMLE_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_path.parent().unwrap()).unwrap();
        std::fs::write(&golden_path, &long).unwrap();
    }
    let golden = parse_long_table(&std::fs::read_to_string(&golden_path).expect("golden file present")).unwrap();
    let golden_ok = golden.metric_names() == first.metric_names()
        && golden.series().zip(first.series()).all(|(g, f)| {
            g.name == f.name
                && g.seed == f.seed
                && g.points.len() == f.points.len()
                && g.points.iter().zip(&f.points).all(|(p, q)| p.0 == q.0 && close(p.1, q.1))
        });
    let pass = identical && golden_ok;
    report(
        10,
        pass,
        format!(
            "two runs identical across {} CSV files: {identical}; golden 2k-step run matches (rel 1e-6): {golden_ok}",
            f1.len()
        ),
    );
    assert!(pass);
}
