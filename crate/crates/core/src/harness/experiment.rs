use rand::{Rng, RngCore};

use super::{ExperimentConfig, HarnessError, MetricBundle};
use crate::agent::SacAgent;
use crate::buffers::{
    generate_rollouts, refresh_model_store, sample_mixed_batch, ReplayStore, RolloutOptions, WeightedTransition,
};
use crate::checkpoint::Checkpoint;
use crate::envs::{make_env, Environment};
use crate::rng::RngStreams;
use crate::worldmodel::WorldModelEnsemble;

pub const EVAL_RETURN: &str = "eval_return";
pub const MODEL_LOSS: &str = "model_loss";
pub const MEAN_SIGMA: &str = "mean_sigma";
pub const EPISTEMIC: &str = "epistemic";
pub const ALEATORIC: &str = "aleatoric";

pub fn weight_depth_metric(depth: usize) -> String {
    format!("weight_depth_{depth}")
}

/// What a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub bundle: MetricBundle,
    pub agent: SacAgent,
    pub ensemble: Option<WorldModelEnsemble>,
    pub env_store: ReplayStore,
    pub agent_updates: usize,
    pub model_cycles: usize,
}

impl RunOutput {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.add_network("policy", self.agent.policy().network());
        for i in 0..2 {
            c.add_network(format!("critic{i}"), self.agent.critic().online(i));
            c.add_network(format!("critic{i}_target"), self.agent.critic().target(i));
        }
        c.add_scalar("log_alpha", self.agent.log_alpha());
        if let Some(e) = &self.ensemble {
            for (k, m) in e.members().iter().enumerate() {
                c.add_network(format!("model{k}"), m.network());
            }
        }
        c
    }
}

/// Progress notifications for long runs.
#[derive(Clone, Debug, PartialEq)]
pub enum Progress {
    Evaluation { step: usize, mean_return: f64 },
    ModelCycle { step: usize, loss: f64, mean_weight: f64 },
}

/// Mean undiscounted return of `episodes` deterministic episodes.
pub fn evaluate(agent: &SacAgent, env: &mut dyn Environment, episodes: usize, rng: &mut dyn RngCore) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        loop {
            let a = agent.select_action(&s, true, rng)?;
            let r = env.step(&a, rng)?;
            total += r.reward;
            if r.terminal || r.truncated {
                break;
            }
            s = r.next_state;
        }
    }
    Ok(total / episodes as f64)
}

fn uniform_action(low: &[f64], high: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    low.iter().zip(high).map(|(l, h)| rng.random_range(*l..=*h)).collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    run_experiment_with(config, &mut |_| {})
}

/// Warm-up with uniform actions, then per environment step: collect one real
/// transition, retrain the ensemble and refresh the synthetic store every
/// `train_freq` steps, and take `updates_per_step` agent updates on mixed
/// batches. Deterministic evaluation every `eval_interval` steps.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    observer: &mut dyn FnMut(&Progress),
) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let seed = config.seed;
    let streams = RngStreams::new(seed);
    let mut env_rng = streams.stream("env");
    let mut act_rng = streams.stream("policy");
    let mut update_rng = streams.stream("agent-update");
    let mut batch_rng = streams.stream("batch");
    let mut rollout_rng = streams.stream("rollout");
    let mut eval_rng = streams.stream("eval");

    let spec = config.env_spec()?;
    let mut env = make_env(&config.env)?;
    let mut eval_env = make_env(&config.env)?;
    let mut agent = SacAgent::new(config.agent_config()?, &mut streams.stream("agent-init"))?;
    let mut ensemble = if config.uses_model() {
        Some(WorldModelEnsemble::new(config.world_model_config()?, config.ensemble_size, seed)?)
    } else {
        None
    };
    let h = config.resolved_horizon();
    let mut env_store = ReplayStore::new(config.env_store_capacity());
    let mut model_store = ReplayStore::new(config.rollouts * h);
    let options = RolloutOptions {
        force_zero_sigma: config.force_zero_sigma,
    };

    let mut bundle = MetricBundle::new();
    let mut agent_updates = 0;
    let mut model_cycles = 0;
    let mut state = env.reset(&mut env_rng);
    for step in 1..=config.total_steps {
        let action = if step <= config.warmup_steps {
            uniform_action(&spec.action_low, &spec.action_high, &mut act_rng)
        } else {
            agent.select_action(&state, false, &mut act_rng)?
        };
        let res = env.step(&action, &mut env_rng)?;
        // time-limit truncation bootstraps through; only true terminals stop it
        env_store.push(WeightedTransition::real(
            state.clone(),
            action,
            res.reward,
            res.next_state.clone(),
            res.terminal,
        ))?;
        state = if res.terminal || res.truncated {
            env.reset(&mut env_rng)
        } else {
            res.next_state
        };

        if step > config.warmup_steps {
            if let Some(ens) = ensemble.as_mut() {
                if (step - config.warmup_steps - 1) % config.train_freq == 0 {
                    let traces =
                        ens.train_ensemble(&env_store, config.model_updates, config.candidates, config.model_batch)?;
                    let loss = traces
                        .iter()
                        .map(|t| {
                            let tail = &t[t.len().saturating_sub(10)..];
                            tail.iter().sum::<f64>() / tail.len().max(1) as f64
                        })
                        .sum::<f64>()
                        / traces.len() as f64;
                    let rollouts = generate_rollouts(
                        ens,
                        &agent,
                        &env_store,
                        h,
                        config.rollouts,
                        config.candidates,
                        options,
                        &mut rollout_rng,
                    )?;
                    let s = step as u64;
                    let weights = rollouts.mean_weight_per_depth();
                    bundle.record(MODEL_LOSS, seed, s, loss)?;
                    bundle.record(MEAN_SIGMA, seed, s, rollouts.mean_sigma())?;
                    bundle.record(EPISTEMIC, seed, s, rollouts.mean_epistemic())?;
                    bundle.record(ALEATORIC, seed, s, rollouts.mean_aleatoric())?;
                    for (d, w) in weights.iter().enumerate() {
                        bundle.record(&weight_depth_metric(d + 1), seed, s, *w)?;
                    }
                    let mean_weight = weights.iter().sum::<f64>() / weights.len().max(1) as f64;
                    refresh_model_store(&mut model_store, rollouts.into_transitions())?;
                    model_cycles += 1;
                    if !loss.is_finite() {
                        return Err(HarnessError::NonFinite(format!("model loss at step {step}")));
                    }
                    observer(&Progress::ModelCycle { step, loss, mean_weight });
                }
            }
            for _ in 0..config.updates_per_step {
                let batch =
                    sample_mixed_batch(&env_store, &model_store, config.batch_size, config.real_fraction, &mut batch_rng)?;
                agent.update(&batch, &mut update_rng)?;
                agent_updates += 1;
            }
        }

        if step % config.eval_interval == 0 {
            let r = evaluate(&agent, eval_env.as_mut(), config.eval_episodes, &mut eval_rng)?;
            if !r.is_finite() {
                return Err(HarnessError::NonFinite(format!("evaluation return at step {step}")));
            }
            bundle.record(EVAL_RETURN, seed, step as u64, r)?;
            observer(&Progress::Evaluation { step, mean_return: r });
        }
    }
    Ok(RunOutput {
        bundle,
        agent,
        ensemble,
        env_store,
        agent_updates,
        model_cycles,
    })
}

/// One run per seed (config seed replaced), metrics merged.
pub fn run_seeds(
    config: &ExperimentConfig,
    seeds: &[u64],
    observer: &mut dyn FnMut(u64, &Progress),
) -> Result<MetricBundle, HarnessError> {
    let mut bundle = MetricBundle::new();
    for &seed in seeds {
        let mut c = config.clone();
        c.seed = seed;
        let out = run_experiment_with(&c, &mut |p| observer(seed, p))?;
        bundle.merge(out.bundle);
    }
    Ok(bundle)
}
