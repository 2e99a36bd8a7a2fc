//! Replay stores, uncertainty-weighted model rollouts and mixed real/synthetic batches.

mod store;

use rand::Rng;
use thiserror::Error;

use crate::numkit::DenseMatrix;
use crate::worldmodel::{WorldModelEnsemble, WorldModelError};

pub use store::{ReplayStore, WeightedTransition};

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("malformed transition log line: {0}")]
    Parse(String),
    #[error("confidence weight {0} outside (0, 1]")]
    InvalidWeight(f64),
    #[error("store is empty")]
    Empty,
    #[error("invalid rollout request: {0}")]
    Rollout(String),
    #[error(transparent)]
    Model(#[from] WorldModelError),
}

/// Anything that can act on a batch of states during model rollouts.
pub trait RolloutPolicy {
    fn act_batch(&self, states: &DenseMatrix, rng: &mut dyn rand::RngCore) -> DenseMatrix;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RolloutOptions {
    /// Treat every prediction set as certain, so every synthetic weight is 1.
    pub force_zero_sigma: bool,
}

/// Synthetic transitions grouped by rollout depth, with the `σ` and variance
/// split recorded when each was generated.
#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    pub by_depth: Vec<Vec<WeightedTransition>>,
    pub sigma: Vec<Vec<f64>>,
    pub epistemic: Vec<Vec<f64>>,
    pub aleatoric: Vec<Vec<f64>>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.by_depth.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &WeightedTransition> {
        self.by_depth.iter().flatten()
    }

    pub fn into_transitions(self) -> Vec<WeightedTransition> {
        self.by_depth.into_iter().flatten().collect()
    }

    /// Mean confidence weight at each depth, depth 1 first.
    pub fn mean_weight_per_depth(&self) -> Vec<f64> {
        self.by_depth
            .iter()
            .map(|d| d.iter().map(|t| t.weight).sum::<f64>() / d.len().max(1) as f64)
            .collect()
    }

    fn mean_all(v: &[Vec<f64>]) -> f64 {
        let n: usize = v.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        v.iter().flatten().sum::<f64>() / n as f64
    }

    pub fn mean_sigma(&self) -> f64 {
        Self::mean_all(&self.sigma)
    }

    pub fn mean_epistemic(&self) -> f64 {
        Self::mean_all(&self.epistemic)
    }

    pub fn mean_aleatoric(&self) -> f64 {
        Self::mean_all(&self.aleatoric)
    }
}

/// Branches `b` rollouts of length `h` from start states drawn uniformly
/// (with replacement) from `env_store`. Each step acts with `policy`, queries
/// the ensemble with `m` latents per member and records `w = 1/(σ+1)`.
/// Synthetic transitions never terminate.
#[allow(clippy::too_many_arguments)]
pub fn generate_rollouts<R: Rng>(
    ensemble: &WorldModelEnsemble,
    policy: &dyn RolloutPolicy,
    env_store: &ReplayStore,
    h: usize,
    b: usize,
    m: usize,
    options: RolloutOptions,
    rng: &mut R,
) -> Result<RolloutBatch, BufferError> {
    if env_store.is_empty() {
        return Err(BufferError::Empty);
    }
    if h == 0 {
        return Err(BufferError::Rollout("horizon must be at least 1".into()));
    }
    let mut out = RolloutBatch::default();
    if b == 0 {
        return Ok(out);
    }
    let starts = env_store.sample_indices(b, rng)?;
    let d = env_store.get(starts[0]).state.len();
    let mut states = DenseMatrix::from_fn(b, d, |r, c| env_store.get(starts[r]).state[c]);
    for _ in 0..h {
        let actions = policy.act_batch(&states, rng);
        let sa = DenseMatrix::hcat(&[&states, &actions]).map_err(WorldModelError::from)?;
        let preds = ensemble.predict_batch(&sa, m, rng)?;
        let mut level = Vec::with_capacity(b);
        let (mut sig, mut epi, mut ale) = (Vec::with_capacity(b), Vec::with_capacity(b), Vec::with_capacity(b));
        let mut next = DenseMatrix::zeros(b, d);
        for (r, p) in preds.into_iter().enumerate() {
            let (sigma, weight) = if options.force_zero_sigma {
                (0.0, 1.0)
            } else {
                (p.report.sigma, p.weight)
            };
            next.row_mut(r).copy_from_slice(&p.next_state);
            level.push(WeightedTransition {
                state: states.row(r).to_vec(),
                action: actions.row(r).to_vec(),
                reward: p.reward,
                next_state: p.next_state,
                done: false,
                weight,
            });
            sig.push(sigma);
            epi.push(p.report.epistemic);
            ale.push(p.report.aleatoric);
        }
        out.by_depth.push(level);
        out.sigma.push(sig);
        out.epistemic.push(epi);
        out.aleatoric.push(ale);
        states = next;
    }
    Ok(out)
}

/// Empties the model store, then fills it with `fresh`.
pub fn refresh_model_store(
    model_store: &mut ReplayStore,
    fresh: impl IntoIterator<Item = WeightedTransition>,
) -> Result<(), BufferError> {
    model_store.clear();
    for t in fresh {
        model_store.push(t)?;
    }
    Ok(())
}

/// Column-stacked minibatch ready for the agent.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub states: DenseMatrix,
    pub actions: DenseMatrix,
    pub rewards: Vec<f64>,
    pub next_states: DenseMatrix,
    pub dones: Vec<bool>,
    pub weights: Vec<f64>,
    /// Number of leading rows that came from the environment store.
    pub real: usize,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a WeightedTransition>) -> Result<Self, BufferError> {
        let items: Vec<&WeightedTransition> = items.into_iter().collect();
        let first = items.first().ok_or(BufferError::Empty)?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = items.len();
        let mut b = Self {
            states: DenseMatrix::zeros(n, sd),
            actions: DenseMatrix::zeros(n, ad),
            rewards: Vec::with_capacity(n),
            next_states: DenseMatrix::zeros(n, sd),
            dones: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
            real: 0,
        };
        for (r, t) in items.iter().enumerate() {
            if t.state.len() != sd || t.action.len() != ad || t.next_state.len() != sd {
                return Err(BufferError::Rollout("transitions of differing widths".into()));
            }
            b.states.row_mut(r).copy_from_slice(&t.state);
            b.actions.row_mut(r).copy_from_slice(&t.action);
            b.next_states.row_mut(r).copy_from_slice(&t.next_state);
            b.rewards.push(t.reward);
            b.dones.push(t.done);
            b.weights.push(t.weight);
        }
        Ok(b)
    }
}

/// `⌈ρ·batch⌉` real transitions with `w` forced to 1, the rest synthetic,
/// uniform within each store. All real when the model store is empty.
pub fn sample_mixed_batch<R: Rng + ?Sized>(
    env_store: &ReplayStore,
    model_store: &ReplayStore,
    batch: usize,
    rho: f64,
    rng: &mut R,
) -> Result<TransitionBatch, BufferError> {
    if env_store.is_empty() {
        return Err(BufferError::Empty);
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(BufferError::Rollout(format!("real fraction {rho} outside [0, 1]")));
    }
    let n_real = if model_store.is_empty() {
        batch
    } else {
        ((rho * batch as f64).ceil() as usize).min(batch)
    };
    let real = env_store.sample_indices(n_real, rng)?;
    let synth = if batch > n_real {
        model_store.sample_indices(batch - n_real, rng)?
    } else {
        Vec::new()
    };
    let items = real
        .iter()
        .map(|&i| env_store.get(i))
        .chain(synth.iter().map(|&i| model_store.get(i)));
    let mut b = TransitionBatch::from_transitions(items)?;
    b.weights[..n_real].iter_mut().for_each(|w| *w = 1.0);
    b.real = n_real;
    Ok(b)
}
