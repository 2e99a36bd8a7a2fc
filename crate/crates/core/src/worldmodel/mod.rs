//! Conditional IMLE world models, their ensembles and predictive uncertainty.

mod member;
mod uncertainty;

use rand::Rng;
use thiserror::Error;

use crate::buffers::{BufferError, ReplayStore};
use crate::numkit::{DenseMatrix, NumError, PassCounts};
use crate::rng::{RngStreams, StreamRng};

pub use member::{sample_latents, TargetScaler, WorldModelNet};
pub use uncertainty::{
    confidence_weight, decompose_uncertainty, predictive_sigma, variance_components, PredictionSet,
    UncertaintyReport, VarianceComponents,
};

#[derive(Debug, Error)]
pub enum WorldModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("uncertainty split needs at least 2 members and 2 latents, got {members} and {latents}")]
    UndefinedComponent { members: usize, latents: usize },
    #[error("environment buffer is empty")]
    EmptyBuffer,
    #[error("non-finite model loss {0}")]
    NonFiniteLoss(f64),
    #[error("invalid world-model config: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

impl From<BufferError> for WorldModelError {
    fn from(e: BufferError) -> Self {
        match e {
            BufferError::Empty => WorldModelError::EmptyBuffer,
            other => WorldModelError::Config(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Latent-conditioned generator trained by nearest-candidate matching.
    Imle,
    /// Unimodal mean and log-variance heads trained by negative log-likelihood.
    Gaussian,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "imle" => Ok(ModelKind::Imle),
            "gaussian" => Ok(ModelKind::Gaussian),
            other => Err(format!("unknown model kind '{other}' (expected imle or gaussian)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Imle => "imle",
            ModelKind::Gaussian => "gaussian",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub width: usize,
    pub blocks: usize,
    pub kind: ModelKind,
    pub lr: f64,
    /// Rescale `[r, s']` targets by running statistics before matching and regression.
    pub normalize_targets: bool,
}

impl WorldModelConfig {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            latent_dim: 16,
            width: 512,
            blocks: 3,
            kind: ModelKind::Imle,
            lr: 1e-3,
            normalize_targets: false,
        }
    }

    pub fn validate(&self) -> Result<(), WorldModelError> {
        if self.state_dim == 0 || self.action_dim == 0 || self.width == 0 || self.latent_dim == 0 {
            return Err(WorldModelError::Config("dimensions must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(WorldModelError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.kind == ModelKind::Gaussian && self.latent_dim < 1 + self.state_dim {
            return Err(WorldModelError::Config(format!(
                "the Gaussian variant needs latent_dim >= {} to supply its noise",
                1 + self.state_dim
            )));
        }
        Ok(())
    }
}

/// One synthetic transition together with the uncertainty of the prediction set it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub report: UncertaintyReport,
    pub weight: f64,
}

/// `K` independently initialized generators, each with its own optimizer and
/// minibatch stream.
#[derive(Clone, Debug)]
pub struct WorldModelEnsemble {
    config: WorldModelConfig,
    members: Vec<WorldModelNet>,
    streams: Vec<StreamRng>,
}

impl WorldModelEnsemble {
    /// Members draw initial weights and minibatches from streams derived from
    /// `(seed, member index)`.
    pub fn new(config: WorldModelConfig, k: usize, seed: u64) -> Result<Self, WorldModelError> {
        let streams = RngStreams::new(seed);
        Self::build(
            config,
            (0..k as u64)
                .map(|i| (streams.indexed("model-init", i), streams.indexed("model-train", i)))
                .collect(),
        )
    }

    /// One seed per member; equal seeds give identical members.
    pub fn with_member_seeds(config: WorldModelConfig, seeds: &[u64]) -> Result<Self, WorldModelError> {
        Self::build(
            config,
            seeds
                .iter()
                .map(|&s| {
                    let st = RngStreams::new(s);
                    (st.stream("model-init"), st.stream("model-train"))
                })
                .collect(),
        )
    }

    fn build(config: WorldModelConfig, rngs: Vec<(StreamRng, StreamRng)>) -> Result<Self, WorldModelError> {
        if rngs.is_empty() {
            return Err(WorldModelError::Config("an ensemble needs at least one member".into()));
        }
        let mut members = Vec::with_capacity(rngs.len());
        let mut streams = Vec::with_capacity(rngs.len());
        for (mut init, train) in rngs {
            members.push(WorldModelNet::new(config.clone(), &mut init)?);
            streams.push(train);
        }
        Ok(Self {
            config,
            members,
            streams,
        })
    }

    pub fn from_members(members: Vec<WorldModelNet>, seed: u64) -> Result<Self, WorldModelError> {
        let config = members
            .first()
            .ok_or_else(|| WorldModelError::Config("an ensemble needs at least one member".into()))?
            .config()
            .clone();
        if members.iter().any(|m| *m.config() != config) {
            return Err(WorldModelError::Config("members must share one architecture".into()));
        }
        let streams = RngStreams::new(seed);
        let streams = (0..members.len() as u64)
            .map(|i| streams.indexed("model-train", i))
            .collect();
        Ok(Self {
            config,
            members,
            streams,
        })
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[WorldModelNet] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [WorldModelNet] {
        &mut self.members
    }

    /// Forward and backward rows summed over members.
    pub fn passes(&self) -> PassCounts {
        self.members.iter().fold(PassCounts::default(), |acc, m| {
            let p = m.network().passes();
            PassCounts {
                forward_rows: acc.forward_rows + p.forward_rows,
                backward_rows: acc.backward_rows + p.backward_rows,
            }
        })
    }

    pub fn reset_passes(&self) {
        self.members.iter().for_each(|m| m.network().reset_passes());
    }

    fn minibatch(store: &ReplayStore, idx: &[usize]) -> (DenseMatrix, DenseMatrix) {
        let first = store.get(idx[0]);
        let sa_w = first.state.len() + first.action.len();
        let y_w = 1 + first.next_state.len();
        let mut sa = DenseMatrix::zeros(idx.len(), sa_w);
        let mut y = DenseMatrix::zeros(idx.len(), y_w);
        for (r, &i) in idx.iter().enumerate() {
            let t = store.get(i);
            let row = sa.row_mut(r);
            row[..t.state.len()].copy_from_slice(&t.state);
            row[t.state.len()..].copy_from_slice(&t.action);
            let row = y.row_mut(r);
            row[0] = t.reward;
            row[1..].copy_from_slice(&t.next_state);
        }
        (sa, y)
    }

    /// `U` assignment-plus-update iterations per member on minibatches drawn
    /// with replacement from `store`. Returns each member's per-iteration
    /// pre-step loss.
    pub fn train_ensemble(
        &mut self,
        store: &ReplayStore,
        updates: usize,
        candidates: usize,
        batch: usize,
    ) -> Result<Vec<Vec<f64>>, WorldModelError> {
        if store.is_empty() {
            return Err(WorldModelError::EmptyBuffer);
        }
        if candidates == 0 || batch == 0 {
            return Err(WorldModelError::Config("candidate count and batch size must be positive".into()));
        }
        let first = store.get(0);
        if first.state.len() != self.config.state_dim || first.action.len() != self.config.action_dim {
            return Err(WorldModelError::Dimension("store transitions do not match the model".into()));
        }
        let scaler = if self.config.normalize_targets {
            let targets: Vec<Vec<f64>> = store.iter().map(|t| t.target()).collect();
            TargetScaler::fit(targets.iter().map(Vec::as_slice), 1 + self.config.state_dim)
        } else {
            None
        };
        let mut traces = Vec::with_capacity(self.members.len());
        for (member, rng) in self.members.iter_mut().zip(self.streams.iter_mut()) {
            member.set_scaler(scaler.clone());
            let mut trace = Vec::with_capacity(updates);
            for _ in 0..updates {
                let idx = store.sample_indices(batch, rng)?;
                let (sa, y) = Self::minibatch(store, &idx);
                trace.push(member.train_step(&sa, &y, candidates, rng)?);
            }
            traces.push(trace);
        }
        Ok(traces)
    }

    /// All `K·m` predictions for each row of `sa`, with the `m` latents of a
    /// row shared by every member. Output `i` is the prediction set of row `i`.
    pub fn prediction_sets<R: Rng + ?Sized>(
        &self,
        sa: &DenseMatrix,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<PredictionSet>, WorldModelError> {
        if m == 0 {
            return Err(WorldModelError::Config("at least one latent per member is required".into()));
        }
        let n = sa.rows();
        let z = sample_latents(n * m, self.config.latent_dim, rng);
        let tiled = DenseMatrix::from_fn(n * m, sa.cols(), |r, c| sa.get(r / m, c));
        let outs = self
            .members
            .iter()
            .map(|mem| mem.generate_rows(&tiled, &z))
            .collect::<Result<Vec<_>, _>>()?;
        let k = self.members.len();
        let d = 1 + self.config.state_dim;
        (0..n)
            .map(|i| {
                let mut data = Vec::with_capacity(k * m * d);
                for out in &outs {
                    for j in 0..m {
                        data.extend_from_slice(out.row(i * m + j));
                    }
                }
                PredictionSet::new(k, m, d, data)
            })
            .collect()
    }

    /// Batched one-step prediction: per row, the `K·m` set yields `σ`, the
    /// decomposition and `w = 1/(σ+1)`; the emitted transition is one sample
    /// of that set chosen uniformly.
    pub fn predict_batch<R: Rng + ?Sized>(
        &self,
        sa: &DenseMatrix,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<EnsemblePrediction>, WorldModelError> {
        let sets = self.prediction_sets(sa, m, rng)?;
        Ok(sets
            .into_iter()
            .map(|set| {
                let report = UncertaintyReport::from_predictions(&set);
                let pick = set.sample(rng.random_range(0..set.len()));
                EnsemblePrediction {
                    next_state: pick[1..].to_vec(),
                    reward: pick[0],
                    weight: confidence_weight(report.sigma),
                    report,
                }
            })
            .collect())
    }

    pub fn predict_with_uncertainty<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        a: &[f64],
        m: usize,
        rng: &mut R,
    ) -> Result<EnsemblePrediction, WorldModelError> {
        if s.len() != self.config.state_dim || a.len() != self.config.action_dim {
            return Err(WorldModelError::Dimension(format!(
                "expected state {} and action {}, got {} and {}",
                self.config.state_dim,
                self.config.action_dim,
                s.len(),
                a.len()
            )));
        }
        let mut row = s.to_vec();
        row.extend_from_slice(a);
        let sa = DenseMatrix::from_vec(1, row.len(), row)?;
        Ok(self.predict_batch(&sa, m, rng)?.remove(0))
    }
}
