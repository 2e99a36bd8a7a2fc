//! Soft actor-critic with twin quantile critics and a confidence-weighted critic loss.

mod critic;
mod policy;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::buffers::{RolloutPolicy, TransitionBatch};
use crate::numkit::{adam_step, AdamConfig, AdamState, DenseMatrix, Gradients, NumError, ParameterSet};

pub use critic::{huber, quantile_huber, quantile_huber_rows, quantile_midpoints, QuantileCritic};
pub use policy::{GaussianPolicy, PolicySample, LOG_STD_MAX, LOG_STD_MIN};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("transition weight {0} outside (0, 1]")]
    InvalidWeight(f64),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("non-finite {0} loss")]
    NonFiniteLoss(&'static str),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub state_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub quantiles: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub kappa: f64,
    pub init_log_alpha: f64,
    /// Tune the temperature toward `−action_dim` entropy; otherwise α stays fixed.
    pub learn_alpha: bool,
    /// Multiply each transition's critic loss by its confidence weight.
    pub weighting: bool,
    /// Also weight the actor objective (ablation only).
    pub weight_actor: bool,
}

impl AgentConfig {
    pub fn new(state_dim: usize, action_low: Vec<f64>, action_high: Vec<f64>) -> Self {
        Self {
            state_dim,
            action_low,
            action_high,
            hidden_width: 256,
            hidden_layers: 2,
            quantiles: 100,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            gamma: 0.99,
            polyak: 0.005,
            kappa: 1.0,
            init_log_alpha: 0.0,
            learn_alpha: true,
            weighting: true,
            weight_actor: false,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    pub fn target_entropy(&self) -> f64 {
        -(self.action_dim() as f64)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.state_dim == 0 || self.action_dim() == 0 || self.action_high.len() != self.action_dim() {
            return bad("state and action dimensions must be positive and bounds must match");
        }
        if self.action_low.iter().zip(&self.action_high).any(|(l, h)| !(l < h)) {
            return bad("action bounds need low < high");
        }
        if self.quantiles == 0 || self.hidden_width == 0 {
            return bad("quantile count and width must be positive");
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad("polyak coefficient must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("discount must lie in [0, 1)");
        }
        if [self.actor_lr, self.critic_lr, self.alpha_lr, self.kappa]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return bad("learning rates and kappa must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    config: AgentConfig,
    policy: GaussianPolicy,
    critic: QuantileCritic,
    actor_adam: AdamState,
    log_alpha: ParameterSet,
    alpha_adam: AdamState,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self, AgentError> {
        config.validate()?;
        let policy = GaussianPolicy::new(
            config.state_dim,
            config.action_low.clone(),
            config.action_high.clone(),
            config.hidden_width,
            config.hidden_layers,
            rng,
        );
        let critic = QuantileCritic::new(
            config.state_dim + config.action_dim(),
            config.hidden_width,
            config.hidden_layers,
            config.quantiles,
            config.critic_lr,
            rng,
        );
        Self::from_parts(config, policy, critic)
    }

    pub fn from_parts(config: AgentConfig, policy: GaussianPolicy, critic: QuantileCritic) -> Result<Self, AgentError> {
        config.validate()?;
        let mut log_alpha = ParameterSet::new();
        log_alpha.push("log_alpha", DenseMatrix::from_fn(1, 1, |_, _| config.init_log_alpha))?;
        Ok(Self {
            actor_adam: AdamState::new(policy.network().params(), AdamConfig::with_lr(config.actor_lr)),
            alpha_adam: AdamState::new(&log_alpha, AdamConfig::with_lr(config.alpha_lr)),
            config,
            policy,
            critic,
            log_alpha,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut GaussianPolicy {
        &mut self.policy
    }

    pub fn critic(&self) -> &QuantileCritic {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut QuantileCritic {
        &mut self.critic
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha.get(0).get(0, 0)
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha.get_mut(0).set(0, 0, v);
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha().exp()
    }

    /// Stochastic (reparameterized, squashed) or deterministic (squashed mean) action.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>, AgentError> {
        let s = DenseMatrix::from_vec(1, state.len(), state.to_vec())?;
        let a = if deterministic {
            self.policy.deterministic(&s)?
        } else {
            self.policy.sample(&s, rng)?.actions
        };
        Ok(a.into_vec())
    }

    fn effective_weights(&self, batch: &TransitionBatch) -> Result<Vec<f64>, AgentError> {
        if let Some(&w) = batch.weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(AgentError::InvalidWeight(w));
        }
        Ok(if self.config.weighting {
            batch.weights.clone()
        } else {
            vec![1.0; batch.len()]
        })
    }

    /// Target quantiles `r + γ(1 − done)(min_k Z̄_k(s', a') − α log π(a'|s'))`, `a' ~ π(s')`.
    pub fn critic_targets<R: Rng + ?Sized>(
        &self,
        batch: &TransitionBatch,
        rng: &mut R,
    ) -> Result<DenseMatrix, AgentError> {
        let next = self.policy.sample(&batch.next_states, rng)?;
        let sa = DenseMatrix::hcat(&[&batch.next_states, &next.actions])?;
        let mut z = self.critic.target_min(&sa)?;
        let alpha = self.alpha();
        for r in 0..z.rows() {
            let cont = if batch.dones[r] { 0.0 } else { self.config.gamma };
            let ent = alpha * next.log_prob[r];
            for v in z.row_mut(r) {
                *v = batch.rewards[r] + cont * (*v - ent);
            }
        }
        Ok(z)
    }

    /// Summed loss of both critics against `targets` plus their gradients,
    /// without touching parameters.
    pub fn critic_loss(
        &mut self,
        batch: &TransitionBatch,
        targets: &DenseMatrix,
    ) -> Result<(f64, [Gradients; 2]), AgentError> {
        let w = self.effective_weights(batch)?;
        let sa = DenseMatrix::hcat(&[&batch.states, &batch.actions])?;
        let kappa = self.config.kappa;
        let (l0, g0) = self.critic.loss_and_grads(0, &sa, targets, &w, kappa)?;
        let (l1, g1) = self.critic.loss_and_grads(1, &sa, targets, &w, kappa)?;
        Ok((l0 + l1, [g0, g1]))
    }

    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &TransitionBatch, rng: &mut R) -> Result<f64, AgentError> {
        let targets = self.critic_targets(batch, rng)?;
        let (loss, [g0, g1]) = self.critic_loss(batch, &targets)?;
        if !loss.is_finite() {
            return Err(AgentError::NonFiniteLoss("critic"));
        }
        self.critic.apply(0, &g0)?;
        self.critic.apply(1, &g1)?;
        Ok(loss)
    }

    /// `mean_b ω_b (α log π(a_b|s_b) − min_k mean_i θ_ik(s_b, a_b))` for a fixed
    /// reparameterization noise, with the policy-parameter gradient and the
    /// batch mean of `log π`.
    pub fn actor_loss(
        &mut self,
        states: &DenseMatrix,
        noise: DenseMatrix,
        weights: Option<&[f64]>,
    ) -> Result<(f64, Gradients, f64), AgentError> {
        let n = states.rows();
        let b = n as f64;
        let alpha = self.alpha();
        let sample = self.policy.forward_sample(states, noise)?;
        let sa = DenseMatrix::hcat(&[states, &sample.actions])?;
        let [q0, q1] = self.critic.online_means(&sa)?;
        let omega = |r: usize| weights.map_or(1.0, |w| w[r]);
        let mut loss = 0.0;
        let mut coef = [vec![0.0; n], vec![0.0; n]];
        let mut glp = Vec::with_capacity(n);
        for r in 0..n {
            let (k, q) = if q1[r] < q0[r] { (1, q1[r]) } else { (0, q0[r]) };
            loss += omega(r) * (alpha * sample.log_prob[r] - q) / b;
            coef[k][r] = -omega(r) / b;
            glp.push(alpha * omega(r) / b);
        }
        let sd = self.config.state_dim;
        let ad = self.config.action_dim();
        let mut ga = DenseMatrix::zeros(n, ad);
        for (k, c) in coef.iter().enumerate() {
            if c.iter().all(|v| *v == 0.0) {
                continue;
            }
            ga.add_assign(&self.critic.input_gradient(k, &sa, c)?.columns(sd, sd + ad));
        }
        let grads = self.policy.backward(&sample, &glp, &ga)?;
        let mean_lp = sample.log_prob.iter().sum::<f64>() / b;
        Ok((loss, grads, mean_lp))
    }

    /// Gradient of the temperature loss with respect to `log α`.
    pub fn alpha_gradient(&self, mean_log_prob: f64) -> f64 {
        -(mean_log_prob + self.config.target_entropy())
    }

    pub fn actor_and_temperature_update<R: Rng + ?Sized>(
        &mut self,
        batch: &TransitionBatch,
        rng: &mut R,
    ) -> Result<(f64, f64), AgentError> {
        let noise = DenseMatrix::from_fn(batch.len(), self.config.action_dim(), |_, _| rng.sample(StandardNormal));
        let weights = if self.config.weighting && self.config.weight_actor {
            self.effective_weights(batch)?;
            Some(batch.weights.as_slice())
        } else {
            None
        };
        let (loss, grads, mean_lp) = self.actor_loss(&batch.states, noise, weights)?;
        if !loss.is_finite() {
            return Err(AgentError::NonFiniteLoss("actor"));
        }
        adam_step(self.policy.network_mut().params_mut(), &grads, &mut self.actor_adam)?;
        if self.config.learn_alpha {
            let mut g = self.log_alpha.zeros_like();
            g.get_mut(0).set(0, 0, self.alpha_gradient(mean_lp));
            adam_step(&mut self.log_alpha, &g, &mut self.alpha_adam)?;
        }
        Ok((loss, mean_lp))
    }

    pub fn polyak_update(&mut self) {
        self.critic.polyak_update(self.config.polyak);
    }

    /// Critic step, actor and temperature step, then target tracking.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &TransitionBatch, rng: &mut R) -> Result<UpdateStats, AgentError> {
        let critic_loss = self.critic_update(batch, rng)?;
        let (actor_loss, mean_log_prob) = self.actor_and_temperature_update(batch, rng)?;
        self.polyak_update();
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            alpha: self.alpha(),
            mean_log_prob,
        })
    }
}

impl RolloutPolicy for SacAgent {
    fn act_batch(&self, states: &DenseMatrix, rng: &mut dyn RngCore) -> DenseMatrix {
        self.policy
            .sample(states, rng)
            .expect("rollout states match the policy input width")
            .actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::WeightedTransition;
    use crate::numkit::gradcheck::check_parameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> AgentConfig {
        AgentConfig {
            hidden_width: 8,
            hidden_layers: 2,
            quantiles: 5,
            ..AgentConfig::new(3, vec![-2.0], vec![2.0])
        }
    }

    fn batch(n: usize, w: f64, seed: u64) -> TransitionBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<WeightedTransition> = (0..n)
            .map(|i| WeightedTransition {
                weight: w,
                ..WeightedTransition::real(
                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    vec![rng.random_range(-2.0..2.0)],
                    rng.random_range(-1.0..0.0),
                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    i % 5 == 0,
                )
            })
            .collect();
        TransitionBatch::from_transitions(&items).unwrap()
    }

    #[test]
    fn critic_loss_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = SacAgent::new(config(), &mut rng).unwrap();
        let full = batch(16, 1.0, 1);
        let half = batch(16, 0.5, 1);
        let t = agent.critic_targets(&full, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (l1, _) = agent.critic_loss(&full, &t).unwrap();
        let (l2, _) = agent.critic_loss(&half, &t).unwrap();
        assert_eq!(l2, 0.5 * l1);
    }

    #[test]
    fn weights_outside_unit_interval_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = SacAgent::new(config(), &mut rng).unwrap();
        for w in [0.0, 1.5] {
            assert!(matches!(
                agent.update(&batch(4, w, 1), &mut rng),
                Err(AgentError::InvalidWeight(_))
            ));
        }
    }

    #[test]
    fn unit_weights_match_the_unweighted_agent_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let weighted = SacAgent::new(config(), &mut rng).unwrap();
        let mut unweighted = weighted.clone();
        unweighted.config.weighting = false;
        let mut a = weighted;
        let b_ = batch(32, 1.0, 3);
        let (mut ra, mut rb) = (ChaCha8Rng::seed_from_u64(5), ChaCha8Rng::seed_from_u64(5));
        for _ in 0..5 {
            let sa = a.update(&b_, &mut ra).unwrap();
            let sb = unweighted.update(&b_, &mut rb).unwrap();
            assert_eq!(sa, sb);
        }
        assert_eq!(a.policy().network().params(), unweighted.policy().network().params());
        assert_eq!(a.critic().online(1).params(), unweighted.critic().online(1).params());
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agent = SacAgent::new(config(), &mut rng).unwrap();
        let b = batch(6, 0.7, 8);
        let t = agent.critic_targets(&b, &mut rng).unwrap();
        let (_, [g0, _]) = agent.critic_loss(&b, &t).unwrap();
        let sa = DenseMatrix::hcat(&[&b.states, &b.actions]).unwrap();
        let probe = agent.critic().online(0).clone();
        let taus = agent.critic().taus().to_vec();
        let report = check_parameters(
            agent.critic().online(0).params(),
            &g0,
            |p| {
                let mut net = probe.clone();
                *net.params_mut() = p.clone();
                let th = net.predict(&sa).unwrap();
                let (l, _) = quantile_huber_rows(&th, &t, &taus, 1.0);
                l.iter().zip(&b.weights).map(|(l, w)| w * l).sum::<f64>() / l.len() as f64
            },
            1e-5,
        );
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut agent = SacAgent::new(config(), &mut rng).unwrap();
        agent.set_log_alpha(-0.7);
        let b = batch(6, 1.0, 12);
        let noise = DenseMatrix::from_fn(6, 1, |r, _| (r as f64 * 0.9).sin());
        let (_, grads, _) = agent.actor_loss(&b.states, noise.clone(), None).unwrap();
        let probe = agent.clone();
        let report = check_parameters(
            agent.policy().network().params(),
            &grads,
            |p| {
                let mut a = probe.clone();
                *a.policy_mut().network_mut().params_mut() = p.clone();
                a.actor_loss(&b.states, noise.clone(), None).unwrap().0
            },
            1e-5,
        );
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn alpha_gradient_vanishes_at_target_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = SacAgent::new(config(), &mut rng).unwrap();
        assert_eq!(agent.alpha_gradient(1.0), 0.0);
        assert!(agent.alpha_gradient(3.0) < 0.0);
    }

    #[test]
    fn deterministic_actions_and_rollout_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = SacAgent::new(config(), &mut rng).unwrap();
        agent.policy_mut().network_mut().zero_heads();
        assert_eq!(agent.select_action(&[0.1, 0.2, 0.3], true, &mut rng).unwrap(), vec![0.0]);
        let s = DenseMatrix::from_fn(100, 3, |r, c| (r + c) as f64 * 0.01);
        let a = agent.act_batch(&s, &mut rng);
        assert!(a.data().iter().all(|x| (-2.0..=2.0).contains(x)));
    }

    fn bandit_std(alpha: f64) -> f64 {
        // one-step bandit r(a) = −a²; the critic learns r directly since every step terminates
        let cfg = AgentConfig {
            state_dim: 1,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            hidden_width: 16,
            hidden_layers: 2,
            quantiles: 4,
            actor_lr: 3e-3,
            critic_lr: 3e-3,
            init_log_alpha: alpha.ln(),
            learn_alpha: false,
            ..AgentConfig::new(1, vec![-1.0], vec![1.0])
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut agent = SacAgent::new(cfg, &mut rng).unwrap();
        for _ in 0..1500 {
            let items: Vec<WeightedTransition> = (0..64)
                .map(|_| {
                    let a: f64 = rng.random_range(-1.0..1.0);
                    WeightedTransition::real(vec![0.0], vec![a], -a * a, vec![0.0], true)
                })
                .collect();
            agent.update(&TransitionBatch::from_transitions(&items).unwrap(), &mut rng).unwrap();
        }
        let s = DenseMatrix::zeros(4000, 1);
        let acts = agent.policy().sample(&s, &mut rng).unwrap().actions.into_vec();
        let mean = acts.iter().sum::<f64>() / acts.len() as f64;
        (acts.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / acts.len() as f64).sqrt()
    }

    #[test]
    fn larger_temperature_gives_wider_policy() {
        let low = bandit_std(0.01);
        let high = bandit_std(0.5);
        assert!(high > low + 0.05, "{low} vs {high}");
    }
}
