use rand::Rng;
use rand_distr::StandardNormal;

use crate::numkit::{DenseMatrix, Gradients, NetLayout, NetSpec, Network, NumError};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

/// `log(1 − tanh²u)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u.abs();
    2.0 * (std::f64::consts::LN_2 - u.abs() - x.exp().ln_1p())
}

/// Reparameterized draw for a batch: everything the actor gradient needs.
#[derive(Clone, Debug)]
pub struct PolicySample {
    /// Actions in environment units.
    pub actions: DenseMatrix,
    /// `tanh(u)` in `[−1, 1]`.
    pub squashed: DenseMatrix,
    pub noise: DenseMatrix,
    pub std: DenseMatrix,
    /// Whether each log-std sits inside the clamp (gradient passes through).
    pub std_active: Vec<bool>,
    pub log_prob: Vec<f64>,
}

/// Tanh-squashed diagonal Gaussian policy `s → (μ, log σ)`.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    net: Network,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        low: Vec<f64>,
        high: Vec<f64>,
        width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let a = low.len();
        let spec = NetSpec {
            input_dim: state_dim,
            width,
            layout: NetLayout::Mlp { hidden },
            heads: vec![a, a],
        };
        Self {
            net: Network::new(spec, rng),
            low,
            high,
        }
    }

    pub fn from_network(net: Network, low: Vec<f64>, high: Vec<f64>) -> Self {
        Self { net, low, high }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn action_dim(&self) -> usize {
        self.low.len()
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.high)
    }

    fn half_range(&self, k: usize) -> f64 {
        0.5 * (self.high[k] - self.low[k])
    }

    fn to_env(&self, k: usize, y: f64) -> f64 {
        (self.low[k] + (y + 1.0) * self.half_range(k)).clamp(self.low[k], self.high[k])
    }

    /// Maps an environment-unit action back to `[−1, 1]`.
    pub fn normalize_action(&self, k: usize, a: f64) -> f64 {
        (a - self.low[k]) / self.half_range(k) - 1.0
    }

    /// Squashed mean, in environment units.
    pub fn deterministic(&self, states: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        let out = self.net.predict(states)?;
        let a = self.action_dim();
        Ok(DenseMatrix::from_fn(states.rows(), a, |r, k| {
            self.to_env(k, out.get(r, k).tanh())
        }))
    }

    fn sample_from(&self, out: &DenseMatrix, noise: DenseMatrix) -> PolicySample {
        let (n, a) = (out.rows(), self.action_dim());
        let mut actions = DenseMatrix::zeros(n, a);
        let mut squashed = DenseMatrix::zeros(n, a);
        let mut std = DenseMatrix::zeros(n, a);
        let mut std_active = Vec::with_capacity(n * a);
        let mut log_prob = Vec::with_capacity(n);
        for r in 0..n {
            let mut lp = 0.0;
            for k in 0..a {
                let raw = out.get(r, a + k);
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                std_active.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&raw));
                let sd = ls.exp();
                let eps = noise.get(r, k);
                let u = out.get(r, k) + sd * eps;
                let y = u.tanh();
                lp += -0.5 * eps * eps - ls - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
                std.set(r, k, sd);
                squashed.set(r, k, y);
                actions.set(r, k, self.to_env(k, y));
            }
            log_prob.push(lp);
        }
        PolicySample {
            actions,
            squashed,
            noise,
            std,
            std_active,
            log_prob,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, states: &DenseMatrix, rng: &mut R) -> Result<PolicySample, NumError> {
        let noise = DenseMatrix::from_fn(states.rows(), self.action_dim(), |_, _| rng.sample(StandardNormal));
        self.sample_with_noise(states, noise)
    }

    pub fn sample_with_noise(&self, states: &DenseMatrix, noise: DenseMatrix) -> Result<PolicySample, NumError> {
        let out = self.net.predict(states)?;
        Ok(self.sample_from(&out, noise))
    }

    /// Caching variant of [`Self::sample_with_noise`] for a following [`Self::backward`].
    pub fn forward_sample(&mut self, states: &DenseMatrix, noise: DenseMatrix) -> Result<PolicySample, NumError> {
        let out = self.net.forward(states)?;
        Ok(self.sample_from(&out, noise))
    }

    /// Gradients of `Σ_r [c_r · log π_r + Σ_k g_rk · a_rk]` where `a` is in
    /// environment units, back through the reparameterized draw.
    pub fn backward(
        &mut self,
        sample: &PolicySample,
        grad_log_prob: &[f64],
        grad_action: &DenseMatrix,
    ) -> Result<Gradients, NumError> {
        let (n, a) = (sample.actions.rows(), self.action_dim());
        let mut g = DenseMatrix::zeros(n, 2 * a);
        for r in 0..n {
            for k in 0..a {
                let y = sample.squashed.get(r, k);
                let sd = sample.std.get(r, k);
                let eps = sample.noise.get(r, k);
                // d/du of the action and of log π through u = μ + σε
                let da_du = self.half_range(k) * (1.0 - y * y);
                let dlp_du = 2.0 * y;
                let gu = grad_action.get(r, k) * da_du + grad_log_prob[r] * dlp_du;
                g.set(r, k, gu);
                if sample.std_active[r * a + k] {
                    g.set(r, a + k, gu * sd * eps - grad_log_prob[r]);
                }
            }
        }
        Ok(self.net.backward(&g)?.0)
    }
}
