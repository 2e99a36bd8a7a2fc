//! Analytic environments with known dynamics.
//!
//! * `pendulum`: torque-limited swing-up; observation `(cos θ, sin θ, θ̇)` with
//!   θ = 0 upright.
//! * `bimodal-fork`: 1-D walk whose next state is one of two points `2δ` apart,
//!   chosen by a fair coin. Its conditional mean is never visited, which makes
//!   it a probe for models that average over modes.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment `{0}` (known: pendulum, bimodal-fork)")]
    Unknown(String),
    #[error("state is off the (cos, sin) manifold: cos²+sin² = {0}")]
    OffManifold(f64),
    #[error("expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub episode_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Result<StepResult, EnvError>;
    fn state(&self) -> &[f64];
}

pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_G: f64 = 10.0;
pub const PENDULUM_MASS: f64 = 1.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const PENDULUM_MAX_TORQUE: f64 = 2.0;
pub const PENDULUM_EPISODE: usize = 200;

pub const FORK_HALF_GAP: f64 = 0.5;
pub const FORK_DRIFT: f64 = 0.1;
pub const FORK_BOUND: f64 = 2.0;
pub const FORK_EPISODE: usize = 100;

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Angular acceleration `3g/(2l)·sin θ + 3τ/(m l²)`.
pub fn pendulum_acceleration(theta: f64, torque: f64) -> f64 {
    3.0 * PENDULUM_G / (2.0 * PENDULUM_LENGTH) * theta.sin()
        + 3.0 * torque / (PENDULUM_MASS * PENDULUM_LENGTH * PENDULUM_LENGTH)
}

pub fn pendulum_observation(theta: f64, theta_dot: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin(), theta_dot]
}

/// One semi-implicit Euler step from an observation `(cos θ, sin θ, θ̇)`.
/// Returns the next observation and the reward of the current state and torque.
pub fn pendulum_step(state: &[f64], torque: f64) -> Result<(Vec<f64>, f64), EnvError> {
    if state.len() != 3 {
        return Err(EnvError::Dimension {
            expected: 3,
            got: state.len(),
        });
    }
    let r2 = state[0] * state[0] + state[1] * state[1];
    if (r2 - 1.0).abs() > 1e-6 {
        return Err(EnvError::OffManifold(r2));
    }
    let theta = state[1].atan2(state[0]);
    let theta_dot = state[2];
    let u = torque.clamp(-PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE);
    let reward = -(wrap_angle(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    let new_dot = (theta_dot + pendulum_acceleration(theta, u) * PENDULUM_DT)
        .clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
    let new_theta = theta + new_dot * PENDULUM_DT;
    Ok((pendulum_observation(new_theta, new_dot), reward))
}

/// The two possible next states of the fork from `(s, a)`, lower mode first.
pub fn fork_modes(s: f64, a: f64) -> [f64; 2] {
    let base = s + FORK_DRIFT * a.clamp(-1.0, 1.0);
    [
        (base - FORK_HALF_GAP).clamp(-FORK_BOUND, FORK_BOUND),
        (base + FORK_HALF_GAP).clamp(-FORK_BOUND, FORK_BOUND),
    ]
}

/// `s' = clip(s + 0.1a + c·δ)` with `c = −1` when `upper` is false, `+1` otherwise.
pub fn bimodal_fork_transition(s: f64, a: f64, upper: bool) -> (f64, f64) {
    let modes = fork_modes(s.clamp(-FORK_BOUND, FORK_BOUND), a);
    let next = if upper { modes[1] } else { modes[0] };
    (next, -next.abs())
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    obs: Vec<f64>,
    t: usize,
}

impl Pendulum {
    pub fn new() -> Self {
        Self {
            spec: pendulum_spec(),
            obs: pendulum_observation(0.0, 0.0),
            t: 0,
        }
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.obs = pendulum_observation(theta, theta_dot);
        self.t = 0;
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let theta = rng.random_range(-PI..=PI);
        let theta_dot = rng.random_range(-1.0..=1.0);
        self.set_state(theta, theta_dot);
        self.obs.clone()
    }

    fn step(&mut self, action: &[f64], _rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if action.len() != 1 {
            return Err(EnvError::Dimension {
                expected: 1,
                got: action.len(),
            });
        }
        let (next, reward) = pendulum_step(&self.obs, action[0])?;
        self.obs = next.clone();
        self.t += 1;
        Ok(StepResult {
            next_state: next,
            reward,
            terminal: false,
            truncated: self.t >= PENDULUM_EPISODE,
        })
    }

    fn state(&self) -> &[f64] {
        &self.obs
    }
}

#[derive(Clone, Debug)]
pub struct BimodalFork {
    spec: EnvSpec,
    s: Vec<f64>,
    t: usize,
}

impl BimodalFork {
    pub fn new() -> Self {
        Self {
            spec: fork_spec(),
            s: vec![0.0],
            t: 0,
        }
    }

    pub fn set_state(&mut self, s: f64) {
        self.s = vec![s];
        self.t = 0;
    }
}

impl Default for BimodalFork {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for BimodalFork {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let s = rng.random_range(-1.0..=1.0);
        self.set_state(s);
        self.s.clone()
    }

    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if action.len() != 1 {
            return Err(EnvError::Dimension {
                expected: 1,
                got: action.len(),
            });
        }
        let upper = rng.random_bool(0.5);
        let (next, reward) = bimodal_fork_transition(self.s[0], action[0], upper);
        self.s = vec![next];
        self.t += 1;
        Ok(StepResult {
            next_state: self.s.clone(),
            reward,
            terminal: false,
            truncated: self.t >= FORK_EPISODE,
        })
    }

    fn state(&self) -> &[f64] {
        &self.s
    }
}

pub fn pendulum_spec() -> EnvSpec {
    EnvSpec {
        name: "pendulum",
        state_dim: 3,
        action_dim: 1,
        action_low: vec![-PENDULUM_MAX_TORQUE],
        action_high: vec![PENDULUM_MAX_TORQUE],
        episode_len: PENDULUM_EPISODE,
    }
}

pub fn fork_spec() -> EnvSpec {
    EnvSpec {
        name: "bimodal-fork",
        state_dim: 1,
        action_dim: 1,
        action_low: vec![-1.0],
        action_high: vec![1.0],
        episode_len: FORK_EPISODE,
    }
}

pub const ENV_NAMES: [&str; 2] = ["pendulum", "bimodal-fork"];

pub fn env_spec(name: &str) -> Result<EnvSpec, EnvError> {
    match name {
        "pendulum" => Ok(pendulum_spec()),
        "bimodal-fork" => Ok(fork_spec()),
        other => Err(EnvError::Unknown(other.to_string())),
    }
}

pub fn make_env(name: &str) -> Result<Box<dyn Environment>, EnvError> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "bimodal-fork" => Ok(Box::new(BimodalFork::new())),
        other => Err(EnvError::Unknown(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upright_is_an_equilibrium_with_zero_reward() {
        let s = pendulum_observation(0.0, 0.0);
        let (next, r) = pendulum_step(&s, 0.0).unwrap();
        assert_eq!(next, s);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn pendulum_reward_is_nonpositive_and_zero_only_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let theta: f64 = rng.random_range(-PI..PI);
            let dot: f64 = rng.random_range(-8.0..8.0);
            let u: f64 = rng.random_range(-2.0..2.0);
            let (_, r) = pendulum_step(&pendulum_observation(theta, dot), u).unwrap();
            assert!(r < 0.0);
        }
    }

    #[test]
    fn off_manifold_state_is_rejected() {
        assert!(matches!(
            pendulum_step(&[1.0, 0.1, 0.0], 0.0),
            Err(EnvError::OffManifold(_))
        ));
    }

    #[test]
    fn wrap_maps_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    // Independent RK4 integration of θ̈ = 15 sin θ with the same speed limit.
    fn rk4_trajectory(theta0: f64, steps: usize) -> Vec<(f64, f64)> {
        let f = |th: f64, w: f64| (w, 15.0 * th.sin());
        let (mut th, mut w) = (theta0, 0.0);
        let mut out = Vec::new();
        let sub = 10;
        let h = 0.05 / sub as f64;
        for _ in 0..steps {
            for _ in 0..sub {
                let (k1a, k1b) = f(th, w);
                let (k2a, k2b) = f(th + 0.5 * h * k1a, w + 0.5 * h * k1b);
                let (k3a, k3b) = f(th + 0.5 * h * k2a, w + 0.5 * h * k2b);
                let (k4a, k4b) = f(th + h * k3a, w + h * k3b);
                th += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
                w += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
                w = w.clamp(-8.0, 8.0);
            }
            out.push((th, w));
        }
        out
    }

    // Small unforced swing 0.1 rad off the hanging rest position. Semi-implicit
    // Euler at dt = 0.05 carries a first-order phase error of about 0.011 rad
    // over 50 steps, so angles are held to 1.2e-2 and rates to 1e-2.
    #[test]
    fn free_swing_tracks_rk4() {
        let theta0 = PI - 0.1;
        let reference = rk4_trajectory(theta0, 50);
        let mut env = Pendulum::new();
        env.set_state(theta0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut worst_angle, mut worst_rate): (f64, f64) = (0.0, 0.0);
        for (th, w) in reference {
            let s = env.step(&[0.0], &mut rng).unwrap().next_state;
            let angle = s[1].atan2(s[0]);
            worst_angle = worst_angle.max(wrap_angle(angle - th).abs());
            worst_rate = worst_rate.max((s[2] - w).abs());
        }
        assert!(worst_angle < 1.2e-2, "angle deviation {worst_angle}");
        assert!(worst_rate < 1e-2, "rate deviation {worst_rate}");
    }

    #[test]
    fn pendulum_truncates_at_episode_length() {
        let mut env = Pendulum::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        env.reset(&mut rng);
        for t in 1..=PENDULUM_EPISODE {
            let res = env.step(&[0.5], &mut rng).unwrap();
            assert!(!res.terminal);
            assert_eq!(res.truncated, t == PENDULUM_EPISODE);
        }
    }

    #[test]
    fn fork_from_origin_is_a_fair_coin() {
        let mut env = BimodalFork::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut upper = 0;
        for _ in 0..1000 {
            env.set_state(0.0);
            let s = env.step(&[0.0], &mut rng).unwrap().next_state[0];
            assert!(s == 0.5 || s == -0.5, "{s}");
            if s > 0.0 {
                upper += 1;
            }
        }
        let freq = upper as f64 / 1000.0;
        assert!((freq - 0.5).abs() <= 0.03, "{freq}");
        // the conditional mean sits exactly between the modes
        let m = fork_modes(0.0, 0.0);
        assert_eq!((m[0] + m[1]) / 2.0, 0.0);
    }

    #[test]
    fn fork_clips_at_boundary() {
        assert_eq!(bimodal_fork_transition(2.0, 1.0, true).0, 2.0);
        assert_eq!(bimodal_fork_transition(-2.0, -1.0, false).0, -2.0);
    }

    #[test]
    fn reset_is_seeded_and_on_manifold() {
        let mut a = Pendulum::new();
        let mut b = Pendulum::new();
        let sa = a.reset(&mut ChaCha8Rng::seed_from_u64(9));
        let sb = b.reset(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(sa, sb);
        assert!((sa[0] * sa[0] + sa[1] * sa[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pendulum_reset_angle_is_uniform() {
        // χ² with 10 bins; 9 dof critical value at p = 0.01 is 21.666
        let mut env = Pendulum::new();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut bins = [0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            let s = env.reset(&mut rng);
            let theta = s[1].atan2(s[0]);
            let idx = (((theta + PI) / (2.0 * PI)) * 10.0).floor().clamp(0.0, 9.0) as usize;
            bins[idx] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = bins
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn registry_resolves_names() {
        for name in ENV_NAMES {
            assert_eq!(make_env(name).unwrap().spec().name, name);
        }
        assert!(matches!(env_spec("cartpole"), Err(EnvError::Unknown(_))));
    }
}
