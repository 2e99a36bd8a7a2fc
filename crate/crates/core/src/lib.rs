//! Model-based reinforcement learning with IMLE world-model ensembles and
//! uncertainty-weighted soft actor-critic.
//!
//! * [`numkit`]: dense/residual networks with analytic gradients and Adam.
//! * [`worldmodel`]: conditional IMLE generators, ensembles, predictive uncertainty.
//! * [`agent`]: SAC with quantile critics and a confidence-weighted critic loss.
//! * [`buffers`]: replay stores, weighted model rollouts, mixed batches.
//! * [`envs`]: analytic pendulum and bimodal-fork environments.
//! * [`theory`]: numerical checks of weighted Bellman regression and GLS optimality.
//! * [`harness`]: experiment loop, configuration, metrics and reports.

pub mod numkit;
pub mod rng;
pub mod envs;
pub mod buffers;
pub mod worldmodel;
pub mod agent;
pub mod theory;
pub mod harness;
pub mod checkpoint;
