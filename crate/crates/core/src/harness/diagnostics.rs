//! Finite-difference checks of every trainable network on random small
//! instances.

use rand::Rng;

use super::HarnessError;
use crate::agent::{quantile_huber_rows, AgentConfig, SacAgent};
use crate::numkit::gradcheck::{check_parameters, GradCheckReport};
use crate::numkit::DenseMatrix;
use crate::rng::RngStreams;
use crate::worldmodel::{sample_latents, ModelKind, WorldModelConfig, WorldModelNet};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub network: &'static str,
    pub instance: usize,
    pub report: GradCheckReport,
}

impl GradCheckCase {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn world_model_case<R: Rng>(kind: ModelKind, rng: &mut R) -> Result<GradCheckReport, HarnessError> {
    let sd = rng.random_range(1..=3);
    let ad = rng.random_range(1..=2);
    let config = WorldModelConfig {
        latent_dim: sd + 1 + rng.random_range(0..=2),
        width: rng.random_range(3..=6),
        blocks: rng.random_range(1..=2),
        kind,
        ..WorldModelConfig::new(sd, ad)
    };
    let mut m = WorldModelNet::new(config.clone(), rng)?;
    let b = rng.random_range(3..=5);
    let sa = random_matrix(b, sd + ad, rng);
    let y = random_matrix(b, 1 + sd, rng);
    let input = match kind {
        ModelKind::Imle => DenseMatrix::hcat(&[&sa, &sample_latents(b, config.latent_dim, rng)])?,
        ModelKind::Gaussian => sa,
    };
    let mse = |pred: &DenseMatrix| {
        let mut loss = 0.0;
        let mut grad = DenseMatrix::zeros(pred.rows(), pred.cols());
        for r in 0..pred.rows() {
            for ((g, p), t) in grad.row_mut(r).iter_mut().zip(pred.row(r)).zip(y.row(r)) {
                loss += (p - t) * (p - t) / b as f64;
                *g = 2.0 * (p - t) / b as f64;
            }
        }
        (loss, grad)
    };
    let raw = m.network_mut().forward(&input)?;
    let upstream = match kind {
        ModelKind::Imle => mse(&raw).1,
        ModelKind::Gaussian => m.gaussian_nll(&raw, &y).1,
    };
    let (grads, _) = m.network_mut().backward(&upstream)?;
    Ok(check_parameters(
        m.network().params(),
        &grads,
        |p| {
            let mut net = m.network().clone();
            *net.params_mut() = p.clone();
            let raw = net.predict(&input).expect("shapes checked above");
            match kind {
                ModelKind::Imle => mse(&raw).0,
                ModelKind::Gaussian => m.gaussian_nll(&raw, &y).0,
            }
        },
        STEP,
    ))
}

fn small_agent<R: Rng>(rng: &mut R) -> Result<(SacAgent, usize, usize), HarnessError> {
    let sd = rng.random_range(1..=3);
    let ad = rng.random_range(1..=2);
    let config = AgentConfig {
        hidden_width: rng.random_range(3..=6),
        hidden_layers: rng.random_range(1..=2),
        quantiles: rng.random_range(2..=5),
        ..AgentConfig::new(sd, vec![-2.0; ad], vec![2.0; ad])
    };
    let mut agent = SacAgent::new(config, rng)?;
    agent.set_log_alpha(rng.random_range(-2.0..0.5));
    Ok((agent, sd, ad))
}

fn critic_case<R: Rng>(rng: &mut R) -> Result<GradCheckReport, HarnessError> {
    let (mut agent, sd, ad) = small_agent(rng)?;
    let b = rng.random_range(3..=5);
    let sa = random_matrix(b, sd + ad, rng);
    let nq = agent.critic().quantiles();
    let target = DenseMatrix::from_fn(b, nq, |_, _| rng.random_range(-3.0..3.0));
    let weights: Vec<f64> = (0..b).map(|_| rng.random_range(0.05..=1.0)).collect();
    let taus = agent.critic().taus().to_vec();
    let mut report: Option<GradCheckReport> = None;
    for k in 0..2 {
        let (_, grads) = agent.critic_mut().loss_and_grads(k, &sa, &target, &weights, 1.0)?;
        let probe = agent.critic().online(k).clone();
        let r = check_parameters(
            probe.params(),
            &grads,
            |p| {
                let mut net = probe.clone();
                *net.params_mut() = p.clone();
                let th = net.predict(&sa).expect("shapes checked above");
                let (l, _) = quantile_huber_rows(&th, &target, &taus, 1.0);
                l.iter().zip(&weights).map(|(l, w)| w * l).sum::<f64>() / b as f64
            },
            STEP,
        );
        report = Some(match report {
            Some(acc) => acc.merge(r),
            None => r,
        });
    }
    Ok(report.expect("two critics"))
}

fn policy_case<R: Rng>(rng: &mut R) -> Result<GradCheckReport, HarnessError> {
    let (mut agent, sd, ad) = small_agent(rng)?;
    let b = rng.random_range(3..=5);
    let states = random_matrix(b, sd, rng);
    let noise = random_matrix(b, ad, rng);
    let (_, grads, _) = agent.actor_loss(&states, noise.clone(), None)?;
    let probe = agent.clone();
    Ok(check_parameters(
        agent.policy().network().params(),
        &grads,
        |p| {
            let mut a = probe.clone();
            *a.policy_mut().network_mut().params_mut() = p.clone();
            a.actor_loss(&states, noise.clone(), None).expect("shapes checked above").0
        },
        STEP,
    ))
}

/// `instances` random instances per network: IMLE world model, Gaussian
/// world model, twin quantile critics and the policy through the actor loss.
pub fn gradcheck_suite(instances: usize, seed: u64) -> Result<Vec<GradCheckCase>, HarnessError> {
    let streams = RngStreams::new(seed);
    let mut out = Vec::with_capacity(4 * instances);
    for i in 0..instances {
        let mut rng = streams.indexed("gradcheck", i as u64);
        out.push(GradCheckCase {
            network: "world-model-imle",
            instance: i,
            report: world_model_case(ModelKind::Imle, &mut rng)?,
        });
        out.push(GradCheckCase {
            network: "world-model-gaussian",
            instance: i,
            report: world_model_case(ModelKind::Gaussian, &mut rng)?,
        });
        out.push(GradCheckCase {
            network: "quantile-critic",
            instance: i,
            report: critic_case(&mut rng)?,
        });
        out.push(GradCheckCase {
            network: "policy",
            instance: i,
            report: policy_case(&mut rng)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_a_few_instances() {
        let cases = gradcheck_suite(3, 1).unwrap();
        assert_eq!(cases.len(), 12);
        for c in &cases {
            assert!(c.passes(), "{c:?}");
            assert!(c.report.checked > 0);
        }
    }
}
