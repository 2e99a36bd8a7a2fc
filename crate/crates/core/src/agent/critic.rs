use rand::Rng;

use crate::numkit::{adam_step, AdamConfig, AdamState, DenseMatrix, Gradients, NetLayout, NetSpec, Network, NumError};

/// Quantile midpoints `τ_i = (2i − 1) / 2N`, `i = 1..N`.
pub fn quantile_midpoints(n: usize) -> Vec<f64> {
    (1..=n).map(|i| (2 * i - 1) as f64 / (2 * n) as f64).collect()
}

pub fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

fn huber_grad(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        u
    } else {
        kappa * u.signum()
    }
}

/// `ρ_τ(u) = |τ − 1{u < 0}| · Huber_κ(u) / κ` for TD residual `u = target − θ`.
pub fn quantile_huber(u: f64, tau: f64, kappa: f64) -> f64 {
    let ind = if u < 0.0 { 1.0 } else { 0.0 };
    (tau - ind).abs() * huber(u, kappa) / kappa
}

/// Per-transition quantile-Huber loss averaged over every (online quantile,
/// target quantile) pair, and its gradient with respect to the online
/// quantiles. Rows of `theta` and `target` are transitions.
pub fn quantile_huber_rows(
    theta: &DenseMatrix,
    target: &DenseMatrix,
    taus: &[f64],
    kappa: f64,
) -> (Vec<f64>, DenseMatrix) {
    let (n, q) = (theta.rows(), theta.cols());
    let nt = target.cols();
    let norm = (q * nt) as f64;
    let mut losses = Vec::with_capacity(n);
    let mut grad = DenseMatrix::zeros(n, q);
    for r in 0..n {
        let mut l = 0.0;
        let th = theta.row(r);
        let tg = target.row(r);
        let g = grad.row_mut(r);
        for (i, (&t, gi)) in th.iter().zip(g.iter_mut()).enumerate() {
            let tau = taus[i];
            let mut acc = 0.0;
            for &z in tg {
                let u = z - t;
                let ind = if u < 0.0 { 1.0 } else { 0.0 };
                let k = (tau - ind).abs() / kappa;
                l += k * huber(u, kappa);
                acc -= k * huber_grad(u, kappa);
            }
            *gi = acc / norm;
        }
        losses.push(l / norm);
    }
    (losses, grad)
}

/// Two online quantile networks with Polyak-tracked targets.
#[derive(Clone, Debug)]
pub struct QuantileCritic {
    online: [Network; 2],
    target: [Network; 2],
    adam: [AdamState; 2],
    taus: Vec<f64>,
}

impl QuantileCritic {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        width: usize,
        hidden: usize,
        quantiles: usize,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let spec = NetSpec {
            input_dim,
            width,
            layout: NetLayout::Mlp { hidden },
            heads: vec![quantiles],
        };
        let a = Network::new(spec.clone(), rng);
        let b = Network::new(spec, rng);
        Self::from_networks([a, b], lr)
    }

    /// Targets start as copies of the online networks.
    pub fn from_networks(online: [Network; 2], lr: f64) -> Self {
        let quantiles = online[0].output_dim();
        let adam = [
            AdamState::new(online[0].params(), AdamConfig::with_lr(lr)),
            AdamState::new(online[1].params(), AdamConfig::with_lr(lr)),
        ];
        Self {
            target: online.clone(),
            online,
            adam,
            taus: quantile_midpoints(quantiles),
        }
    }

    pub fn quantiles(&self) -> usize {
        self.taus.len()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn online(&self, i: usize) -> &Network {
        &self.online[i]
    }

    pub fn online_mut(&mut self, i: usize) -> &mut Network {
        &mut self.online[i]
    }

    pub fn target(&self, i: usize) -> &Network {
        &self.target[i]
    }

    pub fn target_mut(&mut self, i: usize) -> &mut Network {
        &mut self.target[i]
    }

    /// Elementwise minimum of the two target networks' quantiles.
    pub fn target_min(&self, sa: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        let mut a = self.target[0].predict(sa)?;
        let b = self.target[1].predict(sa)?;
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x = x.min(*y);
        }
        Ok(a)
    }

    /// Mean over quantiles of each online network, per row.
    pub fn online_means(&self, sa: &DenseMatrix) -> Result<[Vec<f64>; 2], NumError> {
        let mean = |m: DenseMatrix| -> Vec<f64> {
            (0..m.rows()).map(|r| m.row(r).iter().sum::<f64>() / m.cols() as f64).collect()
        };
        Ok([mean(self.online[0].predict(sa)?), mean(self.online[1].predict(sa)?)])
    }

    /// Weighted quantile-Huber loss of online network `i` against fixed target
    /// quantiles: `mean_b (w_b · ℓ_b)`. Returns the loss and parameter gradients.
    pub fn loss_and_grads(
        &mut self,
        i: usize,
        sa: &DenseMatrix,
        target: &DenseMatrix,
        weights: &[f64],
        kappa: f64,
    ) -> Result<(f64, Gradients), NumError> {
        let theta = self.online[i].forward(sa)?;
        let (losses, mut grad) = quantile_huber_rows(&theta, target, &self.taus, kappa);
        let b = losses.len() as f64;
        let mut loss = 0.0;
        for (r, (l, w)) in losses.iter().zip(weights).enumerate() {
            loss += w * l / b;
            grad.row_mut(r).iter_mut().for_each(|g| *g *= w / b);
        }
        let (grads, _) = self.online[i].backward(&grad)?;
        Ok((loss, grads))
    }

    pub fn apply(&mut self, i: usize, grads: &Gradients) -> Result<(), NumError> {
        adam_step(self.online[i].params_mut(), grads, &mut self.adam[i])
    }

    /// `target ← (1 − τ)·target + τ·online` for both networks.
    pub fn polyak_update(&mut self, tau: f64) {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.params_mut().blend_toward(o.params(), tau);
        }
    }

    /// Gradient of `Σ_r c_r · mean_i θ_i(s_r, a_r)` for network `i`, with
    /// respect to its input. Parameters are left untouched.
    pub fn input_gradient(&self, i: usize, sa: &DenseMatrix, coef: &[f64]) -> Result<DenseMatrix, NumError> {
        let mut net = self.online[i].clone();
        net.forward(sa)?;
        let q = self.quantiles() as f64;
        let g = DenseMatrix::from_fn(sa.rows(), self.quantiles(), |r, _| coef[r] / q);
        Ok(net.backward(&g)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn midpoints() {
        assert_eq!(quantile_midpoints(1), vec![0.5]);
        assert_eq!(quantile_midpoints(4), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn quantile_huber_hand_values() {
        assert_eq!(quantile_huber(0.5, 0.5, 1.0), 0.0625);
        // negative residual uses 1 − τ; beyond κ the loss is linear
        assert_eq!(quantile_huber(-2.0, 0.25, 1.0), 0.75 * 1.5);
        let t = DenseMatrix::from_rows(&[[0.0]]).unwrap();
        let z = DenseMatrix::from_rows(&[[0.5]]).unwrap();
        assert_eq!(quantile_huber_rows(&t, &z, &[0.5], 1.0).0, vec![0.0625]);
    }

    #[test]
    fn polyak_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = QuantileCritic::new(3, 8, 1, 4, 1e-3, &mut rng);
        let shift = c.online(0).params().clone();
        let mut moved = shift.clone();
        moved.scale(2.0);
        *c.online_mut(0).params_mut() = moved;
        let d0 = c.target(0).params().squared_distance(c.online(0).params());
        c.polyak_update(0.1);
        let d1 = c.target(0).params().squared_distance(c.online(0).params());
        assert!((d1 - 0.81 * d0).abs() < 1e-9 * d0);
        c.polyak_update(1.0);
        assert_eq!(c.target(0).params(), c.online(0).params());
    }
}
