use rand::Rng;
use rand_distr::StandardNormal;

use super::{ModelKind, WorldModelConfig, WorldModelError};
use crate::numkit::{adam_step, AdamConfig, AdamState, DenseMatrix, NetLayout, NetSpec, Network};

const LOGVAR_MAX: f64 = 2.0;
const LOGVAR_MIN: f64 = -10.0;

/// Affine rescaling of `[r, s']` targets to zero mean, unit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetScaler {
    pub fn fit<'a>(targets: impl Iterator<Item = &'a [f64]>, dim: usize) -> Option<Self> {
        let rows: Vec<&[f64]> = targets.collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in std.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt().max(1e-6));
        Some(Self { mean, std })
    }

    fn normalize(&self, y: &mut DenseMatrix) {
        for r in 0..y.rows() {
            for ((v, m), s) in y.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    fn denormalize(&self, y: &mut DenseMatrix) {
        for r in 0..y.rows() {
            for ((v, m), s) in y.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smoothly bounded log-variance and its derivative with respect to the raw output.
fn bounded_logvar(raw: f64) -> (f64, f64) {
    let upper = LOGVAR_MAX - softplus(LOGVAR_MAX - raw);
    let lv = LOGVAR_MIN + softplus(upper - LOGVAR_MIN);
    let dlv = logistic(LOGVAR_MAX - raw) * logistic(upper - LOGVAR_MIN);
    (lv, dlv)
}

/// One conditional generator `g(s, a, z) → [r̃, s̃']` with its optimizer state.
///
/// The Gaussian baseline shares the trunk, but its input omits `z`; its heads
/// emit a mean and a log-variance and the first `1 + state_dim` latent
/// coordinates act as the reparameterization noise.
#[derive(Clone, Debug)]
pub struct WorldModelNet {
    config: WorldModelConfig,
    net: Network,
    adam: AdamState,
    scaler: Option<TargetScaler>,
}

impl WorldModelNet {
    pub fn new<R: Rng + ?Sized>(config: WorldModelConfig, rng: &mut R) -> Result<Self, WorldModelError> {
        config.validate()?;
        let net = Network::new(Self::net_spec(&config), rng);
        let adam = AdamState::new(net.params(), AdamConfig::with_lr(config.lr));
        Ok(Self {
            config,
            net,
            adam,
            scaler: None,
        })
    }

    pub fn from_network(config: WorldModelConfig, net: Network) -> Result<Self, WorldModelError> {
        config.validate()?;
        if *net.spec() != Self::net_spec(&config) {
            return Err(WorldModelError::Dimension(
                "network architecture does not match the world-model config".into(),
            ));
        }
        let adam = AdamState::new(net.params(), AdamConfig::with_lr(config.lr));
        Ok(Self {
            config,
            net,
            adam,
            scaler: None,
        })
    }

    pub fn net_spec(config: &WorldModelConfig) -> NetSpec {
        let out = 1 + config.state_dim;
        let (input_dim, heads) = match config.kind {
            ModelKind::Imle => (
                config.state_dim + config.action_dim + config.latent_dim,
                vec![1, config.state_dim],
            ),
            ModelKind::Gaussian => (config.state_dim + config.action_dim, vec![out, out]),
        };
        NetSpec {
            input_dim,
            width: config.width,
            layout: NetLayout::Residual {
                blocks: config.blocks,
            },
            heads,
        }
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    pub fn scaler(&self) -> Option<&TargetScaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<TargetScaler>) {
        self.scaler = scaler;
    }

    pub fn output_dim(&self) -> usize {
        1 + self.config.state_dim
    }

    fn check_rows(&self, sa: &DenseMatrix, latents: Option<&DenseMatrix>) -> Result<(), WorldModelError> {
        let sa_dim = self.config.state_dim + self.config.action_dim;
        if sa.cols() != sa_dim {
            return Err(WorldModelError::Dimension(format!(
                "state-action width {sa_dim}, got {}",
                sa.cols()
            )));
        }
        if let Some(z) = latents {
            if z.cols() != self.config.latent_dim || z.rows() != sa.rows() {
                return Err(WorldModelError::Dimension(format!(
                    "latents {}x{}, got {}x{}",
                    sa.rows(),
                    self.config.latent_dim,
                    z.rows(),
                    z.cols()
                )));
            }
        }
        Ok(())
    }

    fn net_input(&self, sa: &DenseMatrix, latents: &DenseMatrix) -> Result<DenseMatrix, WorldModelError> {
        Ok(match self.config.kind {
            ModelKind::Imle => DenseMatrix::hcat(&[sa, latents])?,
            ModelKind::Gaussian => sa.clone(),
        })
    }

    /// Row-aligned generation: row `i` is `g(sa_i, z_i)` as `[r̃, s̃']` in raw units.
    pub fn generate_rows(&self, sa: &DenseMatrix, latents: &DenseMatrix) -> Result<DenseMatrix, WorldModelError> {
        self.check_rows(sa, Some(latents))?;
        let raw = self.net.predict(&self.net_input(sa, latents)?)?;
        let mut y = match self.config.kind {
            ModelKind::Imle => raw,
            ModelKind::Gaussian => {
                let d = self.output_dim();
                let mut y = raw.columns(0, d);
                for r in 0..y.rows() {
                    for j in 0..d {
                        let (lv, _) = bounded_logvar(raw.get(r, d + j));
                        let v = y.get(r, j) + (0.5 * lv).exp() * latents.get(r, j);
                        y.set(r, j, v);
                    }
                }
                y
            }
        };
        if let Some(sc) = &self.scaler {
            sc.denormalize(&mut y);
        }
        Ok(y)
    }

    /// `(s̃', r̃) = g(s, a, z)` for a single input.
    pub fn generate(&self, s: &[f64], a: &[f64], z: &[f64]) -> Result<(Vec<f64>, f64), WorldModelError> {
        let mut row = s.to_vec();
        row.extend_from_slice(a);
        let sa = DenseMatrix::from_vec(1, row.len(), row)?;
        let zm = DenseMatrix::from_vec(1, z.len(), z.to_vec())?;
        let y = self.generate_rows(&sa, &zm)?;
        Ok((y.row(0)[1..].to_vec(), y.get(0, 0)))
    }

    /// Mean prediction of the Gaussian variant, or the `z = 0` output of an IMLE model.
    pub fn mean_prediction(&self, sa: &DenseMatrix) -> Result<DenseMatrix, WorldModelError> {
        let z = DenseMatrix::zeros(sa.rows(), self.config.latent_dim);
        self.generate_rows(sa, &z)
    }

    /// Nearest-candidate assignment: for each datum, the index of the
    /// candidate latent whose generated output is closest in squared
    /// Euclidean distance. The same candidates serve every datum; ties go to
    /// the lower index. No gradients are computed.
    pub fn assign_latents(
        &self,
        sa: &DenseMatrix,
        targets: &DenseMatrix,
        candidates: &DenseMatrix,
    ) -> Result<Vec<usize>, WorldModelError> {
        let m = candidates.rows();
        if m == 0 {
            return Err(WorldModelError::Config("at least one candidate latent is required".into()));
        }
        if targets.rows() != sa.rows() || targets.cols() != self.output_dim() {
            return Err(WorldModelError::Dimension("targets must be rows of [r, s']".into()));
        }
        let b = sa.rows();
        let sa_w = sa.cols();
        let z_w = candidates.cols();
        let tiled_sa = DenseMatrix::from_fn(b * m, sa_w, |r, c| sa.get(r / m, c));
        let tiled_z = DenseMatrix::from_fn(b * m, z_w, |r, c| candidates.get(r % m, c));
        let preds = self.generate_rows(&tiled_sa, &tiled_z)?;
        let (targets, preds) = self.comparison_space(targets, preds);
        Ok((0..b)
            .map(|i| {
                let y = targets.row(i);
                let mut best = (0, f64::INFINITY);
                for j in 0..m {
                    let d = squared_distance(preds.row(i * m + j), y);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best.0
            })
            .collect())
    }

    // distances are measured in normalized units when a scaler is active
    fn comparison_space(&self, targets: &DenseMatrix, mut preds: DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let mut t = targets.clone();
        if let Some(sc) = &self.scaler {
            sc.normalize(&mut t);
            sc.normalize(&mut preds);
        }
        (t, preds)
    }

    /// One gradient step on `mean_i ‖g(s_i, a_i, z*_i) − y_i‖²`; returns the pre-step loss.
    pub fn imle_update(
        &mut self,
        sa: &DenseMatrix,
        targets: &DenseMatrix,
        chosen: &DenseMatrix,
    ) -> Result<f64, WorldModelError> {
        if self.config.kind != ModelKind::Imle {
            return Err(WorldModelError::Config("imle_update on a Gaussian model".into()));
        }
        self.check_rows(sa, Some(chosen))?;
        let mut y = targets.clone();
        if let Some(sc) = &self.scaler {
            sc.normalize(&mut y);
        }
        let input = self.net_input(sa, chosen)?;
        let pred = self.net.forward(&input)?;
        let b = sa.rows() as f64;
        let mut grad = DenseMatrix::zeros(pred.rows(), pred.cols());
        let mut loss = 0.0;
        for r in 0..pred.rows() {
            for ((g, p), t) in grad.row_mut(r).iter_mut().zip(pred.row(r)).zip(y.row(r)) {
                let diff = p - t;
                loss += diff * diff / b;
                *g = 2.0 * diff / b;
            }
        }
        if !loss.is_finite() {
            self.net.backward(&grad).ok();
            return Err(WorldModelError::NonFiniteLoss(loss));
        }
        let (grads, _) = self.net.backward(&grad)?;
        adam_step(self.net.params_mut(), &grads, &mut self.adam)?;
        Ok(loss)
    }

    /// Gaussian negative log-likelihood (constant dropped) and its gradient
    /// with respect to the raw network outputs.
    pub fn gaussian_nll(&self, raw: &DenseMatrix, targets: &DenseMatrix) -> (f64, DenseMatrix) {
        let d = self.output_dim();
        let b = raw.rows() as f64;
        let mut grad = DenseMatrix::zeros(raw.rows(), raw.cols());
        let mut loss = 0.0;
        for r in 0..raw.rows() {
            for j in 0..d {
                let mu = raw.get(r, j);
                let (lv, dlv) = bounded_logvar(raw.get(r, d + j));
                let inv_var = (-lv).exp();
                let diff = targets.get(r, j) - mu;
                loss += 0.5 * (diff * diff * inv_var + lv) / b;
                grad.set(r, j, -diff * inv_var / b);
                grad.set(r, d + j, 0.5 * (1.0 - diff * diff * inv_var) * dlv / b);
            }
        }
        (loss, grad)
    }

    /// One maximum-likelihood step of the Gaussian baseline; returns the pre-step NLL.
    pub fn gaussian_update(&mut self, sa: &DenseMatrix, targets: &DenseMatrix) -> Result<f64, WorldModelError> {
        if self.config.kind != ModelKind::Gaussian {
            return Err(WorldModelError::Config("gaussian_update on an IMLE model".into()));
        }
        self.check_rows(sa, None)?;
        let mut y = targets.clone();
        if let Some(sc) = &self.scaler {
            sc.normalize(&mut y);
        }
        let raw = self.net.forward(sa)?;
        let (loss, grad) = self.gaussian_nll(&raw, &y);
        if !loss.is_finite() {
            self.net.backward(&grad).ok();
            return Err(WorldModelError::NonFiniteLoss(loss));
        }
        let (grads, _) = self.net.backward(&grad)?;
        adam_step(self.net.params_mut(), &grads, &mut self.adam)?;
        Ok(loss)
    }

    /// One training iteration on a minibatch: fresh candidates, assignment,
    /// update (IMLE), or a likelihood step (Gaussian).
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        sa: &DenseMatrix,
        targets: &DenseMatrix,
        candidates: usize,
        rng: &mut R,
    ) -> Result<f64, WorldModelError> {
        match self.config.kind {
            ModelKind::Imle => {
                let cands = sample_latents(candidates, self.config.latent_dim, rng);
                let idx = self.assign_latents(sa, targets, &cands)?;
                let chosen = DenseMatrix::from_fn(sa.rows(), self.config.latent_dim, |r, c| {
                    cands.get(idx[r], c)
                });
                self.imle_update(sa, targets, &chosen)
            }
            ModelKind::Gaussian => self.gaussian_update(sa, targets),
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `n` standard-normal latent rows.
pub fn sample_latents<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(n, dim, |_, _| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::check_parameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(kind: ModelKind) -> WorldModelConfig {
        WorldModelConfig {
            state_dim: 2,
            action_dim: 1,
            latent_dim: 4,
            width: 8,
            blocks: 2,
            kind,
            lr: 1e-3,
            normalize_targets: false,
        }
    }

    #[test]
    fn zero_heads_generate_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = WorldModelNet::new(cfg(ModelKind::Imle), &mut rng).unwrap();
        m.network_mut().zero_heads();
        let (s, r) = m.generate(&[0.3, -1.0], &[0.5], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn generation_is_deterministic_and_checks_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = WorldModelNet::new(cfg(ModelKind::Imle), &mut rng).unwrap();
        let a = m.generate(&[0.3, -1.0], &[0.5], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = m.generate(&[0.3, -1.0], &[0.5], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(a, b);
        assert!(m.generate(&[0.3], &[0.5], &[0.1, 0.2, 0.3, 0.4]).is_err());
        assert!(m.generate(&[0.3, 0.1], &[0.5], &[0.1]).is_err());
    }

    #[test]
    fn single_candidate_always_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = WorldModelNet::new(cfg(ModelKind::Imle), &mut rng).unwrap();
        let sa = DenseMatrix::from_fn(5, 3, |r, c| (r + c) as f64 * 0.2);
        let y = DenseMatrix::from_fn(5, 3, |r, c| (r * c) as f64 * 0.1);
        let cands = sample_latents(1, 4, &mut rng);
        assert_eq!(m.assign_latents(&sa, &y, &cands).unwrap(), vec![0; 5]);
    }

    #[test]
    fn exact_target_gives_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = WorldModelNet::new(cfg(ModelKind::Imle), &mut rng).unwrap();
        let sa = DenseMatrix::from_fn(3, 3, |r, c| (r as f64 - c as f64) * 0.3);
        let z = sample_latents(3, 4, &mut rng);
        let y = m.generate_rows(&sa, &z).unwrap();
        let before = m.network().params().clone();
        let loss = m.imle_update(&sa, &y, &z).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(m.network().params(), &before);
    }

    #[test]
    fn gaussian_nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = WorldModelNet::new(cfg(ModelKind::Gaussian), &mut rng).unwrap();
        let sa = DenseMatrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64).sin());
        let y = DenseMatrix::from_fn(4, 3, |r, c| ((r + 2 * c) as f64).cos());
        let raw = m.network_mut().forward(&sa).unwrap();
        let (_, g) = m.gaussian_nll(&raw, &y);
        let (grads, _) = m.network_mut().backward(&g).unwrap();
        let probe = m.clone();
        let report = check_parameters(
            m.network().params(),
            &grads,
            |p| {
                let mut net = probe.network().clone();
                *net.params_mut() = p.clone();
                let raw = net.predict(&sa).unwrap();
                probe.gaussian_nll(&raw, &y).0
            },
            1e-5,
        );
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn gaussian_samples_use_latent_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = WorldModelNet::new(cfg(ModelKind::Gaussian), &mut rng).unwrap();
        let s = [0.1, 0.2];
        let a = m.generate(&s, &[0.0], &[0.0; 4]).unwrap();
        let b = m.generate(&s, &[0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(a.1 < b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn bounded_logvar_stays_in_range() {
        for raw in [-100.0, -10.0, 0.0, 1.5, 100.0] {
            let (lv, d) = bounded_logvar(raw);
            assert!(lv >= LOGVAR_MIN && lv <= LOGVAR_MAX + 1e-4, "{lv}");
            assert!((0.0..=1.0).contains(&d));
        }
    }
}
