use super::WorldModelError;

/// `K × m` predictions of a `dim`-wide output, stored member-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    members: usize,
    latents: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PredictionSet {
    pub fn new(members: usize, latents: usize, dim: usize, data: Vec<f64>) -> Result<Self, WorldModelError> {
        if data.len() != members * latents * dim || members == 0 || latents == 0 || dim == 0 {
            return Err(WorldModelError::Dimension(format!(
                "prediction set {members}x{latents}x{dim} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            members,
            latents,
            dim,
            data,
        })
    }

    /// Builds from nested `[member][latent][dim]` vectors.
    pub fn from_nested(preds: &[Vec<Vec<f64>>]) -> Result<Self, WorldModelError> {
        let members = preds.len();
        let latents = preds.first().map_or(0, Vec::len);
        let dim = preds
            .first()
            .and_then(|m| m.first())
            .map_or(0, Vec::len);
        let mut data = Vec::with_capacity(members * latents * dim);
        for m in preds {
            if m.len() != latents {
                return Err(WorldModelError::Dimension("ragged latent count".into()));
            }
            for p in m {
                if p.len() != dim {
                    return Err(WorldModelError::Dimension("ragged output width".into()));
                }
                data.extend_from_slice(p);
            }
        }
        Self::new(members, latents, dim, data)
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn latents(&self) -> usize {
        self.latents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members * self.latents
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Prediction number `flat` in member-major order.
    pub fn sample(&self, flat: usize) -> &[f64] {
        &self.data[flat * self.dim..(flat + 1) * self.dim]
    }

    pub fn get(&self, member: usize, latent: usize) -> &[f64] {
        self.sample(member * self.latents + latent)
    }
}

/// Per-dimension moments of a prediction set, population convention throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceComponents {
    pub total: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub aleatoric: Vec<f64>,
}

pub fn variance_components(preds: &PredictionSet) -> VarianceComponents {
    let (k, m, d) = (preds.members, preds.latents, preds.dim);
    let n = (k * m) as f64;
    // shift by the first sample; moments are shift-invariant and identical
    // predictions then give exactly zero spread
    let shift = preds.sample(0).to_vec();
    let mut grand = vec![0.0; d];
    let mut member_means = vec![0.0; k * d];
    for mi in 0..k {
        for li in 0..m {
            for (j, v) in preds.get(mi, li).iter().enumerate() {
                member_means[mi * d + j] += v - shift[j];
            }
        }
        for j in 0..d {
            member_means[mi * d + j] /= m as f64;
            grand[j] += member_means[mi * d + j];
        }
    }
    grand.iter_mut().for_each(|g| *g /= k as f64);

    let mut total = vec![0.0; d];
    let mut epistemic = vec![0.0; d];
    let mut aleatoric = vec![0.0; d];
    for mi in 0..k {
        let mu = &member_means[mi * d..(mi + 1) * d];
        for li in 0..m {
            for (j, v) in preds.get(mi, li).iter().enumerate() {
                let v = v - shift[j];
                total[j] += (v - grand[j]).powi(2);
                aleatoric[j] += (v - mu[j]).powi(2);
            }
        }
        for j in 0..d {
            epistemic[j] += (mu[j] - grand[j]).powi(2);
        }
    }
    for j in 0..d {
        total[j] /= n;
        aleatoric[j] /= n;
        epistemic[j] /= k as f64;
    }
    VarianceComponents {
        total,
        epistemic,
        aleatoric,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyReport {
    /// Mean over output dimensions of the per-dimension standard deviation.
    pub sigma: f64,
    /// Dimension-averaged variance across members of per-member latent means.
    pub epistemic: f64,
    /// Dimension-averaged mean across members of per-member latent variances.
    pub aleatoric: f64,
    /// Dimension-averaged total variance; equals `epistemic + aleatoric`.
    pub total_variance: f64,
}

impl UncertaintyReport {
    pub fn from_predictions(preds: &PredictionSet) -> Self {
        let c = variance_components(preds);
        let d = preds.dim as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / d;
        Self {
            sigma: c.total.iter().map(|v| v.sqrt()).sum::<f64>() / d,
            epistemic: mean(&c.epistemic),
            aleatoric: mean(&c.aleatoric),
            total_variance: mean(&c.total),
        }
    }
}

/// `σ(s,a)`: per-dimension population standard deviation across all `K·m`
/// predictions, averaged over output dimensions.
pub fn predictive_sigma(preds: &PredictionSet) -> f64 {
    let d = preds.dim as f64;
    variance_components(preds)
        .total
        .iter()
        .map(|v| v.sqrt())
        .sum::<f64>()
        / d
}

/// Law-of-total-variance split into `(epistemic, aleatoric)`, each averaged
/// over output dimensions. Needs at least two members and two latents.
pub fn decompose_uncertainty(preds: &PredictionSet) -> Result<(f64, f64), WorldModelError> {
    if preds.members < 2 || preds.latents < 2 {
        return Err(WorldModelError::UndefinedComponent {
            members: preds.members,
            latents: preds.latents,
        });
    }
    let r = UncertaintyReport::from_predictions(preds);
    Ok((r.epistemic, r.aleatoric))
}

/// Bounded inverse-uncertainty weight `1 / (σ + 1)`.
pub fn confidence_weight(sigma: f64) -> f64 {
    1.0 / (sigma + 1.0)
}
