use super::{DenseMatrix, Gradients, NumError, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let zeros: Vec<DenseMatrix> = params
            .tensors()
            .iter()
            .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, idx: usize) -> &DenseMatrix {
        &self.first[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &DenseMatrix {
        &self.second[idx]
    }
}

/// One bias-corrected Adam update. A non-finite gradient rejects the whole
/// step and leaves both parameters and state untouched.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NumError> {
    if !params.same_layout(grads) || state.first.len() != params.len() {
        return Err(NumError::Dimension {
            expected: "gradients and optimizer state matching the parameter layout".into(),
            got: "mismatched layout".into(),
        });
    }
    for (i, (name, g)) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(NumError::NonFiniteGradient(name.to_string()));
        }
        debug_assert_eq!(state.first[i].shape(), g.shape());
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, g) in grads.tensors().iter().enumerate() {
        let p = params.get_mut(i).data_mut();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((pv, mv), vv), gv) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
