//! Fixed-architecture networks with cached forward passes and analytic backward passes.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::ops::{
    dense_backward, dense_forward, l2_normalize_backward, l2_normalize_rows, relu, relu_backward,
};
use super::{DenseMatrix, Gradients, NumError, ParameterSet};

/// Trunk layout shared by every network in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetLayout {
    /// Dense input → width, then `blocks` residual blocks
    /// (Dense width → 2·width, ReLU, Dense 2·width → width, skip-add, L2 norm).
    Residual { blocks: usize },
    /// `hidden` repetitions of Dense → ReLU.
    Mlp { hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub width: usize,
    pub layout: NetLayout,
    /// Output width of each dense head; outputs are concatenated in order.
    pub heads: Vec<usize>,
}

impl NetSpec {
    pub fn output_dim(&self) -> usize {
        self.heads.iter().sum()
    }
}

#[derive(Clone, Copy, Debug)]
enum Layer {
    Dense { w: usize, b: usize },
    Relu,
    Residual { w1: usize, b1: usize, w2: usize, b2: usize },
    L2Norm,
}

#[derive(Clone, Debug)]
enum LayerCache {
    Dense { input: DenseMatrix },
    Relu { pre: DenseMatrix },
    Residual { input: DenseMatrix, hidden_pre: DenseMatrix, hidden: DenseMatrix },
    L2Norm { output: DenseMatrix, norms: Vec<f64> },
}

#[derive(Clone, Debug)]
struct ForwardCache {
    layers: Vec<LayerCache>,
    trunk: DenseMatrix,
}

/// Snapshot of how many rows went through forward and backward passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub forward_rows: u64,
    pub backward_rows: u64,
}

#[derive(Debug, Default)]
struct PassCounter {
    forward_rows: AtomicU64,
    backward_rows: AtomicU64,
}

impl Clone for PassCounter {
    fn clone(&self) -> Self {
        Self {
            forward_rows: AtomicU64::new(self.forward_rows.load(Ordering::Relaxed)),
            backward_rows: AtomicU64::new(self.backward_rows.load(Ordering::Relaxed)),
        }
    }
}

/// A trunk plus dense heads, parameters held in one [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetSpec,
    params: ParameterSet,
    layers: Vec<Layer>,
    heads: Vec<(usize, usize)>,
    cache: Option<ForwardCache>,
    passes: PassCounter,
}

impl Network {
    /// Fan-in scaled uniform initialization: every weight and bias of a
    /// layer with fan-in `n` is drawn from `U(-1/√n, 1/√n)`.
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let mut net = Self::zeros(spec);
        for layer in net.dense_pairs() {
            let (w, b) = layer;
            let fan_in = net.params.get(w).rows() as f64;
            let bound = 1.0 / fan_in.sqrt();
            for idx in [w, b] {
                for v in net.params.get_mut(idx).data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        net
    }

    /// Every parameter set to zero.
    pub fn zeros(spec: NetSpec) -> Self {
        let mut params = ParameterSet::new();
        let mut layers = Vec::new();
        let dense = |params: &mut ParameterSet, name: &str, fan_in: usize, fan_out: usize| {
            let w = params
                .push(format!("{name}.w"), DenseMatrix::zeros(fan_in, fan_out))
                .expect("generated names are unique");
            let b = params
                .push(format!("{name}.b"), DenseMatrix::zeros(1, fan_out))
                .expect("generated names are unique");
            (w, b)
        };
        match spec.layout {
            NetLayout::Residual { blocks } => {
                let (w, b) = dense(&mut params, "input", spec.input_dim, spec.width);
                layers.push(Layer::Dense { w, b });
                for i in 0..blocks {
                    let (w1, b1) =
                        dense(&mut params, &format!("block{i}.expand"), spec.width, 2 * spec.width);
                    let (w2, b2) = dense(
                        &mut params,
                        &format!("block{i}.contract"),
                        2 * spec.width,
                        spec.width,
                    );
                    layers.push(Layer::Residual { w1, b1, w2, b2 });
                    layers.push(Layer::L2Norm);
                }
            }
            NetLayout::Mlp { hidden } => {
                let mut fan_in = spec.input_dim;
                for i in 0..hidden {
                    let (w, b) = dense(&mut params, &format!("hidden{i}"), fan_in, spec.width);
                    layers.push(Layer::Dense { w, b });
                    layers.push(Layer::Relu);
                    fan_in = spec.width;
                }
            }
        }
        let trunk_width = trunk_width(&spec);
        let heads = spec
            .heads
            .iter()
            .enumerate()
            .map(|(i, &out)| dense(&mut params, &format!("head{i}"), trunk_width, out))
            .collect();
        Self {
            spec,
            params,
            layers,
            heads,
            cache: None,
            passes: PassCounter::default(),
        }
    }

    fn dense_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match *layer {
                Layer::Dense { w, b } => out.push((w, b)),
                Layer::Residual { w1, b1, w2, b2 } => {
                    out.push((w1, b1));
                    out.push((w2, b2));
                }
                Layer::Relu | Layer::L2Norm => {}
            }
        }
        out.extend(self.heads.iter().copied());
        out
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Zeroes all head weights and biases.
    pub fn zero_heads(&mut self) {
        for &(w, b) in &self.heads {
            self.params.get_mut(w).fill(0.0);
            self.params.get_mut(b).fill(0.0);
        }
    }

    pub fn passes(&self) -> PassCounts {
        PassCounts {
            forward_rows: self.passes.forward_rows.load(Ordering::Relaxed),
            backward_rows: self.passes.backward_rows.load(Ordering::Relaxed),
        }
    }

    pub fn reset_passes(&self) {
        self.passes.forward_rows.store(0, Ordering::Relaxed);
        self.passes.backward_rows.store(0, Ordering::Relaxed);
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<(), NumError> {
        if x.cols() != self.spec.input_dim {
            return Err(NumError::Dimension {
                expected: format!("input width {}", self.spec.input_dim),
                got: format!("{}", x.cols()),
            });
        }
        Ok(())
    }

    /// Inference-only forward pass; nothing is cached.
    pub fn predict(&self, x: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        self.check_input(x)?;
        self.passes
            .forward_rows
            .fetch_add(x.rows() as u64, Ordering::Relaxed);
        let mut h = x.clone();
        for layer in &self.layers {
            h = match *layer {
                Layer::Dense { w, b } => dense_forward(&h, self.params.get(w), self.params.get(b))?,
                Layer::Relu => relu(&h),
                Layer::Residual { w1, b1, w2, b2 } => {
                    let hidden = relu(&dense_forward(&h, self.params.get(w1), self.params.get(b1))?);
                    let mut out = dense_forward(&hidden, self.params.get(w2), self.params.get(b2))?;
                    out.add_assign(&h);
                    out
                }
                Layer::L2Norm => l2_normalize_rows(&h).0,
            };
        }
        self.apply_heads(&h)
    }

    fn apply_heads(&self, trunk: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        let outs = self
            .heads
            .iter()
            .map(|&(w, b)| dense_forward(trunk, self.params.get(w), self.params.get(b)))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&DenseMatrix> = outs.iter().collect();
        DenseMatrix::hcat(&refs)
    }

    /// Forward pass that caches activations for a following [`Network::backward`].
    pub fn forward(&mut self, x: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        self.check_input(x)?;
        self.passes
            .forward_rows
            .fetch_add(x.rows() as u64, Ordering::Relaxed);
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            h = match *layer {
                Layer::Dense { w, b } => {
                    let out = dense_forward(&h, self.params.get(w), self.params.get(b))?;
                    caches.push(LayerCache::Dense { input: h });
                    out
                }
                Layer::Relu => {
                    let out = relu(&h);
                    caches.push(LayerCache::Relu { pre: h });
                    out
                }
                Layer::Residual { w1, b1, w2, b2 } => {
                    let hidden_pre = dense_forward(&h, self.params.get(w1), self.params.get(b1))?;
                    let hidden = relu(&hidden_pre);
                    let mut out = dense_forward(&hidden, self.params.get(w2), self.params.get(b2))?;
                    out.add_assign(&h);
                    caches.push(LayerCache::Residual {
                        input: h,
                        hidden_pre,
                        hidden,
                    });
                    out
                }
                Layer::L2Norm => {
                    let (out, norms) = l2_normalize_rows(&h);
                    caches.push(LayerCache::L2Norm {
                        output: out.clone(),
                        norms,
                    });
                    out
                }
            };
        }
        let out = self.apply_heads(&h)?;
        self.cache = Some(ForwardCache {
            layers: caches,
            trunk: h,
        });
        Ok(out)
    }

    /// Consumes the cached forward pass and returns parameter gradients and
    /// the gradient with respect to the input.
    pub fn backward(&mut self, grad_out: &DenseMatrix) -> Result<(Gradients, DenseMatrix), NumError> {
        let cache = self.cache.take().ok_or(NumError::NoForwardCache)?;
        let batch = cache.trunk.rows();
        if grad_out.shape() != (batch, self.output_dim()) {
            return Err(NumError::Dimension {
                expected: format!("upstream gradient {}x{}", batch, self.output_dim()),
                got: format!("{}x{}", grad_out.rows(), grad_out.cols()),
            });
        }
        self.passes
            .backward_rows
            .fetch_add(batch as u64, Ordering::Relaxed);
        let mut grads = self.params.zeros_like();

        let mut grad_trunk = DenseMatrix::zeros(batch, cache.trunk.cols());
        let mut offset = 0;
        for &(w, b) in &self.heads {
            let width = self.params.get(w).cols();
            let g_head = grad_out.columns(offset, offset + width);
            offset += width;
            let (gw, gb, gin) = dense_backward(&cache.trunk, self.params.get(w), &g_head)?;
            *grads.get_mut(w) = gw;
            *grads.get_mut(b) = gb;
            grad_trunk.add_assign(&gin);
        }

        let mut g = grad_trunk;
        for (layer, lc) in self.layers.iter().zip(cache.layers.iter()).rev() {
            g = match (*layer, lc) {
                (Layer::Dense { w, b }, LayerCache::Dense { input }) => {
                    let (gw, gb, gin) = dense_backward(input, self.params.get(w), &g)?;
                    *grads.get_mut(w) = gw;
                    *grads.get_mut(b) = gb;
                    gin
                }
                (Layer::Relu, LayerCache::Relu { pre }) => relu_backward(pre, &g),
                (
                    Layer::Residual { w1, b1, w2, b2 },
                    LayerCache::Residual {
                        input,
                        hidden_pre,
                        hidden,
                    },
                ) => {
                    let (gw2, gb2, g_hidden) = dense_backward(hidden, self.params.get(w2), &g)?;
                    let g_pre = relu_backward(hidden_pre, &g_hidden);
                    let (gw1, gb1, g_in) = dense_backward(input, self.params.get(w1), &g_pre)?;
                    *grads.get_mut(w1) = gw1;
                    *grads.get_mut(b1) = gb1;
                    *grads.get_mut(w2) = gw2;
                    *grads.get_mut(b2) = gb2;
                    let mut total = g;
                    total.add_assign(&g_in);
                    total
                }
                (Layer::L2Norm, LayerCache::L2Norm { output, norms }) => {
                    l2_normalize_backward(output, norms, &g)
                }
                _ => unreachable!("cache entries follow the layer list"),
            };
        }
        Ok((grads, g))
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

fn trunk_width(spec: &NetSpec) -> usize {
    match spec.layout {
        NetLayout::Residual { .. } => spec.width,
        NetLayout::Mlp { hidden: 0 } => spec.input_dim,
        NetLayout::Mlp { .. } => spec.width,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> NetSpec {
        NetSpec {
            input_dim: 3,
            width: 4,
            layout: NetLayout::Residual { blocks: 2 },
            heads: vec![1, 2],
        }
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let mut net = Network::zeros(spec());
        let g = DenseMatrix::zeros(1, 3);
        assert_eq!(net.backward(&g).unwrap_err(), NumError::NoForwardCache);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::new(spec(), &mut rng);
        let x = DenseMatrix::from_fn(5, 3, |r, c| (r as f64 - c as f64) * 0.3 + 0.1);
        net.forward(&x).unwrap();
        let (grads, gin) = net.backward(&DenseMatrix::zeros(5, 3)).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert_eq!(gin.max_abs(), 0.0);
    }

    #[test]
    fn single_dense_layer_least_squares_gradient() {
        // Mlp with no hidden layers is a single affine head.
        let spec = NetSpec {
            input_dim: 3,
            width: 1,
            layout: NetLayout::Mlp { hidden: 0 },
            heads: vec![2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Network::new(spec, &mut rng);
        let x = DenseMatrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64).sin());
        let target = DenseMatrix::from_fn(4, 2, |r, c| ((r + c) as f64).cos());
        let pred = net.forward(&x).unwrap();
        let batch = 4.0;
        let mut resid = pred.clone();
        resid.add_assign(&{
            let mut t = target.clone();
            t.scale(-1.0);
            t
        });
        // d/dW of (1/batch) Σ ‖pred − target‖² = 2 xᵀ(pred − target)/batch
        let mut upstream = resid.clone();
        upstream.scale(2.0 / batch);
        let (grads, _) = net.backward(&upstream).unwrap();
        let gw = grads.by_name("head0.w").unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut closed = 0.0;
                for r in 0..4 {
                    closed += x.get(r, i) * resid.get(r, j);
                }
                closed *= 2.0 / batch;
                assert!((gw.get(i, j) - closed).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_trunk_rows_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = NetSpec {
            input_dim: 3,
            width: 6,
            layout: NetLayout::Residual { blocks: 1 },
            heads: vec![6],
        };
        let mut net = Network::new(s, &mut rng);
        // identity head exposes the trunk
        let head = net.params().index_of("head0.w").unwrap();
        *net.params_mut().get_mut(head) = DenseMatrix::identity(6);
        let hb = net.params().index_of("head0.b").unwrap();
        net.params_mut().get_mut(hb).fill(0.0);
        let x = DenseMatrix::from_fn(8, 3, |r, c| (r as f64 * 0.7 + c as f64).sin() * 3.0);
        let out = net.predict(&x).unwrap();
        for r in 0..8 {
            let n: f64 = out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_and_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::new(spec(), &mut rng);
        let x = DenseMatrix::from_fn(3, 3, |r, c| (r + 2 * c) as f64 * 0.1);
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            net.passes(),
            PassCounts {
                forward_rows: 6,
                backward_rows: 0
            }
        );
    }
}
