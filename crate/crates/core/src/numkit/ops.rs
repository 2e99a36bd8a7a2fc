use super::{DenseMatrix, NumError};

/// Floor on the norm used by [`l2_normalize`].
pub const L2_EPS: f64 = 1e-8;

/// `input · weight + bias`, with `bias` a `1 × out` row broadcast over the batch.
pub fn dense_forward(
    input: &DenseMatrix,
    weight: &DenseMatrix,
    bias: &DenseMatrix,
) -> Result<DenseMatrix, NumError> {
    if bias.rows() != 1 || bias.cols() != weight.cols() {
        return Err(NumError::Dimension {
            expected: format!("bias 1x{}", weight.cols()),
            got: format!("{}x{}", bias.rows(), bias.cols()),
        });
    }
    let mut out = input.matmul(weight)?;
    let b = bias.data();
    for r in 0..out.rows() {
        for (o, bv) in out.row_mut(r).iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Returns `(grad_weight, grad_bias, grad_input)`.
pub fn dense_backward(
    input: &DenseMatrix,
    weight: &DenseMatrix,
    grad_out: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix), NumError> {
    let grad_w = input.t_matmul(grad_out)?;
    let grad_b = grad_out.column_sums();
    let grad_in = grad_out.matmul_t(weight)?;
    Ok((grad_w, grad_b, grad_in))
}

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU; the subgradient at exactly zero is zero.
pub fn relu_backward(pre_activation: &DenseMatrix, grad_out: &DenseMatrix) -> DenseMatrix {
    let mut g = grad_out.clone();
    for (gv, x) in g.data_mut().iter_mut().zip(pre_activation.data()) {
        if *x <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// `x / max(‖x‖₂, L2_EPS)`.
pub fn l2_normalize(x: &[f64]) -> Vec<f64> {
    let n = norm(x).max(L2_EPS);
    x.iter().map(|v| v / n).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Row-wise [`l2_normalize`]; also returns the clamped norms for the backward pass.
pub fn l2_normalize_rows(x: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = norm(x.row(r)).max(L2_EPS);
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    (out, norms)
}

/// Backward of row-wise normalization given its output and clamped norms.
pub fn l2_normalize_backward(
    output: &DenseMatrix,
    norms: &[f64],
    grad_out: &DenseMatrix,
) -> DenseMatrix {
    let mut g = grad_out.clone();
    for r in 0..output.rows() {
        let y = output.row(r);
        let n = norms[r];
        let row = g.row_mut(r);
        if n > L2_EPS {
            let dot: f64 = y.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            for (gv, yv) in row.iter_mut().zip(y) {
                *gv = (*gv - yv * dot) / n;
            }
        } else {
            row.iter_mut().for_each(|gv| *gv /= n);
        }
    }
    g
}

/// Borrowed parameters of one residual block:
/// `x ↦ l2_normalize(x + contract(relu(expand(x))))`.
#[derive(Clone, Copy, Debug)]
pub struct ResidualBlockRef<'a> {
    pub expand_weight: &'a DenseMatrix,
    pub expand_bias: &'a DenseMatrix,
    pub contract_weight: &'a DenseMatrix,
    pub contract_bias: &'a DenseMatrix,
}

pub fn residual_block_forward(
    x: &DenseMatrix,
    block: ResidualBlockRef<'_>,
) -> Result<DenseMatrix, NumError> {
    if block.contract_weight.cols() != x.cols() {
        return Err(NumError::Dimension {
            expected: format!("block width {}", block.contract_weight.cols()),
            got: format!("{}", x.cols()),
        });
    }
    let hidden = relu(&dense_forward(x, block.expand_weight, block.expand_bias)?);
    let mut sum = dense_forward(&hidden, block.contract_weight, block.contract_bias)?;
    sum.add_assign(x);
    Ok(l2_normalize_rows(&sum).0)
}
