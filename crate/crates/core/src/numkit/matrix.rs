use std::fmt;

use super::NumError;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix({}x{})", self.rows, self.cols)
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::Dimension {
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(NumError::Dimension {
                    expected: format!("row of width {cols}"),
                    got: format!("row of width {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> DenseMatrix {
        let width = end - start;
        let mut out = DenseMatrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..end]);
        }
        out
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&DenseMatrix]) -> Result<DenseMatrix, NumError> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(NumError::Dimension {
                expected: format!("{rows} rows in every block"),
                got: "mismatched row counts".into(),
            });
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            let dst = out.row_mut(r);
            for p in parts {
                dst[offset..offset + p.cols].copy_from_slice(p.row(r));
                offset += p.cols;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        if self.cols != other.rows {
            return Err(NumError::Dimension {
                expected: format!("inner dimension {}", self.cols),
                got: format!("{}", other.rows),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        gemm(
            1.0,
            Operand::plain(self),
            Operand::plain(other),
            0.0,
            &mut out,
        );
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        if self.rows != other.rows {
            return Err(NumError::Dimension {
                expected: format!("shared row count {}", self.rows),
                got: format!("{}", other.rows),
            });
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        gemm(
            1.0,
            Operand::transposed(self),
            Operand::plain(other),
            0.0,
            &mut out,
        );
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix, NumError> {
        if self.cols != other.cols {
            return Err(NumError::Dimension {
                expected: format!("shared column count {}", self.cols),
                got: format!("{}", other.cols),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        gemm(
            1.0,
            Operand::plain(self),
            Operand::transposed(other),
            0.0,
            &mut out,
        );
        Ok(out)
    }

    /// Column sums as a `1 × cols` matrix.
    pub fn column_sums(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

struct Operand<'a> {
    m: &'a DenseMatrix,
    transposed: bool,
}

impl<'a> Operand<'a> {
    fn plain(m: &'a DenseMatrix) -> Self {
        Self {
            m,
            transposed: false,
        }
    }

    fn transposed(m: &'a DenseMatrix) -> Self {
        Self {
            m,
            transposed: true,
        }
    }

    // (rows, cols, row stride, col stride) of the logical operand
    fn layout(&self) -> (usize, usize, isize, isize) {
        let (r, c) = self.m.shape();
        if self.transposed {
            (c, r, 1, c as isize)
        } else {
            (r, c, c as isize, 1)
        }
    }
}

// out = alpha · a · b + beta · out
fn gemm(alpha: f64, a: Operand<'_>, b: Operand<'_>, beta: f64, out: &mut DenseMatrix) {
    let (m, k, rsa, csa) = a.layout();
    let (kb, n, rsb, csb) = b.layout();
    assert_eq!(k, kb);
    assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.scale(beta);
        return;
    }
    // SAFETY: pointers and strides describe the live buffers of `a`, `b` and
    // `out`, whose shapes were checked above; `out` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.m.data.as_ptr(),
            rsa,
            csa,
            b.m.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
