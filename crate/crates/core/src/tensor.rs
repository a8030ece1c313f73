//! Dense row-major matrices and the batch-level primitives used by the
//! losses: column standardization, cross-correlation, embedding gather and
//! scatter.

use std::fmt;

use crate::error::{Error, Result};

/// Columns whose centered L2 norm is below this are treated as degenerate
/// and standardize to all zeros.
pub const STANDARDIZE_EPS: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Sum of squares of all entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Sum of the elementwise product, i.e. `tr(selfᵀ other)`.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same("dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same(op, other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        self.check_same("add_scaled", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Returns a copy with each column's mean subtracted.
    pub fn center_columns(&self) -> Matrix {
        let means = self.column_means();
        let mut out = self.clone();
        for i in 0..out.rows {
            for (v, m) in out.row_mut(i).iter_mut().zip(&means) {
                *v -= m;
            }
        }
        out
    }

    /// Selects the given columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        gemm(self, false, other, false)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        gemm(self, true, other, false)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        gemm(self, false, other, true)
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape {
                op: "matvec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn check_same(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn gemm(a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool) -> Result<Matrix> {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != kb {
        return Err(Error::Shape {
            op: "matmul",
            left: (m, k),
            right: (kb, n),
        });
    }
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(c);
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe the logical (possibly transposed) views of
    // buffers whose lengths were checked against their shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(c)
}

/// `Σ_b a_bj · b_bj` for every column `j`, accumulated row by row.
fn column_dots(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut dots = vec![0.0; a.cols()];
    for i in 0..a.rows() {
        for ((d, x), y) in dots.iter_mut().zip(a.row(i)).zip(b.row(i)) {
            *d += x * y;
        }
    }
    dots
}

/// Column-standardized matrix together with what its backward pass needs.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub output: Matrix,
    /// Centered column norms; zero marks a degenerate column.
    norms: Vec<f64>,
    centered: Matrix,
    /// Squared centered norms, accumulated row by row.
    sq_norms: Vec<f64>,
}

/// Mean-centers every column and scales it to unit L2 norm. Columns whose
/// centered norm is below `eps` become all zeros.
pub fn standardize_columns(x: &Matrix, eps: f64) -> Result<Matrix> {
    Ok(standardize_with_cache(x, eps)?.output)
}

pub fn standardize_with_cache(x: &Matrix, eps: f64) -> Result<Standardized> {
    if x.rows() < 2 {
        return Err(Error::invalid(format!(
            "standardization needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    let centered = x.center_columns();
    let sq_norms = column_dots(&centered, &centered);
    let norms: Vec<f64> = sq_norms
        .iter()
        .map(|s| s.sqrt())
        .map(|n| if n < eps { 0.0 } else { n })
        .collect();
    let mut out = centered.clone();
    for i in 0..out.rows() {
        for (v, &n) in out.row_mut(i).iter_mut().zip(&norms) {
            *v = if n == 0.0 { 0.0 } else { *v / n };
        }
    }
    Ok(Standardized {
        output: out,
        norms,
        centered,
        sq_norms,
    })
}

impl Standardized {
    /// Maps `dL/d(output)` to `dL/d(input)`.
    ///
    /// For a column `z = c/‖c‖` with `c = x − mean(x)`:
    /// `dc = (g − z·(zᵀg)) / ‖c‖`, then `dx = dc − mean(dc)`.
    pub fn backward(&self, grad: &Matrix) -> Matrix {
        let z = &self.output;
        let (b, d) = z.shape();
        let mut proj = vec![0.0; d];
        for i in 0..b {
            for ((p, zv), gv) in proj.iter_mut().zip(z.row(i)).zip(grad.row(i)) {
                *p += zv * gv;
            }
        }
        let mut dx = Matrix::zeros(b, d);
        for i in 0..b {
            let (zr, gr) = (z.row(i), grad.row(i));
            for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
                let n = self.norms[j];
                *out = if n == 0.0 { 0.0 } else { (gr[j] - zr[j] * proj[j]) / n };
            }
        }
        let means = dx.column_means();
        for i in 0..b {
            for (v, m) in dx.row_mut(i).iter_mut().zip(&means) {
                *v -= m;
            }
        }
        dx
    }
}

/// d×d cross-correlation between the columns of two b×d batches.
#[derive(Debug, Clone)]
pub struct CrossCorrelation {
    pub c: Matrix,
    pub from_dims: (usize, usize),
}

/// Cross-correlation with the standardized inputs retained for backward.
#[derive(Debug, Clone)]
pub struct CrossCorrelationCache {
    pub corr: CrossCorrelation,
    zx: Standardized,
    zy: Standardized,
}

pub fn cross_correlation(x: &Matrix, y: &Matrix) -> Result<CrossCorrelation> {
    Ok(cross_correlation_with_cache(x, y)?.corr)
}

pub fn cross_correlation_with_cache(x: &Matrix, y: &Matrix) -> Result<CrossCorrelationCache> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            op: "cross_correlation",
            left: x.shape(),
            right: y.shape(),
        });
    }
    let zx = standardize_with_cache(x, STANDARDIZE_EPS)?;
    let zy = standardize_with_cache(y, STANDARDIZE_EPS)?;
    let mut c = zx.output.t_matmul(&zy.output)?;
    // Diagonal entries use `⟨cx, cy⟩ / sqrt(‖cx‖²‖cy‖²)` accumulated in the
    // norms' order; `C(X, X)` has an exactly unit diagonal.
    let dots = column_dots(&zx.centered, &zy.centered);
    for (j, dot) in dots.into_iter().enumerate() {
        if zx.norms[j] != 0.0 && zy.norms[j] != 0.0 {
            c[(j, j)] = dot / (zx.sq_norms[j] * zy.sq_norms[j]).sqrt();
        }
    }
    Ok(CrossCorrelationCache {
        corr: CrossCorrelation {
            c,
            from_dims: x.shape(),
        },
        zx,
        zy,
    })
}

impl CrossCorrelationCache {
    /// Maps `dL/dC` to `(dL/dX, dL/dY)`.
    pub fn backward(&self, grad_c: &Matrix) -> Result<(Matrix, Matrix)> {
        // C = Zxᵀ Zy  =>  dZx = Zy dCᵀ, dZy = Zx dC
        let dzx = self.zy.output.matmul_t(grad_c)?;
        let dzy = self.zx.output.matmul(grad_c)?;
        Ok((self.zx.backward(&dzx), self.zy.backward(&dzy)))
    }
}

/// Stacks `table[ids[k]]` into a `ids.len() × cols` matrix.
pub fn gather_rows(table: &Matrix, ids: &[usize]) -> Result<Matrix> {
    let mut out = Matrix::zeros(ids.len(), table.cols());
    for (k, &id) in ids.iter().enumerate() {
        if id >= table.rows() {
            return Err(Error::OutOfRange {
                what: "row",
                id,
                size: table.rows(),
            });
        }
        out.row_mut(k).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Adds `grads[k]` into `table_grad[ids[k]]`; repeated ids accumulate.
pub fn scatter_add_rows(table_grad: &mut Matrix, ids: &[usize], grads: &Matrix) -> Result<()> {
    if grads.rows() != ids.len() || grads.cols() != table_grad.cols() {
        return Err(Error::Shape {
            op: "scatter_add_rows",
            left: (ids.len(), table_grad.cols()),
            right: grads.shape(),
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= table_grad.rows()) {
        return Err(Error::OutOfRange {
            what: "row",
            id,
            size: table_grad.rows(),
        });
    }
    for (k, &id) in ids.iter().enumerate() {
        for (t, g) in table_grad.row_mut(id).iter_mut().zip(grads.row(k)) {
            *t += g;
        }
    }
    Ok(())
}
