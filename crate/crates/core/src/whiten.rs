//! Shuffled decorrelated batch normalization.
//!
//! Channels are randomly permuted, split into consecutive groups, and each
//! group is ZCA-whitened over the batch dimension. Writing each whitened
//! group back to its original column positions undoes the permutation.
//!
//! Covariance uses the biased `1/b` convention, so for a group of size one
//! the output is `(x − mean) / std` with `std = ‖x − mean‖ / √b`, i.e. the
//! column standardization scaled by `√b`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Eigenvalues of a group covariance are clamped from below to this value.
pub const EIGENVALUE_FLOOR: f64 = 1e-5;

/// Default group size.
pub const DEFAULT_GROUP_SIZE: usize = 5;

/// The channel permutation drawn for one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleState {
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone)]
struct GroupCache {
    cols: Vec<usize>,
    centered: Matrix,
    eigvecs: Matrix,
    eigvals: Vec<f64>,
    whitening: Matrix,
}

/// Forward result of [`shuffled_dbn_with_cache`], reusable for backward.
#[derive(Debug, Clone)]
pub struct ShuffledDbn {
    pub output: Matrix,
    pub state: ShuffleState,
    groups: Vec<GroupCache>,
}

pub fn shuffled_dbn<R: Rng + ?Sized>(
    x: &Matrix,
    group_size: usize,
    rng: &mut R,
) -> Result<(Matrix, ShuffleState)> {
    let out = shuffled_dbn_with_cache(x, group_size, rng)?;
    Ok((out.output, out.state))
}

pub fn shuffled_dbn_with_cache<R: Rng + ?Sized>(
    x: &Matrix,
    group_size: usize,
    rng: &mut R,
) -> Result<ShuffledDbn> {
    let mut permutation: Vec<usize> = (0..x.cols()).collect();
    permutation.shuffle(rng);
    shuffled_dbn_with_permutation(x, group_size, ShuffleState { permutation })
}

/// Whitens with a fixed permutation instead of drawing one.
pub fn shuffled_dbn_with_permutation(
    x: &Matrix,
    group_size: usize,
    state: ShuffleState,
) -> Result<ShuffledDbn> {
    if x.rows() < 2 {
        return Err(Error::invalid(format!(
            "shuffled DBN needs a batch of at least 2 rows, got {}",
            x.rows()
        )));
    }
    if group_size == 0 {
        return Err(Error::invalid("group size must be at least 1"));
    }
    let mut check = state.permutation.clone();
    check.sort_unstable();
    if check.len() != x.cols() || check.iter().enumerate().any(|(i, &c)| i != c) {
        return Err(Error::invalid("permutation does not match matrix columns"));
    }

    let b = x.rows() as f64;
    let mut output = Matrix::zeros(x.rows(), x.cols());
    let mut groups = Vec::new();
    for cols in state.permutation.chunks(group_size) {
        let centered = x.select_columns(cols).center_columns();
        let cov = centered.t_matmul(&centered)?.scale(1.0 / b);
        let (eigvals, eigvecs) = symmetric_eigen(&cov);
        let scales: Vec<f64> = eigvals.iter().map(|&l| inv_sqrt(l)).collect();
        let whitening = reconstruct(&eigvecs, &scales);
        let y = centered.matmul(&whitening)?;
        for i in 0..y.rows() {
            for (k, &c) in cols.iter().enumerate() {
                output[(i, c)] = y[(i, k)];
            }
        }
        groups.push(GroupCache {
            cols: cols.to_vec(),
            centered,
            eigvecs,
            eigvals,
            whitening,
        });
    }
    Ok(ShuffledDbn {
        output,
        state,
        groups,
    })
}

impl ShuffledDbn {
    /// Maps `dL/d(output)` to `dL/d(input)`, differentiating through the
    /// batch mean and the whitening matrix.
    pub fn backward(&self, grad: &Matrix) -> Result<Matrix> {
        let (rows, cols) = self.output.shape();
        if grad.shape() != (rows, cols) {
            return Err(Error::Shape {
                op: "shuffled_dbn backward",
                left: (rows, cols),
                right: grad.shape(),
            });
        }
        let b = rows as f64;
        let mut dx = Matrix::zeros(rows, cols);
        for g in &self.groups {
            let gy = grad.select_columns(&g.cols);
            // Y = Xc W
            let mut dxc = gy.matmul(&g.whitening)?;
            let dw = g.centered.t_matmul(&gy)?;
            // W = f(Σ) with f(λ) = λ^{-1/2}; Daleckii-Krein adjoint.
            let inner = g.eigvecs.t_matmul(&dw)?.matmul(&g.eigvecs)?;
            let n = g.eigvals.len();
            let mut kd = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    kd[(i, j)] = divided_difference(g.eigvals[i], g.eigvals[j]) * inner[(i, j)];
                }
            }
            let dsigma = g.eigvecs.matmul(&kd)?.matmul_t(&g.eigvecs)?;
            let dsigma_sym = dsigma.add(&dsigma.transpose())?.scale(0.5);
            // Σ = Xcᵀ Xc / b
            dxc.add_scaled(&g.centered.matmul(&dsigma_sym)?, 2.0 / b)?;
            let means = dxc.column_means();
            for i in 0..rows {
                for (k, &c) in g.cols.iter().enumerate() {
                    dx[(i, c)] = dxc[(i, k)] - means[k];
                }
            }
        }
        Ok(dx)
    }
}

fn inv_sqrt(l: f64) -> f64 {
    l.max(EIGENVALUE_FLOOR).powf(-0.5)
}

fn inv_sqrt_deriv(l: f64) -> f64 {
    if l > EIGENVALUE_FLOOR {
        -0.5 * l.powf(-1.5)
    } else {
        0.0
    }
}

fn divided_difference(a: f64, b: f64) -> f64 {
    let diff = a - b;
    if diff.abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0) {
        0.5 * (inv_sqrt_deriv(a) + inv_sqrt_deriv(b))
    } else {
        (inv_sqrt(a) - inv_sqrt(b)) / diff
    }
}

/// `U diag(s) Uᵀ`
fn reconstruct(u: &Matrix, s: &[f64]) -> Matrix {
    let n = s.len();
    Matrix::from_fn(n, n, |i, j| (0..n).map(|k| u[(i, k)] * s[k] * u[(j, k)]).sum())
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix. Returns
/// eigenvalues and the matrix whose columns are the matching eigenvectors.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_sq().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[(i, i)]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn group_covariance(y: &Matrix, cols: &[usize]) -> Matrix {
        let g = y.select_columns(cols).center_columns();
        g.t_matmul(&g).unwrap().scale(1.0 / y.rows() as f64)
    }

    #[test]
    fn jacobi_reconstructs_input() {
        let x = random(10, 4, 1);
        let a = x.t_matmul(&x).unwrap();
        let (vals, vecs) = symmetric_eigen(&a);
        let back = reconstruct(&vecs, &vals);
        for (p, q) in a.as_slice().iter().zip(back.as_slice()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn group_of_one_is_scaled_standardization() {
        let x = random(7, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, _) = shuffled_dbn(&x, 1, &mut rng).unwrap();
        let z = crate::tensor::standardize_columns(&x, 1e-12).unwrap();
        let root_b = 7f64.sqrt();
        for (a, b) in y.as_slice().iter().zip(z.as_slice()) {
            assert!((a - b * root_b).abs() < 1e-10);
        }
    }

    #[test]
    fn already_white_input_is_fixed_point() {
        let x = random(40, 10, 3);
        let identity = ShuffleState {
            permutation: (0..10).collect(),
        };
        let once = shuffled_dbn_with_permutation(&x, 5, identity.clone()).unwrap().output;
        let twice = shuffled_dbn_with_permutation(&once, 5, identity).unwrap().output;
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn output_groups_are_white() {
        let x = random(64, 10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (y, state) = shuffled_dbn(&x, 5, &mut rng).unwrap();
        for cols in state.permutation.chunks(5) {
            let cov = group_covariance(&y, cols);
            let eye = Matrix::identity(cols.len());
            for (a, b) in cov.as_slice().iter().zip(eye.as_slice()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        for m in y.column_means() {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn ragged_last_group() {
        let x = random(30, 7, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = shuffled_dbn_with_cache(&x, 3, &mut rng).unwrap();
        assert_eq!(out.groups.len(), 3);
        assert_eq!(out.groups[2].cols.len(), 1);
    }

    #[test]
    fn rejects_single_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(shuffled_dbn(&Matrix::zeros(1, 4), 2, &mut rng).is_err());
        assert!(shuffled_dbn(&Matrix::zeros(3, 4), 0, &mut rng).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = random(12, 7, 6);
        let weights = random(12, 7, 7);
        let state = ShuffleState {
            permutation: vec![3, 0, 6, 1, 5, 2, 4],
        };
        let loss = |m: &Matrix| {
            let y = shuffled_dbn_with_permutation(m, 3, state.clone()).unwrap().output;
            // nonlinear in y so the test exercises every path
            y.hadamard(&weights).unwrap().as_slice().iter().map(|v| v + 0.3 * v * v).sum::<f64>()
        };
        let fwd = shuffled_dbn_with_permutation(&x, 3, state.clone()).unwrap();
        let gy = fwd.output.zip_with(&weights, "g", |y, w| w + 0.6 * y * w * w).unwrap();
        let gx = fwd.backward(&gy).unwrap();
        let h = 1e-5;
        for i in 0..12 {
            for j in 0..7 {
                let mut p = x.clone();
                p[(i, j)] += h;
                let mut m = x.clone();
                m[(i, j)] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let an = gx[(i, j)];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "({i},{j}) fd={fd} an={an}");
            }
        }
    }
}
