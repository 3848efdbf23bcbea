//! Weighted graph-Laplacian least squares.
//!
//! Every position-only subproblem here has the form
//! `min_p sum_e w_e || b_e - (p_j - p_i) ||^2`, which separates per
//! coordinate into `L p = B^T W b` with `L` the weighted Laplacian. The
//! translation gauge is removed by grounding vertex 0 and then shifting the
//! solution to zero centroid.

use std::ops::{AddAssign, SubAssign};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::graph;
use crate::types::{Mat3, Vec3};

/// Above this many vertices the reduced system is solved with
/// Jacobi-preconditioned conjugate gradients instead of a dense factor.
pub const DENSE_LIMIT: usize = 1500;

/// Relative normal-equation residual every solve must reach.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yr = acc;
        }
    }
}

#[derive(Clone, Debug)]
enum Backend {
    Dense(Cholesky<f64, Dyn>),
    Sparse { matrix: Csr, diag: Vec<f64> },
}

/// Factorized (or preconditioned) weighted Laplacian, reusable across
/// right-hand sides.
#[derive(Clone, Debug)]
pub struct LaplacianSolver {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    backend: Backend,
}

impl LaplacianSolver {
    /// `edges` holds `(i, j, weight)`; zero-weight edges do not count
    /// towards connectivity.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if let Some(&(i, j, w)) = edges.iter().find(|e| !(e.2.is_finite() && e.2 >= 0.0)) {
            return Err(Error::InvalidInput(format!("edge ({i}, {j}) has invalid weight {w}")));
        }
        graph::require_connected(n, edges.iter().filter(|e| e.2 > 0.0).map(|e| (e.0, e.1)))?;
        let dim = n - 1;
        let backend = if n <= DENSE_LIMIT {
            let mut m = DMatrix::<f64>::zeros(dim, dim);
            for &(i, j, w) in edges {
                if i > 0 {
                    m[(i - 1, i - 1)] += w;
                }
                if j > 0 {
                    m[(j - 1, j - 1)] += w;
                }
                if i > 0 && j > 0 {
                    m[(i - 1, j - 1)] -= w;
                    m[(j - 1, i - 1)] -= w;
                }
            }
            let chol = m.cholesky().ok_or(Error::SingularInput { ratio: 0.0 })?;
            Backend::Dense(chol)
        } else {
            let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
            let mut diag = vec![0.0; dim];
            for &(i, j, w) in edges {
                if i > 0 {
                    diag[i - 1] += w;
                }
                if j > 0 {
                    diag[j - 1] += w;
                }
                if i > 0 && j > 0 {
                    rows[i - 1].push((j - 1, -w));
                    rows[j - 1].push((i - 1, -w));
                }
            }
            let mut row_ptr = Vec::with_capacity(dim + 1);
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            row_ptr.push(0);
            for (r, mut row) in rows.into_iter().enumerate() {
                row.push((r, diag[r]));
                row.sort_unstable_by_key(|x| x.0);
                let start = cols.len();
                for (c, v) in row {
                    if cols.len() > start && cols[cols.len() - 1] == c {
                        *vals.last_mut().unwrap() += v;
                    } else {
                        cols.push(c);
                        vals.push(v);
                    }
                }
                row_ptr.push(cols.len());
            }
            Backend::Sparse { matrix: Csr { row_ptr, cols, vals }, diag }
        };
        Ok(LaplacianSolver { n, edges: edges.to_vec(), backend })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    /// Solves `L p = rhs` for a consistent right-hand side (components sum
    /// to zero) and returns the zero-centroid solution.
    pub fn solve(&self, rhs: &[Vec3]) -> Result<Vec<Vec3>> {
        let dim = self.n - 1;
        let mut p = vec![Vec3::zeros(); self.n];
        for k in 0..3 {
            let b: Vec<f64> = rhs[1..].iter().map(|v| v[k]).collect();
            let x = match &self.backend {
                Backend::Dense(chol) => {
                    let x = chol.solve(&DMatrix::from_column_slice(dim, 1, &b));
                    x.column(0).iter().copied().collect::<Vec<_>>()
                }
                Backend::Sparse { matrix, diag } => pcg(matrix, diag, &b),
            };
            for (v, xv) in p[1..].iter_mut().zip(x) {
                v[k] = xv;
            }
        }
        let centroid = p.iter().sum::<Vec3>() / self.n as f64;
        for v in &mut p {
            *v -= centroid;
        }
        let rel = self.relative_residual(&p, rhs);
        if !(rel <= RESIDUAL_TOL) {
            return Err(Error::SingularInput { ratio: rel });
        }
        Ok(p)
    }

    /// `||L p - rhs|| / max(||rhs||, tiny)` over all coordinates.
    pub fn relative_residual(&self, p: &[Vec3], rhs: &[Vec3]) -> f64 {
        let mut lp = vec![Vec3::zeros(); self.n];
        for &(i, j, w) in &self.edges {
            let d = (p[j] - p[i]) * w;
            lp[j] += d;
            lp[i] -= d;
        }
        let num: f64 = lp.iter().zip(rhs).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let den: f64 = rhs.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
        let scale: f64 = self.edges.iter().map(|e| e.2).fold(0.0, f64::max)
            * p.iter().map(|v| v.norm()).fold(0.0, f64::max);
        num / den.max(scale).max(f64::MIN_POSITIVE)
    }
}

fn pcg(a: &Csr, diag: &[f64], b: &[f64]) -> Vec<f64> {
    let dim = b.len();
    let mut x = vec![0.0; dim];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; dim];
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return x;
    }
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..(10 * dim).max(100) {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for k in 0..dim {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= 1e-13 * bnorm {
            break;
        }
        for k in 0..dim {
            z[k] = r[k] / diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..dim {
            p[k] = z[k] + beta * p[k];
        }
    }
    x
}

/// Assembles `B^T W b` for targets `b_e` on edges `(i, j, w)`.
pub fn displacement_rhs(n: usize, edges: &[(usize, usize, f64)], targets: &[Vec3]) -> Vec<Vec3> {
    let mut rhs = vec![Vec3::zeros(); n];
    for (&(i, j, w), b) in edges.iter().zip(targets) {
        rhs[j] += b * w;
        rhs[i] -= b * w;
    }
    rhs
}

/// Minimizer of `sum_e w_e || b_e - (p_j - p_i) ||^2` with zero centroid.
pub fn weighted_displacement_lsq(
    n: usize,
    edges: &[(usize, usize, f64)],
    targets: &[Vec3],
) -> Result<Vec<Vec3>> {
    let solver = LaplacianSolver::new(n, edges)?;
    solver.solve(&displacement_rhs(n, edges, targets))
}

/// Largest vertex count solved densely by [`matrix_weighted_lsq`].
pub const DENSE_BLOCK_LIMIT: usize = 400;

/// Minimizer of `sum_e (b_e - (p_j - p_i))^T W_e (b_e - (p_j - p_i)) + prox * sum_i ||p_i - anchor_i||^2`
/// for symmetric PSD `W_e` and `prox > 0`. The proximal term pins directions
/// the edge terms leave free.
pub fn matrix_weighted_lsq(
    edges: &[(usize, usize, Mat3)],
    targets: &[Vec3],
    prox: f64,
    anchor: &[Vec3],
) -> Result<Vec<Vec3>> {
    let n = anchor.len();
    let mut rhs = DVector::<f64>::zeros(3 * n);
    for (v, a) in anchor.iter().enumerate() {
        rhs.fixed_rows_mut::<3>(3 * v).copy_from(&(a * prox));
    }
    for (&(i, j, w), b) in edges.iter().zip(targets) {
        let wb = w * b;
        rhs.fixed_rows_mut::<3>(3 * j).add_assign(wb);
        rhs.fixed_rows_mut::<3>(3 * i).sub_assign(wb);
    }
    let matvec = |x: &DVector<f64>| {
        let mut y = x * prox;
        for &(i, j, w) in edges {
            let d = w * (x.fixed_rows::<3>(3 * j) - x.fixed_rows::<3>(3 * i));
            y.fixed_rows_mut::<3>(3 * j).add_assign(d);
            y.fixed_rows_mut::<3>(3 * i).sub_assign(d);
        }
        y
    };
    let x = if n <= DENSE_BLOCK_LIMIT {
        let mut h = DMatrix::<f64>::identity(3 * n, 3 * n) * prox;
        for &(i, j, w) in edges {
            for (a, b, sign) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
                let mut block = h.fixed_view_mut::<3, 3>(3 * a, 3 * b);
                block += w * sign;
            }
        }
        h.cholesky().ok_or(Error::SingularInput { ratio: 0.0 })?.solve(&rhs)
    } else {
        let mut diag = vec![Mat3::identity() * prox; n];
        for &(i, j, w) in edges {
            diag[i] += w;
            diag[j] += w;
        }
        let inv: Vec<Mat3> = diag.iter().map(|d| d.try_inverse().unwrap_or_else(Mat3::identity)).collect();
        let precond = |r: &DVector<f64>| {
            let mut z = DVector::zeros(r.len());
            for (v, m) in inv.iter().enumerate() {
                z.fixed_rows_mut::<3>(3 * v).copy_from(&(m * r.fixed_rows::<3>(3 * v)));
            }
            z
        };
        let mut x = DVector::<f64>::zeros(3 * n);
        for (v, a) in anchor.iter().enumerate() {
            x.fixed_rows_mut::<3>(3 * v).copy_from(a);
        }
        let mut r = &rhs - matvec(&x);
        let mut z = precond(&r);
        let mut dir = z.clone();
        let mut rz = r.dot(&z);
        let bnorm = rhs.norm().max(f64::MIN_POSITIVE);
        for _ in 0..(30 * n).max(200) {
            if r.norm() <= 1e-14 * bnorm {
                break;
            }
            let ad = matvec(&dir);
            let alpha = rz / dir.dot(&ad);
            x.axpy(alpha, &dir, 1.0);
            r.axpy(-alpha, &ad, 1.0);
            z = precond(&r);
            let rz_new = r.dot(&z);
            dir = &z + &dir * (rz_new / rz);
            rz = rz_new;
        }
        x
    };
    let rel = (matvec(&x) - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
    if !(rel <= RESIDUAL_TOL) {
        return Err(Error::SingularInput { ratio: rel });
    }
    Ok((0..n).map(|v| Vec3::new(x[3 * v], x[3 * v + 1], x[3 * v + 2])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(n: usize, seed: u64) -> (Vec<(usize, usize, f64)>, Vec<Vec3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges: Vec<(usize, usize, f64)> = (1..n).map(|v| (rng.random_range(0..v), v, 1.0)).collect();
        for _ in 0..2 * n {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j {
                edges.push((i, j, 1.0));
            }
        }
        for e in &mut edges {
            e.2 = rng.random_range(0.1..3.0);
        }
        let targets = edges
            .iter()
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        (edges, targets)
    }

    #[test]
    fn sparse_and_dense_backends_agree() {
        let n = DENSE_LIMIT + 20;
        let (edges, targets) = random_instance(n, 9);
        let sparse = weighted_displacement_lsq(n, &edges, &targets).unwrap();
        // Dense reference on the same system via a direct factor.
        let mut l = DMatrix::<f64>::zeros(n - 1, n - 1);
        for &(i, j, w) in &edges {
            for (a, b, s) in [(i, i, w), (j, j, w), (i, j, -w), (j, i, -w)] {
                if a > 0 && b > 0 {
                    l[(a - 1, b - 1)] += s;
                }
            }
        }
        let rhs = displacement_rhs(n, &edges, &targets);
        let chol = l.cholesky().unwrap();
        for k in 0..3 {
            let b = DMatrix::from_iterator(n - 1, 1, rhs[1..].iter().map(|v| v[k]));
            let x = chol.solve(&b);
            let mean = (x.iter().sum::<f64>()) / n as f64;
            assert!((sparse[0][k] + mean).abs() < 1e-8);
            for v in 1..n {
                assert!((sparse[v][k] - (x[v - 1] - mean)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn disconnected_and_zero_weight_graphs_fail() {
        let err = weighted_displacement_lsq(3, &[(0, 1, 1.0)], &[Vec3::x()]);
        assert!(matches!(err, Err(Error::Disconnected { .. })));
        let err = weighted_displacement_lsq(3, &[(0, 1, 1.0), (1, 2, 0.0)], &[Vec3::x(), Vec3::x()]);
        assert!(matches!(err, Err(Error::Disconnected { .. })));
    }

    #[test]
    fn zero_centroid_and_small_residual() {
        let (edges, targets) = random_instance(40, 2);
        let solver = LaplacianSolver::new(40, &edges).unwrap();
        let rhs = displacement_rhs(40, &edges, &targets);
        let p = solver.solve(&rhs).unwrap();
        assert!(p.iter().sum::<Vec3>().norm() < 1e-12);
        assert!(solver.relative_residual(&p, &rhs) < 1e-12);
    }

    #[test]
    fn matrix_weighted_reduces_to_scalar_case() {
        let (edges, targets) = random_instance(30, 5);
        let blocks: Vec<_> = edges.iter().map(|&(i, j, w)| (i, j, Mat3::identity() * w)).collect();
        let reference = weighted_displacement_lsq(30, &edges, &targets).unwrap();
        let p = matrix_weighted_lsq(&blocks, &targets, 1e-13, &vec![Vec3::zeros(); 30]).unwrap();
        let c = p.iter().sum::<Vec3>() / 30.0;
        for (a, b) in p.iter().zip(&reference) {
            assert!((a - c - b).norm() < 1e-9);
        }
    }

    #[test]
    fn matrix_weighted_sparse_matches_dense() {
        let n = DENSE_BLOCK_LIMIT + 10;
        let (edges, targets) = random_instance(n, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blocks: Vec<_> = edges
            .iter()
            .map(|&(i, j, w)| {
                let g = Vec3::new(rng.random(), rng.random(), rng.random()).normalize();
                let m = if rng.random::<bool>() { Mat3::identity() } else { Mat3::identity() - g * g.transpose() };
                (i, j, m * w)
            })
            .collect();
        let anchor: Vec<Vec3> = (0..n).map(|v| Vec3::x() * v as f64 * 1e-3).collect();
        let sparse = matrix_weighted_lsq(&blocks, &targets, 1e-6, &anchor).unwrap();
        // Dense reference from the same normal equations.
        let mut h = DMatrix::<f64>::identity(3 * n, 3 * n) * 1e-6;
        let mut rhs = DVector::<f64>::zeros(3 * n);
        for (v, a) in anchor.iter().enumerate() {
            for k in 0..3 {
                rhs[3 * v + k] = 1e-6 * a[k];
            }
        }
        for (&(i, j, w), b) in blocks.iter().zip(&targets) {
            let wb = w * b;
            for r in 0..3 {
                rhs[3 * j + r] += wb[r];
                rhs[3 * i + r] -= wb[r];
                for c in 0..3 {
                    h[(3 * i + r, 3 * i + c)] += w[(r, c)];
                    h[(3 * j + r, 3 * j + c)] += w[(r, c)];
                    h[(3 * i + r, 3 * j + c)] -= w[(r, c)];
                    h[(3 * j + r, 3 * i + c)] -= w[(r, c)];
                }
            }
        }
        let x = h.lu().solve(&rhs).unwrap();
        for v in 0..n {
            for k in 0..3 {
                assert!((sparse[v][k] - x[3 * v + k]).abs() < 1e-6 * (1.0 + x[3 * v + k].abs()));
            }
        }
    }
}
