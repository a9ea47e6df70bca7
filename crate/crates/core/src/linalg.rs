//! Dense helpers: operator norms, Hermitian eigenproblems and linear solves.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::SparseOperator;

/// Largest dimension for which norms and eigenvalues use a dense factorization.
pub const DENSE_LIMIT: usize = 2048;
pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMethod {
    Dense,
    Power,
}

/// An operator-norm measurement with its convergence record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub method: NormMethod,
    pub iterations: usize,
    /// `|A^* A v - s^2 v| / s^2` at the final iterate, 0 for the dense path.
    pub residual: f64,
    pub converged: bool,
}

/// Spectral norm of a dense matrix.
pub fn op_norm(m: &DMatrix<Complex64>) -> NormEstimate {
    if m.nrows() == 0 || m.ncols() == 0 {
        return NormEstimate { value: 0.0, method: NormMethod::Dense, iterations: 0, residual: 0.0, converged: true };
    }
    if m.nrows().max(m.ncols()) <= DENSE_LIMIT {
        let s = m.clone().singular_values();
        let value = s.iter().cloned().fold(0.0, f64::max);
        return NormEstimate { value, method: NormMethod::Dense, iterations: 0, residual: 0.0, converged: true };
    }
    power_norm(|x| m * x, |y| m.adjoint() * y, m.ncols(), POWER_TOL, POWER_MAX_ITER, 0)
}

pub fn op_norm_value(m: &DMatrix<Complex64>) -> f64 {
    op_norm(m).value
}

/// Deterministic start vector: normalized all-ones plus a small seeded perturbation,
/// so it is not accidentally orthogonal to the top singular vector.
pub fn start_vector(dim: usize, seed: u64) -> DVector<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = DVector::from_fn(dim, |_, _| Complex64::new(1.0 + 0.1 * rng.gen_range(-1.0..1.0), 0.1 * rng.gen_range(-1.0..1.0)));
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

/// Power iteration on `A^* A` for an implicitly applied operator.
pub fn power_norm<F, G>(apply: F, apply_adj: G, dim: usize, tol: f64, max_iter: usize, seed: u64) -> NormEstimate
where
    F: Fn(&DVector<Complex64>) -> DVector<Complex64>,
    G: Fn(&DVector<Complex64>) -> DVector<Complex64>,
{
    if dim == 0 {
        return NormEstimate { value: 0.0, method: NormMethod::Power, iterations: 0, residual: 0.0, converged: true };
    }
    let mut v = start_vector(dim, seed);
    let mut sigma2 = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let w = apply_adj(&apply(&v));
        let s2 = v.dotc(&w).re;
        let wn = w.norm();
        if wn == 0.0 {
            return NormEstimate { value: 0.0, method: NormMethod::Power, iterations: it, residual: 0.0, converged: true };
        }
        residual = (&w - &v * Complex64::new(s2, 0.0)).norm() / s2.max(f64::MIN_POSITIVE);
        let change = (s2 - sigma2).abs() / s2.max(f64::MIN_POSITIVE);
        sigma2 = s2;
        v = w / Complex64::new(wn, 0.0);
        if change < tol && it > 2 {
            return NormEstimate { value: sigma2.max(0.0).sqrt(), method: NormMethod::Power, iterations: it, residual, converged: true };
        }
    }
    NormEstimate { value: sigma2.max(0.0).sqrt(), method: NormMethod::Power, iterations: max_iter, residual, converged: false }
}

/// Spectral norm of a sparse operator, taken blockwise.
///
/// Rows and columns are split into the connected components of the nonzero
/// pattern. The operator is block diagonal after permuting by component, so the
/// norm is the largest block norm. Operators that shift particle numbers by a
/// fixed amount split into one block per sector.
pub fn sparse_op_norm(m: &SparseOperator) -> NormEstimate {
    let n = m.dim();
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for r in 0..n {
        for (c, v) in m.row(r) {
            if v.re != 0.0 || v.im != 0.0 {
                let (a, b) = (find(&mut parent, r), find(&mut parent, n + c));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = std::collections::BTreeMap::new();
    for x in 0..2 * n {
        let root = find(&mut parent, x);
        let g = groups.entry(root).or_default();
        if x < n {
            g.0.push(x);
        } else {
            g.1.push(x - n);
        }
    }
    let mut best = NormEstimate { value: 0.0, method: NormMethod::Dense, iterations: 0, residual: 0.0, converged: true };
    for (rows, cols) in groups.values() {
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        let block = DMatrix::from_fn(rows.len(), cols.len(), |i, j| m.get(rows[i], cols[j]));
        let est = op_norm(&block);
        if est.value > best.value || !est.converged {
            let converged = best.converged && est.converged;
            best = NormEstimate { converged, ..est };
        }
    }
    best
}

pub fn frobenius(m: &DMatrix<Complex64>) -> f64 {
    m.norm()
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn hermitian_extremes(m: &DMatrix<Complex64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Dense inverse via LU.
pub fn inverse(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    m.clone().lu().try_inverse().ok_or(Error::Singular)
}

/// `(h - shift - z)^-1` for a dense Hermitian `h`.
pub fn dense_resolvent(h: &DMatrix<Complex64>, shift: f64, z: Complex64) -> Result<DMatrix<Complex64>> {
    let n = h.nrows();
    let mut a = h.clone();
    for i in 0..n {
        a[(i, i)] -= Complex64::new(shift, 0.0) + z;
    }
    inverse(&a)
}

/// LU factorization kept around for repeated solves.
pub struct LuSolver {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl LuSolver {
    pub fn new(m: &DMatrix<Complex64>) -> Result<Self> {
        let lu = m.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Singular);
        }
        Ok(LuSolver { lu })
    }

    pub fn solve(&self, b: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        self.lu.solve(b).ok_or(Error::Singular)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn dense_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0), c(-3.0), c(2.0)]));
        assert!((op_norm_value(&m) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn power_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = DMatrix::from_fn(30, 30, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let dense = op_norm_value(&m);
        let p = power_norm(|x| &m * x, |y| m.adjoint() * y, 30, 1e-12, 100_000, 3);
        assert!(p.converged);
        assert!((p.value - dense).abs() / dense < 1e-5, "{} vs {dense}", p.value);
    }

    #[test]
    fn sparse_norm_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // two disjoint blocks plus a permutation-like scatter
        let n = 12;
        let mut trip = Vec::new();
        for _ in 0..30 {
            let r = rng.gen_range(0..n);
            let c = if r % 2 == 0 { rng.gen_range(0..n / 2) * 2 } else { rng.gen_range(0..n / 2) * 2 + 1 };
            trip.push((r, c, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))));
        }
        let m = SparseOperator::from_triplets(n, &trip, false);
        let dense = op_norm_value(&m.to_dense());
        assert!((sparse_op_norm(&m).value - dense).abs() < 1e-12 * dense.max(1.0));
        assert_eq!(sparse_op_norm(&SparseOperator::zeros(4)).value, 0.0);
    }

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(2, 2, &[c(2.0), Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0), c(2.0)]);
        let (vals, vecs) = hermitian_eigen(&m);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        let v = vecs.column(0);
        assert!((&m * v - v * c(vals[0])).norm() < 1e-13);
    }

    #[test]
    fn resolvent_times_shifted_is_identity() {
        let h = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.5), c(0.5), c(0.0)]);
        let z = Complex64::new(-2.0, 0.3);
        let r = dense_resolvent(&h, 0.25, z).unwrap();
        let mut a = h.clone();
        for i in 0..2 {
            a[(i, i)] -= c(0.25) + z;
        }
        assert!((a * r - DMatrix::identity(2, 2)).norm() < 1e-14);
    }
}
