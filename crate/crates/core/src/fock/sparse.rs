//! Row-compressed complex sparse matrices over a Fock basis.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par;

const ROW_CHUNK: usize = 256;

/// Complex CSR matrix with a Hermitian flag. Equality compares entries only.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
    hermitian: bool,
}

impl PartialEq for SparseOperator {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.row_ptr == other.row_ptr && self.cols == other.cols && self.vals == other.vals
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

impl SparseOperator {
    pub fn zeros(dim: usize) -> Self {
        SparseOperator { dim, row_ptr: vec![0; dim + 1], cols: vec![], vals: vec![], hermitian: true }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![Complex64::new(1.0, 0.0); dim])
    }

    /// Diagonal matrix; flagged Hermitian when every entry is real.
    pub fn diagonal(d: &[Complex64]) -> Self {
        let rows = d.iter().enumerate().map(|(i, &v)| vec![(i, v)]).collect();
        let herm = d.iter().all(|v| v.im == 0.0);
        Self::from_rows(d.len(), rows, herm)
    }

    pub fn diagonal_real(d: &[f64]) -> Self {
        let c: Vec<Complex64> = d.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::diagonal(&c)
    }

    /// Build from per-row entry lists. Duplicates are summed and exact zeros dropped.
    pub fn from_rows(dim: usize, rows: Vec<Vec<(usize, Complex64)>>, hermitian: bool) -> Self {
        assert_eq!(rows.len(), dim);
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < r.len() {
                let c = r[k].0;
                debug_assert!(c < dim);
                let mut v = r[k].1;
                k += 1;
                while k < r.len() && r[k].0 == c {
                    v += r[k].1;
                    k += 1;
                }
                if v.re != 0.0 || v.im != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator { dim, row_ptr, cols, vals, hermitian }
    }

    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, Complex64)], hermitian: bool) -> Self {
        let mut rows = vec![Vec::new(); dim];
        for &(r, c, v) in triplets {
            rows[r].push((c, v));
        }
        Self::from_rows(dim, rows, hermitian)
    }

    pub fn from_dense(m: &DMatrix<Complex64>, hermitian: bool) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let rows = (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| (c, m[(r, c)])).collect()).collect();
        Self::from_rows(m.nrows(), rows, hermitian)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }
    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Entries of row `r` as (column, value), columns increasing.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        match self.cols[s..e].binary_search(&c) {
            Ok(k) => self.vals[s + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Diagonal entries.
    pub fn diagonal_values(&self) -> Vec<Complex64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out.hermitian = self.hermitian && s.im == 0.0;
        if s.re == 0.0 && s.im == 0.0 {
            return Self::zeros(self.dim);
        }
        out
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    fn combine(&self, other: &Self, sign: f64) -> Result<Self> {
        check_dims(self.dim, other.dim)?;
        let rows = par::map_range(self.dim, |r| {
            let mut out = Vec::new();
            let mut a = self.row(r).peekable();
            let mut b = other.row(r).map(|(c, v)| (c, v * sign)).peekable();
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (None, None) => break,
                    (Some(x), None) => {
                        out.push(x);
                        a.next();
                    }
                    (None, Some(y)) => {
                        out.push(y);
                        b.next();
                    }
                    (Some(x), Some(y)) => {
                        if x.0 < y.0 {
                            out.push(x);
                            a.next();
                        } else if y.0 < x.0 {
                            out.push(y);
                            b.next();
                        } else {
                            out.push((x.0, x.1 + y.1));
                            a.next();
                            b.next();
                        }
                    }
                }
            }
            out
        });
        Ok(Self::from_rows(self.dim, rows, self.hermitian && other.hermitian))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, -1.0)
    }

    /// Sparse product `self * other`.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim, other.dim)?;
        let nchunks = self.dim.div_ceil(ROW_CHUNK);
        let chunks = par::map_range(nchunks, |ci| {
            let lo = ci * ROW_CHUNK;
            let hi = (lo + ROW_CHUNK).min(self.dim);
            let mut acc: BTreeMap<usize, Complex64> = BTreeMap::new();
            let mut rows = Vec::with_capacity(hi - lo);
            for r in lo..hi {
                acc.clear();
                for (k, a) in self.row(r) {
                    for (c, b) in other.row(k) {
                        *acc.entry(c).or_insert(Complex64::new(0.0, 0.0)) += a * b;
                    }
                }
                rows.push(acc.iter().map(|(&c, &v)| (c, v)).collect::<Vec<_>>());
            }
            rows
        });
        let rows = chunks.into_iter().flatten().collect();
        Ok(Self::from_rows(self.dim, rows, false))
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut rows = vec![Vec::new(); self.dim];
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                rows[c].push((r, v.conj()));
            }
        }
        Self::from_rows(self.dim, rows, self.hermitian)
    }

    /// `AB - BA`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.multiply(other)?.sub(&other.multiply(self)?)
    }

    /// `AB + BA`.
    pub fn anticommutator(&self, other: &Self) -> Result<Self> {
        self.multiply(other)?.add(&other.multiply(self)?)
    }

    /// Exact entrywise check `A = A^dagger`.
    pub fn is_hermitian_exact(&self) -> bool {
        (0..self.dim).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v.conj()))
    }

    /// Set the flag after verifying exact Hermiticity.
    pub fn mark_hermitian(mut self) -> Result<Self> {
        if !self.is_hermitian_exact() {
            return Err(Error::InvariantViolation("operator is not exactly Hermitian".into()));
        }
        self.hermitian = true;
        Ok(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dim);
        let nchunks = self.dim.div_ceil(ROW_CHUNK);
        par::map_range(nchunks, |ci| {
            let lo = ci * ROW_CHUNK;
            let hi = (lo + ROW_CHUNK).min(self.dim);
            (lo..hi)
                .map(|r| self.row(r).fold(Complex64::new(0.0, 0.0), |s, (c, v)| s + v * x[c]))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn matvec_dvec(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        DVector::from_vec(self.matvec(x.as_slice()))
    }

    /// `self * m` for a dense right factor.
    pub fn mul_dense(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        assert_eq!(m.nrows(), self.dim);
        let rows = par::map_range(self.dim, |r| {
            let mut acc = vec![Complex64::new(0.0, 0.0); m.ncols()];
            for (k, a) in self.row(r) {
                for (c, slot) in acc.iter_mut().enumerate() {
                    *slot += a * m[(k, c)];
                }
            }
            acc
        });
        DMatrix::from_fn(self.dim, m.ncols(), |r, c| rows[r][c])
    }

    /// `m * self` for a dense left factor.
    pub fn left_mul_dense(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        assert_eq!(m.ncols(), self.dim);
        let rows = par::map_range(m.nrows(), |i| {
            let mut acc = vec![Complex64::new(0.0, 0.0); self.dim];
            for k in 0..self.dim {
                let a = m[(i, k)];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for (c, v) in self.row(k) {
                    acc[c] += a * v;
                }
            }
            acc
        });
        DMatrix::from_fn(m.nrows(), self.dim, |r, c| rows[r][c])
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn arb_sparse(dim: usize) -> impl Strategy<Value = SparseOperator> {
        proptest::collection::vec((0..dim, 0..dim, -3i32..4, -3i32..4), 0..(dim * 2)).prop_map(move |t| {
            let trip: Vec<_> = t.into_iter().map(|(r, cc, a, b)| (r, cc, c(a as f64, b as f64))).collect();
            SparseOperator::from_triplets(dim, &trip, false)
        })
    }

    #[test]
    fn add_zero_and_self_commutator() {
        let a = SparseOperator::from_triplets(3, &[(0, 1, c(1.0, 2.0)), (2, 2, c(-1.0, 0.0))], false);
        assert_eq!(a.add(&SparseOperator::zeros(3)).unwrap(), a);
        assert_eq!(a.commutator(&a).unwrap().nnz(), 0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = SparseOperator::identity(3);
        let b = SparseOperator::identity(4);
        assert_eq!(a.add(&b), Err(Error::DimensionMismatch { left: 3, right: 4 }));
        assert!(a.multiply(&b).is_err());
    }

    #[test]
    fn duplicates_sum_and_zeros_drop() {
        let a = SparseOperator::from_triplets(2, &[(0, 0, c(1.0, 0.0)), (0, 0, c(-1.0, 0.0)), (1, 0, c(2.0, 0.0)), (1, 0, c(3.0, 0.0))], false);
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(1, 0), c(5.0, 0.0));
    }

    #[test]
    fn hermitian_flag() {
        let h = SparseOperator::from_triplets(2, &[(0, 1, c(1.0, 2.0)), (1, 0, c(1.0, -2.0))], false);
        assert!(h.is_hermitian_exact());
        let h = h.mark_hermitian().unwrap();
        assert!(h.add(&h).unwrap().is_hermitian());
        assert!(!h.scale(c(0.0, 1.0)).is_hermitian());
        let n = SparseOperator::from_triplets(2, &[(0, 1, c(1.0, 0.0))], false);
        assert!(n.mark_hermitian().is_err());
    }

    proptest! {
        #[test]
        fn product_adjoint_matches_dense(a in arb_sparse(6), b in arb_sparse(6)) {
            let lhs = a.multiply(&b).unwrap().adjoint();
            let rhs = b.adjoint().multiply(&a.adjoint()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() == 0.0);
            let dense = (a.to_dense() * b.to_dense()).adjoint();
            prop_assert!((lhs.to_dense() - dense).iter().all(|v| v.norm() < 1e-12));
        }

        #[test]
        fn adjoint_is_involution(a in arb_sparse(8)) {
            prop_assert_eq!(a.adjoint().adjoint(), a);
        }

        #[test]
        fn multiply_is_associative(a in arb_sparse(7), b in arb_sparse(7), m in arb_sparse(7)) {
            let l = a.multiply(&b).unwrap().multiply(&m).unwrap();
            let r = a.multiply(&b.multiply(&m).unwrap()).unwrap();
            // integer entries keep products exact
            prop_assert!(l.max_abs_diff(&r).unwrap() == 0.0);
        }

        #[test]
        fn matvec_matches_dense(a in arb_sparse(9), xs in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let x: Vec<Complex64> = xs.iter().map(|&v| c(v, -v)).collect();
            let y = a.matvec(&x);
            let yd = a.to_dense() * DVector::from_vec(x.clone());
            for (u, v) in y.iter().zip(yd.iter()) {
                prop_assert!((u - v).norm() < 1e-12);
            }
            let m = DMatrix::from_fn(9, 3, |r, cc| c(r as f64 - cc as f64, 0.5));
            prop_assert!((a.mul_dense(&m) - a.to_dense() * &m).iter().all(|v| v.norm() < 1e-12));
            prop_assert!((a.left_mul_dense(&m.transpose()) - m.transpose() * a.to_dense()).iter().all(|v| v.norm() < 1e-12));
        }
    }
}
