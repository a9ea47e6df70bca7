//! Truncated occupation-number basis.

use std::collections::HashMap;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_DIM_LIMIT: usize = 200_000;

/// Boson multi-indices with total occupation at most `cap`, times all
/// fermion bitsets on `m_f` modes.
///
/// States are ordered boson-major. Boson multi-indices come in graded-lex
/// order (total ascending, then lexicographically descending), fermion
/// bitsets by integer value. The flat index is `b * 2^m_f + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockBasis {
    m_a: usize,
    m_f: usize,
    cap: usize,
    bosons: Vec<Vec<u8>>,
    boson_index: HashMap<Vec<u8>, usize>,
}

fn binomial(n: u128, k: u128) -> Option<u128> {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.checked_mul(n - i)? / (i + 1);
    }
    Some(r)
}

/// Predicted basis size `C(m_a + cap, cap) 2^m_f`, or None on overflow.
pub fn basis_dim(m_a: usize, m_f: usize, cap: usize) -> Option<u128> {
    if m_f >= 100 {
        return None;
    }
    binomial((m_a + cap) as u128, cap as u128)?.checked_mul(1u128 << m_f)
}

fn compositions(m: usize, total: usize, out: &mut Vec<Vec<u8>>) {
    // lexicographically descending multi-indices with the given total
    fn rec(pos: usize, m: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos + 1 == m {
            cur.push(left as u8);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v as u8);
            rec(pos + 1, m, left - v, cur, out);
            cur.pop();
        }
    }
    if m == 0 {
        if total == 0 {
            out.push(Vec::new());
        }
        return;
    }
    rec(0, m, total, &mut Vec::with_capacity(m), out);
}

impl FockBasis {
    pub fn m_a(&self) -> usize {
        self.m_a
    }
    pub fn m_f(&self) -> usize {
        self.m_f
    }
    pub fn cap(&self) -> usize {
        self.cap
    }
    pub fn dim(&self) -> usize {
        self.bosons.len() << self.m_f
    }
    pub fn n_boson_states(&self) -> usize {
        self.bosons.len()
    }

    /// (boson occupations, fermion bitset) of state `idx`.
    pub fn state(&self, idx: usize) -> (&[u8], u64) {
        let b = idx >> self.m_f;
        let f = (idx & ((1usize << self.m_f) - 1)) as u64;
        (&self.bosons[b], f)
    }

    pub fn index_of(&self, bosons: &[u8], fermions: u64) -> Option<usize> {
        if self.m_f < 64 && fermions >> self.m_f != 0 {
            return None;
        }
        self.boson_index.get(bosons).map(|b| (b << self.m_f) | fermions as usize)
    }

    pub fn boson_total(&self, idx: usize) -> usize {
        self.state(idx).0.iter().map(|&n| n as usize).sum()
    }
}

/// Enumerate the truncated basis with the default dimension limit.
pub fn enumerate_basis(m_a: usize, m_f: usize, cap: usize) -> Result<FockBasis> {
    enumerate_basis_with_limit(m_a, m_f, cap, DEFAULT_DIM_LIMIT)
}

pub fn enumerate_basis_with_limit(m_a: usize, m_f: usize, cap: usize, limit: usize) -> Result<FockBasis> {
    if cap > u8::MAX as usize {
        return invalid(format!("boson cap {cap} exceeds 255"));
    }
    if m_f >= 63 {
        return invalid(format!("{m_f} fermion modes exceed the bitset width"));
    }
    let dim = basis_dim(m_a, m_f, cap).unwrap_or(u128::MAX);
    if dim > limit as u128 {
        return Err(Error::BasisLimit { dim: dim.min(usize::MAX as u128) as usize, limit });
    }
    let mut bosons = Vec::new();
    for total in 0..=cap {
        compositions(m_a, total, &mut bosons);
        if m_a == 0 {
            break;
        }
    }
    let boson_index = bosons.iter().enumerate().map(|(i, b)| (b.clone(), i)).collect();
    let basis = FockBasis { m_a, m_f, cap, bosons, boson_index };
    debug_assert_eq!(basis.dim() as u128, dim);
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dimension_examples() {
        assert_eq!(enumerate_basis(1, 1, 2).unwrap().dim(), 6);
        assert_eq!(enumerate_basis(0, 2, 0).unwrap().dim(), 4);
        assert_eq!(enumerate_basis(2, 1, 1).unwrap().dim(), 6);
        assert_eq!(enumerate_basis(0, 0, 3).unwrap().dim(), 1);
    }

    #[test]
    fn limit_is_enforced() {
        assert!(matches!(enumerate_basis(10, 20, 4), Err(Error::BasisLimit { .. })));
        assert!(enumerate_basis_with_limit(2, 2, 2, 23).is_err());
        assert!(enumerate_basis_with_limit(2, 2, 2, 24).is_ok());
    }

    #[test]
    fn graded_lex_order() {
        let b = enumerate_basis(2, 0, 2).unwrap();
        let seq: Vec<Vec<u8>> = (0..b.dim()).map(|i| b.state(i).0.to_vec()).collect();
        assert_eq!(seq, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn fermions_are_inner_index() {
        let b = enumerate_basis(1, 2, 1).unwrap();
        assert_eq!(b.state(0), (&[0u8][..], 0));
        assert_eq!(b.state(3), (&[0u8][..], 3));
        assert_eq!(b.state(4), (&[1u8][..], 0));
    }

    proptest! {
        #[test]
        fn index_is_bijection(m_a in 0usize..4, m_f in 0usize..4, cap in 0usize..4) {
            let b = enumerate_basis(m_a, m_f, cap).unwrap();
            prop_assert_eq!(b.dim() as u128, basis_dim(m_a, m_f, cap).unwrap());
            for i in 0..b.dim() {
                let (bo, f) = b.state(i);
                prop_assert!(bo.iter().map(|&n| n as usize).sum::<usize>() <= cap);
                prop_assert_eq!(b.index_of(bo, f), Some(i));
            }
        }
    }
}
