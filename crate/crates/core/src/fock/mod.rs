//! Truncated Fock space, ladder operators and algebra checks.

mod basis;
mod sparse;

pub use basis::{basis_dim, enumerate_basis, enumerate_basis_with_limit, FockBasis, DEFAULT_DIM_LIMIT};
pub use sparse::SparseOperator;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    Annihilate,
    Create,
}

/// Jordan-Wigner sign for acting on fermion mode `i` of bitset `f`.
#[inline]
pub fn jw_sign(f: u64, i: usize) -> f64 {
    if (f & ((1u64 << i) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Apply `b_i` (or `b_i^*`) to bitset `f`: Some((sign, new bitset)) or None if the result vanishes.
#[inline]
pub fn apply_fermion(f: u64, i: usize, kind: Ladder) -> Option<(f64, u64)> {
    let bit = 1u64 << i;
    match kind {
        Ladder::Annihilate if f & bit != 0 => Some((jw_sign(f, i), f ^ bit)),
        Ladder::Create if f & bit == 0 => Some((jw_sign(f, i), f | bit)),
        _ => None,
    }
}

/// Apply `a_j` (or `a_j^*`) to occupations `n` in place, returning the amplitude, or None
/// if the result vanishes. Creation on a state at the total cap vanishes.
#[inline]
pub fn apply_boson(n: &mut [u8], j: usize, kind: Ladder, cap: usize) -> Option<f64> {
    match kind {
        Ladder::Annihilate => {
            if n[j] == 0 {
                return None;
            }
            let amp = (n[j] as f64).sqrt();
            n[j] -= 1;
            Some(amp)
        }
        Ladder::Create => {
            let total: usize = n.iter().map(|&v| v as usize).sum();
            if total >= cap {
                return None;
            }
            n[j] += 1;
            Some((n[j] as f64).sqrt())
        }
    }
}

/// Matrix of `a_j` or `a_j^*`.
pub fn boson_op(j: usize, kind: Ladder, basis: &FockBasis) -> Result<SparseOperator> {
    if j >= basis.m_a() {
        return invalid(format!("boson mode {j} out of range {}", basis.m_a()));
    }
    let rows = transition_rows(basis, |bo, f, out| {
        let mut n = bo.to_vec();
        if let Some(amp) = apply_boson(&mut n, j, kind, basis.cap()) {
            out.push((basis.index_of(&n, f).expect("state in basis"), Complex64::new(amp, 0.0)));
        }
    });
    Ok(SparseOperator::from_rows(basis.dim(), rows, false))
}

/// Matrix of `b_i` or `b_i^*` with Jordan-Wigner signs.
pub fn fermion_op(i: usize, kind: Ladder, basis: &FockBasis) -> Result<SparseOperator> {
    if i >= basis.m_f() {
        return invalid(format!("fermion mode {i} out of range {}", basis.m_f()));
    }
    let rows = transition_rows(basis, |bo, f, out| {
        if let Some((s, g)) = apply_fermion(f, i, kind) {
            out.push((basis.index_of(bo, g).expect("state in basis"), Complex64::new(s, 0.0)));
        }
    });
    Ok(SparseOperator::from_rows(basis.dim(), rows, false))
}

/// Build operator rows from a column rule: `rule(state)` pushes (target, amplitude)
/// for the image of that basis state. The result is transposed into CSR rows.
pub(crate) fn transition_rows<F>(basis: &FockBasis, rule: F) -> Vec<Vec<(usize, Complex64)>>
where
    F: Fn(&[u8], u64, &mut Vec<(usize, Complex64)>) + Sync + Send,
{
    let dim = basis.dim();
    let cols = par::map_range(dim, |c| {
        let (bo, f) = basis.state(c);
        let mut out = Vec::new();
        rule(bo, f, &mut out);
        out
    });
    let mut rows = vec![Vec::new(); dim];
    for (c, list) in cols.into_iter().enumerate() {
        for (r, v) in list {
            rows[r].push((c, v));
        }
    }
    rows
}

/// `sum_j a_j^* a_j`.
pub fn number_operator(basis: &FockBasis) -> Result<SparseOperator> {
    let mut n = SparseOperator::zeros(basis.dim());
    for j in 0..basis.m_a() {
        let a = boson_op(j, Ladder::Annihilate, basis)?;
        let ad = boson_op(j, Ladder::Create, basis)?;
        n = n.add(&ad.multiply(&a)?)?;
    }
    Ok(n)
}

/// Maximal violations of the canonical relations on a truncated basis.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AlgebraReport {
    pub m_a: usize,
    pub m_f: usize,
    pub cap: usize,
    pub dim: usize,
    pub max_car_violation: f64,
    pub max_ccr_violation_below_cap: f64,
    pub max_ccr_violation_at_cap: f64,
    /// True when every CCR violation sits on a column with total boson number equal to the cap.
    pub ccr_violations_only_at_cap: bool,
    pub max_mixed_violation: f64,
    pub max_number_violation: f64,
}

/// Exhaustively check CCR, CAR and mixed relations. Intended for dim up to about 1e4.
pub fn algebra_report(basis: &FockBasis) -> Result<AlgebraReport> {
    let dim = basis.dim();
    let a: Vec<SparseOperator> = (0..basis.m_a()).map(|j| boson_op(j, Ladder::Annihilate, basis)).collect::<Result<_>>()?;
    let ad: Vec<SparseOperator> = a.iter().map(|x| x.adjoint()).collect();
    let b: Vec<SparseOperator> = (0..basis.m_f()).map(|i| fermion_op(i, Ladder::Annihilate, basis)).collect::<Result<_>>()?;
    let bd: Vec<SparseOperator> = b.iter().map(|x| x.adjoint()).collect();
    let id = SparseOperator::identity(dim);
    let zero = SparseOperator::zeros(dim);

    let mut car: f64 = 0.0;
    for i in 0..b.len() {
        for k in 0..b.len() {
            let delta = if i == k { &id } else { &zero };
            car = car.max(b[i].anticommutator(&bd[k])?.max_abs_diff(delta)?);
            car = car.max(b[i].anticommutator(&b[k])?.max_abs());
            car = car.max(bd[i].anticommutator(&bd[k])?.max_abs());
        }
    }

    let mut below: f64 = 0.0;
    let mut at: f64 = 0.0;
    let mut only_at = true;
    let mut scan = |m: &SparseOperator| {
        for r in 0..dim {
            for (c, v) in m.row(r) {
                let x = v.norm();
                if basis.boson_total(c) < basis.cap() {
                    below = below.max(x);
                    if x > 1e-12 {
                        only_at = false;
                    }
                } else {
                    at = at.max(x);
                }
            }
        }
    };
    for i in 0..a.len() {
        for k in 0..a.len() {
            let delta = if i == k { &id } else { &zero };
            scan(&a[i].commutator(&ad[k])?.sub(delta)?);
            scan(&a[i].commutator(&a[k])?);
            scan(&ad[i].commutator(&ad[k])?);
        }
    }

    let mut mixed: f64 = 0.0;
    for x in a.iter().chain(ad.iter()) {
        for y in b.iter().chain(bd.iter()) {
            mixed = mixed.max(x.commutator(y)?.max_abs());
        }
    }

    let n = number_operator(basis)?;
    let mut numv: f64 = n.sub(&SparseOperator::diagonal(&n.diagonal_values()))?.max_abs();
    for s in 0..dim {
        numv = numv.max((n.get(s, s).re - basis.boson_total(s) as f64).abs());
    }

    Ok(AlgebraReport {
        m_a: basis.m_a(),
        m_f: basis.m_f(),
        cap: basis.cap(),
        dim,
        max_car_violation: car,
        max_ccr_violation_below_cap: below,
        max_ccr_violation_at_cap: at,
        ccr_violations_only_at_cap: only_at,
        max_mixed_violation: mixed,
        max_number_violation: numv,
    })
}
