//! Free Hamiltonian, interaction blocks and the regularized Hamiltonian.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{apply_boson, apply_fermion, transition_rows, FockBasis, Ladder, SparseOperator};
use crate::modegrid::{DispersionParams, KernelMatrix, ModeLayout, Sharp};
use crate::par;

/// The four interaction blocks.
///
/// * `Ab`: `sum w G[i,j] b_i a_j`
/// * `AstBst`: `sum w conj(G[i,j]) b_i^* a_j^*`
/// * `AstB`: `sum w conj(G[i,j]) b_i a_j^*`
/// * `ABst`: `sum w G[i,j] b_i^* a_j`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockTag {
    Ab,
    AstBst,
    AstB,
    ABst,
}

impl BlockTag {
    pub const ALL: [BlockTag; 4] = [BlockTag::Ab, BlockTag::AstBst, BlockTag::AstB, BlockTag::ABst];

    /// Kernel paired with the block: `G2` for `Ab`, `AstBst`, `G1` for the others.
    pub fn kernel(self) -> Sharp {
        match self {
            BlockTag::Ab | BlockTag::AstBst => Sharp::Two,
            BlockTag::AstB | BlockTag::ABst => Sharp::One,
        }
    }

    fn conjugates(self) -> bool {
        matches!(self, BlockTag::AstBst | BlockTag::AstB)
    }

    fn ladders(self) -> (Ladder, Ladder) {
        match self {
            BlockTag::Ab => (Ladder::Annihilate, Ladder::Annihilate),
            BlockTag::AstBst => (Ladder::Create, Ladder::Create),
            BlockTag::AstB => (Ladder::Annihilate, Ladder::Create),
            BlockTag::ABst => (Ladder::Create, Ladder::Annihilate),
        }
    }

    pub fn adjoint(self) -> BlockTag {
        match self {
            BlockTag::Ab => BlockTag::AstBst,
            BlockTag::AstBst => BlockTag::Ab,
            BlockTag::AstB => BlockTag::ABst,
            BlockTag::ABst => BlockTag::AstB,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BlockTag::Ab => "ab",
            BlockTag::AstBst => "a*b*",
            BlockTag::AstB => "a*b",
            BlockTag::ABst => "ab*",
        }
    }
}

fn check_modes(layout: &ModeLayout, basis: &FockBasis) -> Result<()> {
    if layout.n_fermion() != basis.m_f() || layout.n_boson() != basis.m_a() {
        return invalid(format!(
            "basis has {} boson / {} fermion modes, layout has {} / {}",
            basis.m_a(),
            basis.m_f(),
            layout.n_boson(),
            layout.n_fermion()
        ));
    }
    Ok(())
}

/// Diagonal of `H0` on the basis.
pub fn free_energies(layout: &ModeLayout, params: &DispersionParams, basis: &FockBasis) -> Result<Vec<f64>> {
    check_modes(layout, basis)?;
    let wb = layout.fermion_energies(params);
    let wa = layout.boson_energies(params);
    Ok(par::map_range(basis.dim(), |s| {
        let (bo, f) = basis.state(s);
        let mut e = 0.0;
        for (i, w) in wb.iter().enumerate() {
            if f >> i & 1 == 1 {
                e += w;
            }
        }
        for (n, w) in bo.iter().zip(&wa) {
            e += *n as f64 * w;
        }
        e
    }))
}

/// `H0 = dGamma(omega_a) + dGamma(omega_b)` as a diagonal operator.
pub fn build_free(layout: &ModeLayout, params: &DispersionParams, basis: &FockBasis) -> Result<SparseOperator> {
    Ok(SparseOperator::diagonal_real(&free_energies(layout, params, basis)?))
}

/// Block with its canonical kernel taken from `km`.
pub fn build_block(tag: BlockTag, km: &KernelMatrix, basis: &FockBasis) -> Result<SparseOperator> {
    check_modes(&km.layout, basis)?;
    build_block_with(tag, km.values(tag.kernel()), km.w(), basis)
}

/// Block with an arbitrary kernel `values[i, j]` (fermion i, boson j) and weight `w`.
pub fn build_block_with(tag: BlockTag, values: &DMatrix<Complex64>, w: f64, basis: &FockBasis) -> Result<SparseOperator> {
    if values.nrows() != basis.m_f() || values.ncols() != basis.m_a() {
        return Err(Error::DimensionMismatch { left: values.nrows() * values.ncols(), right: basis.m_f() * basis.m_a() });
    }
    let coeffs: Vec<(usize, usize, Complex64)> = (0..values.nrows())
        .flat_map(|i| (0..values.ncols()).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let g = values[(i, j)];
            if g.re == 0.0 && g.im == 0.0 {
                return None;
            }
            let g = if tag.conjugates() { g.conj() } else { g };
            Some((i, j, g * w))
        })
        .collect();
    let (fk, bk) = tag.ladders();
    let cap = basis.cap();
    let rows = transition_rows(basis, |bo, f, out| {
        let mut n = bo.to_vec();
        for &(i, j, g) in &coeffs {
            let Some((sign, f2)) = apply_fermion(f, i, fk) else { continue };
            n.copy_from_slice(bo);
            let Some(amp) = apply_boson(&mut n, j, bk, cap) else { continue };
            out.push((basis.index_of(&n, f2).expect("state in basis"), g * (sign * amp)));
        }
    });
    Ok(SparseOperator::from_rows(basis.dim(), rows, false))
}

/// `H0`, the four blocks and `H = H0 + H_I`.
#[derive(Debug, Clone)]
pub struct HamiltonianParts {
    pub energies: Vec<f64>,
    pub h0: SparseOperator,
    pub hab: SparseOperator,
    pub hastbst: SparseOperator,
    pub hastb: SparseOperator,
    pub habst: SparseOperator,
    pub full: SparseOperator,
}

impl HamiltonianParts {
    pub fn block(&self, tag: BlockTag) -> &SparseOperator {
        match tag {
            BlockTag::Ab => &self.hab,
            BlockTag::AstBst => &self.hastbst,
            BlockTag::AstB => &self.hastb,
            BlockTag::ABst => &self.habst,
        }
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    /// `H_I = H_full - H0`, assembled from the blocks.
    pub fn interaction(&self) -> Result<SparseOperator> {
        self.hab.add(&self.hastbst)?.add(&self.habst)?.add(&self.hastb)
    }

    /// `H0 + lambda H_I`, with the Hermitian flag re-verified.
    pub fn with_coupling(&self, lambda: f64) -> Result<HamiltonianParts> {
        let s = |m: &SparseOperator| m.scale_real(lambda);
        assemble(self.energies.clone(), self.h0.clone(), s(&self.hab), s(&self.hastbst), s(&self.hastb), s(&self.habst))
    }
}

fn assemble(
    energies: Vec<f64>,
    h0: SparseOperator,
    hab: SparseOperator,
    hastbst: SparseOperator,
    hastb: SparseOperator,
    habst: SparseOperator,
) -> Result<HamiltonianParts> {
    let full = h0.add(&hab)?.add(&habst)?.add(&hastbst)?.add(&hastb)?;
    let full = full
        .mark_hermitian()
        .map_err(|_| Error::InvariantViolation("assembled Hamiltonian is not exactly Hermitian".into()))?;
    Ok(HamiltonianParts { energies, h0, hab, hastbst, hastb, habst, full })
}

/// Assemble every part of `H` from sampled kernels, scaling both kernels by `lambda`.
pub fn build_full(km: &KernelMatrix, params: &DispersionParams, basis: &FockBasis, lambda: f64) -> Result<HamiltonianParts> {
    let energies = free_energies(&km.layout, params, basis)?;
    let h0 = SparseOperator::diagonal_real(&energies);
    let km = if lambda == 1.0 { km.clone() } else { km.scaled(lambda) };
    let hab = build_block(BlockTag::Ab, &km, basis)?;
    let habst = build_block(BlockTag::ABst, &km, basis)?;
    let hastbst = build_block(BlockTag::AstBst, &km, basis)?;
    let hastb = build_block(BlockTag::AstB, &km, basis)?;
    assemble(energies, h0, hab, hastbst, hastb, habst)
}

/// `C = 1 + sum w^2 (1 + 1/omega_a(q_j)) (|G1|^2 + |G2|^2)`.
pub fn c_lambda(km: &KernelMatrix, params: &DispersionParams) -> f64 {
    let wa = km.layout.boson_energies(params);
    let w2 = km.w() * km.w();
    let mut s = 0.0;
    for i in 0..km.g1.nrows() {
        for (j, omega) in wa.iter().enumerate() {
            s += w2 * (1.0 + 1.0 / omega) * (km.g1[(i, j)].norm_sqr() + km.g2[(i, j)].norm_sqr());
        }
    }
    1.0 + s
}

/// Diagonal entries `(E_s - z + shift)^(-alpha)`, principal branch.
pub fn resolvent_power_diag(energies: &[f64], z: Complex64, alpha: f64, shift: f64) -> Result<Vec<Complex64>> {
    if !(z.re < 0.0) {
        return Err(Error::OutsideHalfPlane(format!("Re z = {} must be negative", z.re)));
    }
    if shift < 0.0 {
        return invalid(format!("shift must be non-negative, got {shift}"));
    }
    if alpha == 0.0 {
        return Ok(vec![Complex64::new(1.0, 0.0); energies.len()]);
    }
    Ok(energies
        .iter()
        .map(|&e| {
            let x = Complex64::new(e + shift, 0.0) - z;
            if alpha == 1.0 {
                x.inv()
            } else {
                x.powf(-alpha)
            }
        })
        .collect())
}

/// `(H0 - z + shift)^(-alpha)` as a diagonal operator. `h0` must be diagonal.
pub fn free_resolvent_power(h0: &SparseOperator, z: Complex64, alpha: f64, shift: f64) -> Result<SparseOperator> {
    let e: Vec<f64> = h0.diagonal_values().iter().map(|v| v.re).collect();
    Ok(SparseOperator::diagonal(&resolvent_power_diag(&e, z, alpha, shift)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{boson_op, enumerate_basis, fermion_op};
    use crate::modegrid::{build_grid, kernel_matrix, Coefficient, CutoffSpec, KernelSpec};
    use approx::assert_relative_eq;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn single_cell(g1: Complex64, g2: Complex64) -> KernelMatrix {
        let grid = build_grid(1, 0.5, 1).unwrap();
        KernelMatrix {
            layout: ModeLayout::full(grid),
            g1: DMatrix::from_element(1, 1, g1),
            g2: DMatrix::from_element(1, 1, g2),
        }
    }

    #[test]
    fn free_examples() {
        let params = DispersionParams::new(1.0, 2.0).unwrap();
        let grid = build_grid(1, 1.0, 1).unwrap();
        let layout = ModeLayout::full(grid);
        let basis = enumerate_basis(1, 1, 2).unwrap();
        let e = free_energies(&layout, &params, &basis).unwrap();
        assert_eq!(e[0], 0.0);
        let one_boson = basis.index_of(&[1], 0).unwrap();
        assert_eq!(e[one_boson], 1.0);
        let s = basis.index_of(&[2], 1).unwrap();
        assert_eq!(e[s], 2.0 + 2.0 * 1.0);
    }

    #[test]
    fn block_examples() {
        let basis = enumerate_basis(1, 1, 2).unwrap();
        let km = single_cell(c(0.0), Complex64::new(0.3, 0.4));
        let b = build_block(BlockTag::AstBst, &km, &basis).unwrap();
        let target = basis.index_of(&[1], 1).unwrap();
        assert_eq!(b.get(target, 0), Complex64::new(0.3, -0.4));
        let ab = build_block(BlockTag::Ab, &km, &basis).unwrap();
        assert_eq!(ab.adjoint(), b);
        let zero = build_block(BlockTag::ABst, &km, &basis).unwrap();
        assert_eq!(zero.nnz(), 0);
    }

    #[test]
    fn blocks_match_operator_products() {
        // oracle: sum_ij w G b_i a_j assembled from ladder matrices
        let params = DispersionParams::new(1.0, 1.5).unwrap();
        let grid = build_grid(1, 1.5, 3).unwrap();
        let mut ks = KernelSpec::new(0.5).unwrap();
        ks.h1 = Coefficient::function(1.0, |k, q| Complex64::from_polar(1.0, k[0] - 2.0 * q[0]));
        let km = kernel_matrix(&ks, &CutoffSpec::new(2.0, 1).unwrap(), &params, &grid);
        let basis = enumerate_basis(3, 3, 2).unwrap();
        for tag in BlockTag::ALL {
            let (fk, bk) = tag.ladders();
            let mut oracle = SparseOperator::zeros(basis.dim());
            for i in 0..3 {
                for j in 0..3 {
                    let g = km.values(tag.kernel())[(i, j)];
                    let g = if tag.conjugates() { g.conj() } else { g };
                    let prod = fermion_op(i, fk, &basis).unwrap().multiply(&boson_op(j, bk, &basis).unwrap()).unwrap();
                    oracle = oracle.add(&prod.scale(g * km.w())).unwrap();
                }
            }
            let b = build_block(tag, &km, &basis).unwrap();
            assert!(b.max_abs_diff(&oracle).unwrap() < 1e-14, "{tag:?}");
        }
    }

    #[test]
    fn full_examples() {
        let params = DispersionParams::default();
        let km = single_cell(c(0.0), c(0.7));
        let basis = enumerate_basis(1, 1, 3).unwrap();
        let parts = build_full(&km, &params, &basis, 1.0).unwrap();
        assert!(parts.full.is_hermitian());
        assert_eq!(parts.full.adjoint(), parts.full);
        let s = basis.index_of(&[1], 1).unwrap();
        let w = km.w();
        assert_eq!(parts.full.get(0, 0), c(0.0));
        assert_eq!(parts.full.get(0, s), c(w * 0.7));
        assert_eq!(parts.full.get(s, 0), c(w * 0.7));
        assert_relative_eq!(parts.full.get(s, s).re, 2.0);
        let free = build_full(&km, &params, &basis, 0.0).unwrap();
        assert_eq!(free.full, parts.h0);
        assert_eq!(parts.hastbst, parts.hab.adjoint());
        assert_eq!(parts.hastb, parts.habst.adjoint());
    }

    #[test]
    fn c_lambda_examples() {
        let params = DispersionParams::default();
        assert_eq!(c_lambda(&single_cell(c(0.0), c(0.0)), &params), 1.0);
        assert_eq!(c_lambda(&single_cell(c(0.0), c(1.0)), &params), 3.0);
    }

    #[test]
    fn resolvent_power_examples() {
        let e = [2.0, 0.0];
        assert_eq!(resolvent_power_diag(&e, c(-3.0), 0.0, 0.0).unwrap(), vec![c(1.0); 2]);
        assert_relative_eq!(resolvent_power_diag(&e, c(-3.0), 1.0, 0.0).unwrap()[0].re, 0.2);
        assert_relative_eq!(resolvent_power_diag(&e, c(-4.0), 0.5, 0.0).unwrap()[1].re, 0.5);
        assert!(resolvent_power_diag(&e, c(0.0), 0.5, 0.0).is_err());
        let h0 = SparseOperator::diagonal_real(&e);
        assert!(free_resolvent_power(&h0, c(1.0), 0.5, 0.0).is_err());
        assert_eq!(free_resolvent_power(&h0, c(-1.0), 0.0, 0.0).unwrap(), SparseOperator::identity(2));
    }
}
