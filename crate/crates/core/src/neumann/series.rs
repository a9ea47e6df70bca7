//! Raw and reordered Neumann series for `(H - E2 - z)^-1` on a truncation.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use super::catalog::{Factor, GSetCatalog};
use super::enumerate::{enumerate_with_limit, AdmissibleSequence, DEFAULT_DEPTH_LIMIT};
use crate::counterterm::{a_factor, k1_constant, k3_constant};
use crate::error::{invalid, Error, Result};
use crate::fock::{FockBasis, SparseOperator};
use crate::hamiltonian::{build_block_with, resolvent_power_diag, HamiltonianParts};
use crate::linalg;
use crate::modegrid::{DispersionParams, KernelMatrix};
use crate::par;

pub const DEFAULT_RAW_ORDER: usize = 24;
/// Consecutive non-decreasing term norms that flag divergence.
pub const DIVERGENCE_WINDOW: usize = 5;

/// Everything needed to evaluate series terms at one `z`.
#[derive(Clone)]
pub struct SeriesContext<'a> {
    parts: &'a HamiltonianParts,
    catalog: GSetCatalog,
    e2: f64,
    z: Complex64,
    extra: HashMap<Factor, SparseOperator>,
}

impl<'a> SeriesContext<'a> {
    /// Context for a catalog whose variants all use the blocks in `parts`.
    pub fn new(parts: &'a HamiltonianParts, catalog: GSetCatalog, e2: f64, z: Complex64) -> Result<Self> {
        if !catalog.is_canonical() {
            return invalid("catalog needs blocks outside the Hamiltonian; use SeriesContext::with_kernels");
        }
        Self::build(parts, catalog, e2, z, HashMap::new())
    }

    /// Context that also builds the non-canonical blocks some catalog readings use.
    /// `km` must be the kernel matrix `parts` was built from, already scaled by the coupling.
    pub fn with_kernels(parts: &'a HamiltonianParts, catalog: GSetCatalog, e2: f64, z: Complex64, km: &KernelMatrix, basis: &FockBasis) -> Result<Self> {
        if basis.dim() != parts.dim() {
            return Err(Error::DimensionMismatch { left: basis.dim(), right: parts.dim() });
        }
        let mut extra = HashMap::new();
        for s in catalog.sets() {
            for v in &s.variants {
                for f in &v.factors {
                    if !f.is_canonical() && !extra.contains_key(f) {
                        extra.insert(*f, build_block_with(f.block, km.values(f.kernel), km.w(), basis)?);
                    }
                }
            }
        }
        Self::build(parts, catalog, e2, z, extra)
    }

    fn build(parts: &'a HamiltonianParts, catalog: GSetCatalog, e2: f64, z: Complex64, extra: HashMap<Factor, SparseOperator>) -> Result<Self> {
        if !(z.re < 0.0) {
            return Err(Error::OutsideHalfPlane(format!("Re z = {} must be negative", z.re)));
        }
        Ok(SeriesContext { parts, catalog, e2, z, extra })
    }

    /// Same context at another spectral point.
    pub fn at(&self, z: Complex64) -> Result<Self> {
        Self::build(self.parts, self.catalog.clone(), self.e2, z, self.extra.clone())
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }

    pub fn e2(&self) -> f64 {
        self.e2
    }

    pub fn dim(&self) -> usize {
        self.parts.dim()
    }

    pub fn catalog(&self) -> &GSetCatalog {
        &self.catalog
    }

    pub fn parts(&self) -> &HamiltonianParts {
        self.parts
    }

    /// Diagonal of `R0(z)^alpha`.
    pub fn r0_power(&self, alpha: f64) -> Vec<Complex64> {
        resolvent_power_diag(&self.parts.energies, self.z, alpha, 0.0).expect("z checked at construction")
    }

    pub fn r0_dense(&self) -> DMatrix<Complex64> {
        diag_dense(&self.r0_power(1.0))
    }

    /// `||R0(z)|| = 1 / min |E_s - z|`.
    pub fn r0_norm(&self) -> f64 {
        self.r0_power(1.0).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn block(&self, f: &Factor) -> &SparseOperator {
        if f.is_canonical() {
            self.parts.block(f.block)
        } else {
            &self.extra[f]
        }
    }

    /// Dense matrix of one variant of `G_j`.
    pub fn variant_matrix(&self, j: u8, variant: usize) -> DMatrix<Complex64> {
        let v = &self.catalog.set(j).variants[variant];
        let r0 = self.r0_power(1.0);
        let mut m = self.block(&v.factors[0]).to_dense();
        for f in &v.factors[1..] {
            scale_cols(&mut m, &r0);
            m = self.block(f).left_mul_dense(&m);
        }
        m *= Complex64::new(v.sign as f64, 0.0);
        if v.plus_e2 {
            for i in 0..m.nrows() {
                m[(i, i)] += Complex64::new(self.e2, 0.0);
            }
        }
        m
    }

    /// Sum over the variants of `G_j`.
    pub fn set_matrix(&self, j: u8) -> DMatrix<Complex64> {
        let n = self.catalog.set(j).variants.len();
        let mut m = self.variant_matrix(j, 0);
        for v in 1..n {
            m += self.variant_matrix(j, v);
        }
        m
    }

    /// `H - E2 - z`, dense.
    pub fn shifted_hamiltonian(&self) -> DMatrix<Complex64> {
        let mut h = self.parts.full.to_dense();
        for i in 0..h.nrows() {
            h[(i, i)] -= Complex64::new(self.e2, 0.0) + self.z;
        }
        h
    }

    /// Direct dense solve of `(H - E2 - z)^-1`.
    pub fn direct_resolvent(&self) -> Result<DMatrix<Complex64>> {
        linalg::inverse(&self.shifted_hamiltonian())
    }
}

fn diag_dense(d: &[Complex64]) -> DMatrix<Complex64> {
    DMatrix::from_fn(d.len(), d.len(), |r, c| if r == c { d[r] } else { Complex64::new(0.0, 0.0) })
}

fn scale_cols(m: &mut DMatrix<Complex64>, d: &[Complex64]) {
    for (c, s) in d.iter().enumerate() {
        let mut col = m.column_mut(c);
        col *= *s;
    }
}

fn scale_rows(d: &[Complex64], m: &mut DMatrix<Complex64>) {
    for (r, s) in d.iter().enumerate() {
        let mut row = m.row_mut(r);
        row *= *s;
    }
}

/// A term evaluated by the split form, with the norms of its pieces.
#[derive(Debug, Clone)]
pub struct TermMatrix {
    pub matrix: DMatrix<Complex64>,
    /// `||R0^nu T R0^mu||` per factor.
    pub factor_norms: Vec<f64>,
    /// `||R0^(1 - mu_l - nu_(l+1))||` for the glue between factors, including both ends.
    pub glue_norms: Vec<f64>,
}

/// `R0^(1-nu_1) [R0^nu_1 T_1 R0^mu_1] R0^(1-mu_1-nu_2) ... [R0^nu_l T_l R0^mu_l] R0^(1-mu_l)`,
/// which equals `R0 T_1 R0 ... T_l R0`.
pub fn term_matrix(ctx: &SeriesContext<'_>, seq: &AdmissibleSequence) -> Result<TermMatrix> {
    split_product(ctx, seq, true)
}

fn split_product(ctx: &SeriesContext<'_>, seq: &AdmissibleSequence, with_norms: bool) -> Result<TermMatrix> {
    let cat = ctx.catalog();
    if !seq.is_admissible(cat) {
        return invalid(format!("sequence {seq} is not admissible"));
    }
    if seq.terms.is_empty() {
        let r0 = ctx.r0_power(1.0);
        let n = r0.iter().map(|v| v.norm()).fold(0.0, f64::max);
        return Ok(TermMatrix { matrix: diag_dense(&r0), factor_norms: Vec::new(), glue_norms: vec![n] });
    }
    let power = |a: f64| ctx.r0_power(a);
    let pnorm = |a: f64| power(a).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut factor_norms = Vec::with_capacity(seq.terms.len());
    let mut glue_norms = Vec::with_capacity(seq.terms.len() + 1);
    let (nu1, _) = cat.exponents(seq.terms[0].j);
    let mut acc = diag_dense(&power(1.0 - nu1));
    glue_norms.push(pnorm(1.0 - nu1));
    for (l, t) in seq.terms.iter().enumerate() {
        let (nu, mu) = cat.exponents(t.j);
        let mut f = ctx.variant_matrix(t.j, t.variant);
        scale_rows(&power(nu), &mut f);
        scale_cols(&mut f, &power(mu));
        if with_norms {
            factor_norms.push(linalg::op_norm_value(&f));
        }
        acc = &acc * &f;
        let next_nu = seq.terms.get(l + 1).map(|n| cat.exponents(n.j).0).unwrap_or(0.0);
        let glue = 1.0 - mu - next_nu;
        scale_cols(&mut acc, &power(glue));
        glue_norms.push(pnorm(glue));
    }
    Ok(TermMatrix { matrix: acc, factor_norms, glue_norms })
}

/// A partial sum with per-order term norms.
#[derive(Debug, Clone)]
pub struct SeriesResult {
    pub sum: DMatrix<Complex64>,
    /// Frobenius norm of each order's contribution, order 0 first.
    pub term_norms: Vec<f64>,
    pub diverging: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub orders: usize,
    pub last_term_norm: f64,
    pub diverging: bool,
}

impl SeriesResult {
    fn new(sum: DMatrix<Complex64>, term_norms: Vec<f64>) -> Self {
        let diverging = diverges(&term_norms);
        SeriesResult { sum, term_norms, diverging }
    }

    pub fn summary(&self) -> SeriesSummary {
        SeriesSummary { orders: self.term_norms.len(), last_term_norm: self.term_norms.last().cloned().unwrap_or(0.0), diverging: self.diverging }
    }
}

/// True when some window of [`DIVERGENCE_WINDOW`] consecutive nonzero norms never decreases.
pub fn diverges(norms: &[f64]) -> bool {
    let mut run = 0;
    for w in norms.windows(2) {
        if w[0] > 0.0 && w[1] >= w[0] {
            run += 1;
            if run + 1 >= DIVERGENCE_WINDOW {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// `-(H_I - E2)` as a sparse operator.
fn minus_perturbation(ctx: &SeriesContext<'_>) -> Result<SparseOperator> {
    let hi = ctx.parts().interaction()?;
    let e2 = SparseOperator::diagonal_real(&vec![ctx.e2(); ctx.dim()]);
    e2.sub(&hi)
}

/// `R0 sum_{k<=n} (-(H_I - E2) R0)^k`.
pub fn raw_series_partial(ctx: &SeriesContext<'_>, n: usize) -> Result<SeriesResult> {
    let a = minus_perturbation(ctx)?;
    let r0 = ctx.r0_power(1.0);
    let mut term = diag_dense(&r0);
    let mut sum = term.clone();
    let mut norms = vec![term.norm()];
    for _ in 0..n {
        term = a.left_mul_dense(&term);
        scale_cols(&mut term, &r0);
        sum += &term;
        norms.push(term.norm());
    }
    Ok(SeriesResult::new(sum, norms))
}

/// Raw series regrouped by kernel weight: letters of `H_I` weigh 1, `E2` weighs 2.
pub fn raw_series_by_weight(ctx: &SeriesContext<'_>, k_max: usize) -> Result<SeriesResult> {
    let hi = ctx.parts().interaction()?.scale_real(-1.0);
    let r0 = ctx.r0_power(1.0);
    let mut levels: Vec<DMatrix<Complex64>> = vec![diag_dense(&r0)];
    for k in 1..=k_max {
        let mut t = hi.left_mul_dense(&levels[k - 1]);
        if k >= 2 {
            t += &levels[k - 2] * Complex64::new(ctx.e2(), 0.0);
        }
        scale_cols(&mut t, &r0);
        levels.push(t);
    }
    let norms = levels.iter().map(|m| m.norm()).collect();
    let mut sum = levels[0].clone();
    for m in &levels[1..] {
        sum += m;
    }
    Ok(SeriesResult::new(sum, norms))
}

/// Reordered series through weight `k_max`, by a transfer recursion over the
/// last set used: `P[w][j] = (R0 [w = n_j] + sum_{i -> j allowed} P[w - n_j][i]) T_j R0`.
pub fn reordered_series_partial(ctx: &SeriesContext<'_>, k_max: usize) -> Result<SeriesResult> {
    if k_max > DEFAULT_DEPTH_LIMIT {
        return invalid(format!("weight {k_max} exceeds depth limit {DEFAULT_DEPTH_LIMIT}"));
    }
    reordered_series_unbounded(ctx, k_max)
}

/// As [`reordered_series_partial`] without the depth limit.
pub fn reordered_series_unbounded(ctx: &SeriesContext<'_>, k_max: usize) -> Result<SeriesResult> {
    let cat = ctx.catalog();
    let r0 = ctx.r0_power(1.0);
    let base = diag_dense(&r0);
    let tr: Vec<DMatrix<Complex64>> = par::map_range(7, |i| {
        let mut t = ctx.set_matrix(i as u8 + 1);
        scale_cols(&mut t, &r0);
        t
    });
    let dim = ctx.dim();
    let zero = DMatrix::<Complex64>::zeros(dim, dim);
    let mut ends: Vec<Vec<Option<DMatrix<Complex64>>>> = vec![vec![None; 7]; k_max + 1];
    let mut norms = vec![base.norm()];
    let mut sum = base.clone();
    for w in 1..=k_max {
        let row: Vec<Option<DMatrix<Complex64>>> = par::map_range(7, |i| {
            let s = &cat.sets()[i];
            if s.n_op > w {
                return None;
            }
            let rest = w - s.n_op;
            let mut prefix = if rest == 0 { base.clone() } else { zero.clone() };
            let mut any = rest == 0;
            if rest > 0 {
                for p in cat.sets() {
                    if cat.allowed(p.j, s.j) {
                        if let Some(m) = &ends[rest][p.j as usize - 1] {
                            prefix += m;
                            any = true;
                        }
                    }
                }
            }
            any.then(|| prefix * &tr[i])
        });
        let mut level = zero.clone();
        for m in row.iter().flatten() {
            level += m;
        }
        norms.push(level.norm());
        sum += &level;
        ends[w] = row;
    }
    Ok(SeriesResult::new(sum, norms))
}

/// Reordered series by explicit enumeration and [`term_matrix`] per sequence.
/// Sequences evaluate in parallel and are summed in enumeration order.
pub fn reordered_series_enumerated(ctx: &SeriesContext<'_>, k_max: usize) -> Result<SeriesResult> {
    let dim = ctx.dim();
    let mut sum = DMatrix::<Complex64>::zeros(dim, dim);
    let mut norms = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let seqs = enumerate_with_limit(ctx.catalog(), k, DEFAULT_DEPTH_LIMIT)?;
        let mats = par::map(&seqs, |s| split_product(ctx, s, false).map(|t| t.matrix));
        let mut level = DMatrix::<Complex64>::zeros(dim, dim);
        for m in mats {
            level += m?;
        }
        norms.push(level.norm());
        sum += &level;
    }
    Ok(SeriesResult::new(sum, norms))
}

/// One row of the geometric domination check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationRow {
    pub k: usize,
    pub term_norm: f64,
    pub bound: f64,
}

/// `M_z`: the largest of the three bound constants over the kernels `G1`, `G2`
/// at the exponents the catalog uses (3/4, 1/2, 1/4).
pub fn bound_constant_max(ctx: &SeriesContext<'_>, km: &KernelMatrix, params: &DispersionParams) -> Result<f64> {
    let z = Complex64::new(ctx.z().re, 0.0);
    let ks = [&km.g1, &km.g2];
    let mut m: f64 = 0.0;
    for f in ks {
        m = m.max(k1_constant(z, 0.75, f, &km.layout, params)?);
        for g in ks {
            m = m.max(a_factor(z, 0.5, f, &km.layout, params)? * a_factor(z, 0.5, g, &km.layout, params)?);
            for h in ks {
                m = m.max(k3_constant(z, 0.25, [f, g, h], &km.layout, params)?);
            }
        }
    }
    Ok(m)
}

/// Operator norm of each weight level against `(12 M_z ||R0||^(1/4))^k ||R0||`.
pub fn geometric_domination(ctx: &SeriesContext<'_>, k_max: usize, m_z: f64) -> Result<Vec<DominationRow>> {
    let cat = ctx.catalog();
    let r0n = ctx.r0_norm();
    let ratio = 12.0 * m_z * r0n.powf(0.25);
    let mut rows = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let seqs = enumerate_with_limit(cat, k, DEFAULT_DEPTH_LIMIT)?;
        let mats = par::map(&seqs, |s| split_product(ctx, s, false).map(|t| t.matrix));
        let mut level = DMatrix::<Complex64>::zeros(ctx.dim(), ctx.dim());
        for m in mats {
            level += m?;
        }
        rows.push(DominationRow { k, term_norm: linalg::op_norm_value(&level), bound: ratio.powi(k as i32) * r0n });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::super::catalog::{catalog, catalog_with, AdjacencyRule, CatalogReading};
    use super::super::enumerate::{enumerate, Term};
    use super::*;
    use crate::counterterm::e2_discrete;
    use crate::fock::enumerate_basis;
    use crate::hamiltonian::{build_full, BlockTag};
    use crate::modegrid::{build_grid, kernel_matrix_on, Coefficient, CutoffSpec, KernelSpec, ModeLayout};

    struct Setup {
        km: KernelMatrix,
        parts: HamiltonianParts,
        e2: f64,
    }

    fn setup(nf: usize, nb: usize, cap: usize, lambda: f64) -> Setup {
        let params = DispersionParams::default();
        let grid = build_grid(1, 4.0, 8).unwrap();
        let layout = ModeLayout::central(grid, nf, nb).unwrap();
        let kspec = KernelSpec::default().with_coupling(lambda);
        let km = kernel_matrix_on(&kspec, &CutoffSpec::new(4.0, 1).unwrap(), &params, &layout);
        let basis = enumerate_basis(nb, nf, cap).unwrap();
        let parts = build_full(&km, &params, &basis, 1.0).unwrap();
        let e2 = e2_discrete(&km, &params);
        Setup { km, parts, e2 }
    }

    fn gap(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        linalg::op_norm_value(&(a - b))
    }

    #[test]
    fn empty_sequence_is_r0() {
        let s = setup(1, 1, 2, 1.0);
        let ctx = SeriesContext::new(&s.parts, catalog(), s.e2, Complex64::new(-5.0, 0.0)).unwrap();
        let t = term_matrix(&ctx, &AdmissibleSequence::empty()).unwrap();
        assert_eq!(t.matrix, ctx.r0_dense());
        assert_eq!(raw_series_partial(&ctx, 0).unwrap().sum, ctx.r0_dense());
        assert_eq!(reordered_series_partial(&ctx, 0).unwrap().sum, ctx.r0_dense());
    }

    #[test]
    fn g5_term_matches_dense_algebra() {
        let s = setup(1, 1, 2, 1.0);
        let z = Complex64::new(-3.0, 0.5);
        let ctx = SeriesContext::new(&s.parts, catalog(), s.e2, z).unwrap();
        let seq = AdmissibleSequence { terms: vec![Term { j: 5, variant: 0 }], weight: 2 };
        let got = term_matrix(&ctx, &seq).unwrap().matrix;
        let r0 = ctx.r0_dense();
        let hab = s.parts.hab.to_dense();
        let hastbst = s.parts.hastbst.to_dense();
        let inner = &hab * &r0 * &hastbst + DMatrix::identity(r0.nrows(), r0.nrows()) * Complex64::new(s.e2, 0.0);
        let oracle = &r0 * inner * &r0;
        assert!(gap(&got, &oracle) < 1e-14);
    }

    #[test]
    fn split_form_equals_plain_product() {
        let s = setup(2, 2, 2, 1.0);
        let ctx = SeriesContext::new(&s.parts, catalog(), s.e2, Complex64::new(-4.0, 1.0)).unwrap();
        let r0 = ctx.r0_dense();
        for seq in enumerate(&catalog(), 4).unwrap().iter().step_by(37) {
            let t = term_matrix(&ctx, seq).unwrap();
            let mut plain = r0.clone();
            for term in &seq.terms {
                plain = plain * ctx.variant_matrix(term.j, term.variant) * &r0;
            }
            assert!(gap(&t.matrix, &plain) < 1e-12 * plain.norm().max(1e-300), "{seq}");
            assert_eq!(t.factor_norms.len(), seq.terms.len());
        }
    }

    #[test]
    fn zero_coupling_gives_r0() {
        let s = setup(2, 2, 2, 0.0);
        assert_eq!(s.e2, 0.0);
        let ctx = SeriesContext::new(&s.parts, catalog(), s.e2, Complex64::new(-2.0, 0.0)).unwrap();
        for seq in enumerate(&catalog(), 3).unwrap() {
            assert_eq!(term_matrix(&ctx, &seq).unwrap().matrix.norm(), 0.0);
        }
        let raw = raw_series_partial(&ctx, 6).unwrap();
        assert_eq!(raw.sum, ctx.r0_dense());
        assert!(!raw.diverging);
    }

    #[test]
    fn reordered_equals_raw_by_weight_at_every_depth() {
        let s = setup(2, 2, 2, 1.0);
        let ctx = SeriesContext::new(&s.parts, catalog(), s.e2, Complex64::new(-1.5, 0.3)).unwrap();
        for k in 0..=6 {
            let a = reordered_series_partial(&ctx, k).unwrap();
            let b = raw_series_by_weight(&ctx, k).unwrap();
            assert!(gap(&a.sum, &b.sum) < 1e-13, "k = {k}");
        }
        let e = reordered_series_enumerated(&ctx, 5).unwrap();
        let d = reordered_series_partial(&ctx, 5).unwrap();
        assert!(gap(&e.sum, &d.sum) < 1e-13);
    }

    #[test]
    fn series_converge_to_direct_solve() {
        let s = setup(2, 2, 2, 1.0);
        let c = crate::hamiltonian::c_lambda(&s.km, &DispersionParams::default());
        let z = Complex64::new(-25.0 * c * c - 1.0, 0.0);
        let ctx = SeriesContext::new(&s.parts, catalog(), s.e2, z).unwrap();
        let direct = ctx.direct_resolvent().unwrap();
        let raw = raw_series_partial(&ctx, DEFAULT_RAW_ORDER).unwrap();
        assert!(!raw.diverging);
        assert!(gap(&raw.sum, &direct) < 1e-8);
        let re = reordered_series_partial(&ctx, DEFAULT_DEPTH_LIMIT).unwrap();
        assert!(gap(&re.sum, &raw.sum) < 1e-8);
    }

    #[test]
    fn literal_reading_needs_kernels_and_breaks_agreement() {
        use rand::{Rng, SeedableRng};
        // generic kernels on modes with distinct energies; three fermion modes for
        // the three fermion creations in G6
        let params = DispersionParams::default();
        let grid = build_grid(1, 4.0, 8).unwrap();
        let layout = ModeLayout::with_cells(grid, vec![4, 5, 6], vec![4, 6]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut draw = || DMatrix::from_fn(3, 2, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let km = KernelMatrix { layout, g1: draw(), g2: draw() };
        let basis = enumerate_basis(2, 3, 2).unwrap();
        let parts = build_full(&km, &params, &basis, 1.0).unwrap();
        let e2 = e2_discrete(&km, &params);
        let lit = catalog_with(CatalogReading::Literal, AdjacencyRule::Standard);
        let z = Complex64::new(-1.5, 0.0);
        assert!(SeriesContext::new(&parts, lit.clone(), e2, z).is_err());
        let ctx = SeriesContext::with_kernels(&parts, lit, e2, z, &km, &basis).unwrap();
        let std = SeriesContext::new(&parts, catalog(), e2, z).unwrap();
        let a = reordered_series_partial(&ctx, 3).unwrap();
        let b = reordered_series_partial(&std, 3).unwrap();
        let raw = raw_series_by_weight(&std, 3).unwrap();
        assert!(gap(&b.sum, &raw.sum) < 1e-13);
        assert!(gap(&a.sum, &b.sum) > 1e-6, "{}", gap(&a.sum, &b.sum));
    }

    #[test]
    fn weight_levels_are_geometrically_dominated() {
        let s = setup(2, 2, 2, 1.0);
        let params = DispersionParams::default();
        for re in [-2.0, -20.0] {
            let ctx = SeriesContext::new(&s.parts, catalog(), s.e2, Complex64::new(re, 0.0)).unwrap();
            let m_z = bound_constant_max(&ctx, &s.km, &params).unwrap();
            assert!(m_z > 0.0);
            for row in geometric_domination(&ctx, 5, m_z).unwrap() {
                assert!(row.term_norm <= row.bound, "{row:?}");
            }
        }
    }

    #[test]
    fn divergence_flag() {
        assert!(diverges(&[1.0, 1.0, 2.0, 3.0, 3.0]));
        assert!(!diverges(&[1.0, 0.5, 0.6, 0.7, 0.8]));
        assert!(!diverges(&[0.0; 8]));
        let s = setup(2, 2, 3, 6.0);
        let ctx = SeriesContext::new(&s.parts, catalog(), s.e2, Complex64::new(-0.1, 0.0)).unwrap();
        assert!(raw_series_partial(&ctx, 12).unwrap().diverging);
    }

    #[test]
    fn g5_cancellation_grows_with_cutoff() {
        // G1 = 0 so only ab / a*b* couple; compare R0 (X + E2) R0 with R0 X R0, X = ab R0 a*b*
        let params = DispersionParams::default();
        let z = Complex64::new(-1.0, 0.0);
        let mut ratios = Vec::new();
        for lambda in [1.0, 3.0] {
            let layout = ModeLayout::full(build_grid(1, 3.0, 6).unwrap());
            let mut kspec = KernelSpec::default();
            kspec.h1 = Coefficient::zero();
            let km = kernel_matrix_on(&kspec, &CutoffSpec::new(lambda, 1).unwrap(), &params, &layout);
            let basis = enumerate_basis(6, 6, 1).unwrap();
            let parts = build_full(&km, &params, &basis, 1.0).unwrap();
            let e2 = e2_discrete(&km, &params);
            let ctx = SeriesContext::new(&parts, catalog(), e2, z).unwrap();
            let seq = AdmissibleSequence { terms: vec![Term { j: 5, variant: 0 }], weight: 2 };
            let with = linalg::op_norm_value(&term_matrix(&ctx, &seq).unwrap().matrix);
            let r0 = ctx.r0_dense();
            let bare = linalg::op_norm_value(&(&r0 * parts.block(BlockTag::Ab).to_dense() * &r0 * parts.block(BlockTag::AstBst).to_dense() * &r0));
            ratios.push(with / bare);
        }
        assert!(ratios[1] < 1.0 && ratios[1] < ratios[0], "{ratios:?}");
    }
}
