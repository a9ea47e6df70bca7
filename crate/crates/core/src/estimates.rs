//! Measured-ratio audits of the operator bounds used by the series estimates.
//!
//! Each inequality is evaluated on a truncated Fock space as
//! `measured / right-hand side`. Bounds with an explicit constant pass when the
//! ratio stays at or below 1. Bounds with a hidden constant are checked for a
//! finite sup-ratio that stays put under grid refinement.
//!
//! Single-particle functions are given in mode units: `b(F) = sum conj(F_i) b_i`
//! and `||F||` is the plain l2 norm. Two-variable kernels used inside
//! interaction blocks carry the cell weight as in [`crate::hamiltonian`].

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counterterm::{e_pair, k1_boson_form, k1_constant, k2_constant, k3_constant};
use crate::error::{invalid, Result};
use crate::fock::{boson_op, enumerate_basis, fermion_op, FockBasis, Ladder, SparseOperator};
use crate::hamiltonian::{build_block_with, free_energies, resolvent_power_diag, BlockTag};
use crate::linalg;
use crate::modegrid::{build_grid, kernel_matrix_on, Coefficient, CutoffSpec, DispersionParams, KernelMatrix, KernelSpec, ModeLayout};
use crate::par;

/// Absolute slack on `ratio <= bound`.
pub const RATIO_SLACK: f64 = 1e-9;
/// Default ceiling for hidden-constant ratios.
pub const HIDDEN_CEILING: f64 = 32.0;
/// Allowed growth of a hidden-constant sup-ratio from the coarse to the fine level.
pub const REFINEMENT_FACTOR: f64 = 1.25;
pub const DEFAULT_BATCH: usize = 100;
pub const DEFAULT_SEED: u64 = 1000;

/// The audited inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Audit {
    /// `||(H0-z+C)^a b(F) R0(z-C')^a|| <= 2||F||` and its adjoint form.
    FermionBound,
    /// Weighted mode sums of `a(q) b(F)`, `b*(F) a(q)`, `b(p) b(F)`, `b*(F) b(p)` against `4||F||^2`.
    AsharpBound,
    /// The same sums for bare `a(q)` and `b(p)` against 1.
    FreeAsharp,
    /// Per-boson-mode norm of `R0^d b(F(.,q)) R0^g` against a two-term sum.
    RegTermAlone,
    /// Ratio of two weighted kernel integrals with balanced exponents.
    PowerShift,
    /// `||H^ab(F) R0^b|| <= K1` and the three sibling forms, boson-weighted K1.
    FirstOrder,
    /// The same norms against the fermion-weighted K1.
    FirstOrderFermionWeight,
    /// `R0^g (H^ab(F) R0 H^a*b*(G) + E(F,G)) R0^d` against K2.
    PairCounterterm,
    /// `H^ab(F) R0 H^a*b(G) R0^b` and its mirror against K2.
    PairMixed,
    /// `R0^d H^ab*(F) R0 H^a*b(G) R0^g` against K2.
    PairExchange,
    /// `H^ab R0 H^ab* R0 H^a*b* R0^g` and its mirror against K3.
    TripleAb,
    /// `H^ab* R0 H^ab* R0 H^a*b* R0^g` and its mirror against K3.
    TripleAbst,
}

impl Audit {
    pub const ALL: [Audit; 12] = [
        Audit::FermionBound,
        Audit::AsharpBound,
        Audit::FreeAsharp,
        Audit::RegTermAlone,
        Audit::PowerShift,
        Audit::FirstOrder,
        Audit::FirstOrderFermionWeight,
        Audit::PairCounterterm,
        Audit::PairMixed,
        Audit::PairExchange,
        Audit::TripleAb,
        Audit::TripleAbst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Audit::FermionBound => "fermion-bound",
            Audit::AsharpBound => "asharp-bound",
            Audit::FreeAsharp => "free-asharp",
            Audit::RegTermAlone => "reg-term-alone",
            Audit::PowerShift => "power-shift",
            Audit::FirstOrder => "first-order",
            Audit::FirstOrderFermionWeight => "first-order-fermion-weight",
            Audit::PairCounterterm => "pair-counterterm",
            Audit::PairMixed => "pair-mixed",
            Audit::PairExchange => "pair-exchange",
            Audit::TripleAb => "triple-ab",
            Audit::TripleAbst => "triple-abst",
        }
    }

    /// True for bounds whose constant is stated explicitly.
    pub fn is_explicit(self) -> bool {
        matches!(self, Audit::FermionBound | Audit::AsharpBound | Audit::FreeAsharp | Audit::RegTermAlone | Audit::FirstOrder)
    }

    /// Constant inside the right-hand side (ratios already divide by it).
    pub fn rhs_constant(self) -> Option<f64> {
        match self {
            Audit::FermionBound => Some(2.0),
            Audit::AsharpBound => Some(4.0),
            Audit::FreeAsharp | Audit::RegTermAlone | Audit::FirstOrder => Some(1.0),
            _ => None,
        }
    }

    /// What the ratio is tested against.
    pub fn bound_constant(self) -> f64 {
        if self.is_explicit() {
            1.0
        } else {
            HIDDEN_CEILING
        }
    }
}

impl fmt::Display for Audit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub audit: Audit,
    pub samples: usize,
    pub max_ratio: f64,
    pub bound_constant: f64,
    pub pass: bool,
    /// Description of the sample with the largest ratio.
    pub worst: String,
}

impl AuditReport {
    pub fn new(audit: Audit) -> Self {
        Self::with_bound(audit, audit.bound_constant())
    }

    pub fn with_bound(audit: Audit, bound_constant: f64) -> Self {
        AuditReport { audit, samples: 0, max_ratio: 0.0, bound_constant, pass: true, worst: String::new() }
    }

    /// Add one measured ratio. NaN counts as a failure.
    pub fn record(&mut self, ratio: f64, describe: impl FnOnce() -> String) {
        self.samples += 1;
        if !self.max_ratio.is_nan() && (ratio.is_nan() || ratio > self.max_ratio || self.worst.is_empty()) {
            self.max_ratio = if ratio.is_nan() { ratio } else { ratio.max(self.max_ratio) };
            self.worst = describe();
        }
        self.refresh();
    }

    /// Combine with a report of the same audit, keeping the worse sample.
    pub fn merge(&mut self, other: &AuditReport) {
        debug_assert_eq!(self.audit, other.audit);
        self.samples += other.samples;
        if other.max_ratio.is_nan() || (!self.max_ratio.is_nan() && other.max_ratio > self.max_ratio) {
            self.max_ratio = other.max_ratio;
            self.worst = other.worst.clone();
        }
        self.refresh();
    }

    fn refresh(&mut self) {
        self.pass = self.max_ratio.is_finite() && self.max_ratio <= self.bound_constant + RATIO_SLACK;
    }
}

/// `num / den`, with `0/0 = 0`.
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 && den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// A truncated Fock space with its free energies and dense ladder operators.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub layout: ModeLayout,
    pub params: DispersionParams,
    pub basis: FockBasis,
    pub energies: Vec<f64>,
    /// Boson mode energies.
    pub wa: Vec<f64>,
    /// Fermion mode energies.
    pub wb: Vec<f64>,
    a: Vec<SparseOperator>,
    b: Vec<SparseOperator>,
    dense: OnceLock<(Vec<DMatrix<Complex64>>, Vec<DMatrix<Complex64>>)>,
}

impl Truncation {
    pub fn new(layout: ModeLayout, params: DispersionParams, cap: usize) -> Result<Self> {
        let basis = enumerate_basis(layout.n_boson(), layout.n_fermion(), cap)?;
        let energies = free_energies(&layout, &params, &basis)?;
        let a = (0..basis.m_a()).map(|j| boson_op(j, Ladder::Annihilate, &basis)).collect::<Result<_>>()?;
        let b = (0..basis.m_f()).map(|i| fermion_op(i, Ladder::Annihilate, &basis)).collect::<Result<_>>()?;
        let wa = layout.boson_energies(&params);
        let wb = layout.fermion_energies(&params);
        Ok(Truncation { layout, params, basis, energies, wa, wb, a, b, dense: OnceLock::new() })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn dense(&self) -> &(Vec<DMatrix<Complex64>>, Vec<DMatrix<Complex64>>) {
        self.dense.get_or_init(|| (self.a.iter().map(|o| o.to_dense()).collect(), self.b.iter().map(|o| o.to_dense()).collect()))
    }

    /// Dense `a_j`.
    pub fn a(&self, j: usize) -> &DMatrix<Complex64> {
        &self.dense().0[j]
    }

    /// Dense `b_i`.
    pub fn b(&self, i: usize) -> &DMatrix<Complex64> {
        &self.dense().1[i]
    }

    /// `b(F) = sum conj(F_i) b_i`.
    pub fn b_of(&self, f: &DVector<Complex64>) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (i, v) in f.iter().enumerate() {
            if *v != Complex64::new(0.0, 0.0) {
                m += self.b(i) * v.conj();
            }
        }
        m
    }

    /// Dense interaction block with kernel `f` (fermion rows, boson columns).
    pub fn block(&self, tag: BlockTag, f: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        Ok(build_block_with(tag, f, self.layout.w(), &self.basis)?.to_dense())
    }

    /// Sparse interaction block with kernel `f`.
    pub fn block_sparse(&self, tag: BlockTag, f: &DMatrix<Complex64>) -> Result<SparseOperator> {
        build_block_with(tag, f, self.layout.w(), &self.basis)
    }

    /// Diagonal of `(H0 - z + shift)^(-alpha)`. Negative `alpha` gives positive powers.
    pub fn r0(&self, z: Complex64, alpha: f64, shift: f64) -> Result<Vec<Complex64>> {
        resolvent_power_diag(&self.energies, z, alpha, shift)
    }
}

fn lmul(d: &[Complex64], m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut out = m.clone();
    for (r, s) in d.iter().enumerate() {
        for c in 0..out.ncols() {
            out[(r, c)] *= s;
        }
    }
    out
}

fn rmul(m: &DMatrix<Complex64>, d: &[Complex64]) -> DMatrix<Complex64> {
    let mut out = m.clone();
    for (c, s) in d.iter().enumerate() {
        for r in 0..out.nrows() {
            out[(r, c)] *= s;
        }
    }
    out
}

fn check_half_plane(z: Complex64) -> Result<f64> {
    if !(z.re < -1.0) {
        return invalid(format!("Re z = {} must be below -1", z.re));
    }
    Ok(-z.re)
}

fn check_shifts(c: f64, c_prime: f64) -> Result<()> {
    if !(c >= 0.0 && c_prime >= c) {
        return invalid(format!("need C' >= C >= 0, got C = {c}, C' = {c_prime}"));
    }
    Ok(())
}

fn unit(x: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return invalid(format!("{name} = {x} outside [0, 1]"));
    }
    Ok(())
}

/// `||(H0-z+C)^a b(F) R0(z-C')^a|| / (2||F||)` and the adjoint form
/// `||R0(z-C')^a b*(F) (H0-z+C)^a|| / (2||F||)`.
pub fn fermion_bound_ratios(t: &Truncation, f: &DVector<Complex64>, z: Complex64, c: f64, c_prime: f64, alpha: f64) -> Result<[f64; 2]> {
    check_half_plane(z)?;
    check_shifts(c, c_prime)?;
    unit(alpha, "alpha")?;
    let nf = f.norm();
    if nf == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let left = t.r0(z, -alpha, c)?;
    let right = t.r0(z, alpha, c_prime)?;
    let bf = t.b_of(f);
    let fwd = rmul(&lmul(&left, &bf), &right);
    let adj = rmul(&lmul(&right, &bf.adjoint()), &left);
    Ok([linalg::op_norm_value(&fwd) / (2.0 * nf), linalg::op_norm_value(&adj) / (2.0 * nf)])
}

pub fn audit_fermion_bound(t: &Truncation, f: &DVector<Complex64>, z: Complex64, c: f64, c_prime: f64, alpha: f64) -> Result<AuditReport> {
    let r = fermion_bound_ratios(t, f, z, c, c_prime, alpha)?;
    let mut rep = AuditReport::new(Audit::FermionBound);
    for (form, x) in ["forward", "adjoint"].iter().zip(r) {
        rep.record(x, || format!("{form} z={z} C={c} C'={c_prime} alpha={alpha}"));
    }
    Ok(rep)
}

/// Operator placed between the mode resolvent and `R0(z - C')^g` in the weighted mode sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsharpForm {
    /// `a(q) b(F)`
    ABf,
    /// `b*(F) a(q)`
    BfstA,
    /// `b(p) b(F)`
    BBf,
    /// `b*(F) b(p)`
    BfstB,
    /// `a(q)`
    A,
    /// `b(p)`
    B,
}

impl AsharpForm {
    pub const WITH_F: [AsharpForm; 4] = [AsharpForm::ABf, AsharpForm::BfstA, AsharpForm::BBf, AsharpForm::BfstB];
    pub const FREE: [AsharpForm; 2] = [AsharpForm::A, AsharpForm::B];

    fn boson_index(self) -> bool {
        matches!(self, AsharpForm::ABf | AsharpForm::BfstA | AsharpForm::A)
    }
}

/// Pairs `(c_m, M_m)` with `c_m = w_m [w_m + |Re z|]^(2(d+g)-1)` and
/// `M_m = R0(z - w_m - C)^d X_m R0(z - C')^g`, one per mode of the summed species.
/// The fermion-indexed forms use the fermion energy inside the bracket.
pub fn asharp_terms(
    t: &Truncation,
    form: AsharpForm,
    f: &DVector<Complex64>,
    z: Complex64,
    delta: f64,
    gamma: f64,
    c: f64,
    c_prime: f64,
) -> Result<Vec<(f64, DMatrix<Complex64>)>> {
    let x = check_half_plane(z)?;
    check_shifts(c, c_prime)?;
    if !(delta >= 0.0 && gamma >= 0.0 && (0.5..=1.0).contains(&(delta + gamma))) {
        return invalid(format!("need delta, gamma >= 0 and 1/2 <= delta + gamma <= 1, got {delta}, {gamma}"));
    }
    let right = t.r0(z, gamma, c_prime)?;
    let bf = t.b_of(f);
    let energies = if form.boson_index() { &t.wa } else { &t.wb };
    let s = delta + gamma;
    energies
        .iter()
        .enumerate()
        .map(|(m, &w)| {
            let core = match form {
                AsharpForm::ABf => t.a(m) * &bf,
                AsharpForm::BfstA => bf.adjoint() * t.a(m),
                AsharpForm::BBf => t.b(m) * &bf,
                AsharpForm::BfstB => bf.adjoint() * t.b(m),
                AsharpForm::A => t.a(m).clone(),
                AsharpForm::B => t.b(m).clone(),
            };
            let left = t.r0(z, delta, w + c)?;
            let weight = w * (w + x).powf(2.0 * s - 1.0);
            Ok((weight, rmul(&lmul(&left, &core), &right)))
        })
        .collect()
}

/// `sum_m c_m ||M_m psi||^2` for one vector.
pub fn asharp_lhs(terms: &[(f64, DMatrix<Complex64>)], psi: &DVector<Complex64>) -> f64 {
    terms.iter().map(|(c, m)| c * (m * psi).norm_squared()).sum()
}

/// `sup_psi sum_m c_m ||M_m psi||^2 / ||psi||^2`, the top eigenvalue of `sum c_m M_m^* M_m`.
pub fn asharp_sup(terms: &[(f64, DMatrix<Complex64>)], dim: usize) -> f64 {
    let mut q = DMatrix::<Complex64>::zeros(dim, dim);
    for (c, m) in terms {
        q += m.adjoint() * m * Complex64::new(*c, 0.0);
    }
    if dim == 0 {
        return 0.0;
    }
    linalg::hermitian_extremes(&q).1.max(0.0)
}

/// Exact sup-ratio against `4||F||^2 ||psi||^2` for each form with `F`.
pub fn audit_asharp(t: &Truncation, f: &DVector<Complex64>, z: Complex64, delta: f64, gamma: f64, c: f64, c_prime: f64) -> Result<AuditReport> {
    let mut rep = AuditReport::new(Audit::AsharpBound);
    let nf2 = f.norm_squared();
    for form in AsharpForm::WITH_F {
        let terms = asharp_terms(t, form, f, z, delta, gamma, c, c_prime)?;
        let r = ratio(asharp_sup(&terms, t.dim()), 4.0 * nf2);
        rep.record(r, || format!("{form:?} z={z} delta={delta} gamma={gamma} C={c} C'={c_prime}"));
    }
    Ok(rep)
}

/// Exact sup-ratio against `||psi||^2` for bare `a(q)` and `b(p)`.
pub fn audit_free_asharp(t: &Truncation, z: Complex64, delta: f64, gamma: f64, c: f64, c_prime: f64) -> Result<AuditReport> {
    let mut rep = AuditReport::new(Audit::FreeAsharp);
    let zero = DVector::zeros(t.basis.m_f());
    for form in AsharpForm::FREE {
        let terms = asharp_terms(t, form, &zero, z, delta, gamma, c, c_prime)?;
        let r = asharp_sup(&terms, t.dim());
        rep.record(r, || format!("{form:?} z={z} delta={delta} gamma={gamma} C={c} C'={c_prime}"));
    }
    Ok(rep)
}

/// For boson mode `j` with `f = F(., q_j)`: measured
/// `||R0(z - w_a(q_j) - C)^d b(f) R0(z - C')^g||` and the two-term right-hand side
/// `(sum |f|^2 / (w_b [w_b + |Re z|]^(2(d+g)-1)))^(1/2)
///  + (sum |f|^2 / ([w_a(q_j) + |Re z|]^(2d) [w_a(q_j) + w_b + |Re z|]^(2g)))^(1/2)`.
pub fn reg_term_alone(t: &Truncation, f: &DMatrix<Complex64>, j: usize, z: Complex64, delta: f64, gamma: f64, c: f64, c_prime: f64) -> Result<(f64, f64)> {
    let x = check_half_plane(z)?;
    check_shifts(c, c_prime)?;
    unit(delta, "delta")?;
    unit(gamma, "gamma")?;
    if delta + gamma < 0.5 {
        return invalid(format!("delta + gamma = {} below 1/2", delta + gamma));
    }
    let col: DVector<Complex64> = f.column(j).into_owned();
    let wq = t.wa[j];
    let left = t.r0(z, delta, wq + c)?;
    let right = t.r0(z, gamma, c_prime)?;
    let lhs = linalg::op_norm_value(&rmul(&lmul(&left, &t.b_of(&col)), &right));
    let s = delta + gamma;
    let (mut t1, mut t2) = (0.0, 0.0);
    for (i, v) in col.iter().enumerate() {
        let wb = t.wb[i];
        let a2 = v.norm_sqr();
        t1 += a2 / (wb * (wb + x).powf(2.0 * s - 1.0));
        t2 += a2 / ((wq + x).powf(2.0 * delta) * (wq + wb + x).powf(2.0 * gamma));
    }
    Ok((lhs, t1.sqrt() + t2.sqrt()))
}

pub fn audit_reg_term_alone(t: &Truncation, f: &DMatrix<Complex64>, z: Complex64, delta: f64, gamma: f64, c: f64, c_prime: f64) -> Result<AuditReport> {
    let mut rep = AuditReport::new(Audit::RegTermAlone);
    for j in 0..t.basis.m_a() {
        let (lhs, rhs) = reg_term_alone(t, f, j, z, delta, gamma, c, c_prime)?;
        rep.record(ratio(lhs, rhs), || format!("mode {j} z={z} delta={delta} gamma={gamma} C={c} C'={c_prime}"));
    }
    Ok(rep)
}

/// Exponents `(alpha, beta, gamma, delta)` of the weight
/// `w_a^alpha [w_a + l]^beta w_b^gamma [w_b + l]^delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Exponents {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Self {
        Exponents { alpha, beta, gamma, delta }
    }

    fn nonnegative(&self) -> bool {
        self.alpha >= 0.0 && self.beta >= 0.0 && self.gamma >= 0.0 && self.delta >= 0.0
    }

    /// `alpha + gamma` and `beta + delta` agree.
    pub fn balanced_with(&self, o: &Exponents) -> bool {
        (self.alpha + self.gamma - o.alpha - o.gamma).abs() < 1e-12 && (self.beta + self.delta - o.beta - o.delta).abs() < 1e-12
    }
}

impl fmt::Display for Exponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.alpha, self.beta, self.gamma, self.delta)
    }
}

/// `sum w^2 |F|^2 / (w_a^alpha [w_a + l]^beta w_b^gamma [w_b + l]^delta)`.
pub fn weighted_integral(f: &DMatrix<Complex64>, layout: &ModeLayout, params: &DispersionParams, lambda: f64, e: &Exponents) -> f64 {
    let wa = layout.boson_energies(params);
    let wb = layout.fermion_energies(params);
    let w2 = layout.w() * layout.w();
    let mut s = 0.0;
    for (i, eb) in wb.iter().enumerate() {
        for (j, ea) in wa.iter().enumerate() {
            let a2 = f[(i, j)].norm_sqr();
            if a2 != 0.0 {
                let den = ea.powf(e.alpha) * (ea + lambda).powf(e.beta) * eb.powf(e.gamma) * (eb + lambda).powf(e.delta);
                s += w2 * a2 / den;
            }
        }
    }
    s
}

/// `0` followed by `n - 1` geometric points from `1e-3` to `lambda_max`.
pub fn lambda_grid(lambda_max: f64, n: usize) -> Vec<f64> {
    let mut v = vec![0.0];
    if n < 2 {
        return v;
    }
    let lo: f64 = 1e-3_f64.min(lambda_max);
    let m = n - 1;
    for i in 0..m {
        let t = if m == 1 { 1.0 } else { i as f64 / (m - 1) as f64 };
        v.push(lo * (lambda_max / lo).powf(t));
    }
    v
}

/// Insert the midpoint of every interval: arithmetic after 0, geometric elsewhere.
pub fn refine_grid(grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grid.len());
    for w in grid.windows(2) {
        out.push(w[0]);
        out.push(if w[0] > 0.0 { (w[0] * w[1]).sqrt() } else { 0.5 * (w[0] + w[1]) });
    }
    if let Some(&l) = grid.last() {
        out.push(l);
    }
    out
}

/// Sup over `lambdas` of `I(lhs; l) / I(rhs; l)`.
pub fn audit_power_shift(f: &DMatrix<Complex64>, layout: &ModeLayout, params: &DispersionParams, lambdas: &[f64], lhs: &Exponents, rhs: &Exponents) -> Result<AuditReport> {
    if !lhs.nonnegative() || !rhs.nonnegative() {
        return invalid("exponents must be non-negative");
    }
    if !lhs.balanced_with(rhs) {
        return invalid(format!("exponents {lhs} and {rhs} are not balanced"));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0)) {
        return invalid("lambda grid must be non-negative");
    }
    let mut rep = AuditReport::new(Audit::PowerShift);
    for &l in lambdas {
        let r = ratio(weighted_integral(f, layout, params, l, lhs), weighted_integral(f, layout, params, l, rhs));
        rep.record(r, || format!("lambda={l} {lhs} vs {rhs}"));
    }
    Ok(rep)
}

/// Kernels fed to the block audits: `f` is F or F1, `g` is G or F2, `h` is F3.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockKernels {
    pub f: DMatrix<Complex64>,
    pub g: DMatrix<Complex64>,
    pub h: DMatrix<Complex64>,
}

impl BlockKernels {
    /// Pairing used with physical kernels: `G2` on `ab`/`a*b*`, `G1` on `ab*`/`a*b`.
    pub fn for_audit(km: &KernelMatrix, audit: Audit) -> Self {
        let (g1, g2) = (km.g1.clone(), km.g2.clone());
        match audit {
            Audit::PairCounterterm => BlockKernels { f: g2.clone(), g: g2.clone(), h: g2 },
            Audit::PairMixed => BlockKernels { f: g2.clone(), g: g1, h: g2 },
            Audit::PairExchange => BlockKernels { f: g1.clone(), g: g1.clone(), h: g1 },
            Audit::TripleAb => BlockKernels { f: g2.clone(), g: g1, h: g2 },
            Audit::TripleAbst => BlockKernels { f: g1.clone(), g: g1, h: g2 },
            _ => BlockKernels { f: g2.clone(), g: g1, h: g2 },
        }
    }
}

/// Measured norms with the matching constant for one block combination.
///
/// `e1`, `e2` are the resolvent exponents: `beta` (first-order and mixed forms, `e2`
/// unused), `(gamma, delta)` for the counterterm and exchange forms, `gamma` for the
/// triple forms.
pub fn block_bound_norms(t: &Truncation, audit: Audit, k: &BlockKernels, z: Complex64, e1: f64, e2: f64) -> Result<(Vec<f64>, f64)> {
    use BlockTag::*;
    check_half_plane(z)?;
    let layout = &t.layout;
    let params = &t.params;
    let r0 = t.r0(z, 1.0, 0.0)?;
    let r0_op = SparseOperator::diagonal(&r0);
    let chain = |blocks: &[(BlockTag, &DMatrix<Complex64>)], pre: f64, post: f64| -> Result<SparseOperator> {
        let mut m: Option<SparseOperator> = None;
        for (tag, f) in blocks {
            let b = t.block_sparse(*tag, f)?;
            m = Some(match m {
                None => b,
                Some(acc) => acc.multiply(&r0_op)?.multiply(&b)?,
            });
        }
        let mut m = m.expect("at least one block");
        if pre != 0.0 {
            m = SparseOperator::diagonal(&t.r0(z, pre, 0.0)?).multiply(&m)?;
        }
        if post != 0.0 {
            m = m.multiply(&SparseOperator::diagonal(&t.r0(z, post, 0.0)?))?;
        }
        Ok(m)
    };
    let n = |m: &SparseOperator| linalg::sparse_op_norm(m).value;
    match audit {
        Audit::FirstOrder | Audit::FirstOrderFermionWeight => {
            let beta = e1;
            let norms = vec![
                n(&chain(&[(Ab, &k.f)], 0.0, beta)?),
                n(&chain(&[(AstBst, &k.f)], beta, 0.0)?),
                n(&chain(&[(ABst, &k.f)], 0.0, beta)?),
                n(&chain(&[(AstB, &k.f)], beta, 0.0)?),
            ];
            let kc = if audit == Audit::FirstOrder { k1_boson_form(z, beta, &k.f, layout, params)? } else { k1_constant(z, beta, &k.f, layout, params)? };
            Ok((norms, kc))
        }
        Audit::PairCounterterm => {
            let (gamma, delta) = (e1, e2);
            unit(gamma, "gamma")?;
            unit(delta, "delta")?;
            let m = pair_counterterm_matrix(t, &k.f, &k.g, z, gamma, delta, true)?;
            Ok((vec![n(&m)], k2_constant(z, gamma + delta, &k.f, &k.g, layout, params)?))
        }
        Audit::PairMixed => {
            let beta = e1;
            unit(beta, "beta")?;
            let norms = vec![n(&chain(&[(Ab, &k.f), (AstB, &k.g)], 0.0, beta)?), n(&chain(&[(ABst, &k.g), (AstBst, &k.f)], beta, 0.0)?)];
            Ok((norms, k2_constant(z, beta, &k.f, &k.g, layout, params)?))
        }
        Audit::PairExchange => {
            let (gamma, delta) = (e1, e2);
            unit(gamma, "gamma")?;
            unit(delta, "delta")?;
            let m = chain(&[(ABst, &k.f), (AstB, &k.g)], delta, gamma)?;
            Ok((vec![n(&m)], k2_constant(z, gamma + delta, &k.f, &k.g, layout, params)?))
        }
        Audit::TripleAb | Audit::TripleAbst => {
            let gamma = e1;
            unit(gamma, "gamma")?;
            let (first, mirror) = if audit == Audit::TripleAb {
                ([(Ab, &k.f), (ABst, &k.g), (AstBst, &k.h)], [(Ab, &k.h), (AstB, &k.g), (AstBst, &k.f)])
            } else {
                ([(ABst, &k.f), (ABst, &k.g), (AstBst, &k.h)], [(Ab, &k.h), (AstB, &k.g), (AstB, &k.f)])
            };
            let norms = vec![n(&chain(&first, 0.0, gamma)?), n(&chain(&mirror, gamma, 0.0)?)];
            Ok((norms, k3_constant(z, gamma, [&k.f, &k.g, &k.h], layout, params)?))
        }
        other => invalid(format!("{other} is not a block audit")),
    }
}

/// `R0^g (H^ab(F) R0 H^a*b*(G) [+ E(F, G)]) R0^d`.
pub fn pair_counterterm_matrix(t: &Truncation, f: &DMatrix<Complex64>, g: &DMatrix<Complex64>, z: Complex64, gamma: f64, delta: f64, with_e: bool) -> Result<SparseOperator> {
    let r0 = SparseOperator::diagonal(&t.r0(z, 1.0, 0.0)?);
    let mut m = t.block_sparse(BlockTag::Ab, f)?.multiply(&r0)?.multiply(&t.block_sparse(BlockTag::AstBst, g)?)?;
    if with_e {
        let e = audit_e_fg(f, g, &t.layout, &t.params);
        m = m.add(&SparseOperator::identity(t.dim()).scale_real(e))?;
    }
    let pre = SparseOperator::diagonal(&t.r0(z, gamma, 0.0)?);
    let post = SparseOperator::diagonal(&t.r0(z, delta, 0.0)?);
    pre.multiply(&m)?.multiply(&post)
}

pub fn audit_block_bounds(t: &Truncation, audit: Audit, k: &BlockKernels, z: Complex64, e1: f64, e2: f64) -> Result<AuditReport> {
    let (norms, kc) = block_bound_norms(t, audit, k, z, e1, e2)?;
    let mut rep = AuditReport::new(audit);
    for (form, nm) in norms.iter().enumerate() {
        rep.record(ratio(*nm, kc), || format!("form {form} z={z} exponents=({e1}, {e2})"));
    }
    Ok(rep)
}

/// `E(F, G) = -sum w^2 |F G| / (w_b + w_a)`.
pub fn audit_e_fg(f: &DMatrix<Complex64>, g: &DMatrix<Complex64>, layout: &ModeLayout, params: &DispersionParams) -> f64 {
    e_pair(f, g, layout, params)
}

/// One randomized configuration for the explicit-constant audits.
#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub seed: u64,
    pub truncation: Truncation,
    pub z: Complex64,
    /// Fermion-mode function.
    pub f_vec: DVector<Complex64>,
    /// Kernel on (fermion, boson) modes.
    pub f_mat: DMatrix<Complex64>,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub c: f64,
    pub c_prime: f64,
}

fn random_entry(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::from_polar(rng.gen_range(0.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))
}

impl AuditConfig {
    /// d = 1, 3 or 4 cells, up to 3 fermion and 2 boson modes, boson cap up to 2,
    /// masses in [0.5, 2], z in [-50, -2], kernel entries of modulus at most 1.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = rng.gen_range(3..=4);
        let q_max = rng.gen_range(1.0..4.0);
        let nf = rng.gen_range(1..=3);
        let nb = rng.gen_range(1..=2);
        let cap = rng.gen_range(1..=2);
        let params = DispersionParams::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0))?;
        let grid = build_grid(1, q_max, cells)?;
        let mut pick = |n: usize| {
            let mut v: Vec<usize> = (0..cells).collect();
            for i in (1..v.len()).rev() {
                v.swap(i, rng.gen_range(0..=i));
            }
            let mut v = v[..n].to_vec();
            v.sort_unstable();
            v
        };
        let fc = pick(nf);
        let bc = pick(nb);
        let layout = ModeLayout::with_cells(grid, fc, bc)?;
        let truncation = Truncation::new(layout, params, cap)?;
        let z = Complex64::new(rng.gen_range(-50.0..-2.0), 0.0);
        let f_vec = DVector::from_fn(nf, |_, _| random_entry(&mut rng));
        let f_mat = DMatrix::from_fn(nf, nb, |_, _| random_entry(&mut rng));
        let alpha = rng.gen_range(0.0..=1.0);
        let beta = rng.gen_range(0.5..=1.0);
        let s = rng.gen_range(0.5..=1.0);
        let delta = s * rng.gen_range(0.0..=1.0);
        let gamma = s - delta;
        let c = rng.gen_range(0.0..3.0);
        let c_prime = c + rng.gen_range(0.0..3.0);
        Ok(AuditConfig { seed, truncation, z, f_vec, f_mat, alpha, beta, delta, gamma, c, c_prime })
    }

    /// Run every explicit-constant audit on this configuration. The reg-term audit
    /// covers both `C = C' = 0` and the drawn shifts.
    pub fn run(&self) -> Result<Vec<AuditReport>> {
        let t = &self.truncation;
        let (z, c, cp) = (self.z, self.c, self.c_prime);
        let tag = |mut r: AuditReport| {
            r.worst = format!("seed {}: {}", self.seed, r.worst);
            r
        };
        let mut reg = audit_reg_term_alone(t, &self.f_mat, z, self.delta, self.gamma, 0.0, 0.0)?;
        reg.merge(&audit_reg_term_alone(t, &self.f_mat, z, self.delta, self.gamma, c, cp)?);
        let kernels = BlockKernels { f: self.f_mat.clone(), g: self.f_mat.clone(), h: self.f_mat.clone() };
        Ok(vec![
            tag(audit_fermion_bound(t, &self.f_vec, z, c, cp, self.alpha)?),
            tag(audit_asharp(t, &self.f_vec, z, self.delta, self.gamma, c, cp)?),
            tag(audit_free_asharp(t, z, self.delta, self.gamma, c, cp)?),
            tag(reg),
            tag(audit_block_bounds(t, Audit::FirstOrder, &kernels, z, self.beta, 0.0)?),
        ])
    }
}

/// Explicit-constant audits on `count` configurations with seeds `seed_base + i`,
/// merged per audit in seed order.
pub fn run_explicit_batch(seed_base: u64, count: usize) -> Result<Vec<AuditReport>> {
    let per = par::map_range(count, |i| AuditConfig::random(seed_base + i as u64).and_then(|c| c.run()));
    let mut merged: Vec<AuditReport> = Vec::new();
    for reports in per {
        for r in reports? {
            match merged.iter_mut().find(|m| m.audit == r.audit) {
                Some(m) => m.merge(&r),
                None => merged.push(r),
            }
        }
    }
    Ok(merged)
}

/// Sup-ratio of a hidden-constant audit at two grid resolutions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    pub audit: Audit,
    pub coarse: f64,
    pub fine: f64,
    pub ceiling: f64,
    pub factor: f64,
    pub finite: bool,
    /// Finite, below the ceiling, and `fine <= factor * coarse`.
    pub stable: bool,
    /// `fine <= coarse`.
    pub nonincreasing: bool,
}

impl RefinementReport {
    pub fn new(audit: Audit, coarse: f64, fine: f64, ceiling: f64, factor: f64) -> Self {
        let finite = coarse.is_finite() && fine.is_finite();
        let stable = finite && fine <= ceiling && coarse <= ceiling && fine <= factor * coarse + RATIO_SLACK;
        let nonincreasing = finite && fine <= coarse + RATIO_SLACK;
        RefinementReport { audit, coarse, fine, ceiling, factor, finite, stable, nonincreasing }
    }
}

/// Physical kernels at two grid resolutions for the hidden-constant audits.
#[derive(Debug, Clone)]
pub struct RefinementSpec {
    pub d: usize,
    pub q_max: f64,
    pub coarse_cells: usize,
    pub fine_cells: usize,
    pub cap: usize,
    pub kspec: KernelSpec,
    pub cspec: CutoffSpec,
    pub params: DispersionParams,
    pub z_list: Vec<f64>,
    /// Values tried for each resolvent exponent.
    pub exponent_grid: Vec<f64>,
    /// Localization `n` of the kernel used for the power-shift audit.
    pub power_shift_n: u32,
    /// Coarse and fine cell counts for the power-shift audit (no Fock space needed).
    pub power_shift_cells: (usize, usize),
    pub power_shift_q_max: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,
    pub ceiling: f64,
    pub factor: f64,
}

impl Default for RefinementSpec {
    fn default() -> Self {
        RefinementSpec {
            d: 1,
            q_max: 2.0,
            coarse_cells: 5,
            fine_cells: 7,
            cap: 2,
            kspec: tilted_kernels(),
            cspec: CutoffSpec::new(2.0, 1).expect("valid cutoff"),
            params: DispersionParams::new(1.0, 1.5).expect("valid masses"),
            z_list: vec![-2.0, -5.0, -20.0, -50.0],
            exponent_grid: vec![0.0, 0.5, 1.0],
            power_shift_n: 4,
            power_shift_cells: (16, 32),
            power_shift_q_max: 4.0,
            lambda_max: 1e3,
            lambda_points: 25,
            ceiling: HIDDEN_CEILING,
            factor: REFINEMENT_FACTOR,
        }
    }
}

/// `p = 1/2` kernels with bounded coefficients that are odd-tilted in momentum.
/// Reflection-symmetric coefficients make the mixed and triple products cancel
/// exactly between `q` and `-q` on a symmetric grid.
pub fn tilted_kernels() -> KernelSpec {
    KernelSpec {
        h1: Coefficient::function(1.0, |k, q| Complex64::new(0.6 + 0.4 * (k[0] + 0.5 * q[0]).tanh(), 0.0)),
        h2: Coefficient::function(1.0, |k, q| Complex64::new(0.6 + 0.4 * (q[0] - 0.5 * k[0]).tanh(), 0.0)),
        ..KernelSpec::default()
    }
}

/// Exponent pairs for the power-shift audit: one unit of decay moved between variables.
pub fn power_shift_pairs() -> Vec<(Exponents, Exponents)> {
    vec![
        (Exponents::new(0.0, 1.0, 0.0, 0.0), Exponents::new(0.0, 0.0, 0.0, 1.0)),
        (Exponents::new(0.0, 0.0, 0.0, 1.0), Exponents::new(0.0, 1.0, 0.0, 0.0)),
        (Exponents::new(1.0, 0.0, 0.0, 0.0), Exponents::new(0.0, 0.0, 1.0, 0.0)),
        (Exponents::new(0.0, 0.0, 1.0, 0.0), Exponents::new(1.0, 0.0, 0.0, 0.0)),
        (Exponents::new(1.0, 0.5, 0.0, 0.0), Exponents::new(0.0, 0.0, 1.0, 0.5)),
    ]
}

const HIDDEN_BLOCK_AUDITS: [Audit; 6] =
    [Audit::FirstOrderFermionWeight, Audit::PairCounterterm, Audit::PairMixed, Audit::PairExchange, Audit::TripleAb, Audit::TripleAbst];

/// Exponent pairs `(e1, e2)` swept for a block audit.
fn exponent_pairs(audit: Audit, grid: &[f64]) -> Vec<(f64, f64)> {
    match audit {
        Audit::FirstOrderFermionWeight => grid.iter().filter(|&&b| b >= 0.5).map(|&b| (b, 0.0)).collect(),
        Audit::PairCounterterm | Audit::PairExchange => grid.iter().flat_map(|&a| grid.iter().map(move |&b| (a, b))).collect(),
        _ => grid.iter().map(|&b| (b, 0.0)).collect(),
    }
}

pub fn block_sup(spec: &RefinementSpec, cells: usize) -> Result<Vec<AuditReport>> {
    let grid = build_grid(spec.d, spec.q_max, cells)?;
    let layout = ModeLayout::full(grid);
    let km = kernel_matrix_on(&spec.kspec, &spec.cspec, &spec.params, &layout);
    let t = Truncation::new(layout, spec.params, spec.cap)?;
    let jobs: Vec<(Audit, f64, f64, f64)> = HIDDEN_BLOCK_AUDITS
        .iter()
        .flat_map(|&a| {
            let pairs = exponent_pairs(a, &spec.exponent_grid);
            spec.z_list.iter().flat_map(move |&z| pairs.clone().into_iter().map(move |(e1, e2)| (a, z, e1, e2)))
        })
        .collect();
    let reps = par::map(&jobs, |&(a, z, e1, e2)| audit_block_bounds(&t, a, &BlockKernels::for_audit(&km, a), Complex64::new(z, 0.0), e1, e2));
    let mut merged: Vec<AuditReport> = HIDDEN_BLOCK_AUDITS.iter().map(|&a| AuditReport::with_bound(a, spec.ceiling)).collect();
    for r in reps {
        let r = r?;
        let m = merged.iter_mut().find(|m| m.audit == r.audit).expect("listed audit");
        m.merge(&AuditReport { bound_constant: spec.ceiling, ..r });
    }
    Ok(merged)
}

fn power_shift_sup(spec: &RefinementSpec, cells: usize, lambdas: &[f64]) -> Result<AuditReport> {
    let grid = build_grid(spec.d, spec.power_shift_q_max, cells)?;
    let layout = ModeLayout::full(grid);
    let cspec = CutoffSpec { n: spec.power_shift_n, ..spec.cspec.clone() };
    let km = kernel_matrix_on(&spec.kspec, &cspec, &spec.params, &layout);
    let mut rep = AuditReport::with_bound(Audit::PowerShift, spec.ceiling);
    for (lhs, rhs) in power_shift_pairs() {
        for f in [&km.g1, &km.g2] {
            rep.merge(&AuditReport { bound_constant: spec.ceiling, ..audit_power_shift(f, &layout, &spec.params, lambdas, &lhs, &rhs)? });
        }
    }
    Ok(rep)
}

/// Sup-ratios of every hidden-constant audit on the coarse and the fine grid.
/// The power-shift audit also refines its lambda grid between the two levels.
pub fn hidden_constant_study(spec: &RefinementSpec) -> Result<Vec<RefinementReport>> {
    let coarse = block_sup(spec, spec.coarse_cells)?;
    let fine = block_sup(spec, spec.fine_cells)?;
    let mut out: Vec<RefinementReport> =
        coarse.iter().zip(&fine).map(|(c, f)| RefinementReport::new(c.audit, c.max_ratio, f.max_ratio, spec.ceiling, spec.factor)).collect();
    let lg = lambda_grid(spec.lambda_max, spec.lambda_points);
    let pc = power_shift_sup(spec, spec.power_shift_cells.0, &lg)?;
    let pf = power_shift_sup(spec, spec.power_shift_cells.1, &refine_grid(&lg))?;
    out.insert(0, RefinementReport::new(Audit::PowerShift, pc.max_ratio, pf.max_ratio, spec.ceiling, spec.factor));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn small(nf: usize, nb: usize, cap: usize) -> Truncation {
        let grid = build_grid(1, 2.0, 4).unwrap();
        let layout = ModeLayout::central(grid, nf, nb).unwrap();
        Truncation::new(layout, DispersionParams::default(), cap).unwrap()
    }

    /// One fermion and one boson mode at zero momentum, cap 1.
    fn two_mode() -> Truncation {
        let grid = build_grid(1, 0.5, 1).unwrap();
        Truncation::new(ModeLayout::full(grid), DispersionParams::default(), 1).unwrap()
    }

    #[test]
    fn fermion_bound_alpha_zero_is_half() {
        let t = small(3, 1, 1);
        let f = DVector::from_vec(vec![c(0.3), Complex64::new(0.0, -0.7), c(0.1)]);
        let r = fermion_bound_ratios(&t, &f, c(-4.0), 0.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(r[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(r[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fermion_bound_zero_function() {
        let t = small(2, 1, 1);
        let r = audit_fermion_bound(&t, &DVector::zeros(2), c(-3.0), 0.0, 0.0, 1.0).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn fermion_bound_single_mode_deep_z() {
        let t = small(2, 1, 1);
        let f = DVector::from_vec(vec![c(1.0), c(0.0)]);
        let r = fermion_bound_ratios(&t, &f, c(-40.0), 0.0, 0.0, 1.0).unwrap();
        // single mode: entries (E - w - z)/(E - z) <= 1
        assert!(r[0] <= 0.5 + 1e-12 && r[1] <= 0.5 + 1e-12, "{r:?}");
    }

    #[test]
    fn fermion_bound_rejects_bad_shifts() {
        let t = small(1, 1, 1);
        let f = DVector::from_vec(vec![c(1.0)]);
        assert!(fermion_bound_ratios(&t, &f, c(-3.0), 2.0, 1.0, 0.5).is_err());
        assert!(fermion_bound_ratios(&t, &f, c(-0.5), 0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn asharp_vacuum_vanishes() {
        let t = small(2, 2, 2);
        let f = DVector::from_vec(vec![c(0.5), c(0.5)]);
        let mut vac = DVector::zeros(t.dim());
        vac[0] = c(1.0);
        for form in AsharpForm::WITH_F.iter().chain(AsharpForm::FREE.iter()) {
            let terms = asharp_terms(&t, *form, &f, c(-3.0), 0.5, 0.25, 0.0, 0.0).unwrap();
            // b*(F) a(q) and b*(F) b(p) also start with an annihilator on the vacuum
            assert_eq!(asharp_lhs(&terms, &vac), 0.0, "{form:?}");
        }
    }

    #[test]
    fn asharp_single_mode_hand_formula() {
        let t = two_mode();
        let (wa, wb) = (t.wa[0], t.wb[0]);
        let fv = Complex64::new(0.6, 0.3);
        let f = DVector::from_vec(vec![fv]);
        let (z, delta, gamma, cc, cp) = (-3.0, 0.25, 0.5, 0.5, 1.5);
        let idx = t.basis.index_of(&[1], 1).unwrap();
        let mut psi = DVector::zeros(t.dim());
        psi[idx] = c(1.0);
        let terms = asharp_terms(&t, AsharpForm::ABf, &f, c(z), delta, gamma, cc, cp).unwrap();
        let got = asharp_lhs(&terms, &psi);
        let x: f64 = -z;
        let s = delta + gamma;
        let expect = wa * (wa + x).powf(2.0 * s - 1.0) * fv.norm_sqr() * (wa + wb + x + cp).powf(-2.0 * gamma) * (wa + x + cc).powf(-2.0 * delta);
        assert_relative_eq!(got, expect, max_relative = 1e-13);
    }

    #[test]
    fn asharp_zero_function() {
        let t = small(2, 1, 1);
        let r = audit_asharp(&t, &DVector::zeros(2), c(-5.0), 0.5, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        assert_eq!(r.samples, 4);
    }

    #[test]
    fn asharp_sup_dominates_random_vectors() {
        let t = small(2, 2, 2);
        let f = DVector::from_vec(vec![c(0.8), Complex64::new(0.1, 0.4)]);
        let terms = asharp_terms(&t, AsharpForm::BfstA, &f, c(-2.5), 0.5, 0.5, 0.0, 0.5).unwrap();
        let sup = asharp_sup(&terms, t.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let psi = DVector::from_fn(t.dim(), |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            assert!(asharp_lhs(&terms, &psi) <= sup * psi.norm_squared() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn free_asharp_is_diagonal_and_bounded() {
        let t = small(3, 2, 2);
        let r = audit_free_asharp(&t, c(-2.0), 0.5, 0.5, 0.0, 0.0).unwrap();
        assert!(r.pass && r.max_ratio > 0.0, "{r:?}");
    }

    #[test]
    fn reg_term_zero_column() {
        let t = small(2, 2, 1);
        let f = DMatrix::from_fn(2, 2, |_, j| if j == 0 { c(0.0) } else { c(0.5) });
        let (lhs, rhs) = reg_term_alone(&t, &f, 0, c(-3.0), 0.5, 0.5, 0.0, 0.0).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    #[test]
    fn reg_term_single_fermion_two_by_two() {
        // one fermion mode, no bosons occupied: the only transition is |1> -> |0>
        let t = two_mode();
        let fv = c(0.7);
        let f = DMatrix::from_element(1, 1, fv);
        let (z, delta, gamma) = (-4.0, 0.5, 0.0);
        let (lhs, rhs) = reg_term_alone(&t, &f, 0, c(z), delta, gamma, 0.0, 0.0).unwrap();
        let (wa, wb, x) = (t.wa[0], t.wb[0], 4.0);
        // the largest entry sits on the empty-boson sector
        let expect = fv.norm() * (wa + x).powf(-delta) * (wb + x).powf(-gamma);
        assert_relative_eq!(lhs, expect, max_relative = 1e-12);
        let t1 = fv.norm() / (wb.sqrt() * (wb + x).powf(delta + gamma - 0.5));
        let t2 = fv.norm() / ((wa + x).powf(delta) * (wa + wb + x).powf(gamma));
        assert_relative_eq!(rhs, t1 + t2, max_relative = 1e-12);
        assert!(lhs <= rhs);
    }

    #[test]
    fn power_shift_identity_and_closed_form() {
        let grid = build_grid(1, 0.5, 1).unwrap();
        let layout = ModeLayout::full(grid);
        let params = DispersionParams::new(1.0, 2.0).unwrap();
        let f = DMatrix::from_element(1, 1, c(0.5));
        let e = Exponents::new(0.5, 1.0, 0.5, 0.0);
        let same = audit_power_shift(&f, &layout, &params, &lambda_grid(1e3, 9), &e, &e).unwrap();
        assert_relative_eq!(same.max_ratio, 1.0, epsilon = 1e-14);
        // lambda = 0, one cell at q = 0: w_a = 1, w_b = 2
        let l = Exponents::new(0.0, 1.0, 0.0, 0.0);
        let r = Exponents::new(0.0, 0.0, 0.0, 1.0);
        let rep = audit_power_shift(&f, &layout, &params, &[0.0], &l, &r).unwrap();
        assert_relative_eq!(rep.max_ratio, 2.0, epsilon = 1e-14);
        assert!(audit_power_shift(&f, &layout, &params, &[0.0], &l, &Exponents::new(0.0, 0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn lambda_grid_refines_in_place() {
        let g = lambda_grid(1e3, 7);
        assert_eq!(g[0], 0.0);
        assert_relative_eq!(*g.last().unwrap(), 1e3, max_relative = 1e-14);
        let r = refine_grid(&g);
        assert_eq!(r.len(), 2 * g.len() - 1);
        assert!(g.iter().all(|x| r.contains(x)));
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn power_shift_localized_kernel_is_finite() {
        let grid = build_grid(1, 4.0, 16).unwrap();
        let layout = ModeLayout::full(grid);
        let params = DispersionParams::default();
        let km = kernel_matrix_on(&KernelSpec::default(), &CutoffSpec::new(4.0, 4).unwrap(), &params, &layout);
        let l = Exponents::new(0.0, 1.0, 0.0, 0.0);
        let r = Exponents::new(0.0, 0.0, 0.0, 1.0);
        let coarse = audit_power_shift(&km.g2, &layout, &params, &lambda_grid(1e3, 25), &l, &r).unwrap();
        let fine = audit_power_shift(&km.g2, &layout, &params, &refine_grid(&lambda_grid(1e3, 25)), &l, &r).unwrap();
        assert!(coarse.max_ratio.is_finite() && coarse.max_ratio > 0.0);
        assert!(fine.max_ratio <= REFINEMENT_FACTOR * coarse.max_ratio);
    }

    fn toy_kernels(g: f64) -> BlockKernels {
        let m = DMatrix::from_element(1, 1, c(g));
        BlockKernels { f: m.clone(), g: m.clone(), h: m }
    }

    #[test]
    fn block_bounds_zero_kernels() {
        let t = small(2, 2, 1);
        let z = DMatrix::zeros(2, 2);
        let k = BlockKernels { f: z.clone(), g: z.clone(), h: z };
        for a in [Audit::FirstOrder, Audit::PairCounterterm, Audit::PairMixed, Audit::PairExchange, Audit::TripleAb, Audit::TripleAbst] {
            let r = audit_block_bounds(&t, a, &k, c(-3.0), 0.5, 0.5).unwrap();
            assert_eq!(r.max_ratio, 0.0, "{a}");
        }
    }

    #[test]
    fn first_order_on_two_mode_toy() {
        let t = two_mode();
        let k = toy_kernels(0.9);
        let z = c(-2.0);
        let (norms, kc) = block_bound_norms(&t, Audit::FirstOrder, &k, z, 0.75, 0.0).unwrap();
        // H^ab maps |ab> to |0>: norm w g (w_a + w_b + 2)^(-3/4)
        let (wa, wb, w) = (t.wa[0], t.wb[0], t.layout.w());
        assert_relative_eq!(norms[0], w * 0.9 * (wa + wb + 2.0).powf(-0.75), max_relative = 1e-12);
        assert!(norms.iter().all(|&n| n <= kc), "{norms:?} vs {kc}");
    }

    #[test]
    fn counterterm_reduces_pair_norm() {
        let t = two_mode();
        let k = toy_kernels(1.3);
        // with E the singly occupied states pick up |E| R0, so the gain needs |z|^2 < Omega w_min
        let z = c(-1.2);
        let with = linalg::sparse_op_norm(&pair_counterterm_matrix(&t, &k.f, &k.g, z, 0.5, 0.5, true).unwrap()).value;
        let without = linalg::sparse_op_norm(&pair_counterterm_matrix(&t, &k.f, &k.g, z, 0.5, 0.5, false).unwrap()).value;
        assert!(with < without, "{with} vs {without}");
    }

    #[test]
    fn e_fg_examples() {
        let grid = build_grid(1, 0.5, 1).unwrap();
        let layout = ModeLayout::full(grid);
        // one cell at q = 0 with w = 1; masses 2 and 3 give w_a + w_b = 5
        let params = DispersionParams::new(2.0, 3.0).unwrap();
        let f = DMatrix::from_element(1, 1, c(2.0));
        let g = DMatrix::from_element(1, 1, c(3.0));
        assert_relative_eq!(audit_e_fg(&f, &g, &layout, &params), -6.0 / 5.0, epsilon = 1e-15);
        assert_eq!(audit_e_fg(&f, &DMatrix::zeros(1, 1), &layout, &params), 0.0);
    }

    #[test]
    fn e_fg_matches_counterterm() {
        let grid = build_grid(1, 3.0, 6).unwrap();
        let layout = ModeLayout::full(grid);
        let params = DispersionParams::default();
        let km = kernel_matrix_on(&KernelSpec::default(), &CutoffSpec::new(3.0, 1).unwrap(), &params, &layout);
        assert_eq!(audit_e_fg(&km.g2, &km.g2, &layout, &params), crate::counterterm::e2_discrete(&km, &params));
    }

    #[test]
    fn report_merge_keeps_worst() {
        let mut a = AuditReport::new(Audit::FermionBound);
        a.record(0.3, || "x".into());
        let mut b = AuditReport::new(Audit::FermionBound);
        b.record(0.4, || "y".into());
        b.record(0.1, || "z".into());
        a.merge(&b);
        assert_eq!((a.samples, a.max_ratio, a.worst.as_str()), (3, 0.4, "y"));
        a.record(1.5, || "w".into());
        assert!(!a.pass);
        a.record(f64::NAN, || "nan".into());
        assert!(a.max_ratio.is_nan() && !a.pass);
    }

    #[test]
    fn small_explicit_batch_passes() {
        let reps = run_explicit_batch(DEFAULT_SEED, 8).unwrap();
        assert_eq!(reps.len(), 5);
        for r in &reps {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn batch_is_path_independent() {
        let a = run_explicit_batch(77, 4).unwrap();
        let b = par::sequential(|| run_explicit_batch(77, 4).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn refinement_report_flags() {
        let r = RefinementReport::new(Audit::PairMixed, 0.4, 0.45, 32.0, 1.25);
        assert!(r.stable && !r.nonincreasing);
        let r = RefinementReport::new(Audit::PairMixed, 0.4, 0.6, 32.0, 1.25);
        assert!(!r.stable);
        let r = RefinementReport::new(Audit::PairMixed, 40.0, 30.0, 32.0, 1.25);
        assert!(!r.stable && r.nonincreasing);
        let r = RefinementReport::new(Audit::PairMixed, f64::INFINITY, 1.0, 32.0, 1.25);
        assert!(!r.finite && !r.stable);
    }

    #[test]
    fn sparse_chain_matches_dense_product() {
        let t = small(3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = DMatrix::from_fn(3, 2, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let g = DMatrix::from_fn(3, 2, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let z = c(-3.0);
        let r0 = t.r0(z, 1.0, 0.0).unwrap();
        let pre = t.r0(z, 0.5, 0.0).unwrap();
        let post = t.r0(z, 0.25, 0.0).unwrap();
        let e = audit_e_fg(&f, &g, &t.layout, &t.params);
        let mut dense = rmul(&t.block(BlockTag::Ab, &f).unwrap(), &r0) * t.block(BlockTag::AstBst, &g).unwrap();
        for i in 0..dense.nrows() {
            dense[(i, i)] += c(e);
        }
        let dense = rmul(&lmul(&pre, &dense), &post);
        let sparse = pair_counterterm_matrix(&t, &f, &g, z, 0.5, 0.25, true).unwrap();
        assert!((sparse.to_dense() - &dense).norm() < 1e-13);
        assert_relative_eq!(linalg::sparse_op_norm(&sparse).value, linalg::op_norm_value(&dense), epsilon = 1e-12);
    }
}
