//! Ground energies, renormalized-energy sweeps in the UV cutoff and resolvent
//! distances between cutoffs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::counterterm::e2_discrete;
use crate::error::{invalid, Error, Result};
use crate::fock::{enumerate_basis, FockBasis, SparseOperator};
use crate::hamiltonian::{build_full, c_lambda, HamiltonianParts};
use crate::linalg::{self, LuSolver, DENSE_LIMIT};
use crate::modegrid::{build_grid, kernel_matrix_on, CutoffSpec, DispersionParams, KernelMatrix, KernelSpec, ModeLayout};
use crate::par;

pub const DEFAULT_TOL: f64 = 1e-9;
/// Krylov subspace size before a restart.
pub const KRYLOV_DIM: usize = 120;
pub const MAX_RESTARTS: usize = 200;
pub const DEFAULT_PT_LAMBDAS: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenMethod {
    Diagonal,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub energy: f64,
    pub vector: DVector<Complex64>,
    /// `|H v - E v|` for the normalized `v`.
    pub residual: f64,
    pub method: EigenMethod,
    pub iterations: usize,
}

fn apply(h: &SparseOperator, x: &DVector<Complex64>) -> DVector<Complex64> {
    h.matvec_dvec(x)
}

fn residual_of(h: &SparseOperator, v: &DVector<Complex64>, e: f64) -> f64 {
    (apply(h, v) - v * Complex64::new(e, 0.0)).norm()
}

/// Residual scale: `max(1, max row sum of |h_ij|)`, an upper bound on `||h||`.
fn residual_scale(h: &SparseOperator) -> f64 {
    (0..h.dim()).map(|r| h.row(r).map(|(_, v)| v.norm()).sum::<f64>()).fold(1.0, f64::max)
}

fn is_diagonal(h: &SparseOperator) -> bool {
    (0..h.dim()).all(|r| h.row(r).all(|(c, v)| c == r || v == Complex64::new(0.0, 0.0)))
}

fn check_hermitian(h: &SparseOperator) -> Result<()> {
    if h.is_hermitian() || h.is_hermitian_exact() {
        Ok(())
    } else {
        invalid("ground_energy needs a Hermitian operator")
    }
}

/// Smallest eigenvalue of a Hermitian operator.
///
/// Diagonal operators are read off directly, dimensions up to
/// [`DENSE_LIMIT`] use a dense eigensolve and larger ones restarted Lanczos
/// with full reorthogonalization from the normalized all-ones vector.
/// Eigenpairs are accepted when `|h v - e v| <= tol * max(1, ||h||)`.
pub fn ground_energy(h: &SparseOperator, tol: f64) -> Result<GroundState> {
    lowest_states(h, 1, tol).map(|mut v| v.remove(0))
}

/// The `count` lowest eigenpairs, ascending. Lanczos finds them one at a
/// time by deflating the ones already found.
pub fn lowest_states(h: &SparseOperator, count: usize, tol: f64) -> Result<Vec<GroundState>> {
    check_hermitian(h)?;
    if !(tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {tol}"));
    }
    let n = h.dim();
    if n == 0 || count == 0 || count > n {
        return invalid(format!("cannot extract {count} eigenpairs from dimension {n}"));
    }
    if is_diagonal(h) {
        let d = h.diagonal_values();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[a].re.total_cmp(&d[b].re).then(a.cmp(&b)));
        return Ok(order[..count]
            .iter()
            .map(|&i| {
                let mut v = DVector::zeros(n);
                v[i] = Complex64::new(1.0, 0.0);
                GroundState { energy: d[i].re, vector: v, residual: 0.0, method: EigenMethod::Diagonal, iterations: 0 }
            })
            .collect());
    }
    let tol = tol * residual_scale(h);
    if n <= DENSE_LIMIT {
        let (vals, vecs) = linalg::hermitian_eigen(&h.to_dense());
        let mut out = Vec::with_capacity(count);
        for (k, &e) in vals.iter().enumerate().take(count) {
            let v = vecs.column(k).into_owned();
            let residual = residual_of(h, &v, e);
            if residual > tol {
                return Err(Error::NotConverged(format!("dense eigenpair {k} residual {residual:.3e} exceeds {tol:.3e}")));
            }
            out.push(GroundState { energy: e, vector: v, residual, method: EigenMethod::Dense, iterations: 0 });
        }
        return Ok(out);
    }
    let mut found: Vec<GroundState> = Vec::with_capacity(count);
    for _ in 0..count {
        let locked: Vec<DVector<Complex64>> = found.iter().map(|s| s.vector.clone()).collect();
        found.push(lanczos_lowest(h, &locked, tol)?);
    }
    Ok(found)
}

fn orthogonalize(w: &mut DVector<Complex64>, basis: &[DVector<Complex64>]) {
    // two passes keep the basis orthogonal to working precision
    for _ in 0..2 {
        for q in basis {
            let c = q.dotc(w);
            w.axpy(-c, q, Complex64::new(1.0, 0.0));
        }
    }
}

/// Lowest eigenpair of `h` on the orthogonal complement of `locked`.
fn lanczos_lowest(h: &SparseOperator, locked: &[DVector<Complex64>], tol: f64) -> Result<GroundState> {
    let n = h.dim();
    let mut start = DVector::from_element(n, Complex64::new(1.0, 0.0));
    orthogonalize(&mut start, locked);
    if start.norm() < 1e-12 {
        start = linalg::start_vector(n, 7);
        orthogonalize(&mut start, locked);
    }
    let mut q0 = start.unscale(start.norm());
    let mut total = 0;
    let mut best = (f64::INFINITY, q0.clone(), f64::INFINITY);
    for _ in 0..MAX_RESTARTS {
        let mut qs: Vec<DVector<Complex64>> = vec![q0.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let m = KRYLOV_DIM.min(n - locked.len());
        for j in 0..m {
            let mut w = apply(h, &qs[j]);
            total += 1;
            let a = qs[j].dotc(&w).re;
            alpha.push(a);
            orthogonalize(&mut w, locked);
            orthogonalize(&mut w, &qs);
            let b = w.norm();
            if j + 1 == m || b < 1e-14 {
                break;
            }
            beta.push(b);
            qs.push(w.unscale(b));
        }
        let k = alpha.len();
        let t = DMatrix::from_fn(k, k, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        let (imin, &theta) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
        let s = eig.eigenvectors.column(imin);
        let mut v = DVector::zeros(n);
        for (i, q) in qs.iter().take(k).enumerate() {
            v.axpy(Complex64::new(s[i], 0.0), q, Complex64::new(1.0, 0.0));
        }
        orthogonalize(&mut v, locked);
        v.unscale_mut(v.norm());
        let residual = residual_of(h, &v, theta);
        best = (theta, v.clone(), residual);
        if residual <= tol {
            return Ok(GroundState { energy: theta, vector: v, residual, method: EigenMethod::Lanczos, iterations: total });
        }
        q0 = v;
    }
    Err(Error::NotConverged(format!("Lanczos residual {:.3e} after {total} matvecs (E = {})", best.2, best.0)))
}

/// Two-mode toy: one fermion and one boson at zero momentum on a cell of
/// weight `w`, boson cap 1, `G1 = 0` and `G2 = g`.
#[derive(Debug, Clone)]
pub struct TwoModeToy {
    pub km: KernelMatrix,
    pub params: DispersionParams,
    pub basis: FockBasis,
    pub w: f64,
    pub g: f64,
}

impl TwoModeToy {
    pub fn new(w: f64, g: f64, params: DispersionParams) -> Result<Self> {
        if !(w > 0.0) {
            return invalid(format!("cell weight must be positive, got {w}"));
        }
        let grid = build_grid(1, w / 2.0, 1)?;
        let layout = ModeLayout::full(grid);
        let km = KernelMatrix { layout, g1: DMatrix::zeros(1, 1), g2: DMatrix::from_element(1, 1, Complex64::new(g, 0.0)) };
        let basis = enumerate_basis(1, 1, 1)?;
        Ok(TwoModeToy { km, params, basis, w, g })
    }

    /// `omega_a(0) + omega_b(0)`.
    pub fn omega(&self) -> f64 {
        self.params.m_b + self.params.m_f
    }

    pub fn parts(&self, lambda: f64) -> Result<HamiltonianParts> {
        build_full(&self.km, &self.params, &self.basis, lambda)
    }

    /// `Omega/2 - sqrt(Omega^2/4 + w^2 g^2 lambda^2)`.
    pub fn closed_form(&self, lambda: f64) -> f64 {
        let om = self.omega();
        let x = self.w * self.g * lambda;
        om / 2.0 - (om * om / 4.0 + x * x).sqrt()
    }

    /// `-w^2 g^2 / Omega`.
    pub fn c2(&self) -> f64 {
        -(self.w * self.g).powi(2) / self.omega()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub lambdas: Vec<f64>,
    pub energies: Vec<f64>,
    /// Extrapolated coefficient of `lambda^2`.
    pub c2: f64,
    /// Leading correction estimate, coefficient of `lambda^4`.
    pub c4: f64,
    pub e2: f64,
    /// `|c2 - e2| / |e2|`, zero when both vanish.
    pub rel_mismatch: f64,
    /// Set when the `lambda^4` term outweighs the `lambda^2` term on the grid.
    pub unstable: bool,
}

/// Neville extrapolation of `(x_i, y_i)` to `x = 0`.
pub fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for m in 1..n {
        for i in 0..n - m {
            p[i] = (xs[i + m] * p[i] - xs[i] * p[i + 1]) / (xs[i + m] - xs[i]);
        }
    }
    p[0]
}

/// Fits `E(lambda) = c2 lambda^2 + O(lambda^4)` by Richardson extrapolation
/// of `E / lambda^2` in `lambda^2`, and compares `c2` with `E2` at unit coupling.
pub fn perturbation_check(km: &KernelMatrix, params: &DispersionParams, basis: &FockBasis, lambdas: &[f64], tol: f64) -> Result<PerturbationReport> {
    if lambdas.len() < 2 {
        return invalid("perturbation check needs at least two coupling values");
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] <= 0.0 || sorted.windows(2).any(|w| w[0] == w[1]) {
        return invalid("coupling grid must be positive and distinct");
    }
    let base = build_full(km, params, basis, 1.0)?;
    let energies = par::map(&sorted, |&l| base.with_coupling(l).and_then(|p| ground_energy(&p.full, tol)).map(|g| g.energy))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = sorted.iter().map(|l| l * l).collect();
    let ys: Vec<f64> = energies.iter().zip(&xs).map(|(e, x)| e / x).collect();
    let c2 = extrapolate_to_zero(&xs, &ys);
    let c4 = (ys[1] - ys[0]) / (xs[1] - xs[0]);
    let e2 = e2_discrete(km, params);
    let rel_mismatch = if e2 == 0.0 && c2 == 0.0 { 0.0 } else { (c2 - e2).abs() / e2.abs() };
    let xmax = xs[xs.len() - 1];
    let unstable = (c4 * xmax).abs() > c2.abs();
    Ok(PerturbationReport { lambdas: sorted, energies, c2, c4, e2, rel_mismatch, unstable })
}

/// Which modes of the grid enter the truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ModePolicy {
    Full,
    Central { fermions: usize, bosons: usize },
}

impl ModePolicy {
    pub fn layout(&self, d: usize, q_max: f64, cells: usize) -> Result<ModeLayout> {
        let grid = build_grid(d, q_max, cells)?;
        match *self {
            ModePolicy::Full => Ok(ModeLayout::full(grid)),
            ModePolicy::Central { fermions, bosons } => ModeLayout::central(grid, fermions, bosons),
        }
    }
}

/// Fixed discretization for a sweep over the UV cutoff.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub d: usize,
    pub kspec: KernelSpec,
    /// Cutoff template; `lambda` is replaced per row.
    pub cspec: CutoffSpec,
    pub params: DispersionParams,
    pub q_max: f64,
    pub cells: usize,
    pub modes: ModePolicy,
    pub boson_cap: usize,
    pub tol: f64,
}

impl SweepConfig {
    pub fn layout(&self) -> Result<ModeLayout> {
        self.modes.layout(self.d, self.q_max, self.cells)
    }

    pub fn basis(&self, layout: &ModeLayout) -> Result<FockBasis> {
        enumerate_basis(layout.n_boson(), layout.n_fermion(), self.boson_cap)
    }

    pub fn kernels(&self, layout: &ModeLayout, lambda_cut: f64) -> Result<KernelMatrix> {
        let cspec = self.cspec.with_lambda(lambda_cut);
        cspec.validate()?;
        Ok(kernel_matrix_on(&self.kspec, &cspec, &self.params, layout))
    }

    /// `H`, `E2` and `C` at one cutoff.
    pub fn at_cutoff(&self, layout: &ModeLayout, basis: &FockBasis, lambda_cut: f64) -> Result<(HamiltonianParts, f64, f64)> {
        let km = self.kernels(layout, lambda_cut)?;
        let parts = build_full(&km, &self.params, basis, 1.0)?;
        Ok((parts, e2_discrete(&km, &self.params), c_lambda(&km, &self.params)))
    }

    fn validate(&self, lambdas: &[f64]) -> Result<()> {
        self.kspec.validate()?;
        self.params.validate()?;
        if !(self.tol > 0.0) {
            return invalid(format!("solver tolerance must be positive, got {}", self.tol));
        }
        if lambdas.is_empty() {
            return invalid("cutoff list is empty");
        }
        if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("cutoff list must be strictly increasing");
        }
        let need = lambdas[lambdas.len() - 1] * self.cspec.r_chi();
        if self.q_max < need {
            return invalid(format!("grid half-width {} is below the largest cutoff support {need}", self.q_max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_cut: f64,
    pub energy: f64,
    pub e2: f64,
    pub renormalized: f64,
    pub c: f64,
    pub gap: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub d: usize,
    pub p: f64,
    pub m_b: f64,
    pub m_f: f64,
    pub n: u32,
    pub q_max: f64,
    pub cells: usize,
    pub boson_cap: usize,
    pub coupling: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    /// Successive differences of `E - E2`.
    pub diffs: Vec<f64>,
    /// `E - E2` never increases along the list.
    pub monotone_nonincreasing: bool,
    /// `|diff|` shrinks across the last three rows.
    pub tail_settling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub meta: SweepMeta,
    pub stats: SweepStats,
}

/// Ground energy and gap of `H_Lambda` at each cutoff on a fixed grid and basis.
pub fn renormalized_sweep(cfg: &SweepConfig, lambdas: &[f64]) -> Result<SweepResult> {
    cfg.validate(lambdas)?;
    let layout = cfg.layout()?;
    let basis = cfg.basis(&layout)?;
    let count = if basis.dim() > 1 { 2 } else { 1 };
    let rows = par::map(lambdas, |&lc| -> Result<SweepRow> {
        let (parts, e2, c) = cfg.at_cutoff(&layout, &basis, lc)?;
        let states = lowest_states(&parts.full, count, cfg.tol)?;
        let energy = states[0].energy;
        let gap = if count == 2 { states[1].energy - energy } else { 0.0 };
        let residual = states.iter().map(|s| s.residual).fold(0.0, f64::max);
        if energy < -c - cfg.tol {
            return Err(Error::InvariantViolation(format!("E = {energy} below -C = {} at Lambda = {lc}", -c)));
        }
        Ok(SweepRow { lambda_cut: lc, energy, e2, renormalized: energy - e2, c, gap, residual })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let diffs: Vec<f64> = rows.windows(2).map(|w| w[1].renormalized - w[0].renormalized).collect();
    let monotone_nonincreasing = diffs.iter().all(|d| *d <= 0.0);
    let tail_settling = diffs.len() >= 2 && diffs[diffs.len() - 1].abs() < diffs[diffs.len() - 2].abs();
    let meta = SweepMeta {
        d: cfg.d,
        p: cfg.kspec.p,
        m_b: cfg.params.m_b,
        m_f: cfg.params.m_f,
        n: cfg.cspec.n,
        q_max: cfg.q_max,
        cells: cfg.cells,
        boson_cap: cfg.boson_cap,
        coupling: cfg.kspec.coupling,
        dim: basis.dim(),
    };
    Ok(SweepResult { rows, meta, stats: SweepStats { diffs, monotone_nonincreasing, tail_settling } })
}

/// `z = -2 (1 + 25 max C^2)`.
pub fn default_distance_z(c_values: &[f64]) -> Complex64 {
    let cmax = c_values.iter().cloned().fold(0.0, f64::max);
    Complex64::new(-2.0 * (1.0 + 25.0 * cmax * cmax), 0.0)
}

fn shifted_dense(h: &SparseOperator, e2: f64, z: Complex64) -> DMatrix<Complex64> {
    let mut m = h.to_dense();
    for i in 0..m.nrows() {
        m[(i, i)] -= Complex64::new(e2, 0.0) + z;
    }
    m
}

/// `|(H1 - E2_1 - z)^-1 - (H2 - E2_2 - z)^-1|` by power iteration, two solves per application.
pub fn resolvent_distance(parts1: &HamiltonianParts, parts2: &HamiltonianParts, z: Complex64, e2_1: f64, e2_2: f64) -> Result<f64> {
    let n = parts1.dim();
    if parts2.dim() != n {
        return Err(Error::DimensionMismatch { left: n, right: parts2.dim() });
    }
    if !(z.re < 0.0) {
        return Err(Error::OutsideHalfPlane(format!("Re z = {} must be negative", z.re)));
    }
    let f1 = LuSolver::new(&shifted_dense(&parts1.full, e2_1, z))?;
    let f2 = LuSolver::new(&shifted_dense(&parts2.full, e2_2, z))?;
    let g1 = LuSolver::new(&shifted_dense(&parts1.full, e2_1, z.conj()))?;
    let g2 = LuSolver::new(&shifted_dense(&parts2.full, e2_2, z.conj()))?;
    let diff = |a: &LuSolver, b: &LuSolver, x: &DVector<Complex64>| -> DVector<Complex64> {
        match (a.solve(x), b.solve(x)) {
            (Ok(u), Ok(v)) => u - v,
            _ => DVector::from_element(x.len(), Complex64::new(f64::NAN, 0.0)),
        }
    };
    let est = linalg::power_norm(|x| diff(&f1, &f2, x), |x| diff(&g1, &g2, x), n, linalg::POWER_TOL, linalg::POWER_MAX_ITER, 1);
    if !est.value.is_finite() {
        return Err(Error::Singular);
    }
    if !est.converged {
        return Err(Error::NotConverged(format!("resolvent distance power iteration stalled at {}", est.value)));
    }
    Ok(est.value)
}

/// Pairwise resolvent distances for every pair `i < j` of `lambdas`, at a
/// common `z` taken from [`default_distance_z`] unless given.
pub fn distance_table(cfg: &SweepConfig, lambdas: &[f64], z: Option<Complex64>) -> Result<(Complex64, Vec<(f64, f64, f64)>)> {
    cfg.validate(lambdas)?;
    let layout = cfg.layout()?;
    let basis = cfg.basis(&layout)?;
    let built = par::map(lambdas, |&lc| cfg.at_cutoff(&layout, &basis, lc)).into_iter().collect::<Result<Vec<_>>>()?;
    let z = z.unwrap_or_else(|| default_distance_z(&built.iter().map(|b| b.2).collect::<Vec<_>>()));
    let pairs: Vec<(usize, usize)> = (0..lambdas.len()).flat_map(|i| (i + 1..lambdas.len()).map(move |j| (i, j))).collect();
    let out = par::map(&pairs, |&(i, j)| resolvent_distance(&built[i].0, &built[j].0, z, built[i].1, built[j].1).map(|d| (lambdas[i], lambdas[j], d)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((z, out))
}
