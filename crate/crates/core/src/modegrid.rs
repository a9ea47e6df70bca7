//! Momentum grids, dispersion relations, cutoff functions and sampled kernels.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::{par, quadrature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParticleKind {
    Boson,
    Fermion,
}

/// Boson and fermion masses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionParams {
    pub m_b: f64,
    pub m_f: f64,
}

impl DispersionParams {
    pub fn new(m_b: f64, m_f: f64) -> Result<Self> {
        let p = DispersionParams { m_b, m_f };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_b > 0.0 && self.m_f > 0.0) || !self.m_b.is_finite() || !self.m_f.is_finite() {
            return invalid(format!("masses must be positive and finite, got m_b={} m_f={}", self.m_b, self.m_f));
        }
        Ok(())
    }

    pub fn mass(&self, kind: ParticleKind) -> f64 {
        match kind {
            ParticleKind::Boson => self.m_b,
            ParticleKind::Fermion => self.m_f,
        }
    }
}

impl Default for DispersionParams {
    fn default() -> Self {
        DispersionParams { m_b: 1.0, m_f: 1.0 }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Relativistic dispersion `sqrt(|q|^2 + m^2)`.
pub fn dispersion(kind: ParticleKind, q: &[f64], params: &DispersionParams) -> f64 {
    let m = params.mass(kind);
    (norm2(q) + m * m).sqrt()
}

/// Uniform midpoint tensor grid on `[-q_max, q_max]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeGrid {
    d: usize,
    cells_per_axis: usize,
    q_max: f64,
    w: f64,
    centers: Vec<f64>,
}

impl ModeGrid {
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn len(&self) -> usize {
        self.centers.len() / self.d
    }
    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn q_max(&self) -> f64 {
        self.q_max
    }
    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }
    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.d..(i + 1) * self.d]
    }
    pub fn centers(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.chunks(self.d)
    }
}

/// Build a uniform tensor grid. Centers are ordered lexicographically.
pub fn build_grid(d: usize, q_max: f64, cells_per_axis: usize) -> Result<ModeGrid> {
    if !(1..=3).contains(&d) {
        return invalid(format!("dimension must be 1, 2 or 3, got {d}"));
    }
    if cells_per_axis == 0 {
        return invalid("cells_per_axis must be at least 1");
    }
    if !(q_max > 0.0) || !q_max.is_finite() {
        return invalid(format!("Q_max must be positive, got {q_max}"));
    }
    let h = 2.0 * q_max / cells_per_axis as f64;
    let axis: Vec<f64> = (0..cells_per_axis).map(|i| -q_max + h * (i as f64 + 0.5)).collect();
    let total = cells_per_axis.pow(d as u32);
    let mut centers = Vec::with_capacity(total * d);
    for flat in 0..total {
        // first coordinate is most significant
        let mut rem = flat;
        let mut idx = [0usize; 3];
        for a in (0..d).rev() {
            idx[a] = rem % cells_per_axis;
            rem /= cells_per_axis;
        }
        for &i in idx.iter().take(d) {
            centers.push(axis[i]);
        }
    }
    Ok(ModeGrid { d, cells_per_axis, q_max, w: h.powi(d as i32), centers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChiShape {
    #[default]
    Indicator,
    SmoothBump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FShape {
    #[default]
    BallIndicator,
    NormalizedBump,
}

/// UV cutoff `chi(|k|/Lambda)` together with the spatial cutoff `g(k) = n^d f(n k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub lambda: f64,
    pub chi: ChiShape,
    pub n: u32,
    pub f: FShape,
}

impl CutoffSpec {
    pub fn new(lambda: f64, n: u32) -> Result<Self> {
        let s = CutoffSpec { lambda, chi: ChiShape::Indicator, n, f: FShape::BallIndicator };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return invalid(format!("Lambda must be positive, got {}", self.lambda));
        }
        if self.n == 0 {
            return invalid("spatial cutoff scale n must be a positive integer");
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        CutoffSpec { lambda, ..*self }
    }

    /// Value of the UV cutoff at `|k|`.
    pub fn chi_at(&self, k_abs: f64) -> f64 {
        chi(self.chi, k_abs / self.lambda)
    }

    /// Support radius of chi in units of Lambda.
    pub fn r_chi(&self) -> f64 {
        1.0
    }

    /// `n^d sup f`.
    pub fn g_max(&self, d: usize) -> f64 {
        (self.n as f64).powi(d as i32) * f_sup(self.f, d)
    }
}

/// Smooth step: 0 for t <= 0, 1 for t >= 1.
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// The UV cutoff profile on `r >= 0`.
pub fn chi(shape: ChiShape, r: f64) -> f64 {
    match shape {
        ChiShape::Indicator => {
            if r <= 1.0 {
                1.0
            } else {
                0.0
            }
        }
        ChiShape::SmoothBump => smooth_step(2.0 - 2.0 * r),
    }
}

fn unit_ball_volume(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => unreachable!("dimension checked upstream"),
    }
}

fn sphere_area(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!("dimension checked upstream"),
    }
}

fn bump_profile(s2: f64) -> f64 {
    if s2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s2)).exp()
    }
}

/// Normalisation of `exp(-1/(1-|x|^2))` over the unit ball in d dimensions.
fn bump_mass(d: usize) -> f64 {
    static CACHE: OnceLock<[f64; 3]> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut out = [0.0; 3];
        for (i, slot) in out.iter_mut().enumerate() {
            let dd = i + 1;
            let r = quadrature::adaptive_gk(
                |xs| xs.iter().map(|&s| s.powi(dd as i32 - 1) * bump_profile(s * s)).collect(),
                0.0,
                1.0,
                8,
                1e-17,
                1e-15,
                4000,
            );
            *slot = sphere_area(dd) * r.value;
        }
        out
    })[d - 1]
}

/// Value of the normalised profile f at x.
pub fn f_value(shape: FShape, x: &[f64]) -> f64 {
    let d = x.len();
    let s2 = norm2(x);
    match shape {
        FShape::BallIndicator => {
            if s2 <= 1.0 {
                1.0 / unit_ball_volume(d)
            } else {
                0.0
            }
        }
        FShape::NormalizedBump => bump_profile(s2) / bump_mass(d),
    }
}

/// `sup f` for the given shape.
pub fn f_sup(shape: FShape, d: usize) -> f64 {
    match shape {
        FShape::BallIndicator => 1.0 / unit_ball_volume(d),
        FShape::NormalizedBump => (-1.0f64).exp() / bump_mass(d),
    }
}

/// Spatial cutoff `g(x) = n^d f(n x)`.
pub fn spatial_cutoff(x: &[f64], spec: &CutoffSpec, d: usize) -> f64 {
    debug_assert_eq!(x.len(), d);
    let n = spec.n as f64;
    let mut y = [0.0; 3];
    for (a, v) in x.iter().enumerate() {
        y[a] = n * v;
    }
    n.powi(d as i32) * f_value(spec.f, &y[..d])
}

type CoefficientFn = dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync;

/// A bounded coefficient function `h(k, q)`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(Complex64),
    Function { f: Arc<CoefficientFn>, sup: f64 },
}

impl Coefficient {
    pub fn one() -> Self {
        Coefficient::Constant(Complex64::new(1.0, 0.0))
    }

    pub fn zero() -> Self {
        Coefficient::Constant(Complex64::new(0.0, 0.0))
    }

    /// A closure with a caller-supplied bound on its modulus.
    pub fn function(sup: f64, f: impl Fn(&[f64], &[f64]) -> Complex64 + Send + Sync + 'static) -> Self {
        Coefficient::Function { f: Arc::new(f), sup }
    }

    pub fn eval(&self, k: &[f64], q: &[f64]) -> Complex64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Function { f, .. } => f(k, q),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Coefficient::Constant(c) => c.norm(),
            Coefficient::Function { sup, .. } => *sup,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Constant(_))
    }

    pub fn conj(&self) -> Self {
        match self {
            Coefficient::Constant(c) => Coefficient::Constant(c.conj()),
            Coefficient::Function { f, sup } => {
                let f = f.clone();
                Coefficient::Function { f: Arc::new(move |k, q| f(k, q).conj()), sup: *sup }
            }
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(fm, "Constant({c})"),
            Coefficient::Function { sup, .. } => write!(fm, "Function(sup={sup})"),
        }
    }
}

/// Kernel family parameters: exponent p, coefficients and coupling.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub p: f64,
    pub h1: Coefficient,
    pub h2: Coefficient,
    pub coupling: f64,
}

impl KernelSpec {
    pub fn new(p: f64) -> Result<Self> {
        let s = KernelSpec { p, h1: Coefficient::one(), h2: Coefficient::one(), coupling: 1.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 0.0) || !self.p.is_finite() {
            return invalid(format!("p must be non-negative, got {}", self.p));
        }
        if !self.h1.sup().is_finite() || !self.h2.sup().is_finite() {
            return invalid("coefficient bounds must be finite");
        }
        if !self.coupling.is_finite() {
            return invalid("coupling must be finite");
        }
        Ok(())
    }

    pub fn with_coupling(&self, coupling: f64) -> Self {
        KernelSpec { coupling, ..self.clone() }
    }

    pub fn h(&self, sharp: Sharp) -> &Coefficient {
        match sharp {
            Sharp::One => &self.h1,
            Sharp::Two => &self.h2,
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { p: 0.5, h1: Coefficient::one(), h2: Coefficient::one(), coupling: 1.0 }
    }
}

/// Which kernel: `G1` carries `g(k - q)`, `G2` carries `g(k + q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sharp {
    One,
    Two,
}

/// Kernel value `lambda h(k,q) g(k -+ q) chi(|k|/L) chi(|q|/L) / omega_b(q)^p`.
pub fn kernel_value(sharp: Sharp, k: &[f64], q: &[f64], kspec: &KernelSpec, cspec: &CutoffSpec, params: &DispersionParams) -> Complex64 {
    let d = k.len();
    let cut = cspec.chi_at(norm2(k).sqrt()) * cspec.chi_at(norm2(q).sqrt());
    if cut == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let mut arg = [0.0; 3];
    for a in 0..d {
        arg[a] = match sharp {
            Sharp::One => k[a] - q[a],
            Sharp::Two => k[a] + q[a],
        };
    }
    let g = spatial_cutoff(&arg[..d], cspec, d);
    if g == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let wa = dispersion(ParticleKind::Boson, q, params);
    kspec.h(sharp).eval(k, q) * (kspec.coupling * g * cut / wa.powf(kspec.p))
}

/// Assignment of grid cells to fermion and boson modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeLayout {
    pub grid: ModeGrid,
    pub fermion_cells: Vec<usize>,
    pub boson_cells: Vec<usize>,
}

impl ModeLayout {
    /// Every grid cell carries one fermion mode and one boson mode.
    pub fn full(grid: ModeGrid) -> Self {
        let all: Vec<usize> = (0..grid.len()).collect();
        ModeLayout { grid, fermion_cells: all.clone(), boson_cells: all }
    }

    /// The `nf` (resp. `nb`) cells closest to the origin, kept in grid order.
    pub fn central(grid: ModeGrid, nf: usize, nb: usize) -> Result<Self> {
        if nf > grid.len() || nb > grid.len() {
            return invalid(format!("requested {nf}/{nb} modes from a grid of {} cells", grid.len()));
        }
        let mut by_norm: Vec<usize> = (0..grid.len()).collect();
        by_norm.sort_by(|&a, &b| norm2(grid.center(a)).total_cmp(&norm2(grid.center(b))).then(a.cmp(&b)));
        let pick = |n: usize| {
            let mut v = by_norm[..n].to_vec();
            v.sort_unstable();
            v
        };
        Ok(ModeLayout { fermion_cells: pick(nf), boson_cells: pick(nb), grid })
    }

    pub fn with_cells(grid: ModeGrid, fermion_cells: Vec<usize>, boson_cells: Vec<usize>) -> Result<Self> {
        let ok = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|&i| i < grid.len());
        if !ok(&fermion_cells) || !ok(&boson_cells) {
            return invalid("mode cells must be strictly increasing grid indices");
        }
        Ok(ModeLayout { grid, fermion_cells, boson_cells })
    }

    pub fn n_fermion(&self) -> usize {
        self.fermion_cells.len()
    }
    pub fn n_boson(&self) -> usize {
        self.boson_cells.len()
    }
    pub fn w(&self) -> f64 {
        self.grid.w()
    }
    pub fn fermion_momentum(&self, i: usize) -> &[f64] {
        self.grid.center(self.fermion_cells[i])
    }
    pub fn boson_momentum(&self, j: usize) -> &[f64] {
        self.grid.center(self.boson_cells[j])
    }
    pub fn fermion_energies(&self, params: &DispersionParams) -> Vec<f64> {
        (0..self.n_fermion()).map(|i| dispersion(ParticleKind::Fermion, self.fermion_momentum(i), params)).collect()
    }
    pub fn boson_energies(&self, params: &DispersionParams) -> Vec<f64> {
        (0..self.n_boson()).map(|j| dispersion(ParticleKind::Boson, self.boson_momentum(j), params)).collect()
    }
}

/// Sampled kernels `G1[i, j] = G1(k_i, q_j)` and `G2[i, j]` over a mode layout.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub layout: ModeLayout,
    pub g1: DMatrix<Complex64>,
    pub g2: DMatrix<Complex64>,
}

impl KernelMatrix {
    pub fn w(&self) -> f64 {
        self.layout.w()
    }

    pub fn values(&self, sharp: Sharp) -> &DMatrix<Complex64> {
        match sharp {
            Sharp::One => &self.g1,
            Sharp::Two => &self.g2,
        }
    }

    /// Same layout, both kernels multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        KernelMatrix { layout: self.layout.clone(), g1: self.g1.map(|v| v * s), g2: self.g2.map(|v| v * s) }
    }
}

/// Sample both kernels on every (fermion cell, boson cell) pair of the full grid.
pub fn kernel_matrix(kspec: &KernelSpec, cspec: &CutoffSpec, params: &DispersionParams, grid: &ModeGrid) -> KernelMatrix {
    kernel_matrix_on(kspec, cspec, params, &ModeLayout::full(grid.clone()))
}

/// Sample both kernels on a mode layout.
pub fn kernel_matrix_on(kspec: &KernelSpec, cspec: &CutoffSpec, params: &DispersionParams, layout: &ModeLayout) -> KernelMatrix {
    let nf = layout.n_fermion();
    let nb = layout.n_boson();
    let rows = par::map_range(nf, |i| {
        let k = layout.fermion_momentum(i);
        (0..nb)
            .map(|j| {
                let q = layout.boson_momentum(j);
                (
                    kernel_value(Sharp::One, k, q, kspec, cspec, params),
                    kernel_value(Sharp::Two, k, q, kspec, cspec, params),
                )
            })
            .collect::<Vec<_>>()
    });
    let g1 = DMatrix::from_fn(nf, nb, |i, j| rows[i][j].0);
    let g2 = DMatrix::from_fn(nf, nb, |i, j| rows[i][j].1);
    KernelMatrix { layout: layout.clone(), g1, g2 }
}

/// Entrywise bound `|coupling| sup|h| g_max / m_b^p` for the given kernel.
pub fn kernel_bound(sharp: Sharp, kspec: &KernelSpec, cspec: &CutoffSpec, params: &DispersionParams, d: usize) -> f64 {
    kspec.coupling.abs() * kspec.h(sharp).sup() * cspec.g_max(d) / params.m_b.powf(kspec.p)
}
