//! TOML run configuration. Every field has a default, so an empty file is the
//! physical case d = 1, p = 1/2 with unit masses.

use serde::{Deserialize, Serialize};
use uvlab::counterterm::QuadratureSpec;
use uvlab::estimates::{tilted_kernels, DEFAULT_BATCH, DEFAULT_SEED};
use uvlab::modegrid::{ChiShape, Coefficient, CutoffSpec, DispersionParams, FShape, KernelSpec};
use uvlab::spectra::{ModePolicy, SweepConfig, DEFAULT_PT_LAMBDAS};
use uvlab::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HChoice {
    /// `h1 = h2 = 1`.
    #[default]
    One,
    /// `h1 = 0`, `h2 = 1`.
    G2Only,
    /// Smooth momentum-dependent coefficients that break reflection symmetry.
    Tilted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub d: usize,
    pub p: f64,
    pub m_b: f64,
    pub m_f: f64,
    pub h: HChoice,
    pub lambda: f64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock { d: 1, p: 0.5, m_b: 1.0, m_f: 1.0, h: HChoice::One, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffsBlock {
    pub lambda_list: Vec<f64>,
    pub chi: ChiShape,
    pub n: u32,
    pub f: FShape,
}

impl Default for CutoffsBlock {
    fn default() -> Self {
        CutoffsBlock { lambda_list: vec![1.0, 2.0, 3.0, 4.0], chi: ChiShape::Indicator, n: 1, f: FShape::BallIndicator }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationBlock {
    pub q_max: f64,
    pub cells_per_axis: usize,
    pub boson_cap: usize,
    pub modes: ModePolicy,
}

impl Default for DiscretizationBlock {
    fn default() -> Self {
        DiscretizationBlock { q_max: 4.0, cells_per_axis: 6, boson_cap: 1, modes: ModePolicy::Full }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub tol: f64,
    /// Spectral parameter for the series; derived from `C` when absent.
    pub z: Option<f64>,
    pub raw_order: usize,
    pub depth: usize,
    pub enumerate_k: usize,
    pub pt_lambdas: Vec<f64>,
    pub audit_batch: usize,
    pub hidden_study: bool,
    pub distances: bool,
    pub seed: u64,
    pub quadrature: QuadratureSpec,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            tol: 1e-9,
            z: None,
            raw_order: 24,
            depth: 6,
            enumerate_k: 6,
            pt_lambdas: DEFAULT_PT_LAMBDAS.to_vec(),
            audit_batch: DEFAULT_BATCH,
            hidden_study: true,
            distances: false,
            seed: DEFAULT_SEED,
            quadrature: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: "uvlab-out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub cutoffs: CutoffsBlock,
    pub discretization: DiscretizationBlock,
    pub solver: SolverBlock,
    pub output: OutputBlock,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let m = &self.model;
        if !(1..=3).contains(&m.d) {
            return Err(format!("model.d must be 1, 2 or 3, got {}", m.d));
        }
        for (name, v) in [("model.p", m.p), ("model.m_b", m.m_b), ("model.m_f", m.m_f)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(m.m_b > 0.0) {
            return Err("model.m_b must be positive".into());
        }
        if !m.lambda.is_finite() {
            return Err("model.lambda must be finite".into());
        }
        let c = &self.cutoffs;
        if c.lambda_list.is_empty() {
            return Err("cutoffs.lambda_list is empty".into());
        }
        if c.lambda_list.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err("cutoffs.lambda_list entries must be positive".into());
        }
        if c.lambda_list.windows(2).any(|w| !(w[0] < w[1])) {
            return Err("cutoffs.lambda_list must be strictly increasing".into());
        }
        if c.n == 0 {
            return Err("cutoffs.n must be positive".into());
        }
        let dz = &self.discretization;
        let need = c.lambda_list[c.lambda_list.len() - 1] * self.cutoff_spec(1.0).r_chi();
        if !(dz.q_max >= need) {
            return Err(format!("discretization.q_max = {} is below max(lambda_list) * r_chi = {need}", dz.q_max));
        }
        if dz.cells_per_axis == 0 {
            return Err("discretization.cells_per_axis must be positive".into());
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err("solver.tol must be positive".into());
        }
        if let Some(z) = s.z {
            if !(z < 0.0) {
                return Err(format!("solver.z must be negative, got {z}"));
            }
        }
        if s.pt_lambdas.len() < 2 || s.pt_lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err("solver.pt_lambdas needs at least two positive values".into());
        }
        if !(s.quadrature.error_target > 0.0) {
            return Err("solver.quadrature.error_target must be positive".into());
        }
        if s.audit_batch == 0 {
            return Err("solver.audit_batch must be positive".into());
        }
        Ok(())
    }

    pub fn params(&self) -> DispersionParams {
        DispersionParams { m_b: self.model.m_b, m_f: self.model.m_f }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        let base = match self.model.h {
            HChoice::One => KernelSpec::default(),
            HChoice::G2Only => KernelSpec { h1: Coefficient::zero(), ..KernelSpec::default() },
            HChoice::Tilted => tilted_kernels(),
        };
        KernelSpec { p: self.model.p, coupling: self.model.lambda, ..base }
    }

    pub fn cutoff_spec(&self, lambda_cut: f64) -> CutoffSpec {
        CutoffSpec { lambda: lambda_cut, chi: self.cutoffs.chi, n: self.cutoffs.n, f: self.cutoffs.f }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            d: self.model.d,
            kspec: self.kernel_spec(),
            cspec: self.cutoff_spec(self.cutoffs.lambda_list[0]),
            params: self.params(),
            q_max: self.discretization.q_max,
            cells: self.discretization.cells_per_axis,
            modes: self.discretization.modes,
            boson_cap: self.discretization.boson_cap,
            tol: self.solver.tol,
        }
    }

    pub fn z(&self) -> Option<Complex64> {
        self.solver.z.map(|z| Complex64::new(z, 0.0))
    }
}
