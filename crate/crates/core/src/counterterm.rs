//! Second-order counterterm, the K-constants and the exponent thresholds.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::FromPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::modegrid::{dispersion, f_value, ChiShape, CutoffSpec, DispersionParams, KernelMatrix, KernelSpec, ModeLayout, ParticleKind, Sharp};
use crate::{par, quadrature};

/// `-sum w^2 |G2[i,j]|^2 / (omega_b(k_i) + omega_a(q_j))`.
pub fn e2_discrete(km: &KernelMatrix, params: &DispersionParams) -> f64 {
    e_pair(&km.g2, &km.g2, &km.layout, params)
}

/// `E(F, G) = -sum w^2 |F G| / (omega_b + omega_a)`.
pub fn e_pair(f: &DMatrix<Complex64>, g: &DMatrix<Complex64>, layout: &ModeLayout, params: &DispersionParams) -> f64 {
    let wb = layout.fermion_energies(params);
    let wa = layout.boson_energies(params);
    let w2 = layout.w() * layout.w();
    let mut s = 0.0;
    for (i, eb) in wb.iter().enumerate() {
        for (j, ea) in wa.iter().enumerate() {
            s += w2 * f[(i, j)].norm() * g[(i, j)].norm() / (eb + ea);
        }
    }
    -s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadMethod {
    TensorMidpoint,
    AdaptiveRadial,
    MonteCarlo,
}

/// Controls for the continuum integrals.
///
/// `resolution` is the number of q-cells per axis for the midpoint rule.
/// `inner_order` sets the fixed inner rules: v-cells per axis for the
/// midpoint rule, Gauss order over the v-ball and the q-sphere for the
/// radial rule. `error_target` is relative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub method: QuadMethod,
    pub resolution: usize,
    pub inner_order: usize,
    pub error_target: f64,
    pub max_intervals: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            method: QuadMethod::AdaptiveRadial,
            resolution: 256,
            inner_order: 12,
            error_target: 1e-8,
            max_intervals: 4000,
            samples: 1 << 20,
            seed: 0x5eed,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.error_target > 0.0) {
            return invalid("error target must be positive");
        }
        if self.resolution < 2 || self.inner_order < 1 || self.samples < 2 || self.max_intervals < 1 {
            return invalid("quadrature resolution controls too small");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub converged: bool,
    pub evaluations: u64,
}

impl QuadResult {
    fn map(self, f: impl Fn(f64) -> f64) -> Self {
        QuadResult { value: f(self.value), ..self }
    }
}

/// Weight `W(omega_b(k), omega_a(q))` multiplying `|G(k,q)|^2` in a continuum integral.
pub type Weight<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);

struct Integrand<'a> {
    sharp: Sharp,
    kspec: &'a KernelSpec,
    cspec: &'a CutoffSpec,
    params: &'a DispersionParams,
    d: usize,
    weight: Weight<'a>,
}

impl Integrand<'_> {
    /// Integrand in the variables (v, q) with `k = -+q + v/n`, without the
    /// constant prefactor `lambda^2 n^d`.
    fn eval(&self, v: &[f64], q: &[f64]) -> f64 {
        let fv = f_value(self.cspec.f, v);
        if fv == 0.0 {
            return 0.0;
        }
        let n = self.cspec.n as f64;
        let mut k = [0.0; 3];
        for a in 0..self.d {
            k[a] = match self.sharp {
                Sharp::One => q[a] + v[a] / n,
                Sharp::Two => -q[a] + v[a] / n,
            };
        }
        let k = &k[..self.d];
        let kn = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cut = self.cspec.chi_at(kn) * self.cspec.chi_at(qn);
        if cut == 0.0 {
            return 0.0;
        }
        let h = self.kspec.h(self.sharp).eval(k, q).norm_sqr();
        let wa = dispersion(ParticleKind::Boson, q, self.params);
        let wb = dispersion(ParticleKind::Fermion, k, self.params);
        h * cut * cut * fv * fv * wa.powf(-2.0 * self.kspec.p) * (self.weight)(wb, wa)
    }

    fn prefactor(&self) -> f64 {
        self.kspec.coupling.powi(2) * (self.cspec.n as f64).powi(self.d as i32)
    }

    fn symmetric(&self) -> bool {
        self.kspec.h(self.sharp).is_constant()
    }
}

/// `int int |G_sharp(k,q)|^2 W(omega_b(k), omega_a(q)) dk dq` over R^d x R^d.
pub fn kernel_integral(
    sharp: Sharp,
    weight: Weight<'_>,
    kspec: &KernelSpec,
    cspec: &CutoffSpec,
    params: &DispersionParams,
    d: usize,
    qspec: &QuadratureSpec,
) -> Result<QuadResult> {
    if !(1..=3).contains(&d) {
        return invalid(format!("dimension must be 1, 2 or 3, got {d}"));
    }
    kspec.validate()?;
    cspec.validate()?;
    params.validate()?;
    qspec.validate()?;
    let it = Integrand { sharp, kspec, cspec, params, d, weight };
    if kspec.h(sharp).sup() == 0.0 || kspec.coupling == 0.0 {
        return Ok(QuadResult { value: 0.0, error_estimate: 0.0, converged: true, evaluations: 0 });
    }
    let r = match qspec.method {
        QuadMethod::AdaptiveRadial => radial(&it, qspec),
        QuadMethod::TensorMidpoint => midpoint(&it, qspec),
        QuadMethod::MonteCarlo => monte_carlo(&it, qspec),
    };
    let pre = it.prefactor();
    Ok(QuadResult { value: r.value * pre, error_estimate: r.error_estimate * pre, ..r })
}

/// Continuum counterterm `-int int |G2|^2 / (omega_b(k) + omega_a(q)) dk dq`.
pub fn e2_quadrature(kspec: &KernelSpec, cspec: &CutoffSpec, params: &DispersionParams, d: usize, qspec: &QuadratureSpec) -> Result<QuadResult> {
    let w = |wb: f64, wa: f64| 1.0 / (wb + wa);
    Ok(kernel_integral(Sharp::Two, &w, kspec, cspec, params, d, qspec)?.map(|v| -v))
}

/// Rule over the unit sphere S^{d-1} for q-directions.
fn sphere_rule(d: usize, m: usize, symmetric: bool) -> (Vec<[f64; 3]>, Vec<f64>) {
    use std::f64::consts::PI;
    let area = [2.0, 2.0 * PI, 4.0 * PI][d - 1];
    if symmetric {
        return (vec![[1.0, 0.0, 0.0]], vec![area]);
    }
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    match d {
        1 => {
            pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
            wts = vec![1.0, 1.0];
        }
        2 => {
            let nt = 4 * m;
            for t in 0..nt {
                let th = 2.0 * PI * (t as f64 + 0.5) / nt as f64;
                pts.push([th.cos(), th.sin(), 0.0]);
                wts.push(2.0 * PI / nt as f64);
            }
        }
        _ => {
            let (c, wc) = quadrature::gauss_legendre(2 * m);
            let np = 4 * m;
            for (ct, wct) in c.iter().zip(&wc) {
                let st = (1.0 - ct * ct).sqrt();
                for t in 0..np {
                    let ph = 2.0 * PI * (t as f64 + 0.5) / np as f64;
                    pts.push([st * ph.cos(), st * ph.sin(), *ct]);
                    wts.push(wct * 2.0 * PI / np as f64);
                }
            }
        }
    }
    (pts, wts)
}

/// Fixed inner rules over the v-ball, reused for every shell point.
struct InnerRules {
    m: usize,
    s: (Vec<f64>, Vec<f64>),
    c: (Vec<f64>, Vec<f64>),
    line: (Vec<f64>, Vec<f64>),
}

impl InnerRules {
    fn new(m: usize) -> Self {
        InnerRules { m, s: quadrature::gauss_legendre(m), c: quadrature::gauss_legendre(m), line: quadrature::gauss_legendre(2 * m) }
    }
}

fn mapped<'a>(rule: &'a (Vec<f64>, Vec<f64>), a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + 'a {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    rule.0.iter().zip(&rule.1).map(move |(x, w)| (c + h * x, w * h))
}

/// Two unit vectors completing `e` to an orthonormal frame.
fn frame(e: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let t = if e[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = t[0] * e[0] + t[1] * e[1] + t[2] * e[2];
    let mut u = [t[0] - dot * e[0], t[1] - dot * e[1], t[2] - dot * e[2]];
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    u.iter_mut().for_each(|x| *x /= nu);
    let w = [e[1] * u[2] - e[2] * u[1], e[2] * u[0] - e[0] * u[2], e[0] * u[1] - e[1] * u[0]];
    (u, w)
}

/// Integral over v of the integrand at fixed q = r * dir. With an indicator
/// chi the region |k| <= R is cut out of the v-ball exactly, so the rules only
/// ever see smooth integrands.
fn inner_integral(it: &Integrand<'_>, rules: &InnerRules, r: f64, dir: [f64; 3]) -> f64 {
    use std::f64::consts::PI;
    let d = it.d;
    let n = it.cspec.n as f64;
    let big_r = it.cspec.lambda * it.cspec.r_chi();
    let clip = it.cspec.chi == ChiShape::Indicator;
    let q = [r * dir[0], r * dir[1], r * dir[2]];
    // v along e shortens k.
    let sign = match it.sharp {
        Sharp::One => -1.0,
        Sharp::Two => 1.0,
    };
    let e = [sign * dir[0], sign * dir[1], sign * dir[2]];
    // Lowest admissible cos(angle(v, e)) at |v| = s.
    let c0 = |s: f64| -> f64 {
        if !clip {
            return -1.0;
        }
        let num = r * r + s * s / (n * n) - big_r * big_r;
        let den = 2.0 * r * s / n;
        if den == 0.0 {
            if num <= 0.0 {
                -1.0
            } else {
                f64::INFINITY
            }
        } else {
            (num / den).max(-1.0)
        }
    };
    let at = |v: [f64; 3]| it.eval(&v[..d], &q[..d]);
    if d == 1 {
        // k = c + v/n along the line
        let (lo, hi) = if clip {
            let c = match it.sharp {
                Sharp::One => q[0],
                Sharp::Two => -q[0],
            };
            ((n * (-big_r - c)).max(-1.0), (n * (big_r - c)).min(1.0))
        } else {
            (-1.0, 1.0)
        };
        if hi <= lo {
            return 0.0;
        }
        return mapped(&rules.line, lo, hi).map(|(x, w)| w * at([x, 0.0, 0.0])).sum();
    }
    // Split the v-radius where the clipped cap starts.
    let mut s_breaks = vec![0.0];
    let kink = n * (big_r - r);
    if clip && kink > 0.0 && kink < 1.0 {
        s_breaks.push(kink);
    }
    s_breaks.push(1.0);
    let (u, w3) = if d == 2 { ([-e[1], e[0], 0.0], [0.0; 3]) } else { frame(e) };
    let mut total = 0.0;
    for sb in s_breaks.windows(2) {
        for (s, ws) in mapped(&rules.s, sb[0], sb[1]) {
            let cmin = c0(s);
            if cmin >= 1.0 {
                continue;
            }
            let mut acc = 0.0;
            if d == 2 {
                let hw = cmin.acos();
                if cmin <= -1.0 {
                    let nt = 2 * rules.m;
                    for t in 0..nt {
                        let th = 2.0 * PI * (t as f64 + 0.5) / nt as f64;
                        let (c, sn) = (th.cos(), th.sin());
                        acc += at([s * (c * e[0] + sn * u[0]), s * (c * e[1] + sn * u[1]), 0.0]) * 2.0 * PI / nt as f64;
                    }
                } else {
                    for (th, wt) in mapped(&rules.line, -hw, hw) {
                        let (c, sn) = (th.cos(), th.sin());
                        acc += wt * at([s * (c * e[0] + sn * u[0]), s * (c * e[1] + sn * u[1]), 0.0]);
                    }
                }
                total += ws * s * acc;
            } else {
                let np = 2 * rules.m;
                for (ct, wc) in mapped(&rules.c, cmin, 1.0) {
                    let st = (1.0 - ct * ct).max(0.0).sqrt();
                    for t in 0..np {
                        let ph = 2.0 * PI * (t as f64 + 0.5) / np as f64;
                        let (a, b) = (st * ph.cos(), st * ph.sin());
                        let v = [
                            s * (ct * e[0] + a * u[0] + b * w3[0]),
                            s * (ct * e[1] + a * u[1] + b * w3[1]),
                            s * (ct * e[2] + a * u[2] + b * w3[2]),
                        ];
                        acc += wc * at(v) * 2.0 * PI / np as f64;
                    }
                }
                total += ws * s * s * acc;
            }
        }
    }
    total
}

const RADIAL_ESCALATIONS: usize = 4;
const RADIAL_MAX_ORDER: usize = 64;

fn radial_pass(it: &Integrand<'_>, qspec: &QuadratureSpec, m: usize) -> (quadrature::Adaptive, usize) {
    let d = it.d;
    let rules = InnerRules::new(m);
    let (sp, sw) = sphere_rule(d, m, it.symmetric());
    let rmax = it.cspec.lambda * it.cspec.r_chi();
    let shell = |r: f64| -> f64 {
        let acc: f64 = sp.iter().zip(&sw).map(|(dir, dw)| dw * inner_integral(it, &rules, r, *dir)).sum();
        acc * r.powi(d as i32 - 1)
    };
    // Below rmax - 1/n the UV cutoff on k is inactive and the shell integrand is
    // smooth; the last strip carries the kinks of the clipped region.
    let edge = rmax - 1.0 / it.cspec.n as f64;
    let breaks: Vec<f64> = if edge > 0.0 { vec![0.0, edge, rmax] } else { vec![0.0, rmax] };
    let inner_pts = match d {
        1 => 2 * m,
        2 => 2 * m * m,
        _ => 2 * m * m * m,
    } * sp.len();
    (quadrature::adaptive_gk_breaks(|rs| par::map(rs, |&r| shell(r)), &breaks, 4, 1e-300, qspec.error_target, qspec.max_intervals), inner_pts)
}

/// Raises the inner order by half until two successive orders agree.
fn radial(it: &Integrand<'_>, qspec: &QuadratureSpec) -> QuadResult {
    let mut m = qspec.inner_order;
    let (mut a, pa) = radial_pass(it, qspec, m);
    let mut evaluations = 15 * (a.intervals * pa) as u64;
    for step in 0..=RADIAL_ESCALATIONS {
        m += m.div_ceil(2);
        let (b, pb) = radial_pass(it, qspec, m);
        evaluations += 15 * (b.intervals * pb) as u64;
        let gap = (a.value - b.value).abs();
        let converged = a.converged && b.converged && gap <= qspec.error_target * b.value.abs().max(1e-300) * 10.0;
        if converged || m > RADIAL_MAX_ORDER || step == RADIAL_ESCALATIONS {
            return QuadResult { value: b.value, error_estimate: b.error + gap, converged, evaluations };
        }
        a = b;
    }
    unreachable!("the last escalation returns")
}

fn midpoint_sum(it: &Integrand<'_>, nq: usize, nv: usize) -> f64 {
    let d = it.d;
    let rmax = it.cspec.lambda * it.cspec.r_chi();
    let hq = 2.0 * rmax / nq as f64;
    let hv = 2.0 / nv as f64;
    let cells = |n: usize| n.pow(d as u32);
    let coord = |flat: usize, n: usize, lo: f64, h: f64| {
        let mut out = [0.0; 3];
        let mut rem = flat;
        for a in (0..d).rev() {
            out[a] = lo + h * ((rem % n) as f64 + 0.5);
            rem /= n;
        }
        out
    };
    let vs: Vec<[f64; 3]> = (0..cells(nv)).map(|f| coord(f, nv, -1.0, hv)).filter(|v| v.iter().map(|x| x * x).sum::<f64>() <= 1.0).collect();
    let rows = par::map_range(cells(nq), |fq| {
        let q = coord(fq, nq, -rmax, hq);
        vs.iter().map(|v| it.eval(&v[..d], &q[..d])).sum::<f64>()
    });
    rows.iter().sum::<f64>() * hq.powi(d as i32) * hv.powi(d as i32)
}

fn midpoint(it: &Integrand<'_>, qspec: &QuadratureSpec) -> QuadResult {
    let n = qspec.resolution;
    let m = qspec.inner_order;
    let coarse = midpoint_sum(it, n / 2, m.div_ceil(2).max(1));
    let fine = midpoint_sum(it, n, m);
    let err = (fine - coarse).abs();
    QuadResult {
        value: fine,
        error_estimate: err,
        converged: err <= qspec.error_target * fine.abs(),
        evaluations: ((n.pow(it.d as u32) * m.pow(it.d as u32)) + (n / 2).pow(it.d as u32) * m.div_ceil(2).pow(it.d as u32)) as u64,
    }
}

fn monte_carlo(it: &Integrand<'_>, qspec: &QuadratureSpec) -> QuadResult {
    let d = it.d;
    let rmax = it.cspec.lambda * it.cspec.r_chi();
    let chunk = 1 << 14;
    let nchunks = qspec.samples.div_ceil(chunk);
    let sums = par::map_range(nchunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(qspec.seed.wrapping_add(c as u64));
        let count = chunk.min(qspec.samples - c * chunk);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..count {
            let mut v = [0.0; 3];
            let mut q = [0.0; 3];
            for a in 0..d {
                v[a] = rng.gen_range(-1.0..1.0);
                q[a] = rng.gen_range(-rmax..rmax);
            }
            let x = it.eval(&v[..d], &q[..d]);
            s += x;
            s2 += x * x;
        }
        (s, s2, count)
    });
    let (s, s2, n) = sums.iter().fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let vol = (2.0f64).powi(d as i32) * (2.0 * rmax).powi(d as i32);
    let nf = n as f64;
    let mean = s / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    let err = vol * (var / nf).sqrt();
    QuadResult { value: vol * mean, error_estimate: err, converged: err <= qspec.error_target * (vol * mean).abs(), evaluations: n as u64 }
}

fn check_z(z: Complex64) -> Result<f64> {
    if !(z.re < -1.0) {
        return Err(Error::OutsideHalfPlane(format!("Re z = {} must be below -1", z.re)));
    }
    Ok(z.re.abs())
}

fn weighted_sum(f: &DMatrix<Complex64>, layout: &ModeLayout, weight: impl Fn(f64, f64) -> f64, params: &DispersionParams) -> f64 {
    let wb = layout.fermion_energies(params);
    let wa = layout.boson_energies(params);
    let w2 = layout.w() * layout.w();
    let mut s = 0.0;
    for (i, eb) in wb.iter().enumerate() {
        for (j, ea) in wa.iter().enumerate() {
            let x = f[(i, j)].norm_sqr();
            if x != 0.0 {
                s += w2 * x * weight(*eb, *ea);
            }
        }
    }
    s
}

/// Weight of the K1 integral.
pub fn k1_weight(beta: f64, abs_re_z: f64) -> impl Fn(f64, f64) -> f64 {
    move |wb, _| 1.0 / ((wb + abs_re_z).powf(2.0 * beta - 1.0) * wb)
}

/// Weight of the A-factor in K2.
pub fn a_weight(beta: f64, abs_re_z: f64) -> impl Fn(f64, f64) -> f64 {
    move |_, wa| 1.0 / (wa * (wa + abs_re_z).powf(beta))
}

/// Weight of one factor of K3.
pub fn k3_weight(gamma: f64, abs_re_z: f64) -> impl Fn(f64, f64) -> f64 {
    move |wb, _| 1.0 / (wb * (wb + abs_re_z).powf(1.0 / 3.0 + 2.0 * gamma / 3.0))
}

/// `K1_{z,beta}(F) = (sum w^2 |F|^2 / ([omega_b(k) + |Re z|]^(2 beta - 1) omega_b(k)))^(1/2)`.
pub fn k1_constant(z: Complex64, beta: f64, f: &DMatrix<Complex64>, layout: &ModeLayout, params: &DispersionParams) -> Result<f64> {
    let x = check_z(z)?;
    if !(0.5..=1.0).contains(&beta) {
        return invalid(format!("beta = {beta} outside [1/2, 1]"));
    }
    Ok(weighted_sum(f, layout, k1_weight(beta, x), params).sqrt())
}

/// `K1` with the boson dispersion in place of the fermion one:
/// `(sum w^2 |F|^2 / ([omega_a(q) + |Re z|]^(2 beta - 1) omega_a(q)))^(1/2)`.
pub fn k1_boson_form(z: Complex64, beta: f64, f: &DMatrix<Complex64>, layout: &ModeLayout, params: &DispersionParams) -> Result<f64> {
    let x = check_z(z)?;
    if !(0.5..=1.0).contains(&beta) {
        return invalid(format!("beta = {beta} outside [1/2, 1]"));
    }
    Ok(weighted_sum(f, layout, |_, wa| 1.0 / ((wa + x).powf(2.0 * beta - 1.0) * wa), params).sqrt())
}

/// `A_{z,beta}(F) = (sum w^2 |F|^2 / (omega_a(q) [omega_a(q) + |Re z|]^beta))^(1/2)`.
pub fn a_factor(z: Complex64, beta: f64, f: &DMatrix<Complex64>, layout: &ModeLayout, params: &DispersionParams) -> Result<f64> {
    let x = check_z(z)?;
    if !(0.0..=2.0).contains(&beta) {
        return invalid(format!("beta = {beta} outside [0, 2]"));
    }
    Ok(weighted_sum(f, layout, a_weight(beta, x), params).sqrt())
}

/// `K2_{z,beta}(F, G) = A_{z,beta}(F) A_{z,beta}(G)`.
pub fn k2_constant(z: Complex64, beta: f64, f: &DMatrix<Complex64>, g: &DMatrix<Complex64>, layout: &ModeLayout, params: &DispersionParams) -> Result<f64> {
    Ok(a_factor(z, beta, f, layout, params)? * a_factor(z, beta, g, layout, params)?)
}

/// `K3_{z,gamma}(F1, F2, F3)`, a product of three fermion-weighted norms.
pub fn k3_constant(
    z: Complex64,
    gamma: f64,
    fs: [&DMatrix<Complex64>; 3],
    layout: &ModeLayout,
    params: &DispersionParams,
) -> Result<f64> {
    let x = check_z(z)?;
    if !(0.0..=1.0).contains(&gamma) {
        return invalid(format!("gamma = {gamma} outside [0, 1]"));
    }
    Ok(fs.iter().map(|f| weighted_sum(f, layout, k3_weight(gamma, x), params).sqrt()).product())
}

/// Continuum `K1_{z,beta}(G_sharp)` from [`kernel_integral`].
pub fn k1_continuum(
    z: Complex64,
    beta: f64,
    sharp: Sharp,
    kspec: &KernelSpec,
    cspec: &CutoffSpec,
    params: &DispersionParams,
    d: usize,
    qspec: &QuadratureSpec,
) -> Result<QuadResult> {
    let x = check_z(z)?;
    if !(0.5..=1.0).contains(&beta) {
        return invalid(format!("beta = {beta} outside [1/2, 1]"));
    }
    let w = k1_weight(beta, x);
    let r = kernel_integral(sharp, &w, kspec, cspec, params, d, qspec)?;
    let v = r.value.max(0.0).sqrt();
    // first-order propagation of the error through the square root
    let e = if v > 0.0 { r.error_estimate / (2.0 * v) } else { r.error_estimate.sqrt() };
    Ok(QuadResult { value: v, error_estimate: e, ..r })
}

/// Exponent thresholds for uniform boundedness of the K-constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub d: usize,
    pub p: f64,
    pub beta_min_k1: f64,
    pub beta_min_k2: f64,
    pub beta_min_k3: f64,
    pub scheme_feasible: bool,
}

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Thresholds `d/2 - p`, `d - 2p - 1`, `3d/2 - 3p - 2`, checked exactly against
/// the exponents 3/4, 1/2, 1/4 used by the series.
pub fn thresholds(d: usize, p: f64) -> Result<ThresholdReport> {
    if !(1..=3).contains(&d) {
        return invalid(format!("dimension must be 1, 2 or 3, got {d}"));
    }
    if !(p >= 0.0) || !p.is_finite() {
        return invalid(format!("p must be non-negative and finite, got {p}"));
    }
    let pr = BigRational::from_f64(p).expect("finite");
    let dr = rat(d as i64, 1);
    let t1 = &dr / rat(2, 1) - &pr;
    let t2 = &dr - &pr * rat(2, 1) - rat(1, 1);
    let t3 = &dr * rat(3, 2) - &pr * rat(3, 1) - rat(2, 1);
    let feasible = rat(3, 4) > t1 && rat(1, 2) > t2 && rat(1, 4) > t3;
    let to_f = |r: &BigRational| -> f64 {
        use num_traits::ToPrimitive;
        r.to_f64().unwrap_or(f64::NAN)
    };
    Ok(ThresholdReport { d, p, beta_min_k1: to_f(&t1), beta_min_k2: to_f(&t2), beta_min_k3: to_f(&t3), scheme_feasible: feasible })
}

/// Least-squares fit `y = a + b log x`; returns (a, b, R^2).
pub fn log_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    linear_fit(&lx, ys)
}

/// Least-squares fit `y = a + b x`; returns (a, b, R^2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}
