//! One-dimensional quadrature rules: Gauss-Legendre and adaptive Gauss-Kronrod.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// The 15 Kronrod abscissae of an interval, in the order used by [`gk15_combine`].
pub fn gk15_nodes(a: f64, b: f64) -> [f64; 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [0.0; 15];
    for j in 0..7 {
        out[2 * j] = c - h * XGK[j];
        out[2 * j + 1] = c + h * XGK[j];
    }
    out[14] = c;
    out
}

/// Combine integrand values at [`gk15_nodes`] into (Kronrod estimate, error estimate).
pub fn gk15_combine(a: f64, b: f64, f: &[f64; 15]) -> (f64, f64) {
    let h = 0.5 * (b - a);
    let mut k = WGK[7] * f[14];
    let mut g = WG[3] * f[14];
    for j in 0..7 {
        let s = f[2 * j] + f[2 * j + 1];
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adaptive {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive G7/K15 integration of `f` over [a, b], starting from `initial`
/// equal pieces. Each round evaluates the integrand on all nodes of a batch
/// via `eval`, which lets callers parallelise over nodes.
pub fn adaptive_gk<E>(eval: E, a: f64, b: f64, initial: usize, abs_tol: f64, rel_tol: f64, max_intervals: usize) -> Adaptive
where
    E: Fn(&[f64]) -> Vec<f64>,
{
    adaptive_gk_breaks(eval, &[a, b], initial, abs_tol, rel_tol, max_intervals)
}

/// As [`adaptive_gk`], with the initial partition refining the segments between
/// consecutive `breaks` into `per_segment` equal pieces each.
pub fn adaptive_gk_breaks<E>(eval: E, breaks: &[f64], per_segment: usize, abs_tol: f64, rel_tol: f64, max_intervals: usize) -> Adaptive
where
    E: Fn(&[f64]) -> Vec<f64>,
{
    let per = per_segment.max(1);
    let mut bounds = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let h = (b - a) / per as f64;
        for i in 0..per {
            bounds.push((a + h * i as f64, if i + 1 == per { b } else { a + h * (i + 1) as f64 }));
        }
    }
    let mut heap: BinaryHeap<Piece> = eval_pieces(&eval, &bounds).into_iter().collect();
    loop {
        let (value, error) = totals(&heap);
        let target = abs_tol.max(rel_tol * value.abs());
        if error <= target {
            return Adaptive { value, error, converged: true, intervals: heap.len() };
        }
        if heap.len() >= max_intervals {
            return Adaptive { value, error, converged: false, intervals: heap.len() };
        }
        // Split the worst eighth of the pieces in one batch.
        let nsplit = (heap.len() / 8).max(1).min(max_intervals - heap.len());
        let mut split = Vec::with_capacity(2 * nsplit);
        for _ in 0..nsplit {
            let p = heap.pop().expect("non-empty");
            let m = 0.5 * (p.a + p.b);
            split.push((p.a, m));
            split.push((m, p.b));
        }
        heap.extend(eval_pieces(&eval, &split));
    }
}

fn totals(heap: &BinaryHeap<Piece>) -> (f64, f64) {
    // Sum in interval order so the total does not depend on heap layout.
    let mut v: Vec<&Piece> = heap.iter().collect();
    v.sort_by(|x, y| x.a.total_cmp(&y.a));
    v.iter().fold((0.0, 0.0), |(s, e), p| (s + p.value, e + p.error))
}

fn eval_pieces<E: Fn(&[f64]) -> Vec<f64>>(eval: &E, bounds: &[(f64, f64)]) -> Vec<Piece> {
    let mut nodes = Vec::with_capacity(15 * bounds.len());
    for &(a, b) in bounds {
        nodes.extend_from_slice(&gk15_nodes(a, b));
    }
    let vals = eval(&nodes);
    bounds
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let mut f = [0.0; 15];
            f.copy_from_slice(&vals[15 * i..15 * i + 15]);
            let (value, error) = gk15_combine(a, b, &f);
            Piece { a, b, value, error }
        })
        .collect()
}
