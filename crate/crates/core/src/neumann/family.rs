//! Resolvent-family checks for a map `z -> R(z)` with `R(z) ~ (H - z)^-1`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::linalg;

/// Maximal deviations from the resolvent axioms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    /// `max ||R(z)^* - R(conj z)||` over `z1`, `z2`.
    pub adjoint_deviation: f64,
    /// `||R(z1) - R(z2) - (z1 - z2) R(z1) R(z2)||`.
    pub identity_deviation: f64,
    /// Real parts of the limit schedule.
    pub schedule: Vec<f64>,
    /// `max_psi ||-z R(z) psi - psi|| / ||psi||` at each schedule point.
    pub limit_deviations: Vec<f64>,
    pub limit_decreasing: bool,
}

/// Schedule `Re z = re * 10^s` for `s = 0, 1, 2`.
pub fn default_schedule(re: f64) -> Vec<f64> {
    vec![re, 10.0 * re, 100.0 * re]
}

/// Vacuum, normalized all-ones and one seeded random unit vector.
pub fn default_probes(dim: usize, seed: u64) -> Vec<DVector<Complex64>> {
    let mut vac = DVector::zeros(dim);
    vac[0] = Complex64::new(1.0, 0.0);
    let ones = DVector::from_element(dim, Complex64::new(1.0 / (dim as f64).sqrt(), 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = DVector::from_fn(dim, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let rn = r.norm();
    vec![vac, ones, r / Complex64::new(rn, 0.0)]
}

/// Check `R(z)^* = R(conj z)`, the resolvent identity and `-z R(z) -> 1` strongly.
/// `schedule` lists real parts for the limit check; the imaginary part of `z1` is kept.
pub fn resolvent_family_check<P>(z1: Complex64, z2: Complex64, provider: P, probes: &[DVector<Complex64>], schedule: &[f64]) -> Result<FamilyReport>
where
    P: Fn(Complex64) -> Result<DMatrix<Complex64>>,
{
    let r1 = provider(z1)?;
    let r1c = if z1.im == 0.0 { r1.clone() } else { provider(z1.conj())? };
    let mut adjoint_deviation = linalg::op_norm_value(&(r1.adjoint() - &r1c));
    let r2 = if z2 == z1 { r1.clone() } else { provider(z2)? };
    if z2 != z1 {
        let r2c = if z2.im == 0.0 { r2.clone() } else { provider(z2.conj())? };
        adjoint_deviation = adjoint_deviation.max(linalg::op_norm_value(&(r2.adjoint() - r2c)));
    }
    let identity = &r1 - &r2 - (&r1 * &r2) * (z1 - z2);
    let identity_deviation = linalg::op_norm_value(&identity);
    let mut limit_deviations = Vec::with_capacity(schedule.len());
    for &re in schedule {
        let z = Complex64::new(re, z1.im);
        let r = provider(z)?;
        let mut worst: f64 = 0.0;
        for psi in probes {
            let n = psi.norm();
            if n == 0.0 {
                continue;
            }
            let v = (&r * psi) * (-z) - psi;
            worst = worst.max(v.norm() / n);
        }
        limit_deviations.push(worst);
    }
    let limit_decreasing = limit_deviations.windows(2).all(|w| w[1] < w[0]);
    Ok(FamilyReport { adjoint_deviation, identity_deviation, schedule: schedule.to_vec(), limit_deviations, limit_decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hermitian(n: usize) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
    }

    #[test]
    fn exact_inverse_satisfies_axioms() {
        let h = hermitian(12);
        let provider = |z: Complex64| linalg::dense_resolvent(&h, 0.0, z);
        let z1 = Complex64::new(-5.0, 0.7);
        let z2 = Complex64::new(-3.0, -1.1);
        let rep = resolvent_family_check(z1, z2, provider, &default_probes(12, 1), &default_schedule(-5.0)).unwrap();
        assert!(rep.adjoint_deviation < 1e-10);
        assert!(rep.identity_deviation < 1e-10);
        assert!(rep.limit_decreasing, "{:?}", rep.limit_deviations);
    }

    #[test]
    fn equal_points_degenerate() {
        let h = hermitian(5);
        let z = Complex64::new(-2.0, 0.0);
        let rep = resolvent_family_check(z, z, |z| linalg::dense_resolvent(&h, 0.0, z), &default_probes(5, 2), &[-2.0]).unwrap();
        // (z1 - z2) = 0 and R(z1) - R(z2) = 0 exactly
        assert_eq!(rep.identity_deviation, 0.0);
    }
}
