//! Admissible sequences over the catalog, graded by total kernel weight.

use std::fmt;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use super::catalog::{letter_weight, GSetCatalog, LETTER_E2};
use crate::error::{invalid, Result};

pub const DEFAULT_DEPTH_LIMIT: usize = 12;

/// One factor of a sequence: set index `j` and variant index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Term {
    pub j: u8,
    pub variant: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdmissibleSequence {
    pub terms: Vec<Term>,
    pub weight: usize,
}

impl AdmissibleSequence {
    pub fn empty() -> Self {
        AdmissibleSequence { terms: Vec::new(), weight: 0 }
    }

    /// Whether the sequence satisfies adjacency and exponent rules under `cat`.
    pub fn is_admissible(&self, cat: &GSetCatalog) -> bool {
        let weight_ok = self.terms.iter().map(|t| cat.n_op(t.j)).sum::<usize>() == self.weight;
        let pairs_ok = self.terms.windows(2).all(|w| cat.allowed(w[0].j, w[1].j));
        let ends_ok = match (self.terms.first(), self.terms.last()) {
            (Some(f), Some(l)) => cat.exponents(f.j).0 <= 1.0 && cat.exponents(l.j).1 <= 1.0,
            _ => true,
        };
        let variants_ok = self.terms.iter().all(|t| (1..=7).contains(&t.j) && t.variant < cat.set(t.j).variants.len());
        weight_ok && pairs_ok && ends_ok && variants_ok
    }

    /// Raw words obtained by expanding every variant, or None for non-canonical variants.
    pub fn raw_words(&self, cat: &GSetCatalog) -> Option<Vec<Vec<u8>>> {
        let mut out = vec![Vec::new()];
        for t in &self.terms {
            let pieces = cat.set(t.j).variants[t.variant].raw_words()?;
            let mut next = Vec::with_capacity(out.len() * pieces.len());
            for prefix in &out {
                for p in &pieces {
                    let mut w = prefix.clone();
                    w.extend_from_slice(p);
                    next.push(w);
                }
            }
            out = next;
        }
        Some(out)
    }
}

impl fmt::Display for AdmissibleSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(|t| format!("{}.{}", t.j, t.variant)).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// All admissible sequences of total weight `k`, in lexicographic order of
/// `(j, variant)` pairs. Rejects `k` above [`DEFAULT_DEPTH_LIMIT`].
pub fn enumerate(cat: &GSetCatalog, k: usize) -> Result<Vec<AdmissibleSequence>> {
    enumerate_with_limit(cat, k, DEFAULT_DEPTH_LIMIT)
}

pub fn enumerate_with_limit(cat: &GSetCatalog, k: usize, limit: usize) -> Result<Vec<AdmissibleSequence>> {
    if k > limit {
        return invalid(format!("weight {k} exceeds depth limit {limit}"));
    }
    let mut out = Vec::new();
    let mut stack = Vec::new();
    extend(cat, k, &mut stack, &mut out);
    Ok(out)
}

fn extend(cat: &GSetCatalog, remaining: usize, stack: &mut Vec<Term>, out: &mut Vec<AdmissibleSequence>) {
    if remaining == 0 {
        let weight = stack.iter().map(|t| cat.n_op(t.j)).sum();
        out.push(AdmissibleSequence { terms: stack.clone(), weight });
        return;
    }
    for set in cat.sets() {
        if set.n_op > remaining {
            continue;
        }
        if let Some(prev) = stack.last() {
            if !cat.allowed(prev.j, set.j) {
                continue;
            }
        }
        for v in 0..set.variants.len() {
            stack.push(Term { j: set.j, variant: v });
            extend(cat, remaining - set.n_op, stack, out);
            stack.pop();
        }
    }
}

/// Number of admissible sequences of weight `k` (variant level), by dynamic programming.
pub fn count(cat: &GSetCatalog, k: usize) -> BigInt {
    shadow_dp(cat, k, |_, _| 1)[k].clone()
}

/// Per-weight sums over sequences of the product of `mult(j, variant)`, for weights 0..=k_max.
fn shadow_dp(cat: &GSetCatalog, k_max: usize, mult: impl Fn(u8, usize) -> u64) -> Vec<BigInt> {
    // ends[w][j-1]: weighted count of sequences of weight w ending in set j
    let per_set: Vec<BigInt> = cat.sets().iter().map(|s| (0..s.variants.len()).map(|v| BigInt::from(mult(s.j, v))).sum()).collect();
    let mut ends = vec![vec![BigInt::from(0); 7]; k_max + 1];
    for w in 1..=k_max {
        for s in cat.sets() {
            if s.n_op > w {
                continue;
            }
            let rest = w - s.n_op;
            let mut prefix = if rest == 0 { BigInt::from(1) } else { BigInt::from(0) };
            if rest > 0 {
                for p in cat.sets() {
                    if cat.allowed(p.j, s.j) {
                        prefix += &ends[rest][p.j as usize - 1];
                    }
                }
            }
            ends[w][s.j as usize - 1] = prefix * &per_set[s.j as usize - 1];
        }
    }
    (0..=k_max).map(|w| if w == 0 { BigInt::from(1) } else { ends[w].iter().sum() }).collect()
}

/// Scalar shadow of the reordered series: each variant becomes `m x^{n_Op}` where
/// `m` is the number of raw words it collects. Coefficients of `x^0..x^k_max`.
pub fn shadow_reordered(cat: &GSetCatalog, k_max: usize) -> Vec<BigInt> {
    shadow_dp(cat, k_max, |j, v| cat.set(j).variants[v].multiplicity() as u64)
}

/// Scalar shadow of the raw series `sum_m (4x + x^2)^m`: coefficients of `x^0..x^k_max`.
pub fn shadow_raw(k_max: usize) -> Vec<BigInt> {
    let kernel_letters = (1..LETTER_E2).filter(|&l| letter_weight(l) == 1).count() as u32;
    let mut a = vec![BigInt::from(0); k_max + 1];
    a[0] = BigInt::from(1);
    for k in 1..=k_max {
        let mut v = &a[k - 1] * kernel_letters;
        if k >= 2 {
            v += &a[k - 2];
        }
        a[k] = v;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::super::catalog::{catalog, catalog_with, AdjacencyRule, CatalogReading};
    use super::*;
    use std::collections::BTreeSet;

    /// Every word over (j, variant) pairs with total weight k, filtered afterwards.
    fn brute_force(cat: &GSetCatalog, k: usize) -> Vec<AdmissibleSequence> {
        let letters: Vec<Term> = cat.sets().iter().flat_map(|s| (0..s.variants.len()).map(move |v| Term { j: s.j, variant: v })).collect();
        let mut words: Vec<Vec<Term>> = vec![vec![]];
        let mut all = Vec::new();
        while let Some(w) = words.pop() {
            let wt: usize = w.iter().map(|t| cat.n_op(t.j)).sum();
            if wt == k {
                all.push(AdmissibleSequence { terms: w, weight: k });
                continue;
            }
            for &l in &letters {
                if wt + cat.n_op(l.j) <= k {
                    let mut x = w.clone();
                    x.push(l);
                    words.push(x);
                }
            }
        }
        all.retain(|s| {
            s.terms.windows(2).all(|p| {
                let (a, b) = (p[0].j, p[1].j);
                let adj = !matches!((a, b), (1, 2) | (1, 4) | (3, 2));
                let (_, mu) = cat.exponents(a);
                let (nu, _) = cat.exponents(b);
                adj && mu + nu <= 1.0
            })
        });
        all.sort_by(|x, y| x.terms.cmp(&y.terms));
        all
    }

    #[test]
    fn small_weights() {
        let c = catalog();
        let e0 = enumerate(&c, 0).unwrap();
        assert_eq!(e0, vec![AdmissibleSequence::empty()]);
        assert_eq!(enumerate(&c, 1).unwrap().len(), 4);
        let e2 = enumerate(&c, 2).unwrap();
        assert!(!e2.iter().any(|s| s.terms.len() == 2 && s.terms[0].j == 1 && s.terms[1].j == 2));
        for j in 3..=5 {
            assert!(e2.iter().any(|s| s.terms.len() == 1 && s.terms[0].j == j));
        }
        // frozen brute-force counts
        let counts: Vec<usize> = (0..=6).map(|k| enumerate(&c, k).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 4, 16, 64, 256, 1024, 4096]);
    }

    #[test]
    fn matches_brute_force_up_to_six() {
        let c = catalog();
        for k in 0..=6 {
            let e = enumerate(&c, k).unwrap();
            let b = brute_force(&c, k);
            assert_eq!(e, b, "k = {k}");
            assert!(e.iter().all(|s| s.is_admissible(&c)));
            assert_eq!(count(&c, k), BigInt::from(e.len()));
        }
    }

    #[test]
    fn depth_limit() {
        assert!(enumerate(&catalog(), 13).is_err());
        assert!(enumerate_with_limit(&catalog(), 3, 2).is_err());
        assert_eq!(count(&catalog(), 13), BigInt::from(1u64 << 26));
    }

    #[test]
    fn shadow_identity_through_eight() {
        let raw = shadow_raw(8);
        let frozen = [1, 4, 17, 72, 305, 1292, 5473, 23184, 98209];
        assert_eq!(raw, frozen.iter().map(|&x| BigInt::from(x)).collect::<Vec<_>>());
        assert_eq!(shadow_reordered(&catalog(), 8), raw);
    }

    #[test]
    fn regrouping_is_a_bijection_on_words() {
        let c = catalog();
        for k in 0..=8 {
            let mut got = Vec::new();
            for s in enumerate(&c, k).unwrap() {
                got.extend(s.raw_words(&c).unwrap());
            }
            let set: BTreeSet<Vec<u8>> = got.iter().cloned().collect();
            assert_eq!(set.len(), got.len(), "duplicate raw word at k = {k}");
            // all raw words of weight k
            let mut expect = BTreeSet::new();
            let mut stack = vec![(Vec::<u8>::new(), 0usize)];
            while let Some((w, wt)) = stack.pop() {
                if wt == k {
                    expect.insert(w);
                    continue;
                }
                for l in 1..=5u8 {
                    if wt + letter_weight(l) <= k {
                        let mut x = w.clone();
                        x.push(l);
                        stack.push((x, wt + letter_weight(l)));
                    }
                }
            }
            assert_eq!(set, expect, "k = {k}");
        }
    }

    #[test]
    fn alternative_rule_changes_counts() {
        let alt = catalog_with(CatalogReading::PairingRule, AdjacencyRule::Alternative);
        let std = catalog();
        assert_eq!(count(&alt, 2), count(&std, 2));
        assert!(count(&alt, 3) < count(&std, 3));
        assert_ne!(shadow_reordered(&alt, 8), shadow_raw(8));
    }
}
