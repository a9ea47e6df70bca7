//! The seven operator sets of the reordered series.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hamiltonian::BlockTag;
use crate::modegrid::Sharp;

/// How to read the two printed set members whose kernel labels clash with the
/// block/kernel pairing used everywhere else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CatalogReading {
    /// `G1` always pairs with `ab*`/`a*b`, `G2` with `ab`/`a*b*`.
    #[default]
    PairingRule,
    /// The printed labels verbatim.
    Literal,
}

/// Which pair after `j = 1 -> {2, 4}` is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyRule {
    /// `3 -> 2` excluded.
    #[default]
    Standard,
    /// `4 -> 2` excluded.
    Alternative,
}

/// Raw letters of `-(H_I - E2)`: the four blocks with their own kernels, then `E2`.
pub const LETTER_AB: u8 = 1;
pub const LETTER_ASTBST: u8 = 2;
pub const LETTER_ABST: u8 = 3;
pub const LETTER_ASTB: u8 = 4;
pub const LETTER_E2: u8 = 5;

/// Kernel weight of a raw letter (`E2` is quadratic in the kernel).
pub fn letter_weight(letter: u8) -> usize {
    if letter == LETTER_E2 {
        2
    } else {
        1
    }
}

/// One interaction block with the kernel it is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Factor {
    pub block: BlockTag,
    pub kernel: Sharp,
}

impl Factor {
    pub fn canonical(block: BlockTag) -> Self {
        Factor { block, kernel: block.kernel() }
    }

    pub fn is_canonical(&self) -> bool {
        self.kernel == self.block.kernel()
    }

    /// Raw letter for canonical factors.
    pub fn letter(&self) -> Option<u8> {
        if !self.is_canonical() {
            return None;
        }
        Some(match self.block {
            BlockTag::Ab => LETTER_AB,
            BlockTag::AstBst => LETTER_ASTBST,
            BlockTag::ABst => LETTER_ABST,
            BlockTag::AstB => LETTER_ASTB,
        })
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kernel {
            Sharp::One => "G1",
            Sharp::Two => "G2",
        };
        write!(f, "H[{}]({})", self.block.label(), k)
    }
}

/// `sign * F1 R0 F2 R0 ... Fm (+ E2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub factors: Vec<Factor>,
    pub sign: i8,
    pub plus_e2: bool,
}

impl Variant {
    fn new(sign: i8, blocks: &[BlockTag]) -> Self {
        Variant { factors: blocks.iter().map(|&b| Factor::canonical(b)).collect(), sign, plus_e2: false }
    }

    /// The raw words this variant collects, or None if some factor has no raw letter.
    pub fn raw_words(&self) -> Option<Vec<Vec<u8>>> {
        let word: Option<Vec<u8>> = self.factors.iter().map(Factor::letter).collect();
        let mut out = vec![word?];
        if self.plus_e2 {
            out.push(vec![LETTER_E2]);
        }
        Some(out)
    }

    /// Number of raw words collected (the scalar-shadow multiplicity).
    pub fn multiplicity(&self) -> usize {
        1 + usize::from(self.plus_e2)
    }

    pub fn is_canonical(&self) -> bool {
        self.factors.iter().all(Factor::is_canonical)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self.factors.iter().map(|x| x.to_string()).collect();
        let s = if self.sign < 0 { "-" } else { "+" };
        write!(f, "{s}{}", body.join(" R0 "))?;
        if self.plus_e2 {
            write!(f, " + E2")?;
        }
        Ok(())
    }
}

/// One set `G_j` with its weight and resolvent exponents (in quarters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSet {
    pub j: u8,
    pub n_op: usize,
    pub nu_quarters: u8,
    pub mu_quarters: u8,
    pub variants: Vec<Variant>,
}

impl GSet {
    pub fn nu(&self) -> f64 {
        self.nu_quarters as f64 / 4.0
    }

    pub fn mu(&self) -> f64 {
        self.mu_quarters as f64 / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSetCatalog {
    pub reading: CatalogReading,
    pub adjacency: AdjacencyRule,
    sets: Vec<GSet>,
}

/// The standard catalog.
pub fn catalog() -> GSetCatalog {
    catalog_with(CatalogReading::PairingRule, AdjacencyRule::Standard)
}

pub fn catalog_with(reading: CatalogReading, adjacency: AdjacencyRule) -> GSetCatalog {
    use BlockTag::*;
    let g5a = Variant { plus_e2: true, ..Variant::new(1, &[Ab, AstBst]) };
    let g6b = match reading {
        CatalogReading::PairingRule => Variant::new(-1, &[ABst, ABst, AstBst]),
        // printed: ab*(G2) R0 ab*(G1) R0 a*b*(G1)
        CatalogReading::Literal => Variant {
            factors: vec![
                Factor { block: ABst, kernel: Sharp::Two },
                Factor { block: ABst, kernel: Sharp::One },
                Factor { block: AstBst, kernel: Sharp::One },
            ],
            sign: -1,
            plus_e2: false,
        },
    };
    let set = |j, n_op, nu, mu, variants| GSet { j, n_op, nu_quarters: nu, mu_quarters: mu, variants };
    let sets = vec![
        set(1, 1, 0, 3, vec![Variant::new(-1, &[Ab]), Variant::new(-1, &[ABst])]),
        set(2, 1, 3, 0, vec![Variant::new(-1, &[AstBst]), Variant::new(-1, &[AstB])]),
        set(3, 2, 0, 2, vec![Variant::new(1, &[Ab, AstB])]),
        set(4, 2, 2, 0, vec![Variant::new(1, &[ABst, AstBst])]),
        set(5, 2, 1, 1, vec![g5a, Variant::new(1, &[ABst, AstB])]),
        set(6, 3, 0, 1, vec![Variant::new(-1, &[Ab, ABst, AstBst]), g6b]),
        set(7, 3, 1, 0, vec![Variant::new(-1, &[Ab, AstB, AstBst]), Variant::new(-1, &[Ab, AstB, AstB])]),
    ];
    GSetCatalog { reading, adjacency, sets }
}

impl GSetCatalog {
    pub fn sets(&self) -> &[GSet] {
        &self.sets
    }

    /// Set `G_j`, `j` in 1..=7.
    pub fn set(&self, j: u8) -> &GSet {
        &self.sets[j as usize - 1]
    }

    pub fn n_op(&self, j: u8) -> usize {
        self.set(j).n_op
    }

    /// `(nu_j, mu_j)`.
    pub fn exponents(&self, j: u8) -> (f64, f64) {
        let s = self.set(j);
        (s.nu(), s.mu())
    }

    pub fn total_variants(&self) -> usize {
        self.sets.iter().map(|s| s.variants.len()).sum()
    }

    /// Adjacency exclusions alone.
    pub fn adjacency_forbids(&self, prev: u8, next: u8) -> bool {
        match (prev, next) {
            (1, 2) | (1, 4) => true,
            (3, 2) => self.adjacency == AdjacencyRule::Standard,
            (4, 2) => self.adjacency == AdjacencyRule::Alternative,
            _ => false,
        }
    }

    /// `mu_prev + nu_next <= 1`.
    pub fn exponents_compatible(&self, prev: u8, next: u8) -> bool {
        self.set(prev).mu_quarters + self.set(next).nu_quarters <= 4
    }

    /// Whether `next` may follow `prev` in an admissible sequence.
    pub fn allowed(&self, prev: u8, next: u8) -> bool {
        !self.adjacency_forbids(prev, next) && self.exponents_compatible(prev, next)
    }

    /// True when every variant has a raw-word expansion.
    pub fn is_canonical(&self) -> bool {
        self.sets.iter().all(|s| s.variants.iter().all(Variant::is_canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_and_exponents() {
        let c = catalog();
        assert_eq!(c.n_op(6), 3);
        assert_eq!(c.exponents(5), (0.25, 0.25));
        assert_eq!(c.total_variants(), 12);
        let counts: Vec<usize> = c.sets().iter().map(|s| s.variants.len()).collect();
        assert_eq!(counts, vec![2, 2, 1, 1, 2, 2, 2]);
        let n_op: Vec<usize> = (1..=7).map(|j| c.n_op(j)).collect();
        assert_eq!(n_op, vec![1, 1, 2, 2, 2, 3, 3]);
        let nm: Vec<(f64, f64)> = (1..=7).map(|j| c.exponents(j)).collect();
        assert_eq!(nm, vec![(0.0, 0.75), (0.75, 0.0), (0.0, 0.5), (0.5, 0.0), (0.25, 0.25), (0.0, 0.25), (0.25, 0.0)]);
    }

    #[test]
    fn n_op_counts_kernels() {
        let c = catalog();
        for s in c.sets() {
            for v in &s.variants {
                assert_eq!(v.factors.len(), s.n_op);
                let words = v.raw_words().unwrap();
                assert!(words.iter().all(|w| w.iter().map(|&l| letter_weight(l)).sum::<usize>() == s.n_op));
            }
        }
    }

    #[test]
    fn sign_is_minus_one_per_factor() {
        for s in catalog().sets() {
            for v in &s.variants {
                assert_eq!(v.sign as i32, (-1i32).pow(v.factors.len() as u32));
            }
        }
    }

    #[test]
    fn exponent_rule_equals_standard_adjacency() {
        let c = catalog();
        for a in 1..=7 {
            for b in 1..=7 {
                assert_eq!(c.exponents_compatible(a, b), !c.adjacency_forbids(a, b), "{a} -> {b}");
            }
        }
    }

    #[test]
    fn literal_reading_is_not_canonical() {
        assert!(catalog().is_canonical());
        let lit = catalog_with(CatalogReading::Literal, AdjacencyRule::Standard);
        assert!(!lit.is_canonical());
        assert!(lit.set(6).variants[1].raw_words().is_none());
        assert_eq!(lit.set(6).variants[1].to_string(), "-H[ab*](G2) R0 H[ab*](G1) R0 H[a*b*](G1)");
    }

    #[test]
    fn alternative_rule_moves_one_pair() {
        let alt = catalog_with(CatalogReading::PairingRule, AdjacencyRule::Alternative);
        assert!(alt.adjacency_forbids(4, 2));
        assert!(!alt.adjacency_forbids(3, 2));
        // 3 -> 2 is still excluded by the exponents
        assert!(!alt.allowed(3, 2));
        assert!(!alt.allowed(4, 2));
    }
}
