//! Neumann series for the renormalized resolvent: the raw expansion, the
//! seven-set catalog, admissible sequences and the reordered expansion.
//!
//! Every resolvent here is `R(z) = (H - E2 - z)^-1`, so `R0(z) = (H0 - z)^-1`
//! with `Re z < 0`.

pub mod catalog;
pub mod enumerate;
pub mod family;
pub mod series;

pub use catalog::{catalog, catalog_with, AdjacencyRule, CatalogReading, Factor, GSet, GSetCatalog, Variant};
pub use enumerate::{count, enumerate, enumerate_with_limit, shadow_raw, shadow_reordered, AdmissibleSequence, Term, DEFAULT_DEPTH_LIMIT};
pub use family::{default_probes, default_schedule, resolvent_family_check, FamilyReport};
pub use series::{
    bound_constant_max, diverges, geometric_domination, raw_series_by_weight, raw_series_partial, reordered_series_enumerated, reordered_series_partial,
    reordered_series_unbounded, term_matrix, DominationRow, SeriesContext, SeriesResult, SeriesSummary, TermMatrix, DEFAULT_RAW_ORDER,
};
