//! One function per subcommand. Each returns the tables it produced; the
//! caller writes them.

use uvlab::counterterm::{e2_discrete, e2_quadrature, linear_fit, log_fit, thresholds};
use uvlab::estimates::{hidden_constant_study, run_explicit_batch, RefinementSpec};
use uvlab::fock::{algebra_report, enumerate_basis};
use uvlab::linalg;
use uvlab::modegrid::kernel_matrix_on;
use uvlab::neumann::{catalog, count, raw_series_by_weight, raw_series_partial, reordered_series_partial, shadow_raw, shadow_reordered, SeriesContext};
use uvlab::par;
use uvlab::spectra::{default_distance_z, distance_table, perturbation_check, renormalized_sweep};

use crate::config::RunConfig;
use crate::output::Table;
use crate::row;
use crate::Failure;

/// Relations that must hold exactly on the truncated basis.
pub const ALGEBRA_TOL: f64 = 1e-12;

pub fn algebra_check(cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    let sc = cfg.sweep_config();
    let layout = sc.layout()?;
    let basis = enumerate_basis(layout.n_boson(), layout.n_fermion(), sc.boson_cap)?;
    let r = algebra_report(&basis)?;
    let mut t = Table::new(
        "algebra",
        &["m_a", "m_f", "cap", "dim", "max_car_violation", "max_ccr_violation_below_cap", "max_ccr_violation_at_cap", "ccr_violations_only_at_cap", "max_mixed_violation", "max_number_violation"],
    );
    t.push(row![r.m_a, r.m_f, r.cap, r.dim, r.max_car_violation, r.max_ccr_violation_below_cap, r.max_ccr_violation_at_cap, r.ccr_violations_only_at_cap, r.max_mixed_violation, r.max_number_violation]);
    let worst = r.max_car_violation.max(r.max_ccr_violation_below_cap).max(r.max_mixed_violation).max(r.max_number_violation);
    if !(worst <= ALGEBRA_TOL) {
        return Err(Failure::invariant(format!("canonical relations violated by {worst:.3e}")).with_tables(vec![t]));
    }
    Ok(vec![t])
}

pub fn build(cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    let sc = cfg.sweep_config();
    let layout = sc.layout()?;
    let basis = sc.basis(&layout)?;
    let built = par::map(&cfg.cutoffs.lambda_list, |&lc| sc.at_cutoff(&layout, &basis, lc)).into_iter().collect::<uvlab::Result<Vec<_>>>()?;
    let mut t = Table::new("build", &["lambda_cut", "n_fermion_modes", "n_boson_modes", "dim", "nnz", "hermitian", "e2", "c_lambda"]);
    for (lc, (parts, e2, c)) in cfg.cutoffs.lambda_list.iter().zip(&built) {
        t.push(row![*lc, layout.n_fermion(), layout.n_boson(), parts.dim(), parts.full.nnz(), parts.full.is_hermitian(), *e2, *c]);
    }
    Ok(vec![t])
}

pub fn counterterm(cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    let sc = cfg.sweep_config();
    let layout = sc.layout()?;
    let kspec = cfg.kernel_spec();
    let params = cfg.params();
    let lambdas = &cfg.cutoffs.lambda_list;
    let rows = par::map(lambdas, |&lc| -> uvlab::Result<_> {
        let cspec = cfg.cutoff_spec(lc);
        let km = kernel_matrix_on(&kspec, &cspec, &params, &layout);
        let q = e2_quadrature(&kspec, &cspec, &params, cfg.model.d, &cfg.solver.quadrature)?;
        Ok((e2_discrete(&km, &params), q))
    })
    .into_iter()
    .collect::<uvlab::Result<Vec<_>>>()?;
    let mut t = Table::new("counterterm", &["lambda_cut", "e2_discrete", "e2_quadrature", "error_estimate", "converged", "evaluations", "diff_quadrature"]);
    for (i, (lc, (disc, q))) in lambdas.iter().zip(&rows).enumerate() {
        let diff = if i == 0 { f64::NAN } else { q.value - rows[i - 1].1.value };
        t.push(row![*lc, *disc, q.value, q.error_estimate, q.converged, q.evaluations, diff]);
    }
    let mut fit = Table::new("counterterm_fit", &["model", "intercept", "slope", "r_squared"]);
    if lambdas.len() >= 3 {
        let ys: Vec<f64> = rows.iter().map(|r| r.1.value).collect();
        let (a, b, r2) = log_fit(lambdas, &ys);
        fit.push(row!["log", a, b, r2]);
        let (a, b, r2) = linear_fit(lambdas, &ys);
        fit.push(row!["linear", a, b, r2]);
    }
    if let Some(bad) = rows.iter().zip(lambdas).find(|(r, _)| !r.1.converged) {
        return Err(Failure::numerical(format!("quadrature did not reach its target at Lambda = {}", bad.1)).with_tables(vec![t, fit]));
    }
    Ok(vec![t, fit])
}

pub fn thresholds_table(cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    let mut t = Table::new("thresholds", &["d", "p", "beta_min_k1", "beta_min_k2", "beta_min_k3", "scheme_feasible"]);
    for d in 1..=3 {
        let r = thresholds(d, cfg.model.p)?;
        t.push(row![r.d, r.p, r.beta_min_k1, r.beta_min_k2, r.beta_min_k3, r.scheme_feasible]);
    }
    Ok(vec![t])
}

pub fn neumann(cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    let sc = cfg.sweep_config();
    let layout = sc.layout()?;
    let basis = sc.basis(&layout)?;
    let (raw_order, depth) = (cfg.solver.raw_order, cfg.solver.depth);
    let rows = cfg
        .cutoffs
        .lambda_list
        .iter()
        .map(|&lc| -> uvlab::Result<_> {
            let (parts, e2, c) = sc.at_cutoff(&layout, &basis, lc)?;
            let z = cfg.z().unwrap_or_else(|| default_distance_z(&[c]));
            let ctx = SeriesContext::new(&parts, catalog(), e2, z)?;
            let direct = ctx.direct_resolvent()?;
            let raw = raw_series_partial(&ctx, raw_order)?;
            let reo = reordered_series_partial(&ctx, depth)?;
            let by_weight = raw_series_by_weight(&ctx, depth)?;
            let raw_res = linalg::op_norm_value(&(&raw.sum - &direct));
            let reo_res = linalg::op_norm_value(&(&reo.sum - &direct));
            let agree = linalg::op_norm_value(&(&reo.sum - &by_weight.sum));
            Ok(row![lc, z.re, c, parts.dim(), raw_order, raw_res, raw.diverging, depth, reo_res, reo.diverging, agree])
        })
        .collect::<uvlab::Result<Vec<_>>>()?;
    let mut t = Table::new(
        "neumann",
        &["lambda_cut", "z", "c_lambda", "dim", "raw_order", "raw_residual", "raw_diverging", "depth", "reordered_residual", "reordered_diverging", "reordered_vs_raw_by_weight"],
    );
    for r in rows {
        t.push(r);
    }
    Ok(vec![t])
}

pub fn enumerate(cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    let k_max = cfg.solver.enumerate_k;
    let cat = catalog();
    let reo = shadow_reordered(&cat, k_max);
    let raw = shadow_raw(k_max);
    let mut t = Table::new("enumerate", &["k", "count", "shadow_reordered", "shadow_raw"]);
    for k in 0..=k_max {
        t.push(row![k, count(&cat, k).to_string(), reo[k].to_string(), raw[k].to_string()]);
    }
    Ok(vec![t])
}

pub fn audit(cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    let reports = run_explicit_batch(cfg.solver.seed, cfg.solver.audit_batch)?;
    let mut t = Table::new("audit", &["audit", "samples", "max_ratio", "bound_constant", "pass", "worst"]);
    for r in &reports {
        t.push(row![r.audit.name(), r.samples, r.max_ratio, r.bound_constant, r.pass, r.worst.clone()]);
    }
    let mut tables = vec![t];
    let mut stable = true;
    if cfg.solver.hidden_study {
        let mut h = Table::new("audit_hidden", &["audit", "coarse", "fine", "ceiling", "factor", "finite", "stable", "nonincreasing"]);
        for r in hidden_constant_study(&RefinementSpec::default())? {
            stable &= r.stable;
            h.push(row![r.audit.name(), r.coarse, r.fine, r.ceiling, r.factor, r.finite, r.stable, r.nonincreasing]);
        }
        tables.push(h);
    }
    if let Some(bad) = reports.iter().find(|r| !r.pass) {
        return Err(Failure::invariant(format!("{} exceeded its bound: {}", bad.audit.name(), bad.worst)).with_tables(tables));
    }
    if !stable {
        return Err(Failure::invariant("a hidden-constant ratio is not refinement-stable").with_tables(tables));
    }
    Ok(tables)
}

pub fn sweep(cfg: &RunConfig) -> Result<Vec<Table>, Failure> {
    let sc = cfg.sweep_config();
    let lambdas = &cfg.cutoffs.lambda_list;
    let res = renormalized_sweep(&sc, lambdas)?;
    let mut t = Table::new("sweep", &["lambda_cut", "energy", "e2", "renormalized", "c_lambda", "gap", "residual"]);
    for r in &res.rows {
        t.push(row![r.lambda_cut, r.energy, r.e2, r.renormalized, r.c, r.gap, r.residual]);
    }
    let mut s = Table::new("sweep_diffs", &["lambda_from", "lambda_to", "diff_renormalized"]);
    for (w, d) in lambdas.windows(2).zip(&res.stats.diffs) {
        s.push(row![w[0], w[1], *d]);
    }
    let mut tables = vec![t, s];

    // second-order check at the first cutoff
    let layout = sc.layout()?;
    let basis = sc.basis(&layout)?;
    let km = sc.kernels(&layout, lambdas[0])?;
    let pt = perturbation_check(&km, &sc.params, &basis, &cfg.solver.pt_lambdas, sc.tol.min(1e-10))?;
    let mut p = Table::new("perturbation", &["lambda_cut", "c2", "c4", "e2", "rel_mismatch", "unstable"]);
    p.push(row![lambdas[0], pt.c2, pt.c4, pt.e2, pt.rel_mismatch, pt.unstable]);
    tables.push(p);

    if cfg.solver.distances {
        let (z, pairs) = distance_table(&sc, lambdas, cfg.z())?;
        let mut dt = Table::new("sweep_distances", &["lambda_1", "lambda_2", "z", "distance"]);
        for (a, b, d) in pairs {
            dt.push(row![a, b, z.re, d]);
        }
        tables.push(dt);
    }
    Ok(tables)
}
