//! Fixed-width text tables. Parameters print with 4 decimals and utilities
//! with 8, the precision of the published investor tables.

use std::fmt::Write;

use sfm_core::classify::InvestorReport;
use sfm_core::mc::ValidationReport;
use sfm_core::model::{euler_gap, ModelOptions};
use sfm_core::moments::{MomentSet, VarianceConvention};
use sfm_core::solver::{residual_floor, ManifoldPoint, Solution};

fn investor_name(r: &InvestorReport) -> &'static str {
    match r.investor {
        sfm_core::classify::Investor::Equity => "Equity",
        sfm_core::classify::Investor::RiskFree => "Risk-free asset",
    }
}

pub fn solution(
    sol: &Solution,
    m: &MomentSet,
    options: ModelOptions,
    variance: VarianceConvention,
) -> String {
    let p = &sol.params;
    let r = &sol.residuals;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<17} {:>8} {:>8} {:>8}",
        "Investor", "STDF", "SFOM", "CRRA"
    );
    let _ = writeln!(
        out,
        "{:<17} {:>8.4} {:>8.4} {:>8.4}",
        "Equity", p.beta, p.delta, p.tau
    );
    let _ = writeln!(
        out,
        "{:<17} {:>8.4} {:>8.4} {:>8.4}",
        "Risk-free asset", p.beta, p.omega, p.tau
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "residuals        r2 = {:.6e}  r3 = {:.6e}  r4 = {:.6e}  r5 = {:.6e}",
        r.r2, r.r3, r.r4, r.r5
    );
    let _ = writeln!(
        out,
        "residual norm    {:.6e} (floor {:.6e})",
        r.norm,
        residual_floor(sol.gap)
    );
    let _ = writeln!(out, "lognormality gap {:.6e}", sol.gap);
    let _ = writeln!(out, "euler gap        {:.6e}", euler_gap(m, &sol.params));
    let sv = sol
        .jacobian_singular_values
        .iter()
        .map(|s| format!("{s:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(
        out,
        "jacobian rank    {} (singular values {sv})",
        sol.numerical_rank
    );
    let _ = writeln!(
        out,
        "converged        {} after {} iterations",
        sol.converged, sol.iterations
    );
    let _ = writeln!(
        out,
        "options          eq3 = {}, lnex = {}, variance = {}",
        options.eq3, options.lnex, variance
    );
    out
}

pub fn manifold(curve: &[ManifoldPoint], target_distance: Option<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>8} {:>14} {:>14} {:>14} {:>13} {:>13}",
        "tau", "beta", "omega", "delta", "r5", "norm"
    );
    for p in curve {
        let _ = writeln!(
            out,
            "{:>8.4} {:>14.6e} {:>14.6e} {:>14.6e} {:>13.5e} {:>13.5e}",
            p.tau, p.beta, p.omega, p.delta, p.residuals.r5, p.residuals.norm
        );
    }
    if let Some(d) = target_distance {
        let _ = writeln!(out, "\ndistance to target {d:.6e}");
    }
    out
}

pub fn validation(report: &ValidationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "draws {}  seed {}", report.draws, report.seed);
    for c in &report.checks {
        let _ = writeln!(
            out,
            "{:<4} {:<44} closed {:>14.6e}  sample {:>14.6e}  z {:>7.3}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.closed_form,
            c.sample,
            c.z
        );
    }
    let _ = writeln!(
        out,
        "{}",
        if report.all_pass {
            "all identities pass"
        } else {
            "identity check FAILED"
        }
    );
    out
}

pub fn investors(rows: &[InvestorReport]) -> String {
    let year = rows.first().map(|r| r.year).unwrap_or_default();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<17} {:>8} {:>8} {:>8} {:>16} {:>18}  Type of investor Year {year}",
        "Investor", "STDF", "SFOM", "CRRA", "Certain Utility", "Uncertain Utility"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<17} {:>8.4} {:>8.4} {:>8.4} {:>16.8} {:>18.8}  {}",
            investor_name(r),
            r.stdf,
            r.sfom,
            r.crra,
            r.certain_utility,
            r.uncertain_utility,
            r.label.title()
        );
    }
    out
}
