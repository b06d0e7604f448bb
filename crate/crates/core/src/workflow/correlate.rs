//! Rank correlation of end-to-end AUROC with the diagnostics across runs.

use std::fmt::Write as _;

use serde::Serialize;

use crate::stats::spearman;
use crate::workflow::report::{DiagnosticProfile, DiagnosticRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Branch,
    Dataset,
    Overall,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub scope: Scope,
    pub group: String,
    pub n: usize,
    /// `None` when the correlation is undefined (n < 2 or a constant column).
    pub rho_gap: Option<f64>,
    pub rho_displacement: Option<f64>,
    pub rho_d_eff: Option<f64>,
}

fn row(scope: Scope, group: String, records: &[&DiagnosticRecord]) -> CorrelationRow {
    let u: Vec<f64> = records.iter().map(|r| r.u_end2end.point).collect();
    let rho = |f: fn(&DiagnosticRecord) -> f64| {
        let v: Vec<f64> = records.iter().map(|r| f(r)).collect();
        spearman(&u, &v).ok()
    };
    CorrelationRow {
        scope,
        group,
        n: records.len(),
        rho_gap: rho(|r| r.gap.point),
        rho_displacement: rho(|r| r.displacement.point),
        rho_d_eff: rho(|r| r.d_eff.point),
    }
}

fn distinct(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Spearman ρ(U_end2end, ·) per branch, per dataset, and pooled over all
/// successful records of `profiles`. ε = ∞ records are left out unless
/// `include_nonprivate`.
pub fn correlate(profiles: &[DiagnosticProfile], include_nonprivate: bool) -> Vec<CorrelationRow> {
    let records: Vec<&DiagnosticRecord> = profiles
        .iter()
        .flat_map(|p| p.ok_records())
        .filter(|r| include_nonprivate || r.epsilon_target.is_private())
        .collect();
    let mut rows = Vec::new();
    for b in distinct(records.iter().map(|r| r.branch.clone())) {
        let sel: Vec<_> = records.iter().copied().filter(|r| r.branch == b).collect();
        rows.push(row(Scope::Branch, b, &sel));
    }
    for d in distinct(records.iter().map(|r| r.dataset.clone())) {
        let sel: Vec<_> = records.iter().copied().filter(|r| r.dataset == d).collect();
        rows.push(row(Scope::Dataset, d, &sel));
    }
    rows.push(row(Scope::Overall, "all".into(), &records));
    rows
}

pub fn render_correlations(rows: &[CorrelationRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:+.3}"));
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:<24} {:>4} {:>8} {:>8} {:>8}", "scope", "group", "n", "ρ(G)", "ρ(Δ)", "ρ(d_eff)");
    for r in rows {
        let scope = match r.scope {
            Scope::Branch => "branch",
            Scope::Dataset => "dataset",
            Scope::Overall => "overall",
        };
        let _ = writeln!(
            out,
            "{:<8} {:<24} {:>4} {:>8} {:>8} {:>8}",
            scope,
            r.group,
            r.n,
            fmt(r.rho_gap),
            fmt(r.rho_displacement),
            fmt(r.rho_d_eff)
        );
    }
    out
}
