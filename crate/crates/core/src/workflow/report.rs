//! Diagnostic reports: JSON (machine, 17 significant digits), CSV export,
//! and a fixed-width percent table with one row per record.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file};
use crate::error::{Error, Result};
use crate::stats::BootstrapResult;
use crate::workflow::config::{PrivacyTarget, SweepConfig};

pub const REPORT_FORMAT: &str = "dprgmi-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub branch: String,
    pub dataset: String,
    pub seed: u64,
    pub epsilon_target: PrivacyTarget,
    pub epsilon_consumed: Option<f64>,
    pub delta: f64,
    pub sigma: Option<f64>,
    /// Finite ε below 10.
    pub private_regime: bool,
    pub u_end2end: BootstrapResult,
    pub u_probe: BootstrapResult,
    pub gap: BootstrapResult,
    pub displacement: BootstrapResult,
    pub d_eff: BootstrapResult,
    pub probe_lambda: f64,
    pub probe_converged: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub branch: String,
    pub dataset: String,
    pub seed: u64,
    pub epsilon_target: PrivacyTarget,
    pub stage: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum RecordOutcome {
    Ok(DiagnosticRecord),
    Failed(RecordFailure),
}

impl RecordOutcome {
    pub fn record(&self) -> Option<&DiagnosticRecord> {
        match self {
            RecordOutcome::Ok(r) => Some(r),
            RecordOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    /// Only set when requested explicitly; keeps reruns byte-identical.
    pub timestamp: Option<String>,
    pub master_seeds: Vec<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticProfile {
    pub provenance: Provenance,
    pub config: SweepConfig,
    pub records: Vec<RecordOutcome>,
}

impl DiagnosticProfile {
    pub fn ok_records(&self) -> impl Iterator<Item = &DiagnosticRecord> {
        self.records.iter().filter_map(RecordOutcome::record)
    }
}

/// Writes every float with 17 significant digits.
struct FixedDigits;

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", f64::from(value))
    }
}

pub fn report_to_json(profile: &DiagnosticProfile) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits);
    profile
        .serialize(&mut ser)
        .map_err(|e| Error::Input(format!("report serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("JSON is UTF-8"))
}

pub fn report_from_json(text: &str, path: &Path) -> Result<DiagnosticProfile> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    let format = value.pointer("/provenance/format").and_then(|v| v.as_str());
    let version = value.pointer("/provenance/version").and_then(|v| v.as_u64());
    if format != Some(REPORT_FORMAT) {
        return Err(Error::format(path, "not a diagnostic report"));
    }
    if version != Some(u64::from(REPORT_VERSION)) {
        return Err(Error::format(path, format!("unsupported report version {version:?}")));
    }
    serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_report(profile: &DiagnosticProfile, path: &Path) -> Result<()> {
    write_file(path, report_to_json(profile)?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<DiagnosticProfile> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "report is not UTF-8"))?;
    report_from_json(&text, path)
}

/// Fraction → percent with one decimal.
pub fn percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

fn epsilon_label(t: PrivacyTarget) -> String {
    match t {
        PrivacyTarget::NonPrivate => "∞".to_string(),
        PrivacyTarget::Epsilon(e) => format!("{e}"),
    }
}

fn pct_cell(b: &BootstrapResult) -> String {
    format!("{} ± {}", percent(b.mean), percent(b.std))
}

fn raw_cell(b: &BootstrapResult) -> String {
    format!("{:.2} ± {:.2}", b.mean, b.std)
}

/// Human table: Initialization, ε, AUROC_end2end, AUROC_probe, G, Δ, d_eff, seed.
pub fn render_table(profile: &DiagnosticProfile) -> String {
    let header = [
        "Initialization",
        "ε",
        "AUROC_end2end",
        "AUROC_probe",
        "G",
        "Δ",
        "d_eff",
        "seed",
    ];
    let mut rows: Vec<Vec<String>> = Vec::new();
    for outcome in &profile.records {
        rows.push(match outcome {
            RecordOutcome::Ok(r) => vec![
                r.branch.clone(),
                epsilon_label(r.epsilon_target),
                pct_cell(&r.u_end2end),
                pct_cell(&r.u_probe),
                pct_cell(&r.gap),
                raw_cell(&r.displacement),
                raw_cell(&r.d_eff),
                r.seed.to_string(),
            ],
            RecordOutcome::Failed(f) => vec![
                f.branch.clone(),
                epsilon_label(f.epsilon_target),
                format!("failed at {}: {}", f.stage, f.message),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                f.seed.to_string(),
            ],
        });
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            s.push_str(c);
            s.push_str(&" ".repeat(pad));
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&header.map(String::from)));
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Machine CSV of all successful records, fractions, 17 significant digits.
pub fn render_csv(profile: &DiagnosticProfile) -> String {
    let mut out = String::from("branch,dataset,seed,epsilon_target,epsilon_consumed,sigma");
    for m in ["u_end2end", "u_probe", "gap", "displacement", "d_eff"] {
        for s in ["point", "mean", "std", "ci_low", "ci_high"] {
            let _ = write!(out, ",{m}_{s}");
        }
    }
    out.push('\n');
    let num = |v: f64| format!("{v:.16e}");
    for r in profile.ok_records() {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.branch,
            r.dataset,
            r.seed,
            r.epsilon_target,
            r.epsilon_consumed.map(num).unwrap_or_default(),
            r.sigma.map(num).unwrap_or_default()
        );
        for b in [&r.u_end2end, &r.u_probe, &r.gap, &r.displacement, &r.d_eff] {
            for v in [b.point, b.mean, b.std, b.ci_low, b.ci_high] {
                let _ = write!(out, ",{}", num(v));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_rendering() {
        assert_eq!(percent(0.745), "74.5");
        assert_eq!(percent(0.886), "88.6");
    }

    #[test]
    fn floats_use_seventeen_digits() {
        #[derive(Serialize)]
        struct S {
            x: f64,
        }
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits);
        S { x: 0.1 }.serialize(&mut ser).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, r#"{"x":1.0000000000000001e-1}"#);
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
    }
}
