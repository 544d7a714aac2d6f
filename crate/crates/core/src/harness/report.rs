use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::benchmark::BenchmarkResult;
use crate::data::sha256_hex;
use crate::error::{Error, Result};

use super::confusion::{ConfusionMatrix, Truth};
use super::screening::{ScreeningSummary, Summary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub label: String,
    pub description: String,
    pub dangerous: bool,
}

impl From<&Truth> for ClassInfo {
    fn from(t: &Truth) -> Self {
        ClassInfo {
            label: t.label.clone(),
            description: t.description.clone(),
            dangerous: t.dangerous,
        }
    }
}

/// A named pass/fail threshold evaluated on the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Results of one experiment plus the provenance needed to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub replicates: usize,
    pub profile: String,
    pub priors: String,
    /// SHA-256 of the canonical JSON form of the experiment's inputs.
    pub config_hash: String,
    pub datasets: Vec<Fingerprint>,
    pub classes: Vec<ClassInfo>,
    pub matrices: Vec<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmarks: Option<BenchmarkResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screening: Option<ScreeningSummary>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn matrix(&self, name: &str) -> Option<&ConfusionMatrix> {
        self.matrices.iter().find(|m| m.name == name)
    }
}

/// SHA-256 over the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::domain(format!(
                "unknown report format '{other}' (expected 'json' or 'text')"
            ))),
        }
    }
}

pub fn emit_report(report: &Report, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("reports serialize");
            out.push(b'\n');
            out
        }
        ReportFormat::Text => render_text(report).into_bytes(),
    }
}

pub fn parse_report(bytes: &[u8]) -> Result<Report> {
    serde_json::from_slice(bytes).map_err(|e| {
        crate::error::ParseError::new(e.line(), e.column(), e.to_string()).into()
    })
}

fn render_matrix(out: &mut String, m: &ConfusionMatrix) {
    let probs = m.probabilities();
    let danger = m.dangerous_rates();
    let row_width = m.row_labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).max(4);
    let col_width = m
        .column_labels
        .iter()
        .map(|l| l.chars().count())
        .max()
        .unwrap_or(0)
        .max(6);
    let _ = writeln!(
        out,
        "\n{} ({} replicates per row; rows true, columns assigned)",
        m.name, m.replicates
    );
    let _ = write!(out, "{:row_width$}", "");
    for c in &m.column_labels {
        let _ = write!(out, "  {c:>col_width$}");
    }
    let _ = writeln!(out, "  {:>9}", "dangerous");
    for (r, label) in m.row_labels.iter().enumerate() {
        let _ = write!(out, "{label:<row_width$}");
        for p in &probs[r] {
            let _ = write!(out, "  {p:>col_width$.4}");
        }
        let _ = writeln!(out, "  {:>9.4}", danger[r]);
    }
}

fn render_summary(out: &mut String, name: &str, s: &Summary) {
    let _ = writeln!(
        out,
        "  {name:<28} mean {:.4}  median {:.4}  sd {:.4}  mad {:.4}  (n = {})",
        s.mean, s.median, s.sd, s.mad, s.count
    );
}

fn render_text(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment  {}", r.experiment);
    let _ = writeln!(out, "seed        {}", r.seed);
    let _ = writeln!(out, "replicates  {}", r.replicates);
    let _ = writeln!(out, "profile     {}", r.profile);
    let _ = writeln!(out, "priors      {}", r.priors);
    let _ = writeln!(out, "config      sha256:{}", r.config_hash);
    for d in &r.datasets {
        let _ = writeln!(out, "dataset     {} sha256:{}", d.name, d.sha256);
    }
    if !r.classes.is_empty() {
        let width = r.classes.iter().map(|c| c.label.chars().count()).max().unwrap_or(0);
        let _ = writeln!(out, "\nclasses");
        for c in &r.classes {
            let flag = if c.dangerous { "dangerous" } else { "nondangerous" };
            let _ = writeln!(out, "  {:<width$}  {flag:<12}  {}", c.label, c.description);
        }
    }
    for m in &r.matrices {
        render_matrix(&mut out, m);
    }
    if let Some(b) = &r.benchmarks {
        let _ = writeln!(
            out,
            "\nbenchmarks (seed pair {} / {}, {} rounds)",
            b.seed_pair.0,
            b.seed_pair.1,
            b.iterations.len()
        );
        let _ = writeln!(out, "  dangerous     {}", b.dangerous.join(", "));
        let _ = writeln!(out, "  nondangerous  {}", b.nondangerous.join(", "));
    }
    if let Some(s) = &r.screening {
        let _ = writeln!(
            out,
            "\nscreening over {} catalogs, {} replicates per class",
            s.sets, s.replicates
        );
        render_summary(&mut out, "benchmark count", &s.benchmark_count);
        render_summary(&mut out, "dangerous -> nondangerous", &s.dangerous_to_nondangerous);
        render_summary(&mut out, "nondangerous -> dangerous", &s.nondangerous_to_dangerous);
    }
    if !r.checks.is_empty() {
        let _ = writeln!(out, "\nchecks");
        for c in &r.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "  {mark}  {}: {}", c.name, c.detail);
        }
    }
    out
}
