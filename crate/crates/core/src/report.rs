//! Word recognition rates, severity-tier aggregation, usability flags and
//! report emission in the three supported formats.
//!
//! Reported values are rounded to two decimals, half away from zero. The
//! standard deviation uses the sample convention (divisor n−1, defined as
//! 0 for a single row): recomputing the overall mean/SD of the fifteen
//! speaker-independent recognition rates of the reference results table
//! reproduces its published "62.73 (23.56)" under this convention, while
//! the population divisor gives 22.76 and is rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::corpus::Severity;

#[derive(Debug)]
pub enum ReportError {
    ZeroAttempted,
    CountExceedsAttempted { correct: usize, attempted: usize },
    EmptyTier(String),
    OutOfRange(f64),
    Parse(String),
    Io(std::io::Error),
}

impl fmt::Display for ReportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportError::ZeroAttempted => write!(f, "wrr undefined for zero attempted words"),
            ReportError::CountExceedsAttempted { correct, attempted } => {
                write!(f, "correct count {correct} exceeds attempted {attempted}")
            }
            ReportError::EmptyTier(t) => write!(f, "no rows in severity tier {t}"),
            ReportError::OutOfRange(v) => write!(f, "wrr value {v} outside [0, 100]"),
            ReportError::Parse(msg) => write!(f, "report parse error: {msg}"),
            ReportError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for ReportError {}

impl From<std::io::Error> for ReportError {
    fn from(e: std::io::Error) -> Self {
        ReportError::Io(e)
    }
}

/// Word recognition rate: 100 · correct / attempted.
pub fn wrr(correct: usize, attempted: usize) -> Result<f64, ReportError> {
    if attempted == 0 {
        return Err(ReportError::ZeroAttempted);
    }
    if correct > attempted {
        return Err(ReportError::CountExceedsAttempted { correct, attempted });
    }
    Ok(100.0 * correct as f64 / attempted as f64)
}

/// Two decimals, round half away from zero (the table convention).
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn format2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Arithmetic mean and sample standard deviation (n−1; 0 when n < 2).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "mean_sd of empty slice");
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Usability thresholds: the satisfactory rate for healthy speech and the
/// tolerable rate for speakers with an impairment, both inclusive.
pub const HEALTHY_SATISFACTORY_WRR: f64 = 90.0;
pub const IMPAIRED_TOLERABLE_WRR: f64 = 65.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UsabilityFlags {
    pub healthy_satisfactory: bool,
    pub impaired_tolerable: bool,
}

pub fn usability_flags(wrr_value: f64) -> Result<UsabilityFlags, ReportError> {
    if !(0.0..=100.0).contains(&wrr_value) {
        return Err(ReportError::OutOfRange(wrr_value));
    }
    Ok(UsabilityFlags {
        healthy_satisfactory: wrr_value >= HEALTHY_SATISFACTORY_WRR,
        impaired_tolerable: wrr_value >= IMPAIRED_TOLERABLE_WRR,
    })
}

/// Which per-speaker value the usability counters look at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionPolicy {
    /// The speaker's best scenario (ties irrelevant: the max value).
    BestScenario,
    /// A fixed scenario column by name.
    Fixed(String),
}

impl SelectionPolicy {
    fn label(&self) -> String {
        match self {
            SelectionPolicy::BestScenario => "best_scenario".to_string(),
            SelectionPolicy::Fixed(name) => format!("fixed:{name}"),
        }
    }

    fn parse(s: &str) -> Result<SelectionPolicy, ReportError> {
        if s == "best_scenario" {
            Ok(SelectionPolicy::BestScenario)
        } else if let Some(name) = s.strip_prefix("fixed:") {
            Ok(SelectionPolicy::Fixed(name.to_string()))
        } else {
            Err(ReportError::Parse(format!("unknown selection policy `{s}`")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub speaker: String,
    pub severity: Severity,
    /// One WRR per scenario column, already rounded to report precision.
    pub values: Vec<f64>,
    pub flags: UsabilityFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierAggregate {
    /// "mild" | "moderate" | "high" | "all"
    pub tier: String,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Per-speaker rows with severity-tier aggregates, mirroring the results
/// tables: one column per scenario, aggregate mean (SD) rows per tier and
/// overall.
#[derive(Debug, Clone, PartialEq)]
pub struct WrrReport {
    pub scenarios: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<TierAggregate>,
    pub policy: SelectionPolicy,
}

/// The value the policy selects for one row.
fn selected_value(report: &WrrReport, row: &ReportRow) -> f64 {
    match &report.policy {
        SelectionPolicy::BestScenario => {
            row.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        }
        SelectionPolicy::Fixed(name) => {
            match report.scenarios.iter().position(|s| s == name) {
                Some(i) => row.values[i],
                None => f64::NAN,
            }
        }
    }
}

/// Builds a report from raw per-speaker rows. Values are rounded to the
/// report precision first; flags and aggregates derive from the rounded
/// values so every emitted number is consistent with every other.
pub fn build_report(
    scenarios: Vec<String>,
    rows: Vec<(String, Severity, Vec<f64>)>,
    policy: SelectionPolicy,
) -> Result<WrrReport, ReportError> {
    let mut report_rows = Vec::with_capacity(rows.len());
    for (speaker, severity, raw) in rows {
        assert_eq!(raw.len(), scenarios.len(), "row width mismatch for {speaker}");
        let values: Vec<f64> = raw.into_iter().map(round2).collect();
        for &v in &values {
            if !(0.0..=100.0).contains(&v) {
                return Err(ReportError::OutOfRange(v));
            }
        }
        report_rows.push(ReportRow {
            speaker,
            severity,
            values,
            flags: UsabilityFlags { healthy_satisfactory: false, impaired_tolerable: false },
        });
    }
    let mut report = WrrReport { scenarios, rows: report_rows, aggregates: Vec::new(), policy };
    for i in 0..report.rows.len() {
        let v = selected_value(&report, &report.rows[i]);
        report.rows[i].flags = usability_flags(v)?;
    }
    report.aggregates = aggregate(&report.scenarios, &report.rows)?;
    Ok(report)
}

/// Tier means and SDs per scenario column, plus the overall "all" row.
pub fn aggregate(
    scenarios: &[String],
    rows: &[ReportRow],
) -> Result<Vec<TierAggregate>, ReportError> {
    let mut out = Vec::new();
    let tiers = [
        ("mild", Some(Severity::Mild)),
        ("moderate", Some(Severity::Moderate)),
        ("high", Some(Severity::High)),
        ("all", None),
    ];
    for (name, severity) in tiers {
        let members: Vec<&ReportRow> = rows
            .iter()
            .filter(|r| severity.map(|s| r.severity == s).unwrap_or(true))
            .collect();
        if members.is_empty() {
            if severity.is_none() {
                return Err(ReportError::EmptyTier("all".to_string()));
            }
            continue; // a corpus may simply have no speakers in a tier
        }
        let mut means = Vec::with_capacity(scenarios.len());
        let mut sds = Vec::with_capacity(scenarios.len());
        for c in 0..scenarios.len() {
            let values: Vec<f64> = members.iter().map(|r| r.values[c]).collect();
            let (m, s) = mean_sd(&values);
            means.push(round2(m));
            sds.push(round2(s));
        }
        out.push(TierAggregate { tier: name.to_string(), means, sds });
    }
    Ok(out)
}

/// Number of rows whose policy-selected WRR reaches the tolerable level
/// for impaired speech (≥ 65).
pub fn tolerable_count(report: &WrrReport) -> usize {
    report.rows.iter().filter(|r| r.flags.impaired_tolerable).count()
}

// ── emission ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s {
            "text" => Some(ReportFormat::Text),
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

pub fn emit(report: &WrrReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => emit_text(report),
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Json => emit_json(report),
    }
}

pub fn emit_to_file(
    report: &WrrReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, emit(report, format))?;
    Ok(())
}

/// Row maxima (all tied maxima marked, mirroring bold-in-row).
fn best_in_row(values: &[f64]) -> Vec<bool> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|&v| v == max).collect()
}

fn emit_text(report: &WrrReport) -> String {
    let mut out = String::new();
    let col_width = report.scenarios.iter().map(|s| s.len()).max().unwrap_or(4).max(8) + 2;
    out.push_str(&format!("{:<10}{:<10}", "Severity", "Speaker"));
    for s in &report.scenarios {
        out.push_str(&format!("{s:>col_width$}"));
    }
    out.push('\n');
    let mut last_sev: Option<Severity> = None;
    for row in &report.rows {
        let sev = if last_sev == Some(row.severity) {
            String::new()
        } else {
            last_sev = Some(row.severity);
            row.severity.to_string()
        };
        out.push_str(&format!("{sev:<10}{:<10}", row.speaker));
        let best = best_in_row(&row.values);
        for (v, b) in row.values.iter().zip(best) {
            let cell = format!("{}{}", if b { "*" } else { "" }, format2(*v));
            out.push_str(&format!("{cell:>col_width$}"));
        }
        out.push('\n');
    }
    for agg in &report.aggregates {
        out.push_str(&format!("{:<10}{:<10}", "Mean (SD)", agg.tier));
        let best = best_in_row(&agg.means);
        for ((m, s), b) in agg.means.iter().zip(&agg.sds).zip(best) {
            let cell = format!("{}{} ({})", if b { "*" } else { "" }, format2(*m), format2(*s));
            out.push_str(&format!("{cell:>col_width$}"));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "Tolerable (>= {IMPAIRED_TOLERABLE_WRR}) under policy {}: {} of {}\n",
        report.policy.label(),
        tolerable_count(report),
        report.rows.len()
    ));
    out
}

fn emit_csv(report: &WrrReport) -> String {
    let mut out = String::new();
    out.push_str("type,id,severity");
    for s in &report.scenarios {
        out.push(',');
        out.push_str(s);
    }
    out.push_str(",healthy_satisfactory,impaired_tolerable\n");
    out.push_str(&format!("policy,{},,", report.policy.label()));
    out.push_str(&",".repeat(report.scenarios.len() + 1));
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!("row,{},{}", row.speaker, row.severity));
        for v in &row.values {
            out.push(',');
            out.push_str(&format2(*v));
        }
        out.push_str(&format!(
            ",{},{}\n",
            row.flags.healthy_satisfactory as u8, row.flags.impaired_tolerable as u8
        ));
    }
    for agg in &report.aggregates {
        out.push_str(&format!("agg_mean,{},", agg.tier));
        for m in &agg.means {
            out.push(',');
            out.push_str(&format2(*m));
        }
        out.push_str(",,\n");
        out.push_str(&format!("agg_sd,{},", agg.tier));
        for s in &agg.sds {
            out.push(',');
            out.push_str(&format2(*s));
        }
        out.push_str(",,\n");
    }
    out
}

pub fn parse_csv(text: &str) -> Result<WrrReport, ReportError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ReportError::Parse("empty file".to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[0] != "type" || cols[1] != "id" || cols[2] != "severity" {
        return Err(ReportError::Parse("unexpected header".to_string()));
    }
    let scenarios: Vec<String> =
        cols[3..cols.len() - 2].iter().map(|s| s.to_string()).collect();
    let n = scenarios.len();
    let mut policy = SelectionPolicy::BestScenario;
    let mut rows = Vec::new();
    let mut aggregates: Vec<TierAggregate> = Vec::new();
    let mut agg_index: BTreeMap<String, usize> = BTreeMap::new();

    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| ReportError::Parse(format!("line {}: {msg}", i + 2));
        match f[0] {
            "policy" => policy = SelectionPolicy::parse(f[1])?,
            "row" => {
                if f.len() != n + 5 {
                    return Err(bad(format!("expected {} fields, got {}", n + 5, f.len())));
                }
                let severity = Severity::parse(f[2])
                    .ok_or_else(|| bad(format!("bad severity `{}`", f[2])))?;
                let values: Result<Vec<f64>, _> = f[3..3 + n]
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`"))))
                    .collect();
                let flags = UsabilityFlags {
                    healthy_satisfactory: f[3 + n] == "1",
                    impaired_tolerable: f[4 + n] == "1",
                };
                rows.push(ReportRow { speaker: f[1].to_string(), severity, values: values?, flags });
            }
            "agg_mean" | "agg_sd" => {
                if f.len() != n + 5 {
                    return Err(bad(format!("expected {} fields, got {}", n + 5, f.len())));
                }
                let tier = f[1].to_string();
                let values: Result<Vec<f64>, _> = f[3..3 + n]
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`"))))
                    .collect();
                let idx = *agg_index.entry(tier.clone()).or_insert_with(|| {
                    aggregates.push(TierAggregate { tier, means: vec![], sds: vec![] });
                    aggregates.len() - 1
                });
                if f[0] == "agg_mean" {
                    aggregates[idx].means = values?;
                } else {
                    aggregates[idx].sds = values?;
                }
            }
            other => return Err(bad(format!("unknown row type `{other}`"))),
        }
    }
    Ok(WrrReport { scenarios, rows, aggregates, policy })
}

fn emit_json(report: &WrrReport) -> String {
    use serde_json::{json, Value};
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "speaker": r.speaker,
                "severity": r.severity.as_str(),
                "wrr": r.values.iter().map(|v| format2(*v)).collect::<Vec<_>>(),
                "healthy_satisfactory": r.flags.healthy_satisfactory,
                "impaired_tolerable": r.flags.impaired_tolerable,
            })
        })
        .collect();
    let aggs: Vec<Value> = report
        .aggregates
        .iter()
        .map(|a| {
            json!({
                "tier": a.tier,
                "mean": a.means.iter().map(|v| format2(*v)).collect::<Vec<_>>(),
                "sd": a.sds.iter().map(|v| format2(*v)).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = json!({
        "scenarios": report.scenarios,
        "policy": report.policy.label(),
        "rows": rows,
        "aggregates": aggs,
        "tolerable_count": tolerable_count(report),
    });
    serde_json::to_string_pretty(&doc).expect("report serialization") + "\n"
}

pub fn parse_json(text: &str) -> Result<WrrReport, ReportError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))?;
    let bad = |msg: &str| ReportError::Parse(msg.to_string());
    let scenarios: Vec<String> = doc["scenarios"]
        .as_array()
        .ok_or_else(|| bad("missing scenarios"))?
        .iter()
        .map(|v| v.as_str().unwrap_or_default().to_string())
        .collect();
    let policy = SelectionPolicy::parse(doc["policy"].as_str().ok_or_else(|| bad("missing policy"))?)?;
    let parse_vals = |v: &serde_json::Value| -> Result<Vec<f64>, ReportError> {
        v.as_array()
            .ok_or_else(|| bad("expected array"))?
            .iter()
            .map(|x| {
                x.as_str()
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| bad("bad numeric string"))
            })
            .collect()
    };
    let mut rows = Vec::new();
    for r in doc["rows"].as_array().ok_or_else(|| bad("missing rows"))? {
        rows.push(ReportRow {
            speaker: r["speaker"].as_str().ok_or_else(|| bad("missing speaker"))?.to_string(),
            severity: Severity::parse(r["severity"].as_str().unwrap_or(""))
                .ok_or_else(|| bad("bad severity"))?,
            values: parse_vals(&r["wrr"])?,
            flags: UsabilityFlags {
                healthy_satisfactory: r["healthy_satisfactory"].as_bool().unwrap_or(false),
                impaired_tolerable: r["impaired_tolerable"].as_bool().unwrap_or(false),
            },
        });
    }
    let mut aggregates = Vec::new();
    for a in doc["aggregates"].as_array().ok_or_else(|| bad("missing aggregates"))? {
        aggregates.push(TierAggregate {
            tier: a["tier"].as_str().ok_or_else(|| bad("missing tier"))?.to_string(),
            means: parse_vals(&a["mean"])?,
            sds: parse_vals(&a["sd"])?,
        });
    }
    Ok(WrrReport { scenarios, rows, aggregates, policy })
}
