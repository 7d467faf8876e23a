//! Run summaries and their CSV / JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ids::FlowId;
use crate::node::AdmissionMode;
use crate::signaling::HandoverRecord;

/// Fixed column order of the metrics CSV.
pub const CSV_HEADER: &str = "scenario,mode,param,value,admitted,rejected,utilization,max_cum_bound,violation_freq";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    /// Holds a reservation at the end of the run.
    pub admitted: bool,
    pub degraded: bool,
    /// From the most recent Admit decision.
    pub cumulative_bound: Option<f64>,
    pub app_delay_bound: f64,
    pub samples: u64,
    pub violations: u64,
    pub violation_freq: f64,
    pub hop_violations: u64,
    pub lost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub scenario: String,
    pub mode: AdmissionMode,
    pub seed: u64,
    /// Admit decisions, initial and handover requests alike.
    pub admitted: u64,
    pub rejected: u64,
    /// Largest `Σ admitted ρ / capacity` over router interfaces.
    pub utilization: f64,
    pub max_cum_bound: f64,
    pub samples: u64,
    pub violations: u64,
    pub violation_freq: f64,
    pub hop_violations: u64,
    pub lost_packets: u64,
    pub protocol_errors: u64,
    pub events: u64,
    pub flows: BTreeMap<FlowId, FlowMetrics>,
    pub handovers: Vec<HandoverRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    Json,
}

impl FromStr for MetricsFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(MetricsFormat::Csv),
            "json" => Ok(MetricsFormat::Json),
            other => Err(format!("unknown metrics format `{other}` (expected csv or json)")),
        }
    }
}

/// `%.12g`: 12 significant digits, trailing zeros dropped, exponent form
/// outside `[1e-5, 1e12)`.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s.to_owned()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl MetricsSummary {
    /// One CSV line (no newline); `param` is empty for a plain run.
    pub fn csv_row(&self, param: Option<(&str, f64)>) -> String {
        let (name, value) = param.map_or((String::new(), String::new()), |(n, v)| (n.to_owned(), format_number(v)));
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&self.scenario),
            self.mode.as_str(),
            csv_field(&name),
            value,
            self.admitted,
            self.rejected,
            format_number(self.utilization),
            format_number(self.max_cum_bound),
            format_number(self.violation_freq),
        )
        .expect("writing to a String");
        row
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summaries always serialize");
        s.push('\n');
        s
    }
}

/// Header plus one row per entry.
pub fn render_csv<'a>(rows: impl IntoIterator<Item = (Option<(&'a str, f64)>, &'a MetricsSummary)>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (param, summary) in rows {
        out.push_str(&summary.csv_row(param));
        out.push('\n');
    }
    out
}

pub fn emit_metrics(summary: &MetricsSummary, format: MetricsFormat, path: &Path) -> io::Result<()> {
    let text = match format {
        MetricsFormat::Csv => render_csv([(None, summary)]),
        MetricsFormat::Json => summary.to_json(),
    };
    std::fs::write(path, text)
}
