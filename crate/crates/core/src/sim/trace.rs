use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::ids::FlowId;

/// One delivered packet. `hop_delays` are per-router sojourn times
/// (queueing plus transmission); `e2e_delay` additionally includes the
/// propagation of every traversed link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub flow_id: FlowId,
    pub seq: u64,
    pub hop_delays: Vec<f64>,
    pub e2e_delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub violations: u64,
    pub total: u64,
    pub frequency: f64,
}

impl ViolationStats {
    pub fn from_counts(violations: u64, total: u64) -> Self {
        ViolationStats {
            violations,
            total,
            frequency: if total == 0 { 0.0 } else { violations as f64 / total as f64 },
        }
    }
}

/// Counts samples whose end-to-end delay strictly exceeds `bound`.
pub fn measure_violations(traces: &[TraceSample], bound: f64) -> Result<ViolationStats, SimError> {
    if traces.is_empty() {
        return Err(SimError::Parameter("no trace samples to measure".into()));
    }
    let violations = traces.iter().filter(|s| s.e2e_delay > bound).count() as u64;
    Ok(ViolationStats::from_counts(violations, traces.len() as u64))
}

/// Newline-delimited JSON, one sample per line, in the given order.
pub fn write_traces<W: Write>(mut out: W, traces: &[TraceSample]) -> io::Result<()> {
    for s in traces {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
