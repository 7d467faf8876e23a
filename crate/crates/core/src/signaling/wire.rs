//! Newline-delimited message log.
//!
//! One JSON object per delivered message, fields always in this order:
//!
//! | field     | type            | meaning                                            |
//! |-----------|-----------------|----------------------------------------------------|
//! | `type`    | string          | `PATH`, `REPORT`, `REJECT`, `COMMIT`, `RELEASE`, `BINDING_UPDATE` |
//! | `flow_id` | string or null  | null for binding updates                           |
//! | `nonce`   | integer or null | null for binding updates                           |
//! | `hop`     | integer         | route index of the router the message concerns     |
//! | `payload` | object          | type-specific, keys sorted                         |
//!
//! For `PATH` the hop is the router about to process it; for `REPORT` it
//! equals the route length; for `REJECT` it is the rejecting router.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{DecisionKind, Message};
use crate::ids::{FlowId, Nonce};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub flow_id: Option<FlowId>,
    pub nonce: Option<Nonce>,
    pub hop: usize,
    pub payload: Value,
}

pub fn record(msg: &Message) -> WireRecord {
    let (kind, nonce, hop, payload) = match msg {
        Message::Path(req) => (
            "PATH",
            Some(req.nonce),
            req.hop(),
            json!({
                "flow": req.flow,
                "route": req.route.hops,
                "destination": req.route.destination,
                "report": req.report,
            }),
        ),
        Message::Report(req) => (
            "REPORT",
            Some(req.nonce),
            req.hop(),
            json!({
                "route": req.route.hops,
                "destination": req.route.destination,
                "report": req.report,
                "cumulative_bound": req.report.cumulative_bound(),
            }),
        ),
        Message::Reject(sig) => (
            "REJECT",
            Some(sig.nonce),
            sig.report.len(),
            json!({
                "reason": sig.reason,
                "route": sig.route.hops,
                "report": sig.report,
            }),
        ),
        Message::Decision(d) => (
            match d.kind {
                DecisionKind::Commit => "COMMIT",
                DecisionKind::Release => "RELEASE",
            },
            Some(d.nonce),
            d.hop,
            json!({ "router": d.router, "next_hop": d.next_hop }),
        ),
        Message::BindingUpdate(bu) => (
            "BINDING_UPDATE",
            None,
            0,
            json!({
                "mobile_node": bu.mobile_node,
                "care_of": bu.care_of,
                "sequence": bu.sequence,
            }),
        ),
    };
    WireRecord {
        kind: kind.to_owned(),
        flow_id: msg.flow_id().cloned(),
        nonce,
        hop,
        payload,
    }
}

/// One log line, without the trailing newline.
pub fn encode(msg: &Message) -> String {
    serde_json::to_string(&record(msg)).expect("wire records always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{FlowSpec, PeakRate};
    use crate::ids::NodeId;
    use crate::signaling::{BindingUpdate, BoundEntry, DecisionMessage, PathRequest, RejectReason, RejectSignal, Route};

    fn request() -> PathRequest {
        let flow = FlowSpec::new("f1", PeakRate::Finite(2e6), 1e6, 1e5, 0.01, 0.05).unwrap();
        let route = Route::new(vec!["r1".into(), "r2".into()], "mn".into());
        PathRequest::new(flow, Nonce(7), route).unwrap()
    }

    #[test]
    fn golden_records() {
        let mut req = request();
        assert_eq!(
            encode(&Message::Path(req.clone())),
            r#"{"type":"PATH","flow_id":"f1","nonce":7,"hop":0,"payload":{"destination":"mn","flow":{"app_delay_bound":0.05,"burst":100000.0,"epsilon":0.01,"flow_id":"f1","peak_rate":2000000.0,"sustained_rate":1000000.0},"report":[],"route":["r1","r2"]}}"#
        );
        req.report
            .push(BoundEntry {
                router_id: "r1".into(),
                delay_bound: 0.025,
                propagation_delay: 0.001,
                node_epsilon: 0.0,
            })
            .unwrap();
        assert_eq!(
            encode(&Message::Reject(RejectSignal {
                flow_id: "f1".into(),
                nonce: Nonce(7),
                route: req.route.clone(),
                report: req.report.clone(),
                reason: RejectReason::Unstable { router: "r2".into() },
            })),
            r#"{"type":"REJECT","flow_id":"f1","nonce":7,"hop":1,"payload":{"reason":{"kind":"unstable","router":"r2"},"report":[{"delay_bound":0.025,"node_epsilon":0.0,"propagation_delay":0.001,"router_id":"r1"}],"route":["r1","r2"]}}"#
        );
        req.report
            .push(BoundEntry {
                router_id: "r2".into(),
                delay_bound: 0.0,
                propagation_delay: 0.002,
                node_epsilon: 0.0,
            })
            .unwrap();
        assert_eq!(
            encode(&Message::Report(req)),
            r#"{"type":"REPORT","flow_id":"f1","nonce":7,"hop":2,"payload":{"cumulative_bound":0.028,"destination":"mn","report":[{"delay_bound":0.025,"node_epsilon":0.0,"propagation_delay":0.001,"router_id":"r1"},{"delay_bound":0.0,"node_epsilon":0.0,"propagation_delay":0.002,"router_id":"r2"}],"route":["r1","r2"]}}"#
        );
        assert_eq!(
            encode(&Message::Decision(DecisionMessage {
                flow_id: "f1".into(),
                nonce: Nonce(7),
                kind: DecisionKind::Release,
                router: "r2".into(),
                next_hop: "mn".into(),
                hop: 1,
            })),
            r#"{"type":"RELEASE","flow_id":"f1","nonce":7,"hop":1,"payload":{"next_hop":"mn","router":"r2"}}"#
        );
        assert_eq!(
            encode(&Message::BindingUpdate(BindingUpdate {
                mobile_node: NodeId::new("mn"),
                care_of: NodeId::new("ar2"),
                sequence: 3,
            })),
            r#"{"type":"BINDING_UPDATE","flow_id":null,"nonce":null,"hop":0,"payload":{"care_of":"ar2","mobile_node":"mn","sequence":3}}"#
        );
    }

    #[test]
    fn unbounded_peak_is_null_and_records_parse_back() {
        let flow = FlowSpec::new("f", PeakRate::Unbounded, 1.0, 0.0, 0.5, 1.0).unwrap();
        let req = PathRequest::new(flow, Nonce(1), Route::new(vec!["r".into()], "mn".into())).unwrap();
        let line = encode(&Message::Path(req.clone()));
        assert!(line.contains(r#""peak_rate":null"#));
        let parsed: WireRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed, record(&Message::Path(req)));
    }
}
