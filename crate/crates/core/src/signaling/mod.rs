//! Reservation signaling between the home agent and the routers on a path.
//!
//! A path request visits each router in route order; each one reserves
//! tentatively and appends its local delay bound and outgoing propagation
//! delay to the report. The completed report returns to the home agent,
//! which admits the flow iff the cumulative bound fits the application's
//! requirement and then commits or releases the tentative state.

mod binding;
mod fabric;
mod home_agent;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binding::{Binding, BindingCache};
pub use fabric::{InstantFabric, Interface, RouterAgent};
pub use home_agent::{
    Action, ActiveReservation, HandoverOutcome, HandoverRecord, HomeAgent, PendingRequest, RequestKind, Session,
};

use crate::envelope::FlowSpec;
use crate::ids::{FlowId, NodeId, Nonce};
use crate::node::{NodeError, RouterState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("router `{router}` is not the next hop of this request (expected `{expected}`)")]
    Misrouted { router: NodeId, expected: String },
    #[error("duplicate request for flow `{flow_id}` nonce {nonce}")]
    Duplicate { flow_id: FlowId, nonce: Nonce },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("stale binding update for `{home}`: sequence {got} ≤ {current}")]
    StaleBinding { home: NodeId, got: u64, current: u64 },
    #[error("no binding for mobile node `{0}`")]
    NoBinding(NodeId),
    #[error("unknown flow `{0}`")]
    UnknownFlow(FlowId),
    #[error(transparent)]
    Node(#[from] NodeError),
}

/// Source route from the home agent: routers in order, then the mobile node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub hops: Vec<NodeId>,
    pub destination: NodeId,
}

impl Route {
    pub fn new(hops: Vec<NodeId>, destination: NodeId) -> Self {
        Route { hops, destination }
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    /// Node after hop `index`: the next router or the destination.
    pub fn next_after(&self, index: usize) -> &NodeId {
        self.hops.get(index + 1).unwrap_or(&self.destination)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub router_id: NodeId,
    pub delay_bound: f64,
    pub propagation_delay: f64,
    /// Violation probability the router's bound carries; 0 for hard bounds.
    pub node_epsilon: f64,
}

/// Per-hop bounds accumulated in route order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundReport {
    entries: Vec<BoundEntry>,
}

impl BoundReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[BoundEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: BoundEntry) -> Result<(), SignalError> {
        if !(entry.delay_bound >= 0.0) || !(entry.propagation_delay >= 0.0) {
            return Err(SignalError::Protocol(format!(
                "negative bound or propagation from `{}`",
                entry.router_id
            )));
        }
        if self.entries.iter().any(|e| e.router_id == entry.router_id) {
            return Err(SignalError::Protocol(format!(
                "router `{}` reported twice",
                entry.router_id
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn routers(&self) -> impl Iterator<Item = &NodeId> {
        self.entries.iter().map(|e| &e.router_id)
    }

    /// `Σ delay_bound + Σ propagation_delay`.
    pub fn cumulative_bound(&self) -> f64 {
        let bounds: f64 = self.entries.iter().map(|e| e.delay_bound).sum();
        let propagation: f64 = self.entries.iter().map(|e| e.propagation_delay).sum();
        bounds + propagation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRequest {
    pub flow: FlowSpec,
    pub nonce: Nonce,
    pub route: Route,
    pub report: BoundReport,
}

impl PathRequest {
    pub fn new(flow: FlowSpec, nonce: Nonce, route: Route) -> Result<Self, SignalError> {
        if route.is_empty() {
            return Err(SignalError::Protocol("route has no routers".into()));
        }
        Ok(PathRequest {
            flow,
            nonce,
            route,
            report: BoundReport::new(),
        })
    }

    /// Index of the router that should handle this request next.
    pub fn hop(&self) -> usize {
        self.report.len()
    }

    pub fn is_complete(&self) -> bool {
        self.report.len() == self.route.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    DelayExceeded,
    EpsilonInfeasible { router: NodeId },
    Unstable { router: NodeId },
    Timeout,
    Superseded,
}

/// Sent toward the home agent when a router cannot hold the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectSignal {
    pub flow_id: FlowId,
    pub nonce: Nonce,
    pub route: Route,
    /// Routers that did reserve, in route order.
    pub report: BoundReport,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Admit,
    Reject { reason: RejectReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub flow_id: FlowId,
    pub nonce: Nonce,
    pub verdict: Verdict,
    pub cumulative_bound: f64,
}

impl Decision {
    pub fn is_admit(&self) -> bool {
        matches!(self.verdict, Verdict::Admit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Commit,
    Release,
}

/// Commit or release addressed to one router interface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionMessage {
    pub flow_id: FlowId,
    pub nonce: Nonce,
    pub kind: DecisionKind,
    pub router: NodeId,
    pub next_hop: NodeId,
    /// Position of `router` in its route.
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathOutcome {
    /// Forward to `route.hops[req.hop()]`.
    Forward(PathRequest),
    /// Report complete; return to the home agent.
    Complete(PathRequest),
    Reject(RejectSignal),
}

/// Processes a path request at `router`, whose outgoing link toward the
/// request's next node has propagation delay `propagation`.
pub fn handle_path_request(
    router: &mut RouterState,
    mut req: PathRequest,
    propagation: f64,
    now: f64,
) -> Result<PathOutcome, SignalError> {
    let hop = req.hop();
    let expected = req.route.hops.get(hop);
    if expected != Some(router.router_id()) {
        return Err(SignalError::Misrouted {
            router: router.router_id().clone(),
            expected: expected.map_or_else(|| "<none: report complete>".to_owned(), |id| id.to_string()),
        });
    }
    match router.reserve_tentative(&req.flow, req.nonce, now) {
        Ok(bound) => {
            req.report.push(BoundEntry {
                router_id: router.router_id().clone(),
                delay_bound: bound.value,
                propagation_delay: propagation,
                node_epsilon: router.reported_epsilon(),
            })?;
            if req.is_complete() {
                Ok(PathOutcome::Complete(req))
            } else {
                Ok(PathOutcome::Forward(req))
            }
        }
        Err(NodeError::Unstable { .. }) => Ok(PathOutcome::Reject(RejectSignal {
            flow_id: req.flow.flow_id.clone(),
            nonce: req.nonce,
            reason: RejectReason::Unstable {
                router: router.router_id().clone(),
            },
            route: req.route,
            report: req.report,
        })),
        Err(NodeError::Duplicate { flow_id, nonce }) => Err(SignalError::Duplicate { flow_id, nonce }),
        Err(e) => Err(e.into()),
    }
}

/// Final admission decision for a completed report.
///
/// Admit iff every router's violation budget is within the flow's epsilon
/// and `Σ bounds + Σ propagation ≤ app_delay_bound`.
pub fn home_agent_decide(flow: &FlowSpec, nonce: Nonce, route: &Route, report: &BoundReport) -> Result<Decision, SignalError> {
    if report.len() != route.len() {
        return Err(SignalError::Protocol(format!(
            "incomplete report: {} of {} hops",
            report.len(),
            route.len()
        )));
    }
    if !report.routers().eq(route.hops.iter()) {
        return Err(SignalError::Protocol("report order does not match route".into()));
    }
    let cumulative_bound = report.cumulative_bound();
    let verdict = if let Some(e) = report.entries().iter().find(|e| e.node_epsilon > flow.epsilon) {
        Verdict::Reject {
            reason: RejectReason::EpsilonInfeasible {
                router: e.router_id.clone(),
            },
        }
    } else if cumulative_bound <= flow.app_delay_bound {
        Verdict::Admit
    } else {
        Verdict::Reject {
            reason: RejectReason::DelayExceeded,
        }
    };
    Ok(Decision {
        flow_id: flow.flow_id.clone(),
        nonce,
        verdict,
        cumulative_bound,
    })
}

/// Commit (on admit) or release (on reject) for each of `routers`, which
/// must be a prefix of `route`.
pub fn distribute_decision(decision: &Decision, route: &Route, routers: usize) -> Vec<DecisionMessage> {
    let kind = if decision.is_admit() {
        DecisionKind::Commit
    } else {
        DecisionKind::Release
    };
    decision_messages(&decision.flow_id, decision.nonce, kind, route, routers)
}

pub(crate) fn decision_messages(
    flow_id: &FlowId,
    nonce: Nonce,
    kind: DecisionKind,
    route: &Route,
    routers: usize,
) -> Vec<DecisionMessage> {
    route
        .hops
        .iter()
        .take(routers)
        .enumerate()
        .map(|(hop, router)| DecisionMessage {
            flow_id: flow_id.clone(),
            nonce,
            kind,
            router: router.clone(),
            next_hop: route.next_after(hop).clone(),
            hop,
        })
        .collect()
}

/// Binding update sent by a mobile node after attaching somewhere new.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingUpdate {
    pub mobile_node: NodeId,
    pub care_of: NodeId,
    pub sequence: u64,
}

/// Everything that travels between protocol entities.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Path(PathRequest),
    Report(PathRequest),
    Reject(RejectSignal),
    Decision(DecisionMessage),
    BindingUpdate(BindingUpdate),
}

impl Message {
    pub fn flow_id(&self) -> Option<&FlowId> {
        match self {
            Message::Path(r) | Message::Report(r) => Some(&r.flow.flow_id),
            Message::Reject(r) => Some(&r.flow_id),
            Message::Decision(d) => Some(&d.flow_id),
            Message::BindingUpdate(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::PeakRate;
    use crate::node::{AdmissionMode, RouterConfig};

    fn flow(rate: f64, d_app: f64) -> FlowSpec {
        FlowSpec::new("f", PeakRate::Finite(2e6), rate, 1e5, 1e-3, d_app).unwrap()
    }

    fn router(id: &str, capacity: f64) -> RouterState {
        RouterState::new(RouterConfig::new(id, capacity, 1e-6, 0.0).with_mode(AdmissionMode::Deterministic)).unwrap()
    }

    fn route(ids: &[&str]) -> Route {
        Route::new(ids.iter().map(|&s| NodeId::new(s)).collect(), NodeId::new("mn"))
    }

    fn entry(id: &str, bound: f64, prop: f64) -> BoundEntry {
        BoundEntry {
            router_id: NodeId::new(id),
            delay_bound: bound,
            propagation_delay: prop,
            node_epsilon: 0.0,
        }
    }

    fn report(entries: Vec<BoundEntry>) -> BoundReport {
        let mut r = BoundReport::new();
        for e in entries {
            r.push(e).unwrap();
        }
        r
    }

    #[test]
    fn three_stable_hops_fill_report_in_order() {
        let mut routers = [router("r1", 1.5e6), router("r2", 3e6), router("r3", 1.8e6)];
        let mut req = PathRequest::new(flow(1e6, 1.0), Nonce(1), route(&["r1", "r2", "r3"])).unwrap();
        for (i, r) in routers.iter_mut().enumerate() {
            match handle_path_request(r, req, 0.001 * (i + 1) as f64, 0.0).unwrap() {
                PathOutcome::Forward(next) => {
                    assert!(i < 2);
                    req = next;
                }
                PathOutcome::Complete(done) => {
                    assert_eq!(i, 2);
                    req = done;
                }
                PathOutcome::Reject(_) => panic!("unexpected reject"),
            }
        }
        let ids: Vec<&str> = req.report.routers().map(NodeId::as_str).collect();
        assert_eq!(ids, ["r1", "r2", "r3"]);
        assert!((req.report.entries()[0].delay_bound - 0.05 / 1.5).abs() < 1e-15);
        assert_eq!(req.report.entries()[1].delay_bound, 0.0);
        assert!(routers.iter().all(|r| r.tentative().len() == 1));
    }

    #[test]
    fn unstable_first_hop_rejects_with_empty_report() {
        let mut r1 = router("r1", 1e6);
        let req = PathRequest::new(flow(1e6, 1.0), Nonce(1), route(&["r1", "r2"])).unwrap();
        match handle_path_request(&mut r1, req, 0.0, 0.0).unwrap() {
            PathOutcome::Reject(sig) => {
                assert!(sig.report.is_empty());
                assert_eq!(
                    sig.reason,
                    RejectReason::Unstable {
                        router: NodeId::new("r1")
                    }
                );
            }
            other => panic!("{other:?}"),
        }
        assert!(r1.tentative().is_empty());
    }

    #[test]
    fn misrouted_and_duplicate_requests() {
        let mut r2 = router("r2", 3e6);
        let req = PathRequest::new(flow(1e6, 1.0), Nonce(1), route(&["r1", "r2"])).unwrap();
        assert!(matches!(
            handle_path_request(&mut r2, req, 0.0, 0.0),
            Err(SignalError::Misrouted { .. })
        ));
        let mut r1 = router("r1", 3e6);
        let req = PathRequest::new(flow(1e6, 1.0), Nonce(1), route(&["r1"])).unwrap();
        handle_path_request(&mut r1, req.clone(), 0.0, 0.0).unwrap();
        assert!(matches!(
            handle_path_request(&mut r1, req, 0.0, 0.0),
            Err(SignalError::Duplicate { .. })
        ));
        assert!(PathRequest::new(flow(1.0, 1.0), Nonce(1), route(&[])).is_err());
    }

    #[test]
    fn decide_sums_bounds_and_propagation() {
        let r = route(&["a", "b", "c"]);
        let rep = report(vec![entry("a", 0.01, 0.001), entry("b", 0.02, 0.001), entry("c", 0.005, 0.001)]);
        let d = home_agent_decide(&flow(1.0, 0.05), Nonce(4), &r, &rep).unwrap();
        assert!((d.cumulative_bound - 0.038).abs() < 1e-15);
        assert!(d.is_admit());
        let d = home_agent_decide(&flow(1.0, 0.03), Nonce(4), &r, &rep).unwrap();
        assert_eq!(
            d.verdict,
            Verdict::Reject {
                reason: RejectReason::DelayExceeded
            }
        );
        assert!((d.cumulative_bound - 0.038).abs() < 1e-15);
    }

    #[test]
    fn decide_boundary_admits_equal_and_just_above() {
        let bound = 0.05 / 1.5;
        let r = route(&["a"]);
        let rep = report(vec![entry("a", bound, 0.0)]);
        assert!(home_agent_decide(&flow(1.0, bound + 1e-12), Nonce(1), &r, &rep).unwrap().is_admit());
        assert!(home_agent_decide(&flow(1.0, bound), Nonce(1), &r, &rep).unwrap().is_admit());
        assert!(!home_agent_decide(&flow(1.0, bound - 1e-12), Nonce(1), &r, &rep).unwrap().is_admit());
    }

    #[test]
    fn decide_rejects_incomplete_or_reordered_reports() {
        let r = route(&["a", "b"]);
        let rep = report(vec![entry("a", 0.01, 0.0)]);
        assert!(matches!(
            home_agent_decide(&flow(1.0, 1.0), Nonce(1), &r, &rep),
            Err(SignalError::Protocol(_))
        ));
        let rep = report(vec![entry("b", 0.01, 0.0), entry("a", 0.01, 0.0)]);
        assert!(home_agent_decide(&flow(1.0, 1.0), Nonce(1), &r, &rep).is_err());
    }

    #[test]
    fn decide_checks_router_epsilon_against_flow() {
        let r = route(&["a", "b"]);
        let mut loose = entry("b", 0.0, 0.0);
        loose.node_epsilon = 1e-2;
        let rep = report(vec![entry("a", 0.0, 0.0), loose]);
        let d = home_agent_decide(&flow(1.0, 1.0), Nonce(1), &r, &rep).unwrap();
        assert_eq!(
            d.verdict,
            Verdict::Reject {
                reason: RejectReason::EpsilonInfeasible {
                    router: NodeId::new("b")
                }
            }
        );
    }

    #[test]
    fn report_rejects_duplicates_and_negatives() {
        let mut rep = report(vec![entry("a", 0.0, 0.0)]);
        assert!(rep.push(entry("a", 0.0, 0.0)).is_err());
        assert!(rep.push(entry("b", -1.0, 0.0)).is_err());
        assert!(rep.push(entry("c", 0.0, -1.0)).is_err());
    }

    #[test]
    fn distribute_targets_each_router_with_next_hop() {
        let d = Decision {
            flow_id: FlowId::new("f"),
            nonce: Nonce(3),
            verdict: Verdict::Admit,
            cumulative_bound: 0.0,
        };
        let msgs = distribute_decision(&d, &route(&["a", "b", "c"]), 3);
        let next: Vec<&str> = msgs.iter().map(|m| m.next_hop.as_str()).collect();
        assert_eq!(next, ["b", "c", "mn"]);
        assert!(msgs.iter().all(|m| m.kind == DecisionKind::Commit));
        let d = Decision {
            verdict: Verdict::Reject {
                reason: RejectReason::DelayExceeded,
            },
            ..d
        };
        let msgs = distribute_decision(&d, &route(&["a", "b", "c"]), 1);
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].kind, DecisionKind::Release);
    }
}
