use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    decision_messages, distribute_decision, home_agent_decide, BindingCache, Decision, DecisionKind,
    DecisionMessage, PathRequest, RejectReason, RejectSignal, Route, SignalError, Verdict,
};
use crate::envelope::FlowSpec;
use crate::ids::{FlowId, NodeId, Nonce};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Initial,
    Handover,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveReservation {
    pub nonce: Nonce,
    pub route: Route,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingRequest {
    pub nonce: Nonce,
    pub route: Route,
    pub kind: RequestKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub flow: FlowSpec,
    pub mobile_node: NodeId,
    pub active: Option<ActiveReservation>,
    pub pending: Option<PendingRequest>,
    /// Last handover re-reservation failed; the old reservation is kept.
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverOutcome {
    Admitted,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverRecord {
    pub mobile_node: NodeId,
    pub flow_id: FlowId,
    pub outcome: HandoverOutcome,
    pub cumulative_bound: f64,
}

/// What the home agent wants the network to do next.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Launch toward `request.route.hops[0]`.
    SendPath(PathRequest),
    SendDecision(DecisionMessage),
    /// Bookkeeping notification; nothing is sent.
    Decided { decision: Decision, kind: RequestKind },
}

/// Home-agent protocol entity: binding cache, reservation sessions and the
/// final admission decision.
#[derive(Debug, Clone)]
pub struct HomeAgent {
    id: NodeId,
    bindings: BindingCache,
    sessions: BTreeMap<FlowId, Session>,
    next_nonce: u64,
    decisions: Vec<Decision>,
    handovers: Vec<HandoverRecord>,
}

impl HomeAgent {
    pub fn new(id: impl Into<NodeId>) -> Self {
        HomeAgent {
            id: id.into(),
            bindings: BindingCache::new(),
            sessions: BTreeMap::new(),
            next_nonce: 1,
            decisions: Vec::new(),
            handovers: Vec::new(),
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn bindings(&self) -> &BindingCache {
        &self.bindings
    }

    pub fn sessions(&self) -> &BTreeMap<FlowId, Session> {
        &self.sessions
    }

    pub fn session(&self, flow_id: &FlowId) -> Option<&Session> {
        self.sessions.get(flow_id)
    }

    /// Every decision taken so far, in order.
    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn handovers(&self) -> &[HandoverRecord] {
        &self.handovers
    }

    fn fresh_nonce(&mut self) -> Nonce {
        let n = Nonce(self.next_nonce);
        self.next_nonce += 1;
        n
    }

    /// Initial registration of a mobile node.
    pub fn register(&mut self, mobile_node: NodeId, care_of: NodeId, route: Route, sequence: u64) -> Result<(), SignalError> {
        self.bindings.update(mobile_node, care_of, route, sequence)?;
        Ok(())
    }

    /// Starts a reservation for `flow` toward `mobile_node`'s current binding.
    pub fn open_session(&mut self, flow: FlowSpec, mobile_node: NodeId) -> Result<Vec<Action>, SignalError> {
        let route = self
            .bindings
            .get(&mobile_node)
            .ok_or_else(|| SignalError::NoBinding(mobile_node.clone()))?
            .route
            .clone();
        if self.sessions.contains_key(&flow.flow_id) {
            return Err(SignalError::Protocol(format!("flow `{}` already has a session", flow.flow_id)));
        }
        let nonce = self.fresh_nonce();
        let req = PathRequest::new(flow.clone(), nonce, route.clone())?;
        self.sessions.insert(
            flow.flow_id.clone(),
            Session {
                flow,
                mobile_node,
                active: None,
                pending: Some(PendingRequest {
                    nonce,
                    route,
                    kind: RequestKind::Initial,
                }),
                degraded: false,
            },
        );
        Ok(vec![Action::SendPath(req)])
    }

    /// Binding update after a move: re-reserve every live flow of the
    /// mobile node on `new_route`. Old reservations stay until the new one
    /// is admitted.
    pub fn handover(&mut self, mobile_node: &NodeId, care_of: NodeId, new_route: Route, sequence: u64) -> Result<Vec<Action>, SignalError> {
        self.bindings
            .update(mobile_node.clone(), care_of, new_route.clone(), sequence)?;
        let flows: Vec<FlowId> = self
            .sessions
            .iter()
            .filter(|(_, s)| &s.mobile_node == mobile_node && (s.active.is_some() || s.pending.is_some()))
            .map(|(id, _)| id.clone())
            .collect();
        let mut actions = Vec::new();
        for flow_id in flows {
            let nonce = self.fresh_nonce();
            let session = self.sessions.get_mut(&flow_id).expect("listed above");
            if let Some(old) = session.pending.take() {
                let decision = Decision {
                    flow_id: flow_id.clone(),
                    nonce: old.nonce,
                    verdict: Verdict::Reject {
                        reason: RejectReason::Superseded,
                    },
                    cumulative_bound: 0.0,
                };
                self.decisions.push(decision.clone());
                actions.push(Action::Decided {
                    decision,
                    kind: old.kind,
                });
            }
            let kind = if session.active.is_some() {
                RequestKind::Handover
            } else {
                RequestKind::Initial
            };
            session.pending = Some(PendingRequest {
                nonce,
                route: new_route.clone(),
                kind,
            });
            actions.push(Action::SendPath(PathRequest::new(session.flow.clone(), nonce, new_route.clone())?));
        }
        Ok(actions)
    }

    /// A completed report came back.
    pub fn on_report(&mut self, req: PathRequest) -> Result<Vec<Action>, SignalError> {
        let flow_id = req.flow.flow_id.clone();
        let Some(pending) = self.take_pending(&flow_id, req.nonce) else {
            // Superseded or timed out: free whatever the request still holds.
            return Ok(decision_messages(&flow_id, req.nonce, DecisionKind::Release, &req.route, req.report.len())
                .into_iter()
                .map(Action::SendDecision)
                .collect());
        };
        let session = &self.sessions[&flow_id];
        let decision = home_agent_decide(&session.flow, req.nonce, &pending.route, &req.report)?;
        Ok(self.conclude(pending, decision, req.report.len()))
    }

    /// A router could not hold the flow.
    pub fn on_reject(&mut self, sig: RejectSignal) -> Vec<Action> {
        let Some(pending) = self.take_pending(&sig.flow_id, sig.nonce) else {
            return decision_messages(&sig.flow_id, sig.nonce, DecisionKind::Release, &sig.route, sig.report.len())
                .into_iter()
                .map(Action::SendDecision)
                .collect();
        };
        let decision = Decision {
            flow_id: sig.flow_id,
            nonce: sig.nonce,
            verdict: Verdict::Reject { reason: sig.reason },
            cumulative_bound: sig.report.cumulative_bound(),
        };
        self.conclude(pending, decision, sig.report.len())
    }

    /// No answer for a request within the tentative timeout. Routers drop
    /// their own tentative state, so nothing is sent.
    pub fn on_timeout(&mut self, flow_id: &FlowId, nonce: Nonce) -> Vec<Action> {
        let Some(pending) = self.take_pending(flow_id, nonce) else {
            return Vec::new();
        };
        let decision = Decision {
            flow_id: flow_id.clone(),
            nonce,
            verdict: Verdict::Reject {
                reason: RejectReason::Timeout,
            },
            cumulative_bound: 0.0,
        };
        self.conclude(pending, decision, 0)
    }

    fn take_pending(&mut self, flow_id: &FlowId, nonce: Nonce) -> Option<PendingRequest> {
        let session = self.sessions.get_mut(flow_id)?;
        if session.pending.as_ref().is_some_and(|p| p.nonce == nonce) {
            session.pending.take()
        } else {
            None
        }
    }

    fn conclude(&mut self, pending: PendingRequest, decision: Decision, reserved_hops: usize) -> Vec<Action> {
        let session = self.sessions.get_mut(&decision.flow_id).expect("pending implies session");
        let mut actions = Vec::new();
        if decision.is_admit() {
            // Releases for the old route go first so the new commits never
            // overlap them.
            if let Some(old) = session.active.take() {
                actions.extend(
                    decision_messages(&decision.flow_id, old.nonce, DecisionKind::Release, &old.route, old.route.len())
                        .into_iter()
                        .map(Action::SendDecision),
                );
            }
            session.active = Some(ActiveReservation {
                nonce: decision.nonce,
                route: pending.route.clone(),
            });
            session.degraded = false;
        } else if pending.kind == RequestKind::Handover {
            session.degraded = true;
        }
        actions.extend(
            distribute_decision(&decision, &pending.route, reserved_hops)
                .into_iter()
                .map(Action::SendDecision),
        );
        if pending.kind == RequestKind::Handover {
            self.handovers.push(HandoverRecord {
                mobile_node: session.mobile_node.clone(),
                flow_id: decision.flow_id.clone(),
                outcome: if decision.is_admit() {
                    HandoverOutcome::Admitted
                } else {
                    HandoverOutcome::Degraded
                },
                cumulative_bound: decision.cumulative_bound,
            });
        }
        self.decisions.push(decision.clone());
        actions.push(Action::Decided {
            decision,
            kind: pending.kind,
        });
        actions
    }
}
