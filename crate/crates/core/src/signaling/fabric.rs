use std::collections::{BTreeMap, VecDeque};

use super::{handle_path_request, Action, DecisionKind, DecisionMessage, HomeAgent, Message, PathOutcome, PathRequest, SignalError};
use crate::envelope::FlowSpec;
use crate::ids::{FlowId, NodeId, Nonce};
use crate::node::{NodeError, RouterState};

#[derive(Debug, Clone, PartialEq)]
pub struct Interface {
    pub state: RouterState,
    /// Propagation delay of the outgoing link.
    pub propagation: f64,
}

/// A router with one reservable interface per downstream neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterAgent {
    id: NodeId,
    interfaces: BTreeMap<NodeId, Interface>,
}

impl RouterAgent {
    pub fn new(id: impl Into<NodeId>) -> Self {
        RouterAgent {
            id: id.into(),
            interfaces: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn add_interface(&mut self, next_hop: NodeId, state: RouterState, propagation: f64) {
        self.interfaces.insert(next_hop, Interface { state, propagation });
    }

    pub fn interface(&self, next_hop: &NodeId) -> Option<&RouterState> {
        self.interfaces.get(next_hop).map(|i| &i.state)
    }

    pub fn interfaces(&self) -> impl Iterator<Item = (&NodeId, &RouterState)> {
        self.interfaces.iter().map(|(n, i)| (n, &i.state))
    }

    fn interface_mut(&mut self, next_hop: &NodeId) -> Result<&mut Interface, SignalError> {
        let id = &self.id;
        self.interfaces
            .get_mut(next_hop)
            .ok_or_else(|| SignalError::Protocol(format!("router `{id}` has no interface toward `{next_hop}`")))
    }

    pub fn on_path(&mut self, req: PathRequest, now: f64) -> Result<PathOutcome, SignalError> {
        let next = req.route.next_after(req.hop()).clone();
        let iface = self.interface_mut(&next)?;
        handle_path_request(&mut iface.state, req, iface.propagation, now)
    }

    pub fn on_decision(&mut self, msg: &DecisionMessage) -> Result<(), SignalError> {
        let iface = self.interface_mut(&msg.next_hop)?;
        match msg.kind {
            DecisionKind::Commit => iface.state.commit(&msg.flow_id, msg.nonce)?,
            DecisionKind::Release => iface.state.release(&msg.flow_id, msg.nonce)?,
        }
        Ok(())
    }

    pub fn expire_one(&mut self, next_hop: &NodeId, flow_id: &FlowId, nonce: Nonce, now: f64) -> bool {
        self.interfaces
            .get_mut(next_hop)
            .is_some_and(|i| i.state.expire_one(flow_id, nonce, now))
    }

    pub fn admitted_copies(&self, flow_id: &FlowId) -> usize {
        self.interfaces
            .values()
            .filter(|i| i.state.admitted().contains_key(flow_id))
            .count()
    }

    pub fn tentative_count(&self) -> usize {
        self.interfaces.values().map(|i| i.state.tentative().len()).sum()
    }
}

/// Zero-latency message loop around one home agent and its routers.
///
/// Delivers messages in FIFO order until none are in flight. Useful for
/// exercising the protocol without the discrete-event simulator.
#[derive(Debug, Clone)]
pub struct InstantFabric {
    pub home_agent: HomeAgent,
    pub routers: BTreeMap<NodeId, RouterAgent>,
    /// Deliver every decision message twice.
    pub duplicate_decisions: bool,
    /// Every delivered message, in delivery order.
    pub log: Vec<Message>,
    /// Errors raised by routers while handling messages.
    pub errors: Vec<SignalError>,
}

impl InstantFabric {
    pub fn new(home_agent: HomeAgent, routers: impl IntoIterator<Item = RouterAgent>) -> Self {
        InstantFabric {
            home_agent,
            routers: routers.into_iter().map(|r| (r.id().clone(), r)).collect(),
            duplicate_decisions: false,
            log: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn open(&mut self, flow: FlowSpec, mobile_node: NodeId) -> Result<(), SignalError> {
        let actions = self.home_agent.open_session(flow, mobile_node)?;
        self.execute(actions);
        Ok(())
    }

    pub fn handover(&mut self, mobile_node: &NodeId, care_of: NodeId, route: super::Route, sequence: u64) -> Result<(), SignalError> {
        let actions = self.home_agent.handover(mobile_node, care_of, route, sequence)?;
        self.execute(actions);
        Ok(())
    }

    pub fn execute(&mut self, actions: Vec<Action>) {
        let mut queue = VecDeque::new();
        self.enqueue(&mut queue, actions);
        while let Some(msg) = queue.pop_front() {
            self.log.push(msg.clone());
            match msg {
                Message::Path(req) => {
                    let hop = req.hop();
                    let Some(router) = self.routers.get_mut(&req.route.hops[hop]) else {
                        self.errors.push(SignalError::Protocol(format!("no router `{}`", req.route.hops[hop])));
                        continue;
                    };
                    match router.on_path(req, 0.0) {
                        Ok(PathOutcome::Forward(next)) => queue.push_back(Message::Path(next)),
                        Ok(PathOutcome::Complete(done)) => queue.push_back(Message::Report(done)),
                        Ok(PathOutcome::Reject(sig)) => queue.push_back(Message::Reject(sig)),
                        Err(e) => self.errors.push(e),
                    }
                }
                Message::Report(req) => match self.home_agent.on_report(req) {
                    Ok(actions) => self.enqueue(&mut queue, actions),
                    Err(e) => self.errors.push(e),
                },
                Message::Reject(sig) => {
                    let actions = self.home_agent.on_reject(sig);
                    self.enqueue(&mut queue, actions);
                }
                Message::Decision(d) => match self.routers.get_mut(&d.router) {
                    Some(router) => {
                        if let Err(e) = router.on_decision(&d) {
                            self.errors.push(e);
                        }
                    }
                    None => self.errors.push(SignalError::Protocol(format!("no router `{}`", d.router))),
                },
                Message::BindingUpdate(_) => {}
            }
        }
    }

    fn enqueue(&self, queue: &mut VecDeque<Message>, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::SendPath(req) => queue.push_back(Message::Path(req)),
                Action::SendDecision(d) => {
                    if self.duplicate_decisions {
                        queue.push_back(Message::Decision(d.clone()));
                    }
                    queue.push_back(Message::Decision(d));
                }
                Action::Decided { .. } => {}
            }
        }
    }

    /// Number of router interfaces holding `flow_id` as admitted.
    pub fn admitted_copies(&self, flow_id: &FlowId) -> usize {
        self.routers.values().map(|r| r.admitted_copies(flow_id)).sum()
    }

    pub fn tentative_total(&self) -> usize {
        self.routers.values().map(RouterAgent::tentative_count).sum()
    }

    /// Unknown-reservation errors are expected when a release chases state
    /// that never existed; anything else is a protocol fault.
    pub fn unexpected_errors(&self) -> Vec<&SignalError> {
        self.errors
            .iter()
            .filter(|e| !matches!(e, SignalError::Node(NodeError::UnknownReservation { .. })))
            .collect()
    }
}
