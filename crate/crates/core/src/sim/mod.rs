//! Deterministic discrete-event simulation of signaling and data traffic.
//!
//! Control messages travel with propagation delay only; they never queue
//! behind data. Data packets enter the network at the first router of their
//! flow's route and are served FIFO on every outgoing link. Each delivered
//! packet is checked against the bound in force when it crossed each hop:
//! the router's bound for its admitted set, or, if the flow is not (or no
//! longer) admitted there, the bound the router would grant it now.

mod link;
mod queue;
mod source;
mod topology;
mod trace;

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use link::{fifo_link_service, FifoLink};
pub use queue::EventQueue;
pub use source::{
    conformance_excess, greedy_schedule, make_source, onoff_schedule, stream_rng, GreedySource, NoTraffic,
    OnOffSource, PacketSource,
};
pub use topology::{LinkInfo, Topology};
pub use trace::{measure_violations, write_traces, TraceSample, ViolationStats};

use crate::ids::{FlowId, NodeId, Nonce};
use crate::metrics::{FlowMetrics, MetricsSummary};
use crate::node::{NodeError, RouterConfig, RouterState};
use crate::scenario::{FlowInstance, Role, Scenario, ScenarioError, Traffic};
use crate::signaling::{
    wire, Action, BindingUpdate, Decision, HomeAgent, Message, PathOutcome, RequestKind, RouterAgent, SignalError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Generate and forward data packets; off means admission only.
    pub data_plane: bool,
    pub record_traces: bool,
    pub record_messages: bool,
}

impl RunOptions {
    pub fn full() -> Self {
        RunOptions {
            data_plane: true,
            record_traces: true,
            record_messages: true,
        }
    }

    pub fn admit_only() -> Self {
        RunOptions {
            data_plane: false,
            record_traces: false,
            record_messages: true,
        }
    }

    /// Data plane on, nothing retained beyond the summary.
    pub fn summary_only() -> Self {
        RunOptions {
            data_plane: true,
            record_traces: false,
            record_messages: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub time: f64,
    pub home_agent: NodeId,
    pub kind: RequestKind,
    pub app_delay_bound: f64,
    pub decision: Decision,
}

/// Protocol state at the end of a run.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub routers: BTreeMap<NodeId, RouterAgent>,
    pub home_agents: BTreeMap<NodeId, HomeAgent>,
}

impl NetworkState {
    pub fn admitted_copies(&self, flow_id: &FlowId) -> usize {
        self.routers.values().map(|r| r.admitted_copies(flow_id)).sum()
    }

    pub fn tentative_total(&self) -> usize {
        self.routers.values().map(RouterAgent::tentative_count).sum()
    }

    /// At quiescence: no tentative state, no pending requests, and every
    /// live flow admitted exactly once on each hop of its active route
    /// under the active nonce and nowhere else.
    pub fn check_conservation(&self) -> Result<(), String> {
        if self.tentative_total() != 0 {
            return Err(format!("{} tentative reservations left", self.tentative_total()));
        }
        for ha in self.home_agents.values() {
            for (flow_id, session) in ha.sessions() {
                if session.pending.is_some() {
                    return Err(format!("flow `{flow_id}` still has a pending request"));
                }
                let expected = session.active.as_ref().map_or(0, |a| a.route.len());
                let copies = self.admitted_copies(flow_id);
                if copies != expected {
                    return Err(format!("flow `{flow_id}`: {copies} admitted copies, expected {expected}"));
                }
                if let Some(active) = &session.active {
                    for (i, hop) in active.route.hops.iter().enumerate() {
                        let nonce = self
                            .routers
                            .get(hop)
                            .and_then(|r| r.interface(active.route.next_after(i)))
                            .and_then(|s| s.admitted().get(flow_id))
                            .map(|r| r.nonce);
                        if nonce != Some(active.nonce) {
                            return Err(format!(
                                "flow `{flow_id}`: hop `{hop}` holds {nonce:?}, expected nonce {}",
                                active.nonce
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: MetricsSummary,
    pub decisions: Vec<DecisionRecord>,
    pub traces: Vec<TraceSample>,
    /// Delivered control messages in wire format, in delivery order.
    pub messages: Vec<String>,
    pub network: NetworkState,
}

/// Runs `scenario` to quiescence. No packet is emitted after the horizon,
/// but everything in flight is delivered and all timers fire.
pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<RunResult, SimError> {
    scenario.validate()?;
    Engine::new(scenario, *options)?.run()
}

struct DataRoute {
    ifaces: Vec<usize>,
    props: Vec<f64>,
    prop_sum: f64,
}

struct Packet {
    flow: usize,
    seq: u64,
    injected: f64,
    route: Rc<DataRoute>,
    arrived: f64,
    hop_bound: f64,
    bound_sum: f64,
    hop_delays: Vec<f64>,
}

struct Iface {
    router: NodeId,
    next: NodeId,
    link: FifoLink,
    loss_rate: f64,
    loss_rng: ChaCha8Rng,
    /// Bumped on every reservation change, invalidating cached bounds.
    version: u64,
}

struct FlowState {
    inst: FlowInstance,
    home_agent: NodeId,
    source: Option<Box<dyn PacketSource>>,
    origin: f64,
    route: Option<Rc<DataRoute>>,
    emitted: u64,
    samples: u64,
    violations: u64,
    hop_violations: u64,
    lost: u64,
}

enum Event {
    FlowStart(usize),
    Handover(usize),
    Deliver { to: NodeId, msg: Message },
    RouteSwitch { flow: usize, nonce: Nonce },
    Emit(usize),
    Arrive { pkt: Packet, hop: usize },
    Depart { pkt: Packet, hop: usize },
    TentativeExpiry { router: NodeId, next: NodeId, flow: FlowId, nonce: Nonce },
    RequestTimeout { home_agent: NodeId, flow: FlowId, nonce: Nonce },
}

struct Engine<'a> {
    scenario: &'a Scenario,
    options: RunOptions,
    topo: Topology,
    queue: EventQueue<Event>,
    routers: BTreeMap<NodeId, RouterAgent>,
    home_agents: BTreeMap<NodeId, HomeAgent>,
    ifaces: Vec<Iface>,
    iface_index: BTreeMap<(NodeId, NodeId), usize>,
    bound_cache: HashMap<(usize, usize), (u64, f64)>,
    flows: Vec<FlowState>,
    flow_index: BTreeMap<FlowId, usize>,
    mn_sequence: BTreeMap<NodeId, u64>,
    control_paths: BTreeMap<(NodeId, NodeId), (f64, f64)>,
    control_rng: ChaCha8Rng,
    decisions: Vec<DecisionRecord>,
    traces: Vec<TraceSample>,
    messages: Vec<String>,
    protocol_errors: u64,
    events: u64,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, options: RunOptions) -> Result<Self, SimError> {
        let topo = Topology::from_scenario(scenario)?;
        let mut routers = BTreeMap::new();
        let mut ifaces = Vec::new();
        let mut iface_index = BTreeMap::new();
        for node in scenario.nodes.iter().filter(|n| n.role == Role::Router) {
            let mut agent = RouterAgent::new(node.id.clone());
            for ((from, to), info) in topo.links().filter(|((from, _), _)| from == &node.id) {
                let mut cfg = RouterConfig::new(
                    from.clone(),
                    info.capacity,
                    node.node_epsilon.expect("defaults filled"),
                    scenario.packet_size,
                )
                .with_mode(scenario.admission_mode);
                cfg.tentative_timeout = scenario.tentative_timeout;
                agent.add_interface(to.clone(), RouterState::new(cfg)?, info.propagation);
                iface_index.insert((from.clone(), to.clone()), ifaces.len());
                ifaces.push(Iface {
                    router: from.clone(),
                    next: to.clone(),
                    link: FifoLink::new(info.capacity),
                    loss_rate: info.loss_rate,
                    loss_rng: stream_rng(scenario.seed, &format!("loss:{from}->{to}")),
                    version: 0,
                });
            }
            routers.insert(node.id.clone(), agent);
        }

        let mut home_agents: BTreeMap<NodeId, HomeAgent> = scenario
            .nodes
            .iter()
            .filter(|n| n.role == Role::HomeAgent)
            .map(|n| (n.id.clone(), HomeAgent::new(n.id.clone())))
            .collect();
        let mut mn_sequence = BTreeMap::new();
        for mn in scenario.nodes.iter().filter(|n| n.role == Role::MobileNode) {
            let ha = mn.home_agent.clone().expect("validated");
            let attach = mn.attach.clone().expect("validated");
            let route = topo.route(&ha, &attach, &mn.id)?;
            home_agents
                .get_mut(&ha)
                .expect("validated")
                .register(mn.id.clone(), attach, route, 1)?;
            mn_sequence.insert(mn.id.clone(), 1);
        }

        let mut flows = Vec::new();
        let mut flow_index = BTreeMap::new();
        for inst in scenario.flow_instances()? {
            let home_agent = scenario
                .node(&inst.destination)
                .and_then(|n| n.home_agent.clone())
                .expect("validated");
            flow_index.insert(inst.spec.flow_id.clone(), flows.len());
            flows.push(FlowState {
                inst,
                home_agent,
                source: None,
                origin: 0.0,
                route: None,
                emitted: 0,
                samples: 0,
                violations: 0,
                hop_violations: 0,
                lost: 0,
            });
        }

        let mut queue = EventQueue::new();
        for (i, f) in flows.iter().enumerate() {
            if f.inst.start <= scenario.horizon {
                queue.schedule(f.inst.start, Event::FlowStart(i));
            }
        }
        for (i, h) in scenario.handovers.iter().enumerate() {
            queue.schedule(h.time, Event::Handover(i));
        }

        Ok(Engine {
            scenario,
            options,
            topo,
            queue,
            routers,
            home_agents,
            ifaces,
            iface_index,
            bound_cache: HashMap::new(),
            flows,
            flow_index,
            mn_sequence,
            control_paths: BTreeMap::new(),
            control_rng: stream_rng(scenario.seed, "control"),
            decisions: Vec::new(),
            traces: Vec::new(),
            messages: Vec::new(),
            protocol_errors: 0,
            events: 0,
        })
    }

    fn run(mut self) -> Result<RunResult, SimError> {
        while let Some((now, _, event)) = self.queue.pop() {
            self.events += 1;
            self.dispatch(now, event)?;
        }
        Ok(self.finish())
    }

    fn dispatch(&mut self, now: f64, event: Event) -> Result<(), SimError> {
        match event {
            Event::FlowStart(i) => {
                let f = &self.flows[i];
                let ha = f.home_agent.clone();
                let actions = self
                    .home_agents
                    .get_mut(&ha)
                    .expect("validated")
                    .open_session(f.inst.spec.clone(), f.inst.destination.clone())?;
                self.apply_actions(&ha, actions, now);
            }
            Event::Handover(i) => {
                let h = &self.scenario.handovers[i];
                let seq = self.mn_sequence.get_mut(&h.mobile_node).expect("validated");
                *seq += 1;
                let bu = BindingUpdate {
                    mobile_node: h.mobile_node.clone(),
                    care_of: h.attach.clone(),
                    sequence: *seq,
                };
                let ha = self
                    .scenario
                    .node(&h.mobile_node)
                    .and_then(|n| n.home_agent.clone())
                    .expect("validated");
                let (access, access_ok) = self
                    .topo
                    .link(&h.attach, &h.mobile_node)
                    .map_or((0.0, 1.0), |l| (l.propagation, 1.0 - l.loss_rate));
                let (delay, survival) = self.control_path(&h.attach, &ha);
                self.send(ha, Message::BindingUpdate(bu), now + access + delay, access_ok * survival);
            }
            Event::Deliver { to, msg } => self.deliver(to, msg, now)?,
            Event::RouteSwitch { flow, nonce } => self.route_switch(flow, nonce, now),
            Event::Emit(i) => self.emit(i, now),
            Event::Arrive { pkt, hop } => self.arrive(pkt, hop, now),
            Event::Depart { pkt, hop } => self.depart(pkt, hop, now),
            Event::TentativeExpiry {
                router,
                next,
                flow,
                nonce,
            } => {
                if self.routers.get_mut(&router).expect("known").expire_one(&next, &flow, nonce, now) {
                    self.touch(&router, &next);
                }
            }
            Event::RequestTimeout { home_agent, flow, nonce } => {
                let actions = self.home_agents.get_mut(&home_agent).expect("known").on_timeout(&flow, nonce);
                self.apply_actions(&home_agent, actions, now);
            }
        }
        Ok(())
    }

    fn control_path(&mut self, from: &NodeId, to: &NodeId) -> (f64, f64) {
        let topo = &self.topo;
        *self
            .control_paths
            .entry((from.clone(), to.clone()))
            .or_insert_with(|| topo.control_path(from, to).unwrap_or((0.0, 1.0)))
    }

    /// Schedules delivery unless the message is lost on the way.
    fn send(&mut self, to: NodeId, msg: Message, at: f64, survival: f64) {
        if survival < 1.0 && self.control_rng.random::<f64>() >= survival {
            return;
        }
        self.queue.schedule(at, Event::Deliver { to, msg });
    }

    fn touch(&mut self, router: &NodeId, next: &NodeId) {
        if let Some(&i) = self.iface_index.get(&(router.clone(), next.clone())) {
            self.ifaces[i].version += 1;
        }
    }

    fn apply_actions(&mut self, ha: &NodeId, actions: Vec<Action>, now: f64) {
        for action in actions {
            match action {
                Action::SendPath(req) => {
                    let first = req.route.hops[0].clone();
                    self.queue.schedule(
                        now + self.scenario.tentative_timeout,
                        Event::RequestTimeout {
                            home_agent: ha.clone(),
                            flow: req.flow.flow_id.clone(),
                            nonce: req.nonce,
                        },
                    );
                    let (delay, survival) = self.control_path(ha, &first);
                    self.send(first, Message::Path(req), now + delay, survival);
                }
                Action::SendDecision(d) => {
                    let (delay, survival) = self.control_path(ha, &d.router);
                    for _ in 0..self.scenario.decision_copies {
                        self.send(d.router.clone(), Message::Decision(d.clone()), now + delay, survival);
                    }
                }
                Action::Decided { decision, kind } => {
                    let idx = self.flow_index[&decision.flow_id];
                    if decision.is_admit() {
                        // Data moves once the last commit has had time to land.
                        let route = self.home_agents[ha]
                            .session(&decision.flow_id)
                            .and_then(|s| s.active.as_ref())
                            .map(|a| a.route.clone())
                            .expect("admitted session has an active route");
                        let settle = route
                            .hops
                            .iter()
                            .map(|h| self.control_path(ha, h).0)
                            .fold(0.0, f64::max);
                        self.queue.schedule(
                            now + settle,
                            Event::RouteSwitch {
                                flow: idx,
                                nonce: decision.nonce,
                            },
                        );
                    }
                    self.decisions.push(DecisionRecord {
                        time: now,
                        home_agent: ha.clone(),
                        kind,
                        app_delay_bound: self.flows[idx].inst.spec.app_delay_bound,
                        decision,
                    });
                }
            }
        }
    }

    fn deliver(&mut self, to: NodeId, msg: Message, now: f64) -> Result<(), SimError> {
        if self.options.record_messages {
            self.messages.push(wire::encode(&msg));
        }
        match msg {
            Message::Path(req) => {
                let hop = req.hop();
                let next = req.route.next_after(hop).clone();
                let (flow, nonce) = (req.flow.flow_id.clone(), req.nonce);
                let ha = self.flows[self.flow_index[&flow]].home_agent.clone();
                let outcome = self.routers.get_mut(&to).expect("routes contain routers").on_path(req, now);
                match outcome {
                    Ok(out) => {
                        if !matches!(out, PathOutcome::Reject(_)) {
                            self.touch(&to, &next);
                            self.queue.schedule(
                                now + self.scenario.tentative_timeout,
                                Event::TentativeExpiry {
                                    router: to.clone(),
                                    next: next.clone(),
                                    flow,
                                    nonce,
                                },
                            );
                        }
                        match out {
                            PathOutcome::Forward(req) => {
                                let (prop, ok) = self
                                    .topo
                                    .link(&to, &next)
                                    .map_or((0.0, 1.0), |l| (l.propagation, 1.0 - l.loss_rate));
                                self.send(next, Message::Path(req), now + prop, ok);
                            }
                            PathOutcome::Complete(req) => {
                                let (delay, survival) = self.control_path(&to, &ha);
                                self.send(ha, Message::Report(req), now + delay, survival);
                            }
                            PathOutcome::Reject(sig) => {
                                let (delay, survival) = self.control_path(&to, &ha);
                                self.send(ha, Message::Reject(sig), now + delay, survival);
                            }
                        }
                    }
                    Err(_) => self.protocol_errors += 1,
                }
            }
            Message::Report(req) => match self.home_agents.get_mut(&to).expect("known").on_report(req) {
                Ok(actions) => self.apply_actions(&to, actions, now),
                Err(_) => self.protocol_errors += 1,
            },
            Message::Reject(sig) => {
                let actions = self.home_agents.get_mut(&to).expect("known").on_reject(sig);
                self.apply_actions(&to, actions, now);
            }
            Message::Decision(d) => {
                let result = self.routers.get_mut(&to).expect("known").on_decision(&d);
                self.touch(&d.router, &d.next_hop);
                match result {
                    Ok(()) | Err(SignalError::Node(NodeError::UnknownReservation { .. })) => {}
                    Err(_) => self.protocol_errors += 1,
                }
            }
            Message::BindingUpdate(bu) => {
                let route = self.topo.route(&to, &bu.care_of, &bu.mobile_node)?;
                match self
                    .home_agents
                    .get_mut(&to)
                    .expect("known")
                    .handover(&bu.mobile_node, bu.care_of, route, bu.sequence)
                {
                    Ok(actions) => self.apply_actions(&to, actions, now),
                    Err(_) => self.protocol_errors += 1,
                }
            }
        }
        Ok(())
    }

    fn route_switch(&mut self, idx: usize, nonce: Nonce, now: f64) {
        let f = &self.flows[idx];
        let Some(active) = self.home_agents[&f.home_agent]
            .session(&f.inst.spec.flow_id)
            .and_then(|s| s.active.as_ref())
            .filter(|a| a.nonce == nonce)
        else {
            return;
        };
        let props = self.topo.route_propagation(&active.route);
        let ifaces = (0..active.route.len())
            .map(|i| self.iface_index[&(active.route.hops[i].clone(), active.route.next_after(i).clone())])
            .collect();
        let prop_sum = props.iter().sum();
        let f = &mut self.flows[idx];
        f.route = Some(Rc::new(DataRoute {
            ifaces,
            props,
            prop_sum,
        }));
        if !self.options.data_plane || f.source.is_some() || f.inst.traffic == Traffic::None {
            return;
        }
        let mut source = make_source(&f.inst.spec, f.inst.traffic, self.scenario.packet_size, self.scenario.seed);
        f.origin = now;
        let first = source.next_time(self.scenario.horizon - now);
        f.source = Some(source);
        if let Some(t) = first {
            self.queue.schedule(now + t, Event::Emit(idx));
        }
    }

    fn emit(&mut self, idx: usize, now: f64) {
        let f = &mut self.flows[idx];
        let route = f.route.clone().expect("sources start after a route is set");
        let pkt = Packet {
            flow: idx,
            seq: f.emitted,
            injected: now,
            route,
            arrived: now,
            hop_bound: 0.0,
            bound_sum: 0.0,
            hop_delays: Vec::new(),
        };
        f.emitted += 1;
        if f.inst.max_packets.is_none_or(|m| f.emitted < m) {
            let limit = self.scenario.horizon - f.origin;
            if let Some(t) = f.source.as_mut().expect("started").next_time(limit) {
                self.queue.schedule(f.origin + t, Event::Emit(idx));
            }
        }
        self.arrive(pkt, 0, now);
    }

    /// Bound in force at interface `iface` for packets of flow `flow`.
    fn hop_bound(&mut self, iface: usize, flow: usize) -> f64 {
        let version = self.ifaces[iface].version;
        if let Some(&(v, b)) = self.bound_cache.get(&(iface, flow)) {
            if v == version {
                return b;
            }
        }
        let state = self.routers[&self.ifaces[iface].router]
            .interface(&self.ifaces[iface].next)
            .expect("interface exists");
        let spec = &self.flows[flow].inst.spec;
        let bound = if state.admitted().contains_key(&spec.flow_id) {
            state.admitted_bound().map(|b| b.value)
        } else {
            state.local_delay_bound(spec).ok().map(|b| b.value)
        }
        .unwrap_or(f64::INFINITY);
        self.bound_cache.insert((iface, flow), (version, bound));
        bound
    }

    fn arrive(&mut self, mut pkt: Packet, hop: usize, now: f64) {
        let iface = pkt.route.ifaces[hop];
        let bound = self.hop_bound(iface, pkt.flow);
        pkt.hop_bound = bound;
        pkt.bound_sum += bound;
        pkt.arrived = now;
        let departure = self.ifaces[iface].link.serve(now, self.scenario.packet_size);
        self.queue.schedule(departure, Event::Depart { pkt, hop });
    }

    fn depart(&mut self, mut pkt: Packet, hop: usize, now: f64) {
        let sojourn = now - pkt.arrived;
        pkt.hop_delays.push(sojourn);
        let f = &mut self.flows[pkt.flow];
        if sojourn > pkt.hop_bound {
            f.hop_violations += 1;
        }
        let iface = &mut self.ifaces[pkt.route.ifaces[hop]];
        if iface.loss_rate > 0.0 && iface.loss_rng.random::<f64>() < iface.loss_rate {
            f.lost += 1;
            return;
        }
        let next_arrival = now + pkt.route.props[hop];
        if hop + 1 < pkt.route.ifaces.len() {
            self.queue.schedule(next_arrival, Event::Arrive { pkt, hop: hop + 1 });
            return;
        }
        let e2e = next_arrival - pkt.injected;
        f.samples += 1;
        if e2e > pkt.bound_sum + pkt.route.prop_sum {
            f.violations += 1;
        }
        if self.options.record_traces {
            self.traces.push(TraceSample {
                flow_id: f.inst.spec.flow_id.clone(),
                seq: pkt.seq,
                hop_delays: pkt.hop_delays,
                e2e_delay: e2e,
            });
        }
    }

    fn finish(self) -> RunResult {
        let admitted = self.decisions.iter().filter(|d| d.decision.is_admit()).count() as u64;
        let rejected = self.decisions.len() as u64 - admitted;
        let max_cum_bound = self
            .decisions
            .iter()
            .filter(|d| d.decision.is_admit())
            .map(|d| d.decision.cumulative_bound)
            .fold(0.0, f64::max);
        let utilization = self
            .routers
            .values()
            .flat_map(|r| r.interfaces())
            .map(|(_, s)| s.admitted_rate() / s.capacity())
            .fold(0.0, f64::max);

        let mut flows = BTreeMap::new();
        let (mut samples, mut violations, mut hop_violations, mut lost) = (0, 0, 0, 0);
        for f in &self.flows {
            let id = &f.inst.spec.flow_id;
            let session = self.home_agents[&f.home_agent].session(id);
            let cumulative_bound = self
                .decisions
                .iter()
                .rev()
                .find(|d| &d.decision.flow_id == id && d.decision.is_admit())
                .map(|d| d.decision.cumulative_bound);
            let stats = ViolationStats::from_counts(f.violations, f.samples);
            flows.insert(
                id.clone(),
                FlowMetrics {
                    admitted: session.is_some_and(|s| s.active.is_some()),
                    degraded: session.is_some_and(|s| s.degraded),
                    cumulative_bound,
                    app_delay_bound: f.inst.spec.app_delay_bound,
                    samples: f.samples,
                    violations: f.violations,
                    violation_freq: stats.frequency,
                    hop_violations: f.hop_violations,
                    lost: f.lost,
                },
            );
            samples += f.samples;
            violations += f.violations;
            hop_violations += f.hop_violations;
            lost += f.lost;
        }
        let handovers = self
            .home_agents
            .values()
            .flat_map(|ha| ha.handovers().iter().cloned())
            .collect();

        let summary = MetricsSummary {
            scenario: self.scenario.name.clone(),
            mode: self.scenario.admission_mode,
            seed: self.scenario.seed,
            admitted,
            rejected,
            utilization,
            max_cum_bound,
            samples,
            violations,
            violation_freq: ViolationStats::from_counts(violations, samples).frequency,
            hop_violations,
            lost_packets: lost,
            protocol_errors: self.protocol_errors,
            events: self.events,
            flows,
            handovers,
        };
        RunResult {
            summary,
            decisions: self.decisions,
            traces: self.traces,
            messages: self.messages,
            network: NetworkState {
                routers: self.routers,
                home_agents: self.home_agents,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hop(extra: &str, flows: &str) -> Scenario {
        Scenario::parse(&format!(
            r#"
name = "one_hop"
horizon = 2.0
admission_mode = "deterministic"
{extra}
nodes = [
  {{ id = "ha", role = "home_agent" }},
  {{ id = "r1", role = "router" }},
  {{ id = "mn", role = "mobile_node", home_agent = "ha", attach = "r1" }},
]
links = [
  {{ from = "ha", to = "r1", capacity = 1e7, propagation = 0.001 }},
  {{ from = "r1", to = "mn", capacity = 1.5e6, propagation = 0.002 }},
]
{flows}
"#
        ))
        .unwrap()
    }

    const GREEDY: &str = r#"
[[flows]]
id = "f"
source = "ha"
destination = "mn"
peak_rate = 2e6
sustained_rate = 1e6
burst = 1e5
epsilon = 1e-3
app_delay_bound = 0.1
"#;

    #[test]
    fn empty_scenario_runs_no_events() {
        let r = run(&one_hop("", ""), &RunOptions::full()).unwrap();
        assert_eq!(r.summary.events, 0);
        assert!(r.traces.is_empty());
        assert!(r.messages.is_empty());
    }

    #[test]
    fn greedy_single_hop_stays_within_bound() {
        let r = run(&one_hop("", GREEDY), &RunOptions::full()).unwrap();
        assert_eq!(r.summary.admitted, 1);
        let bound = 0.1 / 3.0 + 12_000.0 / 1.5e6;
        assert!(!r.traces.is_empty());
        let stats = measure_violations(&r.traces, bound + 0.002).unwrap();
        assert_eq!(stats.violations, 0);
        assert_eq!(r.summary.violations, 0);
        assert_eq!(r.summary.hop_violations, 0);
        for s in &r.traces {
            let sum: f64 = s.hop_delays.iter().sum::<f64>() + 0.002;
            assert!((s.e2e_delay - sum).abs() < 1e-12);
        }
        // The worst packet comes within a transmission time of the bound.
        let worst = r.traces.iter().map(|s| s.hop_delays[0]).fold(0.0, f64::max);
        assert!(worst > bound - 12_000.0 / 1.5e6, "{worst}");
        r.network.check_conservation().unwrap();
    }

    #[test]
    fn packets_start_after_admission_and_stop_at_horizon() {
        let r = run(&one_hop("", GREEDY), &RunOptions::full()).unwrap();
        let admit = r.decisions[0].time;
        assert_eq!(admit, 0.002);
        let last = r.traces.last().unwrap();
        let max_packets = ((2.0 - 0.003) * 1e6 + 1e5) / 12_000.0;
        assert!((last.seq as f64) < max_packets);
    }

    #[test]
    fn admit_mode_matches_run_decisions() {
        let s = one_hop("", &format!("{GREEDY}\n{}", GREEDY.replace("\"f\"", "\"g\"")));
        let full = run(&s, &RunOptions::full()).unwrap();
        let admit = run(&s, &RunOptions::admit_only()).unwrap();
        assert_eq!(full.decisions, admit.decisions);
        assert_eq!(full.messages, admit.messages);
        assert_eq!(admit.summary.samples, 0);
        assert_eq!(full.summary.admitted, 1);
        assert_eq!(full.summary.rejected, 1);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let flows = GREEDY.replace(
            "app_delay_bound = 0.1",
            "app_delay_bound = 0.1\ntraffic = { kind = \"on_off\", on_mean = 0.05, off_mean = 0.05 }",
        );
        let s = one_hop("seed = 9", &flows);
        let a = run(&s, &RunOptions::full()).unwrap();
        let b = run(&s, &RunOptions::full()).unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.summary, b.summary);
        let c = run(&s.with_param(crate::scenario::SweepParam::Seed, 10.0).unwrap(), &RunOptions::full()).unwrap();
        assert_ne!(a.traces, c.traces);
    }

    #[test]
    fn lost_path_request_times_out() {
        let s = one_hop("", GREEDY);
        let mut lossy = s.clone();
        lossy.links[0].loss_rate = 0.999_999;
        let r = run(&lossy, &RunOptions::admit_only()).unwrap();
        assert_eq!(r.summary.admitted, 0);
        assert_eq!(r.summary.rejected, 1);
        assert!(matches!(
            r.decisions[0].decision.verdict,
            crate::signaling::Verdict::Reject {
                reason: crate::signaling::RejectReason::Timeout
            }
        ));
        assert_eq!(r.decisions[0].time, 2.0);
        r.network.check_conservation().unwrap();
    }
}
