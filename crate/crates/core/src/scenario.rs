//! Scenario files: topology, flows and scripted handovers in TOML.
//!
//! Units are bits, bits per second and seconds throughout. See
//! `docs/scenario.md` for the full schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{FlowSpec, PeakRate};
use crate::ids::{FlowId, NodeId};
use crate::node::{AdmissionMode, DEFAULT_TENTATIVE_TIMEOUT};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_PACKET_SIZE: f64 = 12_000.0;
pub const DEFAULT_NODE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HomeAgent,
    Router,
    MobileNode,
    Correspondent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: Role,
    /// Routers only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_epsilon: Option<f64>,
    /// Mobile nodes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_agent: Option<NodeId>,
    /// Mobile nodes only: the access router at time 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attach: Option<NodeId>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub capacity: f64,
    pub propagation: f64,
    #[serde(default)]
    pub loss_rate: f64,
    /// Also create the reverse link with the same parameters.
    #[serde(default = "yes")]
    pub bidirectional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Traffic {
    /// Envelope-extremal: the whole burst at peak rate, then sustained rate.
    #[default]
    Greedy,
    /// Exponential on/off at peak rate behind a token-bucket shaper.
    OnOff { on_mean: f64, off_mean: f64 },
    /// Reservation only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEntry {
    pub id: String,
    pub source: NodeId,
    pub destination: NodeId,
    /// Omitted or `inf` means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_rate: Option<f64>,
    pub sustained_rate: f64,
    pub burst: f64,
    pub epsilon: f64,
    pub app_delay_bound: f64,
    #[serde(default)]
    pub start: f64,
    /// Start offset between consecutive copies when `count` is set.
    #[serde(default)]
    pub spacing: f64,
    /// Expand into `count` identical flows named `{id}-{i}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_packets: Option<u64>,
    #[serde(default)]
    pub traffic: Traffic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandoverSpec {
    pub time: f64,
    pub mobile_node: NodeId,
    pub attach: NodeId,
}

fn default_metrics() -> String {
    "metrics.csv".into()
}
fn default_summary() -> String {
    "metrics.json".into()
}
fn default_trace() -> String {
    "trace.ndjson".into()
}
fn default_messages() -> String {
    "messages.ndjson".into()
}

/// Output file names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_metrics")]
    pub metrics: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_messages")]
    pub messages: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            metrics: default_metrics(),
            summary: default_summary(),
            trace: default_trace(),
            messages: default_messages(),
        }
    }
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_mode() -> AdmissionMode {
    AdmissionMode::Effective
}
fn default_packet_size() -> f64 {
    DEFAULT_PACKET_SIZE
}
fn default_timeout() -> f64 {
    DEFAULT_TENTATIVE_TIMEOUT
}
fn default_copies() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub horizon: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub admission_mode: AdmissionMode,
    #[serde(default = "default_packet_size")]
    pub packet_size: f64,
    #[serde(default = "default_timeout")]
    pub tentative_timeout: f64,
    /// Each commit/release is sent this many times.
    #[serde(default = "default_copies")]
    pub decision_copies: u32,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub flows: Vec<FlowEntry>,
    #[serde(default)]
    pub handovers: Vec<HandoverSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// One concrete flow after `count` expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowInstance {
    pub spec: FlowSpec,
    pub source: NodeId,
    pub destination: NodeId,
    pub start: f64,
    pub traffic: Traffic,
    pub max_packets: Option<u64>,
}

/// Loads, fills defaults and validates.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::parse(&text).map_err(|e| match e {
        ScenarioError::Parse { message, .. } => ScenarioError::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: "<input>".into(),
            message: e.to_string(),
        })?;
        scenario.fill_defaults();
        scenario.validate()?;
        Ok(scenario)
    }

    /// TOML with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    fn fill_defaults(&mut self) {
        for node in &mut self.nodes {
            if node.role == Role::Router && node.node_epsilon.is_none() {
                node.node_epsilon = Some(DEFAULT_NODE_EPSILON);
            }
        }
        for flow in &mut self.flows {
            if flow.peak_rate == Some(f64::INFINITY) {
                flow.peak_rate = None;
            }
        }
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn role_of(&self, id: &NodeId) -> Option<Role> {
        self.node(id).map(|n| n.role)
    }

    /// Directed links, reverse directions included.
    pub fn directed_links(&self) -> BTreeMap<(NodeId, NodeId), &LinkSpec> {
        let mut out = BTreeMap::new();
        for l in &self.links {
            out.insert((l.from.clone(), l.to.clone()), l);
            if l.bidirectional {
                out.entry((l.to.clone(), l.from.clone())).or_insert(l);
            }
        }
        out
    }

    pub fn flow_instances(&self) -> Result<Vec<FlowInstance>, ScenarioError> {
        let mut out = Vec::new();
        for entry in &self.flows {
            let peak = entry.peak_rate.map_or(PeakRate::Unbounded, PeakRate::from_f64);
            let copies = entry.count.unwrap_or(1);
            let width = copies.saturating_sub(1).max(1).to_string().len();
            for i in 0..copies {
                let id = match entry.count {
                    Some(_) => format!("{}-{:0width$}", entry.id, i),
                    None => entry.id.clone(),
                };
                let spec = FlowSpec::new(
                    id.as_str(),
                    peak,
                    entry.sustained_rate,
                    entry.burst,
                    entry.epsilon,
                    entry.app_delay_bound,
                )
                .map_err(|e| ScenarioError::Invalid(format!("flow `{id}`: {e}")))?;
                out.push(FlowInstance {
                    spec,
                    source: entry.source.clone(),
                    destination: entry.destination.clone(),
                    start: entry.start + entry.spacing * f64::from(i),
                    traffic: entry.traffic,
                    max_packets: entry.max_packets,
                });
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() {
            return invalid("name is empty");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return invalid(format!("horizon must be positive and finite, got {}", self.horizon));
        }
        if !(self.packet_size > 0.0 && self.packet_size.is_finite()) {
            return invalid(format!("packet_size must be positive, got {}", self.packet_size));
        }
        if !(self.tentative_timeout > 0.0 && self.tentative_timeout.is_finite()) {
            return invalid(format!("tentative_timeout must be positive, got {}", self.tentative_timeout));
        }
        if self.decision_copies == 0 {
            return invalid("decision_copies must be at least 1");
        }

        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(&n.id) {
                return invalid(format!("duplicate node id `{}`", n.id));
            }
        }
        for n in &self.nodes {
            self.validate_node(n)?;
        }

        let mut seen = BTreeSet::new();
        for l in &self.links {
            for end in [&l.from, &l.to] {
                if self.node(end).is_none() {
                    return invalid(format!("link {} -> {} references unknown node `{end}`", l.from, l.to));
                }
            }
            if l.from == l.to {
                return invalid(format!("self-loop link at `{}`", l.from));
            }
            if !(l.capacity > 0.0 && l.capacity.is_finite()) {
                return invalid(format!("link {} -> {}: capacity must be positive, got {}", l.from, l.to, l.capacity));
            }
            if !(l.propagation >= 0.0 && l.propagation.is_finite()) {
                return invalid(format!("link {} -> {}: propagation must be ≥ 0, got {}", l.from, l.to, l.propagation));
            }
            if !(0.0..1.0).contains(&l.loss_rate) {
                return invalid(format!("link {} -> {}: loss_rate must be in [0, 1), got {}", l.from, l.to, l.loss_rate));
            }
            let mut dirs = vec![(&l.from, &l.to)];
            if l.bidirectional {
                dirs.push((&l.to, &l.from));
            }
            for d in dirs {
                if !seen.insert(d) {
                    return invalid(format!("duplicate link {} -> {}", d.0, d.1));
                }
            }
        }

        let flows = self.flow_instances()?;
        let mut flow_ids = BTreeSet::new();
        if let Some(e) = self.flows.iter().find(|e| e.peak_rate.is_some_and(|p| !(p > 0.0))) {
            return invalid(format!("flow `{}`: peak_rate must be positive", e.id));
        }
        for f in &flows {
            let id = &f.spec.flow_id;
            if !flow_ids.insert(id.clone()) {
                return invalid(format!("duplicate flow id `{id}`"));
            }
            match self.role_of(&f.source) {
                Some(Role::HomeAgent | Role::Correspondent) => {}
                Some(_) => return invalid(format!("flow `{id}`: source `{}` is not a home agent or correspondent", f.source)),
                None => return invalid(format!("flow `{id}`: unknown source `{}`", f.source)),
            }
            match self.role_of(&f.destination) {
                Some(Role::MobileNode) => {}
                Some(_) => return invalid(format!("flow `{id}`: destination `{}` is not a mobile node", f.destination)),
                None => return invalid(format!("flow `{id}`: unknown destination `{}`", f.destination)),
            }
            if !(f.start >= 0.0 && f.start.is_finite()) {
                return invalid(format!("flow `{id}`: start must be ≥ 0"));
            }
            if let Traffic::OnOff { on_mean, off_mean } = f.traffic {
                if !(on_mean >= 0.0 && off_mean >= 0.0 && on_mean.is_finite() && off_mean.is_finite()) {
                    return invalid(format!("flow `{id}`: on/off means must be finite and ≥ 0"));
                }
                if f.spec.peak_rate.finite().is_none() {
                    return invalid(format!("flow `{id}`: on/off traffic needs a finite peak_rate"));
                }
                if f.spec.burst < self.packet_size {
                    return invalid(format!("flow `{id}`: on/off shaping needs burst ≥ packet_size"));
                }
            }
        }
        if let Some(e) = self.flows.iter().find(|e| e.spacing < 0.0 || !e.spacing.is_finite()) {
            return invalid(format!("flow `{}`: spacing must be ≥ 0", e.id));
        }

        let links = self.directed_links();
        for h in &self.handovers {
            if !(h.time >= 0.0 && h.time <= self.horizon) {
                return invalid(format!("handover of `{}` at {} is outside [0, horizon]", h.mobile_node, h.time));
            }
            if self.role_of(&h.mobile_node) != Some(Role::MobileNode) {
                return invalid(format!("handover references unknown mobile node `{}`", h.mobile_node));
            }
            self.check_attachment(&h.mobile_node, &h.attach, &links)?;
        }

        let topo = crate::sim::Topology::from_scenario(self)?;
        for n in self.nodes.iter().filter(|n| n.role == Role::MobileNode) {
            let ha = n.home_agent.as_ref().expect("checked in validate_node");
            let attach = n.attach.as_ref().expect("checked in validate_node");
            topo.route(ha, attach, &n.id)?;
            for h in self.handovers.iter().filter(|h| h.mobile_node == n.id) {
                topo.route(ha, &h.attach, &n.id)?;
            }
        }
        Ok(())
    }

    fn validate_node(&self, n: &NodeSpec) -> Result<(), ScenarioError> {
        let id = &n.id;
        if n.role != Role::Router && n.node_epsilon.is_some() {
            return invalid(format!("node `{id}`: node_epsilon is only valid on routers"));
        }
        if n.role != Role::MobileNode && (n.home_agent.is_some() || n.attach.is_some()) {
            return invalid(format!("node `{id}`: home_agent/attach are only valid on mobile nodes"));
        }
        match n.role {
            Role::Router => {
                let eps = n.node_epsilon.unwrap_or(DEFAULT_NODE_EPSILON);
                if !(eps > 0.0 && eps < 1.0) {
                    return invalid(format!("router `{id}`: node_epsilon must be in (0, 1), got {eps}"));
                }
            }
            Role::MobileNode => {
                let Some(ha) = &n.home_agent else {
                    return invalid(format!("mobile node `{id}` has no home_agent"));
                };
                if self.role_of(ha) != Some(Role::HomeAgent) {
                    return invalid(format!("mobile node `{id}`: `{ha}` is not a home agent"));
                }
                let Some(attach) = &n.attach else {
                    return invalid(format!("mobile node `{id}` has no attach router"));
                };
                self.check_attachment(id, attach, &self.directed_links())?;
            }
            Role::HomeAgent | Role::Correspondent => {}
        }
        Ok(())
    }

    fn check_attachment(
        &self,
        mn: &NodeId,
        attach: &NodeId,
        links: &BTreeMap<(NodeId, NodeId), &LinkSpec>,
    ) -> Result<(), ScenarioError> {
        if self.role_of(attach) != Some(Role::Router) {
            return invalid(format!("mobile node `{mn}`: attachment `{attach}` is not a router"));
        }
        if !links.contains_key(&(attach.clone(), mn.clone())) {
            return invalid(format!("mobile node `{mn}`: no link from `{attach}` to it"));
        }
        Ok(())
    }

    /// Copy with one scalar parameter replaced.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Scenario, ScenarioError> {
        let mut s = self.clone();
        let as_count = |v: f64| -> Result<u64, ScenarioError> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u64)
            } else {
                invalid(format!("{param} needs a non-negative integer, got {v}"))
            }
        };
        match param {
            SweepParam::Capacity => s.links.iter_mut().for_each(|l| l.capacity = value),
            SweepParam::LossRate => s.links.iter_mut().for_each(|l| l.loss_rate = value),
            SweepParam::NodeEpsilon => s
                .nodes
                .iter_mut()
                .filter(|n| n.role == Role::Router)
                .for_each(|n| n.node_epsilon = Some(value)),
            SweepParam::AppDelayBound => s.flows.iter_mut().for_each(|f| f.app_delay_bound = value),
            SweepParam::Burst => s.flows.iter_mut().for_each(|f| f.burst = value),
            SweepParam::SustainedRate => s.flows.iter_mut().for_each(|f| f.sustained_rate = value),
            SweepParam::FlowCount => {
                let n = as_count(value)? as u32;
                s.flows.iter_mut().for_each(|f| f.count = Some(n));
            }
            SweepParam::PacketSize => s.packet_size = value,
            SweepParam::Horizon => s.horizon = value,
            SweepParam::Seed => s.seed = as_count(value)?,
        }
        s.validate()?;
        Ok(s)
    }
}

/// Scalars `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SweepParam {
    /// Every link's capacity.
    Capacity,
    /// Every link's loss rate.
    LossRate,
    /// Every router's violation budget.
    NodeEpsilon,
    AppDelayBound,
    Burst,
    SustainedRate,
    /// `count` of every flow entry.
    FlowCount,
    PacketSize,
    Horizon,
    Seed,
}

impl SweepParam {
    pub const ALL: [SweepParam; 10] = [
        SweepParam::Capacity,
        SweepParam::LossRate,
        SweepParam::NodeEpsilon,
        SweepParam::AppDelayBound,
        SweepParam::Burst,
        SweepParam::SustainedRate,
        SweepParam::FlowCount,
        SweepParam::PacketSize,
        SweepParam::Horizon,
        SweepParam::Seed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Capacity => "capacity",
            SweepParam::LossRate => "loss_rate",
            SweepParam::NodeEpsilon => "node_epsilon",
            SweepParam::AppDelayBound => "app_delay_bound",
            SweepParam::Burst => "burst",
            SweepParam::SustainedRate => "sustained_rate",
            SweepParam::FlowCount => "flow_count",
            SweepParam::PacketSize => "packet_size",
            SweepParam::Horizon => "horizon",
            SweepParam::Seed => "seed",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SweepParam::ALL.iter().map(|p| p.as_str()).collect();
                format!("unknown sweep parameter `{s}` (expected one of: {})", names.join(", "))
            })
    }
}

/// Flow ids grouped by the mobile node they terminate at.
pub fn flows_by_destination(flows: &[FlowInstance]) -> BTreeMap<NodeId, Vec<FlowId>> {
    let mut out: BTreeMap<NodeId, Vec<FlowId>> = BTreeMap::new();
    for f in flows {
        out.entry(f.destination.clone()).or_default().push(f.spec.flow_id.clone());
    }
    out
}
