use std::collections::BTreeMap;

use petgraph::algo::astar;
use petgraph::graph::{DiGraph, NodeIndex, UnGraph};

use crate::ids::NodeId;
use crate::scenario::{Role, Scenario, ScenarioError};
use crate::signaling::Route;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkInfo {
    pub capacity: f64,
    pub propagation: f64,
    pub loss_rate: f64,
}

/// Nodes and directed links of a scenario, with route computation.
///
/// Data routes are shortest-propagation paths from a home agent to an
/// access router through routers only. Control messages that do not
/// follow a route (reports, decisions, binding updates) take the
/// shortest path over all links regardless of direction.
#[derive(Debug, Clone)]
pub struct Topology {
    roles: BTreeMap<NodeId, Role>,
    links: BTreeMap<(NodeId, NodeId), LinkInfo>,
    data: DiGraph<NodeId, f64>,
    data_index: BTreeMap<NodeId, NodeIndex>,
    control: UnGraph<NodeId, f64>,
    control_index: BTreeMap<NodeId, NodeIndex>,
}

impl Topology {
    pub fn from_scenario(s: &Scenario) -> Result<Self, ScenarioError> {
        let roles: BTreeMap<NodeId, Role> = s.nodes.iter().map(|n| (n.id.clone(), n.role)).collect();
        let links: BTreeMap<(NodeId, NodeId), LinkInfo> = s
            .directed_links()
            .into_iter()
            .map(|(k, l)| {
                (
                    k,
                    LinkInfo {
                        capacity: l.capacity,
                        propagation: l.propagation,
                        loss_rate: l.loss_rate,
                    },
                )
            })
            .collect();

        let mut data = DiGraph::new();
        let mut data_index = BTreeMap::new();
        for (id, role) in &roles {
            if matches!(role, Role::HomeAgent | Role::Router) {
                data_index.insert(id.clone(), data.add_node(id.clone()));
            }
        }
        let mut control = UnGraph::new_undirected();
        let control_index: BTreeMap<NodeId, NodeIndex> =
            roles.keys().map(|id| (id.clone(), control.add_node(id.clone()))).collect();
        for ((from, to), info) in &links {
            // Home agents only originate routes.
            if roles[to] == Role::Router {
                if let (Some(&a), Some(&b)) = (data_index.get(from), data_index.get(to)) {
                    data.add_edge(a, b, info.propagation);
                }
            }
            if from < to || !links.contains_key(&(to.clone(), from.clone())) {
                control.add_edge(control_index[from], control_index[to], info.propagation);
            }
        }
        Ok(Topology {
            roles,
            links,
            data,
            data_index,
            control,
            control_index,
        })
    }

    pub fn role(&self, id: &NodeId) -> Option<Role> {
        self.roles.get(id).copied()
    }

    pub fn link(&self, from: &NodeId, to: &NodeId) -> Option<&LinkInfo> {
        self.links.get(&(from.clone(), to.clone()))
    }

    pub fn links(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &LinkInfo)> {
        self.links.iter()
    }

    /// Shortest route from `home_agent` to `mobile_node` entering through `attach`.
    pub fn route(&self, home_agent: &NodeId, attach: &NodeId, mobile_node: &NodeId) -> Result<Route, ScenarioError> {
        let no_route = || ScenarioError::Invalid(format!("no router path from `{home_agent}` to `{attach}`"));
        let (&start, &goal) = match (self.data_index.get(home_agent), self.data_index.get(attach)) {
            (Some(s), Some(g)) => (s, g),
            _ => return Err(no_route()),
        };
        if self.link(attach, mobile_node).is_none() {
            return Err(ScenarioError::Invalid(format!("no link from `{attach}` to `{mobile_node}`")));
        }
        let (_, path) = astar(&self.data, start, |n| n == goal, |e| *e.weight(), |_| 0.0).ok_or_else(no_route)?;
        let hops: Vec<NodeId> = path[1..].iter().map(|&i| self.data[i].clone()).collect();
        if hops.is_empty() {
            return Err(no_route());
        }
        Ok(Route::new(hops, mobile_node.clone()))
    }

    /// Propagation delay and delivery probability of a control message
    /// travelling from `from` to `to` along the shortest path.
    pub fn control_path(&self, from: &NodeId, to: &NodeId) -> Option<(f64, f64)> {
        let start = *self.control_index.get(from)?;
        let goal = *self.control_index.get(to)?;
        let (delay, path) = astar(&self.control, start, |n| n == goal, |e| *e.weight(), |_| 0.0)?;
        let survival = path
            .windows(2)
            .map(|w| {
                let (a, b) = (&self.control[w[0]], &self.control[w[1]]);
                let loss = self.link(a, b).or_else(|| self.link(b, a)).map_or(0.0, |l| l.loss_rate);
                1.0 - loss
            })
            .product();
        Some((delay, survival))
    }

    /// Propagation delays along `route`, one per router: the link leaving it.
    pub fn route_propagation(&self, route: &Route) -> Vec<f64> {
        (0..route.len())
            .map(|i| self.link(&route.hops[i], route.next_after(i)).map_or(0.0, |l| l.propagation))
            .collect()
    }
}
