//! Per-router reservation state and the local FIFO delay bound.
//!
//! For a work-conserving FIFO server of rate `C` fed by aggregate envelope
//! `G`, the worst-case delay is the largest horizontal deviation
//! `max_{0 ≤ t ≤ B} (G(t) − C·t) / C`, where `B` is the busy period. One
//! packet transmission time is added on top for packetization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{
    check_probability, effective_envelope_of, sum_envelopes, ArrivalEnvelope, EnvelopeError,
    FlowSpec, PiecewiseEnvelope,
};
use crate::ids::{FlowId, NodeId, Nonce};

/// Absolute tolerance of the numeric searches on non-piecewise-linear curves.
pub const SEARCH_TOLERANCE: f64 = 1e-9;
/// Uniform grid size used to seed the argmax and busy-period searches.
pub const SEARCH_GRID_POINTS: usize = 1024;
/// Default lifetime of a tentative reservation, in seconds.
pub const DEFAULT_TENTATIVE_TIMEOUT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NodeError {
    #[error("unstable: long-run arrival rate {rate} ≥ capacity {capacity}")]
    Unstable { rate: f64, capacity: f64 },
    #[error("flow `{flow_id}` already holds a reservation under nonce {nonce}")]
    Duplicate { flow_id: FlowId, nonce: Nonce },
    #[error("no reservation for flow `{flow_id}` nonce {nonce}")]
    UnknownReservation { flow_id: FlowId, nonce: Nonce },
    #[error("tentative reservation for flow `{flow_id}` nonce {nonce} already expired")]
    Expired { flow_id: FlowId, nonce: Nonce },
    #[error("commit for flow `{flow_id}` nonce {nonce} after it was released")]
    StaleDecision { flow_id: FlowId, nonce: Nonce },
    #[error("invalid router configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// Which aggregate envelope a router bounds its delay with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionMode {
    /// Worst-case sum of member envelopes; hard bound.
    Deterministic,
    /// Hoeffding effective envelope at the router's `node_epsilon`.
    Effective,
}

impl AdmissionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdmissionMode::Deterministic => "deterministic",
            AdmissionMode::Effective => "effective",
        }
    }
}

impl std::str::FromStr for AdmissionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(AdmissionMode::Deterministic),
            "effective" => Ok(AdmissionMode::Effective),
            other => Err(format!(
                "unknown admission mode `{other}` (expected deterministic or effective)"
            )),
        }
    }
}

/// A local delay bound and where it was attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBound {
    /// Queueing bound plus packetization slack, seconds.
    pub value: f64,
    pub busy_period: f64,
    pub achieved_at: f64,
}

/// Smallest `t > 0` with `env(t) ≤ capacity·t`.
///
/// Exact for piecewise-linear envelopes; otherwise bracketed on a grid and
/// bisected to [`SEARCH_TOLERANCE`].
pub fn busy_period<E: ArrivalEnvelope + ?Sized>(capacity: f64, env: &E) -> Result<f64, NodeError> {
    check_capacity(capacity)?;
    let rate = env.long_run_rate();
    if rate >= capacity {
        return Err(NodeError::Unstable { rate, capacity });
    }
    match env.as_piecewise() {
        Some(pwl) => Ok(piecewise_busy_period(capacity, pwl)),
        None => Ok(searched_busy_period(capacity, env)),
    }
}

fn check_capacity(capacity: f64) -> Result<(), NodeError> {
    if !(capacity > 0.0) || !capacity.is_finite() {
        return Err(NodeError::Config("capacity must be positive and finite"));
    }
    Ok(())
}

fn piecewise_busy_period(capacity: f64, env: &PiecewiseEnvelope) -> f64 {
    let segs = env.segments();
    let bps = env.breakpoints();
    for (k, seg) in segs.iter().enumerate() {
        if seg.rate > capacity || (seg.rate == capacity && seg.offset > 0.0) {
            continue;
        }
        let root = if seg.offset == 0.0 {
            0.0
        } else {
            seg.offset / (capacity - seg.rate)
        };
        // The root only counts if this segment is the active one there.
        let end = bps.get(k).copied().unwrap_or(f64::INFINITY);
        if root <= end {
            let start = if k == 0 { 0.0 } else { bps[k - 1] };
            return root.max(start);
        }
    }
    unreachable!("last segment rate is below capacity")
}

fn searched_busy_period<E: ArrivalEnvelope + ?Sized>(capacity: f64, env: &E) -> f64 {
    let backlog = |t: f64| env.value_at(t) - capacity * t;
    let kinks = env.kinks();
    let mut hi = kinks.last().copied().unwrap_or(0.0).max(1e-6);
    while backlog(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut points: Vec<f64> = kinks.into_iter().filter(|&k| k > 0.0 && k < hi).collect();
    points.extend((1..=SEARCH_GRID_POINTS).map(|i| hi * i as f64 / SEARCH_GRID_POINTS as f64));
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut lo = 0.0;
    for &p in &points {
        if backlog(p) <= 0.0 {
            hi = p;
            break;
        }
        lo = p;
    }
    while hi - lo > SEARCH_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if backlog(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// FIFO delay bound of `env` behind a server of rate `capacity`, plus one
/// packet transmission time.
pub fn fifo_delay_bound<E: ArrivalEnvelope + ?Sized>(
    env: &E,
    capacity: f64,
    packet_size: f64,
) -> Result<DelayBound, NodeError> {
    let busy = busy_period(capacity, env)?;
    let backlog = |t: f64| env.value_at(t) - capacity * t;

    let (best_t, best) = match env.as_piecewise() {
        Some(pwl) => {
            // Concave piecewise-linear: the max sits on a breakpoint or an end.
            let mut best = (0.0, backlog(0.0));
            for t in pwl.breakpoints().into_iter().filter(|&t| t <= busy).chain([busy]) {
                let v = backlog(t);
                if v > best.1 {
                    best = (t, v);
                }
            }
            best
        }
        None => searched_max(&backlog, env.kinks(), busy),
    };
    let queueing = (best / capacity).max(0.0);
    Ok(DelayBound {
        value: queueing + packet_size / capacity,
        busy_period: busy,
        achieved_at: best_t.clamp(0.0, busy),
    })
}

fn searched_max(f: &dyn Fn(f64) -> f64, kinks: Vec<f64>, busy: f64) -> (f64, f64) {
    if busy <= 0.0 {
        return (0.0, f(0.0));
    }
    let mut points: Vec<f64> = kinks.into_iter().filter(|&k| k > 0.0 && k < busy).collect();
    points.extend((0..=SEARCH_GRID_POINTS).map(|i| busy * i as f64 / SEARCH_GRID_POINTS as f64));
    points.sort_by(f64::total_cmp);
    points.dedup();

    let (mut idx, mut best) = (0, f(points[0]));
    for (i, &p) in points.iter().enumerate().skip(1) {
        let v = f(p);
        if v > best {
            idx = i;
            best = v;
        }
    }
    let lo = points[idx.saturating_sub(1)];
    let hi = points[(idx + 1).min(points.len() - 1)];
    let (t, v) = golden_section_max(f, lo, hi);
    if v > best {
        (t, v)
    } else {
        (points[idx], best)
    }
}

fn golden_section_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > SEARCH_TOLERANCE {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t))
}

/// Static configuration of one reservable output interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub router_id: NodeId,
    pub capacity: f64,
    pub node_epsilon: f64,
    pub packet_size: f64,
    pub mode: AdmissionMode,
    pub tentative_timeout: f64,
}

impl RouterConfig {
    pub fn new(router_id: impl Into<NodeId>, capacity: f64, node_epsilon: f64, packet_size: f64) -> Self {
        RouterConfig {
            router_id: router_id.into(),
            capacity,
            node_epsilon,
            packet_size,
            mode: AdmissionMode::Effective,
            tentative_timeout: DEFAULT_TENTATIVE_TIMEOUT,
        }
    }

    pub fn with_mode(mut self, mode: AdmissionMode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub spec: FlowSpec,
    pub nonce: Nonce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TentativeReservation {
    pub spec: FlowSpec,
    pub nonce: Nonce,
    pub expires_at: f64,
}

/// How a `(flow, nonce)` pair left the reservation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Retirement {
    Released,
    Superseded,
    Expired,
}

/// Resource-holding part of a router's state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReservationTable {
    pub admitted: BTreeMap<FlowId, Reservation>,
    pub tentative: BTreeMap<FlowId, TentativeReservation>,
}

/// Reservation state of one router output interface.
///
/// A flow appears at most once in `admitted` and at most once in
/// `tentative`; both may hold it at once while a re-reservation under a
/// fresh nonce is pending. Retired `(flow, nonce)` pairs are remembered so
/// repeated decisions are absorbed.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterState {
    config: RouterConfig,
    table: ReservationTable,
    retired: BTreeMap<(FlowId, Nonce), Retirement>,
}

impl RouterState {
    pub fn new(config: RouterConfig) -> Result<Self, NodeError> {
        check_capacity(config.capacity)?;
        check_probability("node_epsilon", config.node_epsilon)?;
        if !(config.packet_size >= 0.0) || !config.packet_size.is_finite() {
            return Err(NodeError::Config("packet_size must be non-negative and finite"));
        }
        if !(config.tentative_timeout > 0.0) {
            return Err(NodeError::Config("tentative_timeout must be positive"));
        }
        Ok(RouterState {
            config,
            table: ReservationTable::default(),
            retired: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn router_id(&self) -> &NodeId {
        &self.config.router_id
    }

    pub fn capacity(&self) -> f64 {
        self.config.capacity
    }

    pub fn table(&self) -> &ReservationTable {
        &self.table
    }

    pub fn admitted(&self) -> &BTreeMap<FlowId, Reservation> {
        &self.table.admitted
    }

    pub fn tentative(&self) -> &BTreeMap<FlowId, TentativeReservation> {
        &self.table.tentative
    }

    /// Violation probability this interface promises; zero in deterministic mode.
    pub fn reported_epsilon(&self) -> f64 {
        match self.config.mode {
            AdmissionMode::Deterministic => 0.0,
            AdmissionMode::Effective => self.config.node_epsilon,
        }
    }

    /// Σρ over everything currently holding resources.
    pub fn reserved_rate(&self) -> f64 {
        self.table.admitted.values().map(|r| r.spec.sustained_rate).sum::<f64>()
            + self.table.tentative.values().map(|r| r.spec.sustained_rate).sum::<f64>()
    }

    /// Σρ over admitted flows only.
    pub fn admitted_rate(&self) -> f64 {
        self.table.admitted.values().map(|r| r.spec.sustained_rate).sum()
    }

    /// Bound for the aggregate of `specs` under this interface's mode.
    pub fn bound_for<'a>(&self, specs: impl Iterator<Item = &'a FlowSpec> + Clone) -> Result<DelayBound, NodeError> {
        let rate: f64 = specs.clone().map(|s| s.sustained_rate).sum();
        if rate >= self.config.capacity {
            return Err(NodeError::Unstable {
                rate,
                capacity: self.config.capacity,
            });
        }
        let cfg = &self.config;
        match cfg.mode {
            AdmissionMode::Deterministic => {
                let envs: Vec<PiecewiseEnvelope> = specs.map(FlowSpec::envelope).collect();
                let agg = sum_envelopes(&envs)?;
                fifo_delay_bound(&agg, cfg.capacity, cfg.packet_size)
            }
            AdmissionMode::Effective => {
                let agg = effective_envelope_of(specs, cfg.node_epsilon)?;
                fifo_delay_bound(&agg, cfg.capacity, cfg.packet_size)
            }
        }
    }

    /// Bound the interface would have with `candidate` added to everything
    /// it currently holds. A same-flow entry under another nonce is replaced,
    /// not double counted.
    pub fn local_delay_bound(&self, candidate: &FlowSpec) -> Result<DelayBound, NodeError> {
        let others = self
            .table
            .admitted
            .values()
            .map(|r| &r.spec)
            .chain(self.table.tentative.values().map(|r| &r.spec))
            .filter(|s| s.flow_id != candidate.flow_id);
        self.bound_for(others.chain(std::iter::once(candidate)))
    }

    /// Bound over the admitted set alone; `None` when nothing is admitted.
    pub fn admitted_bound(&self) -> Option<DelayBound> {
        if self.table.admitted.is_empty() {
            return None;
        }
        self.bound_for(self.table.admitted.values().map(|r| &r.spec)).ok()
    }

    /// Reserves `candidate` tentatively under `nonce`.
    ///
    /// A pending entry of the same flow under an older nonce belongs to a
    /// superseded request and is replaced; the same or an older nonce is a
    /// duplicate.
    pub fn reserve_tentative(&mut self, candidate: &FlowSpec, nonce: Nonce, now: f64) -> Result<DelayBound, NodeError> {
        let id = &candidate.flow_id;
        if let Some(pending) = self.table.tentative.get(id) {
            if pending.nonce >= nonce {
                return Err(NodeError::Duplicate {
                    flow_id: id.clone(),
                    nonce: pending.nonce,
                });
            }
        }
        let duplicate = self.table.admitted.get(id).is_some_and(|r| r.nonce >= nonce)
            || self.retired.contains_key(&(id.clone(), nonce));
        if duplicate {
            return Err(NodeError::Duplicate {
                flow_id: id.clone(),
                nonce,
            });
        }
        let bound = self.local_delay_bound(candidate)?;
        let replaced = self.table.tentative.insert(
            id.clone(),
            TentativeReservation {
                spec: candidate.clone(),
                nonce,
                expires_at: now + self.config.tentative_timeout,
            },
        );
        if let Some(old) = replaced {
            self.retired.insert((id.clone(), old.nonce), Retirement::Superseded);
        }
        Ok(bound)
    }

    pub fn commit(&mut self, flow_id: &FlowId, nonce: Nonce) -> Result<(), NodeError> {
        if self.table.tentative.get(flow_id).is_some_and(|r| r.nonce == nonce) {
            let t = self.table.tentative.remove(flow_id).expect("checked above");
            let previous = self.table.admitted.insert(
                flow_id.clone(),
                Reservation {
                    spec: t.spec,
                    nonce,
                },
            );
            if let Some(old) = previous {
                self.retired.insert((flow_id.clone(), old.nonce), Retirement::Superseded);
            }
            return Ok(());
        }
        if self.table.admitted.get(flow_id).is_some_and(|r| r.nonce == nonce) {
            return Ok(());
        }
        let key = (flow_id.clone(), nonce);
        match self.retired.get(&key) {
            Some(Retirement::Superseded) => Ok(()),
            Some(Retirement::Expired) => Err(NodeError::Expired {
                flow_id: key.0,
                nonce,
            }),
            Some(Retirement::Released) => Err(NodeError::StaleDecision {
                flow_id: key.0,
                nonce,
            }),
            None => Err(NodeError::UnknownReservation {
                flow_id: key.0,
                nonce,
            }),
        }
    }

    pub fn release(&mut self, flow_id: &FlowId, nonce: Nonce) -> Result<(), NodeError> {
        let key = (flow_id.clone(), nonce);
        if self.table.tentative.get(flow_id).is_some_and(|r| r.nonce == nonce) {
            self.table.tentative.remove(flow_id);
        } else if self.table.admitted.get(flow_id).is_some_and(|r| r.nonce == nonce) {
            self.table.admitted.remove(flow_id);
        } else if self.retired.contains_key(&key) {
            return Ok(());
        } else {
            return Err(NodeError::UnknownReservation {
                flow_id: key.0,
                nonce,
            });
        }
        self.retired.insert(key, Retirement::Released);
        Ok(())
    }

    /// Drops one tentative entry if it is still pending and due.
    pub fn expire_one(&mut self, flow_id: &FlowId, nonce: Nonce, now: f64) -> bool {
        let due = self
            .table
            .tentative
            .get(flow_id)
            .is_some_and(|r| r.nonce == nonce && r.expires_at <= now);
        if due {
            self.table.tentative.remove(flow_id);
            self.retired.insert((flow_id.clone(), nonce), Retirement::Expired);
        }
        due
    }

    /// Drops every tentative entry due at `now`.
    pub fn expire(&mut self, now: f64) -> Vec<(FlowId, Nonce)> {
        let due: Vec<(FlowId, Nonce)> = self
            .table
            .tentative
            .iter()
            .filter(|(_, r)| r.expires_at <= now)
            .map(|(id, r)| (id.clone(), r.nonce))
            .collect();
        for (id, nonce) in &due {
            self.table.tentative.remove(id);
            self.retired.insert((id.clone(), *nonce), Retirement::Expired);
        }
        due
    }

    pub fn retirement(&self, flow_id: &FlowId, nonce: Nonce) -> Option<Retirement> {
        self.retired.get(&(flow_id.clone(), nonce)).copied()
    }
}
