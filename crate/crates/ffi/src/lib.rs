//! C ABI over the hopbound library.
//!
//! Every fallible entry point returns an [`HbStatus`]. On failure the
//! message is kept per thread and readable through [`hb_last_error`] until
//! the next failing call on that thread. Handles are opaque and must be
//! released with their matching `*_free` function. Panics never cross the
//! boundary: they surface as `HB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hopbound::envelope::EnvelopeError;
use hopbound::node::NodeError;
use hopbound::scenario::{load_scenario, Scenario, ScenarioError};
use hopbound::sim::{run, RunOptions, RunResult, SimError};
use hopbound::{AdmissionMode, DelayBound, FlowId, FlowSpec, Nonce, PeakRate, RouterConfig, RouterState};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad numeric parameter, non-UTF-8 string or malformed flow spec.
    InvalidArgument = 2,
    /// Scenario could not be read, parsed or validated.
    Scenario = 3,
    /// Admitting the flow would push the long-run rate to capacity.
    Unstable = 4,
    /// Reservation state does not allow the operation (duplicate, unknown,
    /// expired or stale nonce).
    Protocol = 5,
    /// Any other simulation failure.
    Simulation = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbMode {
    Deterministic = 0,
    Effective = 1,
}

impl From<HbMode> for AdmissionMode {
    fn from(m: HbMode) -> Self {
        match m {
            HbMode::Deterministic => AdmissionMode::Deterministic,
            HbMode::Effective => AdmissionMode::Effective,
        }
    }
}

/// Traffic contract of one flow. A non-finite `peak_rate` means unbounded.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HbFlowSpec {
    pub flow_id: *const c_char,
    pub peak_rate: f64,
    pub sustained_rate: f64,
    pub burst: f64,
    pub epsilon: f64,
    pub app_delay_bound: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HbDelayBound {
    pub value: f64,
    pub busy_period: f64,
    pub achieved_at: f64,
}

impl From<DelayBound> for HbDelayBound {
    fn from(b: DelayBound) -> Self {
        HbDelayBound {
            value: b.value,
            busy_period: b.busy_period,
            achieved_at: b.achieved_at,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HbSummary {
    pub admitted: u64,
    pub rejected: u64,
    pub utilization: f64,
    pub max_cum_bound: f64,
    pub samples: u64,
    pub violations: u64,
    pub violation_freq: f64,
    pub hop_violations: u64,
    pub lost_packets: u64,
    pub protocol_errors: u64,
    pub events: u64,
}

pub struct HbScenario(Scenario);

pub struct HbRunResult(RunResult);

pub struct HbRouter(RouterState);

struct Failure(HbStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(HbStatus::InvalidArgument, msg.into())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure(HbStatus::Scenario, e.to_string())
    }
}

impl From<EnvelopeError> for Failure {
    fn from(e: EnvelopeError) -> Self {
        Failure(HbStatus::InvalidArgument, e.to_string())
    }
}

impl From<NodeError> for Failure {
    fn from(e: NodeError) -> Self {
        let status = match e {
            NodeError::Unstable { .. } => HbStatus::Unstable,
            NodeError::Duplicate { .. }
            | NodeError::UnknownReservation { .. }
            | NodeError::Expired { .. }
            | NodeError::StaleDecision { .. } => HbStatus::Protocol,
            NodeError::Config(_) | NodeError::Envelope(_) => HbStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Scenario(e) => e.into(),
            SimError::Parameter(m) => Failure(HbStatus::InvalidArgument, format!("invalid parameter: {m}")),
            other => Failure(HbStatus::Simulation, other.to_string()),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', "?")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HbStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            HbStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(HbStatus::NullPointer, format!("`{what}` is NULL")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` is NULL or a NUL-terminated string valid for the call.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid(format!("`{what}` is not valid UTF-8")))
}

/// # Safety
/// `spec.flow_id` as for [`str_arg`].
unsafe fn flow_spec(spec: &HbFlowSpec) -> Result<FlowSpec, Failure> {
    let id = str_arg(spec.flow_id, "flow_id")?;
    let peak = if spec.peak_rate.is_finite() {
        PeakRate::Finite(spec.peak_rate)
    } else {
        PeakRate::Unbounded
    };
    Ok(FlowSpec::new(
        id,
        peak,
        spec.sustained_rate,
        spec.burst,
        spec.epsilon,
        spec.app_delay_bound,
    )?)
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).expect("library output has no NULs").into_raw()
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn hb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` is NULL or came from this library and was not freed before.
#[no_mangle]
pub unsafe extern "C" fn hb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads and validates a TOML scenario file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hb_scenario_load(path: *const c_char, out: *mut *mut HbScenario) -> HbStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let s = load_scenario(Path::new(path))?;
        *out = Box::into_raw(Box::new(HbScenario(s)));
        Ok(())
    })
}

/// Parses and validates a TOML scenario held in memory.
///
/// # Safety
/// `text` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hb_scenario_parse(text: *const c_char, out: *mut *mut HbScenario) -> HbStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = Scenario::parse(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(HbScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `scenario` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_scenario_set_seed(scenario: *mut HbScenario, seed: u64) -> HbStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        (*scenario).0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `scenario` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_scenario_set_mode(scenario: *mut HbScenario, mode: HbMode) -> HbStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        (*scenario).0.admission_mode = mode.into();
        Ok(())
    })
}

/// # Safety
/// `scenario` is NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hb_scenario_free(scenario: *mut HbScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs a scenario to quiescence. With `admit_only` the data plane is off
/// and only the signaling exchange is simulated.
///
/// # Safety
/// `scenario` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hb_run(scenario: *const HbScenario, admit_only: bool, out: *mut *mut HbRunResult) -> HbStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(out, "out")?;
        let opts = if admit_only {
            RunOptions::admit_only()
        } else {
            RunOptions::summary_only()
        };
        let r = run(&(*scenario).0, &opts)?;
        *out = Box::into_raw(Box::new(HbRunResult(r)));
        Ok(())
    })
}

/// # Safety
/// `result` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hb_result_summary(result: *const HbRunResult, out: *mut HbSummary) -> HbStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        let m = &(*result).0.summary;
        *out = HbSummary {
            admitted: m.admitted,
            rejected: m.rejected,
            utilization: m.utilization,
            max_cum_bound: m.max_cum_bound,
            samples: m.samples,
            violations: m.violations,
            violation_freq: m.violation_freq,
            hop_violations: m.hop_violations,
            lost_packets: m.lost_packets,
            protocol_errors: m.protocol_errors,
            events: m.events,
        };
        Ok(())
    })
}

/// Full summary as pretty JSON; free it with [`hb_string_free`].
///
/// # Safety
/// `result` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hb_result_summary_json(result: *const HbRunResult, out: *mut *mut c_char) -> HbStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        *out = into_c_string((*result).0.summary.to_json());
        Ok(())
    })
}

/// Number of admission decisions the home agents took. 0 for NULL.
///
/// # Safety
/// `result` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_result_decision_count(result: *const HbRunResult) -> usize {
    if result.is_null() {
        0
    } else {
        (*result).0.decisions.len()
    }
}

/// # Safety
/// `result` is NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hb_result_free(result: *mut HbRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// A standalone reservable interface.
///
/// # Safety
/// `router_id` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hb_router_new(
    router_id: *const c_char,
    capacity: f64,
    node_epsilon: f64,
    packet_size: f64,
    mode: HbMode,
    out: *mut *mut HbRouter,
) -> HbStatus {
    guard(|| {
        non_null(out, "out")?;
        let id = str_arg(router_id, "router_id")?;
        let cfg = RouterConfig::new(id, capacity, node_epsilon, packet_size).with_mode(mode.into());
        *out = Box::into_raw(Box::new(HbRouter(RouterState::new(cfg)?)));
        Ok(())
    })
}

/// Delay bound the router would report for `spec` on top of what it holds.
/// Does not change router state.
///
/// # Safety
/// `router` is a live handle; `spec` and `out` are valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hb_router_local_bound(
    router: *const HbRouter,
    spec: *const HbFlowSpec,
    out: *mut HbDelayBound,
) -> HbStatus {
    guard(|| {
        non_null(router, "router")?;
        non_null(spec, "spec")?;
        non_null(out, "out")?;
        let spec = flow_spec(&*spec)?;
        *out = (*router).0.local_delay_bound(&spec)?.into();
        Ok(())
    })
}

/// Places a tentative reservation and reports the resulting bound.
///
/// # Safety
/// As for [`hb_router_local_bound`].
#[no_mangle]
pub unsafe extern "C" fn hb_router_reserve(
    router: *mut HbRouter,
    spec: *const HbFlowSpec,
    nonce: u64,
    now: f64,
    out: *mut HbDelayBound,
) -> HbStatus {
    guard(|| {
        non_null(router, "router")?;
        non_null(spec, "spec")?;
        non_null(out, "out")?;
        let spec = flow_spec(&*spec)?;
        *out = (*router).0.reserve_tentative(&spec, Nonce(nonce), now)?.into();
        Ok(())
    })
}

/// Promotes a tentative reservation to admitted.
///
/// # Safety
/// `router` is a live handle; `flow_id` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hb_router_commit(router: *mut HbRouter, flow_id: *const c_char, nonce: u64) -> HbStatus {
    guard(|| {
        non_null(router, "router")?;
        let id = FlowId::new(str_arg(flow_id, "flow_id")?);
        (*router).0.commit(&id, Nonce(nonce))?;
        Ok(())
    })
}

/// Drops a tentative or admitted reservation.
///
/// # Safety
/// As for [`hb_router_commit`].
#[no_mangle]
pub unsafe extern "C" fn hb_router_release(router: *mut HbRouter, flow_id: *const c_char, nonce: u64) -> HbStatus {
    guard(|| {
        non_null(router, "router")?;
        let id = FlowId::new(str_arg(flow_id, "flow_id")?);
        (*router).0.release(&id, Nonce(nonce))?;
        Ok(())
    })
}

/// Expires tentative reservations whose lifetime ended by `now`; writes
/// how many were dropped to `expired` when it is not NULL.
///
/// # Safety
/// `router` is a live handle; `expired` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn hb_router_expire(router: *mut HbRouter, now: f64, expired: *mut usize) -> HbStatus {
    guard(|| {
        non_null(router, "router")?;
        let n = (*router).0.expire(now).len();
        if !expired.is_null() {
            *expired = n;
        }
        Ok(())
    })
}

/// Admitted reservations held. 0 for NULL.
///
/// # Safety
/// `router` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_router_admitted_count(router: *const HbRouter) -> usize {
    if router.is_null() {
        0
    } else {
        (*router).0.admitted().len()
    }
}

/// Tentative reservations held. 0 for NULL.
///
/// # Safety
/// `router` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hb_router_tentative_count(router: *const HbRouter) -> usize {
    if router.is_null() {
        0
    } else {
        (*router).0.tentative().len()
    }
}

/// # Safety
/// `router` is NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hb_router_free(router: *mut HbRouter) {
    if !router.is_null() {
        drop(Box::from_raw(router));
    }
}
