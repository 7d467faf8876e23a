//! Delay-bound-driven reactive resource reservation over Mobile IPv6.
//!
//! Routers on the path from a home agent to a mobile node compute a local
//! FIFO delay bound for each candidate flow from the (effective) arrival
//! envelope of the flows they carry. The bounds travel back to the home
//! agent, which sums them with link propagation delays and admits the flow
//! only if the total stays within the application's delay requirement.

// Negated comparisons are how the validators reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod envelope;
pub mod ids;
pub mod node;
pub mod oracle;
pub mod metrics;
pub mod scenario;
pub mod signaling;
pub mod sim;

pub use envelope::{FlowSpec, PeakRate, PiecewiseEnvelope, StatEnvelope};
pub use ids::{FlowId, NodeId, Nonce};
pub use node::{AdmissionMode, DelayBound, RouterConfig, RouterState};
