use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Route, SignalError};
use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub care_of: NodeId,
    pub route: Route,
    pub sequence: u64,
}

/// Home-agent binding cache: one active binding per home address, with
/// strictly increasing sequence numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BindingCache {
    entries: BTreeMap<NodeId, Binding>,
}

impl BindingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, home: &NodeId) -> Option<&Binding> {
        self.entries.get(home)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Installs a binding, returning the one it replaced. Stale sequence
    /// numbers leave the cache untouched.
    pub fn update(&mut self, home: NodeId, care_of: NodeId, route: Route, sequence: u64) -> Result<Option<Binding>, SignalError> {
        if let Some(current) = self.entries.get(&home) {
            if sequence <= current.sequence {
                return Err(SignalError::StaleBinding {
                    home,
                    got: sequence,
                    current: current.sequence,
                });
            }
        }
        Ok(self.entries.insert(
            home,
            Binding {
                care_of,
                route,
                sequence,
            },
        ))
    }
}
