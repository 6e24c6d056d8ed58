//! Glue shared by both protocol state machines: what a handler sees of the
//! world, and what it asks the world to do.

use std::collections::VecDeque;

use crate::engine::SimTime;
use crate::packet::{Control, DataPacket, NodeId};

/// Why a data packet left the network without being delivered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropCause {
    DeliberateDrop,
    BlackHole,
    NodeFailure,
    LinkFailure,
    EnergyDepletion,
    /// Next hop moved out of range.
    LinkBreak,
    NoRoute,
    TtlExpired,
    BufferOverflow,
    DiscoveryFailed,
    EndOfRun,
    DuplicateDrop,
}

impl DropCause {
    pub const ALL: [DropCause; 12] = [
        DropCause::DeliberateDrop,
        DropCause::BlackHole,
        DropCause::NodeFailure,
        DropCause::LinkFailure,
        DropCause::EnergyDepletion,
        DropCause::LinkBreak,
        DropCause::NoRoute,
        DropCause::TtlExpired,
        DropCause::BufferOverflow,
        DropCause::DiscoveryFailed,
        DropCause::EndOfRun,
        DropCause::DuplicateDrop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropCause::DeliberateDrop => "deliberate_drop",
            DropCause::BlackHole => "black_hole",
            DropCause::NodeFailure => "node_failure",
            DropCause::LinkFailure => "link_failure",
            DropCause::EnergyDepletion => "energy_depletion",
            DropCause::LinkBreak => "link_break",
            DropCause::NoRoute => "no_route",
            DropCause::TtlExpired => "ttl_expired",
            DropCause::BufferOverflow => "buffer_overflow",
            DropCause::DiscoveryFailed => "discovery_failed",
            DropCause::EndOfRun => "end_of_run",
            DropCause::DuplicateDrop => "duplicate",
        }
    }
}

impl From<crate::adversary::CauseKind> for DropCause {
    fn from(k: crate::adversary::CauseKind) -> Self {
        use crate::adversary::CauseKind::*;
        match k {
            DeliberateDrop => DropCause::DeliberateDrop,
            BlackHole => DropCause::BlackHole,
            NodeFailure => DropCause::NodeFailure,
            LinkFailure => DropCause::LinkFailure,
            EnergyDepletion => DropCause::EnergyDepletion,
        }
    }
}

/// Which relays a node is currently willing to route through.
pub trait HopFilter {
    fn admissible(&self, hop: NodeId) -> bool;
}

/// Accepts every hop.
pub struct AllowAll;

impl HopFilter for AllowAll {
    fn admissible(&self, _hop: NodeId) -> bool {
        true
    }
}

impl<F: Fn(NodeId) -> bool> HopFilter for F {
    fn admissible(&self, hop: NodeId) -> bool {
        self(hop)
    }
}

pub struct Env<'a> {
    pub now: SimTime,
    pub filter: &'a dyn HopFilter,
}

impl<'a> Env<'a> {
    pub fn new(now: SimTime, filter: &'a dyn HopFilter) -> Self {
        Env { now, filter }
    }
}

/// Route-discovery retry timer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscoveryTimer {
    pub dest: NodeId,
    pub request_id: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Broadcast(Control),
    Unicast {
        to: NodeId,
        msg: Control,
    },
    Forward {
        to: NodeId,
        packet: DataPacket,
    },
    Deliver(DataPacket),
    Drop(DataPacket, DropCause),
    Timer {
        after: SimTime,
        timer: DiscoveryTimer,
    },
    /// A unicast control message could not be passed on.
    ControlLost,
}

/// Shared discovery parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscoveryParams {
    pub retries: u32,
    pub timeout: SimTime,
    pub buffer_capacity: usize,
}

impl Default for DiscoveryParams {
    fn default() -> Self {
        DiscoveryParams {
            retries: 2,
            timeout: SimTime::from_secs(1),
            buffer_capacity: 64,
        }
    }
}

impl DiscoveryParams {
    /// Timeout before retry number `attempt` (0 = first request).
    pub fn backoff(&self, attempt: u32) -> SimTime {
        self.timeout.scaled(1u64 << attempt.min(20))
    }
}

/// Data waiting for a route, oldest first, with one global capacity.
#[derive(Clone, Debug, Default)]
pub struct PendingBuffer {
    queue: VecDeque<DataPacket>,
}

impl PendingBuffer {
    /// Queues `packet`; returns the packet evicted to make room, if any.
    pub fn push(&mut self, packet: DataPacket, capacity: usize) -> Option<DataPacket> {
        self.queue.push_back(packet);
        if self.queue.len() > capacity {
            self.queue.pop_front()
        } else {
            None
        }
    }

    pub fn take_for(&mut self, dest: NodeId) -> Vec<DataPacket> {
        let (take, keep): (Vec<_>, Vec<_>) = self.queue.drain(..).partition(|p| p.dst == dest);
        self.queue = keep.into();
        take
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn has_for(&self, dest: NodeId) -> bool {
        self.queue.iter().any(|p| p.dst == dest)
    }
}
