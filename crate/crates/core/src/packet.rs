//! Node identifiers, data packets and the routing control messages of both
//! protocols.

use std::fmt;

use thiserror::Error;

use crate::engine::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PacketUid(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("source route needs at least 2 hops, got {0}")]
    TooShort(usize),
    #[error("source route visits {0} twice")]
    Duplicate(NodeId),
}

/// Ordered hop list from source to destination inclusive. Never contains a
/// node twice.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SourceRoute(Vec<NodeId>);

impl SourceRoute {
    pub fn new(hops: Vec<NodeId>) -> Result<Self, RouteError> {
        if hops.len() < 2 {
            return Err(RouteError::TooShort(hops.len()));
        }
        if let Some(dup) = first_duplicate(&hops) {
            return Err(RouteError::Duplicate(dup));
        }
        Ok(SourceRoute(hops))
    }

    pub fn hops(&self) -> &[NodeId] {
        &self.0
    }

    pub fn source(&self) -> NodeId {
        self.0[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.0.last().expect("len >= 2")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.0.iter().position(|&n| n == node)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.0.contains(&node)
    }

    /// Relays only: every hop except the two endpoints.
    pub fn intermediates(&self) -> &[NodeId] {
        &self.0[1..self.0.len() - 1]
    }

    /// True if `a` is immediately followed by `b`.
    pub fn uses_link(&self, a: NodeId, b: NodeId) -> bool {
        self.0.windows(2).any(|w| w[0] == a && w[1] == b)
    }

    /// The sub-route starting at `node`, if `node` is not the destination.
    pub fn suffix_from(&self, node: NodeId) -> Option<SourceRoute> {
        let i = self.position(node)?;
        (self.0.len() - i >= 2).then(|| SourceRoute(self.0[i..].to_vec()))
    }
}

pub fn first_duplicate(hops: &[NodeId]) -> Option<NodeId> {
    let mut seen = std::collections::HashSet::with_capacity(hops.len());
    hops.iter().copied().find(|h| !seen.insert(*h))
}

/// Source-route header carried by DSR data packets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteHeader {
    pub route: SourceRoute,
    pub salvaged: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPacket {
    pub uid: PacketUid,
    pub flow: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub created_at: SimTime,
    pub payload: u32,
    pub ttl: u8,
    pub header: Option<RouteHeader>,
}

// AODV

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rreq {
    pub origin: NodeId,
    pub origin_seq: u32,
    pub rreq_id: u32,
    pub dest: NodeId,
    /// Last destination sequence number known to the origin.
    pub dest_seq: Option<u32>,
    pub hop_count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rrep {
    pub dest: NodeId,
    pub dest_seq: u32,
    pub hop_count: u32,
    pub origin: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rerr {
    pub unreachable: Vec<(NodeId, u32)>,
}

// DSR

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DsrRequest {
    pub origin: NodeId,
    pub request_id: u32,
    pub dest: NodeId,
    pub accumulated: Vec<NodeId>,
}

/// Travels back along the reversed `route`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DsrReply {
    pub route: SourceRoute,
}

/// Travels back along the reversed `path` (origin first, `broken_from` last).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DsrError {
    pub broken_from: NodeId,
    pub broken_to: NodeId,
    pub path: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Control {
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr(Rerr),
    Request(DsrRequest),
    Reply(DsrReply),
    Error(DsrError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControlKind {
    Rreq,
    Rrep,
    Rerr,
    Request,
    Reply,
    Error,
}

impl ControlKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlKind::Rreq => "rreq",
            ControlKind::Rrep => "rrep",
            ControlKind::Rerr => "rerr",
            ControlKind::Request => "request",
            ControlKind::Reply => "reply",
            ControlKind::Error => "error",
        }
    }
}

impl Control {
    pub fn kind(&self) -> ControlKind {
        match self {
            Control::Rreq(_) => ControlKind::Rreq,
            Control::Rrep(_) => ControlKind::Rrep,
            Control::Rerr(_) => ControlKind::Rerr,
            Control::Request(_) => ControlKind::Request,
            Control::Reply(_) => ControlKind::Reply,
            Control::Error(_) => ControlKind::Error,
        }
    }

    /// The node on whose behalf the message speaks. A relay that is not the
    /// originator is what trust-based rejection looks at.
    pub fn originator(&self, transmitter: NodeId) -> NodeId {
        match self {
            Control::Rreq(m) => m.origin,
            Control::Rrep(m) => m.dest,
            Control::Rerr(_) => transmitter,
            Control::Request(m) => m.origin,
            Control::Reply(m) => m.route.destination(),
            Control::Error(m) => m.broken_from,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    Data(DataPacket),
    Control(Control),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn source_route_rejects_loops_and_short_routes() {
        assert_eq!(SourceRoute::new(ids(&[1])), Err(RouteError::TooShort(1)));
        assert_eq!(
            SourceRoute::new(ids(&[1, 2, 1])),
            Err(RouteError::Duplicate(NodeId(1)))
        );
        let r = SourceRoute::new(ids(&[1, 2, 3])).unwrap();
        assert_eq!(r.intermediates(), &ids(&[2])[..]);
        assert!(r.uses_link(NodeId(2), NodeId(3)));
        assert!(!r.uses_link(NodeId(3), NodeId(2)));
        assert_eq!(r.suffix_from(NodeId(2)).unwrap().hops(), &ids(&[2, 3])[..]);
        assert!(r.suffix_from(NodeId(3)).is_none());
    }
}
