//! Dynamic Source Routing, one state machine per node.
//!
//! A Request floods outward and collects the path it took. The destination
//! answers the first copy with a Reply that walks the collected path
//! backwards. Data packets carry the full route in their header. A relay
//! that cannot reach its successor purges the link from its cache, sends an
//! Error back to the origin and, once per packet, tries an alternate route
//! from its own cache.

use std::collections::{BTreeMap, HashSet};

use crate::engine::SimTime;
use crate::packet::{
    Control, DataPacket, DsrError, DsrReply, DsrRequest, NodeId, RouteHeader, SourceRoute,
};
use crate::routing::{Action, DiscoveryParams, DiscoveryTimer, DropCause, Env, PendingBuffer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DsrConfig {
    pub discovery: DiscoveryParams,
    /// Routes kept per destination.
    pub cache_size: usize,
    pub salvage: bool,
    /// Let intermediate nodes answer Requests from their cache.
    pub cache_replies: bool,
    pub ttl: u8,
}

impl Default for DsrConfig {
    fn default() -> Self {
        DsrConfig {
            discovery: DiscoveryParams::default(),
            cache_size: 3,
            salvage: true,
            cache_replies: false,
            ttl: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CachedRoute {
    pub route: SourceRoute,
    pub learned_at: SimTime,
}

/// Complete routes by destination, at most `capacity` each.
#[derive(Clone, Debug)]
pub struct RouteCache {
    capacity: usize,
    entries: BTreeMap<NodeId, Vec<CachedRoute>>,
}

impl RouteCache {
    pub fn new(capacity: usize) -> Self {
        RouteCache {
            capacity: capacity.max(1),
            entries: BTreeMap::new(),
        }
    }

    /// Stores `route` (refreshing it if already present) and evicts the
    /// oldest route for that destination when over capacity.
    pub fn insert(&mut self, route: SourceRoute, now: SimTime) {
        let list = self.entries.entry(route.destination()).or_default();
        if let Some(c) = list.iter_mut().find(|c| c.route == route) {
            c.learned_at = now;
            return;
        }
        list.push(CachedRoute {
            route,
            learned_at: now,
        });
        while list.len() > self.capacity {
            let oldest = list
                .iter()
                .enumerate()
                .min_by_key(|(_, c)| c.learned_at)
                .map(|(i, _)| i)
                .expect("non-empty");
            list.remove(oldest);
        }
    }

    pub fn routes(&self, dest: NodeId) -> &[CachedRoute] {
        self.entries.get(&dest).map_or(&[], Vec::as_slice)
    }

    pub fn all(&self) -> impl Iterator<Item = &CachedRoute> {
        self.entries.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shortest route to `dest` whose relays all pass `admissible`; ties go
    /// to the most recently learned.
    pub fn best(&self, dest: NodeId, admissible: impl Fn(NodeId) -> bool) -> Option<&SourceRoute> {
        self.routes(dest)
            .iter()
            .filter(|c| c.route.intermediates().iter().all(|&h| admissible(h)))
            .min_by_key(|c| (c.route.len(), std::cmp::Reverse(c.learned_at)))
            .map(|c| &c.route)
    }

    fn retain(&mut self, keep: impl Fn(&SourceRoute) -> bool) -> usize {
        let mut removed = 0;
        for list in self.entries.values_mut() {
            let before = list.len();
            list.retain(|c| keep(&c.route));
            removed += before - list.len();
        }
        self.entries.retain(|_, l| !l.is_empty());
        removed
    }

    /// Drops every route using the link between `a` and `b`, in either
    /// direction. Returns how many were removed.
    pub fn purge_link(&mut self, a: NodeId, b: NodeId) -> usize {
        self.retain(|r| !r.uses_link(a, b) && !r.uses_link(b, a))
    }

    /// Drops every route relaying through `node`.
    pub fn purge_relay(&mut self, node: NodeId) -> usize {
        self.retain(|r| !r.intermediates().contains(&node))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Discovery {
    request_id: u32,
    attempt: u32,
}

#[derive(Clone, Debug)]
pub struct DsrNode {
    id: NodeId,
    cfg: DsrConfig,
    request_id: u32,
    cache: RouteCache,
    seen: HashSet<(NodeId, u32)>,
    pending: PendingBuffer,
    discoveries: BTreeMap<NodeId, Discovery>,
}

impl DsrNode {
    pub fn new(id: NodeId, cfg: DsrConfig) -> Self {
        DsrNode {
            id,
            cfg,
            request_id: 0,
            cache: RouteCache::new(cfg.cache_size),
            seen: HashSet::new(),
            pending: PendingBuffer::default(),
            discoveries: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn cache(&self) -> &RouteCache {
        &self.cache
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn discovering(&self, dest: NodeId) -> bool {
        self.discoveries.contains_key(&dest)
    }

    pub fn note_request(&mut self, origin: NodeId, id: u32) -> bool {
        self.seen.insert((origin, id))
    }

    fn best_route(&self, env: &Env, dest: NodeId) -> Option<SourceRoute> {
        self.cache.best(dest, |h| env.filter.admissible(h)).cloned()
    }

    /// A packet originated here by the application.
    pub fn send_data(&mut self, env: &Env, mut packet: DataPacket, out: &mut Vec<Action>) {
        if packet.dst == self.id {
            out.push(Action::Deliver(packet));
            return;
        }
        match self.best_route(env, packet.dst) {
            Some(route) => {
                packet.header = Some(RouteHeader {
                    route,
                    salvaged: false,
                });
                self.transmit(packet, out);
            }
            None => self.buffer(env, packet, out),
        }
    }

    /// Sends `packet` to this node's successor in its header route.
    fn transmit(&mut self, mut packet: DataPacket, out: &mut Vec<Action>) {
        let next = packet
            .header
            .as_ref()
            .and_then(|h| {
                h.route
                    .position(self.id)
                    .and_then(|i| h.route.hops().get(i + 1))
            })
            .copied();
        match next {
            None => out.push(Action::Drop(packet, DropCause::NoRoute)),
            Some(_) if packet.ttl == 0 => out.push(Action::Drop(packet, DropCause::TtlExpired)),
            Some(to) => {
                packet.ttl -= 1;
                out.push(Action::Forward { to, packet });
            }
        }
    }

    /// A data packet arriving from a neighbour.
    pub fn forward_data(&mut self, env: &Env, packet: DataPacket, out: &mut Vec<Action>) {
        if packet.dst == self.id {
            out.push(Action::Deliver(packet));
            return;
        }
        let Some(header) = &packet.header else {
            out.push(Action::Drop(packet, DropCause::NoRoute));
            return;
        };
        let Some(suffix) = header.route.suffix_from(self.id) else {
            out.push(Action::Drop(packet, DropCause::NoRoute));
            return;
        };
        let next = suffix.hops()[1];
        self.cache.insert(suffix, env.now);
        if next != packet.dst && !env.filter.admissible(next) {
            self.on_data_failure(env, packet, next, out);
            return;
        }
        self.transmit(packet, out);
    }

    fn buffer(&mut self, env: &Env, packet: DataPacket, out: &mut Vec<Action>) {
        let dest = packet.dst;
        if let Some(old) = self
            .pending
            .push(packet, self.cfg.discovery.buffer_capacity)
        {
            out.push(Action::Drop(old, DropCause::BufferOverflow));
        }
        if !self.discoveries.contains_key(&dest) {
            self.discover(env, dest, 0, out);
        }
    }

    pub fn discover(&mut self, _env: &Env, dest: NodeId, attempt: u32, out: &mut Vec<Action>) {
        self.request_id += 1;
        self.seen.insert((self.id, self.request_id));
        out.push(Action::Broadcast(Control::Request(DsrRequest {
            origin: self.id,
            request_id: self.request_id,
            dest,
            accumulated: vec![self.id],
        })));
        self.discoveries.insert(
            dest,
            Discovery {
                request_id: self.request_id,
                attempt,
            },
        );
        out.push(Action::Timer {
            after: self.cfg.discovery.backoff(attempt),
            timer: DiscoveryTimer {
                dest,
                request_id: self.request_id,
            },
        });
    }

    pub fn on_timer(&mut self, env: &Env, timer: DiscoveryTimer, out: &mut Vec<Action>) {
        let Some(d) = self.discoveries.get(&timer.dest).copied() else {
            return;
        };
        if d.request_id != timer.request_id {
            return;
        }
        if self.best_route(env, timer.dest).is_some() {
            self.discoveries.remove(&timer.dest);
            self.flush(env, timer.dest, out);
        } else if d.attempt < self.cfg.discovery.retries {
            self.discover(env, timer.dest, d.attempt + 1, out);
        } else {
            self.discoveries.remove(&timer.dest);
            for p in self.pending.take_for(timer.dest) {
                out.push(Action::Drop(p, DropCause::DiscoveryFailed));
            }
        }
    }

    fn flush(&mut self, env: &Env, dest: NodeId, out: &mut Vec<Action>) {
        for p in self.pending.take_for(dest) {
            self.send_data(env, p, out);
        }
    }

    pub fn handle_request(&mut self, env: &Env, req: DsrRequest, out: &mut Vec<Action>) {
        if req.origin == self.id || req.accumulated.contains(&self.id) {
            return;
        }
        if !self.seen.insert((req.origin, req.request_id)) {
            return;
        }
        let Some(&back) = req.accumulated.last() else {
            return;
        };
        if req.dest == self.id {
            let mut hops = req.accumulated;
            hops.push(self.id);
            if let Ok(route) = SourceRoute::new(hops) {
                out.push(Action::Unicast {
                    to: back,
                    msg: Control::Reply(DsrReply { route }),
                });
            }
            return;
        }
        if self.cfg.cache_replies {
            if let Some(cached) = self.best_route(env, req.dest) {
                let mut hops = req.accumulated.clone();
                hops.extend_from_slice(cached.hops());
                if let Ok(route) = SourceRoute::new(hops) {
                    out.push(Action::Unicast {
                        to: back,
                        msg: Control::Reply(DsrReply { route }),
                    });
                    return;
                }
            }
        }
        if req.accumulated.len() + 1 < usize::from(self.cfg.ttl) {
            let mut fwd = req;
            fwd.accumulated.push(self.id);
            out.push(Action::Broadcast(Control::Request(fwd)));
        }
    }

    pub fn handle_reply(&mut self, env: &Env, reply: DsrReply, out: &mut Vec<Action>) {
        let Some(pos) = reply.route.position(self.id) else {
            return;
        };
        if pos > 0 {
            let prev = reply.route.hops()[pos - 1];
            out.push(Action::Unicast {
                to: prev,
                msg: Control::Reply(reply),
            });
            return;
        }
        let dest = reply.route.destination();
        self.cache.insert(reply.route, env.now);
        if self.discoveries.contains_key(&dest) && self.best_route(env, dest).is_some() {
            self.discoveries.remove(&dest);
            self.flush(env, dest, out);
        }
    }

    pub fn handle_error(&mut self, _env: &Env, err: DsrError, out: &mut Vec<Action>) {
        self.cache.purge_link(err.broken_from, err.broken_to);
        match err.path.iter().position(|&n| n == self.id) {
            Some(i) if i > 0 => {
                let prev = err.path[i - 1];
                out.push(Action::Unicast {
                    to: prev,
                    msg: Control::Error(err),
                });
            }
            _ => {}
        }
    }

    /// The link layer could not hand `packet` to `to`.
    pub fn on_data_failure(
        &mut self,
        env: &Env,
        mut packet: DataPacket,
        to: NodeId,
        out: &mut Vec<Action>,
    ) {
        self.cache.purge_link(self.id, to);
        let Some(header) = packet.header.take() else {
            out.push(Action::Drop(packet, DropCause::LinkBreak));
            return;
        };
        if packet.src == self.id {
            self.send_data(env, packet, out);
            return;
        }
        if let Some(pos) = header.route.position(self.id) {
            if pos > 0 {
                out.push(Action::Unicast {
                    to: header.route.hops()[pos - 1],
                    msg: Control::Error(DsrError {
                        broken_from: self.id,
                        broken_to: to,
                        path: header.route.hops()[..=pos].to_vec(),
                    }),
                });
            }
        }
        if self.cfg.salvage && !header.salvaged {
            if let Some(route) = self.best_route(env, packet.dst) {
                packet.header = Some(RouteHeader {
                    route,
                    salvaged: true,
                });
                self.transmit(packet, out);
                return;
            }
        }
        packet.header = Some(header);
        out.push(Action::Drop(packet, DropCause::LinkBreak));
    }

    pub fn on_control_failure(&mut self, _env: &Env, to: NodeId, out: &mut Vec<Action>) {
        self.cache.purge_link(self.id, to);
        out.push(Action::ControlLost);
    }

    /// Stop relaying through `node` until a fresh route is learned.
    pub fn forget_relay(&mut self, node: NodeId) {
        self.cache.purge_relay(node);
        self.cache.purge_link(self.id, node);
    }

    pub fn handle_control(&mut self, env: &Env, msg: Control, out: &mut Vec<Action>) {
        match msg {
            Control::Request(m) => self.handle_request(env, m, out),
            Control::Reply(m) => self.handle_reply(env, m, out),
            Control::Error(m) => self.handle_error(env, m, out),
            _ => {}
        }
    }
}
