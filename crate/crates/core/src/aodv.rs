//! Ad hoc On-demand Distance Vector routing, one state machine per node.
//!
//! Routes are found by flooding an RREQ; the destination (or a node holding a
//! fresh enough route) answers with an RREP that travels back along the
//! reverse routes the flood installed. Destination sequence numbers order
//! route freshness: a route replaces another if its sequence number is
//! newer, or equal with fewer hops. A broken next hop invalidates every
//! route through it (bumping their sequence numbers) and is announced with a
//! broadcast RERR.
//!
//! Handlers never touch the network. They push [`Action`]s that the
//! simulation carries out.

use std::collections::{BTreeMap, HashSet};

use crate::engine::SimTime;
use crate::packet::{Control, DataPacket, NodeId, Rerr, Rrep, Rreq};
use crate::routing::{Action, DiscoveryParams, DiscoveryTimer, DropCause, Env, PendingBuffer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AodvConfig {
    pub discovery: DiscoveryParams,
    pub route_lifetime: SimTime,
    pub ttl: u8,
    /// Let intermediate nodes answer from their own fresh routes.
    pub intermediate_reply: bool,
}

impl Default for AodvConfig {
    fn default() -> Self {
        AodvConfig {
            discovery: DiscoveryParams::default(),
            route_lifetime: SimTime::from_secs(10),
            ttl: 32,
            intermediate_reply: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
    pub expires_at: SimTime,
    pub valid: bool,
}

impl RouteEntry {
    pub fn is_live(&self, now: SimTime) -> bool {
        self.valid && self.expires_at > now
    }
}

#[derive(Clone, Debug, Default)]
pub struct RoutingTable {
    entries: BTreeMap<NodeId, RouteEntry>,
}

impl RoutingTable {
    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }

    /// Marks an expired entry invalid, bumping its sequence number.
    fn expire(&mut self, dest: NodeId, now: SimTime) {
        if let Some(e) = self.entries.get_mut(&dest) {
            if e.valid && e.expires_at <= now {
                e.valid = false;
                e.dest_seq = e.dest_seq.saturating_add(1);
            }
        }
    }

    pub fn lookup(&mut self, dest: NodeId, now: SimTime) -> Option<RouteEntry> {
        self.expire(dest, now);
        self.entries.get(&dest).filter(|e| e.valid).copied()
    }

    /// Installs `candidate` if it is fresher than what is stored: a newer
    /// sequence number, or the same one with fewer hops (or replacing an
    /// invalid entry). An identical route just has its lifetime extended.
    pub fn offer(&mut self, candidate: RouteEntry, now: SimTime) -> bool {
        self.expire(candidate.dest, now);
        match self.entries.get_mut(&candidate.dest) {
            None => {
                self.entries.insert(candidate.dest, candidate);
                true
            }
            Some(e) => {
                let fresher = candidate.dest_seq > e.dest_seq
                    || (candidate.dest_seq == e.dest_seq
                        && (!e.valid || candidate.hop_count < e.hop_count));
                if fresher {
                    *e = candidate;
                    true
                } else {
                    if e.valid
                        && e.next_hop == candidate.next_hop
                        && e.dest_seq == candidate.dest_seq
                        && e.hop_count == candidate.hop_count
                    {
                        e.expires_at = e.expires_at.max(candidate.expires_at);
                    }
                    false
                }
            }
        }
    }

    /// Invalidates every valid route through `next_hop`. Returns the
    /// affected destinations with their bumped sequence numbers.
    pub fn invalidate_via(&mut self, next_hop: NodeId) -> Vec<(NodeId, u32)> {
        let mut lost = Vec::new();
        for e in self.entries.values_mut() {
            if e.valid && e.next_hop == next_hop {
                e.valid = false;
                e.dest_seq = e.dest_seq.saturating_add(1);
                lost.push((e.dest, e.dest_seq));
            }
        }
        lost
    }

    fn refresh(&mut self, dest: NodeId, until: SimTime) {
        if let Some(e) = self.entries.get_mut(&dest) {
            e.expires_at = e.expires_at.max(until);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Discovery {
    request_id: u32,
    attempt: u32,
}

#[derive(Clone, Debug)]
pub struct AodvNode {
    id: NodeId,
    cfg: AodvConfig,
    own_seq: u32,
    rreq_id: u32,
    table: RoutingTable,
    seen: HashSet<(NodeId, u32)>,
    pending: PendingBuffer,
    discoveries: BTreeMap<NodeId, Discovery>,
}

impl AodvNode {
    pub fn new(id: NodeId, cfg: AodvConfig) -> Self {
        AodvNode {
            id,
            cfg,
            own_seq: 0,
            rreq_id: 0,
            table: RoutingTable::default(),
            seen: HashSet::new(),
            pending: PendingBuffer::default(),
            discoveries: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn own_seq(&self) -> u32 {
        self.own_seq
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn discovering(&self, dest: NodeId) -> bool {
        self.discoveries.contains_key(&dest)
    }

    /// Records `(origin, id)`; false if it was already known.
    pub fn note_request(&mut self, origin: NodeId, id: u32) -> bool {
        self.seen.insert((origin, id))
    }

    fn usable(&self, env: &Env, e: &RouteEntry, dst: NodeId) -> bool {
        e.next_hop == dst || env.filter.admissible(e.next_hop)
    }

    /// A packet originated here by the application.
    pub fn send_data(&mut self, env: &Env, packet: DataPacket, out: &mut Vec<Action>) {
        self.forward_data(env, packet, out);
    }

    pub fn forward_data(&mut self, env: &Env, mut packet: DataPacket, out: &mut Vec<Action>) {
        if packet.dst == self.id {
            out.push(Action::Deliver(packet));
            return;
        }
        let route = self.table.lookup(packet.dst, env.now);
        match route {
            Some(e) if self.usable(env, &e, packet.dst) => {
                if packet.ttl == 0 {
                    out.push(Action::Drop(packet, DropCause::TtlExpired));
                    return;
                }
                packet.ttl -= 1;
                let until = env.now + self.cfg.route_lifetime;
                self.table.refresh(packet.dst, until);
                out.push(Action::Forward {
                    to: e.next_hop,
                    packet,
                });
            }
            other => {
                if let Some(e) = other {
                    // Next hop no longer admissible.
                    self.handle_link_break(env, e.next_hop, out);
                }
                if packet.src == self.id {
                    self.buffer(env, packet, out);
                } else {
                    if other.is_none() {
                        if let Some(e) = self.table.get(packet.dst) {
                            out.push(Action::Broadcast(Control::Rerr(Rerr {
                                unreachable: vec![(packet.dst, e.dest_seq)],
                            })));
                        }
                    }
                    out.push(Action::Drop(packet, DropCause::NoRoute));
                }
            }
        }
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
            self.originate_rreq(env, dest, 0, out);
        }
    }

    pub fn originate_rreq(
        &mut self,
        _env: &Env,
        dest: NodeId,
        attempt: u32,
        out: &mut Vec<Action>,
    ) {
        self.own_seq = self.own_seq.saturating_add(1);
        self.rreq_id += 1;
        self.seen.insert((self.id, self.rreq_id));
        let rreq = Rreq {
            origin: self.id,
            origin_seq: self.own_seq,
            rreq_id: self.rreq_id,
            dest,
            dest_seq: self.table.get(dest).map(|e| e.dest_seq),
            hop_count: 0,
        };
        out.push(Action::Broadcast(Control::Rreq(rreq)));
        self.discoveries.insert(
            dest,
            Discovery {
                request_id: self.rreq_id,
                attempt,
            },
        );
        out.push(Action::Timer {
            after: self.cfg.discovery.backoff(attempt),
            timer: DiscoveryTimer {
                dest,
                request_id: self.rreq_id,
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
        let have_route = self
            .table
            .lookup(timer.dest, env.now)
            .is_some_and(|e| self.usable(env, &e, timer.dest));
        if have_route {
            self.discoveries.remove(&timer.dest);
            self.flush(env, timer.dest, out);
        } else if d.attempt < self.cfg.discovery.retries {
            self.originate_rreq(env, timer.dest, d.attempt + 1, out);
        } else {
            self.discoveries.remove(&timer.dest);
            for p in self.pending.take_for(timer.dest) {
                out.push(Action::Drop(p, DropCause::DiscoveryFailed));
            }
        }
    }

    fn flush(&mut self, env: &Env, dest: NodeId, out: &mut Vec<Action>) {
        for p in self.pending.take_for(dest) {
            self.forward_data(env, p, out);
        }
    }

    pub fn handle_rreq(&mut self, env: &Env, rreq: Rreq, from: NodeId, out: &mut Vec<Action>) {
        if !self.seen.insert((rreq.origin, rreq.rreq_id)) || rreq.origin == self.id {
            return;
        }
        let lifetime = env.now + self.cfg.route_lifetime;
        self.table.offer(
            RouteEntry {
                dest: rreq.origin,
                next_hop: from,
                hop_count: rreq.hop_count + 1,
                dest_seq: rreq.origin_seq,
                expires_at: lifetime,
                valid: true,
            },
            env.now,
        );

        if rreq.dest == self.id {
            self.own_seq = self.own_seq.max(rreq.dest_seq.unwrap_or(0));
            let rrep = Rrep {
                dest: self.id,
                dest_seq: self.own_seq,
                hop_count: 0,
                origin: rreq.origin,
            };
            self.send_toward_origin(env, rrep, out);
            return;
        }

        if self.cfg.intermediate_reply {
            if let Some(e) = self.table.lookup(rreq.dest, env.now) {
                if e.dest_seq >= rreq.dest_seq.unwrap_or(0)
                    && e.next_hop != from
                    && self.usable(env, &e, rreq.dest)
                {
                    let rrep = Rrep {
                        dest: rreq.dest,
                        dest_seq: e.dest_seq,
                        hop_count: e.hop_count,
                        origin: rreq.origin,
                    };
                    self.send_toward_origin(env, rrep, out);
                    return;
                }
            }
        }

        if rreq.hop_count + 1 < u32::from(self.cfg.ttl) {
            let known = self.table.get(rreq.dest).map(|e| e.dest_seq);
            let dest_seq = match (rreq.dest_seq, known) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            out.push(Action::Broadcast(Control::Rreq(Rreq {
                hop_count: rreq.hop_count + 1,
                dest_seq,
                ..rreq
            })));
        }
    }

    fn send_toward_origin(&mut self, env: &Env, rrep: Rrep, out: &mut Vec<Action>) {
        match self.table.lookup(rrep.origin, env.now) {
            Some(back) => {
                let until = env.now + self.cfg.route_lifetime;
                self.table.refresh(rrep.origin, until);
                out.push(Action::Unicast {
                    to: back.next_hop,
                    msg: Control::Rrep(rrep),
                });
            }
            None => out.push(Action::ControlLost),
        }
    }

    pub fn handle_rrep(&mut self, env: &Env, rrep: Rrep, from: NodeId, out: &mut Vec<Action>) {
        self.table.offer(
            RouteEntry {
                dest: rrep.dest,
                next_hop: from,
                hop_count: rrep.hop_count + 1,
                dest_seq: rrep.dest_seq,
                expires_at: env.now + self.cfg.route_lifetime,
                valid: true,
            },
            env.now,
        );
        if rrep.origin == self.id {
            let ready = self
                .table
                .lookup(rrep.dest, env.now)
                .is_some_and(|e| self.usable(env, &e, rrep.dest));
            if ready {
                self.discoveries.remove(&rrep.dest);
                self.flush(env, rrep.dest, out);
            }
            return;
        }
        // Pass on what this node now actually holds, so upstream hop counts
        // stay consistent with the table.
        match self.table.lookup(rrep.dest, env.now) {
            Some(e) => self.send_toward_origin(
                env,
                Rrep {
                    dest: rrep.dest,
                    dest_seq: e.dest_seq,
                    hop_count: e.hop_count,
                    origin: rrep.origin,
                },
                out,
            ),
            None => out.push(Action::ControlLost),
        }
    }

    pub fn handle_rerr(&mut self, _env: &Env, rerr: Rerr, from: NodeId, out: &mut Vec<Action>) {
        let mut lost = Vec::new();
        for (dest, seq) in rerr.unreachable {
            if let Some(e) = self.table.entries.get_mut(&dest) {
                if e.valid && e.next_hop == from {
                    e.valid = false;
                    e.dest_seq = e.dest_seq.saturating_add(1).max(seq);
                    lost.push((dest, e.dest_seq));
                }
            }
        }
        if !lost.is_empty() {
            out.push(Action::Broadcast(Control::Rerr(Rerr { unreachable: lost })));
        }
    }

    /// `neighbor` is gone (or no longer trusted): drop every route through it.
    pub fn handle_link_break(&mut self, _env: &Env, neighbor: NodeId, out: &mut Vec<Action>) {
        let lost = self.table.invalidate_via(neighbor);
        if !lost.is_empty() {
            out.push(Action::Broadcast(Control::Rerr(Rerr { unreachable: lost })));
        }
    }

    /// The link layer could not reach `to`.
    pub fn on_data_failure(
        &mut self,
        env: &Env,
        packet: DataPacket,
        to: NodeId,
        out: &mut Vec<Action>,
    ) {
        self.handle_link_break(env, to, out);
        if packet.src == self.id {
            self.buffer(env, packet, out);
        } else {
            out.push(Action::Drop(packet, DropCause::LinkBreak));
        }
    }

    pub fn on_control_failure(&mut self, env: &Env, to: NodeId, out: &mut Vec<Action>) {
        self.handle_link_break(env, to, out);
        out.push(Action::ControlLost);
    }

    pub fn handle_control(&mut self, env: &Env, msg: Control, from: NodeId, out: &mut Vec<Action>) {
        match msg {
            Control::Rreq(m) => self.handle_rreq(env, m, from, out),
            Control::Rrep(m) => self.handle_rrep(env, m, from, out),
            Control::Rerr(m) => self.handle_rerr(env, m, from, out),
            _ => {}
        }
    }
}

/// Checks hop-count descent along next-hop chains: whenever node `i` routes
/// to `d` via `j`, and `j` holds a live route to `d` with the same sequence
/// number, `j` must be strictly closer. Entries whose next hop is in
/// `skip_via` are not checked (their advertised routes may be lies).
pub fn check_loop_freedom(
    tables: &[&RoutingTable],
    now: SimTime,
    skip_via: &dyn Fn(NodeId) -> bool,
) -> Result<(), String> {
    for (i, table) in tables.iter().enumerate() {
        for e in table.entries().filter(|e| e.is_live(now)) {
            if e.next_hop == e.dest || skip_via(e.next_hop) {
                continue;
            }
            let Some(next) = tables.get(e.next_hop.index()).and_then(|t| t.get(e.dest)) else {
                continue;
            };
            if next.is_live(now) && next.dest_seq == e.dest_seq && next.hop_count >= e.hop_count {
                return Err(format!(
                    "n{i} -> {} for {}: hop count {} not above next hop's {} at seq {}",
                    e.next_hop, e.dest, e.hop_count, next.hop_count, e.dest_seq
                ));
            }
        }
    }
    Ok(())
}
