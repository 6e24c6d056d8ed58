//! One simulation run: the event loop that ties mobility, the link layer,
//! the routing state machines, misbehaving nodes, the watchdog and the
//! metrics together.
//!
//! Links follow the unit-disk model. Whether a unicast gets through is
//! decided when it is sent, against the current neighbour table; a failure
//! is reported straight back to the sender's protocol. Every hop takes a
//! fixed latency and broadcasts add a small random jitter per receiver.
//!
//! When a node hands a data packet to a relay, the relay's fate for that
//! packet (passed on, or dropped by a misbehaving node) reaches the sender
//! as a watchdog observation a fixed timeout later. Drops made by the
//! protocol itself, such as a missing route, are not observed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::adversary::{
    self, AdversaryError, AdversaryProfile, AdversarySpec, CauseKind, EnergyState, ForwardVerdict,
    MisbehaviorCause,
};
use crate::aodv::{self, AodvConfig, AodvNode};
use crate::dsr::{DsrConfig, DsrNode};
use crate::engine::{EngineError, EventQueue, RngStreams, SimTime};
use crate::metrics::{
    self, CbrFlow, LogEvent, MetricsLedger, MetricsReport, TrafficError, TrafficSpec,
};
use crate::mobility::{
    self, CommRange, MobilityError, Position, Terrain, WaypointParams, WaypointState,
};
use crate::packet::{first_duplicate, Control, DataPacket, NodeId, Packet, PacketUid};
use crate::routing::{Action, DiscoveryTimer, DropCause, Env};
use crate::trust::{DecisionRecord, Outcome, Strategy, StrategyConfig, TrustLedger, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    Aodv,
    Dsr,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Aodv => "aodv",
            Protocol::Dsr => "dsr",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aodv" => Ok(Protocol::Aodv),
            "dsr" => Ok(Protocol::Dsr),
            other => Err(format!("unknown protocol `{other}` (aodv | dsr)")),
        }
    }
}

/// Everything a run depends on, in simulator units.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub nodes: usize,
    pub terrain: Terrain,
    pub range: f64,
    pub waypoint: WaypointParams,
    pub mobility_tick: SimTime,
    pub traffic: TrafficSpec,
    pub adversary: AdversarySpec,
    pub trust: StrategyConfig,
    pub per_watcher_trust: bool,
    pub watchdog_timeout: SimTime,
    pub aodv: AodvConfig,
    pub dsr: DsrConfig,
    pub link_latency: SimTime,
    /// Upper bound of the per-receiver broadcast jitter.
    pub jitter: SimTime,
    pub duration: SimTime,
    pub seed: u64,
    pub snapshot_interval: SimTime,
    /// Run the routing-state audits at every snapshot.
    pub audit: bool,
    pub event_log: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            protocol: Protocol::Aodv,
            nodes: 40,
            terrain: Terrain::default(),
            range: 150.0,
            waypoint: WaypointParams::default(),
            mobility_tick: SimTime::from_millis(500),
            traffic: TrafficSpec::default(),
            adversary: AdversarySpec::default(),
            trust: StrategyConfig::default(),
            per_watcher_trust: false,
            watchdog_timeout: SimTime::from_millis(500),
            aodv: AodvConfig::default(),
            dsr: DsrConfig::default(),
            link_latency: SimTime::from_millis(1),
            jitter: SimTime::from_micros(100),
            duration: SimTime::from_secs(300),
            seed: 1,
            snapshot_interval: SimTime::from_secs(10),
            audit: false,
            event_log: false,
        }
    }
}

/// Fixed inputs that replace the random draws, for hand-built scenarios.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    /// Static node positions; mobility is frozen.
    pub positions: Option<Vec<Position>>,
    pub flows: Option<Vec<CbrFlow>>,
    pub profile: Option<AdversaryProfile>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Per-node routing state for either protocol.
#[derive(Clone, Debug)]
pub enum Router {
    Aodv(AodvNode),
    Dsr(DsrNode),
}

impl Router {
    fn send_data(&mut self, env: &Env, p: DataPacket, out: &mut Vec<Action>) {
        match self {
            Router::Aodv(r) => r.send_data(env, p, out),
            Router::Dsr(r) => r.send_data(env, p, out),
        }
    }

    fn forward_data(&mut self, env: &Env, p: DataPacket, out: &mut Vec<Action>) {
        match self {
            Router::Aodv(r) => r.forward_data(env, p, out),
            Router::Dsr(r) => r.forward_data(env, p, out),
        }
    }

    fn handle_control(&mut self, env: &Env, msg: Control, from: NodeId, out: &mut Vec<Action>) {
        match self {
            Router::Aodv(r) => r.handle_control(env, msg, from, out),
            Router::Dsr(r) => r.handle_control(env, msg, out),
        }
    }

    fn on_timer(&mut self, env: &Env, t: DiscoveryTimer, out: &mut Vec<Action>) {
        match self {
            Router::Aodv(r) => r.on_timer(env, t, out),
            Router::Dsr(r) => r.on_timer(env, t, out),
        }
    }

    fn on_data_failure(&mut self, env: &Env, p: DataPacket, to: NodeId, out: &mut Vec<Action>) {
        match self {
            Router::Aodv(r) => r.on_data_failure(env, p, to, out),
            Router::Dsr(r) => r.on_data_failure(env, p, to, out),
        }
    }

    fn on_control_failure(&mut self, env: &Env, to: NodeId, out: &mut Vec<Action>) {
        match self {
            Router::Aodv(r) => r.on_control_failure(env, to, out),
            Router::Dsr(r) => r.on_control_failure(env, to, out),
        }
    }

    /// Neighbour moved out of range. DSR only notices on use.
    fn link_lost(&mut self, env: &Env, neighbor: NodeId, out: &mut Vec<Action>) {
        if let Router::Aodv(r) = self {
            r.handle_link_break(env, neighbor, out);
        }
    }

    /// Drop the current paths through `hop`.
    fn reject_hop(&mut self, env: &Env, hop: NodeId, out: &mut Vec<Action>) {
        match self {
            Router::Aodv(r) => r.handle_link_break(env, hop, out),
            Router::Dsr(r) => r.forget_relay(hop),
        }
    }

    fn note_request(&mut self, origin: NodeId, id: u32) -> bool {
        match self {
            Router::Aodv(r) => r.note_request(origin, id),
            Router::Dsr(r) => r.note_request(origin, id),
        }
    }

    pub fn pending(&self) -> usize {
        match self {
            Router::Aodv(r) => r.pending(),
            Router::Dsr(r) => r.pending(),
        }
    }

    pub fn as_aodv(&self) -> Option<&AodvNode> {
        match self {
            Router::Aodv(r) => Some(r),
            Router::Dsr(_) => None,
        }
    }

    pub fn as_dsr(&self) -> Option<&DsrNode> {
        match self {
            Router::Dsr(r) => Some(r),
            Router::Aodv(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
enum Event {
    Arrival {
        to: NodeId,
        from: NodeId,
        packet: Packet,
        sent_at: SimTime,
    },
    Discovery {
        node: NodeId,
        timer: DiscoveryTimer,
    },
    Watchdog {
        watcher: NodeId,
        subject: NodeId,
        outcome: Outcome,
        handed_over_at: SimTime,
    },
    Mobility,
    Traffic {
        flow: usize,
        k: u64,
    },
    Snapshot,
}

struct NodeState {
    router: Router,
    cause: Option<MisbehaviorCause>,
    energy: Option<EnergyState>,
}

/// What a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub log: Option<Vec<LogEvent>>,
    pub decisions: Vec<DecisionRecord>,
    pub violations: Vec<String>,
    pub snapshots: u64,
    pub events: u64,
}

pub struct Simulation {
    cfg: SimConfig,
    queue: EventQueue<Event>,
    rng: RngStreams,
    motion: Vec<WaypointState>,
    positions: Vec<Position>,
    range: CommRange,
    neighbors: Vec<Vec<NodeId>>,
    mobile: bool,
    nodes: Vec<NodeState>,
    flows: Vec<CbrFlow>,
    profile: AdversaryProfile,
    trust: TrustLedger,
    metrics: MetricsLedger,
    next_uid: u64,
    data_in_transit: u64,
    forwards: Vec<u64>,
    violations: Vec<String>,
    snapshots: u64,
    report: Option<MetricsReport>,
}

impl Simulation {
    pub fn new(cfg: SimConfig, ov: Overrides) -> Result<Self, SimError> {
        validate(&cfg)?;
        let n = cfg.nodes;
        let mut rng = RngStreams::new(cfg.seed);
        let range = CommRange::new(cfg.range)?;

        let (motion, mobile) = match ov.positions {
            Some(pos) => {
                if pos.len() != n {
                    return Err(SimError::Config(format!(
                        "{} fixed positions given for {n} nodes",
                        pos.len()
                    )));
                }
                if let Some(p) = pos.iter().find(|p| !cfg.terrain.contains(**p)) {
                    return Err(SimError::Config(format!(
                        "position {p:?} is off the terrain"
                    )));
                }
                (pos.into_iter().map(WaypointState::fixed).collect(), false)
            }
            None => (
                mobility::init_positions(n, &cfg.terrain, &cfg.waypoint, &mut rng.mobility)?,
                cfg.waypoint.speed_max > 0.0,
            ),
        };
        let ids: Vec<NodeId> = (0..n).map(NodeId::from).collect();
        let profile = match ov.profile {
            Some(p) => {
                if let Some(bad) = p.assignments.keys().find(|id| id.index() >= n) {
                    return Err(SimError::Config(format!(
                        "adversary {bad} is outside the network"
                    )));
                }
                p
            }
            None => adversary::assign(&cfg.adversary, &ids, cfg.duration, &mut rng.adversary)?,
        };
        let flows = match ov.flows {
            Some(f) => f,
            None => metrics::generate(&cfg.traffic, n, cfg.duration, &mut rng.traffic),
        };
        for f in &flows {
            f.validate(n)?;
        }

        let nodes = ids
            .iter()
            .map(|&id| {
                let cause = profile.cause(id).cloned();
                let energy = match &cause {
                    Some(MisbehaviorCause::EnergyDepletion { energy }) => {
                        Some(EnergyState::new(energy))
                    }
                    _ => None,
                };
                let router = match cfg.protocol {
                    Protocol::Aodv => Router::Aodv(AodvNode::new(id, cfg.aodv)),
                    Protocol::Dsr => Router::Dsr(DsrNode::new(id, cfg.dsr)),
                };
                NodeState {
                    router,
                    cause,
                    energy,
                }
            })
            .collect();

        let positions: Vec<Position> = motion.iter().map(|m: &WaypointState| m.current).collect();
        let neighbors = mobility::neighbor_table(&positions, range);
        let mut sim = Simulation {
            trust: TrustLedger::new(cfg.trust.clone(), cfg.per_watcher_trust),
            metrics: MetricsLedger::new(cfg.event_log),
            queue: EventQueue::new(),
            rng,
            motion,
            positions,
            range,
            neighbors,
            mobile,
            nodes,
            flows,
            profile,
            next_uid: 0,
            data_in_transit: 0,
            forwards: vec![0; n],
            violations: Vec::new(),
            snapshots: 0,
            report: None,
            cfg,
        };
        for (i, f) in sim.flows.iter().enumerate() {
            if f.start < f.stop {
                sim.queue
                    .schedule(f.start, Event::Traffic { flow: i, k: 0 })?;
            }
        }
        if sim.mobile {
            sim.queue.schedule(sim.cfg.mobility_tick, Event::Mobility)?;
        }
        sim.queue
            .schedule(sim.cfg.snapshot_interval, Event::Snapshot)?;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn neighbors(&self) -> &[Vec<NodeId>] {
        &self.neighbors
    }

    pub fn flows(&self) -> &[CbrFlow] {
        &self.flows
    }

    pub fn profile(&self) -> &AdversaryProfile {
        &self.profile
    }

    pub fn router(&self, node: NodeId) -> &Router {
        &self.nodes[node.index()].router
    }

    pub fn trust(&self) -> &TrustLedger {
        &self.trust
    }

    pub fn metrics(&self) -> &MetricsLedger {
        &self.metrics
    }

    /// Data packets node `node` has passed on as a relay.
    pub fn forwards(&self, node: NodeId) -> u64 {
        self.forwards[node.index()]
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// Dispatches every event up to `until` (capped at the run duration).
    pub fn run_until(&mut self, until: SimTime) -> Result<(), SimError> {
        let end = until.min(self.cfg.duration);
        while let Some(ev) = self.queue.pop_until(end) {
            self.dispatch(ev.payload);
        }
        if end > self.queue.now() {
            self.queue.advance_to(end)?;
        }
        Ok(())
    }

    /// Runs to the end and closes the metrics ledger.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        self.run_until(self.cfg.duration)?;
        let report = self.finalize();
        Ok(RunOutput {
            report,
            log: self.metrics.log().map(<[LogEvent]>::to_vec),
            decisions: self.trust.decisions().to_vec(),
            violations: self.violations,
            snapshots: self.snapshots,
            events: self.queue.dispatched(),
        })
    }

    /// Counts whatever is still in flight as dropped at end of run. Only the
    /// first call closes the books.
    pub fn finalize(&mut self) -> MetricsReport {
        if self.report.is_none() {
            let now = self.queue.now();
            self.report = Some(self.metrics.finalize(now, self.cfg.duration));
        }
        self.report.clone().expect("set above")
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Arrival {
                to,
                from,
                packet: Packet::Data(p),
                sent_at,
            } => self.on_data_arrival(to, from, p, sent_at),
            Event::Arrival {
                to,
                from,
                packet: Packet::Control(c),
                ..
            } => self.on_control_arrival(to, from, c),
            Event::Discovery { node, timer } => {
                if self.down_cause(node).is_none() {
                    let out = self.with_router(node, |r, env, out| r.on_timer(env, timer, out));
                    self.apply(node, out);
                } else {
                    // A failed node keeps its discovery alive until it is back.
                    let wait = match self.cfg.protocol {
                        Protocol::Aodv => self.cfg.aodv.discovery.timeout,
                        Protocol::Dsr => self.cfg.dsr.discovery.timeout,
                    };
                    self.queue
                        .schedule_in(wait, Event::Discovery { node, timer });
                }
            }
            Event::Watchdog {
                watcher,
                subject,
                outcome,
                handed_over_at,
            } => self.on_watchdog(watcher, subject, outcome, handed_over_at),
            Event::Mobility => self.on_mobility(),
            Event::Traffic { flow, k } => self.on_traffic(flow, k),
            Event::Snapshot => self.on_snapshot(),
        }
    }

    fn with_router(
        &mut self,
        node: NodeId,
        f: impl FnOnce(&mut Router, &Env, &mut Vec<Action>),
    ) -> Vec<Action> {
        let now = self.queue.now();
        let trust = &self.trust;
        let active = self.cfg.trust.strategy != Strategy::None;
        let filter = move |h: NodeId| !active || !trust.is_eliminated(node, h);
        let env = Env::new(now, &filter);
        let mut out = Vec::new();
        f(&mut self.nodes[node.index()].router, &env, &mut out);
        out
    }

    /// Why `node` is out of action right now, if it is.
    fn down_cause(&self, node: NodeId) -> Option<CauseKind> {
        let n = &self.nodes[node.index()];
        match (&n.cause, &n.energy) {
            (Some(MisbehaviorCause::NodeFailure { window }), _)
                if window.active(self.queue.now()) =>
            {
                Some(CauseKind::NodeFailure)
            }
            (_, Some(e)) if !e.can_transmit() => Some(CauseKind::EnergyDepletion),
            _ => None,
        }
    }

    fn debit_tx(&mut self, node: NodeId) {
        if let Some(e) = &mut self.nodes[node.index()].energy {
            e.debit_tx();
        }
    }

    fn debit_rx(&mut self, node: NodeId) {
        if let Some(e) = &mut self.nodes[node.index()].energy {
            e.debit_rx();
        }
    }

    fn linked(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors[a.index()].binary_search(&b).is_ok()
    }

    fn is_black_hole(&self, node: NodeId) -> bool {
        matches!(
            self.nodes[node.index()].cause,
            Some(MisbehaviorCause::BlackHole { .. })
        )
    }

    fn drop_data(&mut self, uid: PacketUid, cause: DropCause) {
        let now = self.queue.now();
        self.metrics.on_dropped(now, uid, cause);
    }

    fn apply(&mut self, node: NodeId, actions: Vec<Action>) {
        for a in actions {
            self.apply_one(node, a);
        }
    }

    fn apply_one(&mut self, node: NodeId, action: Action) {
        let now = self.queue.now();
        match action {
            Action::Broadcast(msg) => self.broadcast(node, msg),
            Action::Unicast { to, msg } => self.unicast(node, to, msg),
            Action::Forward { to, packet } => self.send_data(node, to, packet),
            Action::Deliver(p) => self.metrics.on_delivered(now, &p),
            Action::Drop(p, cause) => self.metrics.on_dropped(now, p.uid, cause),
            Action::Timer { after, timer } => {
                self.queue
                    .schedule_in(after, Event::Discovery { node, timer });
            }
            Action::ControlLost => self.metrics.control_lost += 1,
        }
    }

    fn broadcast(&mut self, node: NodeId, msg: Control) {
        if self.down_cause(node).is_some() {
            return;
        }
        let now = self.queue.now();
        self.metrics.on_control_tx(now, node, msg.kind());
        self.debit_tx(node);
        let jitter = self.cfg.jitter.as_micros();
        for i in 0..self.neighbors[node.index()].len() {
            let to = self.neighbors[node.index()][i];
            let j = SimTime::from_micros(self.rng.jitter.gen_range(0..=jitter));
            self.queue.schedule_in(
                self.cfg.link_latency + j,
                Event::Arrival {
                    to,
                    from: node,
                    packet: Packet::Control(msg.clone()),
                    sent_at: now,
                },
            );
        }
    }

    fn unicast(&mut self, node: NodeId, to: NodeId, msg: Control) {
        if self.down_cause(node).is_some() {
            self.metrics.control_lost += 1;
            return;
        }
        let now = self.queue.now();
        self.metrics.on_control_tx(now, node, msg.kind());
        self.debit_tx(node);
        if self.linked(node, to) {
            self.queue.schedule_in(
                self.cfg.link_latency,
                Event::Arrival {
                    to,
                    from: node,
                    packet: Packet::Control(msg),
                    sent_at: now,
                },
            );
        } else {
            let out = self.with_router(node, |r, env, out| r.on_control_failure(env, to, out));
            self.apply(node, out);
        }
    }

    fn send_data(&mut self, node: NodeId, to: NodeId, packet: DataPacket) {
        if let Some(kind) = self.down_cause(node) {
            self.drop_data(packet.uid, kind.into());
            return;
        }
        if self.cfg.audit {
            if let Some(h) = &packet.header {
                if let Some(dup) = first_duplicate(h.route.hops()) {
                    self.violations.push(format!(
                        "{}: header route of {:?} visits {dup} twice",
                        self.now(),
                        packet.uid
                    ));
                }
            }
        }
        self.debit_tx(node);
        if self.linked(node, to) {
            self.data_in_transit += 1;
            let now = self.queue.now();
            self.queue.schedule_in(
                self.cfg.link_latency,
                Event::Arrival {
                    to,
                    from: node,
                    packet: Packet::Data(packet),
                    sent_at: now,
                },
            );
        } else {
            let out = self.with_router(node, |r, env, out| r.on_data_failure(env, packet, to, out));
            self.apply(node, out);
        }
    }

    fn intercept(&mut self, node: NodeId, next_hop: NodeId) -> ForwardVerdict {
        let now = self.queue.now();
        let n = &mut self.nodes[node.index()];
        match &n.cause {
            Some(c) => adversary::intercept_forward(
                c,
                n.energy.as_mut(),
                now,
                next_hop,
                &mut self.rng.adversary,
            ),
            None => ForwardVerdict::Forward,
        }
    }

    fn watch(
        &mut self,
        watcher: NodeId,
        subject: NodeId,
        outcome: Outcome,
        handed_over_at: SimTime,
    ) {
        let at = (handed_over_at + self.cfg.watchdog_timeout).max(self.queue.now());
        self.queue
            .schedule(
                at,
                Event::Watchdog {
                    watcher,
                    subject,
                    outcome,
                    handed_over_at,
                },
            )
            .expect("not in the past");
    }

    fn on_data_arrival(
        &mut self,
        node: NodeId,
        from: NodeId,
        packet: DataPacket,
        sent_at: SimTime,
    ) {
        self.data_in_transit -= 1;
        let relay = packet.dst != node;
        if let Some(kind) = self.down_cause(node) {
            self.drop_data(packet.uid, kind.into());
            if relay {
                self.watch(from, node, Outcome::Dropped(kind), sent_at);
            }
            return;
        }
        self.debit_rx(node);

        // Droppers that do not care where the packet is going decide before
        // any routing happens.
        let early = matches!(
            self.nodes[node.index()].cause,
            Some(MisbehaviorCause::DeliberateDrop { .. } | MisbehaviorCause::BlackHole { .. })
        );
        if relay && early {
            if let ForwardVerdict::Drop(kind) = self.intercept(node, packet.dst) {
                self.drop_data(packet.uid, kind.into());
                self.watch(from, node, Outcome::Dropped(kind), sent_at);
                return;
            }
        }

        let uid = packet.uid;
        let out = self.with_router(node, |r, env, out| r.forward_data(env, packet, out));
        let mut outcome = None;
        for a in out {
            match a {
                Action::Forward { to, packet }
                    if relay && outcome.is_none() && packet.uid == uid =>
                {
                    let verdict = if early {
                        ForwardVerdict::Forward
                    } else {
                        self.intercept(node, to)
                    };
                    match verdict {
                        ForwardVerdict::Forward => {
                            outcome = Some(Outcome::Forwarded);
                            self.forwards[node.index()] += 1;
                            self.send_data(node, to, packet);
                        }
                        ForwardVerdict::Drop(kind) => {
                            outcome = Some(Outcome::Dropped(kind));
                            self.drop_data(uid, kind.into());
                        }
                    }
                }
                other => self.apply_one(node, other),
            }
        }
        if let Some(o) = outcome {
            self.watch(from, node, o, sent_at);
        }
    }

    /// Trust-based rejection: a receiver ignores control traffic relayed by
    /// a node it has eliminated, unless that node speaks for itself.
    fn rejects(&self, node: NodeId, from: NodeId, msg: &Control) -> bool {
        self.cfg.trust.strategy != Strategy::None
            && msg.originator(from) != from
            && self.trust.is_eliminated(node, from)
    }

    fn on_control_arrival(&mut self, node: NodeId, from: NodeId, msg: Control) {
        if self.down_cause(node).is_some() {
            return;
        }
        let now = self.queue.now();
        if self.rejects(node, from, &msg) {
            self.metrics.on_control_rejected(now, node, msg.kind());
            return;
        }
        self.metrics.on_control_rx(now, node, msg.kind());
        self.debit_rx(node);

        if self.is_black_hole(node) {
            let discovery = match &msg {
                Control::Rreq(r) => Some((r.origin, r.rreq_id, r.dest)),
                Control::Request(r) => Some((r.origin, r.request_id, r.dest)),
                _ => None,
            };
            if let Some((origin, id, dest)) = discovery {
                if dest != node && origin != node {
                    let fresh = self.nodes[node.index()].router.note_request(origin, id);
                    if fresh {
                        let inflation = match self.nodes[node.index()].cause {
                            Some(MisbehaviorCause::BlackHole { seq_inflation }) => seq_inflation,
                            _ => 0,
                        };
                        if let Some(forged) = adversary::forge_reply(node, &msg, inflation) {
                            self.unicast(node, from, forged);
                        }
                    }
                    return;
                }
            }
        }

        let out = self.with_router(node, |r, env, out| r.handle_control(env, msg, from, out));
        self.apply(node, out);
    }

    fn on_watchdog(
        &mut self,
        watcher: NodeId,
        subject: NodeId,
        outcome: Outcome,
        handed_over_at: SimTime,
    ) {
        let now = self.queue.now();
        let verdict = self
            .trust
            .report(now, watcher, subject, outcome, handed_over_at);
        if verdict == Some(Verdict::GiveSecondChance) {
            let out = self.with_router(watcher, |r, env, out| r.reject_hop(env, subject, out));
            self.apply(watcher, out);
        }
    }

    fn on_traffic(&mut self, flow: usize, k: u64) {
        let now = self.queue.now();
        let f = &self.flows[flow];
        let (src, dst, id, payload) = (f.src, f.dst, f.id, f.payload);
        let next = f.start + f.interval().scaled(k + 1);
        if next < f.stop {
            self.queue
                .schedule(next, Event::Traffic { flow, k: k + 1 })
                .expect("future tick");
        }
        let ttl = match self.cfg.protocol {
            Protocol::Aodv => self.cfg.aodv.ttl,
            Protocol::Dsr => self.cfg.dsr.ttl,
        };
        let packet = DataPacket {
            uid: PacketUid(self.next_uid),
            flow: id,
            src,
            dst,
            created_at: now,
            payload,
            ttl,
            header: None,
        };
        self.next_uid += 1;
        self.metrics.on_sent(now, &packet);
        if let Some(kind) = self.down_cause(src) {
            self.drop_data(packet.uid, kind.into());
            return;
        }
        let out = self.with_router(src, |r, env, out| r.send_data(env, packet, out));
        self.apply(src, out);
    }

    fn on_mobility(&mut self) {
        let now = self.queue.now();
        let dt = self.cfg.mobility_tick;
        let from = now.saturating_sub(dt);
        for i in 0..self.motion.len() {
            self.motion[i] = mobility::advance(
                &self.motion[i],
                from,
                dt,
                &self.cfg.terrain,
                &self.cfg.waypoint,
                &mut self.rng.mobility,
            );
            self.positions[i] = self.motion[i].current;
        }
        let fresh = mobility::neighbor_table(&self.positions, self.range);
        let old = std::mem::replace(&mut self.neighbors, fresh);
        for (i, before) in old.iter().enumerate() {
            let node = NodeId::from(i);
            if self.down_cause(node).is_some() {
                continue;
            }
            for &nb in before {
                if !self.linked(node, nb) {
                    let out = self.with_router(node, |r, env, out| r.link_lost(env, nb, out));
                    self.apply(node, out);
                }
            }
        }
        if now + dt <= self.cfg.duration {
            self.queue.schedule_in(dt, Event::Mobility);
        }
    }

    fn on_snapshot(&mut self) {
        self.snapshots += 1;
        let now = self.queue.now();
        let buffered: u64 = self.nodes.iter().map(|n| n.router.pending() as u64).sum();
        let live = buffered + self.data_in_transit;
        if !self.metrics.conserved() || self.metrics.in_flight() != live {
            self.violations.push(format!(
                "{now}: conservation broken: sent {} delivered {} dropped {} in flight {} (counted live {live})",
                self.metrics.data_sent,
                self.metrics.data_delivered,
                self.metrics.dropped_total(),
                self.metrics.in_flight(),
            ));
        }
        if self.cfg.audit {
            self.audit(now);
        }
        if now + self.cfg.snapshot_interval <= self.cfg.duration {
            self.queue
                .schedule_in(self.cfg.snapshot_interval, Event::Snapshot);
        }
    }

    fn audit(&mut self, now: SimTime) {
        match self.cfg.protocol {
            Protocol::Aodv => {
                let tables: Vec<_> = self
                    .nodes
                    .iter()
                    .filter_map(|n| n.router.as_aodv().map(AodvNode::table))
                    .collect();
                let liars = |h: NodeId| self.is_black_hole(h);
                if let Err(e) = aodv::check_loop_freedom(&tables, now, &liars) {
                    self.violations.push(format!("{now}: {e}"));
                }
            }
            Protocol::Dsr => {
                let mut found = Vec::new();
                for n in &self.nodes {
                    if let Some(d) = n.router.as_dsr() {
                        for c in d.cache().all() {
                            if let Some(dup) = first_duplicate(c.route.hops()) {
                                found.push(format!(
                                    "{now}: cache of {} holds a route visiting {dup} twice",
                                    d.id()
                                ));
                            }
                        }
                    }
                }
                self.violations.extend(found);
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if matches!(n.cause, Some(MisbehaviorCause::BlackHole { .. })) && self.forwards[i] > 0 {
                self.violations.push(format!(
                    "{now}: black hole n{i} forwarded {} packets",
                    self.forwards[i]
                ));
            }
        }
    }
}

fn validate(cfg: &SimConfig) -> Result<(), SimError> {
    let bad = |m: String| Err(SimError::Config(m));
    if cfg.nodes < 2 {
        return bad(format!("nodes: at least 2 are required, got {}", cfg.nodes));
    }
    if cfg.duration == SimTime::ZERO {
        return bad("duration: must be positive".into());
    }
    if cfg.mobility_tick == SimTime::ZERO {
        return bad("mobility tick: must be positive".into());
    }
    if cfg.snapshot_interval == SimTime::ZERO {
        return bad("snapshot interval: must be positive".into());
    }
    if !(cfg.traffic.rate > 0.0 && cfg.traffic.rate.is_finite()) {
        return bad(format!(
            "traffic rate: must be positive, got {}",
            cfg.traffic.rate
        ));
    }
    if cfg.traffic.payload == 0 {
        return bad("traffic payload: must be positive".into());
    }
    cfg.trust
        .validate()
        .map_err(|e| SimError::Config(format!("trust: {e}")))?;
    cfg.adversary.validate()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trust::Strategy;

    fn line(n: usize, spacing: f64) -> Vec<Position> {
        (0..n)
            .map(|i| Position::new(10.0 + i as f64 * spacing, 10.0))
            .collect()
    }

    fn one_flow(src: u32, dst: u32, secs: u64) -> Vec<CbrFlow> {
        vec![CbrFlow {
            id: 0,
            src: NodeId(src),
            dst: NodeId(dst),
            rate: 4.0,
            payload: 512,
            start: SimTime::from_secs(1),
            stop: SimTime::from_secs(secs),
        }]
    }

    fn static_cfg(protocol: Protocol, n: usize) -> SimConfig {
        SimConfig {
            protocol,
            nodes: n,
            range: 150.0,
            duration: SimTime::from_secs(20),
            audit: true,
            ..Default::default()
        }
    }

    fn clean() -> AdversaryProfile {
        AdversaryProfile::default()
    }

    #[test]
    fn line_delivers_everything_for_both_protocols() {
        for protocol in [Protocol::Aodv, Protocol::Dsr] {
            let sim = Simulation::new(
                static_cfg(protocol, 5),
                Overrides {
                    positions: Some(line(5, 100.0)),
                    flows: Some(one_flow(0, 4, 11)),
                    profile: Some(clean()),
                },
            )
            .unwrap();
            let out = sim.run().unwrap();
            assert_eq!(out.report.data_sent, 40, "{protocol}");
            assert_eq!(out.report.data_delivered, 40, "{protocol}");
            assert!(out.violations.is_empty(), "{:?}", out.violations);
        }
    }

    #[test]
    fn disconnected_pair_delivers_nothing() {
        let sim = Simulation::new(
            static_cfg(Protocol::Aodv, 3),
            Overrides {
                positions: Some(vec![
                    Position::new(0.0, 0.0),
                    Position::new(400.0, 0.0),
                    Position::new(0.0, 400.0),
                ]),
                flows: Some(one_flow(0, 1, 3)),
                profile: Some(clean()),
            },
        )
        .unwrap();
        let out = sim.run().unwrap();
        assert_eq!(out.report.data_delivered, 0);
        assert!(out.report.dropped[&DropCause::DiscoveryFailed] > 0);
    }

    #[test]
    fn too_few_nodes_rejected() {
        let cfg = SimConfig {
            nodes: 1,
            ..Default::default()
        };
        let err = Simulation::new(cfg, Overrides::default()).err().unwrap();
        assert!(err.to_string().contains("nodes"), "{err}");
    }

    #[test]
    fn random_run_keeps_books_balanced() {
        for protocol in [Protocol::Aodv, Protocol::Dsr] {
            let cfg = SimConfig {
                protocol,
                nodes: 20,
                duration: SimTime::from_secs(60),
                audit: true,
                trust: StrategyConfig {
                    strategy: Strategy::SecondChance,
                    ..Default::default()
                },
                seed: 7,
                ..Default::default()
            };
            let out = Simulation::new(cfg, Overrides::default())
                .unwrap()
                .run()
                .unwrap();
            assert!(
                out.violations.is_empty(),
                "{protocol}: {:?}",
                out.violations
            );
            let r = &out.report;
            let dropped: u64 = r.dropped.values().sum();
            assert_eq!(r.data_delivered + dropped, r.data_sent);
            assert!(out.snapshots >= 5);
        }
    }
}
