//! Misbehaving nodes: which nodes misbehave, why, and what they do to the
//! packets that pass through them.
//!
//! Two causes are deliberate (selective dropping and the black-hole attack,
//! which also forges route replies). The other three are faults: node
//! outages, a failed link to one peer, and battery exhaustion. Node and link
//! failures follow a [`Window`]: a single outage, a recurring one, or a
//! permanent failure from some onset on. Energy exhaustion is permanent.

use std::collections::BTreeMap;
use std::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use thiserror::Error;

use crate::engine::{RngStream, SimTime};
use crate::packet::{Control, DsrReply, NodeId, Rrep, SourceRoute};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CauseKind {
    DeliberateDrop,
    BlackHole,
    NodeFailure,
    LinkFailure,
    EnergyDepletion,
}

impl CauseKind {
    pub const ALL: [CauseKind; 5] = [
        CauseKind::DeliberateDrop,
        CauseKind::BlackHole,
        CauseKind::NodeFailure,
        CauseKind::LinkFailure,
        CauseKind::EnergyDepletion,
    ];

    /// Node, link and energy failures are faults; the rest are deliberate.
    pub fn is_fault(self) -> bool {
        matches!(
            self,
            CauseKind::NodeFailure | CauseKind::LinkFailure | CauseKind::EnergyDepletion
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CauseKind::DeliberateDrop => "deliberate_drop",
            CauseKind::BlackHole => "black_hole",
            CauseKind::NodeFailure => "node_failure",
            CauseKind::LinkFailure => "link_failure",
            CauseKind::EnergyDepletion => "energy_depletion",
        }
    }
}

impl fmt::Display for CauseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParams {
    pub initial: f64,
    pub tx_cost: f64,
    pub rx_cost: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            initial: 1000.0,
            tx_cost: 1.0,
            rx_cost: 1.0,
        }
    }
}

/// When a failure is in effect. From `onset` the node or link is down for
/// `outage`; with an `uptime` it then recovers for that long and the cycle
/// repeats. A zero `outage` means down for good once it starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub onset: SimTime,
    pub outage: SimTime,
    pub uptime: Option<SimTime>,
}

impl Window {
    pub fn active(&self, now: SimTime) -> bool {
        if now < self.onset {
            return false;
        }
        if self.outage == SimTime::ZERO {
            return true;
        }
        let since = (now - self.onset).as_micros();
        match self.uptime {
            None => since < self.outage.as_micros(),
            Some(up) => since % (self.outage + up).as_micros() < self.outage.as_micros(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MisbehaviorCause {
    DeliberateDrop { probability: f64 },
    BlackHole { seq_inflation: u32 },
    NodeFailure { window: Window },
    LinkFailure { peer: NodeId, window: Window },
    EnergyDepletion { energy: EnergyParams },
}

impl MisbehaviorCause {
    pub fn kind(&self) -> CauseKind {
        match self {
            MisbehaviorCause::DeliberateDrop { .. } => CauseKind::DeliberateDrop,
            MisbehaviorCause::BlackHole { .. } => CauseKind::BlackHole,
            MisbehaviorCause::NodeFailure { .. } => CauseKind::NodeFailure,
            MisbehaviorCause::LinkFailure { .. } => CauseKind::LinkFailure,
            MisbehaviorCause::EnergyDepletion { .. } => CauseKind::EnergyDepletion,
        }
    }
}

/// Relative weight of each cause when assigning misbehaving nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CauseWeights {
    pub deliberate_drop: f64,
    pub black_hole: f64,
    pub node_failure: f64,
    pub link_failure: f64,
    pub energy_depletion: f64,
}

impl Default for CauseWeights {
    fn default() -> Self {
        CauseWeights {
            deliberate_drop: 1.0,
            black_hole: 1.0,
            node_failure: 1.0,
            link_failure: 1.0,
            energy_depletion: 1.0,
        }
    }
}

impl CauseWeights {
    pub fn only(kind: CauseKind) -> Self {
        let mut w = CauseWeights {
            deliberate_drop: 0.0,
            black_hole: 0.0,
            node_failure: 0.0,
            link_failure: 0.0,
            energy_depletion: 0.0,
        };
        *w.weight_mut(kind) = 1.0;
        w
    }

    pub fn weight(&self, kind: CauseKind) -> f64 {
        match kind {
            CauseKind::DeliberateDrop => self.deliberate_drop,
            CauseKind::BlackHole => self.black_hole,
            CauseKind::NodeFailure => self.node_failure,
            CauseKind::LinkFailure => self.link_failure,
            CauseKind::EnergyDepletion => self.energy_depletion,
        }
    }

    fn weight_mut(&mut self, kind: CauseKind) -> &mut f64 {
        match kind {
            CauseKind::DeliberateDrop => &mut self.deliberate_drop,
            CauseKind::BlackHole => &mut self.black_hole,
            CauseKind::NodeFailure => &mut self.node_failure,
            CauseKind::LinkFailure => &mut self.link_failure,
            CauseKind::EnergyDepletion => &mut self.energy_depletion,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarySpec {
    pub fraction: f64,
    pub weights: CauseWeights,
    pub drop_probability: f64,
    pub seq_inflation: u32,
    /// Length of each node or link outage; zero means permanent.
    pub outage: SimTime,
    /// Time between recurring outages; `None` for a single outage.
    pub uptime: Option<SimTime>,
    pub energy: EnergyParams,
}

impl Default for AdversarySpec {
    fn default() -> Self {
        AdversarySpec {
            fraction: 0.2,
            weights: CauseWeights::default(),
            drop_probability: 0.5,
            seq_inflation: 10,
            outage: SimTime::from_secs(5),
            uptime: Some(SimTime::from_secs(25)),
            energy: EnergyParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdversaryError {
    #[error("adversary fraction must be in [0, 1), got {0}")]
    Fraction(f64),
    #[error("drop probability must be in [0, 1], got {0}")]
    DropProbability(f64),
    #[error("cause weights must be non-negative with a positive sum")]
    Weights,
    #[error("energy parameters must be non-negative")]
    Energy,
}

impl AdversarySpec {
    pub fn validate(&self) -> Result<(), AdversaryError> {
        if !(0.0..1.0).contains(&self.fraction) {
            return Err(AdversaryError::Fraction(self.fraction));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(AdversaryError::DropProbability(self.drop_probability));
        }
        let ws: Vec<f64> = CauseKind::ALL
            .iter()
            .map(|k| self.weights.weight(*k))
            .collect();
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(AdversaryError::Weights);
        }
        let e = &self.energy;
        if [e.initial, e.tx_cost, e.rx_cost]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(AdversaryError::Energy);
        }
        Ok(())
    }

    /// Number of misbehaving nodes among `n`.
    pub fn count(&self, n: usize) -> usize {
        // The epsilon absorbs products like 0.29 * 100 = 28.999999999999996.
        (self.fraction * n as f64 + 1e-9).floor() as usize
    }
}

/// Which node misbehaves and why.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdversaryProfile {
    pub assignments: BTreeMap<NodeId, MisbehaviorCause>,
    pub fraction: f64,
}

impl AdversaryProfile {
    pub fn cause(&self, node: NodeId) -> Option<&MisbehaviorCause> {
        self.assignments.get(&node)
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Draws `floor(fraction * n)` nodes without replacement and gives each a
/// cause according to the weights. Fault onsets are uniform over
/// `[0, horizon)`.
pub fn assign(
    spec: &AdversarySpec,
    nodes: &[NodeId],
    horizon: SimTime,
    rng: &mut RngStream,
) -> Result<AdversaryProfile, AdversaryError> {
    spec.validate()?;
    let k = spec.count(nodes.len());
    let mut profile = AdversaryProfile {
        assignments: BTreeMap::new(),
        fraction: spec.fraction,
    };
    if k == 0 {
        return Ok(profile);
    }
    let picks = rand::seq::index::sample(rng, nodes.len(), k).into_vec();
    let weights: Vec<f64> = CauseKind::ALL
        .iter()
        .map(|c| spec.weights.weight(*c))
        .collect();
    let dist = WeightedIndex::new(&weights).map_err(|_| AdversaryError::Weights)?;
    for i in picks {
        let node = nodes[i];
        let kind = CauseKind::ALL[dist.sample(rng)];
        let cause = match kind {
            CauseKind::DeliberateDrop => MisbehaviorCause::DeliberateDrop {
                probability: spec.drop_probability,
            },
            CauseKind::BlackHole => MisbehaviorCause::BlackHole {
                seq_inflation: spec.seq_inflation,
            },
            CauseKind::NodeFailure => MisbehaviorCause::NodeFailure {
                window: draw_window(spec, horizon, rng),
            },
            CauseKind::LinkFailure => {
                let mut peer = nodes[rng.gen_range(0..nodes.len())];
                if peer == node {
                    peer = nodes[(i + 1) % nodes.len()];
                }
                MisbehaviorCause::LinkFailure {
                    peer,
                    window: draw_window(spec, horizon, rng),
                }
            }
            CauseKind::EnergyDepletion => MisbehaviorCause::EnergyDepletion {
                energy: spec.energy,
            },
        };
        profile.assignments.insert(node, cause);
    }
    Ok(profile)
}

fn draw_window(spec: &AdversarySpec, horizon: SimTime, rng: &mut RngStream) -> Window {
    // A recurring fault gets a random phase; a one-off starts anywhere in the run.
    let span = match spec.uptime {
        Some(up) if spec.outage > SimTime::ZERO => spec.outage + up,
        _ => horizon,
    };
    Window {
        onset: SimTime::from_micros(rng.gen_range(0..span.as_micros().max(1))),
        outage: spec.outage,
        uptime: spec.uptime,
    }
}

/// Battery of an energy-limited node, in abstract units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyState {
    pub remaining: f64,
    pub tx_cost: f64,
    pub rx_cost: f64,
}

impl EnergyState {
    pub fn new(params: &EnergyParams) -> Self {
        EnergyState {
            remaining: params.initial,
            tx_cost: params.tx_cost,
            rx_cost: params.rx_cost,
        }
    }

    pub fn can_transmit(&self) -> bool {
        self.remaining >= self.tx_cost
    }

    pub fn debit_tx(&mut self) {
        self.remaining = (self.remaining - self.tx_cost).max(0.0);
    }

    pub fn debit_rx(&mut self) {
        self.remaining = (self.remaining - self.rx_cost).max(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardVerdict {
    Forward,
    Drop(CauseKind),
}

/// What a misbehaving relay does with a data packet it was asked to pass on
/// to `next_hop`. Energy is debited when the packet goes out.
pub fn intercept_forward(
    cause: &MisbehaviorCause,
    energy: Option<&mut EnergyState>,
    now: SimTime,
    next_hop: NodeId,
    rng: &mut RngStream,
) -> ForwardVerdict {
    match cause {
        MisbehaviorCause::DeliberateDrop { probability } => {
            if rng.gen_bool(*probability) {
                ForwardVerdict::Drop(CauseKind::DeliberateDrop)
            } else {
                ForwardVerdict::Forward
            }
        }
        MisbehaviorCause::BlackHole { .. } => ForwardVerdict::Drop(CauseKind::BlackHole),
        MisbehaviorCause::NodeFailure { window } => {
            if window.active(now) {
                ForwardVerdict::Drop(CauseKind::NodeFailure)
            } else {
                ForwardVerdict::Forward
            }
        }
        MisbehaviorCause::LinkFailure { peer, window } => {
            if *peer == next_hop && window.active(now) {
                ForwardVerdict::Drop(CauseKind::LinkFailure)
            } else {
                ForwardVerdict::Forward
            }
        }
        MisbehaviorCause::EnergyDepletion { .. } => match energy {
            Some(e) if e.can_transmit() => {
                e.debit_tx();
                ForwardVerdict::Forward
            }
            _ => ForwardVerdict::Drop(CauseKind::EnergyDepletion),
        },
    }
}

/// The black-hole answer to a route discovery: claim a one-hop, fresher
/// route to whatever was asked for. Returns `None` for anything that is not
/// a discovery, and when the forged route would loop.
pub fn forge_reply(node: NodeId, msg: &Control, seq_inflation: u32) -> Option<Control> {
    match msg {
        Control::Rreq(rreq) => Some(Control::Rrep(Rrep {
            dest: rreq.dest,
            dest_seq: rreq.dest_seq.unwrap_or(0).saturating_add(seq_inflation),
            hop_count: 1,
            origin: rreq.origin,
        })),
        Control::Request(req) => {
            let mut hops = req.accumulated.clone();
            hops.push(node);
            hops.push(req.dest);
            SourceRoute::new(hops)
                .ok()
                .map(|route| Control::Reply(DsrReply { route }))
        }
        _ => None,
    }
}
