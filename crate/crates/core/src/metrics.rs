//! CBR traffic and the run-wide metrics ledger.
//!
//! Packet delivery ratio is `delivered / sent`. Routing overhead is
//! `control transmitted / control received`, where a broadcast counts once
//! on the transmit side and once per neighbour that accepted it on the
//! receive side. `overhead_conv` is the more common control-per-delivered
//! ratio, reported alongside.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::engine::{RngStream, SimTime};
use crate::packet::{ControlKind, DataPacket, NodeId, PacketUid};
use crate::routing::DropCause;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrafficError {
    #[error("flow {0}: source and destination are the same node")]
    SelfFlow(u32),
    #[error("flow {0}: rate must be positive and finite")]
    Rate(u32),
    #[error("flow {0}: payload must be positive")]
    Payload(u32),
    #[error("flow {0}: stop precedes start")]
    Window(u32),
    #[error("flow {id}: node {node} is outside the network")]
    UnknownNode { id: u32, node: NodeId },
}

/// Constant bit rate flow emitting one packet every `1 / rate` seconds in
/// `[start, stop)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CbrFlow {
    pub id: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub rate: f64,
    pub payload: u32,
    pub start: SimTime,
    pub stop: SimTime,
}

impl CbrFlow {
    pub fn validate(&self, nodes: usize) -> Result<(), TrafficError> {
        if self.src == self.dst {
            return Err(TrafficError::SelfFlow(self.id));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(TrafficError::Rate(self.id));
        }
        if self.payload == 0 {
            return Err(TrafficError::Payload(self.id));
        }
        if self.stop < self.start {
            return Err(TrafficError::Window(self.id));
        }
        for node in [self.src, self.dst] {
            if node.index() >= nodes {
                return Err(TrafficError::UnknownNode { id: self.id, node });
            }
        }
        Ok(())
    }

    /// Inter-packet gap, rounded to the clock resolution.
    pub fn interval(&self) -> SimTime {
        SimTime::from_micros(((1e6 / self.rate).round() as u64).max(1))
    }

    pub fn emission_times(&self) -> impl Iterator<Item = SimTime> + '_ {
        let step = self.interval();
        (0u64..)
            .map(move |k| self.start + step.scaled(k))
            .take_while(move |t| *t < self.stop)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficSpec {
    /// Number of flows; `None` means `max(1, nodes / 10)`.
    pub flows: Option<usize>,
    pub rate: f64,
    pub payload: u32,
    /// Flow starts are uniform in `[0, start_window)`.
    pub start_window: SimTime,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            flows: None,
            rate: 4.0,
            payload: 512,
            start_window: SimTime::from_secs(5),
        }
    }
}

impl TrafficSpec {
    pub fn flow_count(&self, nodes: usize) -> usize {
        self.flows.unwrap_or((nodes / 10).max(1))
    }
}

/// Random flows between distinct node pairs, all stopping at `stop`.
pub fn generate(
    spec: &TrafficSpec,
    nodes: usize,
    stop: SimTime,
    rng: &mut RngStream,
) -> Vec<CbrFlow> {
    if nodes < 2 {
        return Vec::new();
    }
    (0..spec.flow_count(nodes))
        .map(|i| {
            let src = rng.gen_range(0..nodes);
            let mut dst = rng.gen_range(0..nodes - 1);
            if dst >= src {
                dst += 1;
            }
            let start =
                SimTime::from_micros(rng.gen_range(0..spec.start_window.as_micros().max(1)));
            CbrFlow {
                id: i as u32,
                src: NodeId::from(src),
                dst: NodeId::from(dst),
                rate: spec.rate,
                payload: spec.payload,
                start: start.min(stop),
                stop,
            }
        })
        .collect()
}

/// One line of the raw event log.
#[derive(Clone, Debug, PartialEq)]
pub enum LogEvent {
    DataSent {
        t: SimTime,
        uid: PacketUid,
    },
    DataDelivered {
        t: SimTime,
        uid: PacketUid,
    },
    DataDropped {
        t: SimTime,
        uid: PacketUid,
        cause: DropCause,
    },
    ControlTx {
        t: SimTime,
        node: NodeId,
        kind: ControlKind,
    },
    ControlRx {
        t: SimTime,
        node: NodeId,
        kind: ControlKind,
    },
    /// Heard but refused: relayed by a node the receiver has eliminated.
    ControlRejected {
        t: SimTime,
        node: NodeId,
        kind: ControlKind,
    },
}

impl LogEvent {
    pub fn write_csv<W: Write>(events: &[LogEvent], mut w: W) -> io::Result<()> {
        writeln!(w, "time,event,subject,detail")?;
        for e in events {
            match e {
                LogEvent::DataSent { t, uid } => writeln!(w, "{t},data_sent,{},", uid.0)?,
                LogEvent::DataDelivered { t, uid } => writeln!(w, "{t},data_delivered,{},", uid.0)?,
                LogEvent::DataDropped { t, uid, cause } => {
                    writeln!(w, "{t},data_dropped,{},{}", uid.0, cause.as_str())?
                }
                LogEvent::ControlTx { t, node, kind } => {
                    writeln!(w, "{t},control_tx,{},{}", node.0, kind.as_str())?
                }
                LogEvent::ControlRx { t, node, kind } => {
                    writeln!(w, "{t},control_rx,{},{}", node.0, kind.as_str())?
                }
                LogEvent::ControlRejected { t, node, kind } => {
                    writeln!(w, "{t},control_rejected,{},{}", node.0, kind.as_str())?
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct MetricsLedger {
    pub data_sent: u64,
    pub data_delivered: u64,
    pub delivered_bytes: u64,
    pub dropped: BTreeMap<DropCause, u64>,
    /// Second and later arrivals of an already delivered packet.
    pub duplicates: u64,
    pub control_transmitted: u64,
    pub control_received: u64,
    pub control_rejected: u64,
    pub control_lost: u64,
    pub delay_samples: Vec<f64>,
    in_flight: HashMap<PacketUid, SimTime>,
    log: Option<Vec<LogEvent>>,
}

impl MetricsLedger {
    pub fn new(keep_log: bool) -> Self {
        MetricsLedger {
            log: keep_log.then(Vec::new),
            ..Default::default()
        }
    }

    fn push(&mut self, e: LogEvent) {
        if let Some(log) = &mut self.log {
            log.push(e);
        }
    }

    pub fn log(&self) -> Option<&[LogEvent]> {
        self.log.as_deref()
    }

    pub fn on_sent(&mut self, now: SimTime, packet: &DataPacket) {
        self.data_sent += 1;
        self.in_flight.insert(packet.uid, packet.created_at);
        self.push(LogEvent::DataSent {
            t: now,
            uid: packet.uid,
        });
    }

    pub fn on_delivered(&mut self, now: SimTime, packet: &DataPacket) {
        if self.in_flight.remove(&packet.uid).is_none() {
            self.duplicates += 1;
            return;
        }
        self.data_delivered += 1;
        self.delivered_bytes += u64::from(packet.payload);
        self.delay_samples
            .push(now.saturating_sub(packet.created_at).as_secs_f64());
        self.push(LogEvent::DataDelivered {
            t: now,
            uid: packet.uid,
        });
    }

    pub fn on_dropped(&mut self, now: SimTime, uid: PacketUid, cause: DropCause) {
        if self.in_flight.remove(&uid).is_none() {
            self.duplicates += 1;
            return;
        }
        *self.dropped.entry(cause).or_default() += 1;
        self.push(LogEvent::DataDropped { t: now, uid, cause });
    }

    pub fn on_control_tx(&mut self, now: SimTime, node: NodeId, kind: ControlKind) {
        self.control_transmitted += 1;
        self.push(LogEvent::ControlTx { t: now, node, kind });
    }

    pub fn on_control_rx(&mut self, now: SimTime, node: NodeId, kind: ControlKind) {
        self.control_received += 1;
        self.push(LogEvent::ControlRx { t: now, node, kind });
    }

    pub fn on_control_rejected(&mut self, now: SimTime, node: NodeId, kind: ControlKind) {
        self.control_rejected += 1;
        self.push(LogEvent::ControlRejected { t: now, node, kind });
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight.len() as u64
    }

    /// `delivered + dropped + in flight == sent`.
    pub fn conserved(&self) -> bool {
        self.data_delivered + self.dropped_total() + self.in_flight() == self.data_sent
    }

    pub fn pdr(&self) -> Option<f64> {
        pdr(self.data_delivered, self.data_sent)
    }

    pub fn overhead(&self) -> Option<f64> {
        overhead(self.control_transmitted, self.control_received)
    }

    /// Closes the books: everything still in flight is dropped as
    /// [`DropCause::EndOfRun`].
    pub fn finalize(&mut self, now: SimTime, duration: SimTime) -> MetricsReport {
        let mut left: Vec<PacketUid> = self.in_flight.keys().copied().collect();
        left.sort_unstable();
        for uid in left {
            self.on_dropped(now, uid, DropCause::EndOfRun);
        }
        let secs = duration.as_secs_f64();
        MetricsReport {
            pdr: self.pdr(),
            overhead: self.overhead(),
            overhead_conv: overhead(self.control_transmitted, self.data_delivered),
            avg_delay: mean(&self.delay_samples),
            throughput: if secs > 0.0 {
                self.delivered_bytes as f64 / secs
            } else {
                0.0
            },
            data_sent: self.data_sent,
            data_delivered: self.data_delivered,
            control_transmitted: self.control_transmitted,
            control_received: self.control_received,
            dropped: self.dropped.clone(),
        }
    }
}

/// Absent when nothing was sent.
pub fn pdr(delivered: u64, sent: u64) -> Option<f64> {
    (sent > 0).then(|| delivered as f64 / sent as f64)
}

/// Absent when nothing was received.
pub fn overhead(transmitted: u64, received: u64) -> Option<f64> {
    (received > 0).then(|| transmitted as f64 / received as f64)
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; absent below two samples.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub pdr: Option<f64>,
    pub overhead: Option<f64>,
    pub overhead_conv: Option<f64>,
    pub avg_delay: Option<f64>,
    /// Delivered payload bytes per second of simulated time.
    pub throughput: f64,
    pub data_sent: u64,
    pub data_delivered: u64,
    pub control_transmitted: u64,
    pub control_received: u64,
    pub dropped: BTreeMap<DropCause, u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{rng_stream, StreamId};

    fn flow(rate: f64, start: u64, stop: u64) -> CbrFlow {
        CbrFlow {
            id: 0,
            src: NodeId(0),
            dst: NodeId(1),
            rate,
            payload: 512,
            start: SimTime::from_secs(start),
            stop: SimTime::from_secs(stop),
        }
    }

    fn packet(uid: u64, created_ms: u64) -> DataPacket {
        DataPacket {
            uid: PacketUid(uid),
            flow: 0,
            src: NodeId(0),
            dst: NodeId(1),
            created_at: SimTime::from_millis(created_ms),
            payload: 512,
            ttl: 32,
            header: None,
        }
    }

    #[test]
    fn cbr_counts() {
        assert_eq!(flow(4.0, 0, 10).emission_times().count(), 40);
        assert_eq!(flow(4.0, 3, 3).emission_times().count(), 0);
        let two: usize = [flow(4.0, 0, 5), flow(4.0, 1, 6)]
            .iter()
            .map(|f| f.emission_times().count())
            .sum();
        assert_eq!(two, 40);
    }

    #[test]
    fn flow_validation() {
        let mut f = flow(4.0, 0, 1);
        assert!(f.validate(2).is_ok());
        f.dst = NodeId(0);
        assert_eq!(f.validate(2), Err(TrafficError::SelfFlow(0)));
        let mut g = flow(0.0, 0, 1);
        assert_eq!(g.validate(2), Err(TrafficError::Rate(0)));
        g.rate = 1.0;
        g.dst = NodeId(5);
        assert!(matches!(
            g.validate(2),
            Err(TrafficError::UnknownNode { .. })
        ));
    }

    #[test]
    fn generated_flows_are_valid_and_reproducible() {
        let spec = TrafficSpec::default();
        let stop = SimTime::from_secs(300);
        let a = generate(&spec, 40, stop, &mut rng_stream(3, StreamId::Traffic));
        let b = generate(&spec, 40, stop, &mut rng_stream(3, StreamId::Traffic));
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a
            .iter()
            .all(|f| f.validate(40).is_ok() && f.start < SimTime::from_secs(5)));
        assert_eq!(
            generate(&spec, 5, stop, &mut rng_stream(3, StreamId::Traffic)).len(),
            1
        );
    }

    #[test]
    fn ratios() {
        assert_eq!(pdr(9, 10), Some(0.9));
        assert_eq!(pdr(10, 10), Some(1.0));
        assert_eq!(pdr(0, 0), None);
        assert_eq!(overhead(10, 10), Some(1.0));
        assert_eq!(overhead(1, 4), Some(0.25));
        assert_eq!(overhead(3, 0), None);
    }

    #[test]
    fn ledger_conservation_and_finalize() {
        let mut m = MetricsLedger::new(true);
        for uid in 0..3 {
            m.on_sent(SimTime::ZERO, &packet(uid, 0));
        }
        m.on_delivered(SimTime::from_millis(200), &packet(0, 0));
        m.on_delivered(SimTime::from_millis(300), &packet(0, 0));
        m.on_dropped(SimTime::from_millis(10), PacketUid(1), DropCause::NoRoute);
        assert!(m.conserved());
        assert_eq!(m.duplicates, 1);
        assert_eq!(m.in_flight(), 1);
        let r = m.finalize(SimTime::from_secs(2), SimTime::from_secs(2));
        assert!(m.conserved());
        assert_eq!(r.dropped[&DropCause::EndOfRun], 1);
        assert_eq!(r.avg_delay, Some(0.2));
        assert_eq!(r.throughput, 256.0);
        assert!((r.pdr.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.log().unwrap().len(), 6);
    }

    #[test]
    fn nothing_delivered() {
        let mut m = MetricsLedger::new(false);
        m.on_sent(SimTime::ZERO, &packet(0, 0));
        let r = m.finalize(SimTime::from_secs(1), SimTime::from_secs(1));
        assert_eq!(r.avg_delay, None);
        assert_eq!(r.throughput, 0.0);
        assert_eq!(r.pdr, Some(0.0));
        assert_eq!(r.overhead, None);
    }

    #[test]
    fn broadcast_counting_convention() {
        let mut m = MetricsLedger::new(false);
        m.on_control_tx(SimTime::ZERO, NodeId(0), ControlKind::Rreq);
        for i in 1..=4 {
            m.on_control_rx(SimTime::ZERO, NodeId(i), ControlKind::Rreq);
        }
        assert_eq!((m.control_transmitted, m.control_received), (1, 4));
    }

    #[test]
    fn sd_matches_hand_value() {
        assert_eq!(sample_sd(&[1.0]), None);
        let sd = sample_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
