//! Trust ledger and the mitigation strategies.
//!
//! Every watchdog observation of a relay nudges that relay's trust value:
//! up by `reward` when it passed a packet on, down by `penalty` when it
//! dropped one. After each update the active [`Strategy`] decides what
//! happens to the relay:
//!
//! * [`Strategy::None`] keeps using every node.
//! * [`Strategy::Eliminate`] permanently excludes a node as soon as its trust
//!   falls below the tolerance.
//! * [`Strategy::SecondChance`] looks at why the node misbehaved. A node
//!   whose drops are attributed to a fault is reintegrated with its trust
//!   reset, up to `max_second_chances` times. A deliberate dropper is
//!   excluded once it offends repeatedly, and anyone out of chances is
//!   excluded.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use crate::adversary::CauseKind;
use crate::engine::SimTime;
use crate::packet::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    None,
    Eliminate,
    SecondChance,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Eliminate => "eliminate",
            Strategy::SecondChance => "second-chance",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Strategy::None),
            "eliminate" => Ok(Strategy::Eliminate),
            "second-chance" | "second_chance" => Ok(Strategy::SecondChance),
            other => Err(format!(
                "unknown strategy `{other}` (none | eliminate | second-chance)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub tolerance: f64,
    pub reward: f64,
    pub penalty: f64,
    pub initial_trust: f64,
    pub reintegration_trust: f64,
    pub max_second_chances: u32,
    /// Hide the cause of each drop from the decision; every low-trust node
    /// is then `Unknown` and pardonable.
    pub blind_attribution: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            strategy: Strategy::None,
            tolerance: 0.4,
            reward: 0.05,
            penalty: 0.15,
            initial_trust: 0.5,
            reintegration_trust: 0.4,
            max_second_chances: 1,
            blind_attribution: false,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(format!(
                "tolerance must be in (0, 1), got {}",
                self.tolerance
            ));
        }
        if !(self.reward > 0.0 && self.reward.is_finite()) {
            return Err(format!("reward must be positive, got {}", self.reward));
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(format!("penalty must be positive, got {}", self.penalty));
        }
        for (name, v) in [
            ("initial_trust", self.initial_trust),
            ("reintegration_trust", self.reintegration_trust),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Forwarded,
    Dropped(CauseKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attribution {
    Faulty,
    Deliberate,
    Unknown,
}

impl Attribution {
    pub fn classify(cause: CauseKind, blind: bool) -> Self {
        if blind {
            Attribution::Unknown
        } else if cause.is_fault() {
            Attribution::Faulty
        } else {
            Attribution::Deliberate
        }
    }

    fn pardonable(self) -> bool {
        !matches!(self, Attribution::Deliberate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Active,
    Eliminated,
    Reintegrated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrustRecord {
    pub subject: NodeId,
    pub trust: f64,
    pub forwards_seen: u64,
    pub drops_seen: u64,
    pub attributed: Option<Attribution>,
    pub status: Status,
    pub chances_used: u32,
    /// Observations of packets handed over before this instant belong to the
    /// episode that was pardoned and are discarded.
    pub reintegrated_at: Option<SimTime>,
    pub last_update: SimTime,
}

impl TrustRecord {
    pub fn new(subject: NodeId, initial_trust: f64) -> Self {
        TrustRecord {
            subject,
            trust: initial_trust.clamp(0.0, 1.0),
            forwards_seen: 0,
            drops_seen: 0,
            attributed: None,
            status: Status::Active,
            chances_used: 0,
            reintegrated_at: None,
            last_update: SimTime::ZERO,
        }
    }
}

/// Applies one watchdog observation. Returns `false` when the observation
/// predates the subject's last reintegration and was ignored.
pub fn observe(
    record: &mut TrustRecord,
    outcome: Outcome,
    handed_over_at: SimTime,
    now: SimTime,
    cfg: &StrategyConfig,
) -> bool {
    if record.reintegrated_at.is_some_and(|t| handed_over_at < t) {
        return false;
    }
    match outcome {
        Outcome::Forwarded => {
            record.forwards_seen += 1;
            record.trust = (record.trust + cfg.reward).clamp(0.0, 1.0);
        }
        Outcome::Dropped(cause) => {
            record.drops_seen += 1;
            record.trust = (record.trust - cfg.penalty).clamp(0.0, 1.0);
            record.attributed = Some(Attribution::classify(cause, cfg.blind_attribution));
        }
    }
    record.last_update = now;
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    UseAsNextHop,
    GiveSecondChance,
    Eliminate,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::UseAsNextHop => "use",
            Verdict::GiveSecondChance => "second_chance",
            Verdict::Eliminate => "eliminate",
        }
    }
}

/// The verdict for a record under a strategy. Pure; see [`apply`].
pub fn decide(record: &TrustRecord, cfg: &StrategyConfig) -> Verdict {
    match cfg.strategy {
        Strategy::None => Verdict::UseAsNextHop,
        _ if record.status == Status::Eliminated => Verdict::Eliminate,
        _ if record.trust >= cfg.tolerance => Verdict::UseAsNextHop,
        Strategy::Eliminate => Verdict::Eliminate,
        Strategy::SecondChance => {
            let attributed = record.attributed.unwrap_or(Attribution::Unknown);
            let chances_left = record.chances_used < cfg.max_second_chances;
            let repeated = record.drops_seen >= 2;
            if attributed.pardonable() && chances_left {
                Verdict::GiveSecondChance
            } else if !chances_left || (attributed == Attribution::Deliberate && repeated) {
                Verdict::Eliminate
            } else {
                Verdict::UseAsNextHop
            }
        }
    }
}

pub fn apply(record: &mut TrustRecord, verdict: Verdict, cfg: &StrategyConfig, now: SimTime) {
    match verdict {
        Verdict::UseAsNextHop => {}
        Verdict::Eliminate => record.status = Status::Eliminated,
        Verdict::GiveSecondChance => {
            record.status = Status::Reintegrated;
            record.trust = cfg.reintegration_trust;
            record.chances_used += 1;
            record.reintegrated_at = Some(now);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionRecord {
    pub time: SimTime,
    pub watcher: NodeId,
    pub subject: NodeId,
    pub trust: f64,
    pub verdict: Verdict,
}

/// Trust records for every observed node, either one shared record per
/// subject or one per (watcher, subject) pair.
#[derive(Clone, Debug)]
pub struct TrustLedger {
    cfg: StrategyConfig,
    per_watcher: bool,
    records: BTreeMap<(u32, NodeId), TrustRecord>,
    decisions: Vec<DecisionRecord>,
}

const SHARED: u32 = u32::MAX;

impl TrustLedger {
    pub fn new(cfg: StrategyConfig, per_watcher: bool) -> Self {
        TrustLedger {
            cfg,
            per_watcher,
            records: BTreeMap::new(),
            decisions: Vec::new(),
        }
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.cfg
    }

    fn key(&self, watcher: NodeId, subject: NodeId) -> (u32, NodeId) {
        if self.per_watcher {
            (watcher.0, subject)
        } else {
            (SHARED, subject)
        }
    }

    pub fn record(&self, watcher: NodeId, subject: NodeId) -> Option<&TrustRecord> {
        self.records.get(&self.key(watcher, subject))
    }

    pub fn records(&self) -> impl Iterator<Item = &TrustRecord> {
        self.records.values()
    }

    pub fn trust(&self, watcher: NodeId, subject: NodeId) -> f64 {
        self.record(watcher, subject)
            .map_or(self.cfg.initial_trust, |r| r.trust)
    }

    pub fn is_eliminated(&self, watcher: NodeId, subject: NodeId) -> bool {
        self.record(watcher, subject)
            .is_some_and(|r| r.status == Status::Eliminated)
    }

    /// Observation, decision and its side effects in one step. Returns the
    /// verdict, or `None` if the observation was stale.
    pub fn report(
        &mut self,
        now: SimTime,
        watcher: NodeId,
        subject: NodeId,
        outcome: Outcome,
        handed_over_at: SimTime,
    ) -> Option<Verdict> {
        let key = self.key(watcher, subject);
        let initial = self.cfg.initial_trust;
        let record = self
            .records
            .entry(key)
            .or_insert_with(|| TrustRecord::new(subject, initial));
        if !observe(record, outcome, handed_over_at, now, &self.cfg) {
            return None;
        }
        let verdict = decide(record, &self.cfg);
        let trust = record.trust;
        apply(record, verdict, &self.cfg, now);
        self.decisions.push(DecisionRecord {
            time: now,
            watcher,
            subject,
            trust,
            verdict,
        });
        Some(verdict)
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    /// Admissible next hops from `candidates`: eliminated nodes removed, the
    /// rest by trust descending, ties by id.
    pub fn route_filter(&self, watcher: NodeId, candidates: &[NodeId]) -> Vec<NodeId> {
        let mut out: Vec<(f64, NodeId)> = candidates
            .iter()
            .filter(|&&c| !self.is_eliminated(watcher, c))
            .map(|&c| (self.trust(watcher, c), c))
            .collect();
        out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.dedup_by_key(|e| e.1);
        out.into_iter().map(|(_, c)| c).collect()
    }

    pub fn write_decision_log<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,watcher,subject,trust,verdict")?;
        for d in &self.decisions {
            writeln!(
                w,
                "{},{},{},{},{}",
                d.time,
                d.watcher.0,
                d.subject.0,
                d.trust,
                d.verdict.as_str()
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_ne, proptest};
    use proptest::strategy::Strategy as Gen;

    fn cfg(strategy: Strategy) -> StrategyConfig {
        StrategyConfig {
            strategy,
            ..Default::default()
        }
    }

    fn rec(trust: f64) -> TrustRecord {
        TrustRecord::new(NodeId(1), trust)
    }

    #[test]
    fn forward_adds_reward() {
        let mut r = rec(0.5);
        observe(
            &mut r,
            Outcome::Forwarded,
            SimTime::ZERO,
            SimTime::ZERO,
            &cfg(Strategy::None),
        );
        assert!((r.trust - 0.55).abs() < 1e-12);
        assert_eq!(r.forwards_seen, 1);
    }

    #[test]
    fn trust_is_clamped() {
        let c = cfg(Strategy::None);
        let mut low = rec(0.05);
        observe(
            &mut low,
            Outcome::Dropped(CauseKind::BlackHole),
            SimTime::ZERO,
            SimTime::ZERO,
            &c,
        );
        assert_eq!(low.trust, 0.0);
        let mut high = rec(1.0);
        observe(
            &mut high,
            Outcome::Forwarded,
            SimTime::ZERO,
            SimTime::ZERO,
            &c,
        );
        assert_eq!(high.trust, 1.0);
    }

    #[test]
    fn above_tolerance_is_always_used() {
        for s in [Strategy::None, Strategy::Eliminate, Strategy::SecondChance] {
            assert_eq!(decide(&rec(0.6), &cfg(s)), Verdict::UseAsNextHop);
        }
    }

    #[test]
    fn eliminate_below_tolerance() {
        assert_eq!(
            decide(&rec(0.2), &cfg(Strategy::Eliminate)),
            Verdict::Eliminate
        );
        assert_eq!(
            decide(&rec(0.2), &cfg(Strategy::None)),
            Verdict::UseAsNextHop
        );
    }

    #[test]
    fn faulty_node_gets_one_second_chance() {
        let c = cfg(Strategy::SecondChance);
        let mut r = rec(0.2);
        r.attributed = Some(Attribution::Faulty);
        r.drops_seen = 3;
        let v = decide(&r, &c);
        assert_eq!(v, Verdict::GiveSecondChance);
        apply(&mut r, v, &c, SimTime::from_secs(4));
        assert_eq!(r.trust, 0.4);
        assert_eq!(r.status, Status::Reintegrated);
        assert_eq!(r.chances_used, 1);

        r.trust = 0.25;
        assert_eq!(decide(&r, &c), Verdict::Eliminate);
    }

    #[test]
    fn deliberate_dropper_eliminated_on_repeat() {
        let c = cfg(Strategy::SecondChance);
        let mut r = rec(0.35);
        r.attributed = Some(Attribution::Deliberate);
        r.drops_seen = 1;
        assert_eq!(decide(&r, &c), Verdict::UseAsNextHop);
        r.drops_seen = 2;
        assert_eq!(decide(&r, &c), Verdict::Eliminate);
    }

    #[test]
    fn blind_attribution_pardons_once() {
        let c = StrategyConfig {
            blind_attribution: true,
            ..cfg(Strategy::SecondChance)
        };
        let mut r = rec(0.5);
        observe(
            &mut r,
            Outcome::Dropped(CauseKind::BlackHole),
            SimTime::ZERO,
            SimTime::ZERO,
            &c,
        );
        assert_eq!(r.attributed, Some(Attribution::Unknown));
        assert_eq!(decide(&r, &c), Verdict::GiveSecondChance);
    }

    #[test]
    fn stale_observations_after_pardon_are_ignored() {
        let c = cfg(Strategy::SecondChance);
        let mut r = rec(0.5);
        apply(
            &mut r,
            Verdict::GiveSecondChance,
            &c,
            SimTime::from_secs(10),
        );
        let applied = observe(
            &mut r,
            Outcome::Dropped(CauseKind::NodeFailure),
            SimTime::from_secs(9),
            SimTime::from_secs(10),
            &c,
        );
        assert!(!applied);
        assert_eq!(r.trust, 0.4);
        assert!(observe(
            &mut r,
            Outcome::Forwarded,
            SimTime::from_secs(10),
            SimTime::from_secs(11),
            &c
        ));
    }

    #[test]
    fn route_filter_orders_and_excludes() {
        let mut l = TrustLedger::new(cfg(Strategy::Eliminate), false);
        let (w, a, b, m) = (NodeId(0), NodeId(1), NodeId(2), NodeId(3));
        l.report(SimTime::ZERO, w, b, Outcome::Forwarded, SimTime::ZERO);
        assert_eq!(l.route_filter(w, &[a, b]), vec![b, a]);
        assert_eq!(
            l.report(
                SimTime::ZERO,
                w,
                m,
                Outcome::Dropped(CauseKind::BlackHole),
                SimTime::ZERO
            ),
            Some(Verdict::Eliminate)
        );
        assert_eq!(l.route_filter(w, &[m, a]), vec![a]);
        assert!(l.route_filter(w, &[m]).is_empty());
    }

    #[test]
    fn none_strategy_filter_keeps_membership() {
        let mut l = TrustLedger::new(cfg(Strategy::None), false);
        for _ in 0..10 {
            l.report(
                SimTime::ZERO,
                NodeId(0),
                NodeId(5),
                Outcome::Dropped(CauseKind::BlackHole),
                SimTime::ZERO,
            );
        }
        assert_eq!(
            l.route_filter(NodeId(0), &[NodeId(5), NodeId(4)]),
            vec![NodeId(4), NodeId(5)]
        );
    }

    #[test]
    fn per_watcher_ledgers_are_separate() {
        let mut l = TrustLedger::new(cfg(Strategy::Eliminate), true);
        l.report(
            SimTime::ZERO,
            NodeId(0),
            NodeId(5),
            Outcome::Dropped(CauseKind::BlackHole),
            SimTime::ZERO,
        );
        assert!(l.is_eliminated(NodeId(0), NodeId(5)));
        assert!(!l.is_eliminated(NodeId(1), NodeId(5)));
    }

    #[test]
    fn decision_log_csv() {
        let mut l = TrustLedger::new(cfg(Strategy::Eliminate), false);
        l.report(
            SimTime::from_millis(1500),
            NodeId(0),
            NodeId(5),
            Outcome::Dropped(CauseKind::BlackHole),
            SimTime::ZERO,
        );
        let mut buf = Vec::new();
        l.write_decision_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "time,watcher,subject,trust,verdict\n1.500000,0,5,0.35,eliminate\n"
        );
    }

    fn arb_cause() -> impl Gen<Value = CauseKind> {
        prop::sample::select(CauseKind::ALL.to_vec())
    }

    fn arb_strategy() -> impl Gen<Value = Strategy> {
        prop::sample::select(vec![
            Strategy::None,
            Strategy::Eliminate,
            Strategy::SecondChance,
        ])
    }

    proptest! {
        #[test]
        fn eliminated_only_below_tolerance_and_chances_bounded(
            strategy in arb_strategy(),
            seq in prop::collection::vec(prop::option::of(arb_cause()), 1..60),
        ) {
            let c = cfg(strategy);
            let mut l = TrustLedger::new(c.clone(), false);
            for (i, o) in seq.iter().enumerate() {
                let t = SimTime::from_millis(i as u64);
                let outcome = o.map_or(Outcome::Forwarded, Outcome::Dropped);
                l.report(t, NodeId(0), NodeId(1), outcome, t);
                let r = l.record(NodeId(0), NodeId(1)).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.trust));
                prop_assert!(r.chances_used <= c.max_second_chances);
            }
            // The first elimination must happen below tolerance; later
            // verdicts only repeat the status.
            if let Some(d) = l.decisions().iter().find(|d| d.verdict == Verdict::Eliminate) {
                prop_assert!(d.trust < c.tolerance);
            }
        }

        #[test]
        fn raising_tolerance_never_rescues_an_eliminated_verdict(
            trust in 0.0f64..=1.0,
            lo in 0.01f64..0.99,
            bump in 0.0f64..0.5,
            drops in 0u64..4,
            chances in 0u32..2,
            cause in prop::option::of(arb_cause()),
            strategy in arb_strategy(),
        ) {
            let hi = (lo + bump).min(0.99);
            let mut r = rec(trust);
            r.drops_seen = drops;
            r.chances_used = chances;
            r.attributed = cause.map(|k| Attribution::classify(k, false));
            let at_lo = decide(&r, &StrategyConfig { tolerance: lo, ..cfg(strategy) });
            let at_hi = decide(&r, &StrategyConfig { tolerance: hi, ..cfg(strategy) });
            if at_lo == Verdict::Eliminate {
                prop_assert_ne!(at_hi, Verdict::UseAsNextHop);
            }
        }
    }
}
