//! Scenario files: TOML with one table per module, every key optional.
//!
//! ```toml
//! [scenario]
//! protocol = "dsr"
//! strategy = "second-chance"
//! nodes = 30
//!
//! [adversary]
//! fraction = 0.3
//!
//! [adversary.weights]
//! black_hole = 0.0
//! ```
//!
//! Times are in seconds. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer};
use thiserror::Error;

use crate::adversary::{AdversarySpec, CauseWeights, EnergyParams};
use crate::aodv::AodvConfig;
use crate::dsr::DsrConfig;
use crate::engine::SimTime;
use crate::metrics::TrafficSpec;
use crate::mobility::{Terrain, WaypointParams};
use crate::routing::DiscoveryParams;
use crate::sim::{Protocol, SimConfig};
use crate::trust::{Strategy, StrategyConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Field {
        field: &'static str,
        message: String,
    },
}

fn by_name<'de, D, T>(d: D) -> Result<T, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: fmt::Display,
{
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub mobility: MobilitySection,
    pub traffic: TrafficSection,
    pub adversary: AdversarySection,
    pub trust: TrustSection,
    pub routing: RoutingSection,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(deserialize_with = "by_name")]
    pub protocol: Protocol,
    #[serde(deserialize_with = "by_name")]
    pub strategy: Strategy,
    pub nodes: usize,
    pub duration: f64,
    pub seed: u64,
}

/// Terrain, movement and the radio model.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilitySection {
    pub width: f64,
    pub height: f64,
    pub range: f64,
    pub speed_max: f64,
    pub pause: f64,
    pub tick: f64,
    pub link_latency: f64,
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    /// Defaults to `max(1, nodes / 10)`.
    pub flows: Option<usize>,
    pub rate: f64,
    pub payload: u32,
    pub start_window: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySection {
    pub fraction: f64,
    pub drop_probability: f64,
    pub seq_inflation: u32,
    /// Zero makes node and link failures permanent.
    pub outage: f64,
    /// Zero makes each failure a single outage.
    pub uptime: f64,
    pub energy_initial: f64,
    pub energy_tx_cost: f64,
    pub energy_rx_cost: f64,
    pub weights: WeightsSection,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub deliberate_drop: f64,
    pub black_hole: f64,
    pub node_failure: f64,
    pub link_failure: f64,
    pub energy_depletion: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustSection {
    pub tolerance: f64,
    pub reward: f64,
    pub penalty: f64,
    pub initial: f64,
    pub reintegration: f64,
    pub max_second_chances: u32,
    pub blind_attribution: bool,
    pub per_watcher: bool,
    pub watchdog_timeout: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingSection {
    pub retries: u32,
    pub discovery_timeout: f64,
    pub buffer_capacity: usize,
    pub ttl: u8,
    pub route_lifetime: f64,
    pub intermediate_reply: bool,
    pub cache_size: usize,
    pub salvage: bool,
    pub cache_replies: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::from_sim(&SimConfig::default())
    }
}

macro_rules! section_default {
    ($($t:ident => $($field:ident).+;)*) => {$(
        impl Default for $t {
            fn default() -> Self {
                ScenarioConfig::default().$($field).+
            }
        }
    )*};
}

section_default! {
    ScenarioSection => scenario;
    MobilitySection => mobility;
    TrafficSection => traffic;
    AdversarySection => adversary;
    WeightsSection => adversary.weights;
    TrustSection => trust;
    RoutingSection => routing;
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

fn positive(name: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be positive, got {v}")))
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be non-negative, got {v}")))
    }
}

fn unit(name: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(field(name, format!("must be in [0, 1], got {v}")))
    }
}

fn secs(s: f64) -> SimTime {
    SimTime::from_secs_f64(s)
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Checks every field, naming the first offender.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        if s.nodes < 2 {
            return Err(field(
                "scenario.nodes",
                format!("at least 2 are required, got {}", s.nodes),
            ));
        }
        positive("scenario.duration", s.duration)?;

        let m = &self.mobility;
        positive("mobility.width", m.width)?;
        positive("mobility.height", m.height)?;
        positive("mobility.range", m.range)?;
        non_negative("mobility.speed_max", m.speed_max)?;
        non_negative("mobility.pause", m.pause)?;
        positive("mobility.tick", m.tick)?;
        non_negative("mobility.link_latency", m.link_latency)?;
        non_negative("mobility.jitter", m.jitter)?;

        let t = &self.traffic;
        if t.flows == Some(0) {
            return Err(field("traffic.flows", "must be at least 1"));
        }
        positive("traffic.rate", t.rate)?;
        if t.payload == 0 {
            return Err(field("traffic.payload", "must be positive"));
        }
        non_negative("traffic.start_window", t.start_window)?;

        let a = &self.adversary;
        if !(0.0..1.0).contains(&a.fraction) {
            return Err(field(
                "adversary.fraction",
                format!("must be in [0, 1), got {}", a.fraction),
            ));
        }
        unit("adversary.drop_probability", a.drop_probability)?;
        non_negative("adversary.outage", a.outage)?;
        non_negative("adversary.uptime", a.uptime)?;
        non_negative("adversary.energy_initial", a.energy_initial)?;
        non_negative("adversary.energy_tx_cost", a.energy_tx_cost)?;
        non_negative("adversary.energy_rx_cost", a.energy_rx_cost)?;
        let w = &a.weights;
        let ws = [
            ("adversary.weights.deliberate_drop", w.deliberate_drop),
            ("adversary.weights.black_hole", w.black_hole),
            ("adversary.weights.node_failure", w.node_failure),
            ("adversary.weights.link_failure", w.link_failure),
            ("adversary.weights.energy_depletion", w.energy_depletion),
        ];
        for (name, v) in ws {
            non_negative(name, v)?;
        }
        if ws.iter().map(|(_, v)| v).sum::<f64>() <= 0.0 {
            return Err(field(
                "adversary.weights",
                "at least one weight must be positive",
            ));
        }

        let tr = &self.trust;
        if !(tr.tolerance > 0.0 && tr.tolerance < 1.0) {
            return Err(field(
                "trust.tolerance",
                format!("must be in (0, 1), got {}", tr.tolerance),
            ));
        }
        positive("trust.reward", tr.reward)?;
        positive("trust.penalty", tr.penalty)?;
        unit("trust.initial", tr.initial)?;
        unit("trust.reintegration", tr.reintegration)?;
        positive("trust.watchdog_timeout", tr.watchdog_timeout)?;

        let r = &self.routing;
        positive("routing.discovery_timeout", r.discovery_timeout)?;
        positive("routing.route_lifetime", r.route_lifetime)?;
        if r.buffer_capacity == 0 {
            return Err(field("routing.buffer_capacity", "must be at least 1"));
        }
        if r.ttl == 0 {
            return Err(field("routing.ttl", "must be at least 1"));
        }
        if r.cache_size == 0 {
            return Err(field("routing.cache_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn from_sim(c: &SimConfig) -> Self {
        let a = &c.adversary;
        let w = &a.weights;
        ScenarioConfig {
            scenario: ScenarioSection {
                protocol: c.protocol,
                strategy: c.trust.strategy,
                nodes: c.nodes,
                duration: c.duration.as_secs_f64(),
                seed: c.seed,
            },
            mobility: MobilitySection {
                width: c.terrain.width,
                height: c.terrain.height,
                range: c.range,
                speed_max: c.waypoint.speed_max,
                pause: c.waypoint.pause.as_secs_f64(),
                tick: c.mobility_tick.as_secs_f64(),
                link_latency: c.link_latency.as_secs_f64(),
                jitter: c.jitter.as_secs_f64(),
            },
            traffic: TrafficSection {
                flows: c.traffic.flows,
                rate: c.traffic.rate,
                payload: c.traffic.payload,
                start_window: c.traffic.start_window.as_secs_f64(),
            },
            adversary: AdversarySection {
                fraction: a.fraction,
                drop_probability: a.drop_probability,
                seq_inflation: a.seq_inflation,
                outage: a.outage.as_secs_f64(),
                uptime: a.uptime.map_or(0.0, SimTime::as_secs_f64),
                energy_initial: a.energy.initial,
                energy_tx_cost: a.energy.tx_cost,
                energy_rx_cost: a.energy.rx_cost,
                weights: WeightsSection {
                    deliberate_drop: w.deliberate_drop,
                    black_hole: w.black_hole,
                    node_failure: w.node_failure,
                    link_failure: w.link_failure,
                    energy_depletion: w.energy_depletion,
                },
            },
            trust: TrustSection {
                tolerance: c.trust.tolerance,
                reward: c.trust.reward,
                penalty: c.trust.penalty,
                initial: c.trust.initial_trust,
                reintegration: c.trust.reintegration_trust,
                max_second_chances: c.trust.max_second_chances,
                blind_attribution: c.trust.blind_attribution,
                per_watcher: c.per_watcher_trust,
                watchdog_timeout: c.watchdog_timeout.as_secs_f64(),
            },
            routing: RoutingSection {
                retries: c.aodv.discovery.retries,
                discovery_timeout: c.aodv.discovery.timeout.as_secs_f64(),
                buffer_capacity: c.aodv.discovery.buffer_capacity,
                ttl: c.aodv.ttl,
                route_lifetime: c.aodv.route_lifetime.as_secs_f64(),
                intermediate_reply: c.aodv.intermediate_reply,
                cache_size: c.dsr.cache_size,
                salvage: c.dsr.salvage,
                cache_replies: c.dsr.cache_replies,
            },
        }
    }

    pub fn to_sim_config(&self) -> Result<SimConfig, ConfigError> {
        self.validate()?;
        let (s, m, t, a, tr, r) = (
            &self.scenario,
            &self.mobility,
            &self.traffic,
            &self.adversary,
            &self.trust,
            &self.routing,
        );
        let discovery = DiscoveryParams {
            retries: r.retries,
            timeout: secs(r.discovery_timeout),
            buffer_capacity: r.buffer_capacity,
        };
        Ok(SimConfig {
            protocol: s.protocol,
            nodes: s.nodes,
            terrain: Terrain::new(m.width, m.height)
                .map_err(|e| field("mobility", e.to_string()))?,
            range: m.range,
            waypoint: WaypointParams {
                speed_max: m.speed_max,
                pause: secs(m.pause),
            },
            mobility_tick: secs(m.tick),
            traffic: TrafficSpec {
                flows: t.flows,
                rate: t.rate,
                payload: t.payload,
                start_window: secs(t.start_window),
            },
            adversary: AdversarySpec {
                fraction: a.fraction,
                weights: CauseWeights {
                    deliberate_drop: a.weights.deliberate_drop,
                    black_hole: a.weights.black_hole,
                    node_failure: a.weights.node_failure,
                    link_failure: a.weights.link_failure,
                    energy_depletion: a.weights.energy_depletion,
                },
                drop_probability: a.drop_probability,
                seq_inflation: a.seq_inflation,
                outage: secs(a.outage),
                uptime: (a.uptime > 0.0).then(|| secs(a.uptime)),
                energy: EnergyParams {
                    initial: a.energy_initial,
                    tx_cost: a.energy_tx_cost,
                    rx_cost: a.energy_rx_cost,
                },
            },
            trust: StrategyConfig {
                strategy: s.strategy,
                tolerance: tr.tolerance,
                reward: tr.reward,
                penalty: tr.penalty,
                initial_trust: tr.initial,
                reintegration_trust: tr.reintegration,
                max_second_chances: tr.max_second_chances,
                blind_attribution: tr.blind_attribution,
            },
            per_watcher_trust: tr.per_watcher,
            watchdog_timeout: secs(tr.watchdog_timeout),
            aodv: AodvConfig {
                discovery,
                route_lifetime: secs(r.route_lifetime),
                ttl: r.ttl,
                intermediate_reply: r.intermediate_reply,
            },
            dsr: DsrConfig {
                discovery,
                cache_size: r.cache_size,
                salvage: r.salvage,
                cache_replies: r.cache_replies,
                ttl: r.ttl,
            },
            link_latency: secs(m.link_latency),
            jitter: secs(m.jitter),
            duration: secs(s.duration),
            seed: s.seed,
            ..SimConfig::default()
        })
    }

    /// Every run parameter as `(column, value)`, in CSV column order.
    /// Unset optional values are empty strings.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let (s, m, t, a, tr, r) = (
            &self.scenario,
            &self.mobility,
            &self.traffic,
            &self.adversary,
            &self.trust,
            &self.routing,
        );
        let w = &a.weights;
        let f = |v: f64| v.to_string();
        vec![
            ("protocol", s.protocol.to_string()),
            ("strategy", s.strategy.to_string()),
            ("nodes", s.nodes.to_string()),
            ("seed", s.seed.to_string()),
            ("duration", f(s.duration)),
            ("width", f(m.width)),
            ("height", f(m.height)),
            ("range", f(m.range)),
            ("speed_max", f(m.speed_max)),
            ("pause", f(m.pause)),
            ("mobility_tick", f(m.tick)),
            ("link_latency", f(m.link_latency)),
            ("jitter", f(m.jitter)),
            ("flows", t.flows.map(|n| n.to_string()).unwrap_or_default()),
            ("rate", f(t.rate)),
            ("payload", t.payload.to_string()),
            ("start_window", f(t.start_window)),
            ("adversary_fraction", f(a.fraction)),
            ("w_deliberate_drop", f(w.deliberate_drop)),
            ("w_black_hole", f(w.black_hole)),
            ("w_node_failure", f(w.node_failure)),
            ("w_link_failure", f(w.link_failure)),
            ("w_energy_depletion", f(w.energy_depletion)),
            ("drop_probability", f(a.drop_probability)),
            ("seq_inflation", a.seq_inflation.to_string()),
            ("outage", f(a.outage)),
            ("uptime", f(a.uptime)),
            ("energy_initial", f(a.energy_initial)),
            ("energy_tx_cost", f(a.energy_tx_cost)),
            ("energy_rx_cost", f(a.energy_rx_cost)),
            ("tolerance", f(tr.tolerance)),
            ("reward", f(tr.reward)),
            ("penalty", f(tr.penalty)),
            ("initial_trust", f(tr.initial)),
            ("reintegration_trust", f(tr.reintegration)),
            ("max_second_chances", tr.max_second_chances.to_string()),
            ("blind_attribution", tr.blind_attribution.to_string()),
            ("per_watcher", tr.per_watcher.to_string()),
            ("watchdog_timeout", f(tr.watchdog_timeout)),
            ("retries", r.retries.to_string()),
            ("discovery_timeout", f(r.discovery_timeout)),
            ("buffer_capacity", r.buffer_capacity.to_string()),
            ("ttl", r.ttl.to_string()),
            ("route_lifetime", f(r.route_lifetime)),
            ("intermediate_reply", r.intermediate_reply.to_string()),
            ("cache_size", r.cache_size.to_string()),
            ("salvage", r.salvage.to_string()),
            ("cache_replies", r.cache_replies.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.to_sim_config().unwrap(), SimConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let c = ScenarioConfig::from_toml_str(
            r#"
            [scenario]
            protocol = "dsr"
            strategy = "second-chance"
            nodes = 30

            [adversary.weights]
            black_hole = 0.0

            [traffic]
            flows = 5
            "#,
        )
        .unwrap();
        let s = c.to_sim_config().unwrap();
        assert_eq!(s.protocol, Protocol::Dsr);
        assert_eq!(s.trust.strategy, Strategy::SecondChance);
        assert_eq!(s.nodes, 30);
        assert_eq!(s.adversary.weights.black_hole, 0.0);
        assert_eq!(s.adversary.weights.node_failure, 1.0);
        assert_eq!(s.traffic.flows, Some(5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ScenarioConfig::from_toml_str(
            "[scenario]
nodez = 3
",
        )
        .unwrap_err();
        assert!(e.to_string().contains("nodez"), "{e}");
        assert!(ScenarioConfig::from_toml_str(
            "[radio]
range = 3
"
        )
        .is_err());
    }

    #[test]
    fn bad_enum_names_are_rejected() {
        let e = ScenarioConfig::from_toml_str(
            "[scenario]
protocol = \"olsr\"
",
        )
        .unwrap_err();
        assert!(e.to_string().contains("olsr"), "{e}");
    }

    #[test]
    fn errors_name_the_field() {
        for (text, name) in [
            (
                "[scenario]
nodes = 1",
                "scenario.nodes",
            ),
            (
                "[mobility]
range = -5.0",
                "mobility.range",
            ),
            (
                "[adversary]
fraction = 1.0",
                "adversary.fraction",
            ),
            (
                "[trust]
tolerance = 0.0",
                "trust.tolerance",
            ),
            (
                "[routing]
ttl = 0",
                "routing.ttl",
            ),
            (
                "[traffic]
flows = 0",
                "traffic.flows",
            ),
        ] {
            match ScenarioConfig::from_toml_str(text) {
                Err(ConfigError::Field { field, .. }) => assert_eq!(field, name),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn zero_uptime_means_single_outage() {
        let c = ScenarioConfig::from_toml_str(
            "[adversary]
uptime = 0.0",
        )
        .unwrap();
        assert_eq!(c.to_sim_config().unwrap().adversary.uptime, None);
    }

    #[test]
    fn echo_has_unique_columns() {
        let e = ScenarioConfig::default().echo();
        let mut names: Vec<_> = e.iter().map(|(n, _)| *n).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), e.len());
        let flows = e.iter().find(|(n, _)| *n == "flows").unwrap();
        assert_eq!(flows.1, "");
    }
}
