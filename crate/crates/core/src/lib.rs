//! Deterministic discrete-event simulator for mobile ad hoc networks.
//!
//! AODV and DSR run over random waypoint mobility with a unit-disk radio.
//! Some nodes misbehave (dropping data, forging routes, failing, running out
//! of energy) and a watchdog feeds a trust ledger that decides whether
//! misbehaving relays are kept, eliminated, or given a second chance.

pub mod adversary;
pub mod aodv;
pub mod config;
pub mod dsr;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod mobility;
pub mod packet;
pub mod routing;
pub mod sim;
pub mod trust;

pub use engine::SimTime;
pub use packet::NodeId;
pub use sim::{Overrides, Protocol, RunOutput, SimConfig, SimError, Simulation};
pub use trust::Strategy;

/// Guide chapters, compiled so their snippets stay in step with the code.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/routing.md")]
    mod routing {}
    #[doc = include_str!("../../../book/src/misbehavior.md")]
    mod misbehavior {}
    #[doc = include_str!("../../../book/src/trust.md")]
    mod trust {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/results.md")]
    mod results {}
}
