//! Deterministic simulation and analysis of Android inter-component
//! communication with taint tracking.
//!
//! The crate has two halves that mirror a monitor/analyzer split:
//!
//! * the **monitor side** ([`scenario`], [`monitor`], [`logfmt`]) interprets
//!   declarative scenarios — apps, components, intent filters and scripted
//!   behaviors — through a faithful model of the intent mechanism, tracking
//!   taint labels on sensitive values and emitting a versioned event log
//!   plus an app-metadata sidecar;
//! * the **analyzer side** ([`analyzer`], [`report`]) consumes those logs,
//!   builds one communication model per sent intent, deflates redundant
//!   multi-hop and chooser-mediated model chains, traces data that reached a
//!   sink through shared-preference or application-object detours back to
//!   its original sender, and classifies each model as intent hijacking,
//!   spoofing, collusion, or benign.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `iccflow` binary for the `run`/`analyze`/`e2e`/`corpus`
//! subcommands.

pub mod analyzer;
pub mod catalog;
pub mod logfmt;
pub mod model;
pub mod monitor;
pub mod report;
pub mod scenario;
pub mod taint;
pub mod worldgen;

pub use catalog::Catalogs;
pub use model::{ComponentId, ComponentKind, LabelSet, TagId, TaintLabel, ThreatType};
pub use scenario::{parse_scenario, serialize_scenario, Scenario};
