//! Core of the home security gateway.
//!
//! The gateway watches a small fleet of simulated sensors (fire, gas, motion,
//! camera), turns detections into owner alerts, guards remote access with a
//! password + one-time key login, and runs a lightweight flow-based network
//! intrusion detector in front of it all.
//!
//! Module map:
//! - [`sensor`]: sensor fleet, scenario scripts and replay.
//! - [`controller`]: arm state, alert decisions, status snapshots.
//! - [`nids`]: flow assembly, feature extraction, rule classifier, dataset replay.
//! - [`auth`]: two-factor login and session tokens.
//! - [`notify`]: alert rendering and delivery over spool/webhook/console sinks.
//! - [`store`]: append-only event log and snapshot blobs.
//! - [`traffic`]: seeded benign and attack traffic generators.
//! - [`gateway`]: wires everything together from a [`config::GatewayConfig`].

pub mod auth;
pub mod clock;
pub mod config;
pub mod controller;
pub mod gateway;
pub mod nids;
pub mod notify;
pub mod sensor;
pub mod store;
pub mod time_fmt;
pub mod traffic;

pub use clock::{Clock, SimClock, WallClock};
pub use gateway::Gateway;
