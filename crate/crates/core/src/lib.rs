//! Deterministic discrete-event simulator of an in-network key-value cache
//! in which cached values circulate through the switch as recirculating
//! packets instead of residing in switch memory.
//!
//! Crate layout:
//! - [`messages`]: wire format, op codes, key hashing.
//! - [`server`]: partitioned rate-limited key-value server.
//! - [`simnet`]: event loop, links, recirculation port model.
//! - [`switchd`]: switch data plane (lookup, request table, serving).
//! - [`harness`]: end-to-end experiments over all of the above.

pub mod baseline;
pub mod client;
pub mod coherence;
pub mod controller;
pub mod harness;
pub mod messages;
pub mod server;
pub mod simnet;
pub mod switchd;
pub mod workload;
