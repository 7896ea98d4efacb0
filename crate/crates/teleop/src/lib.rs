//! Teleoperation service for exocentric robot views: a framed binary
//! protocol, a multi-client streaming session over TCP or WebSocket, offline
//! validation products and the `eob` command line.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod protocol;
pub mod session;
