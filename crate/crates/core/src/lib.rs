//! A miniature Object-as-a-Service platform.
//!
//! Classes bundle methods, object state and non-functional requirements
//! (throughput, availability, locality). The platform deploys each class onto
//! a deterministic discrete-event model of a cluster and enforces those
//! requirements with replication, consistent-hash routing and warm pools.

pub mod package;

pub mod hash;
pub mod sim;
pub mod store;
pub mod enforcement;
pub mod runtime;
pub mod harness;
