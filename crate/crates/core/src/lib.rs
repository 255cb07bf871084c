//! Functional hashing of candidate learning algorithms, and the hash-based
//! evolutionary search techniques built on it, run against a virtual clock.

pub mod evolution;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod scheduler;
pub mod space;
pub mod ufh;

#[cfg(test)]
mod testkit;
