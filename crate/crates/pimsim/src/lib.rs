//! An ISA-based simulation toolchain for crossbar processing-in-memory
//! neural-network accelerators: a four-class instruction set with a textual
//! assembly form, a compiler with two weight-mapping strategies, and a
//! deterministic cycle-accurate simulator reporting latency, energy, power
//! and per-layer communication breakdowns.

pub mod cli;
pub mod compiler;
pub mod config;
pub mod engine;
pub mod fixtures;
pub mod isa;
pub mod metrics;
pub mod nn;
pub mod noc;
