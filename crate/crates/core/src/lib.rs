//! Deterministic backbone of a regulation-to-vehicle-code generation pipeline.
//!
//! The crate turns pre-extracted regulation text into a clause tree and a
//! cross-reference graph, builds and enriches retrieval chunks, ranks them
//! against queries, checks model instances against metamodels and OCL
//! invariants, validates test scenarios, maps experiment actions onto vehicle
//! signals and renders target code, and simulates the event bridge that drives
//! vehicle commands from telemetry.
//!
//! Every step that would normally be delegated to a language model sits
//! behind [`genconsensus::GeneratorBackend`]; the bundled
//! [`genconsensus::MockBackend`] replays candidates from disk so the whole
//! [`pipeline`] runs offline and byte-for-byte reproducibly.

pub mod cli;
pub mod genconsensus;
pub mod mmcore;
pub mod ocl;
pub mod pipeline;
pub mod regdoc;
pub mod retrieve;
pub mod scenario;
pub mod smartchunk;
pub mod template;
pub mod vehiclecode;

/// Output format shared by every CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}
