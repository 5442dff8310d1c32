//! Library surface behind the `suspension` binary: config parsing, the
//! verification pipeline, and deterministic report rendering. Kept as a
//! library so integration tests drive the same code paths as the CLI.

pub mod config;
pub mod pipeline;
pub mod report;
