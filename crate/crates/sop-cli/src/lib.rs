//! Library surface of the `sop` binary: ingestion, simulation, reporting,
//! and the command pipelines, exposed so integration tests can call them
//! without shelling out.

pub mod commands;
pub mod ingest;
pub mod report;
pub mod simulate;
