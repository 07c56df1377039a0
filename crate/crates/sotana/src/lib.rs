//! IO, CLI and services around `sotana-core`: dataset files, completion
//! backends, the code executor, checkpoints, the rating server and the
//! experiment drivers.

pub mod backend;
pub mod exec;
pub mod jsonl;
pub mod checkpoint;
pub mod config;
pub mod server;
pub mod study_store;
pub mod evaluate;
pub mod infer;
pub mod report;
pub mod sweep;
pub mod cli;
