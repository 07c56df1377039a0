//! Allocation-only core of the sotana pipeline.
//!
//! Everything here is pure computation over in-memory values: prompt
//! assembly and completion parsing for instruction-data generation, a LoRA
//! micro-transformer with manual backpropagation, reference-based text
//! metrics, pass@k, and the human-evaluation study engine. File formats,
//! HTTP, process execution and the CLI live in the `sotana` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod dataforge;
pub mod evalmetrics;
pub mod microlm;
pub mod rng;
pub mod study;
