//! Superscalar processor simulation with learned dependent-data predictors.
//!
//! The pipeline in this crate, end to end:
//!
//! 1. [`isa`] defines MiniRV-16 and a single-cycle reference model that
//!    produces replayable traces.
//! 2. [`bsd`] learns Boolean functions from input-output examples as binary
//!    speculation diagrams: decision nodes plus constant-guess leaves that
//!    are refined by expansion.
//! 3. [`selector`] mines dependency events out of traces and picks the most
//!    reusable processor-state elements by simulated annealing.
//! 4. [`speculator`] trains abstaining predictors (one per dependency kind)
//!    over the selected state buffer and verifies them by exhaustive
//!    enumeration: a verified predictor either abstains or matches the
//!    oracle on every checked input.
//! 5. [`superscalar`] issues up to `p` instructions per cycle, gated by the
//!    predictors, and proves bit-exact equivalence against the single-cycle
//!    model on every run.
//! 6. [`pipeline`] generates workloads, trains predictor bundles, runs
//!    evaluation sweeps, and writes report artifacts.

pub mod asm;
pub mod bsd;
pub mod isa;
pub mod pipeline;
pub mod workloads;
pub mod selector;
pub mod speculator;
pub mod superscalar;
pub mod trace;

pub use isa::{EncodedInstruction, Instruction, Opcode, ProcessorState, Program, Word};
