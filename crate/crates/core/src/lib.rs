//! Coverage-guided tracing over a deterministic bytecode VM.
//!
//! The pieces, bottom up: an ISA and interpreter ([`isa`], [`vm`]) with a
//! reserved one-byte trap opcode; static CFG recovery and critical-edge
//! splitting ([`cfg`]); a block tracer ([`tracer`]); the trap-patched interest
//! oracle ([`oracle`]); a mutational fuzz loop ([`fuzzer`]) that uses either;
//! and the measurement side ([`dataset`], [`stats`], [`report`]). [`gen`]
//! builds benchmark programs with known ground truth.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, wall-clock
//! timing and the command-line driver live in the `cgt` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod asm;
pub mod cfg;
pub mod dataset;
pub mod engine;
pub mod fuzzer;
pub mod gen;
pub mod hash;
pub mod isa;
pub mod mutate;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod stats;
pub mod tracer;
pub mod vm;
