//! Null controllability of parallel server systems in the Halfin–Whitt regime.
//!
//! The crate solves the static fluid program, finds the simple cycles of the
//! basic activity tree, simulates the scaled queueing network under cycle
//! controls and estimates how often the diffusion-scaled total queue stays
//! in the null domain.

pub mod cycles;
pub mod diffusion;
pub mod engine;
pub mod examples;
pub mod fluid;
pub mod harness;
pub mod model;
pub mod num;
pub mod policies;
