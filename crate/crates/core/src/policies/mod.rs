//! Scheduling and routing policies plugged into the engine.

mod greedy;
mod nonpreemptive;
mod preemptive;

use rand_chacha::ChaCha8Rng;

use crate::engine::{Occupancy, Policy, PolicyError, PolicyStats};

pub use greedy::{fill_greedily, GreedyPolicy};
pub use nonpreemptive::{
    derive_constants, initial_arrangement, routing_constants, ConstantOverrides, NonpreemptiveConfig,
    NonpreemptivePolicy,
};
pub use preemptive::{kn_sequence, preemptive_config, Assignment, PreemptiveConfig, PreemptiveOptions, PreemptivePolicy};

/// Static dispatch over the bundled policies.
#[derive(Clone, Debug)]
pub enum AnyPolicy {
    Preemptive(PreemptivePolicy),
    Nonpreemptive(NonpreemptivePolicy),
    Greedy(GreedyPolicy),
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $body:expr) => {
        match $self {
            AnyPolicy::Preemptive($p) => $body,
            AnyPolicy::Nonpreemptive($p) => $body,
            AnyPolicy::Greedy($p) => $body,
        }
    };
}

impl Policy for AnyPolicy {
    fn name(&self) -> &'static str {
        dispatch!(self, p => p.name())
    }

    fn initialize(&mut self, occ: &mut Occupancy) -> Result<(), PolicyError> {
        dispatch!(self, p => p.initialize(occ))
    }

    fn on_arrival(&mut self, occ: &mut Occupancy, class: usize, time: f64, coin: &mut ChaCha8Rng) -> Result<(), PolicyError> {
        dispatch!(self, p => p.on_arrival(occ, class, time, coin))
    }

    fn on_completion(&mut self, occ: &mut Occupancy, class: usize, station: usize, time: f64) -> Result<(), PolicyError> {
        dispatch!(self, p => p.on_completion(occ, class, station, time))
    }

    fn stats(&self) -> PolicyStats {
        dispatch!(self, p => p.stats())
    }
}
