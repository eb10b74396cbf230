//! Scaling of traces, the representation check, Monte Carlo estimation and
//! the configuration and persistence surface used by the CLI.

mod config;
mod montecarlo;
mod output;
mod report;
mod scaling;
mod stats;

use serde::Serialize;
use thiserror::Error;

use crate::cycles::{CycleError, CycleStructure};
use crate::diffusion::DiffusionError;
use crate::engine::{EngineError, PolicyError};
use crate::fluid::{check_heavy_traffic, solve_static_lp, FluidError, FluidSolution};
use crate::model::{ModelError, NetworkSpec, ScaledInstance};
use crate::policies::{
    derive_constants, preemptive_config, AnyPolicy, ConstantOverrides, GreedyPolicy, NonpreemptivePolicy,
    PreemptiveOptions, PreemptivePolicy,
};

pub use config::{load_config, parse_config, ConfigFile, NetworkSection, Rate, ScenarioSection};
pub use montecarlo::{
    estimate_null_probability, monotone_within_ci, overloaded_sweep, run_replication, NSummary, OverloadScenario,
    OverloadStats, ReplicationResult, Scenario, SummaryStats,
};
pub use output::{overload_text, summary_text, write_overload, write_summary, Manifest};
pub use report::{analyze, AnalysisReport, CycleReport};
pub use scaling::{check_representation, diffusion_scale, RepresentationReport, ScaledTrace};
pub use stats::{median, wilson_interval};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error("heavy-traffic condition fails: {0}")]
    NoHeavyTraffic(String),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("n = {n}: {source}")]
    Policy { n: u64, source: PolicyError },
    #[error("n = {n}, replication {replication}: {source}")]
    Engine { n: u64, replication: u64, source: EngineError },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("representation identity fails at t = {time}: residual {residual:e}")]
    Representation { time: f64, residual: f64 },
    #[error("trace violates the diffusion-scale constraints at t = {time}: {detail}")]
    ScaledConstraint { time: f64, detail: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// True for errors that mean a simulated path broke a balance identity.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, HarnessError::Engine { source: EngineError::Invariant(_), .. })
            || matches!(self, HarnessError::Representation { .. } | HarnessError::ScaledConstraint { .. })
    }
}

/// A network together with its fluid solution and cycle geometry.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub spec: NetworkSpec,
    pub fluid: FluidSolution,
    pub cycles: CycleStructure,
}

impl Analysis {
    pub fn new(spec: NetworkSpec) -> Result<Self, HarnessError> {
        let fluid = solve_static_lp(&spec)?;
        if !fluid.heavy_traffic {
            let check = check_heavy_traffic(&fluid);
            let why = check.certificate.map_or_else(|| "unknown".to_string(), |c| c.to_string());
            return Err(HarnessError::NoHeavyTraffic(why));
        }
        let cycles = CycleStructure::build(&spec, &fluid)?;
        Ok(Analysis { spec, fluid, cycles })
    }

    pub fn instance(&self, n: u64) -> Result<ScaledInstance, HarnessError> {
        Ok(crate::model::scale_instance(&self.spec, &self.fluid, n)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PolicyChoice {
    Preemptive(PreemptiveOptions),
    Nonpreemptive(ConstantOverrides),
    Greedy,
}

impl PolicyChoice {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyChoice::Preemptive(_) => "preemptive",
            PolicyChoice::Nonpreemptive(_) => "nonpreemptive",
            PolicyChoice::Greedy => "greedy",
        }
    }
}

/// Builds the policy for one instance; `analysis` supplies the fluid point
/// and cycles the policy is designed around.
pub fn make_policy(analysis: &Analysis, inst: &ScaledInstance, choice: &PolicyChoice) -> Result<AnyPolicy, HarnessError> {
    let wrap = |source| HarnessError::Policy { n: inst.n, source };
    Ok(match choice {
        PolicyChoice::Preemptive(options) => {
            let cfg = preemptive_config(&analysis.fluid, &analysis.cycles, inst.n, options).map_err(wrap)?;
            AnyPolicy::Preemptive(PreemptivePolicy::new(inst, &analysis.fluid, &analysis.cycles, cfg))
        }
        PolicyChoice::Nonpreemptive(overrides) => {
            let cfg = derive_constants(&analysis.spec, &analysis.fluid, &analysis.cycles, *overrides).map_err(wrap)?;
            AnyPolicy::Nonpreemptive(NonpreemptivePolicy::new(inst, cfg))
        }
        PolicyChoice::Greedy => AnyPolicy::Greedy(GreedyPolicy::new(inst)),
    })
}

/// For 2×2 networks with a single nonbasic activity: whether the activity
/// rates alone say the cycle empties the queues. With the nonbasic activity
/// off the diagonal the test is `μ11 + μ22 < μ12 + μ21`; on the diagonal it
/// is reversed.
pub fn two_by_two_rate_test(analysis: &Analysis) -> Option<bool> {
    let s = &analysis.spec;
    if s.class_count() != 2 || s.station_count() != 2 || analysis.cycles.cycles.len() != 1 {
        return None;
    }
    let diag = &s.mu[(0, 0)] + &s.mu[(1, 1)];
    let anti = &s.mu[(0, 1)] + &s.mu[(1, 0)];
    let (i, j) = analysis.cycles.cycles[0].nonbasic;
    Some(if i == j { diag > anti } else { diag < anti })
}
