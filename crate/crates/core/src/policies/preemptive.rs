//! Preemptive cycle control.
//!
//! At every event the whole assignment is recomputed from `X`: the excess
//! `(e·X − e·N)^+` queues at class `i₀`, the deficit idles at station `j₀`,
//! the rest is spread by the tree map `G`, and outside
//! `{e·X̂ < −1}` a block of `n^{1/2}K_n` customers is shifted around the
//! chosen cycle `c₀` so that the total headcount is pushed back down.

use num_traits::Signed;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cycles::{assignment_sup_norm, AssignmentMap, CycleEdge, CycleStructure};
use crate::engine::{Occupancy, Policy, PolicyError, PolicyStats};
use crate::fluid::FluidSolution;
use crate::model::ScaledInstance;
use crate::num::{display_q, to_f64, Matrix};

use super::greedy::fill_greedily;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreemptiveOptions {
    /// Cycle index to push along; defaults to the null-controllability choice.
    pub cycle: Option<usize>,
    pub i0: usize,
    pub j0: usize,
    /// `K_n ≈ n^p`; must lie in `(0, 1/2)`.
    pub kn_exponent: f64,
    pub a0: Option<f64>,
}

impl Default for PreemptiveOptions {
    fn default() -> Self {
        PreemptiveOptions { cycle: None, i0: 0, j0: 0, kn_exponent: 0.25, a0: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreemptiveConfig {
    pub cycle: usize,
    pub i0: usize,
    pub j0: usize,
    pub kn_exponent: f64,
    /// `K_n` after adjusting `n^{1/2}K_n` to an integer.
    pub k_n: f64,
    /// `n^{1/2}K_n`, the number of customers moved around `c₀`.
    pub push: i64,
    /// Guard radius: the cycle rule applies while `‖X̂‖₁ ≤ a₀n^{1/2}`.
    pub a0: f64,
    /// `2 sup |G_ij|` per unit input on the domain of `G`.
    pub c3: f64,
}

/// `K_n = ⌈n^p⌉`, then nudged so that `n^{1/2}K_n` is an integer.
pub fn kn_sequence(n: u64, exponent: f64) -> (f64, i64) {
    let root = (n as f64).sqrt();
    let base = (n as f64).powf(exponent).ceil();
    let push = (root * base).round() as i64;
    (push as f64 / root, push)
}

pub fn preemptive_config(
    fluid: &FluidSolution,
    cycles: &CycleStructure,
    n: u64,
    options: &PreemptiveOptions,
) -> Result<PreemptiveConfig, PolicyError> {
    let cycle = match options.cycle {
        Some(c) if c >= cycles.cycles.len() => {
            return Err(PolicyError(format!("cycle {} does not exist ({} cycles)", c + 1, cycles.cycles.len())))
        }
        Some(c) if !cycles.e_dot_m(c).is_negative() => {
            return Err(PolicyError(format!(
                "cycle {} has e.m = {} >= 0 and cannot empty the queues",
                c + 1,
                display_q(&cycles.e_dot_m(c))
            )))
        }
        Some(c) => c,
        None => cycles
            .chosen
            .ok_or_else(|| PolicyError(format!("not null-controllable: {}", cycles.certificate())))?,
    };
    if options.i0 >= fluid.class_count() || options.j0 >= fluid.station_count() {
        return Err(PolicyError(format!("(i0, j0) = ({}, {}) out of range", options.i0 + 1, options.j0 + 1)));
    }
    if !(options.kn_exponent > 0.0 && options.kn_exponent < 0.5) {
        return Err(PolicyError(format!("K_n exponent {} must lie in (0, 1/2)", options.kn_exponent)));
    }
    let (k_n, push) = kn_sequence(n, options.kn_exponent);
    let c3 = 2.0 * to_f64(&assignment_sup_norm(&cycles.assign));
    let psi_min = fluid
        .basic_edges
        .iter()
        .map(|&(i, j)| to_f64(&fluid.psi_star[(i, j)]))
        .fold(f64::INFINITY, f64::min);
    let a0 = match options.a0 {
        Some(a) if a > 0.0 => a,
        Some(a) => return Err(PolicyError(format!("a0 = {a} must be positive"))),
        None => 0.5 * psi_min / c3,
    };
    Ok(PreemptiveConfig { cycle, i0: options.i0, j0: options.j0, kn_exponent: options.kn_exponent, k_n, push, a0, c3 })
}

/// Outcome of evaluating the cycle rule at a headcount vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Assignment {
    Feasible(Occupancy),
    /// `‖X̂‖₁ > a₀n^{1/2}`.
    OutsideGuard,
    /// The rule produced a negative entry; carries the offending matrix.
    Negative(Matrix<i64>),
}

#[derive(Clone, Debug)]
pub struct PreemptivePolicy {
    config: PreemptiveConfig,
    assign: AssignmentMap,
    cycle_edges: Vec<CycleEdge>,
    servers: Vec<i64>,
    n_x_star: Vec<f64>,
    n_total_star: f64,
    sqrt_n: f64,
    guard: f64,
    fallback_order: Vec<(usize, usize)>,
    stats: PolicyStats,
}

impl PreemptivePolicy {
    pub fn new(inst: &ScaledInstance, fluid: &FluidSolution, cycles: &CycleStructure, config: PreemptiveConfig) -> Self {
        let nf = inst.n as f64;
        let n_x_star: Vec<f64> = fluid.x_star_f64().iter().map(|x| x * nf).collect();
        PreemptivePolicy {
            assign: cycles.assign.clone(),
            cycle_edges: cycles.cycles[config.cycle].edges.clone(),
            servers: inst.servers.clone(),
            n_total_star: n_x_star.iter().sum(),
            n_x_star,
            sqrt_n: inst.sqrt_n(),
            guard: config.a0 * nf,
            fallback_order: cycles.graph.tree_order(),
            stats: PolicyStats::default(),
            config,
        }
    }

    pub fn config(&self) -> &PreemptiveConfig {
        &self.config
    }

    /// Evaluates the rule at headcounts `x`.
    pub fn assignment(&self, x: &[i64]) -> Assignment {
        let deviation: f64 = x.iter().zip(&self.n_x_star).map(|(&xi, c)| (xi as f64 - c).abs()).sum();
        if deviation > self.guard {
            return Assignment::OutsideGuard;
        }
        let total: i64 = x.iter().sum();
        let excess = total - self.servers.iter().sum::<i64>();
        let mut y = vec![0; x.len()];
        let mut z = vec![0; self.servers.len()];
        y[self.config.i0] = excess.max(0);
        z[self.config.j0] = (-excess).max(0);
        let in_interior = (total as f64 - self.n_total_star) < -self.sqrt_n;
        let shift = if in_interior { 0 } else { self.config.push };

        let a: Vec<i64> = x.iter().zip(&y).map(|(xi, yi)| xi - yi).collect();
        let b: Vec<i64> = self.servers.iter().zip(&z).map(|(nj, zj)| nj - zj).collect();
        let mut psi = self.assign.solve_unchecked(&a, &b);
        for e in &self.cycle_edges {
            psi[(e.class, e.station)] -= i64::from(e.sign) * shift;
        }
        if psi.as_slice().iter().any(|&v| v < 0) {
            return Assignment::Negative(psi);
        }
        Assignment::Feasible(Occupancy { x: x.to_vec(), y, z, psi })
    }

    fn reassign(&mut self, occ: &mut Occupancy) {
        match self.assignment(&occ.x) {
            Assignment::Feasible(next) => *occ = next,
            Assignment::OutsideGuard => {
                self.stats.guard_fallbacks += 1;
                fill_greedily(occ, &self.fallback_order);
            }
            Assignment::Negative(_) => {
                self.stats.negative_fallbacks += 1;
                fill_greedily(occ, &self.fallback_order);
            }
        }
    }
}

impl Policy for PreemptivePolicy {
    fn name(&self) -> &'static str {
        "preemptive"
    }

    fn initialize(&mut self, occ: &mut Occupancy) -> Result<(), PolicyError> {
        self.reassign(occ);
        Ok(())
    }

    fn on_arrival(&mut self, occ: &mut Occupancy, _: usize, _: f64, _: &mut ChaCha8Rng) -> Result<(), PolicyError> {
        self.reassign(occ);
        Ok(())
    }

    fn on_completion(&mut self, occ: &mut Occupancy, _: usize, _: usize, _: f64) -> Result<(), PolicyError> {
        self.reassign(occ);
        Ok(())
    }

    fn stats(&self) -> PolicyStats {
        self.stats
    }
}
