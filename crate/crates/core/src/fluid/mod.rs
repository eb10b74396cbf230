//! Static fluid program, heavy-traffic and complete-resource-pooling checks.
//!
//! The program is: minimize ρ subject to `Σ_j μ̄_ij ξ_ij = λ_i`,
//! `Σ_i ξ_ij ≤ ρ`, `ξ ≥ 0`, with `ξ_ij` pinned to zero off the activity set.
//! It is solved exactly over the rationals; uniqueness of the optimum is
//! decided by minimizing and maximizing every `ξ_ij` over the optimal face.

mod simplex;

use std::fmt;

use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::model::{validate_spec, NetworkSpec, SpecViolation};
use crate::num::{display_q, Matrix, Q};

pub use simplex::{minimize, LpOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum FluidError {
    #[error("invalid network: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidSpec(Vec<SpecViolation>),
    #[error("fluid program is infeasible: some arrival rate cannot be met by the activity set")]
    Infeasible,
}

/// Why the heavy-traffic condition fails.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum HeavyTrafficCertificate {
    /// Station whose optimal column sum differs from one.
    StationNotSaturated { station: usize, load: String },
    /// A second optimal vertex, so the optimum is not unique.
    AlternativeOptimum { xi: Vec<Vec<String>> },
}

impl fmt::Display for HeavyTrafficCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeavyTrafficCertificate::StationNotSaturated { station, load } => {
                write!(f, "station {} carries load {load} != 1", station + 1)
            }
            HeavyTrafficCertificate::AlternativeOptimum { xi } => {
                write!(f, "alternative optimal vertex xi = {xi:?}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeavyTrafficCheck {
    pub holds: bool,
    pub certificate: Option<HeavyTrafficCertificate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluidSolution {
    pub xi_star: Matrix<Q>,
    pub rho_star: Q,
    pub mu_bar: Matrix<Q>,
    pub psi_star: Matrix<Q>,
    pub x_star: Vec<Q>,
    pub nu: Vec<Q>,
    pub activities: Vec<(usize, usize)>,
    pub basic_edges: Vec<(usize, usize)>,
    pub nonbasic_edges: Vec<(usize, usize)>,
    /// A different optimal ξ, when one exists.
    pub alternative_optimum: Option<Matrix<Q>>,
    pub heavy_traffic: bool,
    pub resource_pooling: bool,
}

impl FluidSolution {
    pub fn class_count(&self) -> usize {
        self.xi_star.rows()
    }

    pub fn station_count(&self) -> usize {
        self.xi_star.cols()
    }

    pub fn is_unique(&self) -> bool {
        self.alternative_optimum.is_none()
    }

    pub fn x_star_f64(&self) -> Vec<f64> {
        self.x_star.iter().map(crate::num::to_f64).collect()
    }

    pub fn psi_star_f64(&self) -> Matrix<f64> {
        self.psi_star.map(crate::num::to_f64)
    }

    pub fn station_load(&self, j: usize) -> Q {
        (0..self.class_count()).fold(Q::zero(), |acc, i| acc + &self.xi_star[(i, j)])
    }
}

struct FluidProgram {
    a: Vec<Vec<Q>>,
    b: Vec<Q>,
    cost: Vec<Q>,
    activities: Vec<(usize, usize)>,
    rho_col: usize,
}

impl FluidProgram {
    fn build(spec: &NetworkSpec) -> Self {
        let classes = spec.class_count();
        let stations = spec.station_count();
        let activities = spec.activities();
        let mu_bar = spec.mu_bar();
        let e = activities.len();
        let width = e + 1 + stations;
        let rho_col = e;
        let mut a = Vec::with_capacity(classes + stations);
        let mut b = Vec::with_capacity(classes + stations);
        for i in 0..classes {
            let mut row = vec![Q::zero(); width];
            for (k, &(ci, sj)) in activities.iter().enumerate() {
                if ci == i {
                    row[k] = mu_bar[(ci, sj)].clone();
                }
            }
            a.push(row);
            b.push(spec.lambda[i].clone());
        }
        for j in 0..stations {
            let mut row = vec![Q::zero(); width];
            for (k, &(_, sj)) in activities.iter().enumerate() {
                if sj == j {
                    row[k] = Q::one();
                }
            }
            row[rho_col] = -Q::one();
            row[e + 1 + j] = Q::one();
            a.push(row);
            b.push(Q::zero());
        }
        let mut cost = vec![Q::zero(); width];
        cost[rho_col] = Q::one();
        FluidProgram { a, b, cost, activities, rho_col }
    }

    fn xi_matrix(&self, x: &[Q], classes: usize, stations: usize) -> Matrix<Q> {
        let mut xi = Matrix::filled(classes, stations, Q::zero());
        for (k, &(i, j)) in self.activities.iter().enumerate() {
            xi[(i, j)] = x[k].clone();
        }
        xi
    }

    /// Looks for an optimal vertex whose ξ differs from `x`.
    fn alternative_vertex(&self, x: &[Q], rho: &Q) -> Option<Vec<Q>> {
        let mut a = self.a.clone();
        let mut b = self.b.clone();
        let mut pin = vec![Q::zero(); self.cost.len()];
        pin[self.rho_col] = Q::one();
        a.push(pin);
        b.push(rho.clone());
        for k in 0..self.activities.len() {
            for sign in [1i64, -1] {
                let mut c = vec![Q::zero(); self.cost.len()];
                c[k] = Q::from_integer(sign.into());
                if let LpOutcome::Optimal { x: y, .. } = minimize(&a, &b, &c) {
                    if y[..self.activities.len()] != x[..self.activities.len()] {
                        return Some(y);
                    }
                }
            }
        }
        None
    }
}

/// Solves the static fluid program and classifies the optimum.
pub fn solve_static_lp(spec: &NetworkSpec) -> Result<FluidSolution, FluidError> {
    let violations = validate_spec(spec);
    if !violations.is_empty() {
        return Err(FluidError::InvalidSpec(violations));
    }
    let classes = spec.class_count();
    let stations = spec.station_count();
    let program = FluidProgram::build(spec);
    let (x, rho) = match minimize(&program.a, &program.b, &program.cost) {
        LpOutcome::Optimal { x, value } => (x, value),
        LpOutcome::Infeasible => return Err(FluidError::Infeasible),
        LpOutcome::Unbounded => unreachable!("objective is bounded below by zero"),
    };
    let xi_star = program.xi_matrix(&x, classes, stations);
    let alternative_optimum = program
        .alternative_vertex(&x, &rho)
        .map(|y| program.xi_matrix(&y, classes, stations));

    let mut psi_star = xi_star.clone();
    for i in 0..classes {
        for j in 0..stations {
            psi_star[(i, j)] = &xi_star[(i, j)] * &spec.nu[j];
        }
    }
    let x_star = (0..classes)
        .map(|i| (0..stations).fold(Q::zero(), |acc, j| acc + &psi_star[(i, j)]))
        .collect();
    let (basic_edges, nonbasic_edges): (Vec<_>, Vec<_>) =
        program.activities.iter().partition(|&&(i, j)| !xi_star[(i, j)].is_zero());

    let mut sol = FluidSolution {
        xi_star,
        rho_star: rho,
        mu_bar: spec.mu_bar(),
        psi_star,
        x_star,
        nu: spec.nu.clone(),
        activities: program.activities.clone(),
        basic_edges,
        nonbasic_edges,
        alternative_optimum,
        heavy_traffic: false,
        resource_pooling: false,
    };
    sol.heavy_traffic = check_heavy_traffic(&sol).holds;
    sol.resource_pooling = sol.heavy_traffic && check_resource_pooling(&sol);
    Ok(sol)
}

/// Unique optimum with every station column summing to one.
pub fn check_heavy_traffic(sol: &FluidSolution) -> HeavyTrafficCheck {
    if let Some(alt) = &sol.alternative_optimum {
        let xi = alt.to_rows().iter().map(|r| r.iter().map(display_q).collect()).collect();
        return HeavyTrafficCheck {
            holds: false,
            certificate: Some(HeavyTrafficCertificate::AlternativeOptimum { xi }),
        };
    }
    for j in 0..sol.station_count() {
        let load = sol.station_load(j);
        if !load.is_one() {
            return HeavyTrafficCheck {
                holds: false,
                certificate: Some(HeavyTrafficCertificate::StationNotSaturated {
                    station: j,
                    load: display_q(&load),
                }),
            };
        }
    }
    HeavyTrafficCheck { holds: true, certificate: None }
}

/// Basic activities form a spanning tree on all classes and stations.
pub fn check_resource_pooling(sol: &FluidSolution) -> bool {
    let classes = sol.class_count();
    let vertices = classes + sol.station_count();
    if sol.basic_edges.len() + 1 != vertices {
        return false;
    }
    let mut parent: Vec<usize> = (0..vertices).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for &(i, j) in &sol.basic_edges {
        let a = find(&mut parent, i);
        let b = find(&mut parent, classes + j);
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}
