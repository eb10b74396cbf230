//! Activity graph, simple cycles and the linear maps built on the basic tree.
//!
//! Every nonbasic activity closes exactly one cycle with the basic spanning
//! tree. Cycle edges carry a sign: `-1` when traversed class → station and
//! `+1` when traversed station → class, with the nonbasic edge itself always
//! traversed class → station.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::fluid::FluidSolution;
use crate::model::NetworkSpec;
use crate::num::{display_q, Matrix, Scalar, Q};

#[derive(Debug, Error, PartialEq)]
pub enum CycleError {
    #[error("heavy-traffic condition fails; cycle structure undefined")]
    NoHeavyTraffic,
    #[error("basic activities do not form a spanning tree (no complete resource pooling)")]
    NotATree,
    #[error("(a, b) outside the solvable domain: sum(a) = {sum_a} but sum(b) = {sum_b}")]
    Domain { sum_a: String, sum_b: String },
}

/// Vertex of the class/station graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Vertex {
    Class(usize),
    Station(usize),
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Class(i) => write!(f, "class {}", i + 1),
            Vertex::Station(j) => write!(f, "station {}", j + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivityGraph {
    pub classes: usize,
    pub stations: usize,
    pub edges: Vec<(usize, usize)>,
    pub basic: Vec<(usize, usize)>,
    pub nonbasic: Vec<(usize, usize)>,
}

impl ActivityGraph {
    pub fn from_fluid(fluid: &FluidSolution) -> Self {
        ActivityGraph {
            classes: fluid.class_count(),
            stations: fluid.station_count(),
            edges: fluid.activities.clone(),
            basic: fluid.basic_edges.clone(),
            nonbasic: fluid.nonbasic_edges.clone(),
        }
    }

    fn vertex_id(&self, v: Vertex) -> usize {
        match v {
            Vertex::Class(i) => i,
            Vertex::Station(j) => self.classes + j,
        }
    }

    fn vertex(&self, id: usize) -> Vertex {
        if id < self.classes {
            Vertex::Class(id)
        } else {
            Vertex::Station(id - self.classes)
        }
    }

    fn basic_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.classes + self.stations];
        for &(i, j) in &self.basic {
            adj[i].push(self.classes + j);
            adj[self.classes + j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Basic edges in breadth-first order from class 0.
    pub fn tree_order(&self) -> Vec<(usize, usize)> {
        let adj = self.basic_adjacency();
        let mut seen = vec![false; adj.len()];
        let mut order = Vec::with_capacity(self.basic.len());
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    order.push(if v < self.classes { (v, w - self.classes) } else { (w, v - self.classes) });
                    queue.push_back(w);
                }
            }
        }
        order
    }

    /// Vertex path from `from` to `to` along basic edges.
    fn tree_path(&self, from: Vertex, to: Vertex) -> Option<Vec<Vertex>> {
        let adj = self.basic_adjacency();
        let start = self.vertex_id(from);
        let goal = self.vertex_id(to);
        let mut prev = vec![usize::MAX; adj.len()];
        prev[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            if v == goal {
                break;
            }
            for &w in &adj[v] {
                if prev[w] == usize::MAX {
                    prev[w] = v;
                    queue.push_back(w);
                }
            }
        }
        if prev[goal] == usize::MAX {
            return None;
        }
        let mut path = vec![goal];
        let mut v = goal;
        while v != start {
            v = prev[v];
            path.push(v);
        }
        path.reverse();
        Some(path.into_iter().map(|id| self.vertex(id)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CycleEdge {
    pub class: usize,
    pub station: usize,
    /// `-1` if traversed class → station, `+1` if station → class.
    pub sign: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimpleCycle {
    /// The one nonbasic activity on the cycle.
    pub nonbasic: (usize, usize),
    /// Alternating vertex walk starting at the nonbasic edge's class and
    /// ending at the class it returns to (not repeated).
    pub vertices: Vec<Vertex>,
    pub edges: Vec<CycleEdge>,
}

impl SimpleCycle {
    pub fn sign(&self, class: usize, station: usize) -> Option<i8> {
        self.edges
            .iter()
            .find(|e| e.class == class && e.station == station)
            .map(|e| e.sign)
    }

    /// `m_{i,c} = Σ_{j:(i,j)∈c} s(c,i,j) μ_ij`.
    pub fn control_direction<T: Scalar>(&self, mu: &Matrix<T>) -> Vec<T> {
        let mut m = vec![T::zero(); mu.rows()];
        for e in &self.edges {
            let term = mu[(e.class, e.station)].clone();
            m[e.class] = if e.sign < 0 {
                m[e.class].clone() - term
            } else {
                m[e.class].clone() + term
            };
        }
        m
    }
}

/// One cycle per nonbasic edge, ordered by (station, class) of that edge.
pub fn enumerate_simple_cycles(graph: &ActivityGraph) -> Vec<SimpleCycle> {
    let mut nonbasic = graph.nonbasic.clone();
    nonbasic.sort_by_key(|&(i, j)| (j, i));
    nonbasic
        .into_iter()
        .map(|(i0, j0)| {
            let path = graph
                .tree_path(Vertex::Station(j0), Vertex::Class(i0))
                .expect("basic tree spans all vertices");
            let mut edges = vec![CycleEdge { class: i0, station: j0, sign: -1 }];
            for pair in path.windows(2) {
                edges.push(match (pair[0], pair[1]) {
                    (Vertex::Station(j), Vertex::Class(i)) => CycleEdge { class: i, station: j, sign: 1 },
                    (Vertex::Class(i), Vertex::Station(j)) => CycleEdge { class: i, station: j, sign: -1 },
                    _ => unreachable!("bipartite tree"),
                });
            }
            let mut vertices = vec![Vertex::Class(i0)];
            vertices.extend(path.iter().take(path.len() - 1).copied());
            SimpleCycle { nonbasic: (i0, j0), vertices, edges }
        })
        .collect()
}

/// Index of the cycle with the most negative `e·m_c` among those with
/// `e·m_c < 0`; ties go to the earlier cycle.
pub fn check_null_controllability(directions: &[Vec<Q>]) -> Option<usize> {
    let mut best: Option<(usize, Q)> = None;
    for (c, m) in directions.iter().enumerate() {
        let em = m.iter().fold(Q::zero(), |acc, v| acc + v);
        if em < Q::zero() && best.as_ref().is_none_or(|(_, b)| em < *b) {
            best = Some((c, em));
        }
    }
    best.map(|(c, _)| c)
}

/// The solution map of the tree system `row sums = a`, `column sums = b`,
/// zero on nonbasic edges, evaluated by leaf elimination.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMap {
    classes: usize,
    stations: usize,
    /// (leaf vertex id, the edge it is eliminated through).
    steps: Vec<(usize, (usize, usize))>,
}

impl AssignmentMap {
    pub fn new(graph: &ActivityGraph) -> Result<Self, CycleError> {
        let vertices = graph.classes + graph.stations;
        if graph.basic.len() + 1 != vertices {
            return Err(CycleError::NotATree);
        }
        let mut incident: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); vertices];
        for (k, &(i, j)) in graph.basic.iter().enumerate() {
            incident[i].insert(k);
            incident[graph.classes + j].insert(k);
        }
        let mut leaves: BTreeSet<usize> = (0..vertices).filter(|&v| incident[v].len() == 1).collect();
        let mut steps = Vec::with_capacity(graph.basic.len());
        while let Some(v) = leaves.pop_first() {
            if steps.len() == graph.basic.len() {
                break;
            }
            let Some(&k) = incident[v].iter().next() else { continue };
            let (i, j) = graph.basic[k];
            let other = if v == i { graph.classes + j } else { i };
            incident[v].remove(&k);
            incident[other].remove(&k);
            steps.push((v, (i, j)));
            if incident[other].len() == 1 {
                leaves.insert(other);
            }
        }
        if steps.len() != graph.basic.len() {
            return Err(CycleError::NotATree);
        }
        Ok(AssignmentMap { classes: graph.classes, stations: graph.stations, steps })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    /// Elimination without the domain check; on `Σa = Σb` it is exactly G,
    /// elsewhere it is the linear extension that drops the last residual.
    pub fn solve_unchecked<T: Scalar>(&self, a: &[T], b: &[T]) -> Matrix<T> {
        debug_assert_eq!(a.len(), self.classes);
        debug_assert_eq!(b.len(), self.stations);
        let mut residual: Vec<T> = a.iter().chain(b).cloned().collect();
        let mut psi = Matrix::filled(self.classes, self.stations, T::zero());
        for &(leaf, (i, j)) in &self.steps {
            let value = residual[leaf].clone();
            let other = if leaf == i { self.classes + j } else { i };
            residual[other] = residual[other].clone() - value.clone();
            psi[(i, j)] = value;
        }
        psi
    }

    /// `G(a, b)`; fails when `Σa ≠ Σb`.
    pub fn solve<T: Scalar>(&self, a: &[T], b: &[T]) -> Result<Matrix<T>, CycleError> {
        let sum_a = a.iter().cloned().fold(T::zero(), |x, y| x + y);
        let sum_b = b.iter().cloned().fold(T::zero(), |x, y| x + y);
        let scale = a.iter().chain(b).map(Scalar::magnitude).fold(T::zero(), |x, y| x + y);
        if !T::negligible(&(sum_a.clone() - sum_b.clone()), &scale) {
            return Err(CycleError::Domain { sum_a: format!("{sum_a:?}"), sum_b: format!("{sum_b:?}") });
        }
        Ok(self.solve_unchecked(a, b))
    }

    /// Column k is the image of the k-th unit vector of `(a, b)`; rows are
    /// activities in class-major order over the full `I×J` grid.
    pub fn matrix<T: Scalar + num_traits::One>(&self) -> Matrix<T> {
        let dim = self.classes + self.stations;
        let mut out = Matrix::filled(self.classes * self.stations, dim, T::zero());
        for k in 0..dim {
            let mut unit = vec![T::zero(); dim];
            unit[k] = T::one();
            let psi = self.solve_unchecked(&unit[..self.classes], &unit[self.classes..]);
            for (r, v) in psi.as_slice().iter().enumerate() {
                out[(r, k)] = v.clone();
            }
        }
        out
    }
}

/// `H_i(a, b) = −Σ_j μ_ij G_ij(a, b)` as a dense `I × (I+J)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftMap<T> {
    pub matrix: Matrix<T>,
    classes: usize,
}

impl<T: Scalar + num_traits::One> DriftMap<T> {
    pub fn new(assign: &AssignmentMap, mu: &Matrix<T>) -> Self {
        let g = assign.matrix::<T>();
        let (classes, stations) = (assign.classes(), assign.stations());
        let dim = classes + stations;
        let mut h = Matrix::filled(classes, dim, T::zero());
        for i in 0..classes {
            for k in 0..dim {
                let mut acc = T::zero();
                for j in 0..stations {
                    acc = acc - mu[(i, j)].clone() * g[(i * stations + j, k)].clone();
                }
                h[(i, k)] = acc;
            }
        }
        DriftMap { matrix: h, classes }
    }

    pub fn apply_unchecked(&self, a: &[T], b: &[T]) -> Vec<T> {
        (0..self.classes)
            .map(|i| {
                a.iter()
                    .chain(b)
                    .enumerate()
                    .fold(T::zero(), |acc, (k, v)| acc + self.matrix[(i, k)].clone() * v.clone())
            })
            .collect()
    }

    pub fn apply(&self, assign: &AssignmentMap, a: &[T], b: &[T]) -> Result<Vec<T>, CycleError> {
        // Reuse the domain check of G.
        assign.solve(a, b)?;
        Ok(self.apply_unchecked(a, b))
    }
}

/// Extreme points of `{z : ‖z‖₁ ≤ 1, Σ_{k<I} z_k = Σ_{k≥I} z_k}` are
/// `(e_k ± e_l)/2`; returns their doubled versions `e_k + σ e_l`, `k < l`.
fn domain_extreme_pairs(classes: usize, dim: usize) -> Vec<(usize, usize, i64)> {
    let side = |k: usize| if k < classes { 1i64 } else { -1 };
    let mut out = Vec::new();
    for k in 0..dim {
        for l in k + 1..dim {
            out.push((k, l, -side(k) * side(l)));
        }
    }
    out
}

/// Smallest `C′` with `‖H(a,b)‖₁ ≤ C′/(2I) (‖a‖₁ + ‖b‖₁)` on the domain,
/// i.e. `2I` times the restricted ℓ¹ operator norm.
pub fn lipschitz_constant(drift: &Matrix<Q>, classes: usize) -> Q {
    let dim = drift.cols();
    let mut best = Q::zero();
    for (k, l, sigma) in domain_extreme_pairs(classes, dim) {
        let norm = (0..drift.rows()).fold(Q::zero(), |acc, i| {
            let v = &drift[(i, k)] + &drift[(i, l)] * Q::from_integer(sigma.into());
            acc + v.magnitude()
        });
        // Extreme point is half the doubled vector.
        let value = norm / Q::from_integer(2.into());
        if value > best {
            best = value;
        }
    }
    best * Q::from_integer(((2 * classes) as i64).into())
}

/// Largest `|G_ij(a,b)|` per unit `‖a‖₁ + ‖b‖₁` on the domain.
pub fn assignment_sup_norm(assign: &AssignmentMap) -> Q {
    let g = assign.matrix::<Q>();
    let mut best = Q::zero();
    for (k, l, sigma) in domain_extreme_pairs(assign.classes(), g.cols()) {
        for r in 0..g.rows() {
            let v = (&g[(r, k)] + &g[(r, l)] * Q::from_integer(sigma.into())).magnitude()
                / Q::from_integer(2.into());
            if v > best {
                best = v;
            }
        }
    }
    best
}

/// Everything the policies and reports need about the cycle geometry.
#[derive(Clone, Debug)]
pub struct CycleStructure {
    pub graph: ActivityGraph,
    pub cycles: Vec<SimpleCycle>,
    /// Limiting control directions `m_c`, exact.
    pub directions: Vec<Vec<Q>>,
    pub assign: AssignmentMap,
    pub drift: DriftMap<Q>,
    pub lipschitz: Q,
    /// Cycle chosen for null control, if any.
    pub chosen: Option<usize>,
}

impl CycleStructure {
    pub fn build(spec: &NetworkSpec, fluid: &FluidSolution) -> Result<Self, CycleError> {
        if !fluid.heavy_traffic {
            return Err(CycleError::NoHeavyTraffic);
        }
        if !fluid.resource_pooling {
            return Err(CycleError::NotATree);
        }
        let graph = ActivityGraph::from_fluid(fluid);
        let cycles = enumerate_simple_cycles(&graph);
        let directions: Vec<Vec<Q>> = cycles.iter().map(|c| c.control_direction(&spec.mu)).collect();
        let assign = AssignmentMap::new(&graph)?;
        let drift = DriftMap::new(&assign, &spec.mu);
        let lipschitz = lipschitz_constant(&drift.matrix, graph.classes);
        let chosen = check_null_controllability(&directions);
        Ok(CycleStructure { graph, cycles, directions, assign, drift, lipschitz, chosen })
    }

    pub fn e_dot_m(&self, c: usize) -> Q {
        self.directions[c].iter().fold(Q::zero(), |acc, v| acc + v)
    }

    pub fn null_controllable(&self) -> bool {
        self.chosen.is_some()
    }

    /// Finite-n directions `m_c^n` from the scaled rates.
    pub fn directions_n(&self, mu_n: &Matrix<f64>) -> Vec<Vec<f64>> {
        self.cycles.iter().map(|c| c.control_direction(mu_n)).collect()
    }

    /// Human-readable certificate listing `e·m_c` for every cycle.
    pub fn certificate(&self) -> String {
        if self.cycles.is_empty() {
            return "no simple cycles (activity graph is a tree)".into();
        }
        self.cycles
            .iter()
            .enumerate()
            .map(|(c, cyc)| {
                format!(
                    "cycle {} via ({}, {}): e.m = {}",
                    c + 1,
                    cyc.nonbasic.0 + 1,
                    cyc.nonbasic.1 + 1,
                    display_q(&self.e_dot_m(c))
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::fluid::solve_static_lp;
    use crate::num::{q, to_f64};

    fn structure(spec: &NetworkSpec) -> CycleStructure {
        let fluid = solve_static_lp(spec).unwrap();
        CycleStructure::build(spec, &fluid).unwrap()
    }

    fn ints(v: &[Q]) -> Vec<i64> {
        v.iter().map(|x| x.to_integer().try_into().unwrap()).collect()
    }

    #[test]
    fn two_by_three_directions() {
        let s = structure(&examples::two_by_three());
        assert_eq!(s.cycles.len(), 2);
        assert_eq!(s.cycles[0].nonbasic, (1, 0));
        assert_eq!(s.cycles[1].nonbasic, (0, 2));
        assert_eq!(ints(&s.directions[0]), vec![-7, 3]);
        assert_eq!(ints(&s.directions[1]), vec![9, -2]);
        assert_eq!(s.chosen, Some(0));
        assert_eq!(s.e_dot_m(0), q(-4));
        assert_eq!(s.e_dot_m(1), q(7));
    }

    #[test]
    fn two_by_two_directions() {
        let s_out = structure(&examples::outward_cycle());
        assert_eq!(ints(&s_out.directions[0]), vec![-2, 3]);
        assert_eq!(s_out.chosen, None);
        let s_in = structure(&examples::inward_cycle());
        assert_eq!(ints(&s_in.directions[0]), vec![-3, 2]);
        assert_eq!(s_in.chosen, Some(0));
        let rev = structure(&examples::reversed_cycle());
        assert_eq!(rev.cycles[0].nonbasic, (0, 0));
        assert_eq!(ints(&rev.directions[0]), vec![4, -5]);
        assert_eq!(rev.chosen, Some(0));
    }

    #[test]
    fn tree_graph_has_no_cycles() {
        let spec = NetworkSpec::first_order(
            vec![q(3), q(1)],
            Matrix::from_rows(vec![vec![q(2), q(2)], vec![q(0), q(2)]]),
            vec![q(1), q(1)],
        );
        let s = structure(&spec);
        assert!(s.cycles.is_empty());
        assert_eq!(s.chosen, None);
    }

    #[test]
    fn signs_cancel_at_every_vertex() {
        for spec in [examples::two_by_three(), examples::inward_cycle(), examples::reversed_cycle()] {
            let s = structure(&spec);
            for c in &s.cycles {
                for i in 0..s.graph.classes {
                    let sum: i32 = c.edges.iter().filter(|e| e.class == i).map(|e| i32::from(e.sign)).sum();
                    assert_eq!(sum, 0);
                }
                for j in 0..s.graph.stations {
                    let sum: i32 = c.edges.iter().filter(|e| e.station == j).map(|e| i32::from(e.sign)).sum();
                    assert_eq!(sum, 0);
                }
                assert_eq!(c.sign(c.nonbasic.0, c.nonbasic.1), Some(-1));
                let nb = c.edges.iter().filter(|e| s.graph.nonbasic.contains(&(e.class, e.station))).count();
                assert_eq!(nb, 1);
            }
        }
    }

    #[test]
    fn assignment_reproduces_fluid_point() {
        for spec in [examples::two_by_three(), examples::inward_cycle(), examples::reversed_cycle()] {
            let fluid = solve_static_lp(&spec).unwrap();
            let s = CycleStructure::build(&spec, &fluid).unwrap();
            let psi = s.assign.solve(&fluid.x_star, &spec.nu).unwrap();
            assert_eq!(psi, fluid.psi_star);
            let zero = s.assign.solve(&vec![q(0); fluid.class_count()], &vec![q(0); fluid.station_count()]).unwrap();
            assert!(zero.as_slice().iter().all(Zero::is_zero));
        }
    }

    #[test]
    fn assignment_rejects_off_domain() {
        let s = structure(&examples::inward_cycle());
        assert!(matches!(s.assign.solve(&[q(1), q(0)], &[q(0), q(0)]), Err(CycleError::Domain { .. })));
        assert!(s.assign.solve(&[1.0, 0.0], &[0.0, 0.5]).is_err());
        assert!(s.assign.solve(&[3_i64, -1], &[1, 1]).is_ok());
    }

    #[test]
    fn drift_at_fluid_point_is_minus_lambda() {
        for spec in [examples::two_by_three(), examples::inward_cycle()] {
            let fluid = solve_static_lp(&spec).unwrap();
            let s = CycleStructure::build(&spec, &fluid).unwrap();
            let h = s.drift.apply(&s.assign, &fluid.x_star, &spec.nu).unwrap();
            let neg: Vec<Q> = spec.lambda.iter().map(|l| -l).collect();
            assert_eq!(h, neg);
        }
    }

    #[test]
    fn inward_cycle_lipschitz_constant() {
        // H(a,b) = (-7a1 + 3b1, -4a2); the worst extreme point is
        // (a1, a2) = (1/2, -1/2) giving ‖H‖ = 11/2, so C' = 2·2·11/2.
        let s = structure(&examples::inward_cycle());
        assert_eq!(s.lipschitz, q(22));
        assert_eq!(to_f64(&s.lipschitz), 22.0);
    }

    #[test]
    fn lipschitz_of_zero_map_and_homogeneity() {
        assert_eq!(lipschitz_constant(&Matrix::filled(2, 4, q(0)), 2), q(0));
        let spec = examples::inward_cycle();
        let doubled = NetworkSpec { mu: spec.mu.map(|v| v * q(2)), ..spec.clone() };
        let doubled = doubled.with_lambda(spec.lambda.iter().map(|l| l * q(2)).collect());
        assert_eq!(structure(&doubled).lipschitz, structure(&spec).lipschitz * q(2));
    }
}
