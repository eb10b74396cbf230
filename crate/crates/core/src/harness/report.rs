use std::fmt::Write as _;

use serde::Serialize;

use crate::cycles::CycleStructure;
use crate::fluid::{check_heavy_traffic, solve_static_lp};
use crate::model::NetworkSpec;
use crate::num::{display_q, Matrix, Q};

use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleReport {
    /// 1-based `(class, station)` of the nonbasic activity.
    pub nonbasic: (usize, usize),
    pub direction: Vec<String>,
    pub e_dot_m: String,
}

/// Everything `analyze` prints, with rationals rendered exactly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub xi_star: Vec<Vec<String>>,
    pub rho_star: String,
    pub psi_star: Vec<Vec<String>>,
    pub x_star: Vec<String>,
    pub heavy_traffic: bool,
    pub heavy_traffic_certificate: Option<String>,
    pub resource_pooling: bool,
    pub basic: Vec<(usize, usize)>,
    pub nonbasic: Vec<(usize, usize)>,
    pub cycles: Vec<CycleReport>,
    pub lipschitz: Option<String>,
    pub chosen_cycle: Option<usize>,
    pub verdict: String,
}

fn render(m: &Matrix<Q>) -> Vec<Vec<String>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| display_q(&m[(i, j)])).collect()).collect()
}

fn one_based(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    edges.iter().map(|&(i, j)| (i + 1, j + 1)).collect()
}

/// Solves the fluid program and, when the tree structure allows it, the
/// cycle geometry. A network outside heavy traffic is reported rather than
/// refused.
pub fn analyze(spec: &NetworkSpec) -> Result<AnalysisReport, HarnessError> {
    let fluid = solve_static_lp(spec)?;
    let ht = check_heavy_traffic(&fluid);
    let mut report = AnalysisReport {
        xi_star: render(&fluid.xi_star),
        rho_star: display_q(&fluid.rho_star),
        psi_star: render(&fluid.psi_star),
        x_star: fluid.x_star.iter().map(display_q).collect(),
        heavy_traffic: ht.holds,
        heavy_traffic_certificate: ht.certificate.map(|c| c.to_string()),
        resource_pooling: fluid.resource_pooling,
        basic: one_based(&fluid.basic_edges),
        nonbasic: one_based(&fluid.nonbasic_edges),
        cycles: Vec::new(),
        lipschitz: None,
        chosen_cycle: None,
        verdict: String::new(),
    };
    if !ht.holds || !fluid.resource_pooling {
        report.verdict = if ht.holds {
            "not analyzable: basic activities do not form a spanning tree".into()
        } else {
            "not in heavy traffic".into()
        };
        return Ok(report);
    }
    let cycles = CycleStructure::build(spec, &fluid)?;
    report.cycles = cycles
        .cycles
        .iter()
        .enumerate()
        .map(|(c, cyc)| CycleReport {
            nonbasic: (cyc.nonbasic.0 + 1, cyc.nonbasic.1 + 1),
            direction: cycles.directions[c].iter().map(display_q).collect(),
            e_dot_m: display_q(&cycles.e_dot_m(c)),
        })
        .collect();
    report.lipschitz = Some(display_q(&cycles.lipschitz));
    report.chosen_cycle = cycles.chosen.map(|c| c + 1);
    report.verdict = match cycles.chosen {
        Some(c) => format!("null-controllable via cycle {}", c + 1),
        None => format!("not null-controllable: {}", cycles.certificate()),
    };
    Ok(report)
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows = |m: &[Vec<String>]| m.iter().map(|r| format!("[{}]", r.join(", "))).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "xi*      {}", rows(&self.xi_star));
        let _ = writeln!(s, "rho*     {}", self.rho_star);
        let _ = writeln!(s, "psi*     {}", rows(&self.psi_star));
        let _ = writeln!(s, "x*       [{}]", self.x_star.join(", "));
        let _ = writeln!(s, "heavy traffic: {}{}", self.heavy_traffic, self.heavy_traffic_certificate.as_ref().map_or(String::new(), |c| format!(" ({c})")));
        let _ = writeln!(s, "resource pooling: {}", self.resource_pooling);
        let _ = writeln!(s, "basic    {:?}", self.basic);
        let _ = writeln!(s, "nonbasic {:?}", self.nonbasic);
        for (c, cyc) in self.cycles.iter().enumerate() {
            let _ = writeln!(
                s,
                "cycle {} via {:?}: m = ({}), e.m = {}",
                c + 1,
                cyc.nonbasic,
                cyc.direction.join(", "),
                cyc.e_dot_m
            );
        }
        if let Some(l) = &self.lipschitz {
            let _ = writeln!(s, "C'_H = {l}");
        }
        let _ = writeln!(s, "verdict: {}", self.verdict);
        s
    }
}
