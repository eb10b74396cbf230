use serde::Serialize;

use crate::cycles::{CycleStructure, DriftMap};
use crate::engine::Trace;
use crate::fluid::FluidSolution;
use crate::model::{NetworkSpec, ScaledInstance};
use crate::num::to_f64;

use super::HarnessError;

/// Diffusion-scaled copy of a trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaledTrace {
    pub times: Vec<f64>,
    pub x_hat: Vec<Vec<f64>>,
    pub y_hat: Vec<Vec<f64>>,
    pub z_hat: Vec<Vec<f64>>,
    /// Row-major `I × J`.
    pub psi_hat: Vec<Vec<f64>>,
    n: u64,
    x_star: Vec<f64>,
    psi_star: Vec<f64>,
}

/// Scaled headcounts for the unscaled integer state `(X, Y, Z, Ψ)`.
pub type IntegerState = (Vec<i64>, Vec<i64>, Vec<i64>, Vec<i64>);

impl ScaledTrace {
    /// Inverts the scaling, rounding to the nearest integer.
    pub fn unscale(&self) -> Vec<IntegerState> {
        let nf = self.n as f64;
        let root = nf.sqrt();
        let back = |v: &[f64], centre: &[f64]| -> Vec<i64> {
            v.iter().zip(centre).map(|(h, c)| (h * root + nf * c).round() as i64).collect()
        };
        let zeros = |len: usize| vec![0.0; len];
        (0..self.times.len())
            .map(|k| {
                (
                    back(&self.x_hat[k], &self.x_star),
                    back(&self.y_hat[k], &zeros(self.y_hat[k].len())),
                    back(&self.z_hat[k], &zeros(self.z_hat[k].len())),
                    back(&self.psi_hat[k], &self.psi_star),
                )
            })
            .collect()
    }
}

/// `X̂ = (X − nx*)/√n`, `Ŷ = Y/√n`, `Ẑ = Z/√n`, `Ψ̂ = (Ψ − nψ*)/√n`.
pub fn diffusion_scale(trace: &Trace, inst: &ScaledInstance, fluid: &FluidSolution) -> ScaledTrace {
    let nf = inst.n as f64;
    let root = inst.sqrt_n();
    let x_star = fluid.x_star_f64();
    let psi_star: Vec<f64> = fluid.psi_star_f64().as_slice().to_vec();
    let centre = |v: &[i64], c: &[f64]| -> Vec<f64> { v.iter().zip(c).map(|(&a, b)| (a as f64 - nf * b) / root).collect() };
    let plain = |v: &[i64]| -> Vec<f64> { v.iter().map(|&a| a as f64 / root).collect() };
    ScaledTrace {
        times: trace.records.iter().map(|r| r.time).collect(),
        x_hat: trace.records.iter().map(|r| centre(&r.x, &x_star)).collect(),
        y_hat: trace.records.iter().map(|r| plain(&r.y)).collect(),
        z_hat: trace.records.iter().map(|r| plain(&r.z)).collect(),
        psi_hat: trace.records.iter().map(|r| centre(&r.psi, &psi_star)).collect(),
        n: inst.n,
        x_star,
        psi_star,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepresentationReport {
    pub max_residual: f64,
    pub at_time: f64,
    pub records: usize,
}

/// Evaluates both sides of the diffusion-level representation
/// `X̂(t) = X̂(0) + Ŵ(t) + ∫H^n(X̂ − Ŷ, N̂ − Ẑ) + Σ_c m_c^n ∫Ψ̂_c`
/// at every recorded event and returns the largest discrepancy. Fails if
/// the discrepancy exceeds `tol` or a scaled constraint is broken.
pub fn check_representation(
    trace: &Trace,
    inst: &ScaledInstance,
    spec: &NetworkSpec,
    fluid: &FluidSolution,
    cycles: &CycleStructure,
    tol: f64,
) -> Result<RepresentationReport, HarnessError> {
    let (classes, stations) = (inst.class_count(), inst.station_count());
    let nf = inst.n as f64;
    let root = inst.sqrt_n();
    let x_star = fluid.x_star_f64();
    let nu: Vec<f64> = spec.nu.iter().map(to_f64).collect();
    let psi_star = fluid.psi_star_f64();
    let drift_n = DriftMap::new(&cycles.assign, &inst.mu_n);
    let directions_n = cycles.directions_n(&inst.mu_n);

    // Second-order rates of this instance.
    let lambda_hat_n: Vec<f64> =
        (0..classes).map(|i| root * (inst.lambda_n[i] / nf - to_f64(&spec.lambda[i]))).collect();
    let ell_n: Vec<f64> = (0..classes)
        .map(|i| {
            let shift: f64 = (0..stations)
                .filter(|&j| inst.mu_n[(i, j)] > 0.0)
                .map(|j| root * (inst.mu_n[(i, j)] - to_f64(&spec.mu[(i, j)])) * psi_star[(i, j)])
                .sum();
            lambda_hat_n[i] - shift
        })
        .collect();

    let first = trace.records.first().ok_or_else(|| HarnessError::InvalidScenario("empty trace".into()))?;
    let x_hat0: Vec<f64> = (0..classes).map(|i| (first.x[i] as f64 - nf * x_star[i]) / root).collect();

    let mut report = RepresentationReport { max_residual: 0.0, at_time: 0.0, records: trace.records.len() };
    for r in &trace.records {
        let t = r.time;
        let total_n: i64 = inst.servers.iter().sum();
        let busy: i64 = r.psi.iter().sum();
        if r.y.iter().any(|&v| v < 0) || r.z.iter().any(|&v| v < 0) {
            return Err(HarnessError::ScaledConstraint { time: t, detail: "negative queue or idle count".into() });
        }
        if r.x.iter().sum::<i64>() - r.y.iter().sum::<i64>() != total_n - r.z.iter().sum::<i64>() || busy != total_n - r.z.iter().sum::<i64>() {
            return Err(HarnessError::ScaledConstraint { time: t, detail: "sum(X - Y) != sum(N - Z)".into() });
        }
        for c in &cycles.cycles {
            let (i, j) = c.nonbasic;
            if r.psi[i * stations + j] < 0 {
                return Err(HarnessError::ScaledConstraint { time: t, detail: format!("cycle through ({}, {}) negative", i + 1, j + 1) });
            }
        }

        let integral = |i: usize, j: usize| r.integrals[i * stations + j];
        let a: Vec<f64> = (0..classes)
            .map(|i| ((0..stations).map(|j| integral(i, j)).sum::<f64>() - nf * x_star[i] * t) / root)
            .collect();
        let b: Vec<f64> = (0..stations)
            .map(|j| ((0..classes).map(|i| integral(i, j)).sum::<f64>() - nf * nu[j] * t) / root)
            .collect();
        let h_int = drift_n.apply_unchecked(&a, &b);

        for i in 0..classes {
            let a_hat = (r.arrivals[i] as f64 - inst.lambda_n[i] * t) / root;
            let s_hat: f64 = (0..stations)
                .map(|j| (r.departures[i * stations + j] as f64 - inst.mu_n[(i, j)] * integral(i, j)) / root)
                .sum();
            let w_hat = a_hat - s_hat + ell_n[i] * t;
            let push: f64 = cycles
                .cycles
                .iter()
                .zip(&directions_n)
                .map(|(c, m)| m[i] * integral(c.nonbasic.0, c.nonbasic.1) / root)
                .sum();
            let lhs = (r.x[i] as f64 - nf * x_star[i]) / root;
            let rhs = x_hat0[i] + w_hat + h_int[i] + push;
            let residual = (lhs - rhs).abs();
            if residual > report.max_residual || residual.is_nan() {
                report.max_residual = residual;
                report.at_time = t;
            }
        }
    }
    // Negated so that a NaN residual fails.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(report.max_residual <= tol) {
        return Err(HarnessError::Representation { time: report.at_time, residual: report.max_residual });
    }
    Ok(report)
}
