//! Constrained diffusion on the half-space `{e·x ≤ −α}`.
//!
//! `X(t) = x + W(t) + ∫ H̃(X) ds + m η(t)` with `W` an `(ℓ, Σ)` Brownian
//! motion, `H̃(ξ) = H(ξ, (e·ξ) e_{j₀})`, and `η` the nondecreasing push along
//! the cycle direction `m` needed to keep `e·X ≤ −α`. Integrated by
//! Euler–Maruyama followed by an exact projection along `m`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::cycles::CycleStructure;
use crate::fluid::FluidSolution;
use crate::model::NetworkSpec;
use crate::num::{to_f64, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("push direction has e.m = {0} >= 0; the half-space cannot be enforced")]
    NotTransversal(f64),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("step {dt} and horizon {horizon} must be positive and finite")]
    BadGrid { dt: f64, horizon: f64 },
    #[error("station {0} out of range")]
    Station(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffusionSpec {
    pub ell: Vec<f64>,
    /// Diagonal of `Σ` (variances).
    pub sigma: Vec<f64>,
    pub h_tilde: Matrix<f64>,
    pub m: Vec<f64>,
    pub alpha: f64,
    pub x: Vec<f64>,
}

impl DiffusionSpec {
    pub fn new(
        ell: Vec<f64>,
        sigma: Vec<f64>,
        h_tilde: Matrix<f64>,
        m: Vec<f64>,
        alpha: f64,
        x: Vec<f64>,
    ) -> Result<Self, DiffusionError> {
        let d = ell.len();
        if sigma.len() != d || m.len() != d || x.len() != d || h_tilde.rows() != d || h_tilde.cols() != d {
            return Err(DiffusionError::Shape(format!("expected dimension {d} throughout")));
        }
        if sigma.iter().any(|&s| s < 0.0) {
            return Err(DiffusionError::Shape("variances must be nonnegative".into()));
        }
        let em: f64 = m.iter().sum();
        if em >= 0.0 {
            return Err(DiffusionError::NotTransversal(em));
        }
        Ok(DiffusionSpec { ell, sigma, h_tilde, m, alpha, x })
    }

    /// Limit diffusion of a network pushed along `cycle`, idling at `j0`.
    pub fn from_network(
        spec: &NetworkSpec,
        fluid: &FluidSolution,
        cycles: &CycleStructure,
        cycle: usize,
        j0: usize,
        alpha: f64,
        x: Vec<f64>,
    ) -> Result<Self, DiffusionError> {
        let classes = spec.class_count();
        if j0 >= spec.station_count() {
            return Err(DiffusionError::Station(j0 + 1));
        }
        let ell = (0..classes)
            .map(|i| {
                let offset: f64 = (0..spec.station_count())
                    .map(|j| to_f64(&spec.mu_hat[(i, j)]) * to_f64(&fluid.psi_star[(i, j)]))
                    .sum();
                to_f64(&spec.lambda_hat[i]) - offset
            })
            .collect();
        let h = cycles.drift.matrix.map(to_f64);
        let mut h_tilde = Matrix::filled(classes, classes, 0.0);
        for i in 0..classes {
            for k in 0..classes {
                h_tilde[(i, k)] = h[(i, k)] + h[(i, classes + j0)];
            }
        }
        let m = cycles.directions[cycle].iter().map(to_f64).collect();
        DiffusionSpec::new(ell, spec.brownian_variances(), h_tilde, m, alpha, x)
    }

    pub fn dim(&self) -> usize {
        self.ell.len()
    }

    /// `C_e = −e·m > 0`.
    pub fn c_e(&self) -> f64 {
        -self.m.iter().sum::<f64>()
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.ell[i] + (0..x.len()).map(|k| self.h_tilde[(i, k)] * x[k]).sum::<f64>();
        }
    }

    /// Pushes `y` along `m` until `e·y ≤ −α`; returns the amount pushed.
    fn project(&self, y: &mut [f64]) -> f64 {
        let ce = self.c_e();
        let excess = y.iter().sum::<f64>() + self.alpha;
        if excess <= 0.0 {
            return 0.0;
        }
        let base: Vec<f64> = y.to_vec();
        let mut push = excess / ce;
        // Rounding can leave e·y a few ulps above −α; nudge until it is not.
        for _ in 0..64 {
            for ((yi, bi), mi) in y.iter_mut().zip(&base).zip(&self.m) {
                *yi = bi + push * mi;
            }
            let left = y.iter().sum::<f64>() + self.alpha;
            if left <= 0.0 {
                break;
            }
            push += (left / ce).max(push.abs() * f64::EPSILON).max(f64::MIN_POSITIVE);
        }
        push
    }
}

/// Moves `x` onto the constraint set along `m`: `β = (e·x + α)^+ / C_e`.
pub fn initial_projection(x: &[f64], spec: &DiffusionSpec) -> (Vec<f64>, f64) {
    let mut y = x.to_vec();
    let beta = spec.project(&mut y);
    (y, beta)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffusionPath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// Cumulative push, including the initial jump.
    pub eta: Vec<f64>,
    /// `e·X̃` before projection at each step (entry `k` leads to point `k+1`).
    pub pre_projection: Vec<f64>,
    pub beta: f64,
    pub alpha: f64,
}

impl DiffusionPath {
    /// `max_t (e·X(t) + α)`.
    pub fn max_excess(&self) -> f64 {
        self.x.iter().map(|p| p.iter().sum::<f64>() + self.alpha).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn eta_nondecreasing(&self) -> bool {
        self.eta.windows(2).all(|w| w[1] >= w[0])
    }

    /// Steps where `η` grew although the unprojected point was below
    /// `−α − tol`.
    pub fn complementarity_violations(&self, tol: f64) -> usize {
        self.pre_projection
            .iter()
            .enumerate()
            .filter(|&(k, &pre)| pre < -self.alpha - tol && self.eta[k + 1] > self.eta[k])
            .count()
    }

    pub fn total_push(&self) -> f64 {
        self.eta.last().copied().unwrap_or(0.0)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.x.first().map_or(0, Vec::len);
        let mut header = vec!["time".to_string()];
        header.extend((1..=d).map(|i| format!("X{i}")));
        header.extend(["eX".to_string(), "eta".to_string()]);
        w.write_record(&header)?;
        for ((t, x), eta) in self.times.iter().zip(&self.x).zip(&self.eta) {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            row.push(x.iter().sum::<f64>().to_string());
            row.push(eta.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_grid(dt: f64, horizon: f64) -> Result<usize, DiffusionError> {
    if !(dt > 0.0 && horizon > 0.0 && dt.is_finite() && horizon.is_finite()) {
        return Err(DiffusionError::BadGrid { dt, horizon });
    }
    Ok((horizon / dt).round().max(1.0) as usize)
}

fn integrate(spec: &DiffusionSpec, dt: f64, steps: usize, mut noise: impl FnMut(&mut [f64])) -> DiffusionPath {
    let d = spec.dim();
    let (start, beta) = initial_projection(&spec.x, spec);
    let scale: Vec<f64> = spec.sigma.iter().map(|s| (s * dt).sqrt()).collect();
    let mut path = DiffusionPath {
        dt,
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        eta: Vec::with_capacity(steps + 1),
        pre_projection: Vec::with_capacity(steps),
        beta,
        alpha: spec.alpha,
    };
    path.times.push(0.0);
    path.x.push(start.clone());
    path.eta.push(beta);
    let mut x = start;
    let mut drift = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut eta = beta;
    for k in 1..=steps {
        spec.drift(&x, &mut drift);
        noise(&mut z);
        for i in 0..d {
            x[i] += drift[i] * dt + scale[i] * z[i];
        }
        path.pre_projection.push(x.iter().sum());
        eta += spec.project(&mut x);
        path.times.push(k as f64 * dt);
        path.x.push(x.clone());
        path.eta.push(eta);
    }
    path
}

/// One Euler–Maruyama path on `[0, horizon]` with step `dt`.
pub fn simulate_reflected<R: Rng + ?Sized>(
    spec: &DiffusionSpec,
    dt: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<DiffusionPath, DiffusionError> {
    let steps = check_grid(dt, horizon)?;
    Ok(integrate(spec, dt, steps, |z| {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }))
}

/// Runs the scheme at `dt` and `dt/2` on the same Brownian path and returns
/// the largest coordinate gap at the shared grid points.
pub fn convergence_gap<R: Rng + ?Sized>(
    spec: &DiffusionSpec,
    dt: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<f64, DiffusionError> {
    let steps = check_grid(dt, horizon)?;
    let d = spec.dim();
    let fine_noise: Vec<f64> = (0..2 * steps * d).map(|_| rng.sample(StandardNormal)).collect();
    let mut k = 0;
    let fine = integrate(spec, dt / 2.0, 2 * steps, |z| {
        z.copy_from_slice(&fine_noise[k * d..(k + 1) * d]);
        k += 1;
    });
    let mut k = 0;
    let coarse = integrate(spec, dt, steps, |z| {
        for (i, v) in z.iter_mut().enumerate() {
            *v = (fine_noise[2 * k * d + i] + fine_noise[(2 * k + 1) * d + i]) / 2f64.sqrt();
        }
        k += 1;
    });
    let gap = coarse
        .x
        .iter()
        .enumerate()
        .flat_map(|(k, c)| c.iter().zip(&fine.x[2 * k]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(gap)
}
