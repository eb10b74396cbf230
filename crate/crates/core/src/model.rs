//! Network specification and the integer-valued n-th system built from it.

use std::fmt;
use std::str::FromStr;

use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::FluidSolution;
use crate::num::{to_f64, Matrix, Q};

/// Unit-mean interarrival distribution of one customer class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InterarrivalLaw {
    Exponential,
    Deterministic,
    /// Sum of `k` exponentials, rescaled to mean 1.
    Erlang(u32),
    /// Uniform on `[a, b]`, rescaled by `2 / (a + b)` to mean 1.
    Uniform(f64, f64),
}

impl InterarrivalLaw {
    /// Squared coefficient of variation of the unit-mean variable.
    pub fn scv(&self) -> f64 {
        match *self {
            InterarrivalLaw::Exponential => 1.0,
            InterarrivalLaw::Deterministic => 0.0,
            InterarrivalLaw::Erlang(k) => 1.0 / f64::from(k),
            InterarrivalLaw::Uniform(a, b) => (b - a).powi(2) / (3.0 * (a + b).powi(2)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InterarrivalLaw::Exponential => Exp1.sample(rng),
            InterarrivalLaw::Deterministic => 1.0,
            InterarrivalLaw::Erlang(k) => {
                let k = f64::from(k);
                Gamma::new(k, 1.0 / k).expect("erlang shape checked at parse").sample(rng)
            }
            InterarrivalLaw::Uniform(a, b) => {
                let u: f64 = rng.random();
                (a + (b - a) * u) * 2.0 / (a + b)
            }
        }
    }

    fn problem(&self) -> Option<String> {
        match *self {
            InterarrivalLaw::Erlang(0) => Some("erlang shape must be at least 1".into()),
            InterarrivalLaw::Uniform(a, b) if !(a >= 0.0 && b > a) => {
                Some(format!("uniform support [{a}, {b}] must satisfy 0 <= a < b"))
            }
            _ => None,
        }
    }
}

impl fmt::Display for InterarrivalLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterarrivalLaw::Exponential => write!(f, "exponential"),
            InterarrivalLaw::Deterministic => write!(f, "deterministic"),
            InterarrivalLaw::Erlang(k) => write!(f, "erlang({k})"),
            InterarrivalLaw::Uniform(a, b) => write!(f, "uniform({a},{b})"),
        }
    }
}

impl FromStr for InterarrivalLaw {
    type Err = String;

    /// Accepts `exponential`, `deterministic`, `erlang(k)` and `uniform(a,b)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let args = |name: &str| -> Option<Vec<String>> {
            let rest = t.strip_prefix(name)?.trim();
            let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
            Some(inner.split(',').map(|a| a.trim().to_string()).collect())
        };
        match t.as_str() {
            "exponential" | "exp" | "m" => return Ok(InterarrivalLaw::Exponential),
            "deterministic" | "det" | "d" => return Ok(InterarrivalLaw::Deterministic),
            _ => {}
        }
        if let Some(a) = args("erlang") {
            let k: u32 = a.first().and_then(|v| v.parse().ok()).ok_or_else(|| s.to_string())?;
            if a.len() != 1 || k == 0 {
                return Err(format!("bad erlang law {s:?}"));
            }
            return Ok(InterarrivalLaw::Erlang(k));
        }
        if let Some(a) = args("uniform") {
            let vals: Vec<f64> = a.iter().filter_map(|v| v.parse().ok()).collect();
            if vals.len() != 2 || !(vals[0] >= 0.0 && vals[1] > vals[0]) {
                return Err(format!("bad uniform law {s:?}"));
            }
            return Ok(InterarrivalLaw::Uniform(vals[0], vals[1]));
        }
        Err(format!("unknown interarrival law {s:?}"))
    }
}

/// First- and second-order parameters of the network family.
///
/// Rates are held as exact rationals so the fluid program can be solved
/// without tolerances; stochastic code reads them through the `*_f64`
/// helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub lambda: Vec<Q>,
    pub lambda_hat: Vec<Q>,
    /// Class-by-station service rates; zero exactly off the activity set.
    pub mu: Matrix<Q>,
    pub mu_hat: Matrix<Q>,
    pub nu: Vec<Q>,
    pub interarrival: Vec<InterarrivalLaw>,
    /// Declared squared coefficients of variation; must agree with `interarrival`.
    pub scv: Vec<f64>,
    pub x0_hat: Vec<Q>,
}

impl NetworkSpec {
    /// Builds a spec with exponential arrivals and zero second-order terms.
    pub fn first_order(lambda: Vec<Q>, mu: Matrix<Q>, nu: Vec<Q>) -> Self {
        let classes = lambda.len();
        let stations = nu.len();
        NetworkSpec {
            lambda_hat: vec![Q::zero(); classes],
            mu_hat: Matrix::filled(classes, stations, Q::zero()),
            interarrival: vec![InterarrivalLaw::Exponential; classes],
            scv: vec![1.0; classes],
            x0_hat: vec![Q::zero(); classes],
            lambda,
            mu,
            nu,
        }
    }

    pub fn with_x0_hat(mut self, x0_hat: Vec<Q>) -> Self {
        self.x0_hat = x0_hat;
        self
    }

    pub fn with_interarrival(mut self, laws: Vec<InterarrivalLaw>) -> Self {
        self.scv = laws.iter().map(InterarrivalLaw::scv).collect();
        self.interarrival = laws;
        self
    }

    pub fn class_count(&self) -> usize {
        self.lambda.len()
    }

    pub fn station_count(&self) -> usize {
        self.nu.len()
    }

    pub fn is_activity(&self, i: usize, j: usize) -> bool {
        !self.mu[(i, j)].is_zero()
    }

    pub fn activities(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.class_count() {
            for j in 0..self.station_count() {
                if self.is_activity(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// `μ̄_ij = ν_j μ_ij`.
    pub fn mu_bar(&self) -> Matrix<Q> {
        let mut out = self.mu.clone();
        for i in 0..self.class_count() {
            for j in 0..self.station_count() {
                out[(i, j)] = &self.mu[(i, j)] * &self.nu[j];
            }
        }
        out
    }

    pub fn lambda_f64(&self) -> Vec<f64> {
        self.lambda.iter().map(to_f64).collect()
    }

    pub fn mu_f64(&self) -> Matrix<f64> {
        self.mu.map(to_f64)
    }

    /// Diagonal of the limiting Brownian covariance, `λ_i (C²_i + 1)`.
    pub fn brownian_variances(&self) -> Vec<f64> {
        self.lambda_f64().iter().zip(&self.scv).map(|(l, c2)| l * c2 + l).collect()
    }

    /// Same network with the first-order arrival rates replaced.
    pub fn with_lambda(&self, lambda: Vec<Q>) -> Self {
        let mut out = self.clone();
        out.lambda = lambda;
        out
    }
}

/// One violated requirement of a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum SpecViolation {
    Shape(String),
    NonPositiveArrivalRate { class: usize },
    NonPositiveStaffing { station: usize },
    NegativeServiceRate { class: usize, station: usize },
    SecondOrderOffActivity { class: usize, station: usize },
    ClassUnservable { class: usize },
    StationIdle { station: usize },
    NegativeScv { class: usize },
    ScvMismatch { class: usize, declared: String, law: String },
    BadLaw { class: usize, reason: String },
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use SpecViolation::*;
        match self {
            Shape(s) => write!(f, "shape mismatch: {s}"),
            NonPositiveArrivalRate { class } => write!(f, "class {}: lambda must be > 0", class + 1),
            NonPositiveStaffing { station } => write!(f, "station {}: nu must be > 0", station + 1),
            NegativeServiceRate { class, station } => {
                write!(f, "activity ({}, {}): mu must be >= 0", class + 1, station + 1)
            }
            SecondOrderOffActivity { class, station } => write!(
                f,
                "pair ({}, {}) is not an activity but mu_hat is nonzero",
                class + 1,
                station + 1
            ),
            ClassUnservable { class } => write!(f, "class {} is unservable (no activity)", class + 1),
            StationIdle { station } => write!(f, "station {} serves no class", station + 1),
            NegativeScv { class } => write!(f, "class {}: scv must be >= 0", class + 1),
            ScvMismatch { class, declared, law } => write!(
                f,
                "class {}: declared scv {declared} disagrees with interarrival law scv {law}",
                class + 1
            ),
            BadLaw { class, reason } => write!(f, "class {}: {reason}", class + 1),
        }
    }
}

/// Lists every violated invariant; an empty report means the spec is valid.
pub fn validate_spec(spec: &NetworkSpec) -> Vec<SpecViolation> {
    let mut out = Vec::new();
    let classes = spec.class_count();
    let stations = spec.station_count();
    if classes == 0 || stations == 0 {
        out.push(SpecViolation::Shape("need at least one class and one station".into()));
        return out;
    }
    let vec_lens = [
        ("lambda_hat", spec.lambda_hat.len(), classes),
        ("interarrival", spec.interarrival.len(), classes),
        ("scv", spec.scv.len(), classes),
        ("x0_hat", spec.x0_hat.len(), classes),
    ];
    for (name, got, want) in vec_lens {
        if got != want {
            out.push(SpecViolation::Shape(format!("{name} has {got} entries, expected {want}")));
        }
    }
    for (name, m) in [("mu", &spec.mu), ("mu_hat", &spec.mu_hat)] {
        if m.rows() != classes || m.cols() != stations {
            out.push(SpecViolation::Shape(format!(
                "{name} is {}x{}, expected {classes}x{stations}",
                m.rows(),
                m.cols()
            )));
        }
    }
    if !out.is_empty() {
        return out;
    }

    for (i, l) in spec.lambda.iter().enumerate() {
        if !l.is_positive() {
            out.push(SpecViolation::NonPositiveArrivalRate { class: i });
        }
    }
    for (j, v) in spec.nu.iter().enumerate() {
        if !v.is_positive() {
            out.push(SpecViolation::NonPositiveStaffing { station: j });
        }
    }
    for i in 0..classes {
        for j in 0..stations {
            if spec.mu[(i, j)].is_negative() {
                out.push(SpecViolation::NegativeServiceRate { class: i, station: j });
            }
            if spec.mu[(i, j)].is_zero() && !spec.mu_hat[(i, j)].is_zero() {
                out.push(SpecViolation::SecondOrderOffActivity { class: i, station: j });
            }
        }
    }
    for i in 0..classes {
        if (0..stations).all(|j| !spec.mu[(i, j)].is_positive()) {
            out.push(SpecViolation::ClassUnservable { class: i });
        }
    }
    for j in 0..stations {
        if (0..classes).all(|i| !spec.mu[(i, j)].is_positive()) {
            out.push(SpecViolation::StationIdle { station: j });
        }
    }
    for (i, (law, scv)) in spec.interarrival.iter().zip(&spec.scv).enumerate() {
        if let Some(reason) = law.problem() {
            out.push(SpecViolation::BadLaw { class: i, reason });
            continue;
        }
        if *scv < 0.0 {
            out.push(SpecViolation::NegativeScv { class: i });
        } else if (scv - law.scv()).abs() > 1e-12 {
            out.push(SpecViolation::ScvMismatch {
                class: i,
                declared: scv.to_string(),
                law: law.scv().to_string(),
            });
        }
    }
    out
}

/// Rates and head counts of the n-th system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaledInstance {
    pub n: u64,
    pub lambda_n: Vec<f64>,
    pub mu_n: Matrix<f64>,
    pub servers: Vec<i64>,
    pub x0: Vec<i64>,
    /// `N̂_j = n^{1/2}(N_j / n − ν_j)`.
    pub n_hat: Vec<f64>,
    pub interarrival: Vec<InterarrivalLaw>,
}

impl ScaledInstance {
    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    pub fn class_count(&self) -> usize {
        self.lambda_n.len()
    }

    pub fn station_count(&self) -> usize {
        self.servers.len()
    }

    pub fn total_servers(&self) -> i64 {
        self.servers.iter().sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("scale parameter n must be >= 1")]
    ZeroScale,
    #[error("head count {what} = {value:e} does not fit exactly in an integer")]
    Overflow { what: String, value: f64 },
    #[error("class {class}: scaled service rate at activity ({class}, {station}) is {rate}, must stay positive")]
    RateSignFlip { class: usize, station: usize, rate: f64 },
    #[error("class {class}: scaled arrival rate {rate} must be positive")]
    NonPositiveArrival { class: usize, rate: f64 },
}

const MAX_EXACT: f64 = 9_007_199_254_740_992.0; // 2^53

fn exact_count(what: impl Into<String>, value: f64) -> Result<i64, ModelError> {
    if !value.is_finite() || value.abs() >= MAX_EXACT {
        return Err(ModelError::Overflow { what: what.into(), value });
    }
    Ok(value as i64)
}

/// Builds the n-th system: `λ^n = nλ + n^{1/2}λ̂`, `μ^n = μ + n^{-1/2}μ̂`,
/// `N^n = round(nν)`, `X^{0,n} = max(0, round(n x* + n^{1/2} x))`.
pub fn scale_instance(
    spec: &NetworkSpec,
    fluid: &FluidSolution,
    n: u64,
) -> Result<ScaledInstance, ModelError> {
    if n == 0 {
        return Err(ModelError::ZeroScale);
    }
    let nf = n as f64;
    let root = nf.sqrt();
    let nq = Q::from_integer(n.into());

    let mut lambda_n = Vec::with_capacity(spec.class_count());
    for (i, (l, lh)) in spec.lambda.iter().zip(&spec.lambda_hat).enumerate() {
        let rate = to_f64(&(l * &nq)) + root * to_f64(lh);
        if rate <= 0.0 || !rate.is_finite() {
            return Err(ModelError::NonPositiveArrival { class: i + 1, rate });
        }
        lambda_n.push(rate);
    }

    let mut mu_n = Matrix::filled(spec.class_count(), spec.station_count(), 0.0);
    for i in 0..spec.class_count() {
        for j in 0..spec.station_count() {
            if spec.is_activity(i, j) {
                let rate = to_f64(&spec.mu[(i, j)]) + to_f64(&spec.mu_hat[(i, j)]) / root;
                if rate <= 0.0 {
                    return Err(ModelError::RateSignFlip { class: i + 1, station: j + 1, rate });
                }
                mu_n[(i, j)] = rate;
            }
        }
    }

    let mut servers = Vec::with_capacity(spec.station_count());
    let mut n_hat = Vec::with_capacity(spec.station_count());
    for (j, nu) in spec.nu.iter().enumerate() {
        let target = nu * &nq;
        let rounded = target.round();
        let count = rounded
            .to_integer()
            .to_i64()
            .filter(|c| (*c as f64).abs() < MAX_EXACT)
            .ok_or_else(|| ModelError::Overflow {
                what: format!("N_{}", j + 1),
                value: to_f64(&target),
            })?;
        servers.push(count);
        n_hat.push(to_f64(&(rounded - target)) / root);
    }

    let mut x0 = Vec::with_capacity(spec.class_count());
    for (i, (xs, xh)) in fluid.x_star.iter().zip(&spec.x0_hat).enumerate() {
        let centre = to_f64(&(xs * &nq));
        let value = (centre + root * to_f64(xh)).round().max(0.0);
        x0.push(exact_count(format!("X0_{}", i + 1), value)?);
    }

    Ok(ScaledInstance {
        n,
        lambda_n,
        mu_n,
        servers,
        x0,
        n_hat,
        interarrival: spec.interarrival.clone(),
    })
}
