//! Nonpreemptive routing control for two classes and two stations.
//!
//! Internally the network is relabeled so that the single nonbasic
//! activity is (class 2, station 1), written `(1, 0)` zero-based. Class-2
//! arrivals are split by a biased coin into sub-class α (sent to station 1,
//! i.e. along the nonbasic activity) and β (sent to station 2); class-1
//! arrivals go to whichever station has more idle servers.

use num_traits::ToPrimitive;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cycles::CycleStructure;
use crate::engine::{Occupancy, Policy, PolicyError, PolicyStats};
use crate::fluid::FluidSolution;
use crate::model::{NetworkSpec, ScaledInstance};
use crate::num::{to_f64, Matrix};

/// Expert overrides for the routing constants. Unset values are derived;
/// an overridden `κ` feeds the derived `δ`, and an overridden `δ` the
/// derived `γ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ConstantOverrides {
    pub kappa: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
}

impl ConstantOverrides {
    pub fn is_empty(&self) -> bool {
        self.kappa.is_none() && self.delta.is_none() && self.gamma.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonpreemptiveConfig {
    pub c_h: f64,
    /// `C_m = −e·m > 0`.
    pub c_m: f64,
    /// `‖m‖₁`.
    pub m_norm: f64,
    pub kappa: f64,
    pub delta: f64,
    pub gamma: f64,
    pub overridden: bool,
    /// `class_perm[internal] = external`.
    pub class_perm: [usize; 2],
    pub station_perm: [usize; 2],
    /// First-order rates of the relabeled class 2 and activity (2, 1).
    pub lambda2: f64,
    pub mu21: f64,
    /// Fluid total `e·x*`.
    pub total_star: f64,
}

/// `κ = (2 + 16C′)/C_m`, `δ = min(1/(8κ‖m‖), ln 2 / C′)`, `γ = ln 8 / δ`.
pub fn routing_constants(c_h: f64, c_m: f64, m_norm: f64) -> (f64, f64, f64) {
    let kappa = (2.0 + 16.0 * c_h) / c_m;
    let delta = delta_for(kappa, c_h, m_norm);
    (kappa, delta, 8f64.ln() / delta)
}

fn delta_for(kappa: f64, c_h: f64, m_norm: f64) -> f64 {
    let first = 1.0 / (8.0 * kappa * m_norm);
    if c_h > 0.0 {
        first.min(2f64.ln() / c_h)
    } else {
        first
    }
}

pub fn derive_constants(
    spec: &NetworkSpec,
    fluid: &FluidSolution,
    cycles: &CycleStructure,
    overrides: ConstantOverrides,
) -> Result<NonpreemptiveConfig, PolicyError> {
    if spec.class_count() != 2 || spec.station_count() != 2 {
        return Err(PolicyError(format!(
            "the nonpreemptive policy supports 2 classes and 2 stations only, got {}x{}",
            spec.class_count(),
            spec.station_count()
        )));
    }
    if cycles.cycles.len() != 1 || cycles.chosen != Some(0) {
        return Err(PolicyError(format!("not null-controllable: {}", cycles.certificate())));
    }
    let m: Vec<f64> = cycles.directions[0].iter().map(to_f64).collect();
    let c_m = -m.iter().sum::<f64>();
    let m_norm = m.iter().map(|v| v.abs()).sum();
    let c_h = to_f64(&cycles.lipschitz);
    let (i, j) = cycles.cycles[0].nonbasic;
    let class_perm = if i == 1 { [0, 1] } else { [1, 0] };
    let station_perm = if j == 0 { [0, 1] } else { [1, 0] };

    let (mut kappa, mut delta, mut gamma) = routing_constants(c_h, c_m, m_norm);
    if let Some(k) = overrides.kappa {
        kappa = k;
        delta = delta_for(kappa, c_h, m_norm);
        gamma = 8f64.ln() / delta;
    }
    if let Some(d) = overrides.delta {
        delta = d;
        gamma = 8f64.ln() / delta;
    }
    if let Some(g) = overrides.gamma {
        gamma = g;
    }
    if !(kappa > 0.0 && delta > 0.0 && gamma > 0.0) || !(kappa.is_finite() && gamma.is_finite()) {
        return Err(PolicyError(format!("constants must be positive and finite: kappa {kappa}, delta {delta}, gamma {gamma}")));
    }
    Ok(NonpreemptiveConfig {
        c_h,
        c_m,
        m_norm,
        kappa,
        delta,
        gamma,
        overridden: !overrides.is_empty(),
        class_perm,
        station_perm,
        lambda2: to_f64(&spec.lambda[class_perm[1]]),
        mu21: to_f64(&spec.mu[(class_perm[1], station_perm[0])]),
        total_star: fluid.x_star.iter().map(to_f64).sum(),
    })
}

fn ceil_half(v: i64) -> i64 {
    v.div_euclid(2) + v.rem_euclid(2)
}

fn floor_half(v: i64) -> i64 {
    v.div_euclid(2)
}

/// Initial in-service matrix (relabeled) for headcounts `x` that are all
/// to be served: `Ψ₂₁ = ⌈n^{5/8}κ⌉` and the rest chosen so that nobody
/// waits and the idle counts differ by at most one.
pub fn initial_arrangement(x: [i64; 2], servers: [i64; 2], n: u64, kappa: f64) -> Result<[[i64; 2]; 2], PolicyError> {
    let psi21 = ((n as f64).powf(0.625) * kappa).ceil();
    let psi21 = psi21
        .to_i64()
        .filter(|v| v.abs() < 1 << 53)
        .ok_or_else(|| PolicyError(format!("initial nonbasic load {psi21:e} is not representable")))?;
    let (n1, n2) = (servers[0], servers[1]);
    let psi = [
        [ceil_half(n1 - n2 + x[0] + x[1]) - psi21, floor_half(n2 - n1 + x[0] - x[1]) + psi21],
        [psi21, x[1] - psi21],
    ];
    let z = [n1 - psi[0][0] - psi[1][0], n2 - psi[0][1] - psi[1][1]];
    if psi.iter().flatten().any(|&v| v < 0) || z.iter().any(|&v| v < 0) {
        return Err(PolicyError(format!(
            "initial arrangement infeasible at n = {n}: Psi = {psi:?}, idle = {z:?} \
             (the nonbasic load ceil(n^(5/8) kappa) = {psi21} does not fit; increase n or override kappa)"
        )));
    }
    Ok(psi)
}

#[derive(Clone, Debug)]
pub struct NonpreemptivePolicy {
    config: NonpreemptiveConfig,
    n: u64,
    sqrt_n: f64,
    held: i64,
    threshold: i64,
    released: bool,
    tau0: Option<f64>,
    class2_arrivals: u64,
    coin_scale: f64,
    coin_rate: f64,
    stats: PolicyStats,
    /// Set once a station has had no idle server.
    pub saturated_at: Option<f64>,
}

impl NonpreemptivePolicy {
    pub fn new(inst: &ScaledInstance, config: NonpreemptiveConfig) -> Self {
        let nf = inst.n as f64;
        NonpreemptivePolicy {
            n: inst.n,
            sqrt_n: inst.sqrt_n(),
            held: 0,
            threshold: 0,
            released: false,
            tau0: None,
            class2_arrivals: 0,
            coin_scale: config.kappa * (config.gamma + config.mu21) / (config.lambda2 * nf.powf(0.375)),
            coin_rate: config.gamma / (nf * config.lambda2),
            stats: PolicyStats::default(),
            saturated_at: None,
            config,
        }
    }

    pub fn config(&self) -> &NonpreemptiveConfig {
        &self.config
    }

    /// Class-1 customers held in queue at time 0 and not yet released.
    pub fn held(&self) -> i64 {
        self.held
    }

    /// Probability that the `k`-th class-2 arrival is of sub-class α.
    pub fn alpha(&self, k: u64) -> f64 {
        let v = self.coin_scale * (self.coin_rate * (k as f64 - 1.0)).exp();
        v.min(1.0)
    }

    fn ext(&self, class: usize, station: usize) -> (usize, usize) {
        (self.config.class_perm[class], self.config.station_perm[station])
    }

    fn idle(&self, occ: &Occupancy, station: usize) -> i64 {
        occ.z[self.config.station_perm[station]]
    }

    fn release(&mut self, occ: &mut Occupancy) {
        let (z1, z2) = (self.idle(occ, 0), self.idle(occ, 1));
        let r = self.held;
        let wanted = ceil_half(z2 - z1 + r);
        let g1 = wanted.clamp((r - z2).max(0), r.min(z1));
        if g1 != wanted {
            self.stats.release_clamps += 1;
        }
        let g2 = r - g1;
        let (c, s1) = self.ext(0, 0);
        let (_, s2) = self.ext(0, 1);
        occ.y[c] -= r;
        occ.psi[(c, s1)] += g1;
        occ.psi[(c, s2)] += g2;
        occ.z[s1] -= g1;
        occ.z[s2] -= g2;
        self.held = 0;
        self.released = true;
        self.stats.released += r as u64;
    }

    fn note_saturation(&mut self, occ: &Occupancy, time: f64) {
        if self.saturated_at.is_none() && occ.z.contains(&0) {
            self.saturated_at = Some(time);
        }
    }

    /// Time at which the idle count first exceeded the release threshold.
    pub fn tau0(&self) -> Option<f64> {
        self.tau0
    }
}

impl Policy for NonpreemptivePolicy {
    fn name(&self) -> &'static str {
        "nonpreemptive"
    }

    fn initialize(&mut self, occ: &mut Occupancy) -> Result<(), PolicyError> {
        let cp = self.config.class_perm;
        let sp = self.config.station_perm;
        let ext_servers: Vec<i64> = (0..2).map(|j| occ.z[j] + occ.psi[(0, j)] + occ.psi[(1, j)]).collect();
        let servers = [ext_servers[sp[0]], ext_servers[sp[1]]];
        let mut x = [occ.x[cp[0]], occ.x[cp[1]]];
        let total = (x[0] + x[1]) as f64;
        let scaled_total = (total - self.n as f64 * self.config.total_star) / self.sqrt_n;
        if scaled_total >= -1.0 {
            let r = (x[0] + x[1] - servers[0] - servers[1] + self.sqrt_n.ceil() as i64).max(0);
            if r > x[0] {
                return Err(PolicyError(format!("cannot hold {r} class-1 customers, only {} present", x[0])));
            }
            x[0] -= r;
            self.held = r;
            self.threshold = r + self.sqrt_n.ceil() as i64;
        }
        let psi = initial_arrangement(x, servers, self.n, self.config.kappa)?;
        let mut full = Matrix::filled(2, 2, 0);
        for a in 0..2 {
            for b in 0..2 {
                full[(cp[a], sp[b])] = psi[a][b];
            }
        }
        occ.set_assignment(full, &ext_servers);
        if self.held > 0 && occ.z.iter().sum::<i64>() > self.threshold {
            self.tau0 = Some(0.0);
        }
        self.note_saturation(occ, 0.0);
        Ok(())
    }

    fn on_arrival(&mut self, occ: &mut Occupancy, class: usize, time: f64, coin: &mut ChaCha8Rng) -> Result<(), PolicyError> {
        if self.held > 0 && self.tau0.is_some() {
            self.release(occ);
        }
        let internal = if self.config.class_perm[0] == class { 0 } else { 1 };
        let target = if internal == 0 {
            if self.idle(occ, 0) > self.idle(occ, 1) {
                0
            } else {
                1
            }
        } else {
            self.class2_arrivals += 1;
            let p = self.alpha(self.class2_arrivals);
            if coin.random::<f64>() < p {
                self.stats.alpha_arrivals += 1;
                0
            } else {
                1
            }
        };
        let (c, s) = self.ext(internal, target);
        let (_, other) = self.ext(internal, 1 - target);
        if !occ.start_service(c, s) {
            if occ.start_service(c, other) {
                self.stats.full_station_reroutes += 1;
            } else {
                self.stats.full_station_queued += 1;
            }
        }
        self.note_saturation(occ, time);
        Ok(())
    }

    fn on_completion(&mut self, occ: &mut Occupancy, _: usize, _: usize, time: f64) -> Result<(), PolicyError> {
        if self.held > 0 && self.tau0.is_none() && occ.z.iter().sum::<i64>() > self.threshold {
            self.tau0 = Some(time);
        }
        Ok(())
    }

    fn stats(&self) -> PolicyStats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::fluid::solve_static_lp;
    use crate::model::scale_instance;
    use crate::num::q;

    fn config(spec: &NetworkSpec, overrides: ConstantOverrides) -> Result<NonpreemptiveConfig, PolicyError> {
        let fluid = solve_static_lp(spec).unwrap();
        let cs = CycleStructure::build(spec, &fluid).unwrap();
        derive_constants(spec, &fluid, &cs, overrides)
    }

    #[test]
    fn constants_for_inward_cycle() {
        let c = config(&examples::inward_cycle(), ConstantOverrides::default()).unwrap();
        assert_eq!(c.c_m, 1.0);
        assert_eq!(c.m_norm, 5.0);
        assert_eq!(c.c_h, 22.0);
        assert_eq!(c.kappa, 354.0);
        assert_eq!(c.delta, 1.0 / (8.0 * 354.0 * 5.0));
        assert!((c.gamma - 8f64.ln() * 14_160.0).abs() < 1e-6);
        assert_eq!(c.class_perm, [0, 1]);
        assert_eq!(c.station_perm, [0, 1]);
        assert_eq!((c.lambda2, c.mu21), (2.0, 2.0));
    }

    #[test]
    fn constants_degenerate_and_homogeneous() {
        let (k, d, g) = routing_constants(0.0, 2.0, 3.0);
        assert_eq!(k, 1.0);
        assert_eq!(d, 1.0 / 24.0);
        assert!((g - 8f64.ln() * 24.0).abs() < 1e-12);
        let (k1, ..) = routing_constants(5.0, 1.0, 3.0);
        let (k2, ..) = routing_constants(5.0, 2.0, 3.0);
        assert_eq!(k1, 2.0 * k2);
        let (k3, d3, g3) = routing_constants(5.0, 2.0, 3.0);
        assert_eq!((k3, d3, g3), routing_constants(5.0, 2.0, 3.0));
    }

    #[test]
    fn refuses_unsupported_shapes() {
        assert!(config(&examples::two_by_three(), ConstantOverrides::default()).is_err());
        let err = config(&examples::outward_cycle(), ConstantOverrides::default()).unwrap_err();
        assert!(err.0.contains("not null-controllable"));
    }

    #[test]
    fn reversed_orientation_is_relabeled() {
        let c = config(&examples::reversed_cycle(), ConstantOverrides::default()).unwrap();
        // Nonbasic activity is (1, 1) one-based.
        assert_eq!(c.class_perm, [1, 0]);
        assert_eq!(c.station_perm, [0, 1]);
        assert_eq!(c.mu21, 3.0);
    }

    #[test]
    fn overrides_cascade() {
        let c = config(&examples::inward_cycle(), ConstantOverrides { kappa: Some(2.0), ..Default::default() }).unwrap();
        assert_eq!(c.kappa, 2.0);
        assert_eq!(c.delta, (1.0f64 / 80.0).min(2f64.ln() / 22.0));
        assert!(c.overridden);
        let c = config(&examples::inward_cycle(), ConstantOverrides { gamma: Some(1.5), ..Default::default() }).unwrap();
        assert_eq!(c.gamma, 1.5);
        assert!(config(&examples::inward_cycle(), ConstantOverrides { kappa: Some(-1.0), ..Default::default() }).is_err());
    }

    #[test]
    fn arrangement_balances() {
        let psi = initial_arrangement([14_900, 4_900], [10_000, 10_000], 10_000, 1.0).unwrap();
        assert_eq!(psi[1][0], 317);
        assert_eq!(psi[0][0] + psi[0][1], 14_900);
        assert_eq!(psi[1][0] + psi[1][1], 4_900);
        let z1 = 10_000 - psi[0][0] - psi[1][0];
        let z2 = 10_000 - psi[0][1] - psi[1][1];
        assert!((z1 - z2).abs() <= 1);
        assert_eq!(z1 + z2, 200);
    }

    #[test]
    fn arrangement_with_derived_kappa_does_not_fit_small_n() {
        let err = initial_arrangement([14_900, 4_900], [10_000, 10_000], 10_000, 354.0).unwrap_err();
        assert!(err.0.contains("increase n"));
    }

    #[test]
    fn coin_is_monotone_and_capped() {
        let spec = examples::inward_cycle().with_x0_hat(vec![q(-1), q(-1)]);
        let fluid = solve_static_lp(&spec).unwrap();
        let inst = scale_instance(&spec, &fluid, 10_000).unwrap();
        let c = config(&spec, ConstantOverrides { kappa: Some(1.0), gamma: Some(1.0), ..Default::default() }).unwrap();
        let p = NonpreemptivePolicy::new(&inst, c);
        let first = 1.0 * (1.0 + 2.0) / (2.0 * 10_000f64.powf(0.375));
        assert!((p.alpha(1) - first).abs() < 1e-15);
        let mut prev = 0.0;
        for k in (1..2_000_000).step_by(10_000) {
            let a = p.alpha(k);
            assert!(a >= prev && a <= 1.0);
            prev = a;
        }
        assert_eq!(p.alpha(u64::MAX / 2), 1.0);
    }

    #[test]
    fn relabeled_initial_state_is_balanced() {
        let spec = examples::reversed_cycle().with_x0_hat(vec![q(-1), q(-1)]);
        let fluid = solve_static_lp(&spec).unwrap();
        let inst = scale_instance(&spec, &fluid, 10_000).unwrap();
        let c = config(&spec, ConstantOverrides { kappa: Some(1.0), ..Default::default() }).unwrap();
        let mut p = NonpreemptivePolicy::new(&inst, c);
        let mut occ = Occupancy::unassigned(inst.x0.clone(), &inst.servers);
        p.initialize(&mut occ).unwrap();
        assert_eq!(occ.y, vec![0, 0]);
        assert!((occ.z[0] - occ.z[1]).abs() <= 1);
        assert_eq!(occ.psi[(0, 0)], 317);
        assert_eq!(p.held(), 0);
    }
}
