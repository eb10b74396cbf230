use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run, Event, Observer, Occupancy, Policy, StreamSeed, SystemState, Trace};
use crate::model::ScaledInstance;
use crate::num::{display_q, to_f64, Q};
use crate::policies::{AnyPolicy, PreemptiveOptions, PreemptivePolicy, preemptive_config};

use super::scaling::check_representation;
use super::stats::{median, wilson_interval};
use super::{make_policy, Analysis, HarnessError, PolicyChoice};

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub policy: PolicyChoice,
    pub n_values: Vec<u64>,
    pub epsilon: f64,
    pub horizon: f64,
    pub replications: u64,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// How many leading replications per `n` also get the representation check.
    pub representation_checks: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidScenario(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon < self.horizon && self.horizon.is_finite()) {
            return bad("need 0 < epsilon < horizon");
        }
        if self.replications == 0 {
            return bad("need at least one replication");
        }
        if self.n_values.is_empty() || self.n_values.windows(2).any(|w| w[0] >= w[1]) || self.n_values[0] == 0 {
            return bad("n values must be positive and strictly increasing");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub replication: u64,
    /// `Y = 0` on the closed window `[ε, T]`.
    pub null_window: bool,
    /// `Y = 0` on all of `[0, T]`.
    pub null_from_zero: bool,
    pub max_queue: i64,
    /// Largest `‖X̂‖₁` seen.
    pub max_xhat: f64,
    pub fallbacks: u64,
    pub full_station_events: u64,
    pub events: u64,
    pub representation_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NSummary {
    pub n: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci: (f64, f64),
    /// Only reported when the initial condition is strictly inside the null domain.
    pub from_zero: Option<(u64, f64, (f64, f64))>,
    pub max_queue: i64,
    pub max_xhat: f64,
    pub fallbacks: u64,
    /// Full-station events per simulated event, pooled over replications.
    pub full_station_rate: f64,
    /// Fraction of replications with at least one full-station event.
    pub full_station_fraction: f64,
    pub representation_residual: Option<f64>,
    pub replicates: Vec<ReplicationResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryStats {
    pub policy: String,
    pub epsilon: f64,
    pub horizon: f64,
    pub replications: u64,
    pub seed: u64,
    pub per_n: Vec<NSummary>,
}

/// Watches `e·Y` on the window and the running extremes.
struct Window {
    epsilon: f64,
    n: f64,
    x_star: Vec<f64>,
    passed: bool,
    null_window: bool,
    null_from_zero: bool,
    max_queue: i64,
    max_xhat: f64,
}

impl Window {
    fn new(epsilon: f64, inst: &ScaledInstance, x_star: Vec<f64>) -> Self {
        Window {
            epsilon,
            n: inst.n as f64,
            x_star,
            passed: false,
            null_window: true,
            null_from_zero: true,
            max_queue: 0,
            max_xhat: 0.0,
        }
    }

    fn observe(&mut self, occ: &Occupancy) {
        let q = occ.queued();
        self.max_queue = self.max_queue.max(q);
        self.null_from_zero &= q == 0;
        let root = self.n.sqrt();
        let norm: f64 = occ.x.iter().zip(&self.x_star).map(|(&x, c)| (x as f64 - self.n * c).abs() / root).sum();
        self.max_xhat = self.max_xhat.max(norm);
    }

    fn advance(&mut self, time: f64, previous: &Occupancy, current: &Occupancy) {
        if !self.passed && time > self.epsilon {
            // The state entering ε is the one held just before this event.
            self.passed = true;
            self.null_window &= previous.queued() == 0;
        }
        if self.passed {
            self.null_window &= current.queued() == 0;
        }
        self.observe(current);
    }
}

impl Observer for Window {
    fn start(&mut self, state: &SystemState) {
        self.observe(&state.occ);
    }

    fn event(&mut self, event: &Event, previous: &Occupancy, state: &SystemState) {
        self.advance(event.time, previous, &state.occ);
    }

    fn finish(&mut self, state: &SystemState) {
        if !self.passed {
            self.null_window &= state.occ.queued() == 0;
        }
    }
}

struct Pair<'a, A, B>(&'a mut A, &'a mut B);

impl<A: Observer, B: Observer> Observer for Pair<'_, A, B> {
    fn start(&mut self, state: &SystemState) {
        self.0.start(state);
        self.1.start(state);
    }
    fn event(&mut self, event: &Event, previous: &Occupancy, state: &SystemState) {
        self.0.event(event, previous, state);
        self.1.event(event, previous, state);
    }
    fn finish(&mut self, state: &SystemState) {
        self.0.finish(state);
        self.1.finish(state);
    }
}

/// Runs one replication at one `n`. The seed depends only on the master
/// seed and the replication index, so the same replication index sees the
/// same streams at every `n`.
pub fn run_replication(
    analysis: &Analysis,
    inst: &ScaledInstance,
    scenario: &Scenario,
    replication: u64,
    check_trace: bool,
) -> Result<ReplicationResult, HarnessError> {
    let seed = StreamSeed::new(scenario.seed, replication);
    let policy = make_policy(analysis, inst, &scenario.policy)?;
    let mut window = Window::new(scenario.epsilon, inst, analysis.fluid.x_star_f64());
    let wrap = |source| HarnessError::Engine { n: inst.n, replication, source };
    let (outcome, residual) = if check_trace {
        let mut trace = Trace::with_seed(seed);
        let outcome = run(inst, policy, scenario.horizon, seed, &mut Pair(&mut window, &mut trace)).map_err(wrap)?;
        let report = check_representation(&trace, inst, &analysis.spec, &analysis.fluid, &analysis.cycles, 1e-8)?;
        (outcome, Some(report.max_residual))
    } else {
        (run(inst, policy, scenario.horizon, seed, &mut window).map_err(wrap)?, None)
    };
    let stats = outcome.policy.stats();
    Ok(ReplicationResult {
        replication,
        null_window: window.null_window,
        null_from_zero: window.null_from_zero,
        max_queue: window.max_queue,
        max_xhat: window.max_xhat,
        fallbacks: stats.fallbacks(),
        full_station_events: stats.full_station_events(),
        events: outcome.events,
        representation_residual: residual,
    })
}

fn summarize(n: u64, replicates: Vec<ReplicationResult>, report_from_zero: bool) -> NSummary {
    let total = replicates.len() as u64;
    let successes = replicates.iter().filter(|r| r.null_window).count() as u64;
    let from_zero = report_from_zero.then(|| {
        let s = replicates.iter().filter(|r| r.null_from_zero).count() as u64;
        (s, s as f64 / total as f64, wilson_interval(s as usize, total as usize, Z95))
    });
    let events: u64 = replicates.iter().map(|r| r.events).sum();
    let full: u64 = replicates.iter().map(|r| r.full_station_events).sum();
    let residual = replicates
        .iter()
        .filter_map(|r| r.representation_residual)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    NSummary {
        n,
        successes,
        p_hat: successes as f64 / total as f64,
        ci: wilson_interval(successes as usize, total as usize, Z95),
        from_zero,
        max_queue: replicates.iter().map(|r| r.max_queue).max().unwrap_or(0),
        max_xhat: replicates.iter().map(|r| r.max_xhat).fold(0.0, f64::max),
        fallbacks: replicates.iter().map(|r| r.fallbacks).sum(),
        full_station_rate: if events == 0 { 0.0 } else { full as f64 / events as f64 },
        full_station_fraction: replicates.iter().filter(|r| r.full_station_events > 0).count() as f64 / total as f64,
        representation_residual: residual,
        replicates,
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Estimates `P(Y = 0 on [ε, T])` for each `n` of the ladder.
pub fn estimate_null_probability(analysis: &Analysis, scenario: &Scenario) -> Result<SummaryStats, HarnessError> {
    scenario.validate()?;
    if !matches!(scenario.policy, PolicyChoice::Greedy) && analysis.cycles.chosen.is_none() {
        return Err(HarnessError::Policy {
            n: scenario.n_values[0],
            source: crate::engine::PolicyError(format!("not null-controllable: {}", analysis.cycles.certificate())),
        });
    }
    let e_x: f64 = analysis.spec.x0_hat.iter().map(to_f64).sum();
    let mut per_n = Vec::with_capacity(scenario.n_values.len());
    for &n in &scenario.n_values {
        let inst = analysis.instance(n)?;
        let results: Vec<Result<ReplicationResult, HarnessError>> = in_pool(scenario.threads, || {
            (0..scenario.replications)
                .into_par_iter()
                .map(|r| run_replication(analysis, &inst, scenario, r, r < scenario.representation_checks))
                .collect()
        })?;
        let replicates = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        per_n.push(summarize(n, replicates, e_x < -1.0));
    }
    Ok(SummaryStats {
        policy: scenario.policy.name().to_string(),
        epsilon: scenario.epsilon,
        horizon: scenario.horizon,
        replications: scenario.replications,
        seed: scenario.seed,
        per_n,
    })
}

/// `p̂_n` nondecreasing along the ladder, except for at most one inversion
/// whose two Wilson intervals overlap.
pub fn monotone_within_ci(per_n: &[NSummary]) -> bool {
    let mut inversions = 0;
    for w in per_n.windows(2) {
        if w[1].p_hat < w[0].p_hat {
            inversions += 1;
            if w[1].ci.1 < w[0].ci.0 {
                return false;
            }
        }
    }
    inversions <= 1
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverloadScenario {
    #[serde(serialize_with = "serialize_rates")]
    pub lambda_prime: Vec<Q>,
    pub n: u64,
    /// Strictly increasing sampling times.
    pub times: Vec<f64>,
    pub replications: u64,
    pub seed: u64,
    pub options: PreemptiveOptions,
}

fn serialize_rates<S: serde::Serializer>(v: &[Q], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(display_q))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverloadStats {
    pub n: u64,
    pub times: Vec<f64>,
    /// `samples[k][r]` is `e·Y(times[k])/n` in replication `r`.
    pub samples: Vec<Vec<f64>>,
    pub positive_fraction: Vec<f64>,
    pub medians: Vec<f64>,
    pub lower_envelope: Vec<f64>,
    /// Least-squares line through the lower envelope.
    pub envelope_slope: f64,
    pub envelope_intercept: f64,
    /// Fraction of replications whose own least-squares slope is positive.
    pub positive_slope_fraction: f64,
}

/// Samples `e·Y` at fixed times; the value at `t` is the state held at `t`.
struct Sampler {
    times: Vec<f64>,
    values: Vec<i64>,
}

impl Observer for Sampler {
    fn event(&mut self, event: &Event, previous: &Occupancy, _state: &SystemState) {
        while self.values.len() < self.times.len() && self.times[self.values.len()] < event.time {
            self.values.push(previous.queued());
        }
    }
    fn finish(&mut self, state: &SystemState) {
        while self.values.len() < self.times.len() {
            self.values.push(state.occ.queued());
        }
    }
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Runs the preemptive policy designed for the original rates on a network
/// whose arrival rates are raised to `λ'`.
pub fn overloaded_sweep(analysis: &Analysis, scenario: &OverloadScenario) -> Result<OverloadStats, HarnessError> {
    let lambda = &analysis.spec.lambda;
    if scenario.lambda_prime.len() != lambda.len() {
        return Err(HarnessError::InvalidScenario("lambda' has the wrong length".into()));
    }
    if scenario.lambda_prime.iter().zip(lambda).any(|(a, b)| a < b) {
        return Err(HarnessError::InvalidScenario("lambda' must dominate lambda".into()));
    }
    if scenario.lambda_prime == *lambda {
        return Err(HarnessError::InvalidScenario("lambda' must exceed lambda in some class".into()));
    }
    if scenario.replications == 0 || scenario.times.is_empty() || scenario.times.windows(2).any(|w| w[0] >= w[1]) || scenario.times[0] < 0.0 {
        return Err(HarnessError::InvalidScenario("need replications and strictly increasing nonnegative times".into()));
    }
    let n = scenario.n;
    let spec = analysis.spec.with_lambda(scenario.lambda_prime.clone());
    let inst = crate::model::scale_instance(&spec, &analysis.fluid, n)?;
    let cfg = preemptive_config(&analysis.fluid, &analysis.cycles, n, &scenario.options)
        .map_err(|source| HarnessError::Policy { n, source })?;
    let horizon = *scenario.times.last().unwrap();

    let per_rep: Vec<Result<Vec<i64>, HarnessError>> = (0..scenario.replications)
        .into_par_iter()
        .map(|r| {
            let policy = AnyPolicy::Preemptive(PreemptivePolicy::new(&inst, &analysis.fluid, &analysis.cycles, cfg.clone()));
            let mut sampler = Sampler { times: scenario.times.clone(), values: Vec::new() };
            run(&inst, policy, horizon, StreamSeed::new(scenario.seed, r), &mut sampler)
                .map_err(|source| HarnessError::Engine { n, replication: r, source })?;
            Ok(sampler.values)
        })
        .collect();
    let per_rep = per_rep.into_iter().collect::<Result<Vec<_>, _>>()?;

    let nf = n as f64;
    let samples: Vec<Vec<f64>> = (0..scenario.times.len())
        .map(|k| per_rep.iter().map(|v| v[k] as f64 / nf).collect())
        .collect();
    let reps = scenario.replications as f64;
    let positive_fraction = samples.iter().map(|s| s.iter().filter(|&&v| v > 0.0).count() as f64 / reps).collect();
    let medians = samples.iter().map(|s| median(s)).collect();
    let lower_envelope: Vec<f64> = samples.iter().map(|s| s.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let (envelope_slope, envelope_intercept) = least_squares(&scenario.times, &lower_envelope);
    let positive_slopes = per_rep
        .iter()
        .filter(|v| {
            let y: Vec<f64> = v.iter().map(|&a| a as f64 / nf).collect();
            least_squares(&scenario.times, &y).0 > 0.0
        })
        .count();
    Ok(OverloadStats {
        n,
        times: scenario.times.clone(),
        samples,
        positive_fraction,
        medians,
        lower_envelope,
        envelope_slope,
        envelope_intercept,
        positive_slope_fraction: positive_slopes as f64 / reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::num::q;

    fn scenario(policy: PolicyChoice) -> Scenario {
        Scenario {
            policy,
            n_values: vec![50, 100],
            epsilon: 0.5,
            horizon: 2.0,
            replications: 8,
            seed: 11,
            threads: None,
            representation_checks: 2,
        }
    }

    #[test]
    fn scenario_validation() {
        let mut s = scenario(PolicyChoice::Greedy);
        assert!(s.validate().is_ok());
        s.epsilon = 2.0;
        assert!(s.validate().is_err());
        s.epsilon = 0.5;
        s.n_values = vec![100, 100];
        assert!(s.validate().is_err());
    }

    #[test]
    fn refuses_without_null_controllability() {
        let a_out = Analysis::new(examples::outward_cycle()).unwrap();
        let err = estimate_null_probability(&a_out, &scenario(PolicyChoice::Preemptive(Default::default()))).unwrap_err();
        assert!(err.to_string().contains("e.m = 1"), "{err}");
    }

    #[test]
    fn summary_is_consistent_and_thread_independent() {
        let spec = examples::inward_cycle().with_x0_hat(vec![q(-1), q(-1)]);
        let a = Analysis::new(spec).unwrap();
        let mut s = scenario(PolicyChoice::Preemptive(Default::default()));
        let one = estimate_null_probability(&a, &s).unwrap();
        s.threads = Some(3);
        let three = estimate_null_probability(&a, &s).unwrap();
        assert_eq!(one, three);
        for row in &one.per_n {
            assert!(row.ci.0 <= row.p_hat && row.p_hat <= row.ci.1);
            assert!(row.representation_residual.unwrap() <= 1e-8);
            assert!(row.from_zero.is_some());
        }
    }

    #[test]
    fn window_uses_state_entering_epsilon() {
        let a = Analysis::new(examples::inward_cycle()).unwrap();
        let inst = a.instance(50).unwrap();
        let mut w = Window::new(1.0, &inst, a.fluid.x_star_f64());
        let mut queued = Occupancy::unassigned(vec![1, 0], &inst.servers);
        queued.y = vec![1, 0];
        let empty = Occupancy::unassigned(vec![0, 0], &inst.servers);
        w.advance(0.5, &queued, &empty);
        assert!(w.null_window);
        w.advance(1.5, &queued, &empty);
        assert!(!w.null_window);
    }

    #[test]
    fn overload_refuses_equal_rates() {
        let a = Analysis::new(examples::inward_cycle()).unwrap();
        let s = OverloadScenario {
            lambda_prime: a.spec.lambda.clone(),
            n: 50,
            times: vec![1.0, 2.0],
            replications: 2,
            seed: 1,
            options: Default::default(),
        };
        assert!(matches!(overloaded_sweep(&a, &s), Err(HarnessError::InvalidScenario(_))));
    }

    #[test]
    fn least_squares_line() {
        let (s, c) = least_squares(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
    }
}
