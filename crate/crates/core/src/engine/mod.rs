//! Discrete-event simulation of the n-th system.
//!
//! Arrivals are per-class renewal processes whose clocks run undisturbed by
//! other events. Service completions use one exponential clock per activity
//! with rate `μ_ij^n Ψ_ij`; a clock is redrawn only when its `Ψ_ij` changes
//! or it fires, which memorylessness makes exact. Simultaneous events are
//! resolved completion-first, then by index.

mod rng;
mod trace;

use std::fmt;

use rand_distr::{Distribution, Exp1};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::ScaledInstance;
use crate::num::{KahanSum, Matrix};

pub use rng::{RngStreams, StreamSeed};
pub use trace::{Trace, TraceRecord};

/// Integer headcounts: `X`, queues `Y`, idle servers `Z`, in service `Ψ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Occupancy {
    pub x: Vec<i64>,
    pub y: Vec<i64>,
    pub z: Vec<i64>,
    pub psi: Matrix<i64>,
}

impl Occupancy {
    /// Everyone queued, every server idle.
    pub fn unassigned(x: Vec<i64>, servers: &[i64]) -> Self {
        Occupancy {
            y: x.clone(),
            z: servers.to_vec(),
            psi: Matrix::filled(x.len(), servers.len(), 0),
            x,
        }
    }

    /// Installs `psi` and recomputes `Y` and `Z` from the balance identities.
    pub fn set_assignment(&mut self, psi: Matrix<i64>, servers: &[i64]) {
        for i in 0..self.x.len() {
            self.y[i] = self.x[i] - psi.row(i).iter().sum::<i64>();
        }
        for (j, n) in servers.iter().enumerate() {
            self.z[j] = n - (0..self.x.len()).map(|i| psi[(i, j)]).sum::<i64>();
        }
        self.psi = psi;
    }

    /// Moves one queued class-`i` customer into service at station `j`.
    pub fn start_service(&mut self, i: usize, j: usize) -> bool {
        if self.y[i] > 0 && self.z[j] > 0 {
            self.y[i] -= 1;
            self.z[j] -= 1;
            self.psi[(i, j)] += 1;
            true
        } else {
            false
        }
    }

    pub fn total(&self) -> i64 {
        self.x.iter().sum()
    }

    pub fn queued(&self) -> i64 {
        self.y.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemState {
    pub time: f64,
    pub occ: Occupancy,
    pub servers: Vec<i64>,
    pub x0: Vec<i64>,
    integrals: Matrix<KahanSum>,
    /// `A_i(t)`.
    pub arrivals: Vec<u64>,
    /// `D_ij(t)`.
    pub departures: Matrix<u64>,
}

impl SystemState {
    fn new(occ: Occupancy, servers: Vec<i64>) -> Self {
        let (classes, stations) = (occ.x.len(), servers.len());
        SystemState {
            time: 0.0,
            x0: occ.x.clone(),
            integrals: Matrix::filled(classes, stations, KahanSum::default()),
            arrivals: vec![0; classes],
            departures: Matrix::filled(classes, stations, 0),
            occ,
            servers,
        }
    }

    /// `∫₀ᵗ Ψ_ij(s) ds`.
    pub fn service_integral(&self, i: usize, j: usize) -> f64 {
        self.integrals[(i, j)].value()
    }

    pub fn service_integrals(&self) -> Matrix<f64> {
        self.integrals.map(KahanSum::value)
    }

    fn advance(&mut self, to: f64) {
        let dt = to - self.time;
        if dt > 0.0 {
            for i in 0..self.occ.x.len() {
                for j in 0..self.servers.len() {
                    let busy = self.occ.psi[(i, j)];
                    if busy != 0 {
                        self.integrals[(i, j)].add(busy as f64 * dt);
                    }
                }
            }
        }
        self.time = to;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Start,
    Arrival { class: usize },
    Completion { class: usize, station: usize },
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Start => write!(f, "start"),
            EventKind::Arrival { .. } => write!(f, "arrival"),
            EventKind::Completion { .. } => write!(f, "completion"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// Counters a policy keeps about its own decisions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PolicyStats {
    /// Events at which the preemptive guard `‖X̂‖ ≤ a₀n^{1/2}` failed.
    pub guard_fallbacks: u64,
    /// Events at which the cycle-corrected assignment had a negative entry.
    pub negative_fallbacks: u64,
    /// Arrivals sent to the other station because the target was full.
    pub full_station_reroutes: u64,
    /// Arrivals left waiting because both stations were full.
    pub full_station_queued: u64,
    /// Held-queue releases whose split had to be clipped to free capacity.
    pub release_clamps: u64,
    pub released: u64,
    pub alpha_arrivals: u64,
}

impl PolicyStats {
    pub fn fallbacks(&self) -> u64 {
        self.guard_fallbacks + self.negative_fallbacks
    }

    pub fn full_station_events(&self) -> u64 {
        self.full_station_reroutes + self.full_station_queued
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
#[error("{0}")]
pub struct PolicyError(pub String);

/// Decision hooks. On an arrival the engine has already added the customer
/// to `X` and `Y`; on a completion it has already removed it from `X` and
/// `Ψ` and freed the server. The policy then rearranges `occ` as it likes.
pub trait Policy {
    fn name(&self) -> &'static str;
    fn initialize(&mut self, occ: &mut Occupancy) -> Result<(), PolicyError>;
    fn on_arrival(
        &mut self,
        occ: &mut Occupancy,
        class: usize,
        time: f64,
        coin: &mut ChaCha8Rng,
    ) -> Result<(), PolicyError>;
    fn on_completion(
        &mut self,
        occ: &mut Occupancy,
        class: usize,
        station: usize,
        time: f64,
    ) -> Result<(), PolicyError>;
    fn stats(&self) -> PolicyStats {
        PolicyStats::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvariantViolation {
    pub time: f64,
    pub event: EventKind,
    pub detail: String,
    pub state: Occupancy,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "invariant violated at t = {} after {}: {}; X = {:?}, Y = {:?}, Z = {:?}, Psi = {:?}",
            self.time,
            self.event,
            self.detail,
            self.state.x,
            self.state.y,
            self.state.z,
            self.state.psi.to_rows()
        )
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("{0}")]
    Invariant(Box<InvariantViolation>),
    #[error("policy failure: {0}")]
    Policy(#[from] PolicyError),
    #[error("horizon must be finite and >= 0, got {0}")]
    BadHorizon(f64),
}

/// Checks the balance identities, nonnegativity, the activity pattern and
/// conservation of customers.
pub fn check_invariants(state: &SystemState, activity: &Matrix<bool>) -> Result<(), String> {
    let occ = &state.occ;
    for i in 0..occ.x.len() {
        let served: i64 = occ.psi.row(i).iter().sum();
        if occ.y[i] + served != occ.x[i] {
            return Err(format!("class {}: Y + sum Psi = {} != X = {}", i + 1, occ.y[i] + served, occ.x[i]));
        }
        if occ.y[i] < 0 {
            return Err(format!("class {}: negative queue {}", i + 1, occ.y[i]));
        }
        let departed: u64 = state.departures.row(i).iter().sum();
        let expected = state.x0[i] + state.arrivals[i] as i64 - departed as i64;
        if expected != occ.x[i] {
            return Err(format!("class {}: X = {} but X0 + A - D = {}", i + 1, occ.x[i], expected));
        }
        for j in 0..occ.z.len() {
            let v = occ.psi[(i, j)];
            if v < 0 {
                return Err(format!("activity ({}, {}): negative Psi {}", i + 1, j + 1, v));
            }
            if v != 0 && !activity[(i, j)] {
                return Err(format!("({}, {}) is not an activity but Psi = {}", i + 1, j + 1, v));
            }
        }
    }
    for (j, n) in state.servers.iter().enumerate() {
        let busy: i64 = (0..occ.x.len()).map(|i| occ.psi[(i, j)]).sum();
        if occ.z[j] + busy != *n {
            return Err(format!("station {}: Z + sum Psi = {} != N = {}", j + 1, occ.z[j] + busy, n));
        }
        if occ.z[j] < 0 {
            return Err(format!("station {}: negative idle count {}", j + 1, occ.z[j]));
        }
    }
    Ok(())
}

/// Receives the state after every event.
pub trait Observer {
    fn start(&mut self, _state: &SystemState) {}
    fn event(&mut self, _event: &Event, _previous: &Occupancy, _state: &SystemState) {}
    fn finish(&mut self, _state: &SystemState) {}
}

impl Observer for () {}

pub struct Engine<'a, P> {
    inst: &'a ScaledInstance,
    policy: P,
    state: SystemState,
    streams: RngStreams,
    activity: Matrix<bool>,
    next_arrival: Vec<f64>,
    next_completion: Vec<f64>,
    events: u64,
}

impl<'a, P: Policy> Engine<'a, P> {
    pub fn new(inst: &'a ScaledInstance, mut policy: P, seed: StreamSeed) -> Result<Self, EngineError> {
        let (classes, stations) = (inst.class_count(), inst.station_count());
        let activity = inst.mu_n.map(|&r| r > 0.0);
        let mut occ = Occupancy::unassigned(inst.x0.clone(), &inst.servers);
        policy.initialize(&mut occ)?;
        let state = SystemState::new(occ, inst.servers.clone());
        check_invariants(&state, &activity).map_err(|detail| {
            EngineError::Invariant(Box::new(InvariantViolation {
                time: 0.0,
                event: EventKind::Start,
                detail,
                state: state.occ.clone(),
            }))
        })?;
        let mut streams = RngStreams::new(seed, classes, stations);
        let next_arrival = (0..classes)
            .map(|i| inst.interarrival[i].sample(&mut streams.arrival[i]) / inst.lambda_n[i])
            .collect();
        let mut engine = Engine {
            inst,
            policy,
            state,
            streams,
            activity,
            next_arrival,
            next_completion: vec![f64::INFINITY; classes * stations],
            events: 0,
        };
        for k in 0..classes * stations {
            engine.redraw_completion(k);
        }
        Ok(engine)
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn into_policy(self) -> P {
        self.policy
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    fn redraw_completion(&mut self, k: usize) {
        let stations = self.inst.station_count();
        let (i, j) = (k / stations, k % stations);
        let busy = self.state.occ.psi[(i, j)];
        self.next_completion[k] = if busy > 0 {
            let rate = self.inst.mu_n[(i, j)] * busy as f64;
            let e: f64 = Exp1.sample(&mut self.streams.service[k]);
            self.state.time + e / rate
        } else {
            f64::INFINITY
        };
    }

    /// Advances to the next event if it occurs no later than `horizon`;
    /// otherwise advances the clock to `horizon` and returns `None`.
    pub fn step(&mut self, horizon: f64) -> Result<Option<Event>, EngineError> {
        let (tc, kc) = argmin(&self.next_completion);
        let (ta, ka) = argmin(&self.next_arrival);
        let (time, kind) = if tc <= ta {
            let stations = self.inst.station_count();
            (tc, EventKind::Completion { class: kc / stations, station: kc % stations })
        } else {
            (ta, EventKind::Arrival { class: ka })
        };
        if time > horizon {
            self.state.advance(horizon.max(self.state.time));
            return Ok(None);
        }
        self.state.advance(time);
        let before = self.state.occ.psi.clone();
        let fired = match kind {
            EventKind::Arrival { class } => {
                let occ = &mut self.state.occ;
                occ.x[class] += 1;
                occ.y[class] += 1;
                self.state.arrivals[class] += 1;
                let gap = self.inst.interarrival[class].sample(&mut self.streams.arrival[class]);
                self.next_arrival[class] = time + gap / self.inst.lambda_n[class];
                self.policy.on_arrival(occ, class, time, &mut self.streams.routing[class])?;
                None
            }
            EventKind::Completion { class, station } => {
                let occ = &mut self.state.occ;
                occ.x[class] -= 1;
                occ.psi[(class, station)] -= 1;
                occ.z[station] += 1;
                self.state.departures[(class, station)] += 1;
                self.policy.on_completion(occ, class, station, time)?;
                Some(kc)
            }
            EventKind::Start => unreachable!(),
        };
        self.events += 1;
        check_invariants(&self.state, &self.activity).map_err(|detail| {
            EngineError::Invariant(Box::new(InvariantViolation {
                time,
                event: kind,
                detail,
                state: self.state.occ.clone(),
            }))
        })?;
        for k in 0..before.as_slice().len() {
            if Some(k) == fired || before.as_slice()[k] != self.state.occ.psi.as_slice()[k] {
                self.redraw_completion(k);
            }
        }
        Ok(Some(Event { time, kind }))
    }
}

fn argmin(v: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for (k, &t) in v.iter().enumerate() {
        if t < best.0 {
            best = (t, k);
        }
    }
    best
}

pub struct RunOutcome<P> {
    pub state: SystemState,
    pub policy: P,
    pub events: u64,
}

/// Simulates `[0, horizon]`, reporting every event to `observer`.
pub fn run<P: Policy, O: Observer + ?Sized>(
    inst: &ScaledInstance,
    policy: P,
    horizon: f64,
    seed: StreamSeed,
    observer: &mut O,
) -> Result<RunOutcome<P>, EngineError> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(EngineError::BadHorizon(horizon));
    }
    let mut engine = Engine::new(inst, policy, seed)?;
    observer.start(&engine.state);
    let mut previous = engine.state.occ.clone();
    while let Some(event) = engine.step(horizon)? {
        observer.event(&event, &previous, &engine.state);
        previous.clone_from(&engine.state.occ);
    }
    observer.finish(&engine.state);
    let events = engine.events;
    Ok(RunOutcome { state: engine.state, policy: engine.policy, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InterarrivalLaw;
    use crate::policies::GreedyPolicy;

    fn single_station(lambda: f64, mu: f64, servers: i64, x0: i64) -> ScaledInstance {
        ScaledInstance {
            n: 1,
            lambda_n: vec![lambda],
            mu_n: Matrix::from_rows(vec![vec![mu]]),
            servers: vec![servers],
            x0: vec![x0],
            n_hat: vec![0.0],
            interarrival: vec![InterarrivalLaw::Exponential],
        }
    }

    /// Refuses to serve anyone.
    struct Idle;
    impl Policy for Idle {
        fn name(&self) -> &'static str {
            "idle"
        }
        fn initialize(&mut self, _: &mut Occupancy) -> Result<(), PolicyError> {
            Ok(())
        }
        fn on_arrival(&mut self, _: &mut Occupancy, _: usize, _: f64, _: &mut ChaCha8Rng) -> Result<(), PolicyError> {
            Ok(())
        }
        fn on_completion(&mut self, _: &mut Occupancy, _: usize, _: usize, _: f64) -> Result<(), PolicyError> {
            Ok(())
        }
    }

    /// Puts everyone on station 1 even when it is full.
    struct Overbook;
    impl Policy for Overbook {
        fn name(&self) -> &'static str {
            "overbook"
        }
        fn initialize(&mut self, _: &mut Occupancy) -> Result<(), PolicyError> {
            Ok(())
        }
        fn on_arrival(&mut self, occ: &mut Occupancy, i: usize, _: f64, _: &mut ChaCha8Rng) -> Result<(), PolicyError> {
            occ.y[i] -= 1;
            occ.z[0] -= 1;
            occ.psi[(i, 0)] += 1;
            Ok(())
        }
        fn on_completion(&mut self, _: &mut Occupancy, _: usize, _: usize, _: f64) -> Result<(), PolicyError> {
            Ok(())
        }
    }

    #[test]
    fn empty_start_state() {
        let inst = single_station(1.0, 1.0, 3, 0);
        let engine = Engine::new(&inst, GreedyPolicy::new(&inst), StreamSeed::new(1, 0)).unwrap();
        let occ = &engine.state().occ;
        assert_eq!(occ.psi.as_slice(), &[0]);
        assert_eq!(occ.y, vec![0]);
        assert_eq!(occ.z, vec![3]);
    }

    #[test]
    fn zero_horizon_gives_only_start() {
        let inst = single_station(5.0, 1.0, 3, 2);
        let mut trace = Trace::default();
        let out = run(&inst, GreedyPolicy::new(&inst), 0.0, StreamSeed::new(1, 0), &mut trace).unwrap();
        assert_eq!(out.events, 0);
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].kind, EventKind::Start);
    }

    #[test]
    fn no_service_means_no_completions() {
        let inst = single_station(2.0, 1.0, 3, 0);
        let mut trace = Trace::default();
        run(&inst, Idle, 20.0, StreamSeed::new(3, 0), &mut trace).unwrap();
        assert!(trace.records.len() > 10);
        assert!(trace.records.iter().all(|r| !matches!(r.kind, EventKind::Completion { .. })));
        assert_eq!(trace.records.last().unwrap().y[0] as usize, trace.records.len() - 1);
    }

    #[test]
    fn completion_bookkeeping() {
        let inst = single_station(1e-9, 1.0, 3, 2);
        let mut engine = Engine::new(&inst, GreedyPolicy::new(&inst), StreamSeed::new(9, 0)).unwrap();
        assert_eq!(engine.state().occ.psi[(0, 0)], 2);
        let ev = engine.step(1e6).unwrap().unwrap();
        assert_eq!(ev.kind, EventKind::Completion { class: 0, station: 0 });
        let st = engine.state();
        assert_eq!(st.occ.x, vec![1]);
        assert_eq!(st.occ.psi[(0, 0)], 1);
        assert_eq!(st.occ.z, vec![2]);
        assert_eq!(st.departures[(0, 0)], 1);
        assert!((st.service_integral(0, 0) - 2.0 * ev.time).abs() < 1e-12);
    }

    #[test]
    fn invariant_breach_is_reported() {
        let inst = single_station(5.0, 1.0, 1, 0);
        let err = run(&inst, Overbook, 50.0, StreamSeed::new(1, 0), &mut ()).err().unwrap();
        match err {
            EngineError::Invariant(v) => {
                assert!(v.detail.contains("negative idle"), "{}", v.detail);
                assert!(v.to_string().contains("Psi"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let inst = single_station(9.0, 1.0, 10, 4);
        let go = || {
            let mut t = Trace::default();
            run(&inst, GreedyPolicy::new(&inst), 30.0, StreamSeed::new(42, 5), &mut t).unwrap();
            t
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn bad_horizon_rejected() {
        let inst = single_station(1.0, 1.0, 1, 0);
        assert!(matches!(
            run(&inst, Idle, f64::NAN, StreamSeed::new(0, 0), &mut ()),
            Err(EngineError::BadHorizon(_))
        ));
    }
}
