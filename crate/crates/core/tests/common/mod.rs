//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nullctl::engine::{run, Event, Observer, Occupancy, StreamSeed, SystemState};
use nullctl::fluid::solve_static_lp;
use nullctl::model::{scale_instance, NetworkSpec, ScaledInstance};
use nullctl::num::{q, q_ratio, Matrix};
use nullctl::policies::GreedyPolicy;

/// Mean number waiting in an M/M/N queue with offered load `a = λ/μ`.
pub fn erlang_c_queue(servers: u32, a: f64) -> f64 {
    let n = servers as f64;
    // Terms a^k/k! built up iteratively to stay in range.
    let mut term = 1.0;
    let mut below = 0.0;
    for k in 0..servers {
        below += term;
        term *= a / (k as f64 + 1.0);
    }
    let top = term * n / (n - a);
    let wait = top / (below + top);
    wait * a / (n - a)
}

/// Time average of `e·Y` on `[burn_in, T]`.
pub struct QueueAverage {
    pub burn_in: f64,
    area: f64,
    last: f64,
}

impl QueueAverage {
    pub fn new(burn_in: f64) -> Self {
        QueueAverage { burn_in, area: 0.0, last: burn_in }
    }

    pub fn mean(&self) -> f64 {
        self.area / (self.last - self.burn_in)
    }

    fn advance(&mut self, t: f64, queued: i64) {
        if t > self.burn_in {
            self.area += queued as f64 * (t - self.last);
            self.last = t;
        }
    }
}

impl Observer for QueueAverage {
    fn event(&mut self, event: &Event, previous: &Occupancy, _state: &SystemState) {
        self.advance(event.time, previous.queued());
    }
    fn finish(&mut self, state: &SystemState) {
        self.advance(state.time, state.occ.queued());
    }
}

/// Single-class, single-station network with `N = 50` at load 0.9.
pub fn mmn_instance() -> ScaledInstance {
    let spec = NetworkSpec::first_order(vec![q_ratio(9, 10)], Matrix::from_rows(vec![vec![q(1)]]), vec![q(1)]);
    let fluid = solve_static_lp(&spec).unwrap();
    scale_instance(&spec, &fluid, 50).unwrap()
}

/// Long-run mean queue of the engine on [`mmn_instance`].
pub fn engine_mmn_mean_queue(horizon: f64, seed: u64) -> f64 {
    let inst = mmn_instance();
    let mut avg = QueueAverage::new(50.0);
    run(&inst, GreedyPolicy::new(&inst), horizon, StreamSeed::new(seed, 0), &mut avg).unwrap();
    avg.mean()
}
