use std::io::Write;

use serde::Serialize;

use super::{Event, EventKind, Observer, Occupancy, StreamSeed, SystemState};

/// Full state snapshot taken right after an event.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: EventKind,
    pub x: Vec<i64>,
    pub y: Vec<i64>,
    pub z: Vec<i64>,
    /// Row-major `I × J`.
    pub psi: Vec<i64>,
    pub integrals: Vec<f64>,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
}

impl TraceRecord {
    fn capture(time: f64, kind: EventKind, state: &SystemState) -> Self {
        TraceRecord {
            time,
            kind,
            x: state.occ.x.clone(),
            y: state.occ.y.clone(),
            z: state.occ.z.clone(),
            psi: state.occ.psi.as_slice().to_vec(),
            integrals: state.service_integrals().as_slice().to_vec(),
            arrivals: state.arrivals.clone(),
            departures: state.departures.as_slice().to_vec(),
        }
    }
}

/// Recorder of every event of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Trace {
    pub classes: usize,
    pub stations: usize,
    pub seed: Option<StreamSeed>,
    pub records: Vec<TraceRecord>,
    /// Clock value when the run stopped (the horizon).
    pub end_time: f64,
    /// Service integrals at `end_time`.
    pub end_integrals: Vec<f64>,
}

impl Trace {
    pub fn with_seed(seed: StreamSeed) -> Self {
        Trace { seed: Some(seed), ..Trace::default() }
    }

    /// Checks that times never go backwards and that consecutive snapshots
    /// differ exactly by the recorded event.
    pub fn verify_replay(&self) -> Result<(), String> {
        for (k, pair) in self.records.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.time < a.time {
                return Err(format!("record {}: time went backwards", k + 1));
            }
            let mut x = a.x.clone();
            let mut arrivals = a.arrivals.clone();
            let mut departures = a.departures.clone();
            match b.kind {
                EventKind::Arrival { class } => {
                    x[class] += 1;
                    arrivals[class] += 1;
                }
                EventKind::Completion { class, station } => {
                    x[class] -= 1;
                    departures[class * self.stations + station] += 1;
                }
                EventKind::Start => return Err(format!("record {}: second start", k + 1)),
            }
            if x != b.x || arrivals != b.arrivals || departures != b.departures {
                return Err(format!("record {}: snapshot does not follow from {:?}", k + 1, b.kind));
            }
            if b.integrals.iter().zip(&a.integrals).any(|(after, before)| after < before) {
                return Err(format!("record {}: service integral decreased", k + 1));
            }
        }
        Ok(())
    }

    /// CSV with one row per `stride`-th record (the last one always kept).
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> csv::Result<()> {
        let stride = stride.max(1);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string(), "event".into(), "class".into(), "station".into()];
        header.extend((1..=self.classes).map(|i| format!("X{i}")));
        header.extend((1..=self.classes).map(|i| format!("Y{i}")));
        header.extend((1..=self.stations).map(|j| format!("Z{j}")));
        for i in 1..=self.classes {
            header.extend((1..=self.stations).map(|j| format!("Psi{i}_{j}")));
        }
        w.write_record(&header)?;
        let last = self.records.len().saturating_sub(1);
        for (k, r) in self.records.iter().enumerate() {
            if k % stride != 0 && k != last {
                continue;
            }
            let (class, station) = match r.kind {
                EventKind::Start => (String::new(), String::new()),
                EventKind::Arrival { class } => ((class + 1).to_string(), String::new()),
                EventKind::Completion { class, station } => ((class + 1).to_string(), (station + 1).to_string()),
            };
            let mut row = vec![format!("{}", r.time), r.kind.to_string(), class, station];
            row.extend(r.x.iter().chain(&r.y).chain(&r.z).chain(&r.psi).map(i64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Observer for Trace {
    fn start(&mut self, state: &SystemState) {
        self.classes = state.occ.x.len();
        self.stations = state.servers.len();
        self.records.push(TraceRecord::capture(state.time, EventKind::Start, state));
    }

    fn event(&mut self, event: &Event, _previous: &Occupancy, state: &SystemState) {
        self.records.push(TraceRecord::capture(event.time, event.kind, state));
    }

    fn finish(&mut self, state: &SystemState) {
        self.end_time = state.time;
        self.end_integrals = state.service_integrals().as_slice().to_vec();
    }
}
