//! Event-driven simulation of the stochastic flow-level model.
//!
//! Flows on a route share the route's bandwidth `Lambda_i(Z)` equally
//! (processor sharing). The allocation only changes at arrivals and
//! departures, so departure times are solved in closed form.
//!
//! Index `r` of the fluid-scaled family is realized with the unscaled
//! traffic (arrival rate `nu_i`, sizes `theta_i`), `floor(r z0_i)` initial
//! flows, and a simulated horizon of `r` times the fluid horizon; see
//! [`fluid_scale`].

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

use crate::allocator::{AllocError, AlphaFairPolicy};
use crate::measure::{AtomicMeasure, DistributionSpec, ExcessLifetime, MeasureError, SmoothStep};
use crate::rng::{self, Purpose};
use crate::topology::NetworkTopology;

/// Residuals at or below this fraction of `max(1, size)` count as finished.
const SNAP_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("allocator failure: {0}")]
    Allocator(#[from] AllocError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// How initial document sizes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialSizes {
    /// The excess-lifetime law of the route's size distribution.
    #[default]
    Excess,
    /// The size distribution itself.
    Same,
    /// One law shared by all routes.
    Explicit(DistributionSpec),
}

impl InitialSizes {
    /// Discretized law of initial sizes on `route`.
    pub fn law(&self, size: &DistributionSpec, atoms: usize) -> Result<AtomicMeasure, MeasureError> {
        Ok(match self {
            Self::Excess => ExcessLifetime::new(size)?.discretize(atoms),
            Self::Same => size.discretize(atoms),
            Self::Explicit(d) => d.discretize(atoms),
        })
    }

    fn sample(&self, size: &DistributionSpec, rng: &mut impl RngCore) -> Result<f64, MeasureError> {
        Ok(match self {
            Self::Excess => ExcessLifetime::new(size)?.sample(rng),
            Self::Same => size.sample(rng),
            Self::Explicit(d) => d.sample(rng),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteTraffic {
    /// `None` disables arrivals on the route.
    pub interarrival: Option<DistributionSpec>,
    pub size: DistributionSpec,
}

/// Everything a simulation needs besides the scaling index and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimModel {
    pub topology: NetworkTopology,
    pub policy: AlphaFairPolicy,
    pub traffic: Vec<RouteTraffic>,
    pub z0: Vec<f64>,
    pub initial_sizes: InitialSizes,
}

impl SimModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.topology.num_routes();
        if self.traffic.len() != n || self.z0.len() != n || self.policy.kappa().len() != n {
            return Err(SimError::InvalidScenario(format!("expected {n} routes in traffic, z0 and weights")));
        }
        if let Some(v) = self.z0.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(SimError::InvalidScenario(format!("initial masses must be nonnegative, got {v}")));
        }
        for t in &self.traffic {
            t.size.validate()?;
            if let Some(a) = &t.interarrival {
                a.validate()?;
            }
        }
        if let InitialSizes::Explicit(d) = &self.initial_sizes {
            d.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub route: usize,
    pub flow_id: u64,
    pub arrival_time: f64,
    pub initial_size: f64,
    pub residual: f64,
    pub departure_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Init,
    Arrival,
    Departure,
    Sample,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Init => "init",
            Self::Arrival => "arrival",
            Self::Departure => "departure",
            Self::Sample => "sample",
        }
    }
}

/// Aggregate state right after an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    /// Allocation in force from this instant on.
    pub lambda: Vec<f64>,
    pub u: Vec<f64>,
    /// Cumulative bandwidth `T_i`.
    pub t_cum: Vec<f64>,
    /// Cumulative service per flow `S_i(0, t)`.
    pub service: Vec<f64>,
    /// `<1, L_i(t)>` and `<chi, L_i(t)>`.
    pub load_count: Vec<f64>,
    pub load_work: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub kind: EventKind,
    pub route: Option<usize>,
    pub flow_id: Option<u64>,
    /// Initial size of the arriving or departing flow.
    pub size: Option<f64>,
    pub snapshot: Snapshot,
}

/// State measures observed at a requested time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub snapshot: Snapshot,
    pub measures: Vec<AtomicMeasure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// Mass and time scale of the records (1 for an unscaled trace).
    pub scale: f64,
    pub events: Vec<SimEvent>,
    pub samples: Vec<Sample>,
}

struct RouteStreams {
    interarrival: ChaCha8Rng,
    size: ChaCha8Rng,
}

pub struct SimState {
    model: SimModel,
    clock: f64,
    flows: Vec<Vec<FlowRecord>>,
    next_arrival: Vec<f64>,
    next_flow_id: Vec<u64>,
    t_cum: Vec<f64>,
    service: Vec<f64>,
    load_count: Vec<u64>,
    load_work: Vec<f64>,
    lambda: Vec<f64>,
    prices: Option<Vec<f64>>,
    streams: Vec<RouteStreams>,
    finished: Vec<FlowRecord>,
    keep_finished: bool,
}

impl SimState {
    /// Initial state of the `r`-th system: `floor(r z0_i)` flows per route
    /// with sizes drawn from the initial-size law.
    pub fn new(model: &SimModel, r: f64, seed: u64, replication: u32) -> Result<Self, SimError> {
        model.validate()?;
        if !(r.is_finite() && r >= 1.0) {
            return Err(SimError::InvalidScenario(format!("scaling index must be at least 1, got {r}")));
        }
        let mut sizes = Vec::with_capacity(model.z0.len());
        for (i, (&z, t)) in model.z0.iter().zip(&model.traffic).enumerate() {
            let count = (r * z + 1e-9).floor() as usize;
            let mut g = rng::stream(seed, replication, i, Purpose::Initial);
            sizes.push((0..count).map(|_| model.initial_sizes.sample(&t.size, &mut g)).collect::<Result<Vec<_>, _>>()?);
        }
        Self::with_initial_sizes(model, sizes, seed, replication)
    }

    /// Initial state with the given initial sizes per route.
    pub fn with_initial_sizes(model: &SimModel, sizes: Vec<Vec<f64>>, seed: u64, replication: u32) -> Result<Self, SimError> {
        model.validate()?;
        let n = model.topology.num_routes();
        if sizes.len() != n {
            return Err(SimError::InvalidScenario(format!("expected initial sizes for {n} routes")));
        }
        let mut streams: Vec<RouteStreams> = (0..n)
            .map(|i| RouteStreams {
                interarrival: rng::stream(seed, replication, i, Purpose::Interarrival),
                size: rng::stream(seed, replication, i, Purpose::Size),
            })
            .collect();
        let next_arrival = model
            .traffic
            .iter()
            .zip(&mut streams)
            .map(|(t, s)| t.interarrival.as_ref().map_or(f64::INFINITY, |d| d.sample(&mut s.interarrival)))
            .collect();
        let mut flows = Vec::with_capacity(n);
        let mut next_flow_id = Vec::with_capacity(n);
        for (route, route_sizes) in sizes.into_iter().enumerate() {
            if let Some(v) = route_sizes.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(SimError::InvalidScenario(format!("initial sizes must be positive, got {v}")));
            }
            next_flow_id.push(route_sizes.len() as u64);
            flows.push(
                route_sizes
                    .into_iter()
                    .enumerate()
                    .map(|(k, v)| FlowRecord {
                        route,
                        flow_id: k as u64,
                        arrival_time: 0.0,
                        initial_size: v,
                        residual: v,
                        departure_time: None,
                    })
                    .collect(),
            );
        }
        let mut state = Self {
            model: model.clone(),
            clock: 0.0,
            flows,
            next_arrival,
            next_flow_id,
            t_cum: vec![0.0; n],
            service: vec![0.0; n],
            load_count: vec![0; n],
            load_work: vec![0.0; n],
            lambda: vec![0.0; n],
            prices: None,
            streams,
            finished: Vec::new(),
            keep_finished: false,
        };
        state.reallocate()?;
        Ok(state)
    }

    /// Keep departed flow records (see [`SimState::finished_flows`]).
    pub fn keep_finished_flows(&mut self, keep: bool) {
        self.keep_finished = keep;
    }

    pub fn finished_flows(&self) -> &[FlowRecord] {
        &self.finished
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn active_flows(&self, route: usize) -> &[FlowRecord] {
        &self.flows[route]
    }

    /// Per route, one unit atom at each positive residual.
    pub fn observe(&self) -> Vec<AtomicMeasure> {
        self.flows
            .iter()
            .map(|fs| {
                AtomicMeasure::new(fs.iter().filter(|f| f.residual > 0.0).map(|f| (f.residual, 1.0)))
                    .expect("residuals are finite and nonnegative")
            })
            .collect()
    }

    fn counts(&self) -> Vec<f64> {
        self.flows.iter().map(|f| f.len() as f64).collect()
    }

    fn reallocate(&mut self) -> Result<(), SimError> {
        let z = self.counts();
        let alloc = self.model.policy.allocate_from(&self.model.topology, &z, self.prices.as_deref())?;
        self.lambda = alloc.lambda;
        self.prices = Some(alloc.prices);
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let t = &self.model.topology;
        let used = t.apply(&self.t_cum);
        Snapshot {
            time: self.clock,
            z: self.counts(),
            w: self.flows.iter().map(|fs| fs.iter().map(|f| f.residual).sum()).collect(),
            lambda: self.lambda.clone(),
            u: t.capacities().iter().zip(&used).map(|(c, a)| c * self.clock - a).collect(),
            t_cum: self.t_cum.clone(),
            service: self.service.clone(),
            load_count: self.load_count.iter().map(|&c| c as f64).collect(),
            load_work: self.load_work.clone(),
        }
    }

    fn per_flow_rate(&self, route: usize) -> f64 {
        match self.flows[route].len() {
            0 => 0.0,
            n => self.lambda[route] / n as f64,
        }
    }

    /// Serves every active flow for `dt` at the current rates.
    fn advance(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        for i in 0..self.flows.len() {
            let rate = self.per_flow_rate(i);
            if rate == 0.0 {
                continue;
            }
            let step = rate * dt;
            let mut served = 0.0;
            for f in &mut self.flows[i] {
                let mut next = f.residual - step;
                if next <= SNAP_REL * f.initial_size.max(1.0) {
                    next = 0.0;
                }
                served += f.residual - next;
                f.residual = next;
            }
            self.t_cum[i] += served;
            self.service[i] += step;
        }
        self.clock += dt;
    }

    /// Earliest departure: `(time, route, index)`, lowest route then lowest
    /// flow id among ties.
    fn next_departure(&self) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, fs) in self.flows.iter().enumerate() {
            let rate = self.per_flow_rate(i);
            if rate == 0.0 {
                continue;
            }
            let Some((k, f)) = fs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.residual.total_cmp(&b.1.residual).then(a.1.flow_id.cmp(&b.1.flow_id)))
            else {
                continue;
            };
            let at = if f.residual == 0.0 { self.clock } else { self.clock + f.residual / rate };
            if best.is_none_or(|(t, _, _)| at < t) {
                best = Some((at, i, k));
            }
        }
        best
    }

    fn next_arrival(&self) -> Option<(f64, usize)> {
        self.next_arrival
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, &t)| (t, i))
    }

    fn depart(&mut self, route: usize, index: usize) -> Result<SimEvent, SimError> {
        let mut flow = self.flows[route].remove(index);
        // served to exhaustion: any rounding remainder counts as served
        self.t_cum[route] += flow.residual;
        flow.residual = 0.0;
        flow.departure_time = Some(self.clock);
        let (flow_id, size) = (flow.flow_id, flow.initial_size);
        if self.keep_finished {
            self.finished.push(flow);
        }
        self.reallocate()?;
        Ok(SimEvent {
            kind: EventKind::Departure,
            route: Some(route),
            flow_id: Some(flow_id),
            size: Some(size),
            snapshot: self.snapshot(),
        })
    }

    fn arrive(&mut self, route: usize) -> Result<SimEvent, SimError> {
        let traffic = &self.model.traffic[route];
        let streams = &mut self.streams[route];
        let size = traffic.size.sample(&mut streams.size);
        let gap = traffic.interarrival.as_ref().map_or(f64::INFINITY, |d| d.sample(&mut streams.interarrival));
        self.next_arrival[route] = self.clock + gap;
        let flow_id = self.next_flow_id[route];
        self.next_flow_id[route] += 1;
        self.load_count[route] += 1;
        self.load_work[route] += size;
        self.flows[route].push(FlowRecord {
            route,
            flow_id,
            arrival_time: self.clock,
            initial_size: size,
            residual: size,
            departure_time: None,
        });
        self.reallocate()?;
        Ok(SimEvent {
            kind: EventKind::Arrival,
            route: Some(route),
            flow_id: Some(flow_id),
            size: Some(size),
            snapshot: self.snapshot(),
        })
    }

    /// Processes every event up to and including `horizon`, recording the
    /// state at each of `sample_times` (sorted) on the way. The trace starts
    /// with an `init` record.
    pub fn run_until(&mut self, horizon: f64, sample_times: &[f64]) -> Result<SimTrace, SimError> {
        if !(horizon >= self.clock) {
            return Err(SimError::InvalidScenario(format!("horizon {horizon} lies before the clock {}", self.clock)));
        }
        let mut trace = SimTrace {
            scale: 1.0,
            events: vec![SimEvent { kind: EventKind::Init, route: None, flow_id: None, size: None, snapshot: self.snapshot() }],
            samples: Vec::new(),
        };
        let start = self.clock;
        let mut pending = sample_times.iter().copied().filter(|&t| t >= start && t <= horizon).peekable();
        loop {
            let departure = self.next_departure();
            let arrival = self.next_arrival();
            let next_time = departure.map_or(f64::INFINITY, |d| d.0).min(arrival.map_or(f64::INFINITY, |a| a.0));
            while let Some(&s) = pending.peek() {
                if s >= next_time && next_time <= horizon {
                    break;
                }
                self.advance(s - self.clock);
                trace.samples.push(Sample { snapshot: self.snapshot(), measures: self.observe() });
                pending.next();
            }
            if next_time > horizon {
                break;
            }
            // departures before arrivals at equal times
            let event = match (departure, arrival) {
                (Some((td, route, k)), Some((ta, _))) if td <= ta => {
                    self.advance(td - self.clock);
                    self.depart(route, k)?
                }
                (Some((td, route, k)), None) => {
                    self.advance(td - self.clock);
                    self.depart(route, k)?
                }
                (_, Some((ta, route))) => {
                    self.advance(ta - self.clock);
                    self.arrive(route)?
                }
                (None, None) => unreachable!("next_time is finite"),
            };
            trace.events.push(event);
        }
        self.advance(horizon - self.clock);
        Ok(trace)
    }
}

/// Fluid scaling of a trace of the `r`-th system: times and masses divided
/// by `r`, atom locations unchanged.
pub fn fluid_scale(trace: &SimTrace, r: f64) -> SimTrace {
    let scale_snapshot = |s: &Snapshot| Snapshot {
        time: s.time / r,
        z: s.z.iter().map(|v| v / r).collect(),
        w: s.w.iter().map(|v| v / r).collect(),
        lambda: s.lambda.clone(),
        u: s.u.iter().map(|v| v / r).collect(),
        t_cum: s.t_cum.iter().map(|v| v / r).collect(),
        service: s.service.iter().map(|v| v / r).collect(),
        load_count: s.load_count.iter().map(|v| v / r).collect(),
        load_work: s.load_work.iter().map(|v| v / r).collect(),
    };
    SimTrace {
        scale: trace.scale * r,
        events: trace.events.iter().map(|e| SimEvent { snapshot: scale_snapshot(&e.snapshot), ..e.clone() }).collect(),
        samples: trace
            .samples
            .iter()
            .map(|s| Sample { snapshot: scale_snapshot(&s.snapshot), measures: s.measures.iter().map(|m| m.scaled(1.0 / r)).collect() })
            .collect(),
    }
}

/// `max |W_i(t) - W_i(0) - <chi, L_i(t)> + T_i(t)|` over all records.
pub fn workload_balance_check(trace: &SimTrace) -> f64 {
    let Some(first) = trace.events.first() else { return 0.0 };
    let w0 = &first.snapshot.w;
    trace
        .events
        .iter()
        .map(|e| &e.snapshot)
        .chain(trace.samples.iter().map(|s| &s.snapshot))
        .flat_map(|s| (0..w0.len()).map(move |i| (s.w[i] - w0[i] - s.load_work[i] + s.t_cum[i]).abs()))
        .fold(0.0, f64::max)
}

/// Checks, between consecutive samples `s < t`,
///
/// ```text
/// <f, Z_i(t)> = <f(. - S_i(s,t)), Z_i(s)> + sum_{arrivals k in (s,t]} f(v_k - S_i(U_k, t)) / scale
/// ```
///
/// with `f` extended by 0 on `(-inf, 0]`. Returns the largest discrepancy.
pub fn prelimit_dynamic_check(trace: &SimTrace, battery: &[SmoothStep]) -> f64 {
    let mut worst = 0.0f64;
    let arrivals: Vec<&SimEvent> = trace.events.iter().filter(|e| e.kind == EventKind::Arrival).collect();
    for pair in trace.samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for i in 0..a.measures.len() {
            let shift = b.snapshot.service[i] - a.snapshot.service[i];
            let inflow: Vec<(f64, f64)> = arrivals
                .iter()
                .filter(|e| e.route == Some(i) && e.snapshot.time > a.snapshot.time && e.snapshot.time <= b.snapshot.time)
                .map(|e| (e.size.unwrap_or(0.0), b.snapshot.service[i] - e.snapshot.service[i]))
                .collect();
            for f in battery {
                let lhs = b.measures[i].integrate(|x| f.value(x));
                let carried = a.measures[i].integrate(|x| f.value(x - shift));
                let arrived: f64 = inflow.iter().map(|&(v, s)| f.value(v - s)).sum::<f64>() / trace.scale;
                worst = worst.max((lhs - carried - arrived).abs());
            }
        }
    }
    worst
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a trace as CSV: `time,event,route,flow_id,size,z_*,w_*,lambda_*,u_*`.
pub fn write_trace_csv(trace: &SimTrace, out: &mut impl Write) -> io::Result<()> {
    let Some(first) = trace.events.first() else {
        return writeln!(out, "time,event,route,flow_id,size");
    };
    let (n, m) = (first.snapshot.z.len(), first.snapshot.u.len());
    let mut header = vec!["time".to_string(), "event".into(), "route".into(), "flow_id".into(), "size".into()];
    for prefix in ["z", "w", "lambda"] {
        header.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    header.extend((0..m).map(|j| format!("u_{j}")));
    writeln!(out, "{}", header.join(","))?;
    for e in &trace.events {
        let s = &e.snapshot;
        let mut row = vec![
            fmt(s.time),
            e.kind.as_str().to_string(),
            e.route.map(|r| r.to_string()).unwrap_or_default(),
            e.flow_id.map(|f| f.to_string()).unwrap_or_default(),
            e.size.map(fmt).unwrap_or_default(),
        ];
        for v in s.z.iter().chain(&s.w).chain(&s.lambda).chain(&s.u) {
            row.push(fmt(*v));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_model(topology: NetworkTopology) -> SimModel {
        let n = topology.num_routes();
        SimModel {
            policy: AlphaFairPolicy::unweighted(1.0, n).unwrap(),
            traffic: vec![RouteTraffic { interarrival: None, size: DistributionSpec::exponential(1.0) }; n],
            z0: vec![0.0; n],
            initial_sizes: InitialSizes::Excess,
            topology,
        }
    }

    fn departures(trace: &SimTrace) -> Vec<(f64, usize, u64)> {
        trace
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Departure)
            .map(|e| (e.snapshot.time, e.route.unwrap(), e.flow_id.unwrap()))
            .collect()
    }

    #[test]
    fn single_flow_served_at_capacity() {
        let model = closed_model(NetworkTopology::single(1.0).unwrap());
        let mut s = SimState::with_initial_sizes(&model, vec![vec![5.0]], 1, 0).unwrap();
        let trace = s.run_until(10.0, &[2.0]).unwrap();
        assert_eq!(departures(&trace), vec![(5.0, 0, 0)]);
        assert_eq!(trace.samples[0].snapshot.w, vec![3.0]);
        assert_eq!(workload_balance_check(&trace), 0.0);
    }

    #[test]
    fn processor_sharing_two_flows() {
        let model = closed_model(NetworkTopology::single(1.0).unwrap());
        let mut s = SimState::with_initial_sizes(&model, vec![vec![2.0, 4.0]], 1, 0).unwrap();
        let trace = s.run_until(10.0, &[]).unwrap();
        assert_eq!(departures(&trace), vec![(4.0, 0, 0), (6.0, 0, 1)]);
    }

    #[test]
    fn equal_residuals_leave_in_flow_id_order() {
        let model = closed_model(NetworkTopology::single(1.0).unwrap());
        let mut s = SimState::with_initial_sizes(&model, vec![vec![1.0, 1.0, 1.0]], 1, 0).unwrap();
        let trace = s.run_until(10.0, &[]).unwrap();
        assert_eq!(departures(&trace), vec![(3.0, 0, 0), (3.0, 0, 1), (3.0, 0, 2)]);
    }

    #[test]
    fn observe_and_counts() {
        let model = closed_model(NetworkTopology::single(1.0).unwrap());
        let s = SimState::with_initial_sizes(&model, vec![vec![1.5, 2.5]], 1, 0).unwrap();
        assert_eq!(s.observe()[0], AtomicMeasure::new([(1.5, 1.0), (2.5, 1.0)]).unwrap());
        let empty = SimState::with_initial_sizes(&model, vec![vec![]], 1, 0).unwrap();
        assert!(empty.observe()[0].is_zero());
    }

    #[test]
    fn initial_counts_follow_r() {
        let mut model = closed_model(NetworkTopology::single(1.0).unwrap());
        model.z0 = vec![1.0];
        let s = SimState::new(&model, 10.0, 42, 0).unwrap();
        assert_eq!(s.active_flows(0).len(), 10);
        let again = SimState::new(&model, 10.0, 42, 0).unwrap();
        assert_eq!(s.active_flows(0), again.active_flows(0));
        assert!(SimState::new(&model, 0.5, 42, 0).is_err());
    }

    #[test]
    fn corrupted_trace_fails_balance() {
        let model = closed_model(NetworkTopology::single(1.0).unwrap());
        let mut s = SimState::with_initial_sizes(&model, vec![vec![2.0, 4.0]], 1, 0).unwrap();
        let mut trace = s.run_until(10.0, &[]).unwrap();
        assert!(workload_balance_check(&trace) <= 1e-12);
        for e in trace.events.iter_mut().skip(1) {
            e.snapshot.t_cum[0] += 1.0;
        }
        assert!(workload_balance_check(&trace) >= 1.0 - 1e-9);
    }

    #[test]
    fn csv_layout() {
        let model = closed_model(NetworkTopology::linear([1.0, 1.0]).unwrap());
        let mut s = SimState::with_initial_sizes(&model, vec![vec![1.0], vec![], vec![]], 1, 0).unwrap();
        let trace = s.run_until(2.0, &[]).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "time,event,route,flow_id,size,z_0,z_1,z_2,w_0,w_1,w_2,lambda_0,lambda_1,lambda_2,u_0,u_1"
        );
        assert!(lines.next().unwrap().starts_with("0.0000000000000000e0,init,,,"));
        assert!(lines.next().unwrap().starts_with("1.0000000000000000e0,departure,0,0,1.0000000000000000e0"));
    }
}
