use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::event::{EventKind, EventQueue};
use super::node::{InService, TandemNode};
use super::{
    QueueSnapshot, RequestRecord, ServerQueues, SimError, SimulationResult, Stage, SubTask,
};
use crate::config::{ServerSpec, SimMode, SimulationConfig};
use crate::plans::{Plan, PlanCatalog};
use crate::schedulers::{PlanRequest, QueueView, Scheduler};
use crate::workload::{Arrival, RequestTrace};
use crate::ServerId;

const SERVICE_STREAM: u64 = u64::MAX - 1;

/// Duration of one stage for `work` cycles at `rate` cycles/ms.
pub fn stage_service_time<R: Rng + ?Sized>(work: f64, rate: f64, mode: SimMode, rng: &mut R) -> f64 {
    let mean = work / rate;
    match mode {
        SimMode::Coupled => mean,
        SimMode::Analytic => {
            if mean > 0.0 {
                Exp::new(1.0 / mean).expect("positive mean").sample(rng)
            } else {
                0.0
            }
        }
    }
}

/// Splits `size` into `parts` shares of `size / parts`. Shares are boundary
/// differences `b_{k+1} - b_k` with `b_k = size * k / parts` and
/// `b_parts = size`, so every subtraction is exact and summing the shares in
/// order reproduces `size` exactly.
pub fn split_work(size: f64, parts: usize) -> Vec<f64> {
    let n = parts as f64;
    let boundary = |k: usize| {
        if k == parts {
            size
        } else {
            size * k as f64 / n
        }
    };
    (0..parts).map(|k| boundary(k + 1) - boundary(k)).collect()
}

/// Sub-tasks for `request` over `plan`, enqueued at `arrival`.
pub fn dispatch(request: usize, size: f64, plan: &Plan, arrival: f64) -> Vec<SubTask> {
    split_work(size, plan.len())
        .into_iter()
        .zip(plan.servers())
        .map(|(work, &server_id)| {
            let mut enqueued = [f64::NAN; 3];
            enqueued[Stage::Uplink.index()] = arrival;
            SubTask {
                request,
                server_id,
                work,
                enqueued,
                started: [f64::NAN; 3],
                finished: [f64::NAN; 3],
            }
        })
        .collect()
}

/// Receives queue snapshots as a run progresses.
pub trait Observer {
    fn on_snapshot(&mut self, _snapshot: &QueueSnapshot) {}
}

impl Observer for () {}

impl Observer for Vec<QueueSnapshot> {
    fn on_snapshot(&mut self, snapshot: &QueueSnapshot) {
        self.push(snapshot.clone());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Snapshot cadence; `None` disables sampling.
    pub snapshot_interval_ms: Option<f64>,
    /// Time allowed after the last arrival before in-flight requests are cut off.
    pub drain_cap_ms: f64,
}

impl RunOptions {
    pub fn from_config(config: &SimulationConfig) -> Self {
        Self {
            snapshot_interval_ms: Some(config.step.delta_ms / 100.0),
            drain_cap_ms: config.drain_cap_ms(),
        }
    }
}

/// Event-loop state. Owns every queue; schedulers only get a read-only view.
pub struct Simulation {
    servers: Vec<ServerSpec>,
    catalog: PlanCatalog,
    mode: SimMode,
    rng: ChaCha8Rng,
    trace: Vec<Arrival>,
    events: EventQueue,
    nodes: Vec<TandemNode>,
    subtasks: Vec<SubTask>,
    requests: Vec<RequestRecord>,
    outstanding: Vec<usize>,
    clock: f64,
    last_event: f64,
    completed: usize,
}

struct LiveView<'a> {
    sim: &'a Simulation,
}

impl QueueView for LiveView<'_> {
    fn now(&self) -> f64 {
        self.sim.clock
    }

    fn server(&self, id: ServerId) -> Option<&ServerSpec> {
        self.sim.server_index(id).map(|k| &self.sim.servers[k])
    }

    fn backlog(&self, server: ServerId, stage: Stage) -> f64 {
        self.sim
            .server_index(server)
            .map_or(0.0, |k| self.sim.nodes[k].stage(stage).backlog(self.sim.clock))
    }
}

impl Simulation {
    pub fn new(
        config: &SimulationConfig,
        catalog: PlanCatalog,
        trace: RequestTrace,
        seed: u64,
    ) -> Result<Self, SimError> {
        for (k, pair) in trace.arrivals.windows(2).enumerate() {
            if pair[1].arrival_ms < pair[0].arrival_ms {
                return Err(SimError::UnsortedTrace(k + 1));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SERVICE_STREAM);
        let mut events = EventQueue::default();
        if let Some(first) = trace.arrivals.first() {
            events.schedule(first.arrival_ms, EventKind::Arrival(0));
        }
        Ok(Self {
            nodes: config.servers.iter().map(|_| TandemNode::default()).collect(),
            servers: config.servers.clone(),
            catalog,
            mode: config.sim.mode,
            rng,
            trace: trace.arrivals,
            events,
            subtasks: Vec::new(),
            requests: Vec::new(),
            outstanding: Vec::new(),
            clock: 0.0,
            last_event: 0.0,
            completed: 0,
        })
    }

    fn server_index(&self, id: ServerId) -> Option<usize> {
        let k = (id as usize).checked_sub(1)?;
        (k < self.servers.len()).then_some(k)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn servers(&self) -> &[ServerSpec] {
        &self.servers
    }

    pub fn catalog(&self) -> &PlanCatalog {
        &self.catalog
    }

    /// Requests that have arrived so far.
    pub fn records(&self) -> &[RequestRecord] {
        &self.requests
    }

    pub fn subtasks(&self) -> &[SubTask] {
        &self.subtasks
    }

    pub fn arrived(&self) -> usize {
        self.requests.len()
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn in_flight(&self) -> usize {
        self.requests.len() - self.completed
    }

    pub fn arrivals_exhausted(&self) -> bool {
        self.requests.len() == self.trace.len()
    }

    pub fn last_arrival_ms(&self) -> Option<f64> {
        self.trace.last().map(|a| a.arrival_ms)
    }

    pub fn next_event_ms(&self) -> Option<f64> {
        self.events.peek_time()
    }

    /// Mean queue length of a stage over `[0, clock]`.
    pub fn mean_queue_length(&self, server: ServerId, stage: Stage) -> Option<f64> {
        let k = self.server_index(server)?;
        Some(self.nodes[k].stage(stage).mean_length(self.clock))
    }

    /// Processes every event with timestamp `<= until`, then moves the clock
    /// to `until`.
    pub fn advance_to(&mut self, until: f64, scheduler: &mut dyn Scheduler) -> Result<(), SimError> {
        while let Some(t) = self.events.peek_time() {
            if t > until {
                break;
            }
            let event = self.events.pop().expect("peeked");
            self.clock = event.time;
            self.last_event = event.time;
            match event.kind {
                EventKind::Arrival(index) => self.on_arrival(index, scheduler)?,
                EventKind::StageDone { server, stage } => self.on_stage_done(server, stage),
            }
        }
        if until > self.clock {
            self.clock = until;
        }
        Ok(())
    }

    fn on_arrival(&mut self, index: usize, scheduler: &mut dyn Scheduler) -> Result<(), SimError> {
        let arrival = self.trace[index];
        if let Some(next) = self.trace.get(index + 1) {
            self.events.schedule(next.arrival_ms, EventKind::Arrival(index + 1));
        }
        let service_index = self
            .catalog
            .service_index(arrival.service_id)
            .ok_or(SimError::UnknownService(arrival.service_id))?;
        let plan = {
            let request = PlanRequest {
                service_index,
                service_id: arrival.service_id,
                size: arrival.size_cycles,
                plans: self.catalog.plans(service_index),
            };
            scheduler.choose(&request, &LiveView { sim: self })
        };
        if plan.is_empty() {
            return Err(SimError::EmptyPlan(arrival.service_id));
        }
        for &server in plan.servers() {
            let supported = self
                .server_index(server)
                .is_some_and(|k| self.servers[k].supports(arrival.service_id));
            if !supported {
                return Err(SimError::Protocol {
                    service: arrival.service_id,
                    plan: plan.to_string(),
                    server,
                });
            }
        }

        let id = self.requests.len();
        let subtasks = dispatch(id, arrival.size_cycles, &plan, self.clock);
        self.outstanding.push(subtasks.len());
        self.requests.push(RequestRecord {
            id,
            service_id: arrival.service_id,
            arrival_ms: arrival.arrival_ms,
            size: arrival.size_cycles,
            plan,
            departure_ms: f64::INFINITY,
            latency_ms: f64::INFINITY,
        });
        for subtask in subtasks {
            let server = self.server_index(subtask.server_id).expect("validated");
            let handle = self.subtasks.len();
            self.subtasks.push(subtask);
            self.enqueue(server, Stage::Uplink, handle);
        }
        Ok(())
    }

    fn enqueue(&mut self, server: usize, stage: Stage, subtask: usize) {
        let now = self.clock;
        let work = self.subtasks[subtask].work;
        self.subtasks[subtask].enqueued[stage.index()] = now;
        let queue = self.nodes[server].stage_mut(stage);
        queue.push(subtask, work, now);
        if queue.is_idle() {
            self.start_head(server, stage);
        }
    }

    fn start_head(&mut self, server: usize, stage: Stage) {
        let now = self.clock;
        let Some(&head) = self.nodes[server].stage(stage).queue.front() else {
            return;
        };
        let work = self.subtasks[head].work;
        let duration = stage_service_time(work, self.servers[server].rate(stage), self.mode, &mut self.rng);
        self.subtasks[head].started[stage.index()] = now;
        let queue = self.nodes[server].stage_mut(stage);
        queue.in_service = Some(InService {
            start: now,
            duration,
            work,
        });
        queue.busy_until = queue.busy_until.max(now + duration);
        self.events
            .schedule(now + duration, EventKind::StageDone { server, stage });
    }

    fn on_stage_done(&mut self, server: usize, stage: Stage) {
        let now = self.clock;
        let head = *self.nodes[server]
            .stage(stage)
            .queue
            .front()
            .expect("completion for an empty stage");
        let work = self.subtasks[head].work;
        self.nodes[server].stage_mut(stage).pop(work, now);
        self.subtasks[head].finished[stage.index()] = now;
        self.start_head(server, stage);

        match stage.next() {
            Some(next) => self.enqueue(server, next, head),
            None => {
                let request = self.subtasks[head].request;
                self.outstanding[request] -= 1;
                if self.outstanding[request] == 0 {
                    let record = &mut self.requests[request];
                    record.departure_ms = now;
                    record.latency_ms = now - record.arrival_ms;
                    self.completed += 1;
                }
            }
        }
    }

    /// Queue lengths and pending work at `at`. Valid between the last
    /// processed event and the clock.
    pub fn snapshot(&self, at: f64) -> Result<QueueSnapshot, SimError> {
        if at > self.clock {
            return Err(SimError::FutureSnapshot {
                at,
                clock: self.clock,
            });
        }
        if at < self.last_event {
            return Err(SimError::StaleSnapshot {
                at,
                last: self.last_event,
            });
        }
        Ok(QueueSnapshot {
            t_ms: at,
            servers: self
                .servers
                .iter()
                .zip(&self.nodes)
                .map(|(spec, node)| ServerQueues {
                    server_id: spec.id,
                    lengths: Stage::ALL.map(|s| node.stage(s).queue.len()),
                    backlogs: Stage::ALL.map(|s| node.stage(s).backlog(at)),
                })
                .collect(),
        })
    }

    /// Pending sub-tasks per (server, stage), front first.
    pub fn pending(&self, server: ServerId, stage: Stage) -> Vec<usize> {
        self.server_index(server)
            .map(|k| self.nodes[k].stage(stage).queue.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn into_result(self) -> SimulationResult {
        SimulationResult {
            records: self.requests,
            subtasks: self.subtasks,
            end_ms: self.clock,
        }
    }
}

/// Runs a trace to completion: all arrivals, then a drain phase of at most
/// `drain_cap_ms` after the last arrival. Requests still in flight at the
/// cap keep an infinite latency.
pub fn run(
    config: &SimulationConfig,
    trace: RequestTrace,
    scheduler: &mut dyn Scheduler,
    observer: &mut dyn Observer,
    options: RunOptions,
    seed: u64,
) -> Result<SimulationResult, SimError> {
    let catalog = PlanCatalog::build(config)?;
    let mut sim = Simulation::new(config, catalog, trace, seed)?;
    let deadline = sim.last_arrival_ms().unwrap_or(0.0) + options.drain_cap_ms;
    match options.snapshot_interval_ms {
        Some(dt) if dt > 0.0 => {
            let mut k = 0u64;
            loop {
                let t = k as f64 * dt;
                if t > deadline {
                    break;
                }
                sim.advance_to(t, scheduler)?;
                observer.on_snapshot(&sim.snapshot(t)?);
                if sim.arrivals_exhausted() && sim.in_flight() == 0 {
                    break;
                }
                k += 1;
            }
            sim.advance_to(deadline.max(sim.clock()), scheduler)?;
        }
        _ => sim.advance_to(deadline, scheduler)?,
    }
    Ok(sim.into_result())
}
