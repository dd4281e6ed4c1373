//! The lifelong loop: release tasks, match them, plan, step the agents and
//! record what happened.

pub mod matrix;
pub mod metrics;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{check_well_formed_with_starts, Cell, CellKind, GridMap};
use crate::instance::{
    generate_instance, initial_positions, load_map, load_tasks, sample_endpoint_pair, Assignment,
    GuidanceMode, InstanceError, RunConfig, Task, TaskId, TaskSource, TaskStatus, Termination,
};
use crate::pgtm::{self, QueueEntry};
use crate::planner::guidance::{
    Environment, FileGuidance, GuidanceError, GuidancePair, GuidanceProvider, GuidanceRequest,
    RemoteGuidance, ZeroGuidance,
};
use crate::planner::{
    deadlock_recovery, handle_idle, plan_task, IdleAction, IdleContext, PlannerConfig,
    TaskPlanError,
};
use crate::token::{AgentId, Hold, SafetyViolation, Token};
use crate::Time;
pub use matrix::{run_matrix, MatrixEntry, MatrixRow, MatrixSpec, MatrixTable};
pub use metrics::{CompletionRecord, Metrics};

/// A map, agent start cells and a task stream with `tasks[i].id == TaskId(i)`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub map: GridMap,
    pub starts: Vec<Cell>,
    pub tasks: Vec<Task>,
}

impl Instance {
    pub fn new(map: GridMap, starts: Vec<Cell>, mut tasks: Vec<Task>) -> Self {
        tasks.sort_by_key(|t| t.id);
        for (i, t) in tasks.iter_mut().enumerate() {
            t.id = TaskId(i as u32);
            t.status = TaskStatus::Unreleased;
        }
        Instance { map, starts, tasks }
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub delay_p: f64,
    pub planner: PlannerConfig,
    /// Timestep cap; `None` means 10 x (|V| + m x (H + W)).
    pub horizon: Option<Time>,
    pub termination: Termination,
    pub assignment: Assignment,
    pub strict: bool,
    pub seed: u64,
    pub record_trace: bool,
    /// Rebuild and compare the reservation index after every step.
    pub audit: bool,
}

impl SimOptions {
    pub fn new(map: &GridMap) -> Self {
        SimOptions {
            delay_p: 0.0,
            planner: PlannerConfig::for_map(map),
            horizon: None,
            termination: Termination::Drain,
            assignment: Assignment::Pgtm,
            strict: true,
            seed: 0,
            record_trace: false,
            audit: false,
        }
    }

    fn from_config(map: &GridMap, cfg: &RunConfig) -> Self {
        let mut planner = PlannerConfig::for_map(map);
        if let Some(m) = cfg.max_iters {
            planner.max_iters = m;
        }
        planner.recovery_radius = cfg.recovery_radius;
        SimOptions {
            delay_p: cfg.delay_p,
            planner,
            horizon: cfg.horizon,
            termination: cfg.termination,
            assignment: cfg.assignment,
            strict: cfg.strict,
            seed: cfg.seed,
            record_trace: cfg.trace_out.is_some(),
            audit: false,
        }
    }
}

/// `10 x (|V| + m x (H + W))`.
pub fn default_horizon(map: &GridMap, n_tasks: usize) -> Time {
    let v = map.passable_count() as u64;
    let hw = (map.width() + map.height()) as u64;
    (10 * (v + n_tasks as u64 * hw)).min(Time::MAX as u64) as Time
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Resting,
    ToPickup,
    ToDelivery,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Idle => "idle",
            Phase::Resting => "rest",
            Phase::ToPickup => "pickup",
            Phase::ToDelivery => "delivery",
        })
    }
}

/// One replay line: `t agent x y task phase`, with `-` for no task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub t: Time,
    pub agent: AgentId,
    pub cell: Cell,
    pub task: Option<TaskId>,
    pub phase: Phase,
}

impl fmt::Display for TraceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} ",
            self.t, self.agent, self.cell.x, self.cell.y
        )?;
        match self.task {
            Some(t) => write!(f, "{t}")?,
            None => f.write_str("-")?,
        }
        write!(f, " {}", self.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Delayed {
        t: Time,
        agent: AgentId,
    },
    PlanFailed {
        t: Time,
        agent: AgentId,
        task: TaskId,
    },
    Recovery {
        t: Time,
        agent: AgentId,
        target: Cell,
    },
    Stuck {
        t: Time,
        agent: AgentId,
    },
    GuidanceFallback {
        t: Time,
        message: String,
    },
    Internal {
        t: Time,
        agent: AgentId,
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub metrics: Metrics,
    pub token: Token,
    pub tasks: Vec<Task>,
    pub events: Vec<Event>,
    pub trace: Vec<TraceRow>,
    pub seed: u64,
    pub config: Option<RunConfig>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("instance is not well-formed: {0}")]
    NotWellFormed(String),
    #[error("could not start guidance: {0}")]
    Guidance(#[from] GuidanceError),
    #[error("safety violation: {0}")]
    Safety(#[from] SafetyViolation),
    #[error("t={t}, agent {agent}: {message}")]
    Internal {
        t: Time,
        agent: AgentId,
        message: String,
    },
    #[error("{0}: {1}")]
    Output(PathBuf, #[source] std::io::Error),
}

const DELAY_STREAM: u64 = 0;
const PLAN_STREAM: u64 = 1;
const ASSIGN_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Sim<'a> {
    map: &'a GridMap,
    opts: &'a SimOptions,
    token: Token,
    tasks: Vec<Task>,
    /// Task ids in release order.
    release_order: Vec<TaskId>,
    next_release: usize,
    /// Released and waiting for an agent, ascending id.
    unassigned: Vec<TaskId>,
    /// Random mode: a task an agent could not plan yet, retried next step.
    pending: Vec<Option<TaskId>>,
    task_endpoints: Vec<Cell>,
    metrics: Metrics,
    events: Vec<Event>,
    trace: Vec<TraceRow>,
    delay_rng: ChaCha8Rng,
    plan_rng: ChaCha8Rng,
    assign_rng: ChaCha8Rng,
    /// Agents left without a reservation for the next step; they plan first
    /// on the following step.
    stuck: Vec<AgentId>,
}

/// Runs one simulation in memory.
pub fn simulate(
    instance: &Instance,
    opts: &SimOptions,
    guidance: &mut dyn GuidanceProvider,
) -> Result<SimulationResult, SimError> {
    let map = &instance.map;
    let mut tasks = instance.tasks.clone();
    if opts.assignment == Assignment::Random {
        tasks.clear();
    }
    let mut release_order: Vec<TaskId> = tasks.iter().map(|t| t.id).collect();
    release_order.sort_by_key(|&id| (tasks[id.0 as usize].release, id));
    let mut sim = Sim {
        map,
        opts,
        token: Token::new(map, &instance.starts),
        metrics: Metrics {
            total_tasks: tasks.len(),
            ..Metrics::default()
        },
        tasks,
        release_order,
        next_release: 0,
        unassigned: Vec::new(),
        pending: vec![None; instance.starts.len()],
        task_endpoints: map.task_endpoints(),
        events: Vec::new(),
        trace: Vec::new(),
        delay_rng: stream(opts.seed, DELAY_STREAM),
        plan_rng: stream(opts.seed, PLAN_STREAM),
        assign_rng: stream(opts.seed, ASSIGN_STREAM),
        stuck: Vec::new(),
    };
    let horizon = opts
        .horizon
        .unwrap_or_else(|| default_horizon(map, instance.tasks.len()));
    let clock = Instant::now();

    let elapsed = loop {
        let now = sim.token.now();
        sim.collect_completions();
        sim.release(now);
        if opts.record_trace {
            sim.record_trace(now);
        }
        let drained = sim.metrics.records.len() == sim.tasks.len();
        let stop = match opts.termination {
            Termination::Drain => drained,
            Termination::Fixed(n) => now + 1 >= n,
        };
        if stop {
            break now + 1;
        }
        if now >= horizon {
            sim.metrics.incomplete = !drained || opts.termination != Termination::Drain;
            warn!(
                "horizon {horizon} reached with {} of {} tasks completed",
                sim.metrics.records.len(),
                sim.tasks.len()
            );
            break now + 1;
        }
        sim.step(now, guidance)?;
    };

    let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
    sim.metrics.total_tasks = sim.tasks.len();
    sim.metrics.finish(elapsed, wall_ms);
    Ok(SimulationResult {
        metrics: sim.metrics,
        token: sim.token,
        tasks: sim.tasks,
        events: sim.events,
        trace: sim.trace,
        seed: opts.seed,
        config: None,
    })
}

impl Sim<'_> {
    fn collect_completions(&mut self) {
        let agent_of: Vec<(TaskId, AgentId)> = self
            .token
            .agents()
            .iter()
            .filter_map(|a| a.task.map(|t| (t, a.id)))
            .collect();
        for tid in self.token.update_completed(&mut self.tasks) {
            let task = &self.tasks[tid.0 as usize];
            let TaskStatus::Completed(at) = task.status else {
                unreachable!()
            };
            let agent = agent_of
                .iter()
                .find(|(t, _)| *t == tid)
                .map(|&(_, a)| a)
                .expect("completed by an agent");
            self.metrics.records.push(CompletionRecord {
                task: tid,
                agent,
                release: task.release,
                completed: at,
            });
        }
    }

    fn release(&mut self, now: Time) {
        while let Some(&id) = self.release_order.get(self.next_release) {
            let task = &mut self.tasks[id.0 as usize];
            if task.release > now {
                break;
            }
            task.status = TaskStatus::Unassigned;
            let pos = self.unassigned.partition_point(|&u| u < id);
            self.unassigned.insert(pos, id);
            self.next_release += 1;
        }
    }

    fn record_trace(&mut self, now: Time) {
        for a in self.token.agents() {
            let phase = match a.task.map(|t| self.tasks[t.0 as usize].status) {
                Some(TaskStatus::PickedUp(_)) => Phase::ToDelivery,
                Some(_) => Phase::ToPickup,
                None if a.is_resting() => Phase::Resting,
                None => Phase::Idle,
            };
            self.trace.push(TraceRow {
                t: now,
                agent: a.id,
                cell: a.location,
                task: a.task,
                phase,
            });
        }
    }

    fn step(&mut self, now: Time, guidance: &mut dyn GuidanceProvider) -> Result<(), SimError> {
        let stuck = std::mem::take(&mut self.stuck);
        let rank = (!stuck.is_empty()).then(|| self.clear_around(&stuck));
        let mut queue = self.build_queue(now);
        if let Some(rank) = rank {
            queue.sort_by_key(|e| rank[e.agent.0 as usize]);
        }
        let pairs = self.fetch_guidance(now, &queue, guidance);
        let mut ctx = self.idle_context(now);
        ctx.evict
            .extend(stuck.iter().map(|&a| self.token.agent(a).location));

        for (entry, pair) in queue.iter().zip(&pairs) {
            match entry.task {
                Some(tid) => self.plan_entry(now, entry, tid, pair, &mut ctx)?,
                None => self.idle(now, entry.agent, &mut ctx),
            }
        }

        let missed = self.token.advance(&mut self.delay_rng, self.opts.delay_p)?;
        self.metrics.delays += missed.len() as u64;
        for agent in missed {
            debug!("t={now}: agent {agent} delayed");
            self.events.push(Event::Delayed { t: now, agent });
        }
        if self.opts.audit {
            assert!(
                self.token.index_consistent(),
                "reservation index diverged at t={now}"
            );
        }
        Ok(())
    }

    /// Drops the future reservations of every unparked agent near a stuck
    /// one. Returns a planning rank per agent: stuck agents first, then the
    /// cleared ones nearest first, so the way out is made before anyone else
    /// plans around it. Cleared agents keep their cell for one more step
    /// where possible.
    fn clear_around(&mut self, stuck: &[AgentId]) -> Vec<u32> {
        let r = self.opts.planner.recovery_radius;
        let centres: Vec<Cell> = stuck
            .iter()
            .map(|&a| self.token.agent(a).location)
            .collect();
        let mut rank = vec![u32::MAX; self.token.num_agents()];
        let mut near = Vec::new();
        for a in self.token.agents() {
            let d = centres
                .iter()
                .map(|c| c.chebyshev(a.location))
                .min()
                .unwrap_or(u32::MAX);
            let parked = a.is_resting() && !a.has_pending_moves();
            if d <= r && !parked {
                rank[a.id.0 as usize] = if stuck.contains(&a.id) { 0 } else { d + 1 };
                near.push((a.id, a.location));
            }
        }
        for &(id, loc) in &near {
            self.token
                .commit_path(id, vec![loc], Hold::None)
                .expect("an agent may always stand still now");
            self.token.mark_replan(id);
        }
        for &(id, loc) in &near {
            if !stuck.contains(&id) {
                let _ = self.token.commit_path(id, vec![loc], Hold::Buffer);
            }
        }
        rank
    }

    fn build_queue(&mut self, now: Time) -> Vec<QueueEntry> {
        let agents = self.token.agents();
        let delayed: Vec<(AgentId, TaskId)> = agents
            .iter()
            .filter(|a| a.delayed || a.needs_replan)
            .filter_map(|a| a.task.map(|t| (a.id, t)))
            .collect();
        let idle: Vec<(AgentId, Cell)> = agents
            .iter()
            .filter(|a| a.task.is_none())
            .map(|a| (a.id, a.location))
            .collect();

        match self.opts.assignment {
            Assignment::Pgtm => {
                let ready: Vec<(TaskId, Cell)> = self
                    .unassigned
                    .iter()
                    .map(|&id| &self.tasks[id.0 as usize])
                    .filter(|t| t.release < now)
                    .map(|t| (t.id, t.pickup))
                    .collect();
                pgtm::assign(&delayed, &idle, &ready)
            }
            Assignment::Random => {
                let mut queue = pgtm::assign(&delayed, &[], &[]);
                for (agent, _) in idle {
                    let tid = match self.pending[agent.0 as usize].take() {
                        Some(t) => t,
                        None => self.new_random_task(now),
                    };
                    queue.push(QueueEntry {
                        agent,
                        task: Some(tid),
                        preserved: false,
                    });
                }
                queue
            }
        }
    }

    fn new_random_task(&mut self, now: Time) -> TaskId {
        let (pickup, delivery) = sample_endpoint_pair(&self.task_endpoints, &mut self.assign_rng);
        let id = TaskId(self.tasks.len() as u32);
        let mut task = Task::new(id, now, pickup, delivery);
        task.status = TaskStatus::Unassigned;
        self.tasks.push(task);
        id
    }

    fn fetch_guidance(
        &mut self,
        now: Time,
        queue: &[QueueEntry],
        provider: &mut dyn GuidanceProvider,
    ) -> Vec<GuidancePair> {
        let zero = GuidancePair::zeros(self.map.width(), self.map.height());
        let mut out = vec![zero.clone(); queue.len()];
        if provider.is_zero() {
            return out;
        }
        let slots: Vec<usize> = (0..queue.len())
            .filter(|&i| queue[i].task.is_some())
            .collect();
        if slots.is_empty() {
            return out;
        }
        let busy: FxHashSet<AgentId> = queue
            .iter()
            .filter(|e| e.task.is_some())
            .map(|e| e.agent)
            .collect();
        let idle_cells = self
            .token
            .agents()
            .iter()
            .filter(|a| a.task.is_none() && !busy.contains(&a.id))
            .map(|a| a.location);
        let env = Environment::new(self.map, idle_cells);
        let requests: Vec<GuidanceRequest> = slots
            .iter()
            .map(|&i| {
                let task = &self.tasks[queue[i].task.unwrap().0 as usize];
                GuidanceRequest {
                    agent_cell: self.token.agent(queue[i].agent).location,
                    pickup: task.pickup,
                    delivery: task.delivery,
                }
            })
            .collect();
        match provider.fetch(&env, &requests) {
            Ok(pairs) if pairs.len() == requests.len() => {
                for (&i, p) in slots.iter().zip(pairs) {
                    out[i] = p;
                }
            }
            Ok(pairs) => self.guidance_fallback(
                now,
                format!(
                    "expected {} guidance pairs, got {}",
                    requests.len(),
                    pairs.len()
                ),
            ),
            Err(e) => self.guidance_fallback(now, e.to_string()),
        }
        out
    }

    fn guidance_fallback(&mut self, now: Time, message: String) {
        warn!("t={now}: guidance unavailable ({message}); planning without it");
        self.metrics.guidance_fallbacks += 1;
        self.events
            .push(Event::GuidanceFallback { t: now, message });
    }

    fn idle_context(&self, now: Time) -> IdleContext {
        let mut ctx = IdleContext::default();
        for &id in &self.unassigned {
            let t = &self.tasks[id.0 as usize];
            if t.release >= now {
                continue;
            }
            ctx.task_endpoints.insert(t.pickup);
            ctx.task_endpoints.insert(t.delivery);
        }
        for a in self.token.agents() {
            if a.is_resting() {
                ctx.claimed.insert(*a.path().last().unwrap());
            }
            if a.task.is_none() && self.map.kind(a.location) == CellKind::NonTaskEndpoint {
                ctx.claimed.insert(a.location);
            }
        }
        ctx
    }

    fn plan_entry(
        &mut self,
        now: Time,
        entry: &QueueEntry,
        tid: TaskId,
        pair: &GuidancePair,
        ctx: &mut IdleContext,
    ) -> Result<(), SimError> {
        let agent = entry.agent;
        let task = &mut self.tasks[tid.0 as usize];
        let result = plan_task(
            self.map,
            &mut self.token,
            agent,
            task,
            pair,
            &self.opts.planner,
        );
        match result {
            Ok(expanded) => {
                self.metrics.expanded += expanded as u64;
                if let Ok(pos) = self.unassigned.binary_search(&tid) {
                    self.unassigned.remove(pos);
                }
                Ok(())
            }
            Err(TaskPlanError::Deadlock { expanded }) => {
                self.metrics.expanded += expanded as u64;
                self.metrics.failed_plans += 1;
                self.events.push(Event::PlanFailed {
                    t: now,
                    agent,
                    task: tid,
                });
                if entry.preserved {
                    self.token.mark_replan(agent);
                    self.secure_next_step(now, agent, ctx);
                } else {
                    if self.opts.assignment == Assignment::Random {
                        self.pending[agent.0 as usize] = Some(tid);
                    }
                    self.idle(now, agent, ctx);
                }
                Ok(())
            }
            Err(e) => {
                let message = e.to_string();
                if self.opts.strict {
                    return Err(SimError::Internal {
                        t: now,
                        agent,
                        message,
                    });
                }
                warn!("t={now}, agent {agent}: {message}");
                self.events.push(Event::Internal {
                    t: now,
                    agent,
                    message,
                });
                self.token.mark_replan(agent);
                self.secure_next_step(now, agent, ctx);
                Ok(())
            }
        }
    }

    /// An agent that keeps its task but has no fresh plan still needs a
    /// reservation for the next step: wait in place, or step aside.
    fn secure_next_step(&mut self, now: Time, agent: AgentId, ctx: &mut IdleContext) {
        let a = self.token.agent(agent);
        if a.has_pending_moves() || a.hold() != Hold::None {
            return;
        }
        let loc = a.location;
        if self
            .token
            .commit_path(agent, vec![loc], Hold::Buffer)
            .is_ok()
        {
            self.token.mark_replan(agent);
            return;
        }
        let (action, expanded) = deadlock_recovery(
            self.map,
            &mut self.token,
            agent,
            ctx,
            &mut self.plan_rng,
            &self.opts.planner,
        );
        self.metrics.expanded += expanded as u64;
        self.token.mark_replan(agent);
        self.note_idle_action(now, agent, action);
    }

    fn idle(&mut self, now: Time, agent: AgentId, ctx: &mut IdleContext) {
        let (action, expanded) = handle_idle(
            self.map,
            &mut self.token,
            agent,
            ctx,
            &mut self.plan_rng,
            &self.opts.planner,
        );
        self.metrics.expanded += expanded as u64;
        self.note_idle_action(now, agent, action);
    }

    fn note_idle_action(&mut self, now: Time, agent: AgentId, action: IdleAction) {
        match action {
            IdleAction::Recovery(target) => {
                self.metrics.recoveries += 1;
                self.events.push(Event::Recovery {
                    t: now,
                    agent,
                    target,
                });
            }
            IdleAction::Stuck => {
                self.events.push(Event::Stuck { t: now, agent });
                self.stuck.push(agent);
            }
            _ => {}
        }
    }
}

/// Builds the instance a config describes.
pub fn load_instance(cfg: &RunConfig) -> Result<Instance, SimError> {
    cfg.validate()?;
    let map = load_map(&cfg.map)?;
    let starts = initial_positions(&map, cfg.agents)?;
    if cfg.require_well_formed {
        let report = check_well_formed_with_starts(&map, &starts);
        if !report.ok {
            let msgs: Vec<String> = report
                .violations
                .iter()
                .take(5)
                .map(|v| v.to_string())
                .collect();
            return Err(SimError::NotWellFormed(msgs.join("; ")));
        }
    }
    let tasks = match &cfg.tasks {
        TaskSource::File(path) => load_tasks(path, &map)?.tasks,
        TaskSource::Generate {
            count,
            frequency,
            seed,
        } => generate_instance(&map, *count, *frequency, seed.unwrap_or(cfg.seed))?.tasks,
    };
    Ok(Instance::new(map, starts, tasks))
}

/// Builds the guidance provider a config asks for.
pub fn guidance_provider(
    mode: &GuidanceMode,
    map: &GridMap,
) -> Result<Box<dyn GuidanceProvider>, SimError> {
    Ok(match mode {
        GuidanceMode::Zero => Box::new(ZeroGuidance::default()),
        GuidanceMode::File(dir) => Box::new(FileGuidance::new(dir, map)),
        GuidanceMode::Subprocess(cmd) => Box::new(
            RemoteGuidance::spawn(cmd)
                .map_err(|e| SimError::Guidance(GuidanceError::Process(e)))?,
        ),
    })
}

/// Loads, simulates and writes the configured outputs.
pub fn run(cfg: &RunConfig) -> Result<SimulationResult, SimError> {
    let instance = load_instance(cfg)?;
    let opts = SimOptions::from_config(&instance.map, cfg);
    let mut provider = guidance_provider(&cfg.guidance, &instance.map)?;
    let mut result = simulate(&instance, &opts, provider.as_mut())?;
    result.config = Some(cfg.clone());
    if let Some(path) = &cfg.metrics_out {
        write_metrics(path, &result)?;
    }
    if let Some(path) = &cfg.trace_out {
        write_trace(path, &result.trace)?;
    }
    Ok(result)
}

/// Like [`run`], but every agent that becomes free draws a fresh uniformly
/// random task instead of taking one from the stream.
pub fn random_assign_baseline(cfg: &RunConfig) -> Result<SimulationResult, SimError> {
    let mut cfg = cfg.clone();
    cfg.assignment = Assignment::Random;
    run(&cfg)
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    config: Option<&'a RunConfig>,
    seed: u64,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

pub fn metrics_json(result: &SimulationResult) -> serde_json::Value {
    serde_json::to_value(MetricsReport {
        config: result.config.as_ref(),
        seed: result.seed,
        metrics: &result.metrics,
    })
    .expect("metrics serialize")
}

pub fn write_metrics(path: &Path, result: &SimulationResult) -> Result<(), SimError> {
    let text = serde_json::to_string_pretty(&metrics_json(result)).expect("metrics serialize");
    fs::write(path, text + "\n").map_err(|e| SimError::Output(path.to_path_buf(), e))
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<(), SimError> {
    let io = |e| SimError::Output(path.to_path_buf(), e);
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for row in trace {
        writeln!(w, "{row}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Rebuilds per-timestep positions from a trace and checks vertex, swap and
/// adjacency constraints without consulting the token.
pub fn verify_trace(map: &GridMap, trace: &[TraceRow]) -> Result<(), String> {
    let mut frames: Vec<Vec<Cell>> = Vec::new();
    for row in trace {
        let t = row.t as usize;
        if frames.len() <= t {
            frames.resize(t + 1, Vec::new());
        }
        let frame = &mut frames[t];
        let i = row.agent.0 as usize;
        if frame.len() <= i {
            frame.resize(i + 1, Cell::new(u32::MAX, u32::MAX));
        }
        frame[i] = row.cell;
    }
    for (t, frame) in frames.iter().enumerate() {
        let mut seen = FxHashSet::default();
        for (i, &c) in frame.iter().enumerate() {
            if !map.in_bounds(c) || !map.is_passable(c) {
                return Err(format!("t={t}: agent {i} on impassable {c}"));
            }
            if !seen.insert(c) {
                return Err(format!("t={t}: two agents on {c}"));
            }
        }
        if t == 0 {
            continue;
        }
        let prev = &frames[t - 1];
        for (i, (&a, &b)) in prev.iter().zip(frame).enumerate() {
            if a != b && !a.is_adjacent(b) {
                return Err(format!("t={t}: agent {i} jumped {a} -> {b}"));
            }
            for (j, (&c, &d)) in prev.iter().zip(frame).enumerate() {
                if i < j && a != b && a == d && b == c {
                    return Err(format!("t={t}: agents {i} and {j} swapped {a} <-> {b}"));
                }
            }
        }
    }
    Ok(())
}

/// Deterministic per-run seed from a master seed and a run index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    stream(master, index).gen()
}
