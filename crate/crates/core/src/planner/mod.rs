//! Task legs, idle-agent handling and deadlock recovery on top of the
//! space-time search.

pub mod guidance;
pub mod search;
pub mod wire;

use rand::seq::SliceRandom;
use rand::Rng;
use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::grid::{heuristic_with, Cell, CellKind, GridMap, DEFAULT_TIE_BREAK};
use crate::instance::{Task, TaskStatus};
use crate::token::{AgentId, CommitError, Hold, Token};
pub use guidance::{GuidanceMap, GuidancePair, GuidanceProvider};
pub use search::{default_max_iters, plan, PlanError, SearchParams, SearchStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    /// Expansion budget per search.
    pub max_iters: usize,
    pub recovery_radius: u32,
    /// How many non-task endpoints an idle agent tries before recovery.
    pub endpoint_attempts: usize,
    /// Candidate cells sampled per recovery radius.
    pub recovery_samples: usize,
    pub tie_break: f64,
}

impl PlannerConfig {
    pub fn for_map(map: &GridMap) -> Self {
        PlannerConfig {
            max_iters: default_max_iters(map),
            recovery_radius: 5,
            endpoint_attempts: 8,
            recovery_samples: 3,
            tie_break: DEFAULT_TIE_BREAK,
        }
    }

    fn params(
        &self,
        map: &GridMap,
        token: &Token,
        start_t: crate::Time,
        hold: Hold,
    ) -> SearchParams {
        let mut p = SearchParams::new(map, token, start_t, self.max_iters, hold);
        p.tie_break = self.tie_break;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskPlanError {
    #[error("no path for task legs ({expanded} expansions)")]
    Deadlock { expanded: usize },
    #[error("planner produced an invalid path: {0}")]
    Commit(#[from] CommitError),
    #[error(transparent)]
    Contract(PlanError),
}

impl TaskPlanError {
    pub fn expanded(&self) -> usize {
        match self {
            TaskPlanError::Deadlock { expanded } => *expanded,
            _ => 0,
        }
    }
}

/// Plans the agent's remaining legs for `task` (to the pickup unless already
/// carrying it, then to the delivery), commits the joined path and marks the
/// task as the agent's. Returns the total expansions.
pub fn plan_task(
    map: &GridMap,
    token: &mut Token,
    agent: AgentId,
    task: &mut Task,
    guidance: &GuidancePair,
    cfg: &PlannerConfig,
) -> Result<usize, TaskPlanError> {
    let now = token.now();
    let loc = token.agent(agent).location;
    let carrying = task.status == TaskStatus::PickedUp(agent);
    let mut expanded = 0;
    let fail = |e: PlanError, expanded: usize| match e {
        PlanError::Deadlock(s) => TaskPlanError::Deadlock {
            expanded: expanded + s.expanded,
        },
        e => TaskPlanError::Contract(e),
    };

    let mut path = if carrying {
        vec![loc]
    } else {
        let p = cfg.params(map, token, now, Hold::None);
        let (leg, stats) = plan(
            map,
            token,
            agent,
            loc,
            task.pickup,
            now,
            &guidance.to_pickup,
            &p,
        )
        .map_err(|e| fail(e, expanded))?;
        expanded += stats.expanded;
        leg
    };
    let (from, t1) = if carrying {
        (loc, now)
    } else {
        (task.pickup, now + path.len() as crate::Time - 1)
    };
    let p = cfg.params(map, token, t1, Hold::Buffer);
    let (leg, stats) = plan(
        map,
        token,
        agent,
        from,
        task.delivery,
        t1,
        &guidance.to_delivery,
        &p,
    )
    .map_err(|e| fail(e, expanded))?;
    expanded += stats.expanded;
    path.extend_from_slice(&leg[1..]);

    token.commit_path(agent, path, Hold::Buffer)?;
    token.set_task(agent, Some(task.id));
    token.clear_flags(agent);
    if !carrying {
        task.status = if loc == task.pickup {
            TaskStatus::PickedUp(agent)
        } else {
            TaskStatus::Assigned(agent)
        };
    }
    Ok(expanded)
}

/// What happened to an idle agent this timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdleAction {
    /// Still following an earlier route.
    Keep,
    /// Idles where it is; resting when on a non-task endpoint.
    StayPut {
        resting: bool,
    },
    RouteTo(Cell),
    Recovery(Cell),
    /// Recovery found nothing; holds its cell for one step.
    Wait,
    /// Could not even reserve its own cell for the next step.
    Stuck,
}

/// Per-timestep context shared by idle handling.
#[derive(Debug, Default)]
pub struct IdleContext {
    /// Pickup and delivery cells of every task waiting for an agent.
    pub task_endpoints: FxHashSet<Cell>,
    /// Non-task endpoints already targeted or occupied by resting agents.
    pub claimed: FxHashSet<Cell>,
    /// Cells whose occupants must move on even if nobody reserves them yet.
    pub evict: FxHashSet<Cell>,
}

/// Keeps, parks or reroutes an agent without a task. Returns the action and
/// the number of search expansions spent.
pub fn handle_idle(
    map: &GridMap,
    token: &mut Token,
    agent: AgentId,
    ctx: &mut IdleContext,
    rng: &mut impl Rng,
    cfg: &PlannerConfig,
) -> (IdleAction, usize) {
    let now = token.now();
    let a = token.agent(agent);
    let loc = a.location;
    if a.has_pending_moves() && !a.needs_replan && a.hold() != Hold::None {
        return (IdleAction::Keep, 0);
    }

    if !token.reserved_after(loc, now, agent)
        && !ctx.task_endpoints.contains(&loc)
        && !ctx.evict.contains(&loc)
    {
        let resting = map.kind(loc) == CellKind::NonTaskEndpoint;
        let hold = if resting { Hold::Rest } else { Hold::Buffer };
        token
            .commit_path(agent, vec![loc], hold)
            .expect("own cell is free when nobody reserves it later");
        token.clear_flags(agent);
        if resting {
            ctx.claimed.insert(loc);
        }
        return (IdleAction::StayPut { resting }, 0);
    }

    let mut expanded = 0;
    let mut endpoints: Vec<(f64, usize, Cell)> = map
        .non_task_endpoints()
        .into_iter()
        .filter(|&c| c != loc && !ctx.claimed.contains(&c))
        .map(|c| (heuristic_with(loc, c, cfg.tie_break), map.index(c), c))
        .collect();
    endpoints.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let zero = GuidanceMap::zeros(map.width(), map.height());
    for &(_, _, target) in endpoints.iter().take(cfg.endpoint_attempts) {
        let p = cfg.params(map, token, now, Hold::Rest);
        match plan(map, token, agent, loc, target, now, &zero, &p) {
            Ok((path, stats)) => {
                expanded += stats.expanded;
                token
                    .commit_path(agent, path, Hold::Rest)
                    .expect("search respects reservations");
                token.clear_flags(agent);
                ctx.claimed.insert(target);
                return (IdleAction::RouteTo(target), expanded);
            }
            Err(e) => expanded += e.expanded(),
        }
    }

    let (action, e) = deadlock_recovery(map, token, agent, ctx, rng, cfg);
    (action, expanded + e)
}

/// Sends the agent to a random free cell nearby with a short search horizon,
/// widening the radius on failure; falls back to waiting in place.
pub fn deadlock_recovery(
    map: &GridMap,
    token: &mut Token,
    agent: AgentId,
    ctx: &IdleContext,
    rng: &mut impl Rng,
    cfg: &PlannerConfig,
) -> (IdleAction, usize) {
    let now = token.now();
    let loc = token.agent(agent).location;
    let diameter = map.width() + map.height();
    let zero = GuidanceMap::zeros(map.width(), map.height());
    let mut expanded = 0;
    let mut radius = cfg.recovery_radius.max(1);
    loop {
        let mut candidates: Vec<Cell> = recovery_candidates(map, token, agent, loc, radius, ctx);
        candidates.shuffle(rng);
        for &target in candidates.iter().take(cfg.recovery_samples) {
            let p = SearchParams {
                max_iters: (cfg.max_iters / 4).max(1),
                horizon: now + 4 * radius,
                goal_hold: Hold::Buffer,
                tie_break: cfg.tie_break,
            };
            match plan(map, token, agent, loc, target, now, &zero, &p) {
                Ok((path, stats)) => {
                    expanded += stats.expanded;
                    token
                        .commit_path(agent, path, Hold::Buffer)
                        .expect("search respects reservations");
                    token.clear_flags(agent);
                    return (IdleAction::Recovery(target), expanded);
                }
                Err(e) => expanded += e.expanded(),
            }
        }
        if radius >= diameter {
            break;
        }
        radius = (radius * 2).min(diameter);
    }
    if token.commit_path(agent, vec![loc], Hold::Buffer).is_ok() {
        (IdleAction::Wait, expanded)
    } else {
        (IdleAction::Stuck, expanded)
    }
}

/// Free cells within Chebyshev `radius` that nobody else reserves from now on
/// and that are not endpoints of waiting tasks.
pub fn recovery_candidates(
    map: &GridMap,
    token: &Token,
    agent: AgentId,
    loc: Cell,
    radius: u32,
    ctx: &IdleContext,
) -> Vec<Cell> {
    let now = token.now();
    let (x0, x1) = (
        loc.x.saturating_sub(radius),
        (loc.x + radius).min(map.width() - 1),
    );
    let (y0, y1) = (
        loc.y.saturating_sub(radius),
        (loc.y + radius).min(map.height() - 1),
    );
    let mut out = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = Cell::new(x, y);
            if c != loc
                && map.is_passable(c)
                && !ctx.task_endpoints.contains(&c)
                && !token.reserved_after(c, now, agent)
            {
                out.push(c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{parse_map, TaskId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(x: u32, y: u32) -> Cell {
        Cell::new(x, y)
    }

    fn zeros(map: &GridMap) -> GuidancePair {
        GuidancePair::zeros(map.width(), map.height())
    }

    #[test]
    fn task_from_pickup_is_single_leg() {
        let map = parse_map("E...E\n.....\n").unwrap();
        let mut tok = Token::new(&map, &[c(0, 0)]);
        let mut task = Task::new(TaskId(0), 0, c(0, 0), c(4, 0));
        task.status = TaskStatus::Unassigned;
        let cfg = PlannerConfig::for_map(&map);
        plan_task(&map, &mut tok, AgentId(0), &mut task, &zeros(&map), &cfg).unwrap();
        assert_eq!(tok.agent(AgentId(0)).path().len() - 1, 4);
        assert_eq!(task.status, TaskStatus::PickedUp(AgentId(0)));
        assert_eq!(tok.agent(AgentId(0)).task, Some(TaskId(0)));
    }

    #[test]
    fn two_legs_on_empty_map() {
        let map = parse_map(".....\n.E...\n....E\n").unwrap();
        let mut tok = Token::new(&map, &[c(0, 0)]);
        let mut task = Task::new(TaskId(0), 0, c(1, 1), c(4, 2));
        task.status = TaskStatus::Unassigned;
        let cfg = PlannerConfig::for_map(&map);
        plan_task(&map, &mut tok, AgentId(0), &mut task, &zeros(&map), &cfg).unwrap();
        let path = tok.agent(AgentId(0)).path();
        assert_eq!(
            path.len() - 1,
            c(0, 0).manhattan(c(1, 1)) as usize + c(1, 1).manhattan(c(4, 2)) as usize
        );
        assert!(path.contains(&c(1, 1)));
        assert_eq!(task.status, TaskStatus::Assigned(AgentId(0)));
    }

    #[test]
    fn enclosed_delivery_defers_task() {
        // Delivery (2,1) is ringed by four resting agents.
        let map = parse_map("E.P..\n.PEP.\n..P..\n").unwrap();
        let ring = [c(2, 0), c(1, 1), c(3, 1), c(2, 2)];
        let mut starts = vec![c(0, 0)];
        starts.extend(ring);
        let mut tok = Token::new(&map, &starts);
        for (i, &cell) in ring.iter().enumerate() {
            tok.commit_path(AgentId(i as u32 + 1), vec![cell], Hold::Rest)
                .unwrap();
        }
        let mut task = Task::new(TaskId(0), 0, c(0, 0), c(2, 1));
        task.status = TaskStatus::Unassigned;
        let cfg = PlannerConfig::for_map(&map);
        let err = plan_task(&map, &mut tok, AgentId(0), &mut task, &zeros(&map), &cfg).unwrap_err();
        assert!(matches!(err, TaskPlanError::Deadlock { .. }));
        assert_eq!(task.status, TaskStatus::Unassigned);
        assert_eq!(tok.agent(AgentId(0)).task, None);
        let p = SearchParams::new(&map, &tok, 0, usize::MAX, Hold::Buffer);
        assert_eq!(
            search::tests::brute_arrival(&map, &tok, AgentId(0), c(0, 0), c(2, 1), &p),
            None
        );
    }

    #[test]
    fn idle_on_free_endpoint_rests() {
        let map = parse_map("P..E\n").unwrap();
        let mut tok = Token::new(&map, &[c(0, 0)]);
        let cfg = PlannerConfig::for_map(&map);
        let mut ctx = IdleContext::default();
        let (act, _) = handle_idle(
            &map,
            &mut tok,
            AgentId(0),
            &mut ctx,
            &mut ChaCha8Rng::seed_from_u64(1),
            &cfg,
        );
        assert_eq!(act, IdleAction::StayPut { resting: true });
        assert!(tok.agent(AgentId(0)).is_resting());
    }

    #[test]
    fn idle_on_waiting_pickup_moves_to_endpoint() {
        let map = parse_map("P..E.P\n").unwrap();
        let mut tok = Token::new(&map, &[c(3, 0)]);
        let cfg = PlannerConfig::for_map(&map);
        let mut ctx = IdleContext::default();
        ctx.task_endpoints.insert(c(3, 0));
        let (act, _) = handle_idle(
            &map,
            &mut tok,
            AgentId(0),
            &mut ctx,
            &mut ChaCha8Rng::seed_from_u64(1),
            &cfg,
        );
        assert_eq!(act, IdleAction::RouteTo(c(5, 0)));
        assert_eq!(tok.agent(AgentId(0)).hold(), Hold::Rest);
        assert!(ctx.claimed.contains(&c(5, 0)));
    }

    #[test]
    fn blocked_endpoints_trigger_recovery() {
        // The only endpoint is claimed; the agent must still leave the pickup.
        let map = parse_map("P.....\n...E..\n......\n").unwrap();
        let mut tok = Token::new(&map, &[c(3, 1)]);
        let cfg = PlannerConfig::for_map(&map);
        let mut ctx = IdleContext::default();
        ctx.task_endpoints.insert(c(3, 1));
        ctx.claimed.insert(c(0, 0));
        let (act, _) = handle_idle(
            &map,
            &mut tok,
            AgentId(0),
            &mut ctx,
            &mut ChaCha8Rng::seed_from_u64(3),
            &cfg,
        );
        let IdleAction::Recovery(target) = act else {
            panic!("{act:?}")
        };
        assert!(target.chebyshev(c(3, 1)) <= cfg.recovery_radius);
        let path = tok.agent(AgentId(0)).path();
        assert!(path.len() >= 2 && path.len() as u32 - 1 <= 2 * cfg.recovery_radius);
    }

    #[test]
    fn boxed_agent_escapes_through_single_gap() {
        let map = parse_map("@@@@@@\n@.@...\n@...@.\n@@@@@@\n").unwrap();
        let mut tok = Token::new(&map, &[c(1, 1)]);
        let cfg = PlannerConfig::for_map(&map);
        let ctx = IdleContext::default();
        let (act, _) = deadlock_recovery(
            &map,
            &mut tok,
            AgentId(0),
            &ctx,
            &mut ChaCha8Rng::seed_from_u64(0),
            &cfg,
        );
        assert!(matches!(act, IdleAction::Recovery(_)));
        assert!(tok.agent(AgentId(0)).path().len() >= 2);
    }

    #[test]
    fn radius_doubles_when_neighbourhood_is_full() {
        // 1-wide corridor; every cell within radius 5 is reserved by resting agents.
        let map = parse_map(&".".repeat(14)).unwrap();
        let mut starts = vec![c(0, 0)];
        starts.extend((1..=5).map(|x| c(x, 0)));
        let mut tok = Token::new(&map, &starts);
        for i in 1..=5 {
            tok.commit_path(AgentId(i), vec![c(i, 0)], Hold::Rest)
                .unwrap();
        }
        let cfg = PlannerConfig::for_map(&map);
        let ctx = IdleContext::default();
        assert!(recovery_candidates(&map, &tok, AgentId(0), c(0, 0), 5, &ctx).is_empty());
        assert!(!recovery_candidates(&map, &tok, AgentId(0), c(0, 0), 10, &ctx).is_empty());
        // Candidates at radius 10 exist but are unreachable behind the resting line.
        let (act, _) = deadlock_recovery(
            &map,
            &mut tok,
            AgentId(0),
            &ctx,
            &mut ChaCha8Rng::seed_from_u64(0),
            &cfg,
        );
        assert_eq!(act, IdleAction::Wait);
    }

    #[test]
    fn radius_doubling_finds_open_space() {
        // Agent 1 sweeps every cell with x <= 5 late in the horizon, so nothing within
        // radius 5 of agent 0 qualifies, but row 0 beyond x = 5 stays free.
        let map = GridMap::empty(14, 2);
        let mut tok = Token::new(&map, &[c(0, 0), c(13, 1)]);
        let mut sweep = vec![c(13, 1); 16];
        sweep.extend((0..13).rev().map(|x| c(x, 1)));
        sweep.extend((0..=5).map(|x| c(x, 0)));
        tok.commit_path(AgentId(1), sweep, Hold::Buffer).unwrap();
        let cfg = PlannerConfig::for_map(&map);
        let ctx = IdleContext::default();
        assert!(recovery_candidates(&map, &tok, AgentId(0), c(0, 0), 5, &ctx).is_empty());
        let mut first = None;
        for _ in 0..2 {
            let mut t = tok.clone();
            let (act, _) = deadlock_recovery(
                &map,
                &mut t,
                AgentId(0),
                &ctx,
                &mut ChaCha8Rng::seed_from_u64(9),
                &cfg,
            );
            let IdleAction::Recovery(target) = act else {
                panic!("{act:?}")
            };
            assert!(target.y == 0 && (6..=10).contains(&target.x));
            assert_eq!(*first.get_or_insert(target), target);
        }
    }
}
