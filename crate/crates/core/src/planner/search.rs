//! Guided space-time A* against the token's reservations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;
use thiserror::Error;

use super::guidance::GuidanceMap;
use crate::grid::{heuristic_with, Cell, GridMap, DEFAULT_TIE_BREAK};
use crate::token::{AgentId, Hold, Token};
use crate::Time;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub expanded: usize,
    pub success: bool,
    /// Moves and waits in the returned path (its length minus one).
    pub path_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    /// No path within the budget or horizon.
    #[error("no path found after {} expansions", .0.expanded)]
    Deadlock(SearchStats),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl PlanError {
    pub fn expanded(&self) -> usize {
        match self {
            PlanError::Deadlock(s) => s.expanded,
            PlanError::Contract(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    pub max_iters: usize,
    /// Latest timestep a node may have.
    pub horizon: Time,
    /// What the agent must be able to hold once it reaches the goal.
    pub goal_hold: Hold,
    pub tie_break: f64,
}

impl SearchParams {
    /// Default horizon: `start_t + 4(H+W)` plus however far reservations extend.
    pub fn new(
        map: &GridMap,
        token: &Token,
        start_t: Time,
        max_iters: usize,
        goal_hold: Hold,
    ) -> Self {
        let slack = token.last_reserved_time().saturating_sub(start_t);
        SearchParams {
            max_iters,
            horizon: start_t + 4 * (map.width() + map.height()) + slack,
            goal_hold,
            tie_break: DEFAULT_TIE_BREAK,
        }
    }
}

/// Default per-leg expansion budget: 20 x |V|.
pub fn default_max_iters(map: &GridMap) -> usize {
    20 * map.len()
}

#[derive(Debug, Clone, Copy)]
struct Node {
    f: f64,
    h: f64,
    seq: u64,
    cell: u32,
    t: Time,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Reversed so `BinaryHeap` pops the smallest (f, h, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.seq.cmp(&self.seq))
    }
}

fn key(cell: u32, t: Time) -> u64 {
    (cell as u64) << 32 | t as u64
}

fn goal_ok(token: &Token, goal: usize, t: Time, me: AgentId, hold: Hold) -> bool {
    match hold {
        Hold::None => true,
        Hold::Buffer => token.move_free_idx(goal, goal, t + 1, me),
        Hold::Rest => !token.reserved_after_idx(goal, t, me),
    }
}

/// Plans `start -> goal` from `start_t` for agent `me`. The returned path
/// begins with `start` and is feasible against every other reservation.
#[allow(clippy::too_many_arguments)]
pub fn plan(
    map: &GridMap,
    token: &Token,
    me: AgentId,
    start: Cell,
    goal: Cell,
    start_t: Time,
    guidance: &GuidanceMap,
    params: &SearchParams,
) -> Result<(Vec<Cell>, SearchStats), PlanError> {
    for (name, c) in [("start", start), ("goal", goal)] {
        if map.check_cell(c).is_err() {
            return Err(PlanError::Contract(format!(
                "{name} {c} is not a passable cell"
            )));
        }
    }
    if guidance.width() != map.width() || guidance.height() != map.height() {
        return Err(PlanError::Contract(format!(
            "guidance is {}x{}, map is {}x{}",
            guidance.width(),
            guidance.height(),
            map.width(),
            map.height()
        )));
    }

    let goal_idx = map.index(goal) as u32;
    let h_of = |c: Cell| heuristic_with(c, goal, params.tie_break);
    let mut stats = SearchStats::default();
    let mut open = BinaryHeap::new();
    // Node -> parent key; g is implied by t, so a node is never improved.
    let mut parent: FxHashMap<u64, u64> = FxHashMap::default();
    let mut seq = 0u64;

    let s_idx = map.index(start) as u32;
    let h0 = h_of(start);
    open.push(Node {
        f: h0 + guidance.value_idx(s_idx as usize),
        h: h0,
        seq,
        cell: s_idx,
        t: start_t,
    });
    parent.insert(key(s_idx, start_t), u64::MAX);

    let mut nbrs: Vec<Cell> = Vec::with_capacity(5);
    while let Some(node) = open.pop() {
        let k = key(node.cell, node.t);
        if stats.expanded >= params.max_iters {
            break;
        }
        stats.expanded += 1;
        if node.cell == goal_idx && goal_ok(token, goal_idx as usize, node.t, me, params.goal_hold)
        {
            let path = rebuild(map, &parent, k);
            stats.success = true;
            stats.path_len = path.len() - 1;
            return Ok((path, stats));
        }
        if node.t >= params.horizon {
            continue;
        }
        let here = map.cell(node.cell as usize);
        let t1 = node.t + 1;
        let g1 = (t1 - start_t) as f64;
        nbrs.clear();
        map.for_each_neighbor(here, |c| nbrs.push(c));
        nbrs.push(here);
        for &c in &nbrs {
            let ci = map.index(c) as u32;
            if !token.move_free_idx(node.cell as usize, ci as usize, t1, me) {
                continue;
            }
            let nk = key(ci, t1);
            if parent.contains_key(&nk) {
                continue;
            }
            parent.insert(nk, k);
            let h = h_of(c);
            seq += 1;
            open.push(Node {
                f: g1 + h + guidance.value_idx(ci as usize),
                h,
                seq,
                cell: ci,
                t: t1,
            });
        }
    }
    Err(PlanError::Deadlock(stats))
}

fn rebuild(map: &GridMap, parent: &FxHashMap<u64, u64>, mut k: u64) -> Vec<Cell> {
    let mut out = Vec::new();
    loop {
        out.push(map.cell((k >> 32) as usize));
        let p = parent[&k];
        if p == u64::MAX {
            break;
        }
        k = p;
    }
    out.reverse();
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::bfs_distance;
    use crate::instance::parse_map;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn c(x: u32, y: u32) -> Cell {
        Cell::new(x, y)
    }

    fn params(map: &GridMap, token: &Token, hold: Hold) -> SearchParams {
        SearchParams::new(map, token, token.now(), 1_000_000, hold)
    }

    /// Exhaustive breadth-first search over (cell, t) up to the horizon.
    pub(crate) fn brute_arrival(
        map: &GridMap,
        token: &Token,
        me: AgentId,
        start: Cell,
        goal: Cell,
        p: &SearchParams,
    ) -> Option<Time> {
        let t0 = token.now();
        let mut seen = std::collections::HashSet::new();
        let mut q = VecDeque::from([(start, t0)]);
        seen.insert((start, t0));
        while let Some((cell, t)) = q.pop_front() {
            if cell == goal && goal_ok(token, map.index(goal), t, me, p.goal_hold) {
                return Some(t);
            }
            if t >= p.horizon {
                continue;
            }
            let mut next = map.neighbors(cell).unwrap();
            next.push(cell);
            for n in next {
                if token.is_move_free(cell, n, t + 1, me) && seen.insert((n, t + 1)) {
                    q.push_back((n, t + 1));
                }
            }
        }
        None
    }

    fn feasible(token: &Token, me: AgentId, path: &[Cell]) -> bool {
        path.windows(2).enumerate().all(|(i, w)| {
            (w[0] == w[1] || w[0].is_adjacent(w[1]))
                && token.is_move_free(w[0], w[1], token.now() + i as Time + 1, me)
        })
    }

    #[test]
    fn empty_grid_shortest() {
        let map = GridMap::empty(3, 3);
        let tok = Token::new(&map, &[c(0, 0)]);
        let z = GuidanceMap::zeros(3, 3);
        let (path, stats) = plan(
            &map,
            &tok,
            AgentId(0),
            c(0, 0),
            c(2, 2),
            0,
            &z,
            &params(&map, &tok, Hold::None),
        )
        .unwrap();
        assert_eq!(path.len() - 1, 4);
        assert_eq!(stats.path_len, 4);
        assert_eq!(bfs_distance(&map, c(0, 0), c(2, 2)).unwrap(), Some(4));
    }

    #[test]
    fn head_on_in_corridor_is_infeasible() {
        let map = GridMap::empty(3, 1);
        let mut tok = Token::new(&map, &[c(0, 0), c(2, 0)]);
        tok.commit_path(AgentId(1), vec![c(2, 0), c(1, 0), c(0, 0)], Hold::Buffer)
            .unwrap();
        let z = GuidanceMap::zeros(3, 1);
        let p = params(&map, &tok, Hold::None);
        let r = plan(&map, &tok, AgentId(0), c(0, 0), c(2, 0), 0, &z, &p);
        assert!(matches!(r, Err(PlanError::Deadlock(_))));
        assert_eq!(
            brute_arrival(&map, &tok, AgentId(0), c(0, 0), c(2, 0), &p),
            None
        );
    }

    #[test]
    fn sidestep_in_two_rows() {
        let map = GridMap::empty(3, 2);
        let mut tok = Token::new(&map, &[c(0, 0), c(2, 0)]);
        tok.commit_path(AgentId(1), vec![c(2, 0), c(1, 0), c(0, 0)], Hold::Buffer)
            .unwrap();
        let z = GuidanceMap::zeros(3, 2);
        let p = params(&map, &tok, Hold::None);
        let (path, _) = plan(&map, &tok, AgentId(0), c(0, 0), c(2, 0), 0, &z, &p).unwrap();
        assert_eq!(path.len() - 1, 4);
        assert!(feasible(&tok, AgentId(0), &path));
        assert_eq!(
            brute_arrival(&map, &tok, AgentId(0), c(0, 0), c(2, 0), &p),
            Some(4)
        );
    }

    #[test]
    fn start_equals_goal() {
        let map = GridMap::empty(2, 2);
        let tok = Token::new(&map, &[c(1, 1)]);
        let z = GuidanceMap::zeros(2, 2);
        let (path, _) = plan(
            &map,
            &tok,
            AgentId(0),
            c(1, 1),
            c(1, 1),
            0,
            &z,
            &params(&map, &tok, Hold::None),
        )
        .unwrap();
        assert_eq!(path, vec![c(1, 1)]);
    }

    #[test]
    fn contract_errors() {
        let map = parse_map(".@\n..\n").unwrap();
        let tok = Token::new(&map, &[c(0, 0)]);
        let z = GuidanceMap::zeros(2, 2);
        let p = params(&map, &tok, Hold::None);
        assert!(matches!(
            plan(&map, &tok, AgentId(0), c(0, 0), c(1, 0), 0, &z, &p),
            Err(PlanError::Contract(_))
        ));
        let wrong = GuidanceMap::zeros(3, 3);
        assert!(matches!(
            plan(&map, &tok, AgentId(0), c(0, 0), c(1, 1), 0, &wrong, &p),
            Err(PlanError::Contract(_))
        ));
    }

    #[test]
    fn budget_exhaustion_reports_deadlock() {
        let map = GridMap::empty(8, 8);
        let tok = Token::new(&map, &[c(0, 0)]);
        let z = GuidanceMap::zeros(8, 8);
        let mut p = params(&map, &tok, Hold::None);
        p.max_iters = 3;
        match plan(&map, &tok, AgentId(0), c(0, 0), c(7, 7), 0, &z, &p) {
            Err(PlanError::Deadlock(s)) => assert_eq!(s.expanded, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rest_goal_waits_out_later_traffic() {
        // Another agent passes through the goal at t=3; resting there earlier would block it.
        let map = GridMap::empty(3, 2);
        let mut tok = Token::new(&map, &[c(0, 0), c(2, 1)]);
        tok.commit_path(
            AgentId(1),
            vec![c(2, 1), c(2, 1), c(2, 0), c(1, 0), c(1, 1)],
            Hold::Buffer,
        )
        .unwrap();
        let z = GuidanceMap::zeros(3, 2);
        let p = params(&map, &tok, Hold::Rest);
        let (path, _) = plan(&map, &tok, AgentId(0), c(0, 0), c(1, 0), 0, &z, &p).unwrap();
        let arrive = path.len() as Time - 1;
        assert!(arrive >= 4);
        assert_eq!(
            brute_arrival(&map, &tok, AgentId(0), c(0, 0), c(1, 0), &p),
            Some(arrive)
        );
    }

    #[test]
    fn guidance_focuses_expansion() {
        let map = GridMap::empty(12, 12);
        let tok = Token::new(&map, &[c(0, 0)]);
        let z = GuidanceMap::zeros(12, 12);
        let mut vals = vec![1.0f32; 144];
        vals[..12].fill(0.0);
        for y in 0..12 {
            vals[y * 12 + 11] = 0.0;
        }
        let g = GuidanceMap::from_values(12, 12, vals).unwrap();
        let p = params(&map, &tok, Hold::None);
        let (pz, sz) = plan(&map, &tok, AgentId(0), c(0, 0), c(11, 11), 0, &z, &p).unwrap();
        let (pg, sg) = plan(&map, &tok, AgentId(0), c(0, 0), c(11, 11), 0, &g, &p).unwrap();
        assert_eq!(pz.len(), pg.len());
        assert!(sg.expanded <= sz.expanded);
    }

    fn arb_small() -> impl Strategy<Value = (GridMap, Vec<Cell>, Vec<Vec<Cell>>)> {
        (2u32..=4, 2u32..=4, any::<u64>()).prop_map(|(w, h, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut map = GridMap::empty(w, h);
            for cell in map.cells().collect::<Vec<_>>() {
                if rng.gen_bool(0.15) {
                    map.set_kind(cell, crate::grid::CellKind::Obstacle);
                }
            }
            let free: Vec<Cell> = map.passable_cells().collect();
            let mut starts = Vec::new();
            let mut walks = Vec::new();
            let n = rng.gen_range(1..=3).min(free.len());
            let mut pool = free.clone();
            for _ in 0..n {
                let s = pool.swap_remove(rng.gen_range(0..pool.len()));
                starts.push(s);
                let mut walk = vec![s];
                for _ in 0..rng.gen_range(0..6) {
                    let here = *walk.last().unwrap();
                    let mut opts = map.neighbors(here).unwrap();
                    opts.push(here);
                    walk.push(opts[rng.gen_range(0..opts.len())]);
                }
                walks.push(walk);
            }
            (map, starts, walks)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn matches_space_time_bfs((map, starts, walks) in arb_small(), gsel in any::<u64>(), hold_sel in 0u8..3) {
            let mut tok = Token::new(&map, &starts);
            for (i, walk) in walks.iter().enumerate().skip(1) {
                let hold = if i % 2 == 0 { Hold::Buffer } else { Hold::Rest };
                let _ = tok.commit_path(AgentId(i as u32), walk.clone(), hold);
            }
            let free: Vec<Cell> = map.passable_cells().collect();
            let goal = free[(gsel % free.len() as u64) as usize];
            let hold = [Hold::None, Hold::Buffer, Hold::Rest][hold_sel as usize];
            let mut p = SearchParams::new(&map, &tok, 0, 1_000_000, hold);
            p.horizon = 12;
            let z = GuidanceMap::zeros(map.width(), map.height());
            let got = plan(&map, &tok, AgentId(0), starts[0], goal, 0, &z, &p);
            let want = brute_arrival(&map, &tok, AgentId(0), starts[0], goal, &p);
            match got {
                Ok((path, _)) => {
                    prop_assert!(feasible(&tok, AgentId(0), &path));
                    prop_assert_eq!(Some(path.len() as Time - 1), want);
                }
                Err(PlanError::Deadlock(_)) => prop_assert_eq!(want, None),
                Err(e) => prop_assert!(false, "{}", e),
            }
        }

        #[test]
        fn arbitrary_guidance_stays_feasible((map, starts, walks) in arb_small(), vals in prop::collection::vec(0.0f32..=1.0, 16), gsel in any::<u64>()) {
            let mut tok = Token::new(&map, &starts);
            for (i, walk) in walks.iter().enumerate().skip(1) {
                let _ = tok.commit_path(AgentId(i as u32), walk.clone(), Hold::Buffer);
            }
            let free: Vec<Cell> = map.passable_cells().collect();
            let goal = free[(gsel % free.len() as u64) as usize];
            let g = GuidanceMap::from_values(map.width(), map.height(), vals[..map.len()].to_vec()).unwrap();
            let p = SearchParams::new(&map, &tok, 0, 1_000_000, Hold::Buffer);
            if let Ok((path, _)) = plan(&map, &tok, AgentId(0), starts[0], goal, 0, &g, &p) {
                prop_assert_eq!(path[0], starts[0]);
                prop_assert_eq!(*path.last().unwrap(), goal);
                prop_assert!(feasible(&tok, AgentId(0), &path));
            }
        }
    }
}
