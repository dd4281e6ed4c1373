//! The shared token: every agent's committed path plus a space-time
//! reservation index answering vertex and edge-swap queries.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridMap};
use crate::instance::{Task, TaskId, TaskStatus};
use crate::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What an agent reserves after the last cell of its path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Hold {
    /// Nothing: the agent must be replanned before its path runs out.
    None,
    /// The final cell for one extra timestep.
    Buffer,
    /// The final cell forever (idle at a non-task endpoint).
    Rest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub location: Cell,
    path: Vec<Cell>,
    path_start: Time,
    hold: Hold,
    pub task: Option<TaskId>,
    /// Failed its planned move during the last advance.
    pub delayed: bool,
    /// Its committed path was cut short and must be replanned.
    pub needs_replan: bool,
}

impl AgentState {
    pub fn path(&self) -> &[Cell] {
        &self.path
    }

    pub fn path_start(&self) -> Time {
        self.path_start
    }

    pub fn path_end(&self) -> Time {
        self.path_start + self.path.len() as Time - 1
    }

    pub fn hold(&self) -> Hold {
        self.hold
    }

    pub fn is_resting(&self) -> bool {
        self.hold == Hold::Rest
    }

    /// Remaining committed cells after the current one.
    pub fn has_pending_moves(&self) -> bool {
        self.path.len() > 1
    }

    /// Where the agent physically is at `t` if nothing else happens.
    pub fn position_at(&self, t: Time) -> Cell {
        let i = t.saturating_sub(self.path_start) as usize;
        *self
            .path
            .get(i)
            .unwrap_or_else(|| self.path.last().expect("paths are never empty"))
    }

    /// The cell reserved for `now + 1`, if any.
    fn next_reserved(&self) -> Option<Cell> {
        match (self.path.get(1), self.hold) {
            (Some(&c), _) => Some(c),
            (None, Hold::Buffer | Hold::Rest) => Some(self.location),
            (None, Hold::None) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitError {
    #[error("path is empty")]
    Empty,
    #[error("path starts at {found} but agent is at {expected}")]
    WrongStart { expected: Cell, found: Cell },
    #[error("path jumps from {0} to {1}")]
    NotAdjacent(Cell, Cell),
    #[error("cell {0} is not passable")]
    Blocked(Cell),
    #[error("conflict with agent {other} at {cell} t={t}")]
    Conflict { cell: Cell, t: Time, other: AgentId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SafetyViolation {
    #[error("agents {0} and {1} both occupy {2} at t={3}")]
    Vertex(AgentId, AgentId, Cell, Time),
    #[error("agents {0} and {1} swap across {2}-{3} arriving t={4}")]
    Swap(AgentId, AgentId, Cell, Cell, Time),
}

type EdgeKey = (u32, u32, Time);

#[derive(Debug, Clone)]
pub struct Token {
    width: u32,
    passable: Vec<bool>,
    now: Time,
    agents: Vec<AgentState>,
    vertex: Vec<BTreeMap<Time, AgentId>>,
    edges: FxHashMap<EdgeKey, AgentId>,
    /// Per cell: resting agent and the first timestep it occupies the cell.
    rest: Vec<Option<(AgentId, Time)>>,
}

/// Canonical reservation set of one agent.
#[derive(Debug, Default, PartialEq, Eq)]
struct Reservations {
    vertices: Vec<(usize, Time)>,
    edges: Vec<EdgeKey>,
    rest: Option<(usize, Time)>,
}

impl Token {
    /// Every agent starts with the single-cell path `[start]` at t = 0.
    pub fn new(map: &GridMap, starts: &[Cell]) -> Self {
        let mut token = Token {
            width: map.width(),
            passable: map.kinds().iter().map(|k| k.is_passable()).collect(),
            now: 0,
            agents: Vec::with_capacity(starts.len()),
            vertex: vec![BTreeMap::new(); map.len()],
            edges: FxHashMap::default(),
            rest: vec![None; map.len()],
        };
        for (i, &start) in starts.iter().enumerate() {
            let id = AgentId(i as u32);
            token.agents.push(AgentState {
                id,
                location: start,
                path: vec![start],
                path_start: 0,
                hold: Hold::None,
                task: None,
                delayed: false,
                needs_replan: false,
            });
            let idx = token.idx(start);
            let prev = token.vertex[idx].insert(0, id);
            assert!(prev.is_none(), "two agents start at {start}");
        }
        token
    }

    fn idx(&self, c: Cell) -> usize {
        (c.y * self.width + c.x) as usize
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> &AgentState {
        &self.agents[id.0 as usize]
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn set_task(&mut self, id: AgentId, task: Option<TaskId>) {
        self.agents[id.0 as usize].task = task;
    }

    pub fn clear_flags(&mut self, id: AgentId) {
        let a = &mut self.agents[id.0 as usize];
        a.delayed = false;
        a.needs_replan = false;
    }

    pub fn mark_replan(&mut self, id: AgentId) {
        self.agents[id.0 as usize].needs_replan = true;
    }

    /// Agent reserving `c` at `t`, honouring idle buffers and resting agents.
    pub fn vertex_owner(&self, c: Cell, t: Time) -> Option<AgentId> {
        let i = self.idx(c);
        if let Some(&a) = self.vertex[i].get(&t) {
            return Some(a);
        }
        match self.rest[i] {
            Some((a, since)) if since <= t => Some(a),
            _ => None,
        }
    }

    fn vertex_blocked(&self, i: usize, t: Time, me: AgentId) -> Option<AgentId> {
        if let Some(&a) = self.vertex[i].get(&t) {
            if a != me {
                return Some(a);
            }
        }
        match self.rest[i] {
            Some((a, since)) if since <= t && a != me => Some(a),
            _ => None,
        }
    }

    /// Whether `me` may traverse `from -> to`, arriving at `t_arrive`.
    pub fn is_move_free(&self, from: Cell, to: Cell, t_arrive: Time, me: AgentId) -> bool {
        let (fi, ti) = (self.idx(from), self.idx(to));
        self.move_free_idx(fi, ti, t_arrive, me)
    }

    pub(crate) fn move_free_idx(&self, fi: usize, ti: usize, t_arrive: Time, me: AgentId) -> bool {
        if self.vertex_blocked(ti, t_arrive, me).is_some() {
            return false;
        }
        if fi != ti {
            if let Some(&a) = self.edges.get(&(ti as u32, fi as u32, t_arrive)) {
                return a == me;
            }
        }
        true
    }

    /// True if another agent reserves `c` at some time strictly after `t`.
    pub fn reserved_after(&self, c: Cell, t: Time, me: AgentId) -> bool {
        let i = self.idx(c);
        if matches!(self.rest[i], Some((a, _)) if a != me) {
            return true;
        }
        self.vertex[i].range(t + 1..).any(|(_, &a)| a != me)
    }

    pub(crate) fn reserved_after_idx(&self, i: usize, t: Time, me: AgentId) -> bool {
        if matches!(self.rest[i], Some((a, _)) if a != me) {
            return true;
        }
        self.vertex[i].range(t + 1..).any(|(_, &a)| a != me)
    }

    /// Latest timestep covered by any vertex reservation.
    pub fn last_reserved_time(&self) -> Time {
        self.agents
            .iter()
            .map(|a| a.path_end() + u32::from(a.hold == Hold::Buffer))
            .max()
            .unwrap_or(self.now)
    }

    fn reservations_of(&self, a: &AgentState) -> Reservations {
        let mut r = Reservations::default();
        for (k, &c) in a.path.iter().enumerate() {
            let t = a.path_start + k as Time;
            r.vertices.push((self.idx(c), t));
            if k > 0 && a.path[k - 1] != c {
                r.edges
                    .push((self.idx(a.path[k - 1]) as u32, self.idx(c) as u32, t));
            }
        }
        let last = self.idx(*a.path.last().unwrap());
        match a.hold {
            Hold::None => {}
            Hold::Buffer => r.vertices.push((last, a.path_end() + 1)),
            Hold::Rest => r.rest = Some((last, a.path_end())),
        }
        r
    }

    fn insert(&mut self, id: AgentId) {
        let r = self.reservations_of(&self.agents[id.0 as usize]);
        for (i, t) in r.vertices {
            self.vertex[i].insert(t, id);
        }
        for e in r.edges {
            self.edges.insert(e, id);
        }
        if let Some((i, since)) = r.rest {
            self.rest[i] = Some((id, since));
        }
    }

    fn remove(&mut self, id: AgentId) {
        let r = self.reservations_of(&self.agents[id.0 as usize]);
        for (i, t) in r.vertices {
            if self.vertex[i].get(&t) == Some(&id) {
                self.vertex[i].remove(&t);
            }
        }
        for e in r.edges {
            if self.edges.get(&e) == Some(&id) {
                self.edges.remove(&e);
            }
        }
        if let Some((i, _)) = r.rest {
            if matches!(self.rest[i], Some((a, _)) if a == id) {
                self.rest[i] = None;
            }
        }
    }

    /// Replaces the agent's reservations with `path` starting now.
    pub fn commit_path(
        &mut self,
        id: AgentId,
        path: Vec<Cell>,
        hold: Hold,
    ) -> Result<(), CommitError> {
        self.validate(id, &path, hold)?;
        self.remove(id);
        let a = &mut self.agents[id.0 as usize];
        a.path = path;
        a.path_start = self.now;
        a.hold = hold;
        self.insert(id);
        Ok(())
    }

    fn validate(&self, id: AgentId, path: &[Cell], hold: Hold) -> Result<(), CommitError> {
        let agent = self.agent(id);
        let Some(&first) = path.first() else {
            return Err(CommitError::Empty);
        };
        if first != agent.location {
            return Err(CommitError::WrongStart {
                expected: agent.location,
                found: first,
            });
        }
        for (k, &c) in path.iter().enumerate() {
            if c.x >= self.width || !self.passable[self.idx(c)] {
                return Err(CommitError::Blocked(c));
            }
            let t = self.now + k as Time;
            if k == 0 {
                continue;
            }
            let prev = path[k - 1];
            if prev != c && !prev.is_adjacent(c) {
                return Err(CommitError::NotAdjacent(prev, c));
            }
            if !self.is_move_free(prev, c, t, id) {
                let other = self
                    .vertex_owner(c, t)
                    .filter(|&o| o != id)
                    .or_else(|| {
                        self.edges
                            .get(&(self.idx(c) as u32, self.idx(prev) as u32, t))
                            .copied()
                    })
                    .unwrap_or(id);
                return Err(CommitError::Conflict { cell: c, t, other });
            }
        }
        let last = *path.last().unwrap();
        let t_end = self.now + path.len() as Time - 1;
        let conflict = |t: Time, other: AgentId| CommitError::Conflict {
            cell: last,
            t,
            other,
        };
        match hold {
            Hold::None => {}
            Hold::Buffer => {
                if let Some(o) = self.vertex_blocked(self.idx(last), t_end + 1, id) {
                    return Err(conflict(t_end + 1, o));
                }
            }
            Hold::Rest => {
                let i = self.idx(last);
                if let Some((t, &o)) = self.vertex[i].range(t_end..).find(|(_, &a)| a != id) {
                    return Err(conflict(*t, o));
                }
                if let Some((o, since)) = self.rest[i].filter(|(a, _)| *a != id) {
                    return Err(conflict(since.max(t_end), o));
                }
            }
        }
        Ok(())
    }

    /// Moves every agent one step. Agents whose move fails (delay dice or no
    /// reservation for the next step) stay put, as does anyone about to enter a
    /// cell a staying agent still occupies. Returns the agents that missed a
    /// planned move.
    pub fn advance(
        &mut self,
        rng: &mut impl Rng,
        delay_p: f64,
    ) -> Result<Vec<AgentId>, SafetyViolation> {
        let n = self.agents.len();
        let next: Vec<Option<Cell>> = self.agents.iter().map(|a| a.next_reserved()).collect();
        let mut stopped = vec![false; n];
        let mut missed = vec![false; n];
        for (i, a) in self.agents.iter().enumerate() {
            let dice = delay_p > 0.0 && rng.gen_bool(delay_p);
            match next[i] {
                None => stopped[i] = true,
                Some(c) if dice && c != a.location => {
                    stopped[i] = true;
                    missed[i] = true;
                }
                _ => {}
            }
        }
        // Close the stopped set under "moves into a stopped agent's cell".
        let mut held: FxHashSet<Cell> = (0..n)
            .filter(|&i| stopped[i])
            .map(|i| self.agents[i].location)
            .collect();
        loop {
            let mut grew = false;
            for i in 0..n {
                let a = &self.agents[i];
                if stopped[i] {
                    continue;
                }
                let c = next[i].expect("non-stopped agents have a next cell");
                if c != a.location && held.contains(&c) {
                    stopped[i] = true;
                    missed[i] = true;
                    held.insert(a.location);
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }

        let t1 = self.now + 1;
        let new_pos: Vec<Cell> = (0..n)
            .map(|i| {
                if stopped[i] {
                    self.agents[i].location
                } else {
                    next[i].unwrap()
                }
            })
            .collect();
        self.check_step(&new_pos)?;

        // Moving agents drop their reservations for `now`.
        for i in (0..n).filter(|&i| !stopped[i]) {
            let id = AgentId(i as u32);
            let a = &self.agents[i];
            let here = self.idx(a.location);
            if self.vertex[here].get(&self.now) == Some(&id) {
                self.vertex[here].remove(&self.now);
            }
            if let Some(&c) = a.path.get(1) {
                if c != a.location {
                    let to = self.idx(c) as u32;
                    self.edges.remove(&(here as u32, to, t1));
                }
            }
        }
        let stopped_ids: Vec<AgentId> = (0..n)
            .filter(|&i| stopped[i])
            .map(|i| AgentId(i as u32))
            .collect();
        for &id in &stopped_ids {
            self.remove(id);
        }

        self.now = t1;
        for i in (0..n).filter(|&i| !stopped[i]) {
            let id = AgentId(i as u32);
            let a = &mut self.agents[i];
            a.location = new_pos[i];
            a.delayed = false;
            if a.path.len() > 1 {
                a.path.remove(0);
            } else {
                // The buffer or rest reservation now covers the current step.
                if a.hold == Hold::Buffer {
                    a.hold = Hold::None;
                }
                if a.hold == Hold::Rest {
                    let here = (a.location.y * self.width + a.location.x) as usize;
                    self.rest[here] = Some((id, t1));
                    self.vertex[here].insert(t1, id);
                }
            }
            a.path_start = t1;
        }

        // Staying agents first claim their current cell, then keep as much of
        // their shifted plan as still fits.
        for &id in &stopped_ids {
            let here = self.idx(self.agents[id.0 as usize].location);
            self.vertex[here].insert(t1, id);
        }
        for &id in &stopped_ids {
            let a = &self.agents[id.0 as usize];
            let mut keep = 1;
            for k in 1..a.path.len() {
                if !self.is_move_free(a.path[k - 1], a.path[k], t1 + k as Time, id) {
                    break;
                }
                keep = k + 1;
            }
            let truncated = keep < a.path.len();
            let last = a.path[keep - 1];
            let t_end = t1 + keep as Time - 1;
            let hold = match a.hold {
                _ if truncated => Hold::None,
                Hold::Buffer if self.vertex_blocked(self.idx(last), t_end + 1, id).is_none() => {
                    Hold::Buffer
                }
                Hold::Rest
                    if !self.reserved_after_idx(self.idx(last), t_end.saturating_sub(1), id) =>
                {
                    Hold::Rest
                }
                _ => Hold::None,
            };
            let had_plan = a.path.len() > 1 || a.hold != Hold::None;
            let a = &mut self.agents[id.0 as usize];
            a.path.truncate(keep);
            a.path_start = t1;
            let lost_hold = a.hold != hold;
            a.hold = hold;
            a.delayed = missed[id.0 as usize];
            if (truncated || lost_hold || a.delayed) && had_plan {
                a.needs_replan = true;
            }
            self.insert(id);
        }

        Ok(stopped_ids
            .into_iter()
            .filter(|id| missed[id.0 as usize])
            .collect())
    }

    fn check_step(&self, new_pos: &[Cell]) -> Result<(), SafetyViolation> {
        let t1 = self.now + 1;
        let mut seen: FxHashMap<Cell, usize> = FxHashMap::default();
        for (j, &c) in new_pos.iter().enumerate() {
            if let Some(&i) = seen.get(&c) {
                return Err(SafetyViolation::Vertex(
                    AgentId(i as u32),
                    AgentId(j as u32),
                    c,
                    t1,
                ));
            }
            seen.insert(c, j);
        }
        let old: FxHashMap<Cell, usize> = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.location, i))
            .collect();
        for (j, a) in self.agents.iter().enumerate() {
            let to = new_pos[j];
            if to == a.location {
                continue;
            }
            if let Some(&i) = old.get(&to) {
                if new_pos[i] == a.location {
                    return Err(SafetyViolation::Swap(
                        AgentId(i as u32),
                        AgentId(j as u32),
                        a.location,
                        to,
                        t1,
                    ));
                }
            }
        }
        Ok(())
    }

    /// Advances task statuses for agents standing on their pickup or delivery.
    /// `tasks` is indexed by task id.
    pub fn update_completed(&mut self, tasks: &mut [Task]) -> Vec<TaskId> {
        let mut done = Vec::new();
        for a in &mut self.agents {
            let Some(tid) = a.task else { continue };
            let task = &mut tasks[tid.0 as usize];
            debug_assert_eq!(task.id, tid);
            if task.status == TaskStatus::Assigned(a.id) && a.location == task.pickup {
                task.status = TaskStatus::PickedUp(a.id);
            }
            if task.status == TaskStatus::PickedUp(a.id) && a.location == task.delivery {
                task.status = TaskStatus::Completed(self.now);
                a.task = None;
                done.push(tid);
            }
        }
        done
    }

    /// Rebuilds the reservation index from the agent paths and compares.
    pub fn index_consistent(&self) -> bool {
        let mut rebuilt = self.clone();
        rebuilt.vertex.iter_mut().for_each(BTreeMap::clear);
        rebuilt.edges.clear();
        rebuilt.rest.iter_mut().for_each(|r| *r = None);
        for i in 0..self.agents.len() {
            rebuilt.insert(AgentId(i as u32));
        }
        rebuilt.vertex == self.vertex && rebuilt.edges == self.edges && rebuilt.rest == self.rest
    }

    /// Every `(cell, t)` reservation in the index for `t <= until`, plus rest entries.
    pub fn reserved_vertices(&self, until: Time) -> Vec<(Cell, Time, AgentId)> {
        let mut out = Vec::new();
        for (i, m) in self.vertex.iter().enumerate() {
            let c = Cell::new(i as u32 % self.width, i as u32 / self.width);
            for (&t, &a) in m.range(..=until) {
                out.push((c, t, a));
            }
            if let Some((a, since)) = self.rest[i] {
                for t in since..=until {
                    if !m.contains_key(&t) {
                        out.push((c, t, a));
                    }
                }
            }
        }
        out.sort();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(x: u32, y: u32) -> Cell {
        Cell::new(x, y)
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    /// Brute-force reservation set straight from the buffer rule.
    fn enumerate(path: &[Cell], start: Time, hold: Hold, until: Time) -> Vec<(Cell, Time)> {
        let mut out = Vec::new();
        for t in 0..=until {
            if t < start {
                continue;
            }
            let k = (t - start) as usize;
            if k < path.len() {
                out.push((path[k], t));
            } else if (hold == Hold::Buffer && k == path.len()) || hold == Hold::Rest {
                out.push((*path.last().unwrap(), t));
            }
        }
        out
    }

    #[test]
    fn swap_and_vertex_queries() {
        let map = GridMap::empty(3, 3);
        let mut tok = Token::new(&map, &[c(0, 0), c(2, 2)]);
        tok.commit_path(AgentId(0), vec![c(0, 0), c(1, 0)], Hold::Buffer)
            .unwrap();
        let me = AgentId(1);
        assert!(!tok.is_move_free(c(1, 0), c(0, 0), 1, me));
        assert!(!tok.is_move_free(c(2, 0), c(1, 0), 1, me));
        assert!(tok.is_move_free(c(0, 1), c(0, 0), 1, me));
    }

    #[test]
    fn commit_reserves_path_and_buffer() {
        let map = GridMap::empty(3, 3);
        let mut tok = Token::new(&map, &[c(0, 0)]);
        tok.commit_path(AgentId(0), vec![c(0, 0), c(1, 0), c(1, 1)], Hold::Buffer)
            .unwrap();
        let got: Vec<_> = tok
            .reserved_vertices(10)
            .into_iter()
            .map(|(c, t, _)| (c, t))
            .collect();
        let mut want = vec![(c(0, 0), 0), (c(1, 0), 1), (c(1, 1), 2), (c(1, 1), 3)];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn buffer_expires_after_one_step() {
        let map = GridMap::empty(5, 5);
        let mut tok = Token::new(&map, &[c(2, 0), c(4, 4)]);
        let path = vec![c(2, 0), c(2, 1), c(2, 2), c(2, 2), c(2, 2), c(2, 2)];
        tok.commit_path(AgentId(0), path.clone(), Hold::Buffer)
            .unwrap();
        let other = AgentId(1);
        assert!(!tok.is_move_free(c(2, 3), c(2, 2), 6, other));
        assert!(tok.is_move_free(c(2, 3), c(2, 2), 7, other));
        let brute = enumerate(&path, 0, Hold::Buffer, 20);
        assert!(brute.contains(&(c(2, 2), 6)) && !brute.contains(&(c(2, 2), 7)));
    }

    #[test]
    fn resting_blocks_forever() {
        let map = GridMap::empty(3, 1);
        let mut tok = Token::new(&map, &[c(0, 0), c(2, 0)]);
        tok.commit_path(AgentId(0), vec![c(0, 0)], Hold::Rest)
            .unwrap();
        for t in 1..1000 {
            assert!(!tok.is_move_free(c(1, 0), c(0, 0), t, AgentId(1)));
        }
        assert!(tok.agent(AgentId(0)).is_resting());
        assert!(tok.reserved_after(c(0, 0), 500, AgentId(1)));
    }

    #[test]
    fn conflicting_commit_rejected() {
        let map = GridMap::empty(3, 1);
        let mut tok = Token::new(&map, &[c(0, 0), c(2, 0)]);
        tok.commit_path(AgentId(0), vec![c(0, 0), c(1, 0)], Hold::Buffer)
            .unwrap();
        let err = tok
            .commit_path(AgentId(1), vec![c(2, 0), c(1, 0)], Hold::None)
            .unwrap_err();
        assert_eq!(
            err,
            CommitError::Conflict {
                cell: c(1, 0),
                t: 1,
                other: AgentId(0)
            }
        );
        let err = tok
            .commit_path(AgentId(1), vec![c(1, 0)], Hold::None)
            .unwrap_err();
        assert!(matches!(err, CommitError::WrongStart { .. }));
        let err = tok
            .commit_path(AgentId(1), vec![c(2, 0), c(0, 0)], Hold::None)
            .unwrap_err();
        assert!(matches!(err, CommitError::NotAdjacent(..)));
    }

    #[test]
    fn recommit_replaces_suffix() {
        let map = GridMap::empty(4, 2);
        let mut tok = Token::new(&map, &[c(0, 0)]);
        tok.commit_path(
            AgentId(0),
            vec![c(0, 0), c(1, 0), c(2, 0), c(3, 0)],
            Hold::Buffer,
        )
        .unwrap();
        tok.commit_path(AgentId(0), vec![c(0, 0), c(0, 1)], Hold::Buffer)
            .unwrap();
        assert_eq!(tok.vertex_owner(c(2, 0), 2), None);
        assert_eq!(tok.vertex_owner(c(0, 1), 2), Some(AgentId(0)));
        assert!(tok.index_consistent());
    }

    #[test]
    fn advance_without_delay_moves_everyone() {
        let map = GridMap::empty(4, 2);
        let mut tok = Token::new(&map, &[c(0, 0), c(0, 1)]);
        tok.commit_path(AgentId(0), vec![c(0, 0), c(1, 0), c(2, 0)], Hold::Buffer)
            .unwrap();
        tok.commit_path(AgentId(1), vec![c(0, 1), c(1, 1)], Hold::Buffer)
            .unwrap();
        let d = tok.advance(&mut rng(), 0.0).unwrap();
        assert!(d.is_empty());
        assert_eq!(tok.agent(AgentId(0)).location, c(1, 0));
        assert_eq!(tok.agent(AgentId(1)).location, c(1, 1));
        assert_eq!(tok.now(), 1);
        assert!(tok.index_consistent());
    }

    #[test]
    fn certain_delay_keeps_agent_in_place() {
        let map = GridMap::empty(4, 1);
        let mut tok = Token::new(&map, &[c(0, 0)]);
        tok.commit_path(AgentId(0), vec![c(0, 0), c(1, 0), c(2, 0)], Hold::Buffer)
            .unwrap();
        let d = tok.advance(&mut rng(), 1.0).unwrap();
        assert_eq!(d, vec![AgentId(0)]);
        let a = tok.agent(AgentId(0));
        assert_eq!(a.location, c(0, 0));
        assert_eq!(a.path(), &[c(0, 0), c(1, 0), c(2, 0)]);
        assert_eq!(a.path_start(), 1);
        assert!(a.delayed);
        assert_eq!(tok.vertex_owner(c(2, 0), 3), Some(AgentId(0)));
        assert!(tok.index_consistent());
    }

    #[test]
    fn delayed_leader_stops_follower() {
        // Single file on a corridor: agent 0 leads, agent 1 follows one cell behind.
        let map = GridMap::empty(6, 1);
        let mut tok = Token::new(&map, &[c(1, 0), c(0, 0)]);
        tok.commit_path(
            AgentId(0),
            vec![c(1, 0), c(2, 0), c(3, 0), c(4, 0)],
            Hold::Buffer,
        )
        .unwrap();
        tok.commit_path(
            AgentId(1),
            vec![c(0, 0), c(1, 0), c(2, 0), c(3, 0)],
            Hold::Buffer,
        )
        .unwrap();
        // Rig the dice: only the leader is delayed on the first draw.
        struct First(bool);
        impl rand::RngCore for First {
            fn next_u32(&mut self) -> u32 {
                self.next_u64() as u32
            }
            fn next_u64(&mut self) -> u64 {
                let v = if self.0 { 0 } else { u64::MAX };
                self.0 = false;
                v
            }
            fn fill_bytes(&mut self, d: &mut [u8]) {
                d.fill(0)
            }
            fn try_fill_bytes(&mut self, d: &mut [u8]) -> Result<(), rand::Error> {
                d.fill(0);
                Ok(())
            }
        }
        let d = tok.advance(&mut First(true), 0.5).unwrap();
        assert_eq!(d, vec![AgentId(0), AgentId(1)]);
        assert_eq!(tok.agent(AgentId(0)).location, c(1, 0));
        assert_eq!(tok.agent(AgentId(1)).location, c(0, 0));
        assert!(tok.index_consistent());
        // Brute-force the post-state: no shared (cell, t) over the next steps.
        for t in tok.now()..tok.now() + 8 {
            let p0 = enumerate(
                tok.agent(AgentId(0)).path(),
                1,
                tok.agent(AgentId(0)).hold(),
                20,
            );
            let p1 = enumerate(
                tok.agent(AgentId(1)).path(),
                1,
                tok.agent(AgentId(1)).hold(),
                20,
            );
            assert!(p0.iter().filter(|r| r.1 == t).all(|r| !p1.contains(r)));
        }
    }

    #[test]
    fn shifted_path_truncated_at_conflict() {
        // Agent 0 is delayed; agent 1 will cross its route one step later.
        let map = GridMap::empty(3, 3);
        let mut tok = Token::new(&map, &[c(0, 1), c(1, 0)]);
        tok.commit_path(AgentId(0), vec![c(0, 1), c(1, 1), c(2, 1)], Hold::Buffer)
            .unwrap();
        tok.commit_path(
            AgentId(1),
            vec![c(1, 0), c(1, 0), c(1, 1), c(1, 2)],
            Hold::Buffer,
        )
        .unwrap();
        struct Seq(Vec<u64>);
        impl rand::RngCore for Seq {
            fn next_u32(&mut self) -> u32 {
                self.next_u64() as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0.remove(0)
            }
            fn fill_bytes(&mut self, _: &mut [u8]) {}
            fn try_fill_bytes(&mut self, _: &mut [u8]) -> Result<(), rand::Error> {
                Ok(())
            }
        }
        tok.advance(&mut Seq(vec![0, u64::MAX]), 0.5).unwrap();
        let a = tok.agent(AgentId(0));
        assert_eq!(a.location, c(0, 1));
        assert_eq!(a.path(), &[c(0, 1)]);
        assert_eq!(a.hold(), Hold::None);
        assert!(a.needs_replan);
        assert!(tok.index_consistent());
    }

    #[test]
    fn update_completed_rules() {
        let map = GridMap::empty(6, 1);
        let mut tok = Token::new(&map, &[c(1, 0), c(5, 0)]);
        let mut tasks = vec![
            Task::new(TaskId(0), 0, c(1, 0), c(3, 0)),
            Task::new(TaskId(1), 0, c(4, 0), c(5, 0)),
        ];
        tasks[0].status = TaskStatus::Assigned(AgentId(0));
        tasks[1].status = TaskStatus::Assigned(AgentId(0));
        tok.set_task(AgentId(0), Some(TaskId(0)));
        tok.set_task(AgentId(1), None);
        assert!(tok.update_completed(&mut tasks).is_empty());
        assert_eq!(tasks[0].status, TaskStatus::PickedUp(AgentId(0)));
        // Agent 1 stands on task 1's delivery, but task 1 is not its own.
        assert_eq!(tasks[1].status, TaskStatus::Assigned(AgentId(0)));

        tok.commit_path(AgentId(0), vec![c(1, 0), c(2, 0), c(3, 0)], Hold::Buffer)
            .unwrap();
        tok.advance(&mut rng(), 0.0).unwrap();
        tok.advance(&mut rng(), 0.0).unwrap();
        assert_eq!(tok.update_completed(&mut tasks), vec![TaskId(0)]);
        assert_eq!(tasks[0].status, TaskStatus::Completed(2));
        assert_eq!(tok.agent(AgentId(0)).task, None);
    }

    /// Random walk scenario: agents commit random feasible paths, advance with delays.
    fn random_step(tok: &mut Token, map: &GridMap, rng: &mut ChaCha8Rng) {
        for i in 0..tok.num_agents() {
            let id = AgentId(i as u32);
            if rng.gen_bool(0.5) {
                continue;
            }
            let mut path = vec![tok.agent(id).location];
            for k in 1..rng.gen_range(1..6) {
                let here = *path.last().unwrap();
                let mut opts = map.neighbors(here).unwrap();
                opts.push(here);
                let pick = opts[rng.gen_range(0..opts.len())];
                if !tok.is_move_free(here, pick, tok.now() + k, id) {
                    break;
                }
                path.push(pick);
            }
            let hold = [Hold::None, Hold::Buffer, Hold::Rest][rng.gen_range(0..3)];
            let _ = tok.commit_path(id, path, hold);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn index_tracks_paths_and_steps_stay_safe(seed in any::<u64>(), n in 1usize..6, p in 0.0f64..0.5) {
            let map = GridMap::empty(5, 5);
            let starts: Vec<Cell> = map.cells().take(n).collect();
            let mut tok = Token::new(&map, &starts);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..40 {
                random_step(&mut tok, &map, &mut rng);
                prop_assert!(tok.index_consistent());
                let before: Vec<Cell> = tok.agents().iter().map(|a| a.location).collect();
                let r = tok.advance(&mut rng, p);
                prop_assert!(r.is_ok(), "{:?}", r);
                prop_assert!(tok.index_consistent());
                let after: Vec<Cell> = tok.agents().iter().map(|a| a.location).collect();
                for i in 0..n {
                    prop_assert!(before[i] == after[i] || before[i].is_adjacent(after[i]));
                    for j in 0..i {
                        prop_assert_ne!(after[i], after[j]);
                        prop_assert!(!(after[i] == before[j] && after[j] == before[i] && after[i] != before[i]));
                    }
                }
            }
        }

        #[test]
        fn zero_delay_ignores_seed(a in any::<u64>(), b in any::<u64>()) {
            let map = GridMap::empty(4, 4);
            let mut t1 = Token::new(&map, &[c(0, 0), c(3, 3)]);
            t1.commit_path(AgentId(0), vec![c(0, 0), c(1, 0), c(2, 0)], Hold::Buffer).unwrap();
            t1.commit_path(AgentId(1), vec![c(3, 3), c(3, 2)], Hold::Buffer).unwrap();
            let mut t2 = t1.clone();
            t1.advance(&mut ChaCha8Rng::seed_from_u64(a), 0.0).unwrap();
            t2.advance(&mut ChaCha8Rng::seed_from_u64(b), 0.0).unwrap();
            prop_assert_eq!(t1.agents(), t2.agents());
        }
    }
}
