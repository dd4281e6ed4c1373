//! Static world model: 4-connected grid, shared heuristic, BFS distances and
//! the well-formedness checker.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weight of the Euclidean tie-break term added to the Manhattan heuristic.
pub const DEFAULT_TIE_BREAK: f64 = 0.001;

/// A grid coordinate, `x` is the column and `y` the row (origin top-left).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub const fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn chebyshev(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        self.manhattan(other) == 1
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

impl From<(u32, u32)> for Cell {
    fn from((x, y): (u32, u32)) -> Self {
        Cell { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Obstacle,
    Free,
    TaskEndpoint,
    NonTaskEndpoint,
}

impl CellKind {
    pub fn is_passable(self) -> bool {
        self != CellKind::Obstacle
    }

    pub fn is_endpoint(self) -> bool {
        matches!(self, CellKind::TaskEndpoint | CellKind::NonTaskEndpoint)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridError {
    #[error("cell {0} is outside the {1}x{2} map")]
    OutOfBounds(Cell, u32, u32),
    #[error("cell {0} is an obstacle")]
    Obstacle(Cell),
}

/// Immutable 4-connected grid with per-cell kinds, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: u32,
    height: u32,
    kinds: Vec<CellKind>,
}

impl GridMap {
    /// Builds a map from row-major kinds. Panics if `kinds.len() != width * height`.
    pub fn from_kinds(width: u32, height: u32, kinds: Vec<CellKind>) -> Self {
        assert_eq!(
            kinds.len(),
            (width * height) as usize,
            "kind buffer does not match dims"
        );
        GridMap {
            width,
            height,
            kinds,
        }
    }

    /// All-free map.
    pub fn empty(width: u32, height: u32) -> Self {
        Self::from_kinds(
            width,
            height,
            vec![CellKind::Free; (width * height) as usize],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        debug_assert!(self.in_bounds(c));
        (c.y * self.width + c.x) as usize
    }

    pub fn cell(&self, idx: usize) -> Cell {
        let w = self.width as usize;
        Cell::new((idx % w) as u32, (idx / w) as u32)
    }

    pub fn kind(&self, c: Cell) -> CellKind {
        self.kinds[self.index(c)]
    }

    pub fn set_kind(&mut self, c: Cell, kind: CellKind) {
        let i = self.index(c);
        self.kinds[i] = kind;
    }

    pub fn kinds(&self) -> &[CellKind] {
        &self.kinds
    }

    pub fn is_passable(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.kind(c).is_passable()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.kinds.len()).map(move |i| self.cell(i))
    }

    pub fn passable_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(move |&c| self.kind(c).is_passable())
    }

    pub fn passable_count(&self) -> usize {
        self.kinds.iter().filter(|k| k.is_passable()).count()
    }

    /// Task endpoints in row-major order.
    pub fn task_endpoints(&self) -> Vec<Cell> {
        self.cells_of(CellKind::TaskEndpoint)
    }

    /// Non-task endpoints in row-major order.
    pub fn non_task_endpoints(&self) -> Vec<Cell> {
        self.cells_of(CellKind::NonTaskEndpoint)
    }

    fn cells_of(&self, kind: CellKind) -> Vec<Cell> {
        self.cells().filter(|&c| self.kind(c) == kind).collect()
    }

    pub fn check_cell(&self, c: Cell) -> Result<(), GridError> {
        if !self.in_bounds(c) {
            return Err(GridError::OutOfBounds(c, self.width, self.height));
        }
        if !self.kind(c).is_passable() {
            return Err(GridError::Obstacle(c));
        }
        Ok(())
    }

    /// Passable orthogonal neighbors of `c`. The wait action is not included.
    pub fn neighbors(&self, c: Cell) -> Result<Vec<Cell>, GridError> {
        self.check_cell(c)?;
        let mut out = Vec::with_capacity(4);
        self.for_each_neighbor(c, |n| out.push(n));
        Ok(out)
    }

    /// Unchecked neighbor iteration for hot loops; `c` must be in bounds.
    #[inline]
    pub fn for_each_neighbor(&self, c: Cell, mut f: impl FnMut(Cell)) {
        if c.x > 0 {
            let n = Cell::new(c.x - 1, c.y);
            if self.kind(n).is_passable() {
                f(n);
            }
        }
        if c.x + 1 < self.width {
            let n = Cell::new(c.x + 1, c.y);
            if self.kind(n).is_passable() {
                f(n);
            }
        }
        if c.y > 0 {
            let n = Cell::new(c.x, c.y - 1);
            if self.kind(n).is_passable() {
                f(n);
            }
        }
        if c.y + 1 < self.height {
            let n = Cell::new(c.x, c.y + 1);
            if self.kind(n).is_passable() {
                f(n);
            }
        }
    }

    /// Number of connected components formed by passable cells.
    pub fn passable_components(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        for start in self.passable_cells().collect::<Vec<_>>() {
            if seen[self.index(start)] {
                continue;
            }
            count += 1;
            let mut queue = VecDeque::from([start]);
            seen[self.index(start)] = true;
            while let Some(c) = queue.pop_front() {
                self.for_each_neighbor(c, |n| {
                    let i = self.index(n);
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back(n);
                    }
                });
            }
        }
        count
    }
}

/// Manhattan distance plus a small Euclidean tie-break term.
pub fn heuristic(a: Cell, b: Cell) -> f64 {
    heuristic_with(a, b, DEFAULT_TIE_BREAK)
}

pub fn heuristic_with(a: Cell, b: Cell, tie_break: f64) -> f64 {
    let dx = a.x.abs_diff(b.x) as f64;
    let dy = a.y.abs_diff(b.y) as f64;
    dx + dy + tie_break * (dx * dx + dy * dy).sqrt()
}

/// Shortest 4-connected path length between `a` and `b`, ignoring agents.
/// `None` when `b` cannot be reached.
pub fn bfs_distance(map: &GridMap, a: Cell, b: Cell) -> Result<Option<u32>, GridError> {
    map.check_cell(a)?;
    map.check_cell(b)?;
    if a == b {
        return Ok(Some(0));
    }
    let field = bfs_field(map, a);
    Ok(field[map.index(b)])
}

/// Distances from `source` to every cell (`None` for unreachable or obstacle cells).
pub fn bfs_field(map: &GridMap, source: Cell) -> Vec<Option<u32>> {
    let mut dist = vec![None; map.len()];
    dist[map.index(source)] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(c) = queue.pop_front() {
        let d = dist[map.index(c)].unwrap_or(0);
        map.for_each_neighbor(c, |n| {
            let i = map.index(n);
            if dist[i].is_none() {
                dist[i] = Some(d + 1);
                queue.push_back(n);
            }
        });
    }
    dist
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    /// No path between the two endpoints avoids every other endpoint.
    DisconnectedPair(Cell, Cell),
    /// Fewer non-task endpoints than agents.
    EndpointDeficit { available: usize, required: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DisconnectedPair(a, b) => {
                write!(
                    f,
                    "endpoints {a} and {b} are not connected without crossing another endpoint"
                )
            }
            Violation::EndpointDeficit {
                available,
                required,
            } => {
                write!(f, "{available} non-task endpoints for {required} agents")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Warning {
    /// An agent starts on a task endpoint.
    StartOnTaskEndpoint(Cell),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WellFormedReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

/// Checks that every pair of endpoints is joined by a path avoiding all other
/// endpoints, and that there are at least `n_agents` non-task endpoints.
pub fn check_well_formed(map: &GridMap, n_agents: usize) -> WellFormedReport {
    let endpoints: Vec<Cell> = map.cells().filter(|&c| map.kind(c).is_endpoint()).collect();
    let mut violations = Vec::new();

    // One BFS per endpoint that never expands through other endpoints gives the
    // same answer as blocking all endpoints except the pair under test.
    for (i, &a) in endpoints.iter().enumerate() {
        let reached = endpoint_reach(map, a);
        for &b in &endpoints[i + 1..] {
            if !reached[map.index(b)] {
                violations.push(Violation::DisconnectedPair(a, b));
            }
        }
    }

    let available = map.non_task_endpoints().len();
    if available < n_agents {
        violations.push(Violation::EndpointDeficit {
            available,
            required: n_agents,
        });
    }

    WellFormedReport {
        ok: violations.is_empty(),
        violations,
        warnings: Vec::new(),
    }
}

/// Like [`check_well_formed`], additionally warning about agents placed on task endpoints.
pub fn check_well_formed_with_starts(map: &GridMap, starts: &[Cell]) -> WellFormedReport {
    let mut report = check_well_formed(map, starts.len());
    report.warnings = starts
        .iter()
        .filter(|&&c| map.in_bounds(c) && map.kind(c) == CellKind::TaskEndpoint)
        .map(|&c| Warning::StartOnTaskEndpoint(c))
        .collect();
    report
}

fn endpoint_reach(map: &GridMap, source: Cell) -> Vec<bool> {
    let mut seen = vec![false; map.len()];
    seen[map.index(source)] = true;
    let mut queue = VecDeque::from([source]);
    while let Some(c) = queue.pop_front() {
        map.for_each_neighbor(c, |n| {
            let i = map.index(n);
            if !seen[i] {
                seen[i] = true;
                if !map.kind(n).is_endpoint() {
                    queue.push_back(n);
                }
            }
        });
    }
    seen
}
