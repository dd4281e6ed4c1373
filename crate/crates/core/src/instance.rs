//! Map, task-stream and guidance-map file formats, run configuration and
//! seeded task generation.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, CellKind, GridMap};
use crate::planner::guidance::GuidanceMap;
use crate::token::AgentId;
use crate::Time;

// ---------------------------------------------------------------------------
// Maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapErrorKind {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("zero dimensions")]
    ZeroDimensions,
    #[error("row has {found} cells, expected {expected}")]
    RaggedRow { expected: u32, found: u32 },
    #[error("unknown glyph '{0}'")]
    UnknownGlyph(char),
    #[error("expected {expected} rows, found {found}")]
    MissingRows { expected: u32, found: u32 },
    #[error("map has no passable cells")]
    NoPassableCells,
    #[error("passable cells form {0} disconnected regions")]
    Disconnected(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct MapParseError {
    pub line: usize,
    pub column: usize,
    pub kind: MapErrorKind,
}

impl MapParseError {
    fn at(line: usize, column: usize, kind: MapErrorKind) -> Self {
        MapParseError { line, column, kind }
    }
}

fn glyph_kind(ch: char) -> Option<CellKind> {
    match ch {
        '.' | 'G' | 'S' => Some(CellKind::Free),
        '@' | 'O' | 'T' | 'W' => Some(CellKind::Obstacle),
        'E' => Some(CellKind::TaskEndpoint),
        'P' => Some(CellKind::NonTaskEndpoint),
        _ => None,
    }
}

fn kind_glyph(kind: CellKind) -> char {
    match kind {
        CellKind::Free => '.',
        CellKind::Obstacle => '@',
        CellKind::TaskEndpoint => 'E',
        CellKind::NonTaskEndpoint => 'P',
    }
}

/// Parses a map in the benchmark layout (`type`, `height H`, `width W`, `map`,
/// then rows) extended with `E` (task endpoint) and `P` (non-task endpoint).
/// A bare block of rows without header is also accepted.
pub fn parse_map(text: &str) -> Result<GridMap, MapParseError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .collect();
    let mut pos = 0;
    while pos < lines.len() && lines[pos].1.trim().is_empty() {
        pos += 1;
    }
    if pos == lines.len() {
        return Err(MapParseError::at(1, 1, MapErrorKind::ZeroDimensions));
    }

    let first_word = lines[pos].1.split_whitespace().next().unwrap_or("");
    let (height, width, body_start) = if matches!(first_word, "type" | "height" | "width") {
        parse_header(&lines, pos)?
    } else {
        let body: Vec<&str> = lines[pos..]
            .iter()
            .map(|(_, l)| *l)
            .take_while(|l| !l.trim().is_empty())
            .collect();
        let w = body[0].chars().count() as u32;
        (body.len() as u32, w, pos)
    };
    if height == 0 || width == 0 {
        return Err(MapParseError::at(
            lines[pos].0,
            1,
            MapErrorKind::ZeroDimensions,
        ));
    }

    let mut kinds = Vec::with_capacity((width * height) as usize);
    for row in 0..height {
        let Some(&(line_no, line)) = lines.get(body_start + row as usize) else {
            let last = lines.last().map(|l| l.0).unwrap_or(1);
            return Err(MapParseError::at(
                last + 1,
                1,
                MapErrorKind::MissingRows {
                    expected: height,
                    found: row,
                },
            ));
        };
        let found = line.chars().count() as u32;
        if found != width {
            return Err(MapParseError::at(
                line_no,
                found.min(width) as usize + 1,
                MapErrorKind::RaggedRow {
                    expected: width,
                    found,
                },
            ));
        }
        for (col, ch) in line.chars().enumerate() {
            let kind = glyph_kind(ch).ok_or_else(|| {
                MapParseError::at(line_no, col + 1, MapErrorKind::UnknownGlyph(ch))
            })?;
            kinds.push(kind);
        }
    }
    let row_line = |y: u32| lines[body_start + y as usize].0;

    let map = GridMap::from_kinds(width, height, kinds);
    let Some(first) = map.passable_cells().next() else {
        return Err(MapParseError::at(
            row_line(0),
            1,
            MapErrorKind::NoPassableCells,
        ));
    };
    let components = map.passable_components();
    if components > 1 {
        let field = crate::grid::bfs_field(&map, first);
        let stray = map
            .passable_cells()
            .find(|&c| field[map.index(c)].is_none())
            .unwrap_or(first);
        return Err(MapParseError::at(
            row_line(stray.y),
            stray.x as usize + 1,
            MapErrorKind::Disconnected(components),
        ));
    }
    Ok(map)
}

fn parse_header(
    lines: &[(usize, &str)],
    mut pos: usize,
) -> Result<(u32, u32, usize), MapParseError> {
    let mut height = None;
    let mut width = None;
    while pos < lines.len() {
        let (line_no, line) = lines[pos];
        let mut words = line.split_whitespace();
        let key = words.next().unwrap_or("");
        pos += 1;
        match key {
            "" => continue,
            "type" => continue,
            "map" => break,
            "height" | "width" => {
                let value = words
                    .next()
                    .and_then(|v| v.parse::<u32>().ok())
                    .ok_or_else(|| {
                        MapParseError::at(
                            line_no,
                            key.len() + 2,
                            MapErrorKind::MalformedHeader(format!(
                                "'{key}' needs a non-negative integer"
                            )),
                        )
                    })?;
                if key == "height" {
                    height = Some(value);
                } else {
                    width = Some(value);
                }
            }
            other => {
                return Err(MapParseError::at(
                    line_no,
                    1,
                    MapErrorKind::MalformedHeader(format!("unexpected header line '{other}'")),
                ))
            }
        }
    }
    let last = lines.get(pos.saturating_sub(1)).map(|l| l.0).unwrap_or(1);
    match (height, width) {
        (Some(h), Some(w)) => Ok((h, w, pos)),
        _ => Err(MapParseError::at(
            last,
            1,
            MapErrorKind::MalformedHeader("header needs both height and width".into()),
        )),
    }
}

pub fn serialize_map(map: &GridMap) -> String {
    let mut out = format!(
        "type octile\nheight {}\nwidth {}\nmap\n",
        map.height(),
        map.width()
    );
    for y in 0..map.height() {
        for x in 0..map.width() {
            out.push(kind_glyph(map.kind(Cell::new(x, y))));
        }
        out.push('\n');
    }
    out
}

pub fn load_map(path: &Path) -> Result<GridMap, InstanceError> {
    let text = fs::read_to_string(path).map_err(|e| InstanceError::io(path, e))?;
    parse_map(&text).map_err(|e| InstanceError::Map(path.to_path_buf(), e))
}

/// Deterministic initial placement: the first `n` non-task endpoints in row-major order.
pub fn initial_positions(map: &GridMap, n: usize) -> Result<Vec<Cell>, InstanceError> {
    let endpoints = map.non_task_endpoints();
    if endpoints.len() < n {
        return Err(InstanceError::TooManyAgents {
            agents: n,
            endpoints: endpoints.len(),
        });
    }
    Ok(endpoints[..n].to_vec())
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TaskStatus {
    Unreleased,
    Unassigned,
    Assigned(AgentId),
    PickedUp(AgentId),
    Completed(Time),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub pickup: Cell,
    pub delivery: Cell,
    pub release: Time,
    pub status: TaskStatus,
}

impl Task {
    pub fn new(id: TaskId, release: Time, pickup: Cell, delivery: Cell) -> Self {
        Task {
            id,
            pickup,
            delivery,
            release,
            status: TaskStatus::Unreleased,
        }
    }

    pub fn agent(&self) -> Option<AgentId> {
        match self.status {
            TaskStatus::Assigned(a) | TaskStatus::PickedUp(a) => Some(a),
            _ => None,
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self.status, TaskStatus::Completed(_))
    }
}

/// Task arrival rate as an exact rational, so that `floor(f * t)` never suffers
/// from binary rounding (e.g. `0.29 * 100`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Frequency {
    num: u64,
    den: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid task frequency '{0}': expected a positive decimal or fraction")]
pub struct FrequencyError(String);

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Frequency {
    pub fn new(num: u64, den: u64) -> Result<Self, FrequencyError> {
        if num == 0 || den == 0 {
            return Err(FrequencyError(format!("{num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Frequency {
            num: num / g,
            den: den / g,
        })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Number of tasks released by timestep `t`: `floor(f * t)`.
    pub fn released_by(self, t: Time) -> u64 {
        (self.num as u128 * t as u128 / self.den as u128) as u64
    }

    /// Release time of the `k`-th task (0-based): the smallest `t` with `floor(f * t) >= k + 1`.
    pub fn release_of(self, k: u64) -> Time {
        let need = (k as u128 + 1) * self.den as u128;
        need.div_ceil(self.num as u128) as Time
    }
}

impl FromStr for Frequency {
    type Err = FrequencyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || FrequencyError(s.to_string());
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| err())?;
            let d = d.trim().parse().map_err(|_| err())?;
            return Frequency::new(n, d).map_err(|_| err());
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() || frac.len() > 18 {
            return Err(err());
        }
        let digits = |t: &str| t.is_empty() || t.bytes().all(|b| b.is_ascii_digit());
        if !digits(int) || !digits(frac) {
            return Err(err());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| err())?
        };
        let frac_v: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| err())?
        };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_v))
            .ok_or_else(err)?;
        Frequency::new(num, den).map_err(|_| err())
    }
}

impl TryFrom<f64> for Frequency {
    type Error = FrequencyError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        if !v.is_finite() || v <= 0.0 {
            return Err(FrequencyError(v.to_string()));
        }
        // Shortest round-trip representation, e.g. 0.2 -> "0.2" -> 1/5.
        format!("{v}").parse()
    }
}

impl From<Frequency> for f64 {
    fn from(f: Frequency) -> f64 {
        f.as_f64()
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskStream {
    /// Sorted by release; ids follow file (or generation) order.
    pub tasks: Vec<Task>,
    pub frequency: Option<Frequency>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskErrorKind {
    #[error("expected 5 integers 'release px py dx dy', found {0} fields")]
    FieldCount(usize),
    #[error("field '{0}' is not a non-negative integer")]
    BadNumber(String),
    #[error("{0} {1} is not a task endpoint")]
    NotEndpoint(&'static str, Cell),
    #[error("pickup and delivery are both {0}")]
    SameEndpoints(Cell),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("task record {record} (line {line}): {kind}")]
pub struct TaskParseError {
    /// 0-based record index among non-comment lines.
    pub record: usize,
    pub line: usize,
    pub kind: TaskErrorKind,
}

/// Parses one task per line: `release px py dx dy`. Blank lines and `#` comments are skipped.
pub fn parse_tasks(text: &str, map: &GridMap) -> Result<TaskStream, TaskParseError> {
    let mut tasks = Vec::new();
    let mut record = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |kind| TaskParseError {
            record,
            line: i + 1,
            kind,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(fail(TaskErrorKind::FieldCount(fields.len())));
        }
        let mut nums = [0u32; 5];
        for (slot, field) in nums.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| fail(TaskErrorKind::BadNumber(field.to_string())))?;
        }
        let [release, px, py, dx, dy] = nums;
        let pickup = Cell::new(px, py);
        let delivery = Cell::new(dx, dy);
        for (role, c) in [("pickup", pickup), ("delivery", delivery)] {
            if !map.in_bounds(c) || map.kind(c) != CellKind::TaskEndpoint {
                return Err(fail(TaskErrorKind::NotEndpoint(role, c)));
            }
        }
        if pickup == delivery {
            return Err(fail(TaskErrorKind::SameEndpoints(pickup)));
        }
        tasks.push(Task::new(TaskId(record as u32), release, pickup, delivery));
        record += 1;
    }
    // Stable: simultaneous releases keep file order.
    tasks.sort_by_key(|t| t.release);
    Ok(TaskStream {
        tasks,
        frequency: None,
    })
}

pub fn serialize_tasks(stream: &TaskStream) -> String {
    let mut ordered: Vec<&Task> = stream.tasks.iter().collect();
    ordered.sort_by_key(|t| t.id);
    let mut out = String::new();
    for t in ordered {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            t.release, t.pickup.x, t.pickup.y, t.delivery.x, t.delivery.y
        ));
    }
    out
}

pub fn load_tasks(path: &Path, map: &GridMap) -> Result<TaskStream, InstanceError> {
    let text = fs::read_to_string(path).map_err(|e| InstanceError::io(path, e))?;
    parse_tasks(&text, map).map_err(|e| InstanceError::Tasks(path.to_path_buf(), e))
}

/// Draws `n_tasks` pickup/delivery pairs uniformly over task endpoints; task `k`
/// is released at the first `t` with `floor(f * t) >= k + 1`.
pub fn generate_instance(
    map: &GridMap,
    n_tasks: usize,
    frequency: Frequency,
    seed: u64,
) -> Result<TaskStream, InstanceError> {
    let endpoints = map.task_endpoints();
    if n_tasks > 0 && endpoints.len() < 2 {
        return Err(InstanceError::TooFewTaskEndpoints(endpoints.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = (0..n_tasks)
        .map(|k| {
            let (pickup, delivery) = sample_endpoint_pair(&endpoints, &mut rng);
            Task::new(
                TaskId(k as u32),
                frequency.release_of(k as u64),
                pickup,
                delivery,
            )
        })
        .collect();
    Ok(TaskStream {
        tasks,
        frequency: Some(frequency),
    })
}

/// Two distinct endpoints, uniform over ordered pairs. `endpoints.len() >= 2`.
pub fn sample_endpoint_pair(endpoints: &[Cell], rng: &mut impl Rng) -> (Cell, Cell) {
    let n = endpoints.len();
    let p = rng.gen_range(0..n);
    let mut d = rng.gen_range(0..n - 1);
    if d >= p {
        d += 1;
    }
    (endpoints[p], endpoints[d])
}

// ---------------------------------------------------------------------------
// Guidance-map files
// ---------------------------------------------------------------------------

pub const GMAP_MAGIC: &[u8; 4] = b"GMAP";
pub const GMAP_VERSION: u8 = 1;
const GMAP_HEADER_LEN: usize = 4 + 1 + 4 + 4;
/// Values this far outside [0,1] are clamped with a warning; beyond it they are rejected.
pub const GMAP_CLAMP_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceFileError {
    #[error("bad magic bytes, expected GMAP")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("dimension mismatch: file is {file_h}x{file_w}, map is {map_h}x{map_w}")]
    DimMismatch {
        file_h: u32,
        file_w: u32,
        map_h: u32,
        map_w: u32,
    },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("value {value} at index {index} is outside [0,1]")]
    OutOfRange { index: usize, value: f32 },
}

pub fn encode_guidance(map: &GuidanceMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(GMAP_HEADER_LEN + map.values().len() * 4);
    out.extend_from_slice(GMAP_MAGIC);
    out.push(GMAP_VERSION);
    out.extend_from_slice(&map.height().to_le_bytes());
    out.extend_from_slice(&map.width().to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a GMAP payload and checks it against the expected dims.
pub fn decode_guidance(
    bytes: &[u8],
    width: u32,
    height: u32,
) -> Result<GuidanceMap, GuidanceFileError> {
    if bytes.len() < GMAP_HEADER_LEN {
        return Err(GuidanceFileError::Truncated {
            expected: GMAP_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != GMAP_MAGIC {
        return Err(GuidanceFileError::BadMagic);
    }
    if bytes[4] != GMAP_VERSION {
        return Err(GuidanceFileError::Version(bytes[4]));
    }
    let file_h = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    let file_w = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
    if file_h != height || file_w != width {
        return Err(GuidanceFileError::DimMismatch {
            file_h,
            file_w,
            map_h: height,
            map_w: width,
        });
    }
    let payload = &bytes[GMAP_HEADER_LEN..];
    let expected = file_h as usize * file_w as usize * 4;
    if payload.len() < expected {
        return Err(GuidanceFileError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(GuidanceFileError::Trailing(payload.len() - expected));
    }
    let values = decode_unit_floats(payload)?;
    Ok(GuidanceMap::from_values(width, height, values).expect("values validated above"))
}

/// Little-endian f32 values that must lie in [0,1]; marginal excursions are clamped.
pub(crate) fn decode_unit_floats(payload: &[u8]) -> Result<Vec<f32>, GuidanceFileError> {
    let mut clamped = 0usize;
    let mut values = Vec::with_capacity(payload.len() / 4);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(GuidanceFileError::NonFinite { index });
        }
        let c = v.clamp(0.0, 1.0);
        if c != v {
            if (c - v).abs() > GMAP_CLAMP_TOLERANCE {
                return Err(GuidanceFileError::OutOfRange { index, value: v });
            }
            clamped += 1;
        }
        values.push(c);
    }
    if clamped > 0 {
        warn!("clamped {clamped} guidance values marginally outside [0,1]");
    }
    Ok(values)
}

pub fn read_guidance_file(path: &Path, map: &GridMap) -> Result<GuidanceMap, InstanceError> {
    let bytes = fs::read(path).map_err(|e| InstanceError::io(path, e))?;
    decode_guidance(&bytes, map.width(), map.height())
        .map_err(|e| InstanceError::Guidance(path.to_path_buf(), e))
}

pub fn write_guidance_file(path: &Path, map: &GuidanceMap) -> Result<(), InstanceError> {
    fs::write(path, encode_guidance(map)).map_err(|e| InstanceError::io(path, e))
}

/// File name used by the file-store guidance mode for a `(start, goal)` leg.
pub fn guidance_file_name(start: Cell, goal: Cell) -> String {
    format!("g_{}_{}_{}_{}.gmap", start.x, start.y, goal.x, goal.y)
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    File(PathBuf),
    Generate {
        count: usize,
        frequency: Frequency,
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    Zero,
    File(PathBuf),
    Subprocess(String),
}

impl FromStr for GuidanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "zero" {
            Ok(GuidanceMode::Zero)
        } else if let Some(dir) = s.strip_prefix("file:") {
            Ok(GuidanceMode::File(PathBuf::from(dir)))
        } else if let Some(cmd) = s.strip_prefix("remote:") {
            Ok(GuidanceMode::Subprocess(cmd.trim_matches('"').to_string()))
        } else {
            Err(format!(
                "unknown guidance mode '{s}' (zero | file:DIR | remote:CMD)"
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Run until every task is completed (or the horizon is hit).
    Drain,
    /// Run exactly this many timesteps.
    Fixed(Time),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Pgtm,
    /// Fresh uniformly random pickup/delivery pair for every agent that becomes free.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub map: PathBuf,
    pub tasks: TaskSource,
    pub agents: usize,
    pub delay_p: f64,
    /// Per-leg expansion budget; `None` means 20 x |V|.
    pub max_iters: Option<usize>,
    pub recovery_radius: u32,
    pub guidance: GuidanceMode,
    /// Timestep cap; `None` means 10 x (|V| + m x (H + W)).
    pub horizon: Option<Time>,
    pub termination: Termination,
    pub assignment: Assignment,
    pub strict: bool,
    pub require_well_formed: bool,
    pub seed: u64,
    pub metrics_out: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            map: PathBuf::new(),
            tasks: TaskSource::Generate {
                count: 0,
                frequency: Frequency { num: 1, den: 1 },
                seed: None,
            },
            agents: 1,
            delay_p: 0.0,
            max_iters: None,
            recovery_radius: 5,
            guidance: GuidanceMode::Zero,
            horizon: None,
            termination: Termination::Drain,
            assignment: Assignment::Pgtm,
            strict: true,
            require_well_formed: false,
            seed: 0,
            metrics_out: None,
            trace_out: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), InstanceError> {
        if !(0.0..=1.0).contains(&self.delay_p) || self.delay_p.is_nan() {
            return Err(InstanceError::Config(format!(
                "delay probability {} outside [0,1]",
                self.delay_p
            )));
        }
        if self.agents == 0 {
            return Err(InstanceError::Config(
                "at least one agent is required".into(),
            ));
        }
        if self.recovery_radius == 0 {
            return Err(InstanceError::Config(
                "recovery radius must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] io::Error),
    #[error("{0}: {1}")]
    Map(PathBuf, #[source] MapParseError),
    #[error("{0}: {1}")]
    Tasks(PathBuf, #[source] TaskParseError),
    #[error("{0}: {1}")]
    Guidance(PathBuf, #[source] GuidanceFileError),
    #[error("map has {0} task endpoints, at least 2 are needed to generate tasks")]
    TooFewTaskEndpoints(usize),
    #[error("{agents} agents but only {endpoints} non-task endpoints")]
    TooManyAgents { agents: usize, endpoints: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl InstanceError {
    fn io(path: &Path, e: io::Error) -> Self {
        InstanceError::Io(path.to_path_buf(), e)
    }
}
