//! Guidance maps and the providers that supply them: all-zero, a directory of
//! GMAP files, or a child process speaking the GREQ/GRSP protocol.

use std::collections::hash_map::Entry;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Arc;

use log::warn;
use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use super::wire::{self, WireError, WireItem};
use crate::grid::{Cell, GridMap};
use crate::instance::{guidance_file_name, read_guidance_file, InstanceError};

/// Dense per-cell cost field in [0,1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    width: u32,
    height: u32,
    values: Arc<[f32]>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceMapError {
    #[error("expected {expected} values, got {found}")]
    Length { expected: usize, found: usize },
    #[error("value {value} at index {index} is not in [0,1]")]
    Range { index: usize, value: f32 },
}

impl GuidanceMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        GuidanceMap {
            width,
            height,
            values: vec![0.0; (width * height) as usize].into(),
        }
    }

    pub fn from_values(
        width: u32,
        height: u32,
        values: Vec<f32>,
    ) -> Result<Self, GuidanceMapError> {
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(GuidanceMapError::Length {
                expected,
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(GuidanceMapError::Range { index, value });
        }
        Ok(GuidanceMap {
            width,
            height,
            values: values.into(),
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn value(&self, c: Cell) -> f64 {
        self.values[(c.y * self.width + c.x) as usize] as f64
    }

    pub(crate) fn value_idx(&self, i: usize) -> f64 {
        self.values[i] as f64
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// One assigned pair needing guidance: the agent's cell, the pickup, the
/// delivery, plus the shared environment (obstacles and idle agents).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GuidanceRequest {
    pub agent_cell: Cell,
    pub pickup: Cell,
    pub delivery: Cell,
}

/// Maps for both legs of one request.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePair {
    pub to_pickup: GuidanceMap,
    pub to_delivery: GuidanceMap,
}

impl GuidancePair {
    pub fn zeros(width: u32, height: u32) -> Self {
        let z = GuidanceMap::zeros(width, height);
        GuidancePair {
            to_pickup: z.clone(),
            to_delivery: z,
        }
    }
}

/// Shared environment bitmap for one timestep: 1 = blocked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Environment {
    pub width: u32,
    pub height: u32,
    pub blocked: Vec<u8>,
}

impl Environment {
    /// Obstacles plus the given agent cells.
    pub fn new(map: &GridMap, idle_agents: impl IntoIterator<Item = Cell>) -> Self {
        let mut blocked: Vec<u8> = map
            .kinds()
            .iter()
            .map(|k| u8::from(!k.is_passable()))
            .collect();
        for c in idle_agents {
            blocked[map.index(c)] = 1;
        }
        Environment {
            width: map.width(),
            height: map.height(),
            blocked,
        }
    }
}

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("guidance process: {0}")]
    Process(#[from] std::io::Error),
    #[error(transparent)]
    File(#[from] InstanceError),
}

pub trait GuidanceProvider {
    /// One `GuidancePair` per request, in order.
    fn fetch(
        &mut self,
        env: &Environment,
        requests: &[GuidanceRequest],
    ) -> Result<Vec<GuidancePair>, GuidanceError>;

    /// True when every map is zero, letting callers skip batching entirely.
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Default)]
pub struct ZeroGuidance {
    cache: Option<GuidancePair>,
}

impl GuidanceProvider for ZeroGuidance {
    fn fetch(
        &mut self,
        env: &Environment,
        requests: &[GuidanceRequest],
    ) -> Result<Vec<GuidancePair>, GuidanceError> {
        let pair = match &self.cache {
            Some(p) if p.to_pickup.width == env.width && p.to_pickup.height == env.height => {
                p.clone()
            }
            _ => {
                let p = GuidancePair::zeros(env.width, env.height);
                self.cache = Some(p.clone());
                p
            }
        };
        Ok(vec![pair; requests.len()])
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Reads `g_<sx>_<sy>_<gx>_<gy>.gmap` files from a directory, caching them.
/// Missing files fall back to zero guidance with a warning.
#[derive(Debug)]
pub struct FileGuidance {
    dir: PathBuf,
    map: GridMap,
    cache: FxHashMap<(Cell, Cell), GuidanceMap>,
    warned: FxHashSet<(Cell, Cell)>,
}

impl FileGuidance {
    pub fn new(dir: impl Into<PathBuf>, map: &GridMap) -> Self {
        FileGuidance {
            dir: dir.into(),
            map: map.clone(),
            cache: FxHashMap::default(),
            warned: FxHashSet::default(),
        }
    }

    fn load(&mut self, start: Cell, goal: Cell) -> Result<GuidanceMap, GuidanceError> {
        let entry = match self.cache.entry((start, goal)) {
            Entry::Occupied(e) => return Ok(e.get().clone()),
            Entry::Vacant(e) => e,
        };
        let path = self.dir.join(guidance_file_name(start, goal));
        let g = if path.exists() {
            read_guidance_file(&path, &self.map)?
        } else {
            if self.warned.insert((start, goal)) {
                warn!("no guidance file {}, using zero guidance", path.display());
            }
            GuidanceMap::zeros(self.map.width(), self.map.height())
        };
        Ok(entry.insert(g).clone())
    }
}

impl GuidanceProvider for FileGuidance {
    fn fetch(
        &mut self,
        _env: &Environment,
        requests: &[GuidanceRequest],
    ) -> Result<Vec<GuidancePair>, GuidanceError> {
        requests
            .iter()
            .map(|r| {
                Ok(GuidancePair {
                    to_pickup: self.load(r.agent_cell, r.pickup)?,
                    to_delivery: self.load(r.pickup, r.delivery)?,
                })
            })
            .collect()
    }
}

/// Speaks GREQ/GRSP over any byte stream pair. Duplicate requests in a batch
/// are sent once.
pub struct RemoteGuidance<R: Read, W: Write> {
    reader: R,
    writer: W,
    child: Option<Child>,
}

impl<R: Read, W: Write> RemoteGuidance<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        RemoteGuidance {
            reader,
            writer,
            child: None,
        }
    }
}

impl RemoteGuidance<BufReader<ChildStdout>, BufWriter<ChildStdin>> {
    /// Launches `sh -c cmd` and talks to it over stdin/stdout.
    pub fn spawn(cmd: &str) -> std::io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(RemoteGuidance {
            reader: BufReader::new(stdout),
            writer: BufWriter::new(stdin),
            child: Some(child),
        })
    }
}

impl<R: Read, W: Write> Drop for RemoteGuidance<R, W> {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl<R: Read, W: Write> GuidanceProvider for RemoteGuidance<R, W> {
    fn fetch(
        &mut self,
        env: &Environment,
        requests: &[GuidanceRequest],
    ) -> Result<Vec<GuidancePair>, GuidanceError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let mut unique: Vec<&GuidanceRequest> = Vec::new();
        let mut slot: FxHashMap<&GuidanceRequest, usize> = FxHashMap::default();
        let order: Vec<usize> = requests
            .iter()
            .map(|r| {
                *slot.entry(r).or_insert_with(|| {
                    unique.push(r);
                    unique.len() - 1
                })
            })
            .collect();
        let items: Vec<WireItem> = unique
            .iter()
            .map(|r| WireItem::from_request(env, r))
            .collect();
        wire::write_request(&mut self.writer, &items)?;
        self.writer.flush()?;
        let dims: Vec<(u32, u32)> = items.iter().map(|i| (i.width, i.height)).collect();
        let maps = wire::read_response(&mut self.reader, &dims)?;
        let pairs: Vec<GuidancePair> = maps
            .chunks_exact(2)
            .map(|m| GuidancePair {
                to_pickup: m[0].clone(),
                to_delivery: m[1].clone(),
            })
            .collect();
        Ok(order.into_iter().map(|i| pairs[i].clone()).collect())
    }
}
