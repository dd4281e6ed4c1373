//! GREQ/GRSP framing between the planner and a guidance server.
//!
//! Request: `GREQ`, u32 count k, then per item u32 H, u32 W, H*W env bytes
//! (0 free, 1 blocked, 2 the requesting agent's cell), u32 start index
//! (pickup), u32 goal index (delivery). Response: `GRSP`, u32 count 2k, then
//! per item two H*W f32 maps (agent to pickup, pickup to delivery). A server
//! may instead answer `GERR`, u32 length, UTF-8 message. Integers are little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::guidance::{Environment, GuidanceMap, GuidanceRequest};
use crate::instance::{decode_unit_floats, GuidanceFileError};

pub const REQUEST_MAGIC: &[u8; 4] = b"GREQ";
pub const RESPONSE_MAGIC: &[u8; 4] = b"GRSP";
pub const ERROR_MAGIC: &[u8; 4] = b"GERR";
pub const ENV_FREE: u8 = 0;
pub const ENV_BLOCKED: u8 = 1;
pub const ENV_AGENT: u8 = 2;
/// Upper bound on cells per map accepted from the wire.
pub const MAX_CELLS: u64 = 1 << 24;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: String, found: String },
    #[error("expected {expected} maps, frame declares {found}")]
    Count { expected: usize, found: usize },
    #[error("map of {0}x{1} cells is too large")]
    TooLarge(u32, u32),
    #[error("index {index} outside {cells} cells")]
    BadIndex { index: u32, cells: usize },
    #[error("env byte {0} is not 0, 1 or 2")]
    BadEnvByte(u8),
    #[error("guidance values: {0}")]
    Values(#[from] GuidanceFileError),
    #[error("server error: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireItem {
    pub width: u32,
    pub height: u32,
    pub env: Vec<u8>,
    pub start: u32,
    pub goal: u32,
}

impl WireItem {
    pub fn from_request(env: &Environment, req: &GuidanceRequest) -> Self {
        let idx = |c: crate::grid::Cell| c.y * env.width + c.x;
        let mut bytes = env.blocked.clone();
        bytes[idx(req.agent_cell) as usize] = ENV_AGENT;
        WireItem {
            width: env.width,
            height: env.height,
            env: bytes,
            start: idx(req.pickup),
            goal: idx(req.delivery),
        }
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<(), WireError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m == expected {
        return Ok(());
    }
    if &m == ERROR_MAGIC {
        let len = read_u32(r)? as usize;
        let mut msg = vec![0u8; len.min(1 << 16)];
        r.read_exact(&mut msg)?;
        return Err(WireError::Remote(
            String::from_utf8_lossy(&msg).into_owned(),
        ));
    }
    Err(WireError::BadMagic {
        expected: String::from_utf8_lossy(expected).into_owned(),
        found: String::from_utf8_lossy(&m).into_owned(),
    })
}

fn check_dims(h: u32, w: u32) -> Result<usize, WireError> {
    let cells = h as u64 * w as u64;
    if cells > MAX_CELLS {
        return Err(WireError::TooLarge(h, w));
    }
    Ok(cells as usize)
}

pub fn write_request(w: &mut impl Write, items: &[WireItem]) -> io::Result<()> {
    w.write_all(REQUEST_MAGIC)?;
    w.write_all(&(items.len() as u32).to_le_bytes())?;
    for item in items {
        w.write_all(&item.height.to_le_bytes())?;
        w.write_all(&item.width.to_le_bytes())?;
        w.write_all(&item.env)?;
        w.write_all(&item.start.to_le_bytes())?;
        w.write_all(&item.goal.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_request(r: &mut impl Read) -> Result<Vec<WireItem>, WireError> {
    read_magic(r, REQUEST_MAGIC)?;
    let k = read_u32(r)?;
    let mut items = Vec::with_capacity(k.min(1024) as usize);
    for _ in 0..k {
        let height = read_u32(r)?;
        let width = read_u32(r)?;
        let cells = check_dims(height, width)?;
        let mut env = vec![0u8; cells];
        r.read_exact(&mut env)?;
        if let Some(&b) = env.iter().find(|&&b| b > ENV_AGENT) {
            return Err(WireError::BadEnvByte(b));
        }
        let start = read_u32(r)?;
        let goal = read_u32(r)?;
        for index in [start, goal] {
            if index as usize >= cells {
                return Err(WireError::BadIndex { index, cells });
            }
        }
        items.push(WireItem {
            width,
            height,
            env,
            start,
            goal,
        });
    }
    Ok(items)
}

pub fn write_response(w: &mut impl Write, maps: &[GuidanceMap]) -> io::Result<()> {
    w.write_all(RESPONSE_MAGIC)?;
    w.write_all(&(maps.len() as u32).to_le_bytes())?;
    for m in maps {
        for v in m.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_error(w: &mut impl Write, message: &str) -> io::Result<()> {
    w.write_all(ERROR_MAGIC)?;
    w.write_all(&(message.len() as u32).to_le_bytes())?;
    w.write_all(message.as_bytes())
}

/// Reads two maps per requested item; `dims` holds each item's (width, height).
pub fn read_response(
    r: &mut impl Read,
    dims: &[(u32, u32)],
) -> Result<Vec<GuidanceMap>, WireError> {
    read_magic(r, RESPONSE_MAGIC)?;
    let count = read_u32(r)? as usize;
    if count != 2 * dims.len() {
        return Err(WireError::Count {
            expected: 2 * dims.len(),
            found: count,
        });
    }
    let mut maps = Vec::with_capacity(count);
    for &(width, height) in dims {
        let cells = check_dims(height, width)?;
        for _ in 0..2 {
            let mut buf = vec![0u8; cells * 4];
            r.read_exact(&mut buf)?;
            let values = decode_unit_floats(&buf)?;
            maps.push(GuidanceMap::from_values(width, height, values).expect("validated"));
        }
    }
    Ok(maps)
}
