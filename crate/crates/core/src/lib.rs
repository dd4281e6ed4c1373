//! Lifelong multi-agent pickup and delivery: task matching, guided
//! space-time A* over a shared reservation token, and a simulator.

pub mod grid;
pub mod instance;
pub mod layouts;
pub mod pgtm;
pub mod planner;
pub mod sim;
pub mod token;

/// Discrete timestep.
pub type Time = u32;

pub use grid::{Cell, CellKind, GridMap};
pub use instance::{Frequency, RunConfig, Task, TaskId, TaskStatus, TaskStream};
pub use token::{AgentId, Hold, Token};
