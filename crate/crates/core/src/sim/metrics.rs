use serde::Serialize;

use crate::instance::TaskId;
use crate::token::AgentId;
use crate::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CompletionRecord {
    pub task: TaskId,
    pub agent: AgentId,
    pub release: Time,
    pub completed: Time,
}

impl CompletionRecord {
    pub fn service_time(&self) -> Time {
        self.completed - self.release
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    /// Mean service time over completed tasks; absent when nothing completed.
    pub st: Option<f64>,
    /// Wall-clock milliseconds per timestep.
    pub rt: f64,
    /// Completed tasks per elapsed timestep.
    pub tp: f64,
    /// Search expansions, in millions.
    pub iters: f64,
    pub expanded: u64,
    pub completed: usize,
    pub total_tasks: usize,
    pub timesteps: Time,
    pub incomplete: bool,
    pub delays: u64,
    pub recoveries: u64,
    pub failed_plans: u64,
    pub guidance_fallbacks: u64,
    #[serde(skip)]
    pub records: Vec<CompletionRecord>,
}

impl Metrics {
    pub(crate) fn finish(&mut self, timesteps: Time, wall_ms: f64) {
        self.timesteps = timesteps;
        self.completed = self.records.len();
        self.st = if self.records.is_empty() {
            None
        } else {
            let sum: u64 = self.records.iter().map(|r| r.service_time() as u64).sum();
            Some(sum as f64 / self.records.len() as f64)
        };
        self.tp = if timesteps == 0 {
            0.0
        } else {
            self.completed as f64 / timesteps as f64
        };
        self.rt = if timesteps == 0 {
            0.0
        } else {
            wall_ms / timesteps as f64
        };
        self.iters = self.expanded as f64 / 1e6;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities() {
        let mut m = Metrics {
            records: vec![
                CompletionRecord {
                    task: TaskId(0),
                    agent: AgentId(0),
                    release: 0,
                    completed: 6,
                },
                CompletionRecord {
                    task: TaskId(1),
                    agent: AgentId(0),
                    release: 2,
                    completed: 6,
                },
            ],
            ..Metrics::default()
        };
        m.finish(8, 4.0);
        assert_eq!(m.st, Some(5.0));
        assert_eq!(m.tp * 8.0, 2.0);
        assert_eq!(m.rt, 0.5);
        let mut empty = Metrics::default();
        empty.finish(1, 0.0);
        assert_eq!((empty.st, empty.tp), (None, 0.0));
    }
}
